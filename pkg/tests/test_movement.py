from __future__ import annotations

import numpy as np
import pytest

from drumcircle.errors import (
    ConfigError,
    DataError,
    GeometryError,
    InsufficientDataError,
)
from drumcircle.movement import (
    BandSpec,
    DEFAULT_BANDS,
    MarkerFrame,
    SwaySeries,
    band_coherence,
    extract_transparent_segments,
    load_marker_series,
    postural_position,
    qom,
    wavelet_coherence,
)


def test_postural_position_examples():
    assert postural_position(
        MarkerFrame(0, (0, 0, 0), (0, 0, 0), (300, 0, 0))
    ) == pytest.approx(0.0)
    # Back at the midpoint of feet 400 mm apart projects to 200 mm.
    assert postural_position(
        MarkerFrame(0, (200, 0, 1000), (0, 0, 0), (400, 0, 0))
    ) == pytest.approx(200.0)
    # Hand-computed: u = (1,0,0); (back - lfoot) . u = 100.
    assert postural_position(
        MarkerFrame(0, (100, 50, 900), (0, 0, 0), (300, 0, 0))
    ) == pytest.approx(100.0)


def test_postural_position_oblique_axis_oracle():
    rng = np.random.default_rng(1)
    for _ in range(50):
        back, lf, rf = rng.normal(size=(3, 3)) * 100
        if np.allclose(lf, rf):
            continue
        axis = rf - lf
        expected = float(np.dot(back - lf, axis) / np.linalg.norm(axis))
        got = postural_position(MarkerFrame(0, tuple(back), tuple(lf), tuple(rf)))
        assert got == pytest.approx(expected, abs=1e-9)


def test_postural_position_rigid_translation_invariance():
    rng = np.random.default_rng(2)
    back, lf, rf = rng.normal(size=(3, 3)) * 50
    base = postural_position(MarkerFrame(0, tuple(back), tuple(lf), tuple(rf)))
    shift = np.array([12.0, -40.0, 7.0])
    moved = postural_position(
        MarkerFrame(0, tuple(back + shift), tuple(lf + shift), tuple(rf + shift))
    )
    assert moved == pytest.approx(base, abs=1e-9)


def test_postural_position_coincident_feet():
    with pytest.raises(GeometryError):
        postural_position(MarkerFrame(0, (1, 2, 3), (5, 5, 5), (5, 5, 5)))


def test_qom_basics():
    assert qom(SwaySeries(np.full(100, 3.7))) == 0.0
    assert qom(SwaySeries(np.array([0.0, 1.0, 0.0, 1.0]))) == 3.0
    with pytest.raises(InsufficientDataError):
        qom(SwaySeries(np.array([1.0])))


def test_qom_matches_brute_force_loop():
    rng = np.random.default_rng(3)
    walk = np.cumsum(rng.normal(size=1000))
    total = 0.0
    for i in range(len(walk) - 1):
        total += abs(walk[i + 1] - walk[i])
    assert qom(SwaySeries(walk)) == pytest.approx(total, rel=1e-12)


def test_qom_translation_invariant_and_scales_linearly():
    rng = np.random.default_rng(4)
    x = rng.normal(size=500)
    base = qom(SwaySeries(x))
    assert qom(SwaySeries(x + 123.4)) == pytest.approx(base, rel=1e-12)
    assert qom(SwaySeries(3.0 * x)) == pytest.approx(3.0 * base, rel=1e-12)


def _series(n, fs=120.0):
    return SwaySeries(np.arange(n, dtype=float), fs_hz=fs)


def test_extract_segments_all_opaque_and_all_transparent():
    s = _series(1200)
    empty = extract_transparent_segments(s, [(0.0, 0)])
    assert empty.samples.size == 0
    full = extract_transparent_segments(s, [(0.0, 5)])
    assert np.array_equal(full.samples, s.samples)
    assert full.seams == ()


def test_extract_segments_middle_third():
    n = 1200
    s = _series(n)
    t_third = 1000.0 * n / 3 / 120.0
    log = [(0.0, 0), (t_third, 1), (2 * t_third, 0)]
    kept = extract_transparent_segments(s, log)
    assert abs(kept.samples.size - n // 3) <= 1
    assert kept.seams == ()
    assert kept.t0_ms >= t_third


def test_extract_segments_records_seams():
    s = _series(1200)
    log = [(0.0, 1), (2000.0, 0), (4000.0, 2)]
    kept = extract_transparent_segments(s, log)
    assert len(kept.seams) == 1
    first_run = int(round(2000.0 / 1000.0 * 120.0))
    assert kept.seams[0] == first_run
    # Kept samples are the original ones, concatenated in order.
    assert np.array_equal(kept.samples[:first_run], s.samples[:first_run])


def test_extract_segments_requires_covering_log():
    with pytest.raises(DataError):
        extract_transparent_segments(_series(100), [(50.0, 1)])


def _noise_pair(seed, seconds=60.0, fs=120.0):
    rng = np.random.default_rng(seed)
    n = int(seconds * fs)
    return (
        SwaySeries(rng.standard_normal(n), fs_hz=fs),
        SwaySeries(rng.standard_normal(n), fs_hz=fs),
    )


def test_self_coherence_is_one_inside_cone():
    x, _ = _noise_pair(10, seconds=120.0)
    matrix = wavelet_coherence(x, x)
    assert np.abs(matrix.values[matrix.valid] - 1.0).max() < 1e-6
    for band in DEFAULT_BANDS:
        assert band_coherence(matrix, band) == pytest.approx(1.0, abs=1e-6)


def test_coherence_symmetric_and_bounded():
    x, y = _noise_pair(11)
    m_xy = wavelet_coherence(x, y)
    m_yx = wavelet_coherence(y, x)
    assert np.abs(m_xy.values - m_yx.values).max() < 1e-9
    assert m_xy.values.min() >= 0.0
    assert m_xy.values.max() <= 1.0 + 1e-9


def test_coherence_band_centers_covered():
    x, y = _noise_pair(12)
    matrix = wavelet_coherence(x, y)
    for band in DEFAULT_BANDS:
        lo, hi = band.center_hz - 0.1, band.center_hz + 0.1
        rows = (matrix.freqs_hz >= lo) & (matrix.freqs_hz <= hi)
        assert rows.sum() >= 3
    assert [b.center_hz for b in DEFAULT_BANDS] == [0.472, 0.944, 1.416]


def test_coherence_input_validation():
    x, y = _noise_pair(13, seconds=30.0)
    with pytest.raises(DataError):
        wavelet_coherence(x, SwaySeries(y.samples[:-10], fs_hz=y.fs_hz))
    short = SwaySeries(x.samples[: 12 * 120], fs_hz=120.0)  # 12 s < 4 / 0.2 Hz
    with pytest.raises(InsufficientDataError):
        wavelet_coherence(short, short)


def test_band_outside_range_rejected():
    x, y = _noise_pair(14)
    matrix = wavelet_coherence(x, y)
    with pytest.raises(ConfigError):
        band_coherence(matrix, BandSpec("too_low", 0.15))
    with pytest.raises(ConfigError):
        band_coherence(matrix, BandSpec("too_high", 5.0))


def test_band_mean_of_constant_field():
    x, y = _noise_pair(15)
    matrix = wavelet_coherence(x, y)
    flat = type(matrix)(matrix.freqs_hz, matrix.times_s,
                        np.full_like(matrix.values, 0.5), matrix.valid)
    for band in DEFAULT_BANDS:
        assert band_coherence(flat, band) == pytest.approx(0.5)


def test_shared_sinusoid_raises_matching_band(tmp_path):
    fs, seconds = 120.0, 120.0
    t = np.arange(int(fs * seconds)) / fs
    shared = np.sin(2 * np.pi * 0.944 * t)
    hits = 0
    n_seeds = 20
    for seed in range(n_seeds):
        rng = np.random.default_rng(100 + seed)
        x = SwaySeries(shared + rng.standard_normal(t.size) * np.sqrt(0.5), fs_hz=fs)
        y = SwaySeries(shared + rng.standard_normal(t.size) * np.sqrt(0.5), fs_hz=fs)
        matrix = wavelet_coherence(x, y)
        binary = band_coherence(matrix, DEFAULT_BANDS[1])
        pulse = band_coherence(matrix, DEFAULT_BANDS[0])
        if binary > pulse:
            hits += 1
    assert hits >= int(0.9 * n_seeds)


def test_marker_csv_roundtrip(tmp_path):
    path = tmp_path / "markers.csv"
    rows = ["t_ms,back_x,back_y,back_z,lfoot_x,lfoot_y,lfoot_z,rfoot_x,rfoot_y,rfoot_z"]
    for i in range(240):
        rows.append(f"{i * 1000.0 / 120.0},{100 + i},50,900,0,0,0,300,0,0")
    path.write_text("\n".join(rows) + "\n")
    series = load_marker_series(path)
    assert series.fs_hz == pytest.approx(120.0)
    assert series.samples[0] == pytest.approx(100.0)
    assert series.samples[10] == pytest.approx(110.0)


def test_marker_npz(tmp_path):
    path = tmp_path / "markers.npz"
    n = 100
    t = np.arange(n) * (1000.0 / 120.0)
    back = np.column_stack([np.linspace(0, 99, n), np.zeros(n), np.full(n, 900.0)])
    lfoot = np.zeros((n, 3))
    rfoot = np.tile([300.0, 0.0, 0.0], (n, 1))
    np.savez(path, t_ms=t, back=back, lfoot=lfoot, rfoot=rfoot)
    series = load_marker_series(path)
    assert series.samples[-1] == pytest.approx(99.0)


def test_marker_csv_missing_columns(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("t_ms,back_x\n0,1\n")
    with pytest.raises(DataError):
        load_marker_series(path)
