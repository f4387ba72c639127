"""Postural sway analysis: projection, quantity of motion, wavelet coherence.

The body position of a player is reduced to a scalar by projecting the
centre-back marker onto the axis through the two foot markers. From that
series come a per-trial quantity of motion (sum of absolute first
differences) and, for the dyad, a Morlet wavelet coherence with smoothing
in time (Gaussian, SD equal to the wavelet scale) and scale (0.6-octave
boxcar). Coherence is summarised as the mean over narrow bands around the
frequencies of the common pulse and the two tapping rhythms, excluding the
cone of influence and the neighbourhood of concatenation seams.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import fft as sfft
from scipy.ndimage import uniform_filter1d

from .errors import ConfigError, DataError, GeometryError, InsufficientDataError

MORLET_OMEGA0 = 6.0
VOICES_PER_OCTAVE = 12
FREQ_RANGE_HZ = (0.2, 2.5)

# Band centres: common pulse, binary-task rhythm, ternary-task rhythm.
BAND_CENTERS_HZ = {"pulse": 0.472, "binary_rhythm": 0.944, "ternary_rhythm": 1.416}
BAND_WIDTH_HZ = 0.2


@dataclass(frozen=True)
class BandSpec:
    name: str
    center_hz: float
    width_hz: float = BAND_WIDTH_HZ


DEFAULT_BANDS = tuple(BandSpec(n, c) for n, c in BAND_CENTERS_HZ.items())


@dataclass(frozen=True)
class MarkerFrame:
    t_ms: float
    back: tuple[float, float, float]
    lfoot: tuple[float, float, float]
    rfoot: tuple[float, float, float]


@dataclass
class SwaySeries:
    """Uniformly sampled scalar postural position, in mm."""

    samples: np.ndarray
    fs_hz: float = 120.0
    t0_ms: float = 0.0
    # Sample indices where concatenated segments meet (discontinuities).
    seams: tuple[int, ...] = field(default_factory=tuple)

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float)
        if self.samples.ndim != 1:
            raise DataError("sway samples must be one-dimensional")
        if self.samples.size and not np.all(np.isfinite(self.samples)):
            raise DataError("sway samples must be finite")
        if self.fs_hz <= 0:
            raise DataError("sampling rate must be positive")

    def __eq__(self, other):
        if not isinstance(other, SwaySeries):
            return NotImplemented
        return (
            self.fs_hz == other.fs_hz
            and self.t0_ms == other.t0_ms
            and self.seams == tuple(other.seams)
            and self.samples.shape == other.samples.shape
            and bool(np.all(self.samples == other.samples))
        )

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.fs_hz

    def times_ms(self) -> np.ndarray:
        return self.t0_ms + np.arange(self.samples.size) * (1000.0 / self.fs_hz)


@dataclass(frozen=True)
class CoherenceMatrix:
    freqs_hz: np.ndarray          # ascending
    times_s: np.ndarray
    values: np.ndarray            # (n_freqs, n_times), in [0, 1]
    valid: np.ndarray             # same shape; False inside the cone / near seams


def postural_position(frame: MarkerFrame) -> float:
    """Signed position of the back marker along the left-to-right foot axis, mm."""
    back = np.asarray(frame.back, dtype=float)
    lfoot = np.asarray(frame.lfoot, dtype=float)
    rfoot = np.asarray(frame.rfoot, dtype=float)
    axis = rfoot - lfoot
    norm = float(np.linalg.norm(axis))
    if norm == 0.0:
        raise GeometryError(f"coincident foot markers at t={frame.t_ms} ms")
    return float(np.dot(back - lfoot, axis / norm))


def qom(series: SwaySeries) -> float:
    """Quantity of motion: sum of absolute consecutive differences."""
    if series.samples.size < 2:
        raise InsufficientDataError("quantity of motion needs at least 2 samples")
    return float(np.sum(np.abs(np.diff(series.samples))))


def extract_transparent_segments(
    series: SwaySeries,
    transparency_log: list[tuple[float, int]],
    min_level: int = 1,
) -> SwaySeries:
    """Keep only samples recorded while the stimulus was transparent.

    ``transparency_log`` is a step function of (t_ms, level) entries. Kept
    runs are concatenated in order and the run boundaries are recorded as
    seams so downstream coherence can exclude the discontinuities.
    """
    if not transparency_log:
        raise DataError("transparency log is empty")
    log = sorted(transparency_log, key=lambda e: e[0])
    if log[0][0] > series.t0_ms:
        raise DataError(
            f"transparency log starts at {log[0][0]} ms, after the series start "
            f"{series.t0_ms} ms"
        )
    times = series.times_ms()
    change_t = np.array([e[0] for e in log])
    levels = np.array([e[1] for e in log])
    idx = np.searchsorted(change_t, times, side="right") - 1
    keep = levels[idx] >= min_level
    if not np.any(keep):
        return SwaySeries(np.empty(0), series.fs_hz, series.t0_ms)
    kept = series.samples[keep]
    # A seam wherever the kept samples were not contiguous in the original.
    orig_idx = np.nonzero(keep)[0]
    breaks = np.nonzero(np.diff(orig_idx) > 1)[0] + 1
    return SwaySeries(
        kept,
        series.fs_hz,
        t0_ms=float(times[orig_idx[0]]),
        seams=tuple(int(b) for b in breaks),
    )


def _fft_len(n: int, dt: float, scales: np.ndarray) -> int:
    # Zero-padding past four e-folding times of the largest scale keeps
    # circular wraparound negligible without doubling the transform size.
    pad = int(np.ceil(4.0 * np.sqrt(2.0) * scales.max() / dt))
    return sfft.next_fast_len(n + pad)


def _cwt_morlet(x: np.ndarray, dt: float, scales: np.ndarray, omega0: float) -> np.ndarray:
    """Continuous Morlet transform via FFT, one row per scale."""
    n = x.size
    n_fft = _fft_len(n, dt, scales)
    xf = sfft.fft(x - x.mean(), n_fft)
    k = 2.0 * np.pi * sfft.fftfreq(n_fft, d=dt)
    sk = scales[:, None] * k[None, :]
    daughter = (
        np.sqrt(2.0 * np.pi * scales[:, None] / dt)
        * np.pi ** -0.25
        * np.exp(-0.5 * (sk - omega0) ** 2)
    )
    daughter[:, k <= 0] = 0.0
    return sfft.ifft(xf[None, :] * daughter, axis=1, workers=-1)[:, :n]


def _smooth(field: np.ndarray, dt: float, scales: np.ndarray) -> np.ndarray:
    """Time-then-scale smoothing of a per-scale time-frequency field."""
    n = field.shape[1]
    n_fft = _fft_len(n, dt, scales)
    omega = 2.0 * np.pi * sfft.fftfreq(n_fft, d=dt)
    ff = sfft.fft(field, n_fft, axis=1, workers=-1)
    ff *= np.exp(-0.5 * (scales[:, None] * omega[None, :]) ** 2)
    out = sfft.ifft(ff, axis=1, workers=-1)[:, :n]
    if not np.iscomplexobj(field):
        out = out.real
    # Boxcar across scales spanning 0.6 octave at the configured voice spacing.
    size = max(1, round(0.6 * VOICES_PER_OCTAVE))
    if np.iscomplexobj(out):
        out = (
            uniform_filter1d(out.real, size, axis=0, mode="constant")
            + 1j * uniform_filter1d(out.imag, size, axis=0, mode="constant")
        )
    else:
        out = uniform_filter1d(out, size, axis=0, mode="constant")
    return out


def _analysis_frequencies(fmin: float, fmax: float) -> np.ndarray:
    n = int(np.ceil(VOICES_PER_OCTAVE * np.log2(fmax / fmin))) + 1
    return fmin * 2.0 ** (np.arange(n) / VOICES_PER_OCTAVE)


def wavelet_coherence(
    x: SwaySeries,
    y: SwaySeries,
    fmin: float = FREQ_RANGE_HZ[0],
    fmax: float = FREQ_RANGE_HZ[1],
    omega0: float = MORLET_OMEGA0,
) -> CoherenceMatrix:
    """Morlet wavelet coherence of two equally sampled series.

    Returns per-bin coherence in [0, 1] plus a validity mask that is False
    inside the cone of influence at the series edges and within one wavelet
    e-folding time of any concatenation seam of either input.
    """
    if x.samples.size != y.samples.size or x.fs_hz != y.fs_hz:
        raise DataError("series must have equal length and sampling rate")
    n = x.samples.size
    dt = 1.0 / x.fs_hz
    if n * dt < 4.0 / fmin:
        raise InsufficientDataError(
            f"series of {n * dt:.1f} s shorter than 4 cycles of {fmin} Hz"
        )
    freqs = _analysis_frequencies(fmin, fmax)
    fourier_factor = 4.0 * np.pi / (omega0 + np.sqrt(2.0 + omega0 ** 2))
    scales = 1.0 / (fourier_factor * freqs)

    wx = _cwt_morlet(x.samples, dt, scales, omega0)
    wy = _cwt_morlet(y.samples, dt, scales, omega0)
    inv_s = (1.0 / scales)[:, None]
    s_xx = _smooth(np.abs(wx) ** 2 * inv_s, dt, scales)
    s_yy = _smooth(np.abs(wy) ** 2 * inv_s, dt, scales)
    s_xy = _smooth(wx * np.conj(wy) * inv_s, dt, scales)
    denom = s_xx * s_yy
    with np.errstate(invalid="ignore", divide="ignore"):
        coh = np.where(denom > 0.0, np.abs(s_xy) ** 2 / denom, 0.0)

    times = np.arange(n) * dt
    efold = np.sqrt(2.0) * scales  # e-folding time per scale, seconds
    edge_dist = np.minimum(times, times[-1] - times)
    seam_times = np.array(
        sorted({(s - 0.5) * dt for s in (*x.seams, *y.seams)}), dtype=float
    )
    if seam_times.size:
        pos = np.searchsorted(seam_times, times)
        left = np.where(pos > 0, times - seam_times[np.maximum(pos - 1, 0)], np.inf)
        right = np.where(
            pos < seam_times.size,
            seam_times[np.minimum(pos, seam_times.size - 1)] - times,
            np.inf,
        )
        edge_dist = np.minimum(edge_dist, np.minimum(np.abs(left), np.abs(right)))
    valid = efold[:, None] <= edge_dist[None, :]
    return CoherenceMatrix(freqs, times, coh, valid)


def band_coherence(matrix: CoherenceMatrix, band: BandSpec) -> float:
    """Mean coherence over valid bins within ``band``; nan if none are valid."""
    lo = band.center_hz - band.width_hz / 2.0
    hi = band.center_hz + band.width_hz / 2.0
    if lo < matrix.freqs_hz[0] or hi > matrix.freqs_hz[-1]:
        raise ConfigError(
            f"band {band.name} [{lo}, {hi}] Hz outside analysed range "
            f"[{matrix.freqs_hz[0]:.3f}, {matrix.freqs_hz[-1]:.3f}] Hz"
        )
    rows = (matrix.freqs_hz >= lo) & (matrix.freqs_hz <= hi)
    mask = matrix.valid[rows]
    vals = matrix.values[rows]
    if not np.any(mask):
        return float("nan")
    return float(vals[mask].mean())


def load_marker_series(path: str | Path) -> SwaySeries:
    """Load a marker file and project it to a postural position series.

    Accepts CSV with header ``t_ms,back_x,back_y,back_z,lfoot_x,lfoot_y,
    lfoot_z,rfoot_x,rfoot_y,rfoot_z`` or an ``.npz`` with arrays ``t_ms``,
    ``back``, ``lfoot``, ``rfoot`` (the latter three of shape (n, 3)).
    """
    path = Path(path)
    if path.suffix == ".npz":
        data = np.load(path)
        try:
            t_ms = np.asarray(data["t_ms"], dtype=float)
            back = np.asarray(data["back"], dtype=float)
            lfoot = np.asarray(data["lfoot"], dtype=float)
            rfoot = np.asarray(data["rfoot"], dtype=float)
        except KeyError as exc:
            raise DataError(f"{path}: missing marker array {exc}") from exc
    else:
        cols = {name: [] for name in (
            "t_ms", "back_x", "back_y", "back_z",
            "lfoot_x", "lfoot_y", "lfoot_z", "rfoot_x", "rfoot_y", "rfoot_z")}
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or set(cols) - set(reader.fieldnames):
                raise DataError(f"{path}: missing marker columns")
            for row in reader:
                for name in cols:
                    cols[name].append(float(row[name]))
        t_ms = np.array(cols["t_ms"])
        back = np.column_stack([cols["back_x"], cols["back_y"], cols["back_z"]])
        lfoot = np.column_stack([cols["lfoot_x"], cols["lfoot_y"], cols["lfoot_z"]])
        rfoot = np.column_stack([cols["rfoot_x"], cols["rfoot_y"], cols["rfoot_z"]])
    if t_ms.size < 2:
        raise InsufficientDataError(f"{path}: need at least 2 marker frames")
    steps = np.diff(t_ms)
    if np.any(steps <= 0):
        raise DataError(f"{path}: marker timestamps must increase")
    axis = rfoot - lfoot
    norms = np.linalg.norm(axis, axis=1)
    if np.any(norms == 0):
        raise GeometryError(f"{path}: coincident foot markers")
    proj = np.einsum("ij,ij->i", back - lfoot, axis / norms[:, None])
    fs = 1000.0 / float(np.median(steps))
    return SwaySeries(proj, fs_hz=fs, t0_ms=float(t_ms[0]))
