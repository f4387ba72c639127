from __future__ import annotations

import math
import random
import statistics

import numpy as np
import pytest

from drumcircle.agents import (
    AgentParams,
    AgentState,
    SwayParams,
    TapAgent,
    grid_asynchrony,
    synthesize_sway,
)
from drumcircle.errors import ConfigError
from drumcircle.movement import qom
from drumcircle.rhythm import RhythmSpec, TapEvent


def _agent(role="ternary", state=None, seed=0, **kw):
    params = AgentParams(role=role, **kw)
    return TapAgent(params, RhythmSpec(), random.Random(seed), state=state)


def test_param_validation():
    with pytest.raises(ConfigError):
        AgentParams(role="drums")
    with pytest.raises(ConfigError):
        AgentParams(role="binary", alpha=0.7, beta=0.5)
    with pytest.raises(ConfigError):
        AgentParams(role="binary", p_skip=1.0)
    with pytest.raises(ConfigError):
        AgentParams(role="binary", motor_noise_sd_ms=-1.0)


def test_uncorrected_noiseless_agent_taps_the_grid():
    agent = _agent(motor_noise_sd_ms=0.0, alpha=0.0, beta=0.0, p_skip=0.0)
    taps = [agent.plan_next_tap().onset_ms for _ in range(5)]
    assert taps == [0.0, 706.0, 1412.0, 2118.0, 2824.0]


def test_full_correction_cancels_initial_offset():
    agent = _agent(motor_noise_sd_ms=0.0, alpha=1.0, beta=0.0,
                   state=AgentState(next_onset_ms=40.0))
    first = agent.plan_next_tap()
    assert first.onset_ms == 40.0
    second = agent.plan_next_tap()
    assert grid_asynchrony(second.onset_ms, 706.0) == pytest.approx(0.0)


def test_half_correction_decays_geometrically():
    agent = _agent(motor_noise_sd_ms=0.0, alpha=0.5, beta=0.0,
                   state=AgentState(next_onset_ms=40.0))
    asyns = []
    for _ in range(5):
        tap = agent.plan_next_tap()
        asyns.append(grid_asynchrony(tap.onset_ms, 706.0))
    assert asyns == pytest.approx([40.0, 20.0, 10.0, 5.0, 2.5])


def test_partner_coupling_term():
    agent = _agent(motor_noise_sd_ms=0.0, alpha=0.0, beta=0.5)
    agent.plan_next_tap()  # tap at 0, schedules 706
    agent.hear_partner(1059.0 + 30.0)  # partner late by 30 ms on its own grid
    agent.plan_next_tap()  # tap at 706, plans with the coupling term
    assert agent.state.next_onset_ms == pytest.approx(706.0 + 706.0 - 0.5 * 30.0)


def test_skip_multiples_within_bounds():
    agent = _agent(motor_noise_sd_ms=0.0, alpha=0.0, beta=0.0,
                   p_skip=0.5, max_skip_mult=4, seed=123)
    taps = [agent.plan_next_tap().onset_ms for _ in range(200)]
    iois = [round((b - a) / 706.0) for a, b in zip(taps, taps[1:])]
    assert set(iois) <= {1, 2, 3, 4}
    assert any(m > 1 for m in iois)
    skip_fraction = sum(m > 1 for m in iois) / len(iois)
    assert 0.35 < skip_fraction < 0.65


def test_onsets_strictly_increasing_under_heavy_noise():
    agent = _agent(motor_noise_sd_ms=400.0, alpha=1.0, beta=0.0, seed=5)
    last = -1.0
    for _ in range(500):
        t = agent.plan_next_tap().onset_ms
        assert t > last
        last = t


def test_seq_increments():
    agent = _agent(motor_noise_sd_ms=0.0, alpha=0.0)
    seqs = [agent.plan_next_tap().seq for _ in range(5)]
    assert seqs == [0, 1, 2, 3, 4]


def test_asynchrony_sd_bounded_and_stationary():
    sd = 10.0
    agent = _agent(motor_noise_sd_ms=sd, alpha=0.5, beta=0.0, seed=17)
    asyns = [grid_asynchrony(agent.plan_next_tap().onset_ms, 706.0)
             for _ in range(2000)]
    settled = asyns[20:]
    # Stationary variance of the corrected process is sigma^2 / (alpha(2-alpha)).
    predicted = sd / math.sqrt(0.5 * 1.5)
    first, second = settled[: len(settled) // 2], settled[len(settled) // 2:]
    assert statistics.stdev(settled) < 2.0 * predicted
    assert 0.5 < statistics.stdev(first) / statistics.stdev(second) < 2.0


def _sway(role="binary", taps=(), seconds=10.0, **kw):
    spec = RhythmSpec(trial_duration_ms=seconds * 1000.0)
    return synthesize_sway(list(taps), spec, role, SwayParams(**kw))


def test_sway_pure_sinusoid_peak_bin():
    series = _sway(role="binary", pulse_amp_mm=0.0, noise_amp_mm=0.0, tap_amp_mm=1.0)
    spectrum = np.abs(np.fft.rfft(series.samples))
    freqs = np.fft.rfftfreq(series.samples.size, d=1.0 / series.fs_hz)
    peak = freqs[int(np.argmax(spectrum))]
    assert peak == pytest.approx(1000.0 / 1059.0, abs=0.05)


def test_sway_zero_energy_is_constant():
    series = _sway(energy=0.0)
    assert qom(series) == 0.0
    assert np.all(series.samples == 0.0)


def test_sway_deterministic_per_seed():
    a = _sway(seed=9)
    b = _sway(seed=9)
    c = _sway(seed=10)
    assert np.array_equal(a.samples, b.samples)
    assert not np.array_equal(a.samples, c.samples)


def test_sway_sampling_rate_and_length():
    series = _sway(seconds=242.0)
    assert series.fs_hz == 120.0
    assert series.samples.size == 29040


def test_sway_phase_follows_mean_asynchrony():
    taps = [TapEvent("binary", i * 1059.0 + 100.0, "agent", i) for i in range(20)]
    shifted = _sway(taps=taps, noise_amp_mm=0.0)
    base = _sway(taps=(), noise_amp_mm=0.0)
    assert not np.allclose(shifted.samples, base.samples)


def test_shared_pulse_component_raises_pulse_band_coherence():
    # Two players share the pulse phase; with independent noise their sway
    # should cohere at the pulse more than pure-noise pairs do.
    from drumcircle.movement import DEFAULT_BANDS, band_coherence, wavelet_coherence

    spec = RhythmSpec(trial_duration_ms=60_000.0)
    shared, null = [], []
    for seed in range(100):
        sway_b = synthesize_sway([], spec, "binary",
                                 SwayParams(tap_amp_mm=0.0, seed=seed * 2))
        sway_t = synthesize_sway([], spec, "ternary",
                                 SwayParams(tap_amp_mm=0.0, seed=seed * 2 + 1))
        shared.append(band_coherence(wavelet_coherence(sway_b, sway_t),
                                     DEFAULT_BANDS[0]))
        noise_b = synthesize_sway([], spec, "binary",
                                  SwayParams(tap_amp_mm=0.0, pulse_amp_mm=0.0,
                                             seed=seed * 2))
        noise_t = synthesize_sway([], spec, "ternary",
                                  SwayParams(tap_amp_mm=0.0, pulse_amp_mm=0.0,
                                             seed=seed * 2 + 1))
        null.append(band_coherence(wavelet_coherence(noise_b, noise_t),
                                   DEFAULT_BANDS[0]))
    null_p95 = sorted(null)[int(0.95 * len(null)) - 1]
    exceed = sum(v > null_p95 for v in shared)
    assert exceed >= 95
