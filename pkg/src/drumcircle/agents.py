"""Computer-controlled tapping players.

Each agent follows a first-order linear phase-correction model: the next
tap is one (or, when improvising a skip, several) nominal IOIs after the
previous one, corrected by a fraction of its own last asynchrony and of the
partner's last asynchrony as heard through the audio link, plus Gaussian
motor noise. A companion generator turns an agent's trial into a synthetic
postural sway series so the movement analysis has realistic input: sway is
a sum of sinusoids at the agent's tapping frequency and at the shared
common pulse, plus 1/f noise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from random import Random

import numpy as np

from .errors import ConfigError
from .movement import SwaySeries
from .rhythm import RhythmSpec, TapEvent


@dataclass(frozen=True)
class AgentParams:
    role: str                      # "binary" | "ternary"
    motor_noise_sd_ms: float = 25.0
    alpha: float = 0.5             # correction gain toward own instruction grid
    beta: float = 0.25             # coupling gain toward the partner's heard taps
    p_skip: float = 0.0            # probability of improvising a skip
    max_skip_mult: int = 2         # largest skip, in own-IOI multiples
    seed: int = 0

    def __post_init__(self):
        if self.role not in ("binary", "ternary"):
            raise ConfigError(f"unknown role {self.role!r}")
        if self.motor_noise_sd_ms < 0:
            raise ConfigError("motor_noise_sd_ms must be non-negative")
        if not 0.0 <= self.alpha <= 1.0 or not 0.0 <= self.beta <= 1.0:
            raise ConfigError("alpha and beta must lie in [0, 1]")
        if self.alpha + self.beta > 1.0:
            raise ConfigError(
                f"alpha + beta must be <= 1 for stable correction, "
                f"got {self.alpha} + {self.beta}"
            )
        if not 0.0 <= self.p_skip < 1.0:
            raise ConfigError("p_skip must lie in [0, 1)")
        if self.max_skip_mult < 1:
            raise ConfigError("max_skip_mult must be >= 1")


@dataclass
class AgentState:
    next_onset_ms: float = 0.0
    last_asynchrony_ms: float = 0.0
    last_partner_asynchrony_ms: float = 0.0
    seq: int = 0


def grid_asynchrony(t_ms: float, ioi_ms: float) -> float:
    """Signed offset of a tap from the nearest onset of an isochronous grid."""
    return t_ms - round(t_ms / ioi_ms) * ioi_ms


class TapAgent:
    """Single-owner agent state advanced by the session loop."""

    def __init__(self, params: AgentParams, spec: RhythmSpec, rng: Random,
                 state: AgentState | None = None):
        self.params = params
        self.spec = spec
        self.rng = rng
        self.state = state or AgentState()
        self.ioi_ms = spec.ioi_ms(params.role)
        self.partner_ioi_ms = spec.ioi_ms(
            "ternary" if params.role == "binary" else "binary"
        )

    def plan_next_tap(self) -> TapEvent:
        """Emit the tap due now and schedule the following one."""
        st, p = self.state, self.params
        t = st.next_onset_ms
        tap = TapEvent(player=p.role, onset_ms=t, source="agent", seq=st.seq)
        asyn = grid_asynchrony(t, self.ioi_ms)
        mult = 1
        if p.p_skip > 0.0 and self.rng.random() < p.p_skip and p.max_skip_mult >= 2:
            mult = self.rng.randint(2, p.max_skip_mult)
        noise = self.rng.gauss(0.0, p.motor_noise_sd_ms) if p.motor_noise_sd_ms > 0 else 0.0
        nxt = (
            t
            + mult * self.ioi_ms
            - p.alpha * asyn
            - p.beta * st.last_partner_asynchrony_ms
            + noise
        )
        # Two taps can never coincide; keeps onset times strictly increasing
        # even under extreme noise draws.
        nxt = max(nxt, t + 1.0)
        st.last_asynchrony_ms = asyn
        st.next_onset_ms = nxt
        st.seq += 1
        return tap

    def hear_partner(self, partner_onset_ms: float) -> None:
        """Register a partner tap delivered by the audio link."""
        self.state.last_partner_asynchrony_ms = grid_asynchrony(
            partner_onset_ms, self.partner_ioi_ms
        )


@dataclass(frozen=True)
class SwayParams:
    fs_hz: float = 120.0
    energy: float = 1.0          # overall amplitude scale; 0 freezes the body
    tap_amp_mm: float = 6.0      # sway component at the agent's tapping frequency
    pulse_amp_mm: float = 4.0    # shared component at the common pulse frequency
    noise_amp_mm: float = 3.0    # 1/f noise, independent per player
    seed: int = 0

    def __post_init__(self):
        if self.fs_hz <= 0:
            raise ConfigError("fs_hz must be positive")
        for name in ("energy", "tap_amp_mm", "pulse_amp_mm", "noise_amp_mm"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")


def one_over_f_noise(n: int, rng: np.random.Generator) -> np.ndarray:
    """Unit-variance pink-ish noise via spectral shaping."""
    if n < 2:
        return np.zeros(n)
    white = rng.standard_normal(n)
    spec = np.fft.rfft(white)
    f = np.fft.rfftfreq(n)
    f[0] = f[1]
    spec /= np.sqrt(f)
    out = np.fft.irfft(spec, n)
    sd = out.std()
    return out / sd if sd > 0 else out


def synthesize_sway(
    taps: list[TapEvent],
    spec: RhythmSpec,
    role: str,
    params: SwayParams = SwayParams(),
) -> SwaySeries:
    """Synthetic postural position for one player over the whole trial.

    The tapping-frequency component is phase-anchored to the player's mean
    asynchrony, the pulse component is phase-locked to the trial clock and
    therefore shared between both players.
    """
    n = int(spec.trial_duration_ms / 1000.0 * params.fs_hz)
    t = np.arange(n) / params.fs_hz  # seconds
    ioi_s = spec.ioi_ms(role) / 1000.0
    tap_hz = 1.0 / ioi_s
    pulse_hz = 1000.0 / spec.pulse_ms
    own = [tap.onset_ms for tap in taps if tap.source == "agent"]
    mean_asyn_ms = (
        float(np.mean([grid_asynchrony(x, spec.ioi_ms(role)) for x in own])) if own else 0.0
    )
    phase = 2.0 * math.pi * (mean_asyn_ms / 1000.0) * tap_hz
    rng = np.random.default_rng(np.random.SeedSequence([params.seed & 0xFFFFFFFF, 0x5157]))
    pos = params.energy * (
        params.tap_amp_mm * np.sin(2.0 * math.pi * tap_hz * t - phase)
        + params.pulse_amp_mm * np.sin(2.0 * math.pi * pulse_hz * t)
        + params.noise_amp_mm * one_over_f_noise(n, rng)
    )
    return SwaySeries(pos, fs_hz=params.fs_hz, t0_ms=0.0)


def simulate_dyad(
    spec: RhythmSpec,
    params_binary: AgentParams,
    params_ternary: AgentParams,
    link_config: "dict | None" = None,
    background: str = "metronome",
    seed: int = 0,
    meta: "dict | None" = None,
    sway: SwayParams | None = None,
):
    """Run one full virtual-time trial of two agents; see session.run_session."""
    from .session import AgentEndpoint, run_session

    if params_binary.role != "binary" or params_ternary.role != "ternary":
        raise ConfigError("simulate_dyad expects one binary and one ternary agent")
    return run_session(
        spec,
        (AgentEndpoint(params_binary), AgentEndpoint(params_ternary)),
        links=link_config,
        mode="virtual_time",
        background=background,
        seed=seed,
        meta=meta,
        sway=sway,
    )
