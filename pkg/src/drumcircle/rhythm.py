"""Polyrhythmic task model.

Two players tap interlocking isochronous streams: the "binary" part with two
taps per common pulse cycle and the "ternary" part with three. Instructed
onsets form a fixed grid, produced taps are judged against a symmetric
tolerance window, and joint per-cycle success drives a stepwise stimulus
transparency level. Everything here is pure functions over value types, so
the same code serves the simulator, the live session loop and the tests.
"""

from __future__ import annotations

import math
from bisect import bisect_left
from dataclasses import dataclass, field
from enum import Enum

from .errors import ConfigError

ROLES = ("binary", "ternary")


class Background(str, Enum):
    METRONOME = "metronome"
    MUSIC = "music"


# Step indices of the standard 12-step bell pattern, one pulse cycle long.
BELL_PATTERN_STEPS = (0, 2, 4, 5, 7, 9, 11)
BELL_GRID_STEPS = 12


@dataclass(frozen=True)
class RhythmSpec:
    """Task timing constants. Defaults give the 2:3 pattern at 170 BPM tactus."""

    tactus_ms: float = 353.0
    binary_mult: int = 3          # binary-part IOI = tactus * binary_mult
    ternary_mult: int = 2         # ternary-part IOI = tactus * ternary_mult
    trial_duration_ms: float = 242_000.0
    tolerance_ms: float = 62.5
    transparency_levels: int = 5

    def __post_init__(self):
        if self.tactus_ms <= 0:
            raise ConfigError(f"tactus_ms must be positive, got {self.tactus_ms}")
        if self.binary_mult < 1 or self.ternary_mult < 1:
            raise ConfigError("rhythm multipliers must be >= 1")
        if math.gcd(self.binary_mult, self.ternary_mult) != 1:
            raise ConfigError(
                f"rhythm multipliers must be coprime, got "
                f"({self.binary_mult}, {self.ternary_mult})"
            )
        if self.trial_duration_ms <= 0:
            raise ConfigError("trial_duration_ms must be positive")
        if self.tolerance_ms < 0:
            raise ConfigError("tolerance_ms must be non-negative")
        # Tolerance windows of adjacent instructed onsets must not overlap.
        if 2 * self.tolerance_ms >= self.min_ioi_ms:
            raise ConfigError(
                f"tolerance {self.tolerance_ms} ms overlaps adjacent onsets "
                f"(min IOI {self.min_ioi_ms} ms)"
            )
        if self.transparency_levels < 1:
            raise ConfigError("transparency_levels must be >= 1")

    @property
    def binary_ioi_ms(self) -> float:
        return self.tactus_ms * self.binary_mult

    @property
    def ternary_ioi_ms(self) -> float:
        return self.tactus_ms * self.ternary_mult

    @property
    def min_ioi_ms(self) -> float:
        return min(self.binary_ioi_ms, self.ternary_ioi_ms)

    @property
    def pulse_ms(self) -> float:
        """Common pulse period: the two streams coincide every pulse_ms."""
        return self.tactus_ms * self.binary_mult * self.ternary_mult

    @property
    def n_cycles(self) -> int:
        """Number of complete pulse cycles in one trial."""
        return int(self.trial_duration_ms // self.pulse_ms)

    def ioi_ms(self, role: str) -> float:
        if role == "binary":
            return self.binary_ioi_ms
        if role == "ternary":
            return self.ternary_ioi_ms
        raise ConfigError(f"unknown role {role!r}")


@dataclass(frozen=True)
class InstructionOnset:
    player: str      # "binary" | "ternary"
    index: int
    time_ms: float


@dataclass(frozen=True)
class TapEvent:
    player: str      # role of the tapper
    onset_ms: float  # on the trial clock
    source: str = "agent"   # "agent" | "remote"
    seq: int = 0
    velocity: int = 100


@dataclass(frozen=True)
class CycleOutcome:
    cycle_index: int
    matched_per_player: dict[str, bool]
    stray_taps: int
    success: bool


@dataclass(frozen=True)
class TransparencyState:
    level: int = 0

    def clamped(self, level: int, max_level: int) -> "TransparencyState":
        return TransparencyState(min(max(level, 0), max_level))


@dataclass(frozen=True)
class BeatSchedule:
    background: Background
    # (time_ms, layer) with layer in {"pulse_bell", "bell_pattern", "tactus_perc"}
    onsets: tuple[tuple[float, str], ...] = field(default_factory=tuple)


def build_instruction_grid(spec: RhythmSpec) -> dict[str, list[InstructionOnset]]:
    """Instructed onsets per role, from 0 up to and including trial end."""
    grids: dict[str, list[InstructionOnset]] = {}
    for role in ROLES:
        ioi = spec.ioi_ms(role)
        n = int(spec.trial_duration_ms // ioi)
        grids[role] = [
            InstructionOnset(role, i, i * ioi)
            for i in range(n + 1)
            if i * ioi <= spec.trial_duration_ms
        ]
    return grids


def match_tap(
    tap_ms: float,
    onsets: list[InstructionOnset],
    tolerance_ms: float,
) -> tuple[int, float] | None:
    """Match a tap against the nearest instructed onset.

    Returns (onset index, signed asynchrony = tap - onset) when the nearest
    onset lies within the tolerance window, else None. Equidistant taps
    resolve to the earlier onset.
    """
    if not onsets:
        return None
    times = [o.time_ms for o in onsets]
    pos = bisect_left(times, tap_ms)
    best = None
    for k in (pos - 1, pos):
        if 0 <= k < len(times):
            delta = tap_ms - times[k]
            if abs(delta) <= tolerance_ms:
                if best is None or abs(delta) < abs(best[1]):
                    best = (onsets[k].index, delta)
    return best


def evaluate_cycle(
    taps: list[TapEvent],
    grid: dict[str, list[InstructionOnset]],
    spec: RhythmSpec,
    cycle_index: int,
) -> CycleOutcome:
    """Judge one pulse cycle from both players' produced taps.

    A cycle succeeds when every produced tap lands inside some instructed
    onset's tolerance window and each player produced at least one matched
    tap. Skipped instructed onsets are improvisation, not mistakes; a tap
    matching no onset is a stray and forces failure.
    """
    start = cycle_index * spec.pulse_ms
    end = start + spec.pulse_ms
    for tap in taps:
        if not (start <= tap.onset_ms < end):
            raise ValueError(
                f"tap at {tap.onset_ms} ms outside cycle {cycle_index} "
                f"window [{start}, {end})"
            )
    matched = {role: False for role in ROLES}
    strays = 0
    for tap in taps:
        hit = match_tap(tap.onset_ms, grid[tap.player], spec.tolerance_ms)
        if hit is None:
            strays += 1
        else:
            matched[tap.player] = True
    success = strays == 0 and all(matched.values())
    return CycleOutcome(cycle_index, matched, strays, success)


def update_transparency(
    state: TransparencyState,
    outcome: CycleOutcome,
    spec: RhythmSpec,
) -> TransparencyState:
    """Step the stimulus transparency one level up on success, down on failure."""
    step = 1 if outcome.success else -1
    return state.clamped(state.level + step, spec.transparency_levels)


def backing_track_schedule(spec: RhythmSpec, background: Background | str) -> BeatSchedule:
    """Beat onsets of the auditory background.

    The metronome is a bell at every pulse. The music background adds the
    standard bell pattern on a 12-step grid per pulse cycle plus percussion
    on every tactus.
    """
    background = Background(background)
    end = spec.trial_duration_ms
    pulse = spec.pulse_ms
    onsets: list[tuple[float, str]] = []

    def grid(period: float, layer: str, offsets=(0.0,)):
        k = 0
        while k * period <= end:
            for off in offsets:
                t = k * period + off
                if t <= end:
                    onsets.append((t, layer))
            k += 1

    grid(pulse, "pulse_bell")
    if background is Background.MUSIC:
        step = pulse / BELL_GRID_STEPS
        grid(pulse, "bell_pattern", offsets=tuple(s * step for s in BELL_PATTERN_STEPS))
        grid(spec.tactus_ms, "tactus_perc")
    onsets.sort(key=lambda x: (x[0], x[1]))
    return BeatSchedule(background, tuple(onsets))
