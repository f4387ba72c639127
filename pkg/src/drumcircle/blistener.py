"""Bayesian inter-onset-interval tracking for timing-constancy scoring.

A bank of scalar Bayesian filters, one per rational multiple of a basis
IOI, consumes an onset stream converted to IOIs. Each observed IOI is
assigned to the tracker whose prediction it fits best; in-scope innovations
accumulate a dimensionless prediction error, out-of-scope IOIs incur a flat
penalty. Longer IOIs produced by deliberately skipped taps land on the
tracker of the matching multiple instead of inflating the error, so an
improvised stream scores like a plain one. The trial score averages
per-block error sums over equal temporal blocks.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from fractions import Fraction

from .errors import ConfigError, DataError, InsufficientDataError

# Rational meter multiples of the basis IOI covered by the default bank.
# Multiple 1 keeps the tactus-level IOIs of a merged two-player stream
# representable alongside the published multiples.
DEFAULT_METERS = (
    Fraction(1),
    Fraction(3, 2),
    Fraction(2),
    Fraction(3),
    Fraction(4),
    Fraction(6),
    Fraction(8),
    Fraction(9),
)

DEFAULT_TG_MS = 1000.0 * 60.0 / 170.0  # basis IOI at 170 BPM tactus


@dataclass(frozen=True)
class BListenerParams:
    meter_values: tuple[Fraction, ...] = DEFAULT_METERS
    tg_ms: float = DEFAULT_TG_MS
    gravity: float = 0.01
    outscope: float = 0.05          # relative gate around the predicted IOI
    system_noise: float = 1e-05     # variance per step, relative to target^2
    observation_noise: float = 1e-03  # variance, relative to target^2
    sampling_rate: float = 100.0    # carried in the config; scoring is event-based
    n_cycles: int = 10              # leading IOIs treated as warm-up
    n_blocks: int = 4               # temporal blocks averaged into the trial score

    def __post_init__(self):
        if not self.meter_values:
            raise ConfigError("meter_values must be non-empty")
        if any(m <= 0 for m in self.meter_values):
            raise ConfigError("meter values must be positive")
        if list(self.meter_values) != sorted(self.meter_values):
            raise ConfigError("meter_values must be sorted ascending")
        for name in ("tg_ms", "gravity", "outscope", "system_noise",
                     "observation_noise", "sampling_rate"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.outscope >= 0.5:
            raise ConfigError("outscope must be < 0.5")
        if self.n_cycles < 0 or self.n_blocks < 1:
            raise ConfigError("n_cycles must be >= 0 and n_blocks >= 1")

    def without_meter(self, meter: Fraction | int | float) -> "BListenerParams":
        kept = tuple(m for m in self.meter_values if m != Fraction(meter))
        return replace(self, meter_values=kept)


@dataclass
class TrackerState:
    meter: Fraction
    estimate_ms: float       # predicted IOI
    variance: float
    target_ms: float         # meter * tg
    accumulated_error: float = 0.0
    update_count: int = 0


@dataclass(frozen=True)
class PredictionReport:
    stream: str
    global_error: float
    per_tracker: tuple[dict, ...]
    n_observations: int = 0
    n_scored: int = 0
    n_out_of_scope: int = 0


def init_trackers(params: BListenerParams) -> list[TrackerState]:
    """One tracker per meter value, primed at its target IOI."""
    if not params.meter_values:
        raise ConfigError("meter_values must be non-empty")
    trackers = []
    for m in params.meter_values:
        target = float(m) * params.tg_ms
        trackers.append(
            TrackerState(
                meter=m,
                estimate_ms=target,
                variance=params.observation_noise * target * target,
                target_ms=target,
            )
        )
    return trackers


def _predict(tracker: TrackerState, params: BListenerParams) -> tuple[float, float]:
    """Time-update step: gravity pull toward the target, variance inflation."""
    est = tracker.estimate_ms + params.gravity * (tracker.target_ms - tracker.estimate_ms)
    var = tracker.variance + params.system_noise * tracker.target_ms ** 2
    return est, var


def tracker_step(
    tracker: TrackerState,
    observed_ioi_ms: float,
    params: BListenerParams,
) -> tuple[TrackerState, float | None, bool]:
    """Advance one tracker by one observed IOI.

    Returns (new state, error contribution, in_scope). The prediction step
    always runs; the measurement update and the squared relative innovation
    apply only when the observation falls inside the relative gate. Out of
    scope the contribution is None and penalising is left to the caller.
    """
    if not (observed_ioi_ms > 0) or observed_ioi_ms != observed_ioi_ms:
        raise DataError(f"observed IOI must be positive and finite, got {observed_ioi_ms}")
    return _gated_step(tracker, observed_ioi_ms, params)


def _gated_step(
    tracker: TrackerState,
    ioi: float,
    params: BListenerParams,
    accumulate: bool = True,
) -> tuple[TrackerState, float | None, bool]:
    est, var = _predict(tracker, params)
    nu = ioi - est
    if abs(nu) > params.outscope * est:
        return replace(tracker, estimate_ms=est, variance=var), None, False
    r = params.observation_noise * tracker.target_ms ** 2
    gain = var / (var + r)
    contribution = (nu / est) ** 2
    new = replace(
        tracker,
        estimate_ms=est + gain * nu,
        variance=(1.0 - gain) * var,
        accumulated_error=tracker.accumulated_error + (contribution if accumulate else 0.0),
        update_count=tracker.update_count + 1,
    )
    return new, contribution, True


def score_stream(
    onsets: list[float],
    params: BListenerParams = BListenerParams(),
    stream: str = "individual",
) -> PredictionReport:
    """Score one onset stream.

    Consecutive onsets become IOIs. Each IOI goes to the tracker with the
    smallest relative innovation; the first ``n_cycles`` IOIs only warm the
    bank up. The trial score is the mean over ``n_blocks`` equal temporal
    blocks of the per-block error sum.
    """
    if len(onsets) < 3:
        raise InsufficientDataError(
            f"need at least 3 onsets to score a stream, got {len(onsets)}"
        )
    if sorted(onsets) != list(onsets):
        raise DataError("onsets must be sorted ascending")
    trackers = init_trackers(params)
    # (time of the IOI's closing onset, error contribution)
    scored: list[tuple[float, float]] = []
    n_out = 0
    n_obs = 0
    for i in range(1, len(onsets)):
        ioi = onsets[i] - onsets[i - 1]
        if ioi <= 0:
            raise DataError(f"non-increasing onsets at index {i}")
        n_obs += 1
        best_j = 0
        best_rel = None
        for j, trk in enumerate(trackers):
            est, _ = _predict(trk, params)
            rel = abs(ioi - est) / est
            if best_rel is None or rel < best_rel:
                best_j, best_rel = j, rel
        warmup = n_obs <= params.n_cycles
        if best_rel <= params.outscope:
            trackers[best_j], contribution, _ = _gated_step(
                trackers[best_j], ioi, params, accumulate=not warmup
            )
            if not warmup:
                scored.append((onsets[i], contribution))
        else:
            # No tracker claims this IOI: flat penalty, bank untouched.
            n_out += 1
            if not warmup:
                scored.append((onsets[i], params.outscope ** 2))
    global_error = _block_mean(scored, params.n_blocks)
    return PredictionReport(
        stream=stream,
        global_error=global_error,
        per_tracker=tuple(
            {
                "meter": str(t.meter),
                "target_ms": t.target_ms,
                "estimate_ms": t.estimate_ms,
                "accumulated_error": t.accumulated_error,
                "update_count": t.update_count,
            }
            for t in trackers
        ),
        n_observations=n_obs,
        n_scored=len(scored),
        n_out_of_scope=n_out,
    )


def _block_mean(scored: list[tuple[float, float]], n_blocks: int) -> float:
    if not scored:
        return 0.0
    t0 = scored[0][0]
    t1 = scored[-1][0]
    span = t1 - t0
    sums = [0.0] * n_blocks
    for t, err in scored:
        if span > 0:
            b = min(int((t - t0) / span * n_blocks), n_blocks - 1)
        else:
            b = 0
        sums[b] += err
    return sum(sums) / n_blocks


def merge_streams(
    taps_a: list[float],
    taps_b: list[float],
    collapse_ms: float = 1.0,
) -> list[float]:
    """Merge two onset streams, collapsing near-simultaneous onsets."""
    merged = sorted(list(taps_a) + list(taps_b))
    out: list[float] = []
    for t in merged:
        if out and t - out[-1] <= collapse_ms:
            continue
        out.append(t)
    return out


def joint_score(
    taps_binary: list[float],
    taps_ternary: list[float],
    params: BListenerParams = BListenerParams(),
) -> PredictionReport:
    """Score the interleaved two-player stream as one joint performance."""
    if not taps_binary and not taps_ternary:
        raise InsufficientDataError("both streams empty")
    merged = merge_streams(taps_binary, taps_ternary)
    return score_stream(merged, params, stream="joint")
