"""Per-trial analysis pipeline: timing scores and movement measures.

Fills a trial record's analysis block with the prediction error of each
player's tap stream and of the merged joint stream, each player's quantity
of motion, and the dyad's band-summarised wavelet coherence computed on the
transparent portions of the sway series. Values that cannot be computed
(too few taps, no transparent time) become nulls rather than errors so a
batch run always completes.
"""

from __future__ import annotations

import math
from pathlib import Path

from .blistener import BListenerParams, joint_score, score_stream
from .errors import DataError, InsufficientDataError
from .movement import (
    DEFAULT_BANDS,
    band_coherence,
    extract_transparent_segments,
    qom,
    wavelet_coherence,
)
from .rhythm import ROLES
from .trialio import TrialRecord, read_trial, write_trial


def produced_onsets(record: TrialRecord, role: str) -> list[float]:
    """A player's produced tap onsets.

    Locally hosted players log their taps with source "agent"; a player
    hosted by a remote peer only appears with source "remote". The heard
    copies of a local player are ignored so nothing is double counted.
    """
    agent = [e["t_ms"] for e in record.events
             if e["kind"] == "tap" and e["player"] == role and e["source"] == "agent"]
    if agent:
        return agent
    return [e["t_ms"] for e in record.events
            if e["kind"] == "tap" and e["player"] == role and e["source"] == "remote"]


def transparency_log(record: TrialRecord) -> list[tuple[float, int]]:
    log = [(e["t_ms"], e["level"]) for e in record.events
           if e["kind"] == "transparency"]
    if not log or log[0][0] > 0.0:
        log.insert(0, (0.0, 0))
    return log


def _none_if_nan(value: float) -> float | None:
    return None if value != value else value


def analyze_record(
    record: TrialRecord,
    blistener: BListenerParams = BListenerParams(),
    bands=DEFAULT_BANDS,
) -> dict:
    """Compute the full analysis block for one trial."""
    onsets = {role: produced_onsets(record, role) for role in ROLES}
    prediction_error: dict[str, float | None] = {}
    for role in ROLES:
        try:
            report = score_stream(onsets[role], blistener, stream=f"{role}_individual")
            prediction_error[f"{role}_individual"] = report.global_error
        except InsufficientDataError:
            prediction_error[f"{role}_individual"] = None
    try:
        prediction_error["joint"] = joint_score(
            onsets["binary"], onsets["ternary"], blistener
        ).global_error
    except InsufficientDataError:
        prediction_error["joint"] = None

    qom_block: dict[str, float | None] = {}
    for role in ROLES:
        series = record.sway.get(role)
        try:
            qom_block[role] = qom(series) if series is not None else None
        except InsufficientDataError:
            qom_block[role] = None

    coherence = None
    if all(role in record.sway for role in ROLES):
        log = transparency_log(record)
        kept = {
            role: extract_transparent_segments(record.sway[role], log)
            for role in ROLES
        }
        try:
            matrix = wavelet_coherence(kept["binary"], kept["ternary"])
            coherence = {
                band.name: _none_if_nan(band_coherence(matrix, band))
                for band in bands
            }
        except (InsufficientDataError, DataError):
            coherence = None

    return {
        "prediction_error": prediction_error,
        "qom": qom_block,
        "band_coherence": coherence,
    }


def analyze_directory(
    in_dir: str | Path,
    out_dir: str | Path,
    blistener: BListenerParams = BListenerParams(),
) -> tuple[list[Path], dict[str, str]]:
    """Analyse every trial log under ``in_dir`` into ``out_dir``.

    Returns (written paths, per-file failures). Corrupt logs are skipped
    and reported, never fatal here; the CLI decides the exit code.
    """
    in_dir = Path(in_dir)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    failures: dict[str, str] = {}
    for path in sorted(in_dir.glob("*.jsonl")):
        try:
            record = read_trial(path)
            record.analysis = analyze_record(record, blistener)
            written.append(write_trial(record, out_dir / path.name))
        except Exception as exc:
            failures[path.name] = str(exc)
    return written, failures
