"""Persistence: trial logs as JSON Lines, run configs, long-format CSV export.

A trial file holds one JSON object per line: the header first, then the
time-sorted events, and (after analysis) a final analysis line. Postural
sway lives in per-player sidecar CSVs referenced from the header, keeping
logs small and the log itself appendable during a run. The exporter
flattens analysed records into one row per (trial, player) for external
statistical fitting; self-report predictors have no synthetic source and
export as empty columns.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .agents import AgentParams, SwayParams
from .errors import ConfigError, ValidationError
from .movement import SwaySeries
from .net import LinkConfig
from .rhythm import ROLES, RhythmSpec

PARTNER_REALISM = ("not_seeing", "avatar", "real")
BACKGROUNDS = ("metronome", "music")
EVENT_KINDS = ("tap", "tap_seen", "beat", "transparency")

CSV_COLUMNS = (
    "dyad", "player", "task", "partner_realism", "musical_background", "trial_count",
    "prediction_error_individual", "prediction_error_joint", "qom",
    "coherence_pulse", "coherence_binary_rhythm", "coherence_ternary_rhythm",
    "relation_frequency", "relation_length", "percussion", "training",
    "engagement", "soi",
)


@dataclass
class TrialRecord:
    trial_id: str
    dyad_id: str
    partner_realism: str
    musical_background: str
    trial_count: int
    seed: int
    spec: RhythmSpec
    agents: dict[str, AgentParams]
    links: dict[str, LinkConfig]
    events: list[dict]
    sway: dict[str, SwaySeries] = field(default_factory=dict)
    sway_files: dict[str, dict] = field(default_factory=dict)
    warnings: dict = field(default_factory=dict)
    analysis: dict | None = None


def validate_record(record: TrialRecord) -> None:
    """Reject records that violate the logged-trial invariants."""
    if record.partner_realism not in PARTNER_REALISM:
        raise ValidationError(
            f"partner_realism must be one of {PARTNER_REALISM}", field="partner_realism"
        )
    if record.musical_background not in BACKGROUNDS:
        raise ValidationError(
            f"musical_background must be one of {BACKGROUNDS}", field="musical_background"
        )
    if not 1 <= record.trial_count <= 6:
        raise ValidationError("trial_count must be in 1..6", field="trial_count")
    duration = record.spec.trial_duration_ms
    last_t = -float("inf")
    seqs: dict[tuple, int] = {}
    for i, ev in enumerate(record.events):
        line = i + 2  # header occupies line 1
        kind = ev.get("kind")
        if kind not in EVENT_KINDS:
            raise ValidationError(f"unknown event kind {kind!r}", line=line, field="kind")
        t = ev.get("t_ms")
        if not isinstance(t, (int, float)) or not np.isfinite(t):
            raise ValidationError("event t_ms must be finite", line=line, field="t_ms")
        if t < last_t:
            raise ValidationError("events must be time-sorted", line=line, field="t_ms")
        last_t = t
        if kind == "tap":
            if ev.get("player") not in ROLES:
                raise ValidationError("tap player must be a task role", line=line,
                                      field="player")
            if ev.get("source") not in ("agent", "remote"):
                raise ValidationError("tap source must be agent or remote", line=line,
                                      field="source")
            if not 0.0 <= t <= duration:
                raise ValidationError("tap outside the trial clock", line=line,
                                      field="t_ms")
            key = (ev["player"], ev["source"])
            seq = ev.get("seq", 0)
            if key in seqs and seq <= seqs[key]:
                raise ValidationError("tap seq must increase per player", line=line,
                                      field="seq")
            seqs[key] = seq
        if kind == "transparency":
            level = ev.get("level")
            if not isinstance(level, int) or not 0 <= level <= record.spec.transparency_levels:
                raise ValidationError("transparency level out of range", line=line,
                                      field="level")


def _header_dict(record: TrialRecord) -> dict:
    spec = asdict(record.spec)
    return {
        "kind": "header",
        "trial_id": record.trial_id,
        "dyad_id": record.dyad_id,
        "partner_realism": record.partner_realism,
        "musical_background": record.musical_background,
        "trial_count": record.trial_count,
        "seed": record.seed,
        "spec": spec,
        "agents": {role: asdict(p) for role, p in sorted(record.agents.items())},
        "links": {kind: asdict(c) for kind, c in sorted(record.links.items())},
        "sway_files": record.sway_files,
        "warnings": record.warnings,
    }


def write_trial(record: TrialRecord, path: str | Path) -> Path:
    """Write one record (and its sway sidecars) as JSON Lines."""
    validate_record(record)
    path = Path(path)
    if record.sway and not record.sway_files:
        record.sway_files = {
            role: {
                "path": f"{path.stem}.sway.{role}.csv",
                "fs_hz": series.fs_hz,
                "t0_ms": series.t0_ms,
            }
            for role, series in sorted(record.sway.items())
        }
    lines = [json.dumps(_header_dict(record))]
    lines.extend(json.dumps(ev) for ev in record.events)
    if record.analysis is not None:
        lines.append(json.dumps({"kind": "analysis", **record.analysis}))
    path.write_text("\n".join(lines) + "\n")
    for role, ref in record.sway_files.items():
        if role in record.sway:
            _write_sway(record.sway[role], path.parent / ref["path"])
    return path


def _write_sway(series: SwaySeries, path: Path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("position_mm\n")
        fh.writelines(f"{x!r}\n" for x in series.samples.tolist())


def _read_sway(path: Path, fs_hz: float, t0_ms: float) -> SwaySeries:
    with open(path) as fh:
        header = fh.readline().strip()
        if header != "position_mm":
            raise ValidationError(f"{path}: not a sway sidecar", line=1)
        samples = np.array([float(line) for line in fh], dtype=float)
    return SwaySeries(samples, fs_hz=fs_hz, t0_ms=t0_ms)


def _spec_from_dict(data: dict) -> RhythmSpec:
    return RhythmSpec(**_checked(data, RhythmSpec, "spec"))


def _checked(data: dict, cls, where: str) -> dict:
    allowed = {f.name for f in fields(cls)}
    unknown = set(data) - allowed
    if unknown:
        raise ConfigError(f"unknown keys {sorted(unknown)} in {where}")
    return data


def read_trial(path: str | Path, load_sway: bool = True) -> TrialRecord:
    """Parse and validate a trial file; inverse of :func:`write_trial`."""
    path = Path(path)
    records = []
    with open(path) as fh:
        for i, raw in enumerate(fh):
            raw = raw.strip()
            if not raw:
                continue
            try:
                records.append(json.loads(raw))
            except json.JSONDecodeError as exc:
                raise ValidationError(f"{path.name}: invalid JSON: {exc}", line=i + 1)
    if not records:
        raise ValidationError(f"{path.name}: empty trial file", line=1)
    head = records[0]
    if head.get("kind") != "header":
        raise ValidationError(f"{path.name}: first line must be the header", line=1,
                              field="kind")
    for name in ("trial_id", "dyad_id", "partner_realism", "musical_background",
                 "trial_count", "seed", "spec", "agents", "links"):
        if name not in head:
            raise ValidationError(f"{path.name}: header missing {name}", line=1,
                                  field=name)
    analysis = None
    events = []
    for i, obj in enumerate(records[1:], start=2):
        kind = obj.get("kind")
        if kind == "header":
            raise ValidationError(f"{path.name}: duplicate header", line=i, field="kind")
        if kind == "analysis":
            if i != len(records):
                raise ValidationError(f"{path.name}: analysis must be the last line",
                                      line=i, field="kind")
            analysis = {k: v for k, v in obj.items() if k != "kind"}
        else:
            events.append(obj)
    record = TrialRecord(
        trial_id=head["trial_id"],
        dyad_id=head["dyad_id"],
        partner_realism=head["partner_realism"],
        musical_background=head["musical_background"],
        trial_count=head["trial_count"],
        seed=head["seed"],
        spec=_spec_from_dict(head["spec"]),
        agents={
            role: AgentParams(**_checked(p, AgentParams, f"agents.{role}"))
            for role, p in head["agents"].items()
        },
        links={
            kind: LinkConfig(**_checked(c, LinkConfig, f"links.{kind}"))
            for kind, c in head["links"].items()
        },
        events=events,
        sway_files=head.get("sway_files", {}),
        warnings=head.get("warnings", {}),
        analysis=analysis,
    )
    validate_record(record)
    if load_sway:
        for role, ref in record.sway_files.items():
            sway_path = path.parent / ref["path"]
            if sway_path.exists():
                record.sway[role] = _read_sway(sway_path, ref["fs_hz"], ref["t0_ms"])
    return record


@dataclass(frozen=True)
class Condition:
    partner_realism: str
    musical_background: str
    seed: int | None = None
    trial_id: str | None = None

    def __post_init__(self):
        if self.partner_realism not in PARTNER_REALISM:
            raise ConfigError(f"partner_realism must be one of {PARTNER_REALISM}")
        if self.musical_background not in BACKGROUNDS:
            raise ConfigError(f"musical_background must be one of {BACKGROUNDS}")


def default_conditions() -> list[Condition]:
    """The full factorial grid: 3 partner-realism x 2 background cells."""
    return [
        Condition(realism, background)
        for realism in PARTNER_REALISM
        for background in BACKGROUNDS
    ]


@dataclass
class RunConfig:
    dyad_id: str = "dyad"
    seed: int = 0
    spec: RhythmSpec = field(default_factory=RhythmSpec)
    agents: dict[str, AgentParams] = field(default_factory=dict)
    links: dict[str, LinkConfig] = field(default_factory=dict)
    sway: SwayParams = field(default_factory=SwayParams)
    conditions: list[Condition] = field(default_factory=default_conditions)

    def __post_init__(self):
        if not self.agents:
            self.agents = {role: AgentParams(role=role) for role in ROLES}
        if not self.links:
            self.links = {
                "audio": LinkConfig.audio_default(),
                "visual": LinkConfig.visual_default(),
            }
        if set(self.agents) != set(ROLES):
            raise ConfigError(f"agents must cover roles {ROLES}")
        if not self.conditions:
            raise ConfigError("conditions must be non-empty")
        if len(self.conditions) > 6:
            raise ConfigError("at most 6 conditions per dyad (trial_count is 1..6)")


def load_run_config(path: str | Path) -> RunConfig:
    """Read and validate a JSON run configuration. Unknown keys are rejected."""
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}")
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: config root must be an object")
    _checked(data, RunConfig, "config")
    kwargs: dict = {}
    for name in ("dyad_id", "seed"):
        if name in data:
            kwargs[name] = data[name]
    if "spec" in data:
        kwargs["spec"] = _spec_from_dict(data["spec"])
    if "agents" in data:
        agents = {}
        for role, p in data["agents"].items():
            if role not in ROLES:
                raise ConfigError(f"unknown agent role {role!r}")
            p = dict(p)
            p.setdefault("role", role)
            if p["role"] != role:
                raise ConfigError(f"agent role {p['role']!r} under key {role!r}")
            agents[role] = AgentParams(**_checked(p, AgentParams, f"agents.{role}"))
        kwargs["agents"] = agents
    if "links" in data:
        links = {}
        for kind, c in data["links"].items():
            if kind not in ("audio", "visual"):
                raise ConfigError(f"unknown link kind {kind!r}")
            links[kind] = LinkConfig(**_checked(c, LinkConfig, f"links.{kind}"))
        kwargs["links"] = links
    if "sway" in data:
        sway = dict(data["sway"])
        sway.pop("seed", None)  # sway seeds always derive from the trial seed
        kwargs["sway"] = SwayParams(**_checked(sway, SwayParams, "sway"))
    if "conditions" in data:
        kwargs["conditions"] = [
            Condition(**_checked(c, Condition, f"conditions[{i}]"))
            for i, c in enumerate(data["conditions"])
        ]
    return RunConfig(**kwargs)


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        if value != value:  # nan exports as a null cell
            return ""
        return repr(value)
    return str(value)


def export_long_csv(records: list[TrialRecord], path: str | Path) -> Path:
    """One row per (trial, player) with analysis outcomes, RFC-4180 quoted."""
    rows = []
    for record in records:
        if record.analysis is None:
            raise ValidationError(
                f"trial {record.trial_id} has no analysis block; run analyze first"
            )
        pe = record.analysis["prediction_error"]
        qom_block = record.analysis["qom"]
        coh = record.analysis["band_coherence"]
        for task in ROLES:
            row = {
                "dyad": record.dyad_id,
                "player": f"{record.dyad_id}:{task}",
                "task": task,
                "partner_realism": record.partner_realism,
                "musical_background": record.musical_background,
                "trial_count": record.trial_count,
                "prediction_error_individual": pe[f"{task}_individual"],
                "prediction_error_joint": pe["joint"],
                "qom": qom_block[task],
                "coherence_pulse": None if coh is None else coh["pulse"],
                "coherence_binary_rhythm": None if coh is None else coh["binary_rhythm"],
                "coherence_ternary_rhythm": None if coh is None else coh["ternary_rhythm"],
                # Self-reports exist only for human subjects; exported empty.
                "relation_frequency": None,
                "relation_length": None,
                "percussion": None,
                "training": None,
                "engagement": None,
                "soi": None,
            }
            rows.append(row)
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _fmt(v) for k, v in row.items()})
    return path
