"""Trial execution: a single event loop in virtual or real time.

The loop owns all task state: it fires agent taps, routes them to the
partner through the audio and visual links, evaluates each pulse cycle,
steps the stimulus transparency and collects the event log into a trial
record. In virtual-time mode everything is driven from an event heap with
deterministic ordering, so a seed fully determines the trial and runs much
faster than real time. In real-time mode the same task logic is paced by
the wall clock and one endpoint may be a remote peer speaking the UDP
protocol; remote tap timestamps are rebased with the clock offset measured
during the handshake.
"""

from __future__ import annotations

import hashlib
import heapq
import time
from dataclasses import dataclass, replace
from random import Random

from .agents import AgentParams, SwayParams, TapAgent, synthesize_sway
from .errors import ConfigError, SessionError
from .net import (
    LinkConfig,
    Message,
    MsgType,
    SimulatedLink,
    UdpTransport,
    best_sync,
    estimate_clock_offset,
)
from .rhythm import (
    ROLES,
    Background,
    RhythmSpec,
    TapEvent,
    TransparencyState,
    backing_track_schedule,
    build_instruction_grid,
    evaluate_cycle,
    update_transparency,
)
from .trialio import TrialRecord

HANDSHAKE_TIMEOUT_S = 2.0
PEER_SILENCE_TIMEOUT_S = 2.0
# Real-time cycle judgement waits this long past the cycle boundary so
# in-flight remote taps can still be counted.
CYCLE_GRACE_MS = 250.0

_EVENT_RANK = {"beat": 0, "tap": 1, "tap_seen": 2, "transparency": 3}


def derive_seed(base: int, *labels: object) -> int:
    """Stable per-stream seed so RNG consumption order never couples streams."""
    text = f"{base}|" + "|".join(str(x) for x in labels)
    digest = hashlib.sha256(text.encode()).digest()
    return int.from_bytes(digest[:8], "little")


@dataclass(frozen=True)
class TrialMeta:
    trial_id: str = "trial"
    dyad_id: str = "dyad"
    partner_realism: str = "not_seeing"   # not_seeing | avatar | real
    trial_count: int = 1


@dataclass(frozen=True)
class AgentEndpoint:
    params: AgentParams


@dataclass(frozen=True)
class UdpRemoteEndpoint:
    role: str
    host: str
    port: int


def _event_sort_key(ev: dict):
    return (ev["t_ms"], _EVENT_RANK.get(ev["kind"], 9), ev.get("player", ""),
            ev.get("source", ""), ev.get("seq", 0))


def run_session(
    spec: RhythmSpec,
    endpoints: tuple,
    links: dict | None = None,
    mode: str = "virtual_time",
    background: str | Background = "metronome",
    seed: int = 0,
    meta: TrialMeta | dict | None = None,
    sway: SwayParams | None = None,
    local_port: int = 0,
) -> TrialRecord:
    """Run one trial and return its record (analysis left to the pipeline)."""
    if len(endpoints) != 2:
        raise ConfigError("a session needs exactly two endpoints")
    if links is None:
        links = {"audio": LinkConfig.audio_default(), "visual": LinkConfig.visual_default()}
    if set(links) != {"audio", "visual"}:
        raise ConfigError("links must provide exactly 'audio' and 'visual'")
    if isinstance(meta, dict):
        meta = TrialMeta(**meta)
    meta = meta or TrialMeta()
    background = Background(background)
    roles = [
        ep.params.role if isinstance(ep, AgentEndpoint) else ep.role for ep in endpoints
    ]
    if sorted(roles) != sorted(ROLES):
        raise ConfigError(f"endpoints must cover roles {ROLES}, got {roles}")
    if mode == "virtual_time":
        if not all(isinstance(ep, AgentEndpoint) for ep in endpoints):
            raise ConfigError("virtual_time sessions require two agent endpoints")
        return _VirtualSession(spec, endpoints, links, background, seed, meta, sway).run()
    if mode == "real_time":
        n_remote = sum(isinstance(ep, UdpRemoteEndpoint) for ep in endpoints)
        if n_remote > 1:
            raise ConfigError("a real-time session hosts at least one local agent")
        return _RealTimeSession(
            spec, endpoints, links, background, seed, meta, sway, local_port
        ).run()
    raise ConfigError(f"unknown session mode {mode!r}")


class _SessionCore:
    """Task state shared by both loop flavours."""

    def __init__(self, spec, endpoints, links, background, seed, meta, sway):
        self.spec = spec
        self.links_cfg = links
        self.background = background
        self.seed = seed
        self.meta = meta
        self.sway_params = sway or SwayParams()
        self.grid = build_instruction_grid(spec)
        self.events: list[dict] = []
        self.cycle_taps: dict[int, list[TapEvent]] = {}
        self.transparency = TransparencyState(0)
        self.warnings: dict = {}
        self.agents: dict[str, TapAgent] = {}
        self.agent_params: dict[str, AgentParams] = {}
        for ep in endpoints:
            if isinstance(ep, AgentEndpoint):
                rng = Random(derive_seed(seed, "agent", ep.params.role))
                self.agents[ep.params.role] = TapAgent(ep.params, spec, rng)
                self.agent_params[ep.params.role] = ep.params

    def log(self, kind: str, t_ms: float, **fields) -> None:
        self.events.append({"kind": kind, "t_ms": t_ms, **fields})

    def log_beats(self) -> None:
        for t, layer in backing_track_schedule(self.spec, self.background).onsets:
            self.log("beat", t, layer=layer)

    def record_tap(self, tap: TapEvent) -> None:
        self.log("tap", tap.onset_ms, player=tap.player, source=tap.source,
                 seq=tap.seq, velocity=tap.velocity)
        if tap.onset_ms < self.spec.trial_duration_ms:
            k = int(tap.onset_ms // self.spec.pulse_ms)
            self.cycle_taps.setdefault(k, []).append(tap)

    def judge_cycle(self, k: int) -> None:
        outcome = evaluate_cycle(self.cycle_taps.pop(k, []), self.grid, self.spec, k)
        new = update_transparency(self.transparency, outcome, self.spec)
        if new.level != self.transparency.level:
            self.log("transparency", (k + 1) * self.spec.pulse_ms, level=new.level)
        self.transparency = new

    def finish(self) -> TrialRecord:
        self.events.sort(key=_event_sort_key)
        sway_series = {}
        for role, agent in self.agents.items():
            taps = [
                TapEvent(e["player"], e["t_ms"], e["source"], e["seq"])
                for e in self.events
                if e["kind"] == "tap" and e["source"] == "agent" and e["player"] == role
            ]
            params = replace(self.sway_params, seed=derive_seed(self.seed, "sway", role))
            sway_series[role] = synthesize_sway(taps, self.spec, role, params)
        return TrialRecord(
            trial_id=self.meta.trial_id,
            dyad_id=self.meta.dyad_id,
            partner_realism=self.meta.partner_realism,
            musical_background=self.background.value,
            trial_count=self.meta.trial_count,
            seed=self.seed,
            spec=self.spec,
            agents=dict(sorted(self.agent_params.items())),
            links=self.links_cfg,
            events=self.events,
            sway=sway_series,
            warnings=self.warnings,
        )


class _VirtualSession(_SessionCore):
    # Heap priorities at equal times: produce a tap before anyone hears it.
    TAP, HEAR, SEEN = 0, 1, 2

    def __init__(self, spec, endpoints, links, background, seed, meta, sway):
        super().__init__(spec, endpoints, links, background, seed, meta, sway)
        self.heap: list = []
        self.counter = 0
        self.sim_links = {
            (kind, src): SimulatedLink(links[kind], Random(derive_seed(seed, "link", kind, src)))
            for kind in ("audio", "visual")
            for src in ROLES
        }
        self.late = 0

    def push(self, t_ms: float, prio: int, payload: tuple) -> None:
        heapq.heappush(self.heap, (t_ms, prio, self.counter, payload))
        self.counter += 1

    def run(self) -> TrialRecord:
        self.log("transparency", 0.0, level=0)
        self.log_beats()
        for role in sorted(self.agents):
            self.push(self.agents[role].state.next_onset_ms, self.TAP, ("tap", role))
        end = self.spec.trial_duration_ms
        while self.heap:
            t, prio, _, payload = heapq.heappop(self.heap)
            if payload[0] == "tap":
                role = payload[1]
                agent = self.agents[role]
                tap = agent.plan_next_tap()
                self.record_tap(tap)
                self._route(tap)
                if agent.state.next_onset_ms <= end:
                    self.push(agent.state.next_onset_ms, self.TAP, ("tap", role))
            elif payload[0] == "hear":
                _, dest, origin, onset_ms, seq = payload
                self.agents[dest].hear_partner(onset_ms)
                self.log("tap", t, player=origin, source="remote", seq=seq)
            else:  # "seen"
                _, dest, origin, onset_ms, seq = payload
                self.log("tap_seen", t, player=origin, seq=seq)
        # Transparency never feeds back into the agents, so complete cycles
        # can be judged once the tap log is final.
        for k in range(self.spec.n_cycles):
            self.judge_cycle(k)
        if self.late:
            self.warnings["late_deliveries"] = self.late
        return self.finish()

    def _route(self, tap: TapEvent) -> None:
        dest = "ternary" if tap.player == "binary" else "binary"
        end = self.spec.trial_duration_ms
        for kind, prio, event in (("audio", self.HEAR, "hear"), ("visual", self.SEEN, "seen")):
            arrival = self.sim_links[(kind, tap.player)].deliver(tap.onset_ms)
            if arrival is None:
                continue
            if arrival > end:
                self.late += 1
                continue
            self.push(arrival, prio, (event, dest, tap.player, tap.onset_ms, tap.seq))


class _RealTimeSession(_SessionCore):
    """Wall-clock loop; at most one endpoint is a remote UDP peer."""

    def __init__(self, spec, endpoints, links, background, seed, meta, sway, local_port):
        super().__init__(spec, endpoints, links, background, seed, meta, sway)
        self.remote = next(
            (ep for ep in endpoints if isinstance(ep, UdpRemoteEndpoint)), None
        )
        self.transport = UdpTransport("0.0.0.0", local_port) if self.remote else None
        self.offset_us = 0.0
        self.seq = 0
        self.sim_links = {
            (kind, src): SimulatedLink(links[kind], Random(derive_seed(seed, "link", kind, src)))
            for kind in ("audio", "visual")
            for src in ROLES
        }
        self.t0 = None

    def now_ms(self) -> float:
        return (time.perf_counter() - self.t0) * 1000.0

    def now_us(self) -> int:
        return int(self.now_ms() * 1000.0)

    def _send(self, msg: Message) -> None:
        self.transport.send(msg, (self.remote.host, self.remote.port))

    def _next_msg(self, timeout_s: float):
        try:
            return self.transport.recv(timeout_s)
        except Exception:
            return None  # undecodable datagrams are ignored on the live path

    def _handshake(self) -> None:
        from .net import ROLE_CODES

        local_role = next(iter(self.agents))
        deadline = time.monotonic() + HANDSHAKE_TIMEOUT_S
        said_hello = False
        while time.monotonic() < deadline:
            self._send(Message(MsgType.HELLO, 0, 0, (ROLE_CODES[local_role],)))
            got = self._next_msg(0.1)
            if got and got[0].type is MsgType.HELLO:
                said_hello = True
                break
        if not said_hello:
            raise SessionError(
                f"no HELLO from {self.remote.host}:{self.remote.port} within "
                f"{HANDSHAKE_TIMEOUT_S} s"
            )
        samples = []
        for i in range(5):
            t0 = time.perf_counter_ns() // 1000
            self._send(Message(MsgType.PING, i, t0))
            got = self._next_msg(0.5)
            if got and got[0].type is MsgType.PONG:
                t3 = time.perf_counter_ns() // 1000
                echo_t0, t1 = got[0].payload
                try:
                    samples.append(estimate_clock_offset(echo_t0, t1, got[0].send_ts_us, t3))
                except Exception:
                    pass
        if samples:
            self.offset_us = best_sync(samples).offset_us

    def run(self) -> TrialRecord:
        if self.remote:
            self._handshake()
        self.t0 = time.perf_counter()
        self.log("transparency", 0.0, level=0)
        self.log_beats()
        if self.remote:
            self._send(Message(MsgType.TRIAL_CTRL, self.seq, self.now_us(), (1, 1)))
            self.seq += 1
        end = self.spec.trial_duration_ms
        heap: list = []
        counter = 0
        for role in sorted(self.agents):
            heapq.heappush(heap, (self.agents[role].state.next_onset_ms, counter, role))
            counter += 1
        judged = 0
        last_heard = time.monotonic()
        aborted = None
        while True:
            now = self.now_ms()
            next_due = heap[0][0] if heap else end
            cycle_due = (judged + 1) * self.spec.pulse_ms + CYCLE_GRACE_MS
            wake = min(next_due, cycle_due if judged < self.spec.n_cycles else end, end)
            if self.remote:
                got = self._next_msg(max(0.0, (wake - now) / 1000.0))
                if got:
                    last_heard = time.monotonic()
                    self._on_message(got[0])
                elif time.monotonic() - last_heard > PEER_SILENCE_TIMEOUT_S:
                    aborted = "peer silent"
                    break
            else:
                time.sleep(max(0.0, (wake - now) / 1000.0))
            now = self.now_ms()
            while heap and heap[0][0] <= now:
                _, _, role = heapq.heappop(heap)
                tap = self.agents[role].plan_next_tap()
                self.record_tap(tap)
                self._route_realtime(tap, now)
                if self.agents[role].state.next_onset_ms <= end:
                    heapq.heappush(
                        heap, (self.agents[role].state.next_onset_ms, counter, role)
                    )
                    counter += 1
            while judged < self.spec.n_cycles and now >= (judged + 1) * self.spec.pulse_ms + CYCLE_GRACE_MS:
                level_before = self.transparency.level
                self.judge_cycle(judged)
                if self.remote and self.transparency.level != level_before:
                    self._send(Message(MsgType.TRANSPARENCY, self.seq, self.now_us(),
                                       (self.transparency.level,)))
                    self.seq += 1
                judged += 1
            if now >= end and not heap:
                break
        while judged < self.spec.n_cycles:
            self.judge_cycle(judged)
            judged += 1
        if self.remote:
            self._send(Message(MsgType.TRIAL_CTRL, self.seq, self.now_us(), (0, 1)))
            self.transport.close()
        if aborted:
            self.warnings["aborted"] = aborted
        record = self.finish()
        return record

    def _on_message(self, msg: Message) -> None:
        from .net import ROLE_NAMES

        if msg.type is MsgType.PING:
            # Keep answering pings so the peer can track the offset mid-trial.
            t1 = time.perf_counter_ns() // 1000
            self._send(Message(MsgType.PONG, msg.seq, time.perf_counter_ns() // 1000,
                               (msg.send_ts_us, t1)))
        elif msg.type is MsgType.TAP:
            role_code, onset_us, velocity = msg.payload
            role = ROLE_NAMES[role_code]
            if role in self.agents:
                return  # a peer may not tap for the locally hosted player
            onset_ms = (onset_us - self.offset_us) / 1000.0
            tap = TapEvent(role, onset_ms, source="remote", seq=msg.seq,
                           velocity=velocity)
            if 0.0 <= onset_ms <= self.spec.trial_duration_ms:
                self.record_tap(tap)
            for agent in self.agents.values():
                agent.hear_partner(onset_ms)

    def _route_realtime(self, tap: TapEvent, now: float) -> None:
        if self.remote:
            self._send(Message.tap(tap.seq, self.now_us(), tap.player,
                                   int(round(tap.onset_ms * 1000.0)), tap.velocity))
            return
        # Two local agents: hearing still goes through the simulated links.
        dest = "ternary" if tap.player == "binary" else "binary"
        arrival = self.sim_links[("audio", tap.player)].deliver(tap.onset_ms)
        if arrival is not None and arrival <= self.spec.trial_duration_ms:
            self.agents[dest].hear_partner(tap.onset_ms)
            self.log("tap", arrival, player=tap.player, source="remote", seq=tap.seq)
