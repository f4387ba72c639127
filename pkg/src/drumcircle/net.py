"""Wire protocol and transport for tap/beat/transparency/clock traffic.

Messages use a compact fixed little-endian binary framing (16-byte header
plus a type-specific payload) rather than textual OSC, so framing is
bit-exact and fuzzable. The same message types flow through two paths: a
simulated link with configurable latency, jitter, loss and ordering, and a
plain UDP socket transport for live peers. Clock offset between peers is
estimated from PING/PONG exchanges with the usual four-timestamp formula.
"""

from __future__ import annotations

import math
import socket
import struct
from dataclasses import dataclass, field
from enum import IntEnum
from random import Random

from .errors import ConfigError, DataError, ProtocolError

MAGIC = 0x4443
VERSION = 1
HEADER = struct.Struct("<HBBIQ")  # magic, version, type, seq, send_ts_us
DEFAULT_PORT = 47474

ROLE_CODES = {"binary": 0, "ternary": 1}
ROLE_NAMES = {v: k for k, v in ROLE_CODES.items()}
LAYER_CODES = {"pulse_bell": 0, "bell_pattern": 1, "tactus_perc": 2}
LAYER_NAMES = {v: k for k, v in LAYER_CODES.items()}


class MsgType(IntEnum):
    HELLO = 0
    PING = 1
    PONG = 2
    TAP = 3
    BEAT = 4
    TRANSPARENCY = 5
    TRIAL_CTRL = 6


_PAYLOAD = {
    MsgType.HELLO: struct.Struct("<B"),          # role
    MsgType.PING: struct.Struct("<"),            # timestamps live in the header
    MsgType.PONG: struct.Struct("<QQ"),          # echoed t0, remote receive t1
    MsgType.TAP: struct.Struct("<BQB"),          # role, onset_us, velocity
    MsgType.BEAT: struct.Struct("<BQ"),          # layer, onset_us
    MsgType.TRANSPARENCY: struct.Struct("<B"),   # level
    MsgType.TRIAL_CTRL: struct.Struct("<BI"),    # start/stop, trial_id
}


@dataclass(frozen=True)
class Message:
    type: MsgType
    seq: int
    send_ts_us: int
    payload: tuple = ()

    @staticmethod
    def tap(seq: int, send_ts_us: int, role: str, onset_us: int, velocity: int = 100):
        return Message(MsgType.TAP, seq, send_ts_us, (ROLE_CODES[role], onset_us, velocity))

    @staticmethod
    def beat(seq: int, send_ts_us: int, layer: str, onset_us: int):
        return Message(MsgType.BEAT, seq, send_ts_us, (LAYER_CODES[layer], onset_us))


def encode_message(msg: Message) -> bytes:
    """Serialize a message; inverse of :func:`decode_message`."""
    try:
        payload_struct = _PAYLOAD[MsgType(msg.type)]
    except (KeyError, ValueError):
        raise ConfigError(f"unknown message type {msg.type!r}")
    header = HEADER.pack(MAGIC, VERSION, int(msg.type), msg.seq, msg.send_ts_us)
    try:
        return header + payload_struct.pack(*msg.payload)
    except struct.error as exc:
        raise ConfigError(f"payload does not fit message type {msg.type!r}: {exc}")


def decode_message(data: bytes) -> Message:
    """Parse a datagram. Any malformed input raises ProtocolError, never crashes."""
    if len(data) < HEADER.size:
        raise ProtocolError(f"truncated header: {len(data)} of {HEADER.size} bytes",
                            offset=len(data))
    magic, version, mtype, seq, send_ts = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise ProtocolError(f"bad magic 0x{magic:04x}", offset=0)
    if version != VERSION:
        raise ProtocolError(f"unsupported version {version}", offset=2)
    try:
        mtype = MsgType(mtype)
    except ValueError:
        raise ProtocolError(f"unknown message type {mtype}", offset=3)
    payload_struct = _PAYLOAD[mtype]
    body = data[HEADER.size:]
    if len(body) != payload_struct.size:
        raise ProtocolError(
            f"{mtype.name} payload is {len(body)} bytes, expected {payload_struct.size}",
            offset=HEADER.size,
        )
    payload = payload_struct.unpack(body)
    if mtype in (MsgType.HELLO, MsgType.TAP) and payload[0] not in ROLE_NAMES:
        raise ProtocolError(f"invalid role code {payload[0]}", offset=HEADER.size)
    if mtype is MsgType.BEAT and payload[0] not in LAYER_NAMES:
        raise ProtocolError(f"invalid layer code {payload[0]}", offset=HEADER.size)
    if mtype is MsgType.TRIAL_CTRL and payload[0] not in (0, 1):
        raise ProtocolError(f"invalid trial control action {payload[0]}", offset=HEADER.size)
    return Message(mtype, seq, send_ts, payload)


@dataclass(frozen=True)
class ClockSyncState:
    offset_us: float
    rtt_us: float
    sample_count: int = 1


def estimate_clock_offset(t0: int, t1: int, t2: int, t3: int) -> ClockSyncState:
    """Offset/RTT from one request-reply exchange.

    t0/t3 are local send/receive times, t1/t2 the remote receive/send times
    on the remote clock, all in microseconds.
    """
    if t3 < t0:
        raise DataError(f"local receive time {t3} precedes send time {t0}")
    if t2 < t1:
        raise DataError(f"remote send time {t2} precedes receive time {t1}")
    rtt = (t3 - t0) - (t2 - t1)
    if rtt < 0:
        raise DataError(f"negative round-trip time {rtt} us, measurement rejected")
    offset = ((t1 - t0) + (t2 - t3)) / 2.0
    return ClockSyncState(offset_us=offset, rtt_us=float(rtt))


def best_sync(samples: list[ClockSyncState]) -> ClockSyncState:
    """Pick the lowest-RTT exchange, the one least affected by queuing."""
    if not samples:
        raise DataError("no clock sync samples")
    best = min(samples, key=lambda s: s.rtt_us)
    return ClockSyncState(best.offset_us, best.rtt_us, sample_count=len(samples))


@dataclass(frozen=True)
class LinkConfig:
    latency_mean_ms: float = 0.0
    jitter_sd_ms: float = 0.0
    loss_p: float = 0.0
    allow_reorder: bool = False

    def __post_init__(self):
        if self.latency_mean_ms < 0 or self.jitter_sd_ms < 0:
            raise ConfigError("latency and jitter must be non-negative")
        if not 0.0 <= self.loss_p <= 1.0:
            raise ConfigError(f"loss_p must be in [0, 1], got {self.loss_p}")

    @staticmethod
    def audio_default() -> "LinkConfig":
        return LinkConfig(latency_mean_ms=17.0, jitter_sd_ms=2.0, loss_p=0.0)

    @staticmethod
    def visual_default() -> "LinkConfig":
        return LinkConfig(latency_mean_ms=58.0, jitter_sd_ms=4.0, loss_p=0.0)


def link_deliver(
    link: LinkConfig,
    now_ms: float,
    rng: Random,
    last_arrival_ms: float = -math.inf,
) -> float | None:
    """Schedule one message through a lossy, jittered link.

    Returns the arrival time or None when the message is dropped. Both the
    loss and latency draws always happen, keeping RNG consumption identical
    whatever the outcome. Negative latency samples clamp to zero.
    """
    dropped = rng.random() < link.loss_p
    latency = max(0.0, rng.gauss(link.latency_mean_ms, link.jitter_sd_ms))
    if dropped:
        return None
    arrival = now_ms + latency
    if not link.allow_reorder:
        arrival = max(arrival, last_arrival_ms)
    return arrival


class SimulatedLink:
    """One direction of a link; owns its RNG and in-order state."""

    def __init__(self, config: LinkConfig, rng: Random):
        self.config = config
        self.rng = rng
        self.last_arrival_ms = -math.inf
        self.dropped = 0

    def deliver(self, now_ms: float) -> float | None:
        arrival = link_deliver(self.config, now_ms, self.rng, self.last_arrival_ms)
        if arrival is None:
            self.dropped += 1
        else:
            self.last_arrival_ms = arrival
        return arrival


class UdpTransport:
    """Datagram transport speaking the binary framing above."""

    def __init__(self, bind_host: str = "0.0.0.0", bind_port: int = 0):
        self.sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        self.sock.bind((bind_host, bind_port))

    @property
    def address(self) -> tuple[str, int]:
        return self.sock.getsockname()

    def send(self, msg: Message, addr: tuple[str, int]) -> None:
        self.sock.sendto(encode_message(msg), addr)

    def recv(self, timeout_s: float | None = None) -> tuple[Message, tuple[str, int]] | None:
        """Receive one message, or None on timeout. Undecodable datagrams raise."""
        self.sock.settimeout(timeout_s)
        try:
            data, addr = self.sock.recvfrom(2048)
        except socket.timeout:
            return None
        return decode_message(data), addr

    def close(self) -> None:
        self.sock.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
