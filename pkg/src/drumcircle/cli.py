"""Command-line entry point: simulate, analyze, export, netbench.

Exit codes: 0 on success, 1 on usage errors, 2 on data or validation
errors. Set DRUMCIRCLE_LOG=debug for verbose logging. Every subcommand
accepts --json for a machine-readable report carrying the same values as
the human-readable output.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import statistics
import sys
import time
from pathlib import Path
from random import Random

from .analysis import analyze_directory
from .errors import ConfigError, DataError, DrumCircleError, SessionError
from .net import (
    DEFAULT_PORT,
    LinkConfig,
    Message,
    MsgType,
    UdpTransport,
    best_sync,
    estimate_clock_offset,
    link_deliver,
)
from .session import TrialMeta, derive_seed
from .agents import simulate_dyad
from .trialio import export_long_csv, load_run_config, read_trial, write_trial

log = logging.getLogger("drumcircle")

USAGE_EXIT = 1
DATA_EXIT = 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise _UsageError(message)


class _UsageError(Exception):
    pass


def build_parser() -> _Parser:
    parser = _Parser(prog="drumcircle", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run the configured trials with agent players")
    p.add_argument("config", help="JSON run configuration")
    p.add_argument("out_dir", help="directory for trial logs")
    p.add_argument("--json", action="store_true", help="machine-readable summary")

    p = sub.add_parser("analyze", help="add analysis blocks to trial logs")
    p.add_argument("in_dir")
    p.add_argument("out_dir")
    p.add_argument("--json", action="store_true")

    p = sub.add_parser("export", help="flatten analysed trials into long-format CSV")
    p.add_argument("in_dir")
    p.add_argument("csv_path")
    p.add_argument("--json", action="store_true")

    p = sub.add_parser("netbench", help="measure a link, simulated or over UDP")
    p.add_argument("--remote", metavar="HOST:PORT", help="benchmark against a live peer")
    p.add_argument("--serve", action="store_true", help="run a reflector instead")
    p.add_argument("--port", type=int, default=DEFAULT_PORT, help="local UDP port")
    p.add_argument("--count", type=int, default=1000)
    p.add_argument("--loss", type=float, default=0.0, help="simulated loss probability")
    p.add_argument("--latency", type=float, default=17.0, help="simulated mean, ms")
    p.add_argument("--jitter", type=float, default=2.0, help="simulated SD, ms")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--timeout", type=float, default=0.5, help="per-ping timeout, s")
    p.add_argument("--json", action="store_true")
    return parser


def cmd_simulate(args) -> dict:
    config = load_run_config(args.config)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    files = []
    for i, cond in enumerate(config.conditions):
        trial_count = i + 1
        seed = cond.seed if cond.seed is not None else derive_seed(
            config.seed, "trial", trial_count
        )
        trial_id = cond.trial_id or (
            f"{config.dyad_id}_t{trial_count}_{cond.partner_realism}_"
            f"{cond.musical_background}"
        )
        meta = TrialMeta(
            trial_id=trial_id,
            dyad_id=config.dyad_id,
            partner_realism=cond.partner_realism,
            trial_count=trial_count,
        )
        record = simulate_dyad(
            config.spec,
            config.agents["binary"],
            config.agents["ternary"],
            link_config=config.links,
            background=cond.musical_background,
            seed=seed,
            meta=meta,
            sway=config.sway,
        )
        files.append(str(write_trial(record, out_dir / f"{trial_id}.jsonl")))
        log.info("wrote %s", files[-1])
    return {"trials": len(files), "files": files}


def cmd_analyze(args) -> dict:
    written, failures = analyze_directory(args.in_dir, args.out_dir)
    report = {
        "analyzed": [str(p) for p in written],
        "failures": failures,
    }
    if failures and not written:
        raise DataError(f"all trial logs failed analysis: {failures}")
    return report


def cmd_export(args) -> dict:
    in_dir = Path(args.in_dir)
    records = [read_trial(p) for p in sorted(in_dir.glob("*.jsonl"))]
    if not records:
        raise DataError(f"no trial logs under {in_dir}")
    path = export_long_csv(records, args.csv_path)
    return {"csv": str(path), "trials": len(records), "rows": 2 * len(records)}


def _serve(args) -> dict:
    served = 0
    with UdpTransport("0.0.0.0", args.port) as transport:
        log.info("reflector listening on %s", transport.address)
        while served < args.count:
            got = transport.recv(timeout_s=None)
            if got is None:
                continue
            msg, addr = got
            t1 = time.perf_counter_ns() // 1000
            if msg.type is MsgType.PING:
                transport.send(
                    Message(MsgType.PONG, msg.seq, time.perf_counter_ns() // 1000,
                            (msg.send_ts_us, t1)),
                    addr,
                )
                served += 1
            elif msg.type is MsgType.HELLO:
                transport.send(msg, addr)
    return {"served": served}


def _bench_sim(args) -> dict:
    link = LinkConfig(latency_mean_ms=args.latency, jitter_sd_ms=args.jitter,
                      loss_p=args.loss, allow_reorder=True)
    rng = Random(derive_seed(args.seed, "netbench", "latency"))
    latencies = []
    dropped = 0
    for _ in range(args.count):
        arrival = link_deliver(link, 0.0, rng)
        if arrival is None:
            dropped += 1
        else:
            latencies.append(arrival)
    rng2 = Random(derive_seed(args.seed, "netbench", "sync"))
    estimates = []
    for _ in range(min(args.count, 100)):
        d1 = link_deliver(link, 0.0, rng2)
        d2 = link_deliver(link, 0.0, rng2)
        if d1 is None or d2 is None:
            continue
        t0 = 0
        t1 = int(d1 * 1000)
        t2 = t1
        t3 = t2 + int(d2 * 1000)
        estimates.append(estimate_clock_offset(t0, t1, t2, t3).offset_us)
    return {
        "mode": "sim",
        "count": args.count,
        "delivered": len(latencies),
        "loss_rate": dropped / args.count if args.count else 0.0,
        "latency_mean_ms": statistics.fmean(latencies) if latencies else None,
        "latency_sd_ms": statistics.stdev(latencies) if len(latencies) > 1 else 0.0,
        "offset_us": statistics.fmean(estimates) if estimates else None,
    }


def _bench_real(args) -> dict:
    host, _, port = args.remote.partition(":")
    addr = (host, int(port) if port else DEFAULT_PORT)
    rtts_us = []
    samples = []
    lost = 0
    with UdpTransport() as transport:
        for i in range(args.count):
            t0 = time.perf_counter_ns() // 1000
            transport.send(Message(MsgType.PING, i, t0), addr)
            got = transport.recv(timeout_s=args.timeout)
            if got is None or got[0].type is not MsgType.PONG:
                lost += 1
                continue
            t3 = time.perf_counter_ns() // 1000
            echo_t0, t1 = got[0].payload
            try:
                sync = estimate_clock_offset(echo_t0, t1, got[0].send_ts_us, t3)
            except DataError:
                lost += 1
                continue
            rtts_us.append(t3 - t0)
            samples.append(sync)
    if not samples:
        raise SessionError(f"no replies from {addr[0]}:{addr[1]}")
    best = best_sync(samples)
    return {
        "mode": "real",
        "remote": f"{addr[0]}:{addr[1]}",
        "count": args.count,
        "delivered": len(samples),
        "loss_rate": lost / args.count if args.count else 0.0,
        "latency_mean_ms": statistics.fmean(rtts_us) / 2000.0,
        "latency_sd_ms": (statistics.stdev(rtts_us) / 2000.0 if len(rtts_us) > 1 else 0.0),
        "offset_us": best.offset_us,
        "rtt_us": best.rtt_us,
    }


def cmd_netbench(args) -> dict:
    if args.serve:
        return _serve(args)
    if args.remote:
        return _bench_real(args)
    return _bench_sim(args)


def _print_report(report: dict, as_json: bool) -> None:
    if as_json:
        print(json.dumps(report, indent=2))
        return
    for key, value in report.items():
        if isinstance(value, float):
            print(f"{key}: {value:.6g}")
        elif isinstance(value, list):
            print(f"{key}: {len(value)} item(s)")
            for item in value:
                print(f"  {item}")
        elif isinstance(value, dict):
            print(f"{key}:")
            for k, v in value.items():
                print(f"  {k}: {v}")
        else:
            print(f"{key}: {value}")


def main(argv: list[str] | None = None) -> int:
    level = os.environ.get("DRUMCIRCLE_LOG", "warning").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_EXIT
    handlers = {
        "simulate": cmd_simulate,
        "analyze": cmd_analyze,
        "export": cmd_export,
        "netbench": cmd_netbench,
    }
    try:
        report = handlers[args.command](args)
    except (DrumCircleError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DATA_EXIT
    _print_report(report, args.json)
    return 0


if __name__ == "__main__":
    sys.exit(main())
