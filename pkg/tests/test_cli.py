from __future__ import annotations

import json
import threading
import time

import pytest

from drumcircle.cli import main
from drumcircle.net import Message, MsgType, UdpTransport
from drumcircle.trialio import read_trial


@pytest.fixture()
def short_config(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps({
        "dyad_id": "d1",
        "seed": 3,
        "spec": {"trial_duration_ms": 21_180.0},
        "agents": {
            "binary": {"motor_noise_sd_ms": 15.0},
            "ternary": {"motor_noise_sd_ms": 15.0},
        },
    }))
    return path


def test_simulate_six_conditions(short_config, tmp_path, capsys):
    out = tmp_path / "trials"
    assert main(["simulate", str(short_config), str(out)]) == 0
    files = sorted(out.glob("*.jsonl"))
    assert len(files) == 6
    labels = set()
    for f in files:
        record = read_trial(f)
        labels.add((record.partner_realism, record.musical_background))
    assert len(labels) == 6


def test_simulate_single_condition(tmp_path, capsys):
    config = tmp_path / "one.json"
    config.write_text(json.dumps({
        "spec": {"trial_duration_ms": 10_000.0},
        "conditions": [{"partner_realism": "real", "musical_background": "music"}],
    }))
    out = tmp_path / "trials"
    assert main(["simulate", str(config), str(out)]) == 0
    assert len(list(out.glob("*.jsonl"))) == 1


def test_simulate_deterministic_across_runs(short_config, tmp_path, capsys):
    out1, out2 = tmp_path / "r1", tmp_path / "r2"
    assert main(["simulate", str(short_config), str(out1)]) == 0
    assert main(["simulate", str(short_config), str(out2)]) == 0
    files1 = sorted(p.name for p in out1.iterdir())
    files2 = sorted(p.name for p in out2.iterdir())
    assert files1 == files2
    for name in files1:
        assert (out1 / name).read_bytes() == (out2 / name).read_bytes()


def test_invalid_config_exits_2(tmp_path, capsys):
    config = tmp_path / "bad.json"
    config.write_text(json.dumps({"agents": {"binary": {"alpha": 2.0}}}))
    assert main(["simulate", str(config), str(tmp_path / "out")]) == 2
    assert "error:" in capsys.readouterr().err


def test_usage_error_exits_1(capsys):
    assert main(["simulate"]) == 1
    assert main(["frobnicate"]) == 1


def test_analyze_and_export_pipeline(short_config, tmp_path, capsys):
    trials = tmp_path / "trials"
    analyzed = tmp_path / "analyzed"
    main(["simulate", str(short_config), str(trials)])
    assert main(["analyze", str(trials), str(analyzed)]) == 0
    records = [read_trial(p) for p in sorted(analyzed.glob("*.jsonl"))]
    assert all(r.analysis is not None for r in records)
    for r in records:
        pe = r.analysis["prediction_error"]
        assert pe["joint"] is not None and pe["joint"] >= 0.0

    # Idempotent: analysing the analysed directory reproduces itself.
    again = tmp_path / "again"
    assert main(["analyze", str(analyzed), str(again)]) == 0
    for p in sorted(analyzed.glob("*")):
        assert (again / p.name).read_bytes() == p.read_bytes()

    csv_path = tmp_path / "long.csv"
    assert main(["export", str(analyzed), str(csv_path)]) == 0
    text = csv_path.read_text().splitlines()
    assert len(text) == 1 + 12  # header + 6 trials x 2 players


def test_analyze_skips_corrupt_files(short_config, tmp_path, capsys):
    trials = tmp_path / "trials"
    main(["simulate", str(short_config), str(trials)])
    (trials / "broken.jsonl").write_text("{\"kind\": \"tap\"}\n")
    out = tmp_path / "analyzed"
    capsys.readouterr()
    assert main(["analyze", str(trials), str(out), "--json"]) == 0
    report = json.loads(capsys.readouterr().out)
    assert "broken.jsonl" in report["failures"]
    assert len(report["analyzed"]) == 6


def test_analyze_all_corrupt_exits_2(tmp_path, capsys):
    trials = tmp_path / "trials"
    trials.mkdir()
    (trials / "broken.jsonl").write_text("nope\n")
    assert main(["analyze", str(trials), str(tmp_path / "out")]) == 2


def test_export_unanalyzed_exits_2(short_config, tmp_path, capsys):
    trials = tmp_path / "trials"
    main(["simulate", str(short_config), str(trials)])
    assert main(["export", str(trials), str(tmp_path / "x.csv")]) == 2


def test_netbench_sim_report_and_json(capsys):
    assert main(["netbench", "--count", "2000", "--latency", "17", "--jitter", "2",
                 "--loss", "0", "--json"]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["mode"] == "sim"
    assert report["loss_rate"] == 0.0
    assert abs(report["latency_mean_ms"] - 17.0) < 0.2
    assert abs(report["latency_sd_ms"] - 2.0) < 0.2

    assert main(["netbench", "--count", "500", "--loss", "1.0", "--json"]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["loss_rate"] == 1.0
    assert report["latency_mean_ms"] is None


def test_netbench_json_matches_human_output(capsys):
    args = ["netbench", "--count", "300", "--seed", "9"]
    assert main(args + ["--json"]) == 0
    as_json = json.loads(capsys.readouterr().out)
    assert main(args) == 0
    human = capsys.readouterr().out
    for key, value in as_json.items():
        assert key in human
        if isinstance(value, float):
            assert f"{value:.6g}" in human


def _reflector(transport, stop):
    while not stop.is_set():
        got = transport.recv(timeout_s=0.05)
        if got is None:
            continue
        msg, addr = got
        if msg.type is MsgType.PING:
            t1 = time.perf_counter_ns() // 1000
            transport.send(Message(MsgType.PONG, msg.seq, t1, (msg.send_ts_us, t1)),
                           addr)


def test_netbench_real_loopback(capsys):
    transport = UdpTransport("127.0.0.1", 0)
    stop = threading.Event()
    thread = threading.Thread(target=_reflector, args=(transport, stop), daemon=True)
    thread.start()
    try:
        host, port = transport.address
        code = main(["netbench", "--remote", f"{host}:{port}", "--count", "50",
                     "--json"])
    finally:
        stop.set()
        thread.join(timeout=2)
        transport.close()
    assert code == 0
    report = json.loads(capsys.readouterr().out)
    assert report["loss_rate"] == 0.0
    assert abs(report["offset_us"]) <= report["rtt_us"] / 2 + 1


def test_netbench_unreachable_peer_exits_2(capsys):
    sink = UdpTransport("127.0.0.1", 0)
    try:
        code = main(["netbench", "--remote",
                     f"127.0.0.1:{sink.address[1]}", "--count", "3",
                     "--timeout", "0.1"])
    finally:
        sink.close()
    assert code == 2
