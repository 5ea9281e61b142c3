import json
import os
import subprocess
import sys


from ubsc.cli import main, parse_declared
from ubsc.corpus import corpus_dir
from ubsc.terms import Endpoint


def corpus(name):
    return os.path.join(corpus_dir(), name)


def run_cli(args, stdin_text=None, capsys=None):
    return main(args)


def test_parse_declared():
    d = parse_declared("*s:(1, end), s:(1, !int.end)")
    assert Endpoint("s", True) in d and d[Endpoint("s", True)][0] == 1


def test_check_ok(capsys):
    rc = main(["check", corpus("heartbeat_runtime1.ubsc")])
    out = capsys.readouterr().out
    assert rc == 0 and "Ok" in out


def test_check_with_context(capsys):
    rc = main(["check", corpus("heartbeat_runtime.ubsc"),
               "--context", "*s:(1, end), s:(1, end)"])
    assert rc == 0
    rc = main(["check", corpus("ok_rcv_uni.ubsc"), "--context", "s:(1, end)"])
    assert rc == 0


def test_check_error_network_fails(capsys):
    rc = main(["check", corpus("error_brc_bra.ubsc"),
               "--context", "*s:(0, !int.end), s:(0, ?int.end)"])
    out = capsys.readouterr().out
    assert rc == 1 and "Fail" in out


def test_check_derivation_dump(capsys):
    rc = main(["check", corpus("heartbeat_runtime1.ubsc"), "--derivation"])
    out = capsys.readouterr().out
    assert rc == 0 and "TSynch" in out and "TSRes" in out


def test_check_parse_error(tmp_path, capsys):
    f = tmp_path / "bad.ubsc"
    f.write_text("[ s!< ]")
    rc = main(["check", str(f)])
    assert rc == 2


def test_run_deterministic_traces(tmp_path, capsys):
    t1 = tmp_path / "a.jsonl"
    t2 = tmp_path / "b.jsonl"
    for t in (t1, t2):
        rc = main(["run", corpus("heartbeat_gather.ubsc"), "--seed", "5",
                   "--loss-rate", "0.2", "--recovery-bias", "0.1",
                   "--max-steps", "40", "--trace", str(t)])
        assert rc == 0
    assert t1.read_bytes() == t2.read_bytes()
    capsys.readouterr()


def test_run_with_check_and_safety(capsys):
    rc = main(["run", corpus("heartbeat_gather.ubsc"), "--seed", "1",
               "--loss-rate", "0", "--recovery-bias", "0", "--max-steps", "30",
               "--check", "--safety"])
    out = capsys.readouterr().out
    assert rc == 0 and "safety: ok" in out


def test_run_sweep(capsys):
    rc = main(["run", corpus("heartbeat_simple.ubsc"), "--sweep", "0..2",
               "--max-steps", "10"])
    out = capsys.readouterr().out
    assert rc == 0 and "[seed 2]" in out


def test_encode_recovery_roundtrip(capsys):
    rc = main(["encode-recovery", corpus("paxos_recover.ubsc")])
    out = capsys.readouterr().out
    assert rc == 0 and ">r" not in out
    # idempotent: encoding the encoded output changes nothing
    import tempfile
    with tempfile.NamedTemporaryFile("w", suffix=".ubsc", delete=False) as fh:
        fh.write(out)
        path = fh.name
    rc = main(["encode-recovery", path])
    out2 = capsys.readouterr().out
    assert rc == 0 and out2 == out
    os.unlink(path)


def test_replay_golden_script(capsys):
    from ubsc import corpus as cp
    case = [c for c in cp.corpus_programs() if c.name == "gather_chain"][0]
    rc = main(["replay", corpus(case.program), case.script_path()])
    out = capsys.readouterr().out
    assert rc == 0
    for i, d in enumerate(case.digests):
        assert f"step {i}: {d}" in out


def test_replay_trace_file(tmp_path, capsys):
    trace = tmp_path / "t.jsonl"
    rc = main(["run", corpus("heartbeat_gather.ubsc"), "--seed", "9",
               "--max-steps", "25", "--trace", str(trace)])
    capsys.readouterr()
    rc = main(["replay", corpus("heartbeat_gather.ubsc"), str(trace)])
    out = capsys.readouterr().out
    assert rc == 0 and "replay ok" in out


def test_stepper_drives_and_records(tmp_path, capsys, monkeypatch):
    script = tmp_path / "script.json"
    # choose the broadcast, deliver to node 1 only, then receive, then quit
    inputs = iter(["0", "1", "1", "q"])
    monkeypatch.setattr("builtins.input", lambda *a: next(inputs))
    rc = main(["step", corpus("heartbeat_simple.ubsc"), "--script", str(script)])
    out = capsys.readouterr().out
    assert rc == 0 and "Bcast" in out
    saved = json.loads(script.read_text())
    assert saved[0]["rule"] == "Bcast" and saved[0]["receivers"] == [1]
    # the saved script replays to the same digests
    rc = main(["replay", corpus("heartbeat_simple.ubsc"), str(script)])
    out2 = capsys.readouterr().out
    assert rc == 0


def test_stepper_undo(capsys, monkeypatch):
    inputs = iter(["0", "all", "u", "q"])
    monkeypatch.setattr("builtins.input", lambda *a: next(inputs))
    rc = main(["step", corpus("heartbeat_simple.ubsc")])
    assert rc == 0


def test_console_entry_point():
    out = subprocess.run([sys.executable, "-m", "ubsc.cli", "check",
                          corpus("heartbeat_runtime1.ubsc")],
                         capture_output=True, text=True)
    assert out.returncode == 0
