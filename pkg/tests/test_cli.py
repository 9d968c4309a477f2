import hashlib
import json
import subprocess
import sys

import pytest

from garbled_maxout.cli import main

GROUP = ["--ot-group", "qr61-insecure"]


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.fixture
def bundles(tmp_path, capsys):
    d = tmp_path / "bundles"
    code, out, _ = run(capsys, "setup", "--fixture", "paper-p8", "--out", d, "--seed", 1, *GROUP)
    assert code == 0, out
    return d


def test_setup_reports_limits(bundles, capsys):
    assert sorted(p.name for p in bundles.iterdir()) == ["party1.shares", "party2.shares", "session.json"]
    code, out, _ = run(capsys, "setup", "--fixture", "paper-p8", "--out", bundles.parent / "again", "--seed", 1, *GROUP)
    assert code == 0
    assert "s3_max=2161.48" in out and "eta=1000" in out and "delta=0.5005" in out
    assert "circuit mode: safe_sign" in out
    assert (bundles.parent / "again" / "party1.shares").read_bytes() == (bundles / "party1.shares").read_bytes()


def test_setup_failures(tmp_path, capsys):
    code, out, _ = run(capsys, "setup", "--fixture", "paper-p8", "--out", tmp_path / "x", "--s1", 40)
    assert code == 1 and "exceeds s3_max" in out and "VIOLATED" in out
    assert not (tmp_path / "x").exists()
    code, _, err = run(capsys, "setup", "--network", tmp_path / "missing.json", "--out", tmp_path / "x")
    assert code == 2 and "does not exist" in err
    code, out, _ = run(capsys, "setup", "--fixture", "paper-p8", "--out", tmp_path / "x", "--delta-cap", 0.01)
    assert code == 1 and "exceeds the cap" in out


def test_setup_from_network_file(tmp_path, capsys):
    doc = {"K": [[0.5, 0.0], [0.0, 0.5]], "L": [[0.0, 0.0], [0.0, 0.0]], "b": [0.0, 0.0], "c": [0.0, 0.0],
           "s1": 10, "s2": 10, "l": 12, "box": [2.0, 2.0]}
    (tmp_path / "net.json").write_text(json.dumps(doc))
    code, out, _ = run(capsys, "setup", "--network", tmp_path / "net.json", "--out", tmp_path / "b", "--seed", 0, *GROUP)
    assert code == 0 and "p=2 n=2 l=12" in out and "circuit mode: paper_exact" in out
    code, out, _ = run(capsys, "step", "--bundles", tmp_path / "b", "--x", "1,-2")
    assert code == 0 and float(out) == 0.5


def test_step(bundles, capsys, tmp_path):
    code, out, _ = run(capsys, "step", "--bundles", bundles, "--x", "0,0", "--transcript", tmp_path / "t.txt")
    assert code == 0 and float(out) == 4.2
    lines = (tmp_path / "t.txt").read_text().splitlines()
    assert lines[0].startswith("sensor send alpha STATE_SHARE 0 ")
    code, _, err = run(capsys, "step", "--bundles", bundles, "--x", "30,0")
    assert code == 2 and "outside the declared domain" in err
    code, _, err = run(capsys, "step", "--bundles", tmp_path, "--x", "0,0")
    assert code == 2


def test_run_is_reproducible(tmp_path, capsys):
    paths = []
    for seed in (1, 2):
        path = tmp_path / f"trace{seed}.csv"
        code, out, _ = run(capsys, "run", "--fixture", "saturated", *GROUP, "--steps", 12, "--seed", seed, "--out", path)
        assert code == 0 and "plaintext mismatches 0" in out
        paths.append(path)
    assert paths[0].read_bytes() == paths[1].read_bytes()
    assert paths[0].read_text().splitlines()[:2] == ["k,x1,x2,u", "0,5.0,0.0,-1.0"]


def test_run_transcript_always(tmp_path, capsys):
    code, _, _ = run(capsys, "run", "--fixture", "saturated", *GROUP, "--steps", 2, "--out", tmp_path / "t.csv",
                     "--transcript", tmp_path / "frames.txt", "--transcript-always")
    assert code == 0
    assert "MASKED_RESULT 1 " in (tmp_path / "frames.txt").read_text()


def test_bench(capsys):
    code, out, _ = run(capsys, "bench", "--fixture", "saturated", *GROUP, "--steps", 3)
    assert code == 0 and out.splitlines()[1].startswith("mean ")


def test_verify(capsys):
    code, out, _ = run(capsys, "verify")
    assert code == 0 and out.splitlines()[-1] == "8/8 checks passed"
    code, out, _ = run(capsys, "verify", "--inject-fault", "kdf")
    assert code == 1 and "failed: garble-differential" in out
    code, out, _ = run(capsys, "verify", "--fixture", "paper-p8", "--mode", "paper_exact")
    assert code == 2 and "not certified" in out + _


def test_circuit_stats(capsys):
    code, out, _ = run(capsys, "circuit-stats", "--p", 8, "--l", 32)
    assert code == 0 and "AND 960" in out and "garbled bytes 61484" in out
    code, out, _ = run(capsys, "circuit-stats", "--p", 3, "--l", 8, "--mode", "safe_sign")
    assert code == 0
    code, _, err = run(capsys, "circuit-stats", "--p", 3, "--l", 8)
    assert code == 2 and "power of two" in err


def test_export_circuit_bytes(tmp_path, capsys):
    for name in ("a", "b"):
        assert run(capsys, "export-circuit", "--p", 2, "--l", 3, "--out", tmp_path / name)[0] == 0
    data = (tmp_path / "a").read_bytes()
    assert data == (tmp_path / "b").read_bytes()
    golden = open("tests/data/neuron_p2_l3_paper_exact.netlist", "rb").read()
    assert hashlib.sha256(data).hexdigest() == hashlib.sha256(golden).hexdigest()


def test_usage_errors(capsys):
    assert run(capsys, "bogus")[0] == 2
    assert run(capsys)[0] == 2
    assert run(capsys, "circuit-stats", "--p", 0, "--l", 8)[0] == 2
    assert run(capsys, "step", "--fixture", "saturated", "--x", "a,b")[0] == 2


def test_console_script():
    proc = subprocess.run([sys.executable, "-m", "garbled_maxout.cli", "circuit-stats", "--p", "2", "--l", "3"],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and "AND 18" in proc.stdout
