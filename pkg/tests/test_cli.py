import json

import pytest

from confaudit import cli
from confaudit.dataset import read_csv

PANEL_D = "A -> R\nA <-> Y\n"


def run(argv, capsys):
    code = cli.main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def test_simulate(tmp_path, capsys):
    code, out, _ = run(["simulate", "--preset", "a", "-n", 1000, "--out", tmp_path / "s1"], capsys)
    assert code == 0
    lines = (tmp_path / "s1" / "data.csv").read_text().splitlines()
    assert lines[0] == "id,y,a,x1" and len(lines) == 1001
    run(["simulate", "--preset", "b", "--out", tmp_path / "s2"], capsys)
    run(["simulate", "--preset", "b", "--out", tmp_path / "s3"], capsys)
    assert (tmp_path / "s2" / "data.csv").read_bytes() == (tmp_path / "s3" / "data.csv").read_bytes()
    assert sorted(p.name for p in (tmp_path / "s2").iterdir()) == ["data.csv", "manifest.json"]


def test_simulate_continuous_and_overrides(tmp_path, capsys):
    code, _, _ = run(["simulate", "--preset", "a", "--beta-xy", "0.5", "--continuous", "-n", 50, "--out", tmp_path], capsys)
    assert code == 0
    d = read_csv(tmp_path / "data.csv", require_binary=False)
    assert not d.is_binary


def test_simulate_invalid_p(tmp_path, capsys):
    code, _, err = run(["simulate", "--preset", "a", "-p", "1.5", "--out", tmp_path / "x"], capsys)
    assert code == 1 and "p must lie in (0, 1)" in err


@pytest.mark.parametrize("preset", ["a", "b", "c"])
def test_theorem1(tmp_path, capsys, preset):
    code, _, _ = run(["theorem1", "--preset", preset, "-n", 20000, "-B", 1000, "--out", tmp_path], capsys)
    assert code == 0
    res = json.loads((tmp_path / "theorem1.json").read_text())
    assert set(res) >= {"observed", "analytic_mean", "confounder_only", "bias", "perm_mean", "perm_sd", "B", "n"}
    noise = 4 / (res["n"] ** 0.5)
    if preset == "a":
        assert abs(res["analytic_mean"] - res["confounder_only"]) < noise
    if preset == "b":
        assert res["bias"] == pytest.approx(res["population"]["bias"], abs=noise)
        assert res["bias"] > noise
    if preset == "c":
        assert abs(res["confounder_only"]) < noise and res["analytic_mean"] > noise
    rows = (tmp_path / "theorem1_null.csv").read_text().splitlines()
    assert rows[0] == "b,cov" and len(rows) == 1001


def test_theorem1_needs_two_level_confounder(tmp_path, capsys):
    data = tmp_path / "d.csv"
    data.write_text("id,y,a,x1\n" + "".join(f"{i},{i % 2},{i % 3},{i * 0.1}\n" for i in range(30)))
    code, _, err = run(["theorem1", "--data", data, "--out", tmp_path / "o"], capsys)
    assert code == 1 and "two levels" in err


def test_dsep(tmp_path, capsys):
    dag = tmp_path / "panel_d.txt"
    dag.write_text(PANEL_D)
    code, out, _ = run(["dsep", dag, "--pattern"], capsys)
    assert code == 0
    assert "R_||_Y|A: independent" in out and out.count("independent") == 1
    assert "scenario: confounder_only" in out
    code, out, _ = run(["dsep", dag, "--query", "R _||_ Y | A"], capsys)
    assert out.strip() == "R _||_ Y | A: separated"
    code, out, err = run(["dsep", dag, "--query", "R _||_ Q"], capsys)
    assert code == 1 and "'Q'" in err
    bad = tmp_path / "bad.txt"
    bad.write_text("A -> R\nA ~> Y\n")
    code, _, err = run(["dsep", bad, "--pattern"], capsys)
    assert code == 1 and "line 2" in err


def test_audit_exit_codes(tmp_path, capsys):
    base = ["audit", "--preset", "b", "--splits", 6, "--B-dcor", 199, "--threads", 1]
    code, out, _ = run(base + ["--adjust", "none", "--out", tmp_path / "none"], capsys)
    assert code == 0 and "verdict: confounded" in out
    code, out, _ = run(base + ["--adjust", "matching", "--out", tmp_path / "m"], capsys)
    assert code == 0 and "verdict: label_decoupled" in out
    code, out, _ = run(base + ["--adjust", "residualize", "--out", tmp_path / "r"], capsys)
    assert code == 2 and "unrecognized" in out
    names = sorted(p.name for p in (tmp_path / "m").iterdir())
    assert names == ["balance.json", "manifest.json", "pvalues.csv", "pvalues_stage2.csv", "report.json"]


def test_audit_errors(tmp_path, capsys):
    code, _, err = run(["audit", "--data", tmp_path / "nope.csv", "--out", tmp_path / "o"], capsys)
    assert code == 1 and "nope.csv" in err
    code, _, err = run(["audit", "--out", tmp_path / "o"], capsys)
    assert code == 1
    code, _, _ = run(["audit", "--preset", "b", "--adjust", "bogus", "--out", tmp_path / "o"], capsys)
    assert code == 1


def test_audit_from_csv(tmp_path, capsys):
    run(["simulate", "--preset", "b", "-n", 1500, "--seed", 2, "--out", tmp_path / "sim"], capsys)
    code, out, _ = run(["audit", "--data", tmp_path / "sim" / "data.csv", "--splits", 4, "--B-dcor", 199, "--out", tmp_path / "a"], capsys)
    assert code == 0 and "confounded" in out
    man = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert list(man["inputs"]) == [str((tmp_path / "sim" / "data.csv").resolve())]


def _replay_ok(out_dir, tmp_path, capsys, name):
    code, out, err = run(["replay", out_dir / "manifest.json", "--out", tmp_path / name], capsys)
    assert code in (0, 2), err
    assert "replay identical" in out
    man = json.loads((out_dir / "manifest.json").read_text())
    for f in man["artifacts"]:
        assert (out_dir / f).read_bytes() == (tmp_path / name / f).read_bytes()
    assert (out_dir / "manifest.json").read_bytes() == (tmp_path / name / "manifest.json").read_bytes()


def test_replay_every_command(tmp_path, capsys):
    run(["simulate", "--preset", "c", "-n", 300, "--seed", 5, "--out", tmp_path / "sim"], capsys)
    _replay_ok(tmp_path / "sim", tmp_path, capsys, "sim_re")
    run(["theorem1", "--preset", "b", "-n", 2000, "-B", 200, "--seed", 5, "--out", tmp_path / "t1"], capsys)
    _replay_ok(tmp_path / "t1", tmp_path, capsys, "t1_re")
    dag = tmp_path / "g.txt"
    dag.write_text(PANEL_D)
    run(["dsep", dag, "--pattern", "--out", tmp_path / "ds"], capsys)
    _replay_ok(tmp_path / "ds", tmp_path, capsys, "ds_re")
    run(["audit", "--preset", "b", "-n", 800, "--splits", 3, "--adjust", "ipw", "--B-dcor", 199, "--seed", 5, "--out", tmp_path / "au"], capsys)
    _replay_ok(tmp_path / "au", tmp_path, capsys, "au_re")


def test_replay_detects_tampering(tmp_path, capsys):
    run(["simulate", "--preset", "a", "-n", 50, "--out", tmp_path / "s"], capsys)
    man = tmp_path / "s" / "manifest.json"
    body = json.loads(man.read_text())
    body["artifacts"]["data.csv"] = "0" * 64
    man.write_text(json.dumps(body))
    code, _, err = run(["replay", man, "--out", tmp_path / "re"], capsys)
    assert code == 1 and "differs" in err


def test_replay_detects_changed_input(tmp_path, capsys):
    run(["simulate", "--preset", "b", "-n", 600, "--out", tmp_path / "sim"], capsys)
    data = tmp_path / "sim" / "data.csv"
    run(["audit", "--data", data, "--splits", 2, "--B-dcor", 199, "--out", tmp_path / "a"], capsys)
    lines = data.read_text().splitlines()
    lines[1] = lines[1].rsplit(",", 1)[0] + ",0.0"
    data.write_text("\n".join(lines) + "\n")
    code, _, err = run(["replay", tmp_path / "a" / "manifest.json", "--out", tmp_path / "re"], capsys)
    assert code == 1 and "changed" in err


def test_writes_stay_in_out_dir(tmp_path, capsys, monkeypatch):
    work = tmp_path / "work"
    work.mkdir()
    monkeypatch.chdir(work)
    run(["simulate", "--preset", "a", "-n", 30, "--out", "o1"], capsys)
    run(["theorem1", "--preset", "a", "-n", 300, "-B", 100, "--out", "o2"], capsys)
    assert sorted(p.name for p in work.iterdir()) == ["o1", "o2"]
