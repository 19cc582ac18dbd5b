import csv
import io
import json
import math

import pytest

from specdrop import harness as H


def read_csv(text):
    return list(csv.DictReader(io.StringIO(text)))


@pytest.mark.parametrize("over", [
    {"n": 32}, {"n": 4096}, {"n": 100.5}, {"betas": "abc"}, {"deltas": "0"},
    {"deltas": "1.0"}, {"betas": "0.1", "deltas": "0.5"}, {"box": "1x"}, {"box": "0x1"},
    {"seed": -1}, {"jobs": 0}, {"box": "1.35x1", "n": 10 ** 2 + 1},
])
def test_config_rejections(over):
    with pytest.raises(H.ConfigError):
        H.load_config(None, {"kind": "isoperimetric", **over})


def test_config_kind():
    with pytest.raises(H.ConfigError):
        H.load_config(None, {})
    with pytest.raises(H.ConfigError):
        H.load_config(None, {"kind": "nonsense"})


def test_config_file_and_overrides(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"kind": "beta-sweep", "n": 96, "betas": [10, 100],
                             "box": [1, 2]}))
    cfg = H.load_config(str(p), {"n": 128, "deltas": "0.05,0.1", "betas": None})
    assert cfg.n == 128 and cfg.betas == (10.0, 100.0)
    assert cfg.deltas == (0.05, 0.1) and cfg.box == (1.0, 2.0)
    p.write_text(json.dumps({"kind": "beta-sweep", "resolution": 64}))
    with pytest.raises(H.ConfigError, match="unknown"):
        H.load_config(str(p), {})
    p.write_text("[1, 2]")
    with pytest.raises(H.ConfigError):
        H.load_config(str(p), {})
    with pytest.raises(H.ConfigError):
        H.load_config(str(tmp_path / "missing.json"), {})


def test_config_hash_ignores_output():
    a = H.ExperimentConfig("isoperimetric", out="a.csv", jobs=1).validate()
    b = H.ExperimentConfig("isoperimetric", out="b.csv", jobs=4).validate()
    c = H.ExperimentConfig("isoperimetric", n=256).validate()
    assert a.config_hash() == b.config_hash() != c.config_hash()


def test_tolerance_scaling(monkeypatch):
    base = H.TOLERANCES["TOL_DROP_VALUE"]
    monkeypatch.setenv(H.TOL_SCALE_ENV, "2.5")
    assert H.tolerance("TOL_DROP_VALUE") == pytest.approx(2.5 * base)
    assert H.tolerance("TOL_DROP_VALUE", smoke=True) == pytest.approx(5 * base)
    assert H.tolerance("RUNTIME_DROP") == H.RUNTIME_DROP
    monkeypatch.setenv(H.TOL_SCALE_ENV, "-1")
    with pytest.raises(H.ConfigError):
        H.tolerance("TOL_DROP_VALUE")
    monkeypatch.setenv(H.TOL_SCALE_ENV, "x")
    with pytest.raises(H.ConfigError):
        H.tolerance("TOL_DROP_VALUE")


def test_csv_format():
    buf = io.StringIO()
    H.write_rows(buf, ["a", "b", "c"], [[0.1, True, "x,y"]], "h")
    assert buf.getvalue() == 'a,b,c,config_hash\n0.10000000000000001,true,"x,y",h\n'


def test_cli_constants(capsys):
    assert H.main(["constants"]) == 0
    rows = read_csv(capsys.readouterr().out)
    assert len(rows) == 7
    assert float(rows[0]["C_under"]) == pytest.approx(0.3386327249826184, rel=1e-12)
    assert len({r["config_hash"] for r in rows}) == 1


def test_cli_isoperimetric_file(tmp_path):
    out = tmp_path / "iso.csv"
    assert H.main(["isoperimetric", "--delta", "0.1,0.5", "--out", str(out)]) == 0
    first = out.read_bytes()
    rows = read_csv(first.decode())
    assert float(rows[0]["K_squared"]) == pytest.approx(math.pi / 4)
    assert float(rows[1]["K_squared"]) == pytest.approx(0.5)
    assert H.main(["isoperimetric", "--delta", "0.1,0.5", "--out", str(out)]) == 0
    assert out.read_bytes() == first


def test_cli_errors_exit_two(capsys):
    assert H.main(["drop-opt", "--n", "32"]) == 2
    assert "error" in capsys.readouterr().err
    assert H.main(["od-opt", "--beta", "0.05", "--delta", "0.5"]) == 2
    with pytest.raises(SystemExit):
        H.main(["bogus"])


def test_drop_opt_deterministic(tmp_path):
    args = ["drop-opt", "--n", "64", "--delta", "0.1"]
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert H.main(args + ["--out", str(a)]) == 0
    assert H.main(args + ["--out", str(b), "--jobs", "2"]) == 0
    assert a.read_bytes() == b.read_bytes()
    row = read_csv(a.read_text())[0]
    assert float(row["best_value"]) == pytest.approx(float(row["quarter_disk_formula"]), rel=3e-2)


def test_beta_sweep_gap_shrinks():
    cfg = H.ExperimentConfig("beta-sweep", n=64, betas=(100.0, 10000.0), deltas=(0.1,),
                             jobs=2).validate()
    cols, rows = H.RUNNERS[cfg.kind](cfg)
    table = [dict(zip(cols, r)) for r in rows]
    gaps = [r["gap"] for r in table]
    assert gaps[1] <= gaps[0]
    for r in table:
        assert r["lower_bound"] * (1 - 3e-2) <= r["od_value"] <= r["sd_value"] * (1 + 3e-2)


def test_sandwich_helpers():
    assert H.sandwich_eps(0.1, 1000.0) == pytest.approx(0.01)
    assert H.sandwich_lower(50.0, 0.1, 0.01, 1.0) == 0.0
    assert H.sandwich_lower(50.0, 0.1, 0.01, 1000.0) == pytest.approx(50 * (1 - 0.1) ** 2)


def test_random_masks_deterministic(unit64):
    a = H.random_masks(unit64, 12, 7)
    b = H.random_masks(unit64, 12, 7)
    assert [m.digest() for m in a] == [m.digest() for m in b]
    assert all(0.02 - 2 * unit64.cell_area <= m.volume <= 1 / math.pi + 2 * unit64.cell_area
               for m in a)


def test_verify_rejects_resolution():
    with pytest.raises(H.ConfigError):
        H.verify_all(32)


def test_report_line_and_csv():
    r = H.CriterionResult("5a", "x", True, 1.0, 1.0, 1e-12, 0.25, "d=1")
    assert r.line() == "PASS [5a] x: measured=1 expected=1 tol=1e-12 (0.2 s) d=1"
    rep = H.VerifyReport(64, True, [r, H.CriterionResult("6", "y", False, 0.5, 1.0, 0.03)])
    assert not rep.passed and [f.criterion for f in rep.failures()] == ["6"]
    buf = io.StringIO()
    H.write_report_csv(rep, buf, "h")
    assert len(read_csv(buf.getvalue())) == 2


def test_fast_checks_pass():
    for r in H.check_constants() + H.check_lens() + H.check_crossover(64, smoke=True):
        assert r.passed, r.line()
