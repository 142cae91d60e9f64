import json

import pytest

from gdpp.cli import main, read_surface_csv
from gdpp.config import shipped_configs


def shipped(name):
    return str(shipped_configs()[name])


def test_solve_writes_surface(tmp_path, capsys):
    assert main(["solve", "--config", shipped("gheat_convex"), "--out", str(tmp_path),
                 "--deterministic"]) == 0
    data = read_surface_csv(tmp_path / "gheat_convex_semigroup.csv")
    assert data["header"] == ["t", "x1", "value", "argmin_u"]
    origin = (data["t"] == 0.0) & (data["x"][:, 0] == 0.0)
    assert origin.sum() == 1
    assert data["value"][origin][0] == pytest.approx(1.0, abs=2e-2)
    assert "V(t0, 0)" in capsys.readouterr().out


def test_solve_hjb(tmp_path):
    assert main(["solve", "--config", shipped("gheat_concave"), "--out", str(tmp_path),
                 "--solver", "hjb", "--deterministic"]) == 0
    data = read_surface_csv(tmp_path / "gheat_concave_hjb.csv")
    assert sorted(set(data["t"]))[:2] == [0.0, 0.005]
    origin = (data["t"] == 0.0) & (data["x"][:, 0] == 0.0)
    assert data["value"][origin][0] == pytest.approx(-0.25, abs=2e-2)


def test_deterministic_outputs(tmp_path):
    for k in (1, 2):
        for cmd in ("solve", "dpp-check"):
            assert main([cmd, "--config", shipped("drift_control"), "--out", str(tmp_path / str(k)),
                         "--deterministic"]) == 0
    for f in ("drift_control_semigroup.csv", "drift_control_dpp_check.json"):
        assert (tmp_path / "1" / f).read_bytes() == (tmp_path / "2" / f).read_bytes()


def test_timestamp_without_flag(tmp_path):
    assert main(["solve", "--config", shipped("gheat_convex"), "--out", str(tmp_path)]) == 0
    first = (tmp_path / "gheat_convex_semigroup.csv").read_text().splitlines()[0]
    assert first.startswith("# generated ")
    assert read_surface_csv(tmp_path / "gheat_convex_semigroup.csv")["header"][0] == "t"


def test_validate_report(tmp_path):
    assert main(["validate", "--config", shipped("penalized"), "--out", str(tmp_path),
                 "--deterministic"]) == 0
    report = json.loads((tmp_path / "penalized_validate.json").read_text())
    assert report["schema"] == 1
    assert report["passed"] is True
    assert "generated" not in report
    names = {c["name"] for c in report["checks"]}
    for key in ("domination", "comparison", "dpp", "ellipticity", "gprime", "freezing"):
        assert any(key in n for n in names), key


def test_check_failure_exit(tmp_path):
    cfg = json.loads(shipped_configs()["gheat_convex"].read_text())
    cfg["checks"]["cross_solver_tol"] = 1e-12
    p = tmp_path / "tight.json"
    p.write_text(json.dumps(cfg))
    assert main(["compare", "--config", str(p), "--out", str(tmp_path)]) == 1
    report = json.loads((tmp_path / "gheat_convex_compare.json").read_text())
    assert report["passed"] is False


def test_config_error_exit(tmp_path, capsys):
    cfg = json.loads(shipped_configs()["gheat_convex"].read_text())
    cfg["solver"]["hjb_substeps"] = 1
    p = tmp_path / "cfl.json"
    p.write_text(json.dumps(cfg))
    assert main(["solve", "--config", str(p), "--out", str(tmp_path)]) == 2
    err = capsys.readouterr().err
    assert "CFG101" in err and "2.005" in err


def test_io_error_exit(tmp_path):
    assert main(["solve", "--config", str(tmp_path / "missing.json")]) == 3
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert main(["solve", "--config", shipped("gheat_convex"), "--out", str(blocker / "sub")]) == 3


def test_bad_json_exit(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{")
    assert main(["validate", "--config", str(p)]) == 2
