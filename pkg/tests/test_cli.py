import csv
import hashlib
import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from oracles import G0_ORIGIN_GAUSS
from randgreen.cli import main
from randgreen.export import dumps

ROOT = Path(__file__).resolve().parents[1]
DEFAULT = ROOT / "configs" / "default.json"


def _manifest(out):
    return json.loads((Path(out) / "manifest.json").read_text())


def _write(tmp_path, obj, name="cfg.json"):
    p = tmp_path / name
    p.write_text(obj if isinstance(obj, str) else json.dumps(obj, indent=1))
    return str(p)


def test_green_origin_matches_zeta(tmp_path):
    out = tmp_path / "g"
    assert main(["green", "--config", str(DEFAULT), "--lambda", "1,0.01", "--out", str(out)]) == 0
    with open(out / "green_series.csv") as fh:
        rows = csv.reader(fh)
        header = next(rows)
        assert header == ["x1", "x2", "x3", "value"]
        origin = [float(r[3]) for r in rows if all(float(v) == 0.0 for v in r[:3])]
    assert len(origin) == 1
    assert origin[0] == pytest.approx(G0_ORIGIN_GAUSS, rel=1e-4)
    side = json.loads((out / "green_series.json").read_text())
    assert side["method"] == "series" and "truncation_info" in side
    m = _manifest(out)
    assert m["all_passed"] and m["tool"] == "randgreen"
    assert m["config"]["lambda"] == [1.0, 0.01]
    assert m["config_hash"] == hashlib.sha256(dumps(m["config"]).encode()).hexdigest()
    assert "threads" not in m["config"]
    names = [c["name"] for c in m["checks"]]
    assert len(names) == len(set(names))


def test_estimate_zero_function(tmp_path):
    cfg = json.loads(DEFAULT.read_text())
    cfg["f"] = {"family": "zero"}
    out = tmp_path / "e"
    assert main(["estimate", "--config", _write(tmp_path, cfg), "--paths", "20", "--out", str(out)]) == 0
    est = json.loads((out / "estimate.json").read_text())
    assert est["estimate"]["mean"] == 0.0
    m = _manifest(out)
    (check,) = m["checks"]
    assert check["passed"] and check["measured"]["mc_mean"] == 0.0


def test_estimate_brownian(tmp_path):
    cfg = {"seed": 4, "process": {"kind": "brownian"}, "f": {"family": "gaussian_bump"}, "n_paths": 300}
    out = tmp_path / "b"
    assert main(["estimate", "--config", _write(tmp_path, cfg), "--out", str(out)]) == 0
    rows = list(csv.DictReader(open(out / "comparison.csv")))
    assert float(rows[0]["exact"]) == pytest.approx(1.0, rel=1e-10)


def test_simulate_outputs(tmp_path):
    out = tmp_path / "s"
    code = main(["simulate", "--config", str(DEFAULT), "--paths", "600", "--out", str(out)])
    assert code in (0, 1)
    rows = list(csv.reader(open(out / "occupation.csv")))
    assert rows[0][-1] == "mass" and len(rows) == 11
    side = json.loads((out / "occupation.json").read_text())
    assert {"atom_mass", "truncation_tail", "n_paths", "seed"} <= set(side)
    path_rows = list(csv.reader(open(out / "path_0.csv")))
    assert path_rows[0] == ["t", "x1", "x2", "x3"]
    assert code == (0 if _manifest(out)["all_passed"] else 1)


def test_variance_outputs(tmp_path):
    out = tmp_path / "v"
    main(["variance", "--config", str(DEFAULT), "--paths", "0", "--out", str(out)])
    rep = json.loads((out / "variance.json").read_text())
    assert rep["v_measure"] > 0
    assert rep["expansion_gap"] == pytest.approx(rep["v_three_term"] - rep["v_measure"])


def test_flags_override(tmp_path):
    out = tmp_path / "o"
    main(["estimate", "--config", str(DEFAULT), "--seed", "9", "--paths", "10", "--horizon", "3",
          "--dt", "0.01", "--tol", "1e-8", "--out", str(out)])
    cfg = _manifest(out)["config"]
    assert (cfg["seed"], cfg["n_paths"], cfg["horizon"], cfg["dt"]) == (9, 10, 3.0, 0.01)
    assert cfg["tolerances"]["series"] == 1e-8


def test_module_error_becomes_named_failure(tmp_path):
    cfg = json.loads(DEFAULT.read_text())
    cfg["exact_grid"] = {"half_extent": 4.0, "points_per_axis": 16}
    cfg["f"] = {"family": "exp_abs", "rate": 0.5}
    out = tmp_path / "x"
    assert main(["estimate", "--config", _write(tmp_path, cfg), "--paths", "10", "--out", str(out)]) == 1
    (check,) = _manifest(out)["checks"]
    assert check["name"] == "estimate_failed" and "SupportEscapesGrid" in check["error"]


@pytest.mark.parametrize(
    "text, flags, needle",
    [
        ('{"dim": 3}', [], "seed"),
        ('{"seed": 1,\n "dim": 2}', [], "line=2"),
        ('{"seed": 1,\n "colour": "red"}', [], "field=colour"),
        ('{"seed": 1, "dim": 3,,}', [], "invalid JSON"),
        ('{"seed": 1, "tolerances": {"route": 0}}', [], "tolerances.route"),
        ('{"seed": 1}', ["--tol", "-1"], "tolerances.series"),
        ('{"seed": 1, "process": {"kind": "cpp", "kernel": {"family": "cauchy"}}}', [], "field=process"),
        ('{"seed": 1, "f": {"family": "sinc"}}', [], "field=f"),
        ('[1, 2]', [], "object"),
    ],
)
def test_config_errors_exit_2(tmp_path, capsys, text, flags, needle):
    code = main(["green", "--config", _write(tmp_path, text), "--out", str(tmp_path / "o"), *flags])
    assert code == 2
    assert needle in capsys.readouterr().err


def test_console_script_and_bad_flag(tmp_path):
    r = subprocess.run([sys.executable, "-m", "randgreen.cli", "green", "--bogus"], capture_output=True, text=True)
    assert r.returncode == 2
    r = subprocess.run(["randgreen", "estimate", "--config", str(DEFAULT), "--paths", "5", "--horizon", "1",
                        "--out", str(tmp_path / "c")], capture_output=True, text=True)
    assert r.returncode in (0, 1)
    assert (tmp_path / "c" / "manifest.json").exists()


def test_same_seed_same_manifest(tmp_path):
    ms = []
    for i in range(2):
        out = tmp_path / f"r{i}"
        main(["estimate", "--config", str(DEFAULT), "--paths", "300", "--threads", str(1 + 3 * i),
              "--out", str(out)])
        m = _manifest(out)
        m.pop("wall_clock")
        ms.append(dumps(m))
        assert np.isfinite(json.loads(ms[-1])["checks"][0]["measured"]["mc_mean"])
    assert ms[0] == ms[1]
