import json
import math
import os

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from plapflow import harness
from plapflow.harness import ConfigError, ExperimentConfig, csv_header, main, read_trajectory_csv, worker_count

SHIPPED = os.path.join(os.path.dirname(harness.__file__), "configs", "decay_p3.cfg")


def small(**kw):
    base = dict(nx=5, ny=5, time_kind="uniform", t_end=0.05, steps=5, h=0.01)
    base.update(kw)
    return ExperimentConfig(**base)


def write_cfg(tmp_path, cfg, name="exp.cfg"):
    path = tmp_path / name
    path.write_text(cfg.to_ini())
    return str(path)


def test_round_trip_default():
    cfg = ExperimentConfig()
    assert ExperimentConfig.from_ini(cfg.to_ini()) == cfg


@settings(max_examples=40, deadline=None)
@given(
    p=st.sampled_from([1.5, 3.0, 4.25]),
    seed=st.integers(0, 10**6),
    nx=st.integers(2, 40),
    amplitude=st.floats(-1e3, 1e3, allow_nan=False),
    h=st.floats(1e-6, 1.0),
    norms=st.lists(st.floats(1.0, 8.0), max_size=3).map(tuple),
    family=st.sampled_from(["cosine", "random", "step", "constant"]),
)
def test_round_trip_property(p, seed, nx, amplitude, h, norms, family):
    cfg = ExperimentConfig(p=p, seed=seed, nx=nx, amplitude=amplitude, h=h, norms=norms, initial=family)
    assert ExperimentConfig.from_ini(cfg.to_ini()) == cfg


def test_excluded_p_exit_code(tmp_path, capsys):
    text = small().to_ini().replace("p = 3.0", "p = 2")
    path = tmp_path / "bad.cfg"
    path.write_text(text)
    assert main(["run", "--config", str(path), "--out", str(tmp_path / "o")]) == harness.EXIT_CONFIG
    err = capsys.readouterr().err
    assert "excluded parameter" in err
    line = next(i for i, s in enumerate(text.splitlines(), 1) if s.startswith("p ="))
    assert f":{line}:" in err and "[equation] p" in err


def test_parse_errors_have_context():
    text = small().to_ini().replace("nx = 5", "nx = five")
    with pytest.raises(ConfigError, match=r"\[grid\] nx"):
        ExperimentConfig.from_ini(text, "x.cfg")
    with pytest.raises(ConfigError, match="unknown key"):
        ExperimentConfig.from_ini(small().to_ini() + "\n[grid2]\nfoo = 1\n")
    with pytest.raises(ConfigError, match="schema"):
        ExperimentConfig.from_ini(small().to_ini().replace("schema_version = 1", "schema_version = 9"))
    with pytest.raises(ConfigError):
        ExperimentConfig.from_ini("no section here")


def test_delta_validated_at_load():
    with pytest.raises(ConfigError, match="delta"):
        ExperimentConfig.from_ini(small(deltas=(0.0, 2.5)).to_ini())
    ExperimentConfig.from_ini(small(deltas=(0.0, 1.5)).to_ini())


def test_initial_families():
    cfg = small(nx=9, ny=9)
    g = cfg.grid()
    assert np.all(cfg.replace(initial="constant", amplitude=2.0).initial_field(g) == 2.0)
    step = cfg.replace(initial="step").initial_field(g)
    assert set(np.unique(step)) == {-1.0, 1.0}
    r1 = cfg.replace(initial="random").initial_field(g, seed=1)
    r2 = cfg.replace(initial="random").initial_field(g, seed=1)
    r3 = cfg.replace(initial="random").initial_field(g, seed=2)
    np.testing.assert_array_equal(r1, r2)
    assert not np.array_equal(r1, r3)
    assert np.abs(r1).max() == pytest.approx(1.0)
    cos = cfg.initial_field(g)
    assert cos[0] == pytest.approx(1.0) and cos[-1] == pytest.approx(1.0)


def test_run_constant(tmp_path):
    cfg = small(initial="constant", amplitude=3.0)
    out = tmp_path / "o"
    assert main(["run", "--config", write_cfg(tmp_path, cfg), "--out", str(out)]) == 0
    meta, cols = read_trajectory_csv(out / "trajectory.csv")
    assert meta["p"] == "3.0"
    assert np.all(cols["mass"] == pytest.approx(3.0))
    assert np.all(cols["dev_l2"] == 0)
    diag = json.loads((out / "diagnostics.json").read_text())
    assert diag["extinction_time"] == 0.0
    assert (out / "bounds.json").exists()


def test_csv_schema_and_digits(tmp_path):
    cfg = small(norms=(3.0,))
    out = tmp_path / "o"
    assert main(["run", "--config", write_cfg(tmp_path, cfg), "--out", str(out)]) == 0
    lines = (out / "trajectory.csv").read_text().splitlines()
    header = next(l for l in lines if not l.startswith("#"))
    assert header.split(",") == [
        "t", "mass", "dev_l1", "dev_l2", "dev_linf", "dev_l3", "energy_p", "f_u", "newton_iters", "eps_used"
    ]
    assert header.split(",") == csv_header((3.0,))
    row = lines[lines.index(header) + 2].split(",")
    assert float(row[3]) == float("%.17g" % float(row[3]))


def test_run_deterministic(tmp_path):
    cfg = small(initial="random", p=1.5, eps_policy="adaptive")
    path = write_cfg(tmp_path, cfg)
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["run", "--config", path, "--out", str(a), "--seed", "7"]) == 0
    assert main(["run", "--config", path, "--out", str(b), "--seed", "7"]) == 0
    for name in ("trajectory.csv", "diagnostics.json", "bounds.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    assert not [f for f in os.listdir(a) if f.startswith(".tmp")]


def test_bounds_command(tmp_path, capsys):
    assert main(["bounds", "--config", write_cfg(tmp_path, small())]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["gamma_delta_p"]["0.0"]["value"] == pytest.approx(2 ** (1 / 3), rel=1e-12)
    assert rep["T_star"] is None
    assert main(["bounds", "--config", write_cfg(tmp_path, small(p=1.5))]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert math.isfinite(rep["T_star"]["value"])


def test_shipped_config_loads():
    cfg = ExperimentConfig.load(SHIPPED)
    assert cfg.p == 3.0 and cfg.nx == 33 and cfg.initial == "cosine"
    assert cfg.time_grid().times()[-1] == 10.0


def _synthetic_csv(path, devs, p=3.0):
    t = np.geomspace(0.1, 10, len(devs))
    rows = ["# p = %r" % p, ",".join(csv_header())]
    for ti, d in zip(t, devs):
        rows.append(",".join(["%.17g" % v for v in (ti, 0.0, d, d, d, 0.0, d * d)] + ["0", "0"]))
    path.write_text("\n".join(rows) + "\n")


def test_fit_exact_slope(tmp_path, capsys):
    path = tmp_path / "s.csv"
    t = np.geomspace(0.1, 10, 12)
    _synthetic_csv(path, t ** (-1 / 3))
    assert main(["fit", str(path), "--norm", "1"]) == 0
    out = capsys.readouterr().out
    slope = float(out.split("slope = ")[1].split()[0])
    assert slope == pytest.approx(-1 / 3, abs=1e-12)
    assert "respected" in out


def test_fit_extinct_and_errors(tmp_path, capsys):
    path = tmp_path / "e.csv"
    devs = np.geomspace(1, 1e-3, 12)
    devs[-3:] = 0.0
    _synthetic_csv(path, devs, p=1.5)
    assert main(["fit", str(path)]) == 0
    assert "extinct" in capsys.readouterr().out
    assert main(["fit", str(path), "--t-min", "100"]) == harness.EXIT_DATA
    bad = tmp_path / "bad.csv"
    bad.write_text("t,mass\n1,2\n")
    assert main(["fit", str(bad)]) == harness.EXIT_DATA
    assert "missing columns" in capsys.readouterr().err


def test_verify_suites(tmp_path, capsys):
    assert main(["verify", "--suite", "nope"]) == harness.EXIT_USAGE
    capsys.readouterr()
    assert main(["verify", "--suite", "oracles", "--out", str(tmp_path)]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["passed"] and {c["name"] for c in rep["checks"]} >= {"Newton vs brute force", "two-node step"}
    assert (tmp_path / "verify_oracles.json").exists()


def test_verify_semigroup():
    rep = harness.run_suite("semigroup")
    assert rep["passed"], [c for c in rep["checks"] if c["passed"] is False]


def test_worker_count(monkeypatch):
    monkeypatch.setenv("PLAPFLOW_THREADS", "2")
    assert worker_count(10) == 2
    assert worker_count(1) == 1
    monkeypatch.setenv("PLAPFLOW_THREADS", "junk")
    assert worker_count(3) >= 1


def test_sweep(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("PLAPFLOW_THREADS", "2")
    path = write_cfg(tmp_path, small(eps_policy="adaptive"))
    out = tmp_path / "sw"
    assert main(["sweep", "--config", path, "--out", str(out), "--set", "p=1.5,3.0", "--set", "modes=1,1;2,1"]) == 0
    index = json.loads((out / "sweep.json").read_text())
    assert len(index) == 4 and all(r["status"] == "ok" for r in index)
    assert {tuple(r["overrides"]["modes"]) for r in index} == {(1, 1), (2, 1)}
    assert (out / "run_003" / "trajectory.csv").exists()
    assert main(["sweep", "--config", path, "--out", str(out), "--set", "nope=1"]) == harness.EXIT_CONFIG


def test_module_entry_point():
    import subprocess
    import sys

    r = subprocess.run([sys.executable, "-m", "plapflow", "verify", "--suite", "bogus"], capture_output=True, text=True)
    assert r.returncode == harness.EXIT_USAGE


def test_sweep_reports_solver_failure(tmp_path, capsys):
    # fixed eps = 0 leaves the p < 2 step without a Hessian
    path = write_cfg(tmp_path, small())
    assert main(["sweep", "--config", path, "--out", str(tmp_path / "sw"), "--set", "p=1.5"]) == harness.EXIT_SOLVER
    assert "solver failure" in capsys.readouterr().out
