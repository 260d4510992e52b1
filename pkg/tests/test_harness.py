import csv
import json
import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from perfhom.geometry import build_holes
from perfhom.harness import (
    COLUMNS,
    GridBudgetError,
    RunConfig,
    choose_spacing,
    fit_rate,
    run_sweep,
)
from perfhom.potential import Constant

UNIT = {"lo": [0, 0, 0], "hi": [1, 1, 1]}


def config(**kw):
    data = {"domain": UNIT, "potential": {"kind": "constant", "c": 4 * np.pi * 4}, "eps": [0.25, 0.125]}
    data.update(kw)
    return RunConfig.from_dict(data)


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# -- fitting ---------------------------------------------------------------------


def test_fit_rate_exact_power_law():
    eps = 2.0 ** -np.arange(2, 7)
    fit = fit_rate(3.0 * eps**0.75, eps)
    assert_allclose(fit.slope, 0.75, rtol=1e-12)
    assert_allclose(math.exp(fit.intercept), 3.0, rtol=1e-12)
    assert_allclose(fit.r2, 1.0)
    assert fit.points == 5 and fit.fitted


def test_fit_rate_skips_zero_and_short_columns():
    eps = [0.5, 0.25, 0.125, 0.0625]
    fit = fit_rate([0.0, 0.25, 0.125, 0.0625], eps)
    assert fit.points == 3
    assert_allclose(fit.slope, 1.0, rtol=1e-12)
    short = fit_rate([0.0, 0.0, 1.0, 2.0], eps)
    assert not short.fitted and math.isnan(short.slope)


# -- configuration ---------------------------------------------------------------


def test_config_validation():
    with pytest.raises(ValueError):
        config(eps=[0.125, 0.25])
    with pytest.raises(ValueError):
        config(stages=["rates", "eigen"])
    with pytest.raises(ValueError):
        config(stages=["spectra"], grid={"target": 0.5})
    with pytest.raises(ValueError):
        config(colour="blue")
    assert config(stages=["spectra"]).stages[0] == "rates"


def test_config_roundtrip():
    cfg = config(p="inf", stages=["rates", "closeness"])
    assert math.isinf(cfg.p)
    again = RunConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
    assert again.to_dict() == cfg.to_dict()


def test_choose_spacing_nodes_per_radius():
    # d = s eps^3 for V = 4 pi s, so h = eps / ceil(target eps / d)
    V = Constant(c=4 * np.pi * 4)
    cfg = config(grid={"target": 1.0})
    assert choose_spacing(cfg, build_holes(V, 0.25, cfg.domain)) == 1 / 16
    assert choose_spacing(cfg, build_holes(V, 0.125, cfg.domain)) == 1 / 128
    cfg3 = config(grid={"target": 3.0})
    assert choose_spacing(cfg3, build_holes(V, 0.25, cfg.domain)) == 0.25 / 12


def test_choose_spacing_without_holes_and_budget():
    cfg = config(grid={"cells_per_eps": 4})
    assert choose_spacing(cfg, build_holes(Constant(c=0.0), 0.25, cfg.domain)) == 1 / 16
    tight = config(grid={"target": 3.0, "max_nodes": 1e5})
    with pytest.raises(GridBudgetError, match="scaling V up"):
        choose_spacing(tight, build_holes(Constant(c=4 * np.pi * 4), 0.125, tight.domain))


# -- sweeps ----------------------------------------------------------------------


def test_constant_potential_D_column_zero():
    eps = [2.0**-k for k in range(2, 6)]
    rep = run_sweep(config(eps=eps))
    assert np.all(rep.column("D") == 0.0)
    assert rep.invariants["assumptions"]


def test_half_space_step_bound_and_slope():
    R = 1.0
    eps = [2.0**-k for k in range(2, 8)]
    cfg = RunConfig.from_dict(
        {"domain": {"lo": [-R] * 3, "hi": [R] * 3}, "potential": {"kind": "half_space_step", "height": 2.0}, "eps": eps}
    )
    rep = run_sweep(cfg)
    D = rep.column("D")
    # straddling cells contribute |avg - V| = 1 on a slab of (2/eps - 1)^2 cells
    assert_allclose(D**3, np.array(eps) * (2 - np.array(eps)) ** 2, rtol=1e-12)
    assert np.all(D <= ((2 * R) ** 2 * np.array(eps)) ** (1 / 3))
    assert 0.25 <= rep.fits["D"].slope <= 0.45


def test_zero_potential_end_to_end(tmp_path):
    cfg = RunConfig.from_dict(
        {
            "domain": UNIT,
            "potential": {"kind": "constant", "c": 0.0},
            "eps": [0.25, 0.125],
            "stages": ["rates", "spectra", "resolvent", "closeness"],
            "K": 4,
            "out": str(tmp_path),
            "write_holes": True,
        }
    )
    rep = run_sweep(cfg)
    for row in rep.rows:
        assert row["status"] == "ok"
        assert row["n_holes"] == 0
        for name in ("spectral_metric", "resolvent_norm", "c1a", "c2", "c4a", "c5", "D"):
            assert abs(row[name]) <= 1e-10, name
    assert rep.summary()["passed"]
    holes_csv = (tmp_path / "holes_0.25.csv").read_text().splitlines()
    assert all(line.endswith(",0.0") for line in holes_csv[1:])


def test_report_files_and_schema(tmp_path):
    cfg = config(stages=["rates", "spectra", "resolvent"], grid={"target": 1.0}, eps=[0.5, 0.25], K=3, out=str(tmp_path))
    rep = run_sweep(cfg)
    rows = read_rows(tmp_path / "report.csv")
    with open(tmp_path / "report.csv") as fh:
        assert next(csv.reader(fh)) == COLUMNS
    assert [float(r["eps"]) for r in rows] == [0.5, 0.25]
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert set(summary) == {"fits", "fitted_C", "invariants", "passed", "config"}
    assert "weyl" in summary["invariants"]
    assert (tmp_path / "spectrum_eps_0.25.csv").exists()
    assert rep.rows[1]["nodes"] == 15**3


def test_deterministic_given_seed(tmp_path):
    outs = []
    for k in range(2):
        out = tmp_path / str(k)
        run_sweep(config(stages=["rates", "spectra", "resolvent", "closeness"], eps=[0.25], K=3, seed=7, grid={"target": 1.0}, out=str(out)))
        rows = read_rows(out / "report.csv")
        outs.append([{c: v for c, v in r.items() if not c.startswith("t_")} for r in rows])
    assert outs[0] == outs[1]


def test_assumption_violation_recorded():
    # d = 10 eps^3 exceeds (1/2 - kappa) eps at eps = 1/4
    rep = run_sweep(config(potential={"kind": "constant", "c": 4 * np.pi * 10}, eps=[0.25], stages=["rates", "spectra"]))
    row = rep.rows[0]
    assert row["status"].startswith("assumption_violation")
    assert row["spectral_metric"] is None
    assert not rep.invariants["assumptions"]


def test_under_resolved_recorded():
    rep = run_sweep(config(eps=[0.25], stages=["rates", "spectra"], grid={"policy": "fixed", "h": 0.125}))
    assert rep.rows[0]["status"].startswith("UnderResolvedError")
    assert rep.rows[0]["D"] == 0.0
