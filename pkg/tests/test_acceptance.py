"""Acceptance gate: one test per criterion, each reporting a PASS/FAIL line."""
import math
import time

import numpy as np
import pytest
from numpy.testing import assert_allclose

from conftest import ACCEPTANCE_LINES
from perfhom.capacity import Ball, cap_ball, cap_numeric
from perfhom.closeness import TestFunctionSet, apply_J1, estimate_closeness
from perfhom.geometry import DomainSpec, HoleSet, build_holes
from perfhom.harness import RunConfig, fit_rate, run_sweep
from perfhom.operators import (
    GridSpec,
    MaskedGrid,
    assemble_perforated_laplacian,
    assemble_schrodinger,
    extend,
    restrict,
)
from perfhom.potential import Constant, HalfSpaceStep, Hoelder, RateParams, Smooth, compute_D
from perfhom.spectra import dense_eigs, smallest_eigs

CUBE = DomainSpec.cube(3)
PDE_EPS = [1 / 4, 1 / 6, 1 / 8]
PDE_S = 4.0
LANCZOS_TOL = 1e-8
CG_TOL = 1e-10
POWER_TOL = 1e-6


def report(number, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


@pytest.fixture(scope="module")
def pde_sweep(tmp_path_factory):
    out = tmp_path_factory.mktemp("pde")
    cfg = RunConfig.from_dict(
        {
            "domain": {"lo": [0, 0, 0], "hi": [1, 1, 1]},
            "potential": {"kind": "constant", "c": 4 * np.pi * PDE_S},
            "eps": PDE_EPS,
            "grid": {"policy": "nodes_per_radius", "target": 1.0, "max_nodes": 2e7},
            "K": 4,
            "tol": {"cg": CG_TOL, "lanczos": LANCZOS_TOL, "power": POWER_TOL},
            "stages": ["rates", "spectra", "resolvent", "closeness"],
            "out": str(out),
        }
    )
    return run_sweep(cfg)


def fcol(rep, name):
    return [r[name] for r in rep.rows]


def test_criterion_1_capacity():
    start = time.perf_counter()
    est = cap_numeric(Ball((0.0, 0.0, 0.0), 1.0))
    elapsed = time.perf_counter() - start
    ratio = est.value / (4 * np.pi)
    # powers of two keep r^(n-2) exact
    scaling = all(
        cap_ball(r, n) == r ** (n - 2) * cap_ball(1.0, n) for n in (3, 4, 5, 7) for r in (0.25, 0.5, 2.0, 8.0)
    )
    ok = 0.98 <= ratio <= 1.02 and elapsed < 60 and scaling
    report(1, ok, f"cap(B1)/4pi = {ratio:.5f}, {elapsed:.1f} s, scaling identity exact: {scaling}")


def weierstrass(alpha, terms):
    def f(x):
        out = np.zeros(np.shape(x)[:-1])
        for k in range(terms + 1):
            out += 2.0 ** (-k * alpha) * (1 + np.cos(2.0**k * np.pi * x[..., 0]))
        return out

    return Hoelder(
        func=f, alpha=alpha, seminorm=(terms + 1) * 2 ** (1 - alpha) * np.pi**alpha, scale=(2.0**-terms, math.inf, math.inf)
    )


def test_criterion_2_rate_formulas():
    start = time.perf_counter()
    sweep = [2.0**-k for k in range(2, 8)]

    const_zero = all(compute_D(Constant(c=3.7), RateParams(3, e), CUBE) == 0.0 for e in sweep)

    R = 1.0
    box = DomainSpec.cube(3, -R, R)
    D_half = np.array([compute_D(HalfSpaceStep(height=2.0), RateParams(3, e), box) for e in sweep])
    half_bound = bool(np.all(D_half <= ((2 * R) ** 2 * np.array(sweep)) ** (1 / 3)))
    half_slope = fit_rate(D_half, sweep).slope

    alpha = 0.5
    h_eps = [2.0**-k for k in range(3, 7)]
    V_h = weierstrass(alpha, 10)
    hoelder_slope = fit_rate([compute_D(V_h, RateParams(3, e), CUBE, order=2) for e in h_eps], h_eps).slope

    V_s = Smooth(func=lambda x: 1.0 + x[..., 0] ** 2 + np.sin(2 * x[..., 1]) * np.cos(x[..., 2]))
    s_eps = [2.0**-k for k in range(3, 7)]
    smooth_slope = fit_rate([compute_D(V_s, RateParams(3, e), CUBE) for e in s_eps], s_eps).slope

    elapsed = time.perf_counter() - start
    ok = (
        const_zero
        and half_bound
        and 0.25 <= half_slope <= 0.45
        and hoelder_slope >= alpha - 0.1
        and 0.85 <= smooth_slope <= 1.15
        and elapsed < 300
    )
    report(
        2,
        ok,
        f"constant D=0: {const_zero}; half-space bound: {half_bound}, slope {half_slope:.3f}; "
        f"Hoelder(0.5) slope {hoelder_slope:.3f}; smooth slope {smooth_slope:.3f}; {elapsed:.0f} s",
    )


def _small_operators():
    ops = []
    for N in (8, 12, 16):
        g = GridSpec(CUBE, 1 / N)
        ops.append(("cube", N, assemble_perforated_laplacian(g)))
        V = Constant(c=4 * np.pi * 4)
        ops.append(("schrodinger", N, assemble_schrodinger(g, V)))
        ops.append(("schrodinger-step", N, assemble_schrodinger(g, HalfSpaceStep(height=20.0, threshold=0.5))))
        if N >= 12:
            holes = build_holes(V, 0.25, CUBE)
            ops.append(("perforated", N, assemble_perforated_laplacian(MaskedGrid.from_holes(g, holes, min_nodes=1))))
    return ops


def test_criterion_3_eigensolver_oracle():
    worst = 0.0
    for _, _, A in _small_operators():
        assert A.shape[0] <= 4096
        ref = dense_eigs(A, 10).values
        got = smallest_eigs(A, 10, tol=LANCZOS_TOL).values
        worst = max(worst, float(np.max(np.abs(got - ref) / np.abs(ref))))
    closed = 0.0
    for N in (8, 12, 16):
        h = 1 / N
        mu = 4 / h**2 * np.sin(np.arange(1, N) * np.pi * h / 2) ** 2
        exact = np.sort((mu[:, None, None] + mu[None, :, None] + mu[None, None, :]).ravel())[:10]
        A = assemble_perforated_laplacian(GridSpec(CUBE, h))
        for vals in (smallest_eigs(A, 10, tol=LANCZOS_TOL).values, dense_eigs(A, 10).values):
            closed = max(closed, float(np.max(np.abs(vals - exact) / exact)))
    ok = worst <= 1e-8 and closed <= 1e-10
    report(3, ok, f"max rel. Krylov-vs-dense gap {worst:.2e} (<= 1e-8); closed-form gap {closed:.2e} (<= 1e-10)")


def test_criterion_4_structural_identities():
    V = Constant(c=4 * np.pi * 4)
    eps = 0.25
    holes = build_holes(V, eps, CUBE)
    m = MaskedGrid.from_holes(GridSpec(CUBE, 1 / 32), holes)
    rng = np.random.default_rng(0)
    f = rng.standard_normal(m.active.size)
    u = rng.standard_normal(m.n_active)
    adjoint = restrict(f, m) @ u == f @ extend(u, m) or abs(restrict(f, m) @ u - f @ extend(u, m)) <= 1e-12 * np.linalg.norm(f) * np.linalg.norm(u)
    identity = np.array_equal(restrict(extend(u, m), m), u)

    fs = TestFunctionSet.standard(CUBE, kmax=2, bumps=2)
    j1_max = 0.0
    for g in fs:
        J = apply_J1(g, holes)
        for c, d in zip(holes.centers, holes.radii):
            pts = c + d * rng.uniform(-1, 1, (16, 3)) / math.sqrt(3)
            j1_max = max(j1_max, float(np.max(np.abs(J(pts)))))
    c2 = estimate_closeness(fs, TestFunctionSet.sine_modes(CUBE, 1), eps, holes, V, CUBE).c2
    ok = adjoint and identity and j1_max <= 1e-9 and c2 <= 1e-12
    report(4, ok, f"adjointness {adjoint}, restrict.extend = id {identity}, max |J1 f| on holes {j1_max:.1e}, C2 {c2:.1e}")


def test_criterion_5_interlacing():
    g = GridSpec(CUBE, 1 / 16)
    radii = (0.0, 0.07, 0.1, 0.13, 0.16)
    centers = np.array([[0.25, 0.25, 0.25], [0.75, 0.5, 0.5]])
    prev, ok = None, True
    for r in radii:
        holes = HoleSet(0.5, 0.1, np.array([[0, 0, 0], [1, 1, 1]]), centers, np.array([r, 0.8 * r]), np.zeros(2))
        m = MaskedGrid.from_holes(g, holes, min_nodes=1) if r > 0 else MaskedGrid.full(g)
        spec = smallest_eigs(assemble_perforated_laplacian(m), 8, tol=LANCZOS_TOL)
        if prev is not None:
            slack = LANCZOS_TOL * abs(assemble_perforated_laplacian(g).matrix).sum(axis=1).max()
            ok &= bool(np.all(spec.values >= prev - slack))
        prev = spec.values
    report(5, ok, f"8 smallest eigenvalues nondecreasing over {len(radii)} nested hole radii")


def test_criterion_6_weyl(pde_sweep):
    slack = 10 * (CG_TOL + LANCZOS_TOL + POWER_TOL)
    rows = [r for r in pde_sweep.rows if r["spectral_metric"] is not None]
    pairs = [(r["spectral_metric"], r["resolvent_norm"]) for r in rows]
    ok = len(rows) == len(PDE_EPS) and all(s <= n + slack for s, n in pairs)
    report(6, ok, "spectral metric <= resolvent norm + slack: " + ", ".join(f"{s:.3e} <= {n:.3e}" for s, n in pairs))


def test_criterion_7_homogenization_trend(pde_sweep):
    rep = pde_sweep
    status = fcol(rep, "status")
    spec, res, pred = fcol(rep, "spectral_metric"), fcol(rep, "resolvent_norm"), fcol(rep, "predicted")
    decreasing = all(s == "ok" for s in status) and all(
        b < a for col in (spec, res) for a, b in zip(col, col[1:])
    )
    C = rep.summary()["fitted_C"]
    bounded = all(
        v <= C[name] * p * (1 + 1e-12) for name, col in (("spectral_metric", spec), ("resolvent_norm", res)) for v, p in zip(col, pred)
    )
    nodes_ok = all(r["nodes"] <= 2e7 for r in rep.rows)
    times_ok = all(
        sum(r[t] or 0.0 for t in ("t_rates", "t_spectra", "t_resolvent", "t_closeness")) < 1800 for r in rep.rows
    )
    ok = decreasing and bounded and nodes_ok and times_ok
    report(
        7,
        ok,
        f"s={PDE_S:g}, eps={['1/4', '1/6', '1/8']}: spectral {[f'{v:.2e}' for v in spec]}, resolvent "
        f"{[f'{v:.2e}' for v in res]}; C = {C['spectral_metric']:.3g}, {C['resolvent_norm']:.3g}; "
        f"nodes {fcol(rep, 'nodes')}",
    )


def test_criterion_8_closeness_trend(pde_sweep):
    rep = pde_sweep
    C = rep.summary()["fitted_C"]
    cols = {name: fcol(rep, name) for name in ("c1a", "c4a", "c5")}
    pred = fcol(rep, "predicted")
    decreasing = all(all(b < a for a, b in zip(col, col[1:])) for col in cols.values())
    bounded = all(v <= C[name] * p * (1 + 1e-12) for name, col in cols.items() for v, p in zip(col, pred))
    ok = decreasing and bounded
    report(
        8,
        ok,
        "; ".join(f"{name} {[f'{v:.3g}' for v in col]} (C={C[name]:.3g})" for name, col in cols.items()),
    )


def test_criterion_9_degenerate_run(tmp_path):
    cfg = RunConfig.from_dict(
        {
            "domain": {"lo": [0, 0, 0], "hi": [1, 1, 1]},
            "potential": {"kind": "constant", "c": 0.0},
            "eps": [0.25, 0.125],
            "K": 4,
            "stages": ["rates", "spectra", "resolvent", "closeness"],
            "out": str(tmp_path),
        }
    )
    rep = run_sweep(cfg)
    names = ("spectral_metric", "resolvent_norm", "c1a", "c2", "c4a", "c5")
    worst = max(abs(r[n]) for r in rep.rows for n in names)
    empty = all(r["n_holes"] == 0 for r in rep.rows) and build_holes(Constant(c=0.0), 0.25, CUBE).is_empty
    ok = all(r["status"] == "ok" for r in rep.rows) and worst <= 1e-10 and empty
    report(9, ok, f"V = 0: max metric {worst:.1e}, hole sets empty: {empty}")
