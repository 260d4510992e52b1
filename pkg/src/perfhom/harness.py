"""Epsilon sweeps: rate quantities, optional PDE stages, CSV and JSON output."""
import csv
import json
import logging
import math
import os
import time
from dataclasses import asdict, dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from .capacity import UnderResolvedError
from .geometry import DEFAULT_KAPPA, AssumptionViolation, DomainSpec, build_holes, check_assumptions
from .potential import DEFAULT_BETA, Constant, RateParams, compute_b, compute_D, compute_e, potential_from_config

logger = logging.getLogger(__name__)

ALL_STAGES = ("rates", "spectra", "resolvent", "closeness")
PDE_STAGES = ("spectra", "resolvent", "closeness")

COLUMNS = [
    "eps",
    "status",
    "D",
    "b_prime_lower",
    "b_prime_upper",
    "b_lower",
    "b_upper",
    "b_widened",
    "e",
    "predicted",
    "n_holes",
    "sup_radius_ratio",
    "assumptions_ok",
    "h",
    "nodes",
    "active_nodes",
    "K",
    "spectral_metric",
    "spectral_tail",
    "eig_residual",
    "resolvent_norm",
    "resolvent_sign",
    "resolvent_converged",
    "c1a",
    "c2",
    "c4a",
    "c5",
    "j1",
    "j2",
    "j3",
    "t_rates",
    "t_spectra",
    "t_resolvent",
    "t_closeness",
]
METRIC_COLUMNS = ("spectral_metric", "resolvent_norm", "c1a", "c4a", "c5")


@dataclass
class Tolerances:
    cg: float = 1e-10
    lanczos: float = 1e-8
    power: float = 1e-6
    quadrature: float = 1e-4


@dataclass
class GridPolicy:
    """``nodes_per_radius``: largest h with min hole radius / h >= target, h dividing eps.

    ``fixed``: the given ``h``.  Without holes ``cells_per_eps`` nodes per cell width are used.
    """

    policy: str = "nodes_per_radius"
    target: float = 3.0
    h: Optional[float] = None
    max_nodes: float = 2e7
    cells_per_eps: int = 4
    min_nodes_across: int = 3


@dataclass
class RunConfig:
    lo: tuple
    hi: tuple
    potential: dict
    eps: list
    p: Optional[float] = None
    beta: float = DEFAULT_BETA
    kappa: float = DEFAULT_KAPPA
    grid: GridPolicy = field(default_factory=GridPolicy)
    K: int = 10
    tol: Tolerances = field(default_factory=Tolerances)
    seed: int = 0
    stages: tuple = ("rates",)
    out: Optional[str] = None
    write_holes: bool = False
    test_functions: dict = field(default_factory=lambda: {"kmax": 2, "bumps": 2, "u_kmax": 1})

    def __post_init__(self):
        self.lo = tuple(float(v) for v in self.lo)
        self.hi = tuple(float(v) for v in self.hi)
        self.eps = [float(e) for e in self.eps]
        if any(b >= a for a, b in zip(self.eps, self.eps[1:])):
            raise ValueError("eps list must be strictly decreasing")
        if any(e <= 0 for e in self.eps):
            raise ValueError("eps must be positive")
        if isinstance(self.grid, dict):
            self.grid = GridPolicy(**self.grid)
        if isinstance(self.tol, dict):
            self.tol = Tolerances(**self.tol)
        self.stages = tuple(self.stages)
        unknown = set(self.stages) - set(ALL_STAGES)
        if unknown:
            raise ValueError(f"unknown stages {sorted(unknown)}")
        if "rates" not in self.stages:
            self.stages = ("rates",) + self.stages
        if self.pde_enabled:
            if self.n != 3:
                raise ValueError("PDE stages are implemented for n = 3 only")
            if self.grid.policy == "nodes_per_radius" and self.grid.target < 1:
                raise ValueError("nodes-per-radius target below 1 leaves holes unresolved")
        if self.p is not None and self.p in ("inf", "infinity"):
            self.p = math.inf

    @property
    def n(self):
        return len(self.lo)

    @property
    def pde_enabled(self):
        return any(s in self.stages for s in PDE_STAGES)

    @property
    def domain(self):
        return DomainSpec(self.lo, self.hi)

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        if "domain" in data:
            dom = data.pop("domain")
            data["lo"], data["hi"] = dom["lo"], dom["hi"]
        known = set(cls.__dataclass_fields__)
        extra = set(data) - known
        if extra:
            raise ValueError(f"unknown config keys {sorted(extra)}")
        return cls(**data)

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self):
        out = asdict(self)
        if out["p"] is not None and math.isinf(out["p"]):
            out["p"] = "inf"
        out["stages"] = list(self.stages)
        return out


class RateFit(NamedTuple):
    slope: float
    intercept: float
    r2: float
    points: int
    fitted: bool


def fit_rate(column, eps):
    """Least-squares slope of ``log(value)`` against ``log(eps)``; nonpositive entries dropped."""
    v = np.asarray(column, dtype=float)
    e = np.asarray(eps, dtype=float)
    ok = np.isfinite(v) & (v > 0) & (e > 0)
    if np.count_nonzero(ok) < 3:
        return RateFit(math.nan, math.nan, math.nan, int(np.count_nonzero(ok)), False)
    x, y = np.log(e[ok]), np.log(v[ok])
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0
    return RateFit(float(slope), float(intercept), r2, int(ok.sum()), True)


class GridBudgetError(ValueError):
    pass


def choose_spacing(cfg, holes):
    """Grid spacing for one eps under the configured policy."""
    pol = cfg.grid
    eps = holes.eps
    if pol.policy == "fixed":
        if pol.h is None:
            raise ValueError("fixed grid policy needs h")
        h = float(pol.h)
    elif pol.policy == "nodes_per_radius":
        live = holes.radii[holes.radii > 0]
        if live.size == 0:
            h = eps / pol.cells_per_eps
        else:
            m = max(1, math.ceil(pol.target * eps / float(live.min()) - 1e-9))
            h = eps / m
    else:
        raise ValueError(f"unknown grid policy {pol.policy!r}")
    nodes = 1.0
    for a, b in zip(cfg.lo, cfg.hi):
        nodes *= round((b - a) / h) - 1
    if nodes > pol.max_nodes:
        live = holes.radii[holes.radii > 0]
        h_budget = min(b - a for a, b in zip(cfg.lo, cfg.hi)) / pol.max_nodes ** (1.0 / cfg.n)
        factor = (pol.target * h_budget / float(live.min())) ** (cfg.n - 2) if live.size else math.nan
        raise GridBudgetError(
            f"{nodes:.3g} nodes exceed the budget {pol.max_nodes:.3g}; scaling V up by about "
            f"{factor:.3g} enlarges the holes enough"
        )
    return h


@dataclass
class RateReport:
    rows: list
    fits: dict
    fitted_C: dict
    invariants: dict
    config: dict

    def column(self, name):
        return np.array([np.nan if r.get(name) is None else r[name] for r in self.rows], dtype=float)

    def write(self, out_dir):
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "report.csv"), "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=COLUMNS)
            w.writeheader()
            for r in self.rows:
                w.writerow({k: _fmt(r.get(k)) for k in COLUMNS})
        with open(os.path.join(out_dir, "summary.json"), "w") as fh:
            json.dump(self.summary(), fh, indent=2, default=_json_default)

    def summary(self):
        return {
            "fits": {k: v._asdict() for k, v in self.fits.items()},
            "fitted_C": self.fitted_C,
            "invariants": self.invariants,
            "passed": all(self.invariants.values()),
            "config": self.config,
        }


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def _json_default(v):
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, np.bool_):
        return bool(v)
    raise TypeError(type(v))


def _clean(x):
    return float(x) if x is not None and np.isfinite(x) else math.nan


def _pde_stages(cfg, V, holes, row):
    from .closeness import TestFunctionSet, estimate_closeness
    from .linalg import ShiftedSolver, SineTransformSolver
    from .operators import (
        GridSpec,
        MaskedGrid,
        assemble_perforated_laplacian,
        assemble_schrodinger,
        box_laplacian_eigenvalues,
    )
    from .spectra import Spectrum, resolvent_diff_norm, smallest_eigs, spectral_metric

    domain = cfg.domain
    eps = holes.eps
    h = choose_spacing(cfg, holes)
    grid = GridSpec(domain, h)
    masked = MaskedGrid.from_holes(grid, holes, min_nodes=cfg.grid.min_nodes_across)
    row.update(h=h, nodes=grid.size, active_nodes=masked.n_active)

    tol = cfg.tol
    solvers = None
    if "spectra" in cfg.stages or "resolvent" in cfg.stages:
        A_eps = assemble_perforated_laplacian(masked)
        A = assemble_schrodinger(grid, V)
        solve_tol = min(tol.cg, 1e-3 * tol.lanczos)
        if isinstance(V, Constant):
            # -Delta_h + c is diagonalised by the sine transform
            ref_solver = SineTransformSolver(grid.shape, h, 1.0 + V.c)
        else:
            ref_solver = ShiftedSolver(A, 1.0, tol=solve_tol)
        solvers = (ShiftedSolver(A_eps, 1.0, tol=solve_tol), ref_solver)
    if "spectra" in cfg.stages:
        t0 = time.perf_counter()
        K = min(cfg.K, masked.n_active, grid.size)
        s_eps = smallest_eigs(A_eps, K, tol.lanczos, seed=cfg.seed, solver=solvers[0])
        if isinstance(V, Constant):
            s_ref = Spectrum(box_laplacian_eigenvalues(grid, K) + V.c, np.zeros(K))
        else:
            s_ref = smallest_eigs(A, K, tol.lanczos, seed=cfg.seed, solver=solvers[1])
        metric = spectral_metric(s_eps, s_ref, K)
        row.update(
            K=K,
            spectral_metric=metric.value,
            spectral_tail=metric.tail_bound,
            eig_residual=float(max(s_eps.residuals.max(), s_ref.residuals.max())),
            t_spectra=time.perf_counter() - t0,
        )
        if cfg.out:
            s_eps.to_csv(os.path.join(cfg.out, f"spectrum_eps_{eps:.6g}.csv"))
            s_ref.to_csv(os.path.join(cfg.out, f"spectrum_limit_{eps:.6g}.csv"))
        del s_eps, s_ref
    if "resolvent" in cfg.stages:
        t0 = time.perf_counter()
        res = resolvent_diff_norm(A_eps, A, masked, tol=tol.power, seed=cfg.seed, solvers=solvers)
        row.update(
            resolvent_norm=res.norm,
            resolvent_sign=res.sign,
            resolvent_converged=res.converged,
            t_resolvent=time.perf_counter() - t0,
        )
    solvers = None
    if "closeness" in cfg.stages:
        t0 = time.perf_counter()
        tf = cfg.test_functions
        fs = TestFunctionSet.standard(domain, tf.get("kmax", 2), tf.get("bumps", 2), seed=cfg.seed)
        us = TestFunctionSet.sine_modes(domain, tf.get("u_kmax", 1))
        rep = estimate_closeness(fs, us, eps, holes, V, domain, p=cfg.p, beta=cfg.beta)
        row.update(
            c1a=rep.c1a,
            c2=rep.c2,
            c4a=rep.c4a,
            c5=rep.c5,
            j1=rep.j_terms[0],
            j2=rep.j_terms[1],
            j3=rep.j_terms[2],
            t_closeness=time.perf_counter() - t0,
        )


def run_sweep(cfg):
    """Run every eps of ``cfg``; returns a :class:`RateReport` (also written when ``cfg.out`` is set)."""
    if isinstance(cfg, dict):
        cfg = RunConfig.from_dict(cfg)
    domain = cfg.domain
    V = potential_from_config(cfg.potential)
    p = V.p if cfg.p is None else cfg.p
    if cfg.out:
        os.makedirs(cfg.out, exist_ok=True)
    rows = []
    for eps in cfg.eps:
        row = {k: None for k in COLUMNS}
        row["eps"] = eps
        row["status"] = "ok"
        t0 = time.perf_counter()
        params = RateParams(cfg.n, eps, cfg.beta)
        D = compute_D(V, params, domain)
        br = compute_b(V, params, p, domain=domain)
        e = compute_e(params, p)
        row.update(
            D=D,
            b_prime_lower=br.b_prime_lower,
            b_prime_upper=br.b_prime_upper,
            b_lower=br.b_lower,
            b_upper=br.b_upper,
            b_widened=bool(br.widened),
            e=e,
            predicted=D + br.b_upper * e,
        )
        try:
            holes = build_holes(V, eps, domain, kappa=cfg.kappa, strict=True)
        except AssumptionViolation as exc:
            row["status"] = f"assumption_violation: {exc}"
            holes = build_holes(V, eps, domain, kappa=cfg.kappa, strict=False)
        rep = check_assumptions(holes, kappa=cfg.kappa)
        row.update(
            n_holes=int(np.count_nonzero(holes.nonempty)),
            sup_radius_ratio=rep.sup_radius_ratio,
            assumptions_ok=rep.passed,
            t_rates=time.perf_counter() - t0,
        )
        if cfg.write_holes and cfg.out:
            holes.to_csv(os.path.join(cfg.out, f"holes_{eps:.6g}.csv"))
        if cfg.pde_enabled and row["status"] == "ok":
            try:
                _pde_stages(cfg, V, holes, row)
            except (UnderResolvedError, GridBudgetError, ValueError) as exc:
                row["status"] = f"{type(exc).__name__}: {exc}"
                logger.warning("eps=%g: %s", eps, exc)
        logger.info("eps=%g done: %s", eps, row["status"])
        rows.append(row)

    report = _summarise(cfg, rows)
    if cfg.out:
        report.write(cfg.out)
    return report


def _decreasing(values):
    v = [x for x in values if x is not None and np.isfinite(x)]
    return len(v) >= 2 and all(b < a for a, b in zip(v, v[1:]))


def _summarise(cfg, rows):
    eps = [r["eps"] for r in rows]
    ok = [r for r in rows if r["status"] == "ok"]
    fits = {}
    for name in ("D", "b_upper", "e", "predicted") + METRIC_COLUMNS:
        fits[name] = fit_rate([_clean(r[name]) for r in rows], eps)

    fitted_C = {}
    for name in METRIC_COLUMNS:
        ratios = [r[name] / r["predicted"] for r in ok if r.get(name) is not None and r["predicted"] > 0]
        fitted_C[name] = float(max(ratios)) if ratios else None

    inv = {"assumptions": all(r["assumptions_ok"] for r in rows)}
    if "spectra" in cfg.stages and "resolvent" in cfg.stages:
        slack = 10.0 * (cfg.tol.cg + cfg.tol.lanczos + cfg.tol.power)
        inv["weyl"] = all(
            r["spectral_metric"] <= r["resolvent_norm"] * (1 + 10 * cfg.tol.power) + slack
            for r in ok
            if r["spectral_metric"] is not None and r["resolvent_norm"] is not None
        )
    if cfg.pde_enabled and len(rows) >= 2:
        for name in METRIC_COLUMNS:
            col = [r.get(name) for r in rows]
            if any(v is not None for v in col):
                if all((v or 0.0) <= 1e-10 for v in col):
                    inv[f"{name}_vanishes"] = True
                else:
                    inv[f"{name}_decreasing"] = len(ok) == len(rows) and _decreasing(col)
        if "closeness" in cfg.stages:
            inv["c2_zero"] = all((r["c2"] or 0.0) <= 1e-12 for r in ok)
    for name, C in fitted_C.items():
        if C is not None:
            inv[f"{name}_bounded"] = bool(np.isfinite(C)) and all(
                r[name] <= C * r["predicted"] * (1 + 1e-12) for r in ok if r.get(name) is not None
            )
    return RateReport(rows, fits, fitted_C, inv, cfg.to_dict())
