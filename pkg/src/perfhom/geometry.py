"""Lattice of interior cells and ball holes with capacity matched to V.

A cell is ``eps * (i + (-1/2, 1/2)^n)`` for an integer vector ``i``; a hole
is the closed ball ``B(eps * i, d_i)`` whose Newtonian capacity equals the
integral of the potential over its cell.
"""
import csv
from dataclasses import dataclass, field

import numpy as np

from .capacity import cap_ball

DEFAULT_KAPPA = 0.1


class AssumptionViolation(ValueError):
    """A hole does not fit in its cell with the required clearance."""


@dataclass(frozen=True)
class DomainSpec:
    """Axis-aligned open box ``prod_d (lo[d], hi[d])``."""

    lo: tuple
    hi: tuple

    def __post_init__(self):
        lo = tuple(float(v) for v in np.atleast_1d(self.lo))
        hi = tuple(float(v) for v in np.atleast_1d(self.hi))
        if len(lo) != len(hi):
            raise ValueError("lo and hi must have the same length")
        if not all(np.isfinite(lo + hi)):
            raise ValueError("box bounds must be finite")
        if any(b <= a for a, b in zip(lo, hi)):
            raise ValueError("box must have nonempty interior")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def cube(cls, n, lo=0.0, hi=1.0):
        return cls((lo,) * n, (hi,) * n)

    @property
    def n(self):
        return len(self.lo)

    @property
    def volume(self):
        return float(np.prod(np.subtract(self.hi, self.lo)))

    def contains(self, x):
        x = np.asarray(x, dtype=float)
        return np.all((x > np.array(self.lo)) & (x < np.array(self.hi)), axis=-1)


@dataclass(frozen=True)
class Lattice:
    eps: float
    indices: np.ndarray  # (N, n) int

    @property
    def n(self):
        return self.indices.shape[1]

    @property
    def centers(self):
        return self.eps * self.indices.astype(float)

    def __len__(self):
        return self.indices.shape[0]


def _axis_range(lo, hi, eps, rtol=1e-12):
    # open cell (i - 1/2, i + 1/2) eps inside open (lo, hi)  <=>  closed ranges
    slack = rtol * max(1.0, abs(lo), abs(hi)) / eps
    first = int(np.ceil(lo / eps + 0.5 - slack))
    last = int(np.floor(hi / eps - 0.5 + slack))
    return np.arange(first, last + 1)


def interior_cells(domain, eps):
    """All ``i`` with ``eps * (i + (-1/2, 1/2)^n)`` contained in ``domain``."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    axes = [_axis_range(a, b, eps) for a, b in zip(domain.lo, domain.hi)]
    n = domain.n
    if any(ax.size == 0 for ax in axes):
        return Lattice(float(eps), np.empty((0, n), dtype=np.int64))
    grids = np.meshgrid(*axes, indexing="ij")
    idx = np.stack([g.ravel() for g in grids], axis=-1).astype(np.int64)
    return Lattice(float(eps), idx)


@dataclass(frozen=True)
class HoleSet:
    """Closed ball holes, one per lattice cell (radius 0 encodes no hole)."""

    eps: float
    kappa: float
    indices: np.ndarray
    centers: np.ndarray
    radii: np.ndarray
    cell_integrals: np.ndarray = field(repr=False)

    @property
    def n(self):
        return self.centers.shape[1]

    def __len__(self):
        return self.radii.size

    @property
    def nonempty(self):
        return self.radii > 0

    @property
    def is_empty(self):
        return not np.any(self.radii > 0)

    def total_volume(self):
        from .quadrature import ball_volume

        return float(np.sum(ball_volume(self.radii, self.n)))

    def to_csv(self, path):
        n = self.n
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"i{d}" for d in range(n)] + [f"x{d}" for d in range(n)] + ["radius"])
            for i, c, r in zip(self.indices, self.centers, self.radii):
                w.writerow([int(v) for v in i] + [repr(float(v)) for v in c] + [repr(float(r))])


def read_holes_csv(path, eps, kappa=DEFAULT_KAPPA):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    n = sum(1 for h in header if h.startswith("i"))
    data = np.array(body, dtype=float).reshape(-1, 2 * n + 1)
    radii = data[:, 2 * n]
    return HoleSet(
        eps=eps,
        kappa=kappa,
        indices=data[:, :n].astype(np.int64),
        centers=data[:, n : 2 * n],
        radii=radii,
        cell_integrals=cap_ball(radii, n),
    )


def max_admissible_radius(eps, kappa):
    return (0.5 - kappa) * eps


def build_holes(V, eps, domain, n=None, kappa=DEFAULT_KAPPA, strict=True):
    """Ball holes ``B(eps i, (int_cell V / cap(B(0,1)))^(1/(n-2)))``.

    With ``strict`` an :class:`AssumptionViolation` is raised for the first
    cell whose hole leaves less than ``kappa * eps`` clearance to the cell
    boundary.
    """
    n = domain.n if n is None else n
    if n != domain.n:
        raise ValueError(f"domain is {domain.n}-dimensional, got n={n}")
    if n < 3:
        raise ValueError("holes need n >= 3")
    lattice = interior_cells(domain, eps)
    integrals = np.asarray(V.cell_integrals(lattice.indices, eps), dtype=float)
    if np.any(integrals < 0):
        raise ValueError("potential must be nonnegative")
    radii = (integrals / cap_ball(1.0, n)) ** (1.0 / (n - 2))
    radii = np.where(integrals > 0, radii, 0.0)
    if strict and radii.size:
        limit = max_admissible_radius(eps, kappa)
        bad = np.flatnonzero(radii > limit * (1 + 1e-12))
        if bad.size:
            j = bad[0]
            raise AssumptionViolation(
                f"hole in cell {tuple(int(v) for v in lattice.indices[j])} has radius "
                f"{radii[j]:.6g} > (1/2 - kappa) eps = {limit:.6g}"
            )
    return HoleSet(
        eps=float(eps),
        kappa=float(kappa),
        indices=lattice.indices,
        centers=lattice.centers,
        radii=radii,
        cell_integrals=integrals,
    )


@dataclass
class AssumptionReport:
    capacity_ok: np.ndarray
    radius_ok: np.ndarray
    distance_ok: np.ndarray
    sup_radius_ratio: float
    ordcap_constant: float = float("nan")

    @property
    def passed(self):
        return bool(np.all(self.capacity_ok) and np.all(self.radius_ok) and np.all(self.distance_ok))

    def failures(self):
        out = {}
        for name in ("capacity_ok", "radius_ok", "distance_ok"):
            bad = np.flatnonzero(~getattr(self, name))
            if bad.size:
                out[name] = bad
        return out


def check_assumptions(holes, V=None, eps=None, kappa=None, C=None, p=None, b_prime=None, rtol=1e-9):
    """Per-cell check of the capacity, radius and clearance assumptions.

    ``C`` defaults to ``1 / cap(B(0,1))``, the constant the ball construction
    satisfies with equality.  When ``b_prime`` (or ``V`` and ``p``) is given,
    the smallest constant in ``d^(n-2) <= c b' eps^(n - n/p)`` is reported.
    """
    n = holes.n
    eps = holes.eps if eps is None else eps
    kappa = holes.kappa if kappa is None else kappa
    C = 1.0 / cap_ball(1.0, n) if C is None else C
    caps = cap_ball(holes.radii, n)
    target = holes.cell_integrals if V is None else np.asarray(V.cell_integrals(holes.indices, eps))
    scale = np.maximum(np.abs(target), np.finfo(float).tiny)
    capacity_ok = np.abs(caps - target) <= rtol * scale + 1e-300
    capacity_ok |= (caps == 0) & (target == 0)
    radius_ok = holes.radii ** (n - 2) <= C * caps * (1 + rtol)
    clearance = 0.5 * eps - holes.radii
    distance_ok = clearance >= kappa * eps * (1 - 1e-12)
    sup_ratio = float(np.max(holes.radii) / eps) if len(holes) else 0.0

    ordcap = float("nan")
    if b_prime is None and V is not None and p is not None:
        from .potential import compute_b

        b_prime = compute_b(V, n=n, eps=eps, p=p).b_prime_upper
    if b_prime is not None and len(holes):
        inv_p = 0.0 if np.isinf(p if p is not None else np.inf) else 1.0 / p
        denom = b_prime * eps ** (n - n * inv_p)
        worst = float(np.max(holes.radii ** (n - 2)))
        ordcap = worst / denom if denom > 0 else (0.0 if worst == 0 else float("inf"))
    return AssumptionReport(capacity_ok, radius_ok, distance_ok, sup_ratio, ordcap)
