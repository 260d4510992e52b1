"""Newtonian capacity: closed form for balls, equilibrium potentials, and a
finite-difference oracle for general compact sets in three dimensions."""
import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.special import gamma

from .linalg import ShiftedSolver

logger = logging.getLogger(__name__)


def sphere_area(n):
    """Surface measure of the unit sphere in R^n."""
    return 2.0 * np.pi ** (n / 2) / gamma(n / 2)


def cap_ball(r, n):
    """Capacity ``(n-2) |S^(n-1)| r^(n-2)`` of a closed ball of radius ``r``."""
    if n < 3:
        raise ValueError("Newtonian capacity needs n >= 3")
    r = np.asarray(r, dtype=float)
    out = (n - 2) * sphere_area(n) * r ** (n - 2)
    return float(out) if out.ndim == 0 else out


def potential_H(x, center, r, n=None):
    """Equilibrium potential of the ball ``B(center, r)``: 1 inside, ``(r/|x-c|)^(n-2)`` outside."""
    x = np.asarray(x, dtype=float)
    center = np.asarray(center, dtype=float)
    n = center.size if n is None else n
    if r <= 0:
        return np.zeros(x.shape[:-1])
    dist = np.linalg.norm(x - center, axis=-1)
    with np.errstate(divide="ignore"):
        out = np.where(dist <= r, 1.0, (r / np.maximum(dist, r)) ** (n - 2))
    return out


def grad_potential_H(x, center, r, n=None):
    """Gradient of :func:`potential_H`; zero inside the ball."""
    x = np.asarray(x, dtype=float)
    center = np.asarray(center, dtype=float)
    n = center.size if n is None else n
    diff = x - center
    dist = np.linalg.norm(diff, axis=-1)
    if r <= 0:
        return np.zeros_like(diff)
    safe = np.maximum(dist, r)
    coef = np.where(dist > r, -(n - 2) * r ** (n - 2) / safe**n, 0.0)
    return coef[..., None] * diff


# --------------------------------------------------------------------------
# compact set descriptors


@dataclass(frozen=True)
class Ball:
    center: tuple
    r: float

    def contains(self, x):
        return np.linalg.norm(np.asarray(x) - np.asarray(self.center), axis=-1) <= self.r

    def bbox(self):
        c = np.asarray(self.center, dtype=float)
        return c - self.r, c + self.r

    def enclosing_radius(self, about):
        return float(np.linalg.norm(np.asarray(self.center) - about) + self.r)

    @property
    def is_empty(self):
        return self.r <= 0


@dataclass(frozen=True)
class UnionOfBalls:
    balls: tuple

    def contains(self, x):
        x = np.asarray(x)
        out = np.zeros(x.shape[:-1], dtype=bool)
        for b in self.balls:
            out |= b.contains(x)
        return out

    def bbox(self):
        boxes = [b.bbox() for b in self.balls if not b.is_empty]
        return np.min([lo for lo, _ in boxes], axis=0), np.max([hi for _, hi in boxes], axis=0)

    def enclosing_radius(self, about):
        return max(b.enclosing_radius(about) for b in self.balls if not b.is_empty)

    @property
    def is_empty(self):
        return all(b.is_empty for b in self.balls)


@dataclass(frozen=True)
class Indicator:
    """Set given by a vectorised predicate, contained in the box ``[lo, hi]``."""

    predicate: object
    lo: tuple
    hi: tuple

    def contains(self, x):
        x = np.asarray(x)
        inbox = np.all((x >= np.asarray(self.lo)) & (x <= np.asarray(self.hi)), axis=-1)
        return inbox & np.asarray(self.predicate(x), dtype=bool)

    def bbox(self):
        return np.asarray(self.lo, dtype=float), np.asarray(self.hi, dtype=float)

    def enclosing_radius(self, about):
        lo, hi = self.bbox()
        corners = np.array(np.meshgrid(*zip(lo, hi), indexing="ij")).reshape(3, -1).T
        return float(np.max(np.linalg.norm(corners - about, axis=1)))

    @property
    def is_empty(self):
        return False


# --------------------------------------------------------------------------
# finite-difference capacity oracle


class UnderResolvedError(ValueError):
    pass


@dataclass
class CapacityEstimate:
    value: float
    error: float
    truncated: tuple  # capacities of the truncated condensers at (R_out, 2 R_out)
    unknowns: int
    iterations: int


_OFFSETS = np.array(
    [[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]], dtype=np.int64
)


def _crossing(a, b, inside, iters=52):
    """Fraction along segments ``a -> b`` where ``inside`` first turns true (b inside)."""
    lo = np.zeros(a.shape[0])
    hi = np.ones(a.shape[0])
    d = b - a
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        hit = inside(a + mid[:, None] * d)
        hi = np.where(hit, mid, hi)
        lo = np.where(hit, lo, mid)
    return hi


def _condenser(K, center, R, h, tol, theta_min=1e-3):
    """Energy of the discrete condenser (H=1 on K, H=0 outside the sphere |x-c|=R)."""
    M = int(np.ceil(R / h)) + 1
    k = np.arange(-M, M + 1)
    shape = (k.size,) * 3
    grid = np.stack(np.meshgrid(k, k, k, indexing="ij"), axis=-1).reshape(-1, 3)
    pts = center + h * grid
    dist = np.linalg.norm(pts - center, axis=1)
    outer = dist >= R
    in_k = K.contains(pts) & ~outer
    unknown = ~(outer | in_k)
    n_unknown = int(unknown.sum())
    number = np.full(pts.shape[0], -1, dtype=np.int64)
    number[unknown] = np.arange(n_unknown)
    uidx = np.flatnonzero(unknown)
    strides = np.array([shape[1] * shape[2], shape[2], 1])

    def outside_sphere(x):
        return np.linalg.norm(x - center, axis=1) >= R

    diag = np.zeros(n_unknown)
    rhs = np.zeros(n_unknown)
    rows, cols = [], []
    cut_terms = []  # (unknown number, weight, boundary value)
    for off in _OFFSETS:
        nb = uidx + off @ strides
        nb_unknown = unknown[nb]
        a = number[uidx[nb_unknown]]
        rows.append(a)
        cols.append(number[nb[nb_unknown]])
        diag[a] += 1.0
        for mask, value, pred in ((in_k[nb], 1.0, K.contains), (outer[nb], 0.0, outside_sphere)):
            if not np.any(mask):
                continue
            src = uidx[mask]
            theta = _crossing(pts[src], pts[nb[mask]], pred)
            w = 1.0 / np.maximum(theta, theta_min)
            num = number[src]
            diag[num] += w
            rhs[num] += w * value
            cut_terms.append((num, w, value))
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    A = sp.csr_matrix((-np.ones(rows.size), (rows, cols)), shape=(n_unknown, n_unknown))
    A = A + sp.diags(diag)
    solver = ShiftedSolver(A, 0.0, tol=tol)
    H = solver.solve(rhs)
    # each interior edge appears twice in (rows, cols)
    energy = 0.5 * np.sum((H[rows] - H[cols]) ** 2)
    for num, w, value in cut_terms:
        energy += np.sum(w * (H[num] - value) ** 2)
    return h * energy, n_unknown, solver.iterations


def cap_numeric(K, R_out=3.0, h=0.1, tol=1e-10, error_bar=True):
    """Capacity of a compact set in R^3 by finite differences.

    The exterior problem is truncated at the sphere of radius ``R_out``
    (and ``2 R_out``) around the centre of the bounding box of ``K``.
    Boundary crossings on grid edges are located by bisection and treated
    with shortened edges, which keeps the system symmetric.  For the
    truncated condenser ``1/cap(R) = 1/cap - 1/(4 pi R) + ...``, so the
    reciprocals are Richardson-extrapolated linearly in ``1/R``.

    ``error`` is the change of the extrapolated value when ``h`` is doubled.
    """
    if K.is_empty:
        return CapacityEstimate(0.0, 0.0, (0.0, 0.0), 0, 0)
    lo, hi = K.bbox()
    if np.min(hi - lo) < 2 * h:
        raise UnderResolvedError(
            f"set is {np.min(hi - lo):.3g} wide; fewer than 3 grid nodes across at h={h}"
        )
    center = 0.5 * (lo + hi)
    if K.enclosing_radius(center) > 0.5 * R_out:
        raise ValueError("K must lie inside the ball of radius R_out/2 about its bounding-box centre")

    def extrapolate(step):
        c1, n1, it1 = _condenser(K, center, R_out, step, tol)
        c2, n2, it2 = _condenser(K, center, 2 * R_out, step, tol)
        value = 1.0 / (2.0 / c2 - 1.0 / c1)
        return value, (c1, c2), n1 + n2, it1 + it2

    value, trunc, unknowns, iters = extrapolate(h)
    err = float("nan")
    if error_bar and np.min(hi - lo) >= 4 * h:
        coarse, *_ = extrapolate(2 * h)
        err = abs(value - coarse)
    logger.info("cap_numeric: %.6g (+- %.2g), %d unknowns", value, err, unknowns)
    return CapacityEstimate(value, err, trunc, unknowns, iters)


# --------------------------------------------------------------------------
# decay bounds for the ball potentials


@dataclass
class DecayReport:
    constants: dict  # derivative order -> smallest admissible constant
    per_cell: dict
    passed: bool


def check_decay_bound(holes, shell_start=1.0, kappa=None, orders=(0, 1), samples=48, fd_step=1e-6):
    """Smallest ``c`` with ``|d^a H| <= c d^(n-2) s^(-n+2-|a|)`` on shells.

    ``s = |x - x_i| - d_i`` ranges over ``[shell_start * d_i, kappa * eps]``.
    Gradients are taken by central differences of :func:`potential_H` so the
    check does not reuse the closed-form gradient.
    """
    n = holes.n
    kappa = holes.kappa if kappa is None else kappa
    outer = kappa * holes.eps
    dirs = np.vstack([np.eye(n), -np.eye(n), np.ones((1, n)) / np.sqrt(n), -np.ones((1, n)) / np.sqrt(n)])
    per_cell = {a: np.zeros(len(holes)) for a in orders}
    for j, (c, d) in enumerate(zip(holes.centers, holes.radii)):
        if d <= 0 or shell_start * d >= outer:
            continue
        s = np.geomspace(shell_start * d, outer, samples)
        x = c + ((d + s)[:, None, None] * dirs[None]).reshape(-1, n)
        s_all = np.repeat(s, dirs.shape[0])
        scale = d ** (n - 2)
        if 0 in orders:
            val = potential_H(x, c, d, n)
            per_cell[0][j] = np.max(np.abs(val) / (scale * s_all ** (-n + 2)))
        if 1 in orders:
            step = fd_step * d
            grad = np.empty_like(x)
            for k in range(n):
                e = np.zeros(n)
                e[k] = step
                grad[:, k] = (potential_H(x + e, c, d, n) - potential_H(x - e, c, d, n)) / (2 * step)
            per_cell[1][j] = np.max(np.linalg.norm(grad, axis=1) / (scale * s_all ** (-n + 1)))
    constants = {a: float(np.max(v)) if v.size else 0.0 for a, v in per_cell.items()}
    passed = all(np.isfinite(v) for v in constants.values())
    return DecayReport(constants, per_cell, passed)
