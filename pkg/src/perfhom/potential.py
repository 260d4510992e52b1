"""Potentials V >= 0, cell averages, and the rate quantities D_eps, b_eps, e_eps.

Cell and box integrals use tensor Gauss-Legendre rules (order 6 per axis by
default) with closed forms for :class:`Constant` and :class:`HalfSpaceStep`.
"""
import math
from dataclasses import dataclass, field
from typing import Callable, ClassVar, Optional

import numpy as np

from .geometry import interior_cells
from .quadrature import ball_volume, masked_ball_rule, reference_cube

DEFAULT_ORDER = 6
DEFAULT_BETA = 0.25
_CHUNK_POINTS = 2_000_000


class QuadratureError(RuntimeError):
    pass


def _inv(p):
    return 0.0 if math.isinf(p) else 1.0 / p


@dataclass(frozen=True)
class RateParams:
    n: int
    epsilon: float
    beta: float = DEFAULT_BETA

    def __post_init__(self):
        if self.n < 3:
            raise ValueError("n must be at least 3")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if not 0 < self.beta < 0.5:
            raise ValueError("beta must lie in (0, 1/2)")


@dataclass(frozen=True)
class PotentialSpec:
    """Base class: a nonnegative potential sampled by ``__call__(x)``, ``x`` of shape (..., n).

    ``p`` is the integrability exponent (``inf`` allowed).  ``scale`` is the
    shortest length on which the potential varies; cells wider than it are
    subdivided for quadrature.
    """

    kind: ClassVar[str] = "generic"
    p: float = field(default=math.inf, kw_only=True)
    scale: Optional[object] = field(default=None, kw_only=True)

    def __call__(self, x):
        raise NotImplementedError

    # -- quadrature helpers -------------------------------------------------

    def _subdiv(self, width, n):
        if self.scale is None:
            return 1
        scales = np.broadcast_to(np.asarray(self.scale, dtype=float), (n,))
        return tuple(max(1, int(math.ceil(width / s - 1e-9))) for s in scales)

    def _box_samples(self, centers, width, order, subdiv=None):
        """Yield (slice, values (m, q), weights (q,)) over chunks of boxes."""
        centers = np.atleast_2d(np.asarray(centers, dtype=float))
        n = centers.shape[1]
        if subdiv is None:
            subdiv = self._subdiv(width, n)
        ref, w = reference_cube(n, order, subdiv)
        step = max(1, _CHUNK_POINTS // ref.shape[0])
        for start in range(0, centers.shape[0], step):
            sl = slice(start, start + step)
            pts = centers[sl, None, :] + width * ref[None, :, :]
            yield sl, self(pts), w

    def box_averages(self, centers, width, order=DEFAULT_ORDER):
        """Mean of V over the cubes ``center + width * (-1/2, 1/2)^n``."""
        centers = np.atleast_2d(np.asarray(centers, dtype=float))
        out = np.empty(centers.shape[0])
        for sl, vals, w in self._box_samples(centers, width, order):
            out[sl] = vals @ w
        return out

    def box_deviation_integrals(self, centers, width, q, averages=None, order=DEFAULT_ORDER):
        """``int_box |avg - V|^q dx`` for each box."""
        centers = np.atleast_2d(np.asarray(centers, dtype=float))
        n = centers.shape[1]
        if averages is None:
            averages = self.box_averages(centers, width, order)
        out = np.empty(centers.shape[0])
        for sl, vals, w in self._box_samples(centers, width, order):
            out[sl] = (np.abs(averages[sl, None] - vals) ** q) @ w
        return out * width**n

    def cell_averages(self, indices, eps, order=DEFAULT_ORDER):
        return self.box_averages(eps * np.asarray(indices, dtype=float), eps, order)

    def cell_integrals(self, indices, eps, order=DEFAULT_ORDER):
        indices = np.atleast_2d(np.asarray(indices))
        if indices.shape[0] == 0:
            return np.zeros(0)
        return self.cell_averages(indices, eps, order) * eps ** indices.shape[1]

    # -- b_eps support ---------------------------------------------------------

    def ball_norm(self, center, radius, p, domain=None):
        """``||V||_{L^p(B(center, radius) cap domain)}``, sampled."""
        pts, w = masked_ball_rule(center, radius)
        vals = self(pts)
        if domain is not None:
            vals = np.where(domain.contains(pts), vals, 0.0)
        if math.isinf(p):
            return float(np.max(vals, initial=0.0))
        return float((np.abs(vals) ** p @ w) ** (1.0 / p))


@dataclass(frozen=True)
class Constant(PotentialSpec):
    kind: ClassVar[str] = "constant"
    c: float = 0.0

    def __post_init__(self):
        if self.c < 0:
            raise ValueError("potential must be nonnegative")

    def __call__(self, x):
        return np.full(np.shape(x)[:-1], float(self.c))

    def box_averages(self, centers, width, order=DEFAULT_ORDER):
        return np.full(np.atleast_2d(centers).shape[0], float(self.c))

    def box_deviation_integrals(self, centers, width, q, averages=None, order=DEFAULT_ORDER):
        return np.zeros(np.atleast_2d(centers).shape[0])


@dataclass(frozen=True)
class HalfSpaceStep(PotentialSpec):
    """``height`` on ``{x[axis] >= threshold}``, zero elsewhere."""

    kind: ClassVar[str] = "half_space_step"
    height: float = 2.0
    threshold: float = 0.0
    axis: int = 0

    def __post_init__(self):
        if self.height < 0:
            raise ValueError("potential must be nonnegative")

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return np.where(x[..., self.axis] >= self.threshold, float(self.height), 0.0)

    def _fractions(self, centers, width):
        c = np.atleast_2d(np.asarray(centers, dtype=float))[:, self.axis]
        return np.clip((c + 0.5 * width - self.threshold) / width, 0.0, 1.0)

    def box_averages(self, centers, width, order=DEFAULT_ORDER):
        return self.height * self._fractions(centers, width)

    def box_deviation_integrals(self, centers, width, q, averages=None, order=DEFAULT_ORDER):
        centers = np.atleast_2d(centers)
        f = self._fractions(centers, width)
        a = self.height
        return width ** centers.shape[1] * (f * (a * (1 - f)) ** q + (1 - f) * (a * f) ** q)


@dataclass(frozen=True)
class Smooth(PotentialSpec):
    """Closed-form smooth potential; ``grad_bound`` bounds ``|grad V|`` if known."""

    kind: ClassVar[str] = "smooth"
    func: Callable = None
    grad_bound: Optional[float] = None

    def __call__(self, x):
        return np.asarray(self.func(np.asarray(x, dtype=float)), dtype=float)


@dataclass(frozen=True)
class Hoelder(PotentialSpec):
    """Hoelder-continuous potential with exponent ``alpha`` and seminorm bound ``seminorm``."""

    kind: ClassVar[str] = "hoelder"
    func: Callable = None
    alpha: float = 1.0
    seminorm: Optional[float] = None

    def __post_init__(self):
        if not 0 < self.alpha <= 1:
            raise ValueError("alpha must lie in (0, 1]")

    def __call__(self, x):
        return np.asarray(self.func(np.asarray(x, dtype=float)), dtype=float)


@dataclass(frozen=True)
class GridSampled(PotentialSpec):
    """Values on a uniform reference grid over ``[lo, hi]``, multilinear in between."""

    kind: ClassVar[str] = "grid_sampled"
    values: np.ndarray = None
    lo: tuple = ()
    hi: tuple = ()
    rtol: float = 1e-4

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if np.any(vals < 0):
            raise ValueError("potential must be nonnegative")
        from scipy.interpolate import RegularGridInterpolator

        axes = [np.linspace(a, b, m) for a, b, m in zip(self.lo, self.hi, vals.shape)]
        interp = RegularGridInterpolator(axes, vals, method="linear")
        object.__setattr__(self, "_interp", interp)
        object.__setattr__(self, "_spacing", np.array([ax[1] - ax[0] for ax in axes]))

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        flat = np.clip(x.reshape(-1, x.shape[-1]), self.lo, self.hi)
        return self._interp(flat).reshape(x.shape[:-1])

    def box_averages(self, centers, width, order=DEFAULT_ORDER):
        centers = np.atleast_2d(np.asarray(centers, dtype=float))
        base = [max(1, int(math.ceil(width / s))) for s in self._spacing]

        def run(mult):
            out = np.empty(centers.shape[0])
            for sl, vals, w in self._box_samples(centers, width, order, tuple(m * mult for m in base)):
                out[sl] = vals @ w
            return out

        prev = run(1)
        for mult in (2, 4):
            if np.prod([m * mult * order for m in base]) > _CHUNK_POINTS:
                break
            cur = run(mult)
            scale = np.maximum(np.abs(cur), np.max(np.abs(cur), initial=0.0) * 1e-12 + 1e-300)
            if np.all(np.abs(cur - prev) <= self.rtol * scale):
                return cur
            prev = cur
        raise QuadratureError(
            f"cell averages over boxes of width {width:.4g} did not converge to rtol={self.rtol}; "
            "the reference grid is too fine for the quadrature budget or too rough for the cell"
        )


def potential_from_config(cfg):
    """Build a potential from a JSON-style dict.

    ``{"kind": "constant", "c": 3}``, ``{"kind": "half_space_step", "height": 2}``,
    ``{"kind": "smooth" | "hoelder", "expr": "1 + sin(pi*x0)", ...}`` where the
    expression sees numpy functions, ``x`` (shape (..., n)) and ``x0, x1, ...``;
    ``{"kind": "grid_sampled", "path": "v.npy", "lo": [...], "hi": [...]}``.
    """
    cfg = dict(cfg)
    kind = cfg.pop("kind")
    common = {k: cfg.pop(k) for k in ("p", "scale") if k in cfg}
    if "p" in common and common["p"] in ("inf", "infinity", None):
        common["p"] = math.inf
    if kind == "constant":
        return Constant(c=float(cfg.get("c", 0.0)), **common)
    if kind == "half_space_step":
        return HalfSpaceStep(
            height=float(cfg.get("height", 2.0)),
            threshold=float(cfg.get("threshold", 0.0)),
            axis=int(cfg.get("axis", 0)),
            **common,
        )
    if kind in ("smooth", "hoelder"):
        func = _expr_function(cfg.pop("expr"))
        if kind == "smooth":
            return Smooth(func=func, grad_bound=cfg.get("grad_bound"), **common)
        return Hoelder(func=func, alpha=float(cfg["alpha"]), seminorm=cfg.get("seminorm"), **common)
    if kind == "grid_sampled":
        values = np.load(cfg["path"]) if "path" in cfg else np.asarray(cfg["values"], dtype=float)
        return GridSampled(values=values, lo=tuple(cfg["lo"]), hi=tuple(cfg["hi"]), **common)
    raise ValueError(f"unknown potential kind {kind!r}")


def _expr_function(expr):
    names = {k: getattr(np, k) for k in dir(np) if not k.startswith("_")}
    code = compile(expr, "<potential>", "eval")

    def func(x):
        env = dict(names)
        env["x"] = x
        for d in range(x.shape[-1]):
            env[f"x{d}"] = x[..., d]
        return np.broadcast_to(eval(code, {"__builtins__": {}}, env), x.shape[:-1]).astype(float)

    func.expr = expr
    return func


# ---------------------------------------------------------------------------
# rate quantities


def cell_average(V, cell, eps, order=DEFAULT_ORDER):
    """Mean of ``V`` over the cell ``eps * (cell + (-1/2, 1/2)^n)``."""
    return float(V.cell_averages(np.atleast_2d(cell), eps, order)[0])


def compute_D(V, params, domain, order=DEFAULT_ORDER):
    """``|| sum_i (V_i - V) 1_{cell_i} ||_{L^n}`` over the interior cells.

    The cellwise L^n norms are combined in the l^n sense, i.e. this is the
    L^n norm of ``V^eps - V`` on the union of cells, ``V^eps`` being the
    piecewise-constant field of cell averages.
    """
    n = params.n
    lattice = interior_cells(domain, params.epsilon)
    if len(lattice) == 0:
        return 0.0
    centers = lattice.centers
    avg = V.box_averages(centers, params.epsilon, order)
    dev = V.box_deviation_integrals(centers, params.epsilon, n, averages=avg, order=order)
    return float(np.sum(dev) ** (1.0 / n))


def cell_deviation_norms(V, params, domain, order=DEFAULT_ORDER):
    """Per-cell ``||V_i - V||_{L^n(cell_i)}`` with the lattice indices."""
    lattice = interior_cells(domain, params.epsilon)
    if len(lattice) == 0:
        return lattice.indices, np.zeros(0)
    avg = V.box_averages(lattice.centers, params.epsilon, order)
    dev = V.box_deviation_integrals(lattice.centers, params.epsilon, params.n, averages=avg, order=order)
    return lattice.indices, dev ** (1.0 / params.n)


def gamma_n(n, beta=None):
    if n < 3:
        raise ValueError("n must be at least 3")
    if n == 3:
        return 0.5
    if n == 4:
        if beta is None or not 0 < beta < 0.5:
            raise ValueError("n = 4 needs beta in (0, 1/2)")
        return 1.0 - beta
    return 1.0


def compute_e(params, p):
    n, eps = params.n, params.epsilon
    if p < n:
        raise ValueError("p must be at least n")
    ip = _inv(p)
    g = gamma_n(n, params.beta)
    return eps ** ((2 - n * ip) * g / (n - 2)) + eps ** (1 - n * ip)


@dataclass
class BBracket:
    b_prime_lower: float
    b_prime_upper: float
    b_lower: float
    b_upper: float
    widened: bool = False
    widening: float = 0.0
    centers: int = 0


def _b_from_prime(bp, n, eps, p):
    return bp ** (1.0 / (2 * (n - 2))) + eps ** (n * _inv(p))


def jung_radius(diameter, n):
    """Radius of a ball containing every set of the given diameter in R^n."""
    return diameter * math.sqrt(n / (2.0 * (n + 1)))


def compute_b(V, params=None, p=None, domain=None, max_centers=4096, n=None, eps=None):
    """Bracket for ``b'_eps = sup ||V||_{L^p(E)}`` over sets of diameter ``<= eps sqrt(n)``.

    Lower end: balls of that diameter.  Upper end: balls of the Jung radius
    (every admissible set fits in one), enlarged by the half-diagonal of the
    centre search grid.  ``b_eps`` is reported at both ends.
    """
    if params is not None:
        n, eps = params.n, params.epsilon
    p = V.p if p is None else p
    if p < n:
        raise ValueError("p must be at least n")
    diam = eps * math.sqrt(n)
    r_lo = 0.5 * diam
    r_hi = jung_radius(diam, n)

    if isinstance(V, (Constant, HalfSpaceStep)):
        level = V.c if isinstance(V, Constant) else V.height
        if domain is not None and isinstance(V, HalfSpaceStep):
            if domain.hi[V.axis] < V.threshold:
                level = 0.0
        if math.isinf(p):
            lo = hi = float(level)
        else:
            lo = level * ball_volume(r_lo, n) ** (1.0 / p)
            hi = level * ball_volume(r_hi, n) ** (1.0 / p)
        return BBracket(lo, hi, _b_from_prime(lo, n, eps, p), _b_from_prime(hi, n, eps, p))

    if domain is None:
        raise ValueError("sampled potentials need the domain to search over")
    lo_b, hi_b = np.array(domain.lo), np.array(domain.hi)
    per_axis = max(2, int(round(max_centers ** (1.0 / n))))
    axes = [np.linspace(a, b, per_axis) for a, b in zip(lo_b, hi_b)]
    spacing = max(ax[1] - ax[0] for ax in axes)
    widening = 0.5 * spacing * math.sqrt(n)
    centers = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, n)
    lower = max(V.ball_norm(c, r_lo, p, domain) for c in centers)
    upper = max(V.ball_norm(c, r_hi + widening, p, domain) for c in centers)
    upper = max(upper, lower)
    return BBracket(
        lower,
        upper,
        _b_from_prime(lower, n, eps, p),
        _b_from_prime(upper, n, eps, p),
        widened=bool(widening > 0.1 * r_hi),
        widening=widening,
        centers=centers.shape[0],
    )


def wirtinger_check(q, cell, samples, order=10, reference=True):
    """Largest ``||u - u_i||_{L^q} / (eps ||grad u||_{L^q})`` over ``samples`` on one cell.

    ``cell`` is ``(index, eps)``.  Each sample is ``(u, grad_u)``.  With
    ``reference`` the callables are profiles on ``(-1/2, 1/2)^n`` and are
    transported to the cell by ``x -> x / eps - index``.
    """
    index, eps = cell
    index = np.asarray(index, dtype=float)
    n = index.size
    ref, w = reference_cube(n, order, 1)
    pts = eps * (index + ref)
    vol = eps**n
    worst = 0.0
    for u, grad_u in samples:
        if reference:
            vals = u(pts / eps - index)
            grads = grad_u(pts / eps - index) / eps
        else:
            vals = u(pts)
            grads = grad_u(pts)
        mean = vals @ w
        num = ((np.abs(vals - mean) ** q) @ w * vol) ** (1.0 / q)
        den = eps * ((np.linalg.norm(grads, axis=-1) ** q) @ w * vol) ** (1.0 / q)
        size = ((np.abs(vals) ** q) @ w * vol) ** (1.0 / q)
        if num <= 1e-13 * size:
            num = 0.0
        if den == 0.0:
            ratio = 0.0 if num == 0.0 else math.inf
        else:
            ratio = num / den
        worst = max(worst, ratio)
    return worst
