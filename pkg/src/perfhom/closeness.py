"""Identification operators for the perforated problem and quadrature
estimates of how close the two quadratic forms are.

For a hole ``K_i = B(x_i, d_i)`` in the cell of index ``i``:

* ``chi_i(x)  = chi(|x - x_i| / d_i)`` cuts off at ``2 d_i``,
* ``chih_i(x) = chi((2/kappa)(|x - x_i| - d_i) / eps)`` cuts off at ``d_i + kappa eps``,
* ``P_i f = (f - f_i) chi_i`` and ``Q_i f = f_i H_i chih_i`` with ``f_i`` the cell mean
  and ``H_i`` the equilibrium potential of ``K_i``,
* ``J1 f = f - sum_i (P_i + Q_i) f``, which vanishes on every hole.

Integrals over the perforated domain are split as
``int_Omega g0 - sum_i int_{B(rho_i)} g0 + sum_i int_{B(rho_i) minus K_i} g`` where
``rho_i = max(2 d_i, d_i + kappa eps)`` bounds the corrector supports and
``g0`` is the same integrand with all correctors dropped (it agrees with ``g``
outside the balls).  The first term uses tensor Gauss rules aligned with the
cells, the others radial Gauss times a product rule on the sphere.
"""
import math
from dataclasses import dataclass, field

import numpy as np

from .capacity import grad_potential_H, potential_H
from .geometry import DEFAULT_KAPPA
from .potential import RateParams, compute_b, compute_D, compute_e
from .quadrature import composite_interval, reference_cube, shell_rule

# ---------------------------------------------------------------------------
# cutoff profile


@dataclass(frozen=True)
class CutoffSpec:
    """Quintic smoothstep: 1 below 1, 0 above 2, C^2 and monotone in between."""

    kappa: float = DEFAULT_KAPPA

    @staticmethod
    def chi(t):
        s = np.clip(np.asarray(t, dtype=float) - 1.0, 0.0, 1.0)
        return 1.0 - s**3 * (10.0 - 15.0 * s + 6.0 * s**2)

    @staticmethod
    def dchi(t):
        s = np.clip(np.asarray(t, dtype=float) - 1.0, 0.0, 1.0)
        return -30.0 * s**2 * (1.0 - s) ** 2


# ---------------------------------------------------------------------------
# test functions


@dataclass(frozen=True)
class TestFunction:
    """A smooth function vanishing on the boundary of the box, with closed-form derivatives."""

    value: object
    grad: object
    laplacian: object
    label: str = ""

    __test__ = False  # not a pytest class

    def __call__(self, x):
        return self.value(x)


def sine_mode(domain, k):
    """``prod_d sin(k_d pi (x_d - lo_d) / L_d)``."""
    lo = np.asarray(domain.lo, dtype=float)
    L = np.asarray(domain.hi, dtype=float) - lo
    w = np.pi * np.asarray(k, dtype=float) / L

    def parts(x):
        arg = (np.asarray(x, dtype=float) - lo) * w
        return np.sin(arg), np.cos(arg)

    def value(x):
        s, _ = parts(x)
        return np.prod(s, axis=-1)

    def grad(x):
        s, c = parts(x)
        out = np.empty_like(s)
        for d in range(s.shape[-1]):
            others = np.prod(np.delete(s, d, axis=-1), axis=-1)
            out[..., d] = w[d] * c[..., d] * others
        return out

    def laplacian(x):
        return -np.sum(w**2) * value(x)

    return TestFunction(value, grad, laplacian, f"sine{tuple(int(v) for v in k)}")


def bump(center, radius):
    """``(1 - |x - c|^2 / r^2)^3`` inside the ball, zero outside (C^2)."""
    c = np.asarray(center, dtype=float)
    r2 = float(radius) ** 2

    def q(x):
        diff = np.asarray(x, dtype=float) - c
        return np.maximum(1.0 - np.sum(diff**2, axis=-1) / r2, 0.0), diff

    def value(x):
        qq, _ = q(x)
        return qq**3

    def grad(x):
        qq, diff = q(x)
        return (-6.0 * qq**2 / r2)[..., None] * diff

    def laplacian(x):
        qq, diff = q(x)
        n = diff.shape[-1]
        return -6.0 * n * qq**2 / r2 + 24.0 * qq * np.sum(diff**2, axis=-1) / r2**2

    return TestFunction(value, grad, laplacian, f"bump{tuple(np.round(c, 6))}")


@dataclass
class TestFunctionSet:
    functions: list

    __test__ = False

    def __len__(self):
        return len(self.functions)

    def __iter__(self):
        return iter(self.functions)

    @classmethod
    def sine_modes(cls, domain, kmax=2):
        n = domain.n
        ks = np.stack(np.meshgrid(*([np.arange(1, kmax + 1)] * n), indexing="ij"), axis=-1).reshape(-1, n)
        return cls([sine_mode(domain, k) for k in ks])

    @classmethod
    def standard(cls, domain, kmax=2, bumps=2, seed=0):
        """Sine modes up to ``kmax`` per axis plus ``bumps`` bumps at seeded interior centres."""
        fs = cls.sine_modes(domain, kmax).functions
        rng = np.random.default_rng(seed)
        lo = np.asarray(domain.lo, dtype=float)
        hi = np.asarray(domain.hi, dtype=float)
        radius = 0.3 * float(np.min(hi - lo))
        for _ in range(bumps):
            c = rng.uniform(lo + radius, hi - radius)
            fs.append(bump(c, radius))
        return cls(fs)


# ---------------------------------------------------------------------------
# correctors


def _cell_mean(f, index, eps, order=6):
    ref, w = reference_cube(len(index), order)
    return float(f(eps * (np.asarray(index, dtype=float) + ref)) @ w)


def _radial(x, center):
    diff = np.asarray(x, dtype=float) - np.asarray(center, dtype=float)
    r = np.linalg.norm(diff, axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        unit = np.where(r[..., None] > 0, diff / r[..., None], 0.0)
    return r, unit


def corrector_P(f, j, holes, x, cutoff=None, f_mean=None, with_grad=False):
    """``(f - f_j) chi(|x - x_j| / d_j)`` for hole ``j`` at points ``x``."""
    cutoff = CutoffSpec(holes.kappa) if cutoff is None else cutoff
    x = np.asarray(x, dtype=float)
    d = holes.radii[j]
    if d <= 0:
        zero = np.zeros(x.shape[:-1])
        return (zero, np.zeros_like(x)) if with_grad else zero
    if f_mean is None:
        f_mean = _cell_mean(f, holes.indices[j], holes.eps)
    r, unit = _radial(x, holes.centers[j])
    t = r / d
    chi = cutoff.chi(t)
    fv = f.value(x) - f_mean
    val = fv * chi
    if not with_grad:
        return val
    grad = f.grad(x) * chi[..., None] + (fv * cutoff.dchi(t) / d)[..., None] * unit
    return val, grad


def corrector_Q(f, j, holes, x, cutoff=None, f_mean=None, with_grad=False):
    """``f_j H_j(x) chi((2/kappa)(|x - x_j| - d_j) / eps)`` for hole ``j``."""
    cutoff = CutoffSpec(holes.kappa) if cutoff is None else cutoff
    x = np.asarray(x, dtype=float)
    d = holes.radii[j]
    if d <= 0:
        zero = np.zeros(x.shape[:-1])
        return (zero, np.zeros_like(x)) if with_grad else zero
    if f_mean is None:
        f_mean = _cell_mean(f, holes.indices[j], holes.eps)
    c = holes.centers[j]
    n = holes.n
    scale = 2.0 / (cutoff.kappa * holes.eps)
    r, unit = _radial(x, c)
    t = scale * (r - d)
    chih = cutoff.chi(t)
    H = potential_H(x, c, d, n)
    val = f_mean * H * chih
    if not with_grad:
        return val
    grad = f_mean * (grad_potential_H(x, c, d, n) * chih[..., None] + (H * cutoff.dchi(t) * scale)[..., None] * unit)
    return val, grad


class _CellLookup:
    """Maps points to the hole of the lattice cell containing them (-1 if none)."""

    def __init__(self, holes):
        self.eps = holes.eps
        idx = holes.indices
        self.base = idx.min(axis=0) if len(holes) else np.zeros(holes.n, dtype=np.int64)
        shape = tuple(idx.max(axis=0) - self.base + 1) if len(holes) else (0,) * holes.n
        self.table = np.full(shape, -1, dtype=np.int64)
        if len(holes):
            self.table[tuple((idx - self.base).T)] = np.arange(len(holes))

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        out = np.full(x.shape[:-1], -1, dtype=np.int64)
        if self.table.size == 0:
            return out
        k = np.rint(x / self.eps).astype(np.int64) - self.base
        ok = np.all((k >= 0) & (k < np.array(self.table.shape)), axis=-1)
        out[ok] = self.table[tuple(k[ok].T)]
        return out


class J1Function:
    """``J1 f`` as an evaluable function with gradient."""

    def __init__(self, f, holes, cutoff=None):
        self.f = f
        self.holes = holes
        self.cutoff = CutoffSpec(holes.kappa) if cutoff is None else cutoff
        self.lookup = _CellLookup(holes)
        self.means = np.array(
            [_cell_mean(f, i, holes.eps) if d > 0 else 0.0 for i, d in zip(holes.indices, holes.radii)]
        )

    def correction(self, x, with_grad=False):
        """``sum_i (P_i + Q_i) f`` at ``x``."""
        x = np.asarray(x, dtype=float)
        flat = x.reshape(-1, x.shape[-1])
        cell = self.lookup(flat)
        val = np.zeros(flat.shape[0])
        grad = np.zeros_like(flat)
        for j in np.unique(cell[cell >= 0]):
            if self.holes.radii[j] <= 0:
                continue
            sel = cell == j
            pv, pg = corrector_P(self.f, j, self.holes, flat[sel], self.cutoff, self.means[j], True)
            qv, qg = corrector_Q(self.f, j, self.holes, flat[sel], self.cutoff, self.means[j], True)
            val[sel] = pv + qv
            grad[sel] = pg + qg
        val = val.reshape(x.shape[:-1])
        return (val, grad.reshape(x.shape)) if with_grad else val

    def value(self, x):
        return self.f.value(x) - self.correction(x)

    def grad(self, x):
        _, g = self.correction(x, with_grad=True)
        return self.f.grad(x) - g

    __call__ = value


def apply_J1(f, holes, cutoff=None):
    return J1Function(f, holes, cutoff)


# ---------------------------------------------------------------------------
# quadrature on the perforated domain


def support_radius(d, eps, kappa):
    return np.maximum(2.0 * d, d + kappa * eps)


class PerforatedRule:
    """Quadrature pieces for integrals over the box, the cells and the holes."""

    def __init__(self, domain, holes, order=6, radial_order=6, n_theta=6):
        if holes.n != 3:
            raise ValueError("the spherical rules are three-dimensional")
        eps, kappa = holes.eps, holes.kappa
        self.holes = holes
        # bulk: Gauss on every interval between cell faces
        axes, weights = [], []
        for a, b in zip(domain.lo, domain.hi):
            faces = eps * (np.arange(math.floor(a / eps - 0.5), math.ceil(b / eps + 0.5) + 1) + 0.5)
            breaks = np.unique(np.concatenate([[a, b], faces[(faces > a) & (faces < b)]]))
            x, w = composite_interval(breaks, order)
            axes.append(x)
            weights.append(w)
        grids = np.meshgrid(*axes, indexing="ij")
        self.bulk = np.stack([g.ravel() for g in grids], axis=-1)
        w = weights[0]
        for ww in weights[1:]:
            w = np.multiply.outer(w, ww)
        self.bulk_w = w.ravel()
        self.bulk_cell = _CellLookup(holes)(self.bulk)

        rho = support_radius(holes.radii, eps, kappa)
        live = np.flatnonzero(holes.radii > 0)
        if live.size and np.any(rho[live] > 0.5 * eps * (1 + 1e-12)):
            j = live[np.argmax(rho[live])]
            raise ValueError(
                f"corrector support radius {rho[j]:.4g} exceeds half the cell ({0.5 * eps:.4g}); "
                "holes must satisfy d <= eps/4"
            )
        balls, ball_w, ball_cell = [], [], []
        shells, shell_w, shell_cell = [], [], []
        holes_p, holes_w = [], []
        for j in live:
            c, d = holes.centers[j], holes.radii[j]
            p, ww, _ = shell_rule(c, [0.0, rho[j]], radial_order, n_theta)
            balls.append(p)
            ball_w.append(ww)
            ball_cell.append(np.full(ww.size, j))
            br = np.unique([d, 2 * d, d + 0.5 * kappa * eps, d + kappa * eps, rho[j]])
            p, ww, _ = shell_rule(c, br[br <= rho[j]], radial_order, n_theta)
            shells.append(p)
            shell_w.append(ww)
            shell_cell.append(np.full(ww.size, j))
            p, ww, _ = shell_rule(c, [0.0, d], radial_order, n_theta)
            holes_p.append(p)
            holes_w.append(ww)

        def cat(parts, width=None):
            if parts:
                return np.concatenate(parts)
            return np.empty((0, width)) if width else np.empty(0)

        self.ball, self.ball_w, self.ball_cell = cat(balls, 3), cat(ball_w), cat(ball_cell).astype(np.int64)
        self.shell, self.shell_w, self.shell_cell = cat(shells, 3), cat(shell_w), cat(shell_cell).astype(np.int64)
        self.hole, self.hole_w = cat(holes_p, 3), cat(holes_w)
        self.shell_slices = {}
        start = 0
        for j, ww in zip(live, shell_w):
            self.shell_slices[int(j)] = slice(start, start + ww.size)
            start += ww.size

    def perforated(self, g0_bulk, g0_ball, g_shell):
        """``int_{Omega_eps} g`` from the integrand sampled on the three point sets."""
        return float(self.bulk_w @ g0_bulk - self.ball_w @ g0_ball + self.shell_w @ g_shell)

    def cell_means(self, values):
        """Cell means of a function sampled on the bulk points."""
        m = len(self.holes)
        inside = self.bulk_cell >= 0
        num = np.bincount(self.bulk_cell[inside], self.bulk_w[inside] * values[inside], minlength=m)
        return num / self.holes.eps**self.holes.n


# ---------------------------------------------------------------------------
# closeness estimates


@dataclass
class ClosenessReport:
    eps: float
    c1a: float
    c2: float
    c4a: float
    c5: float
    j_terms: tuple  # (J1, J2, J3) for the pair attaining c5, same normalisation
    predicted: float  # D + b e with b at the upper end of its bracket
    D: float
    b: float
    e: float
    n_f: int
    n_u: int
    c5_pairs: np.ndarray = field(repr=False, default=None)
    decomposition_gap: float = 0.0  # |total + J1 + J2 + J3| in units of the c5 normalisation


class _Sampled:
    """Values and gradients of ``J1 g`` (or of ``g`` when no correction is wanted) on a rule."""

    def __init__(self, g, rule, cutoff):
        holes = rule.holes
        self.g = g
        means = rule.cell_means(g.value(rule.bulk))
        self.means = np.where(holes.radii > 0, means, 0.0)
        self.bulk_v, self.bulk_g = g.value(rule.bulk), g.grad(rule.bulk)
        self.ball_v, self.ball_g = g.value(rule.ball), g.grad(rule.ball)
        self.shell_v, self.shell_g = g.value(rule.shell), g.grad(rule.shell)
        self.hole_v = g.value(rule.hole)
        # corrector parts on the shells
        m = rule.shell.shape[0]
        self.P_v, self.P_g = np.zeros(m), np.zeros((m, 3))
        self.Q_v, self.Q_g = np.zeros(m), np.zeros((m, 3))
        for j, sel in rule.shell_slices.items():
            pts = rule.shell[sel]
            self.P_v[sel], self.P_g[sel] = corrector_P(g, j, holes, pts, cutoff, self.means[j], True)
            self.Q_v[sel], self.Q_g[sel] = corrector_Q(g, j, holes, pts, cutoff, self.means[j], True)

    @property
    def corr_v(self):
        return self.P_v + self.Q_v

    @property
    def corr_g(self):
        return self.P_g + self.Q_g


def estimate_closeness(fs, us, eps, holes, V, domain, cutoff=None, p=None, beta=0.25, rule=None):
    """Sample maxima of the closeness functionals over ``fs`` x ``us``.

    ``us`` are smooth functions ``g``; the perforated-domain test functions are
    ``u = J1 g``, which lie in the form domain of the perforated problem.

    * c1a: ``||f - J1 f||_{L2(Omega_eps)} / ||f||_{H1_V}``
    * c2:  ``|<f, u>_{Omega_eps} - <f, ext u>_Omega|``
    * c4a: ``||f 1_holes||_{L2} / ||f||_{H1_V}``
    * c5:  ``|a_eps(J1 f, u) - a(f, ext u)| / (||(A + 1) f|| ||u||_{H1})``

    ``||f||_{H1_V}^2 = ||grad f||^2 + int V f^2 + ||f||^2``.
    """
    cutoff = CutoffSpec(holes.kappa) if cutoff is None else cutoff
    rule = PerforatedRule(domain, holes) if rule is None else rule
    n = holes.n
    p = V.p if p is None else p
    params = RateParams(n=n, epsilon=eps, beta=beta)
    D = compute_D(V, params, domain)
    b = compute_b(V, params, p, domain=domain).b_upper
    e = compute_e(params, p)

    Vb, Vball, Vsh = V(rule.bulk), V(rule.ball), V(rule.shell)
    F = [_Sampled(f, rule, cutoff) for f in fs]
    U = [_Sampled(g, rule, cutoff) for g in us]

    c1a = c4a = c2 = 0.0
    f_norms, f_graph = [], []
    for s, f in zip(F, fs):
        h1 = rule.bulk_w @ (np.sum(s.bulk_g**2, axis=1) + (Vb + 1.0) * s.bulk_v**2)
        graph = -f.laplacian(rule.bulk) + (Vb + 1.0) * s.bulk_v
        f_norms.append(math.sqrt(h1))
        f_graph.append(math.sqrt(rule.bulk_w @ graph**2))
        if h1 == 0:
            continue
        c1a = max(c1a, math.sqrt(max(rule.shell_w @ s.corr_v**2, 0.0)) / math.sqrt(h1))
        c4a = max(c4a, math.sqrt(max(rule.hole_w @ s.hole_v**2, 0.0)) / math.sqrt(h1))

    c5 = 0.0
    j_terms = (0.0, 0.0, 0.0)
    pairs = np.zeros((len(F), len(U)))
    gap = 0.0
    outside = rule.bulk_cell < 0
    in_cells = ~outside
    for a, s in enumerate(F):
        for k, t in enumerate(U):
            # u = J1 g: in the far field u = g
            u_sh, gu_sh = t.shell_v - t.corr_v, t.shell_g - t.corr_g
            u_norm2 = rule.perforated(
                np.sum(t.bulk_g**2, axis=1) + t.bulk_v**2,
                np.sum(t.ball_g**2, axis=1) + t.ball_v**2,
                np.sum(gu_sh**2, axis=1) + u_sh**2,
            )
            # (C2): inner product on Omega_eps against the zero extension on Omega
            fu = (s.bulk_v * t.bulk_v, s.ball_v * t.ball_v, s.shell_v * u_sh)
            inner_eps = rule.perforated(*fu)
            inner_full = rule.perforated(*fu) + float(rule.hole_w @ (s.hole_v * 0.0))
            c2 = max(c2, abs(inner_eps - inner_full))

            # the two forms
            jf_sh = s.shell_g - s.corr_g
            a_eps = rule.perforated(
                np.sum(s.bulk_g * t.bulk_g, axis=1),
                np.sum(s.ball_g * t.ball_g, axis=1),
                np.sum(jf_sh * gu_sh, axis=1),
            )
            a_lim = rule.perforated(
                np.sum(s.bulk_g * t.bulk_g, axis=1) + Vb * s.bulk_v * t.bulk_v,
                np.sum(s.ball_g * t.ball_g, axis=1) + Vball * s.ball_v * t.ball_v,
                np.sum(s.shell_g * gu_sh, axis=1) + Vsh * s.shell_v * u_sh,
            )
            total = a_eps - a_lim

            # term-by-term: J1 over the Y_i, J2 over the Y_i with the potential, J3 on the boundary layer
            j1 = float(rule.shell_w @ np.sum(gu_sh * s.P_g, axis=1))
            vfu_cells = (
                rule.bulk_w[in_cells] @ (Vb * s.bulk_v * t.bulk_v)[in_cells]
                - rule.ball_w @ (Vball * s.ball_v * t.ball_v)
                + rule.shell_w @ (Vsh * s.shell_v * u_sh)
            )
            j2 = float(rule.shell_w @ np.sum(gu_sh * s.Q_g, axis=1) + vfu_cells)
            j3 = float(rule.bulk_w[outside] @ (Vb * s.bulk_v * t.bulk_v)[outside])
            denom = f_graph[a] * math.sqrt(max(u_norm2, 0.0))
            if denom == 0:
                continue
            gap = max(gap, abs(total + j1 + j2 + j3) / denom)
            ratio = abs(total) / denom
            pairs[a, k] = ratio
            if ratio >= c5:
                c5 = ratio
                j_terms = (abs(j1) / denom, abs(j2) / denom, abs(j3) / denom)

    return ClosenessReport(
        eps=float(eps),
        c1a=c1a,
        c2=c2,
        c4a=c4a,
        c5=c5,
        j_terms=j_terms,
        predicted=D + b * e,
        D=D,
        b=b,
        e=e,
        n_f=len(F),
        n_u=len(U),
        c5_pairs=pairs,
        decomposition_gap=gap,
    )
