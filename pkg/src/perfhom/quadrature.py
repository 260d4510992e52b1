"""Gauss-Legendre rules on boxes, balls and spherical shells.

All rules return ``(points, weights)`` with ``points`` of shape ``(m, n)``.
"""
from functools import lru_cache

import numpy as np
from scipy.special import gamma


@lru_cache(maxsize=64)
def _leggauss(order):
    x, w = np.polynomial.legendre.leggauss(order)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def gauss_interval(a, b, order):
    """Gauss-Legendre nodes and weights on ``[a, b]``."""
    x, w = _leggauss(order)
    half = 0.5 * (b - a)
    return 0.5 * (a + b) + half * x, half * w


def composite_interval(breaks, order):
    """Composite Gauss rule over consecutive intervals of ``breaks``."""
    breaks = np.asarray(breaks, dtype=float)
    xs, ws = [], []
    for a, b in zip(breaks[:-1], breaks[1:]):
        if b > a:
            x, w = gauss_interval(a, b, order)
            xs.append(x)
            ws.append(w)
    if not xs:
        return np.empty(0), np.empty(0)
    return np.concatenate(xs), np.concatenate(ws)


@lru_cache(maxsize=64)
def reference_cube(n, order, subdiv=1):
    """Tensor rule on the unit cube ``(-1/2, 1/2)^n``; weights sum to 1.

    ``subdiv`` is an int or a tuple giving the number of equal sub-intervals
    per axis, each carrying ``order`` Gauss points.
    """
    if np.isscalar(subdiv):
        subdiv = (int(subdiv),) * n
    axes_x, axes_w = [], []
    for m in subdiv:
        x, w = composite_interval(np.linspace(-0.5, 0.5, m + 1), order)
        axes_x.append(x)
        axes_w.append(w)
    grids = np.meshgrid(*axes_x, indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=-1)
    wts = axes_w[0]
    for w in axes_w[1:]:
        wts = np.multiply.outer(wts, w)
    pts.setflags(write=False)
    wts = np.ascontiguousarray(wts.ravel())
    wts.setflags(write=False)
    return pts, wts


def box_rule(lo, hi, order, subdiv=1):
    """Tensor Gauss rule on the box ``[lo, hi]``."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    ref, w = reference_cube(lo.size, order, subdiv if np.isscalar(subdiv) else tuple(subdiv))
    width = hi - lo
    return 0.5 * (lo + hi) + ref * width, w * np.prod(width)


@lru_cache(maxsize=16)
def sphere_rule(n_theta=8):
    """Product rule on the unit sphere S^2: Gauss in cos(theta), uniform in phi.

    Exact for spherical harmonics of degree < 2 * n_theta; weights sum to 4 pi.
    """
    ct, wt = _leggauss(n_theta)
    n_phi = 2 * n_theta
    phi = 2 * np.pi * np.arange(n_phi) / n_phi
    st = np.sqrt(1.0 - ct**2)
    dirs = np.stack(
        [
            np.outer(st, np.cos(phi)).ravel(),
            np.outer(st, np.sin(phi)).ravel(),
            np.repeat(ct, n_phi),
        ],
        axis=-1,
    )
    w = np.repeat(wt, n_phi) * (2 * np.pi / n_phi)
    dirs.setflags(write=False)
    w.setflags(write=False)
    return dirs, w


def shell_rule(center, radial_breaks, order=8, n_theta=8):
    """Rule for the 3-d region between the radii in ``radial_breaks``.

    The radial direction is split at every break so integrands that are
    smooth between breaks are integrated to high order.
    """
    r, wr = composite_interval(radial_breaks, order)
    dirs, wd = sphere_rule(n_theta)
    pts = np.asarray(center, dtype=float) + (r[:, None, None] * dirs[None, :, :]).reshape(-1, 3)
    w = np.outer(wr * r**2, wd).ravel()
    return pts, w, np.repeat(r, dirs.shape[0])


def ball_rule(center, radius, order=8, n_theta=8):
    """Rule on the 3-d ball of ``radius`` (a shell with inner radius 0)."""
    pts, w, _ = shell_rule(center, [0.0, radius], order, n_theta)
    return pts, w


def masked_ball_rule(center, radius, order=6, subdiv=2):
    """Dimension-agnostic ball rule: tensor Gauss on the bounding cube, masked.

    Weights are rescaled so that they sum to the exact ball volume.  This is
    low order at the sphere surface and is only used for bracketing sups.
    """
    center = np.asarray(center, dtype=float)
    n = center.size
    pts, w = box_rule(center - radius, center + radius, order, subdiv)
    inside = np.sum((pts - center) ** 2, axis=1) <= radius**2
    pts, w = pts[inside], w[inside]
    if w.size:
        w = w * (ball_volume(radius, n) / w.sum())
    return pts, w


def ball_volume(r, n):
    return np.pi ** (n / 2) / gamma(n / 2 + 1) * r**n
