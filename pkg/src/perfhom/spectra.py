"""Smallest eigenvalues, a dense oracle, and resolvent comparisons.

The Krylov operator throughout is the resolvent ``(A + 1)^-1``, applied by
preconditioned CG, so eigenvalues come out as ``1/theta - 1``.
"""
import csv
import logging
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
import scipy.linalg as sla

from .linalg import ShiftedSolver
from .operators import extend, restrict

logger = logging.getLogger(__name__)

DENSE_LIMIT = 5000


class EigenSolverError(RuntimeError):
    pass


@dataclass
class Spectrum:
    values: np.ndarray
    residuals: np.ndarray
    iterations: int = 0
    solves: int = 0
    vectors: np.ndarray = field(default=None, repr=False)

    def __len__(self):
        return self.values.size

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["k", "lambda", "residual"])
            for k, (lam, res) in enumerate(zip(self.values, self.residuals), start=1):
                w.writerow([k, repr(float(lam)), repr(float(res))])


def _matrix(A):
    return A.matrix if hasattr(A, "matrix") else A


def dense_eigs(A, k=None):
    """All (or the ``k`` smallest) eigenvalues by LAPACK ``eigh``."""
    M = _matrix(A)
    N = M.shape[0]
    if N > DENSE_LIMIT:
        raise ValueError(f"dimension {N} exceeds the dense limit {DENSE_LIMIT}")
    dense = M.toarray() if hasattr(M, "toarray") else np.asarray(M, dtype=float)
    subset = None if k is None or k >= N else (0, k - 1)
    vals, vecs = sla.eigh(dense, subset_by_index=subset)
    res = np.linalg.norm(dense @ vecs - vecs * vals, axis=0)
    return Spectrum(vals, res, vectors=vecs)


def _orthonormalize(W, basis, drop_tol=1e-10):
    """Orthogonalise ``W`` against ``basis`` (twice) and return an orthonormal, rank-revealed block."""
    for _ in range(2):
        if basis is not None:
            W = W - basis @ (basis.T @ W)
    Q, R, _ = sla.qr(W, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    keep = diag > drop_tol * max(1.0, diag[0] if diag.size else 0.0)
    Q = Q[:, keep]
    if basis is not None and Q.shape[1]:
        Q = Q - basis @ (basis.T @ Q)
        Q, _ = np.linalg.qr(Q)
    return Q


def smallest_eigs(A, k=6, tol=1e-8, block=None, max_basis=None, seed=0, solve_tol=None, solver=None):
    """The ``k`` smallest eigenvalues of a symmetric positive semidefinite operator.

    Block Krylov iteration on ``(A + 1)^-1`` with full reorthogonalisation and
    Rayleigh-Ritz on the whole basis.  A unit Ritz pair is accepted once
    ``||A x - lambda x|| <= tol * ||A||_inf``; ``residuals`` holds the raw
    ``||A x - lambda x||``.
    """
    M = _matrix(A)
    N = M.shape[0]
    if k < 1:
        raise ValueError("k must be at least 1")
    if k > N:
        raise ValueError(f"asked for {k} eigenvalues of a {N}x{N} operator")
    block = min(N, 4 if block is None else block)
    max_basis = min(N, max(12 * k, 80) if max_basis is None else max_basis)
    scale = max(1.0, float(abs(M).sum(axis=1).max()))
    if solve_tol is None:
        solve_tol = min(1e-3 * tol, 1e-10)
    if solver is None:
        solver = ShiftedSolver(M, 1.0, tol=solve_tol)
    rng = np.random.default_rng(seed)

    basis = _orthonormalize(rng.standard_normal((N, block)), None)
    H = np.zeros((0, 0))
    steps = 0
    new = basis
    while True:
        W = solver.solve_block(new)
        steps += 1
        # extend the projected matrix with the new block column
        m_old = H.shape[0]
        col = basis.T @ W
        H_new = np.zeros((basis.shape[1], basis.shape[1]))
        H_new[:m_old, :m_old] = H
        H_new[:, m_old:] = col
        H_new[m_old:, :] = col.T
        H = 0.5 * (H_new + H_new.T)

        theta, Y = np.linalg.eigh(H)
        order = np.argsort(theta)[::-1][:k]
        theta, Y = theta[order], Y[:, order]
        if theta.size >= k:
            X = basis @ Y
            lam = 1.0 / theta - 1.0
            R = M @ X - X * lam
            res = np.linalg.norm(R, axis=0)
            if np.all(res <= tol * scale):
                break
        else:
            res = np.full(k, np.inf)
        if basis.shape[1] >= max_basis:
            raise EigenSolverError(
                f"Krylov basis reached {basis.shape[1]} vectors with residuals {res}"
            )
        new = _orthonormalize(W, basis)
        if new.shape[1] == 0:
            # invariant subspace: restart with fresh directions
            new = _orthonormalize(rng.standard_normal((N, block)), basis)
            if new.shape[1] == 0:
                X = basis @ Y
                lam = 1.0 / theta - 1.0
                res = np.linalg.norm(M @ X - X * lam, axis=0)
                break
        new = new[:, : max_basis - basis.shape[1]]
        basis = np.hstack([basis, new])

    srt = np.argsort(lam)
    return Spectrum(lam[srt], res[srt], iterations=steps, solves=solver.calls, vectors=X[:, srt])


class SpectralMetric(NamedTuple):
    value: float
    tail_bound: float
    K: int


def spectral_metric(spec_eps, spec, K=None):
    """``max_{k <= K} |1/(lambda_eps_k + 1) - 1/(lambda_k + 1)|`` with the bound for ``k > K``."""
    a = np.asarray(getattr(spec_eps, "values", spec_eps), dtype=float)
    b = np.asarray(getattr(spec, "values", spec), dtype=float)
    K = min(a.size, b.size) if K is None else K
    if K > a.size or K > b.size:
        raise ValueError(f"K={K} exceeds the available eigenvalues ({a.size}, {b.size})")
    if K == 0:
        return SpectralMetric(0.0, math.inf, 0)
    diff = np.abs(1.0 / (a[:K] + 1.0) - 1.0 / (b[:K] + 1.0))
    tail = max(1.0 / (a[K - 1] + 1.0), 1.0 / (b[K - 1] + 1.0))
    return SpectralMetric(float(np.max(diff)), float(tail), K)


class ResolventDiff(NamedTuple):
    norm: float
    sign: int
    iterations: int
    converged: bool


class ResolventDifference:
    """``D = extend (A_eps + 1)^-1 restrict - (A + 1)^-1`` acting on full-grid vectors."""

    def __init__(self, A_eps, A, mask=None, tol=1e-11, solvers=None):
        self.mask = mask if mask is not None else getattr(A_eps, "grid", None)
        if solvers is None:
            solvers = (ShiftedSolver(A_eps, 1.0, tol=tol), ShiftedSolver(A, 1.0, tol=tol))
        self.solver_eps, self.solver = solvers
        self.N = _matrix(A).shape[0]
        self._warm_eps = None
        self._warm = None

    def __call__(self, x, warm=False):
        x_eps = restrict(x, self.mask) if self.mask is not None else x
        y_eps = self.solver_eps.solve(x_eps, x0=self._warm_eps if warm else None)
        y = self.solver.solve(x, x0=self._warm if warm else None)
        if warm:
            self._warm_eps, self._warm = y_eps, y
        out = extend(y_eps, self.mask) if self.mask is not None else y_eps.copy()
        return out - y


def resolvent_diff_norm(
    A_eps, A, mask=None, tol=1e-6, maxiter=300, window=5, seed=0, solve_tol=1e-11, solvers=None
):
    """Power iteration for ``||D||`` and the sign of its extreme eigenvalue.

    Stops once the norm estimate changed by less than ``tol`` (relative) over
    ``window`` consecutive iterations.  ``solvers`` may supply prebuilt
    :class:`ShiftedSolver` objects for ``A_eps + 1`` and ``A + 1``.
    """
    D = ResolventDifference(A_eps, A, mask, tol=solve_tol, solvers=solvers)
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(D.N)
    x /= np.linalg.norm(x)
    history = []
    y = D(x, warm=True)
    est = float(np.linalg.norm(y))
    for it in range(1, maxiter + 1):
        history.append(est)
        if est == 0.0:
            return ResolventDiff(0.0, 0, it, True)
        if len(history) > window:
            ref = history[-1 - window]
            if abs(history[-1] - ref) <= tol * history[-1]:
                rq = float(np.dot(x, y))
                return ResolventDiff(est, int(np.sign(rq)), it, True)
        x_next = y / est
        # warm start: the component of the new input along the old one
        c = float(np.dot(x_next, x))
        D._warm = D._warm * c
        D._warm_eps = D._warm_eps * c
        x = x_next
        y = D(x, warm=True)
        est = float(np.linalg.norm(y))
    rq = float(np.dot(x, y))
    logger.warning("power iteration for the resolvent difference did not converge in %d steps", maxiter)
    return ResolventDiff(est, int(np.sign(rq)), maxiter, False)
