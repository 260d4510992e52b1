"""Preconditioned conjugate gradients for sparse SPD systems."""
import logging

import numpy as np
import scipy.sparse as sp

logger = logging.getLogger(__name__)

AMG_THRESHOLD = 20000


class ConvergenceError(RuntimeError):
    pass


def conjugate_gradient(A, b, tol=1e-10, maxiter=None, M=None, x0=None):
    """Solve ``A x = b`` for symmetric positive definite ``A``.

    ``A`` and ``M`` (the preconditioner, approximating ``A^-1``) may be
    matrices or callables.  Stops when ``||b - A x|| <= tol * ||b||``.
    Returns ``(x, info)`` where ``info`` holds ``iterations`` and
    ``residual`` (relative).  Raises :class:`ConvergenceError` when
    ``maxiter`` is reached.
    """
    matvec = A if callable(A) else A.dot
    precond = M if (M is None or callable(M)) else M.dot
    b = np.asarray(b, dtype=float)
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        return np.zeros_like(b), {"iterations": 0, "residual": 0.0}
    if maxiter is None:
        maxiter = 10 * b.size + 100
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float)
    r = b - matvec(x) if x0 is not None else b.copy()
    z = r if precond is None else precond(r)
    p = z.copy()
    rz = float(np.dot(r, z))
    res = float(np.linalg.norm(r)) / bnorm
    it = 0
    while res > tol:
        if it >= maxiter:
            raise ConvergenceError(f"CG stalled at relative residual {res:.3e} after {it} iterations")
        Ap = matvec(p)
        pAp = float(np.dot(p, Ap))
        if pAp <= 0:
            raise ConvergenceError("operator is not positive definite")
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        z = r if precond is None else precond(r)
        rz_new = float(np.dot(r, z))
        p *= rz_new / rz
        p += z
        rz = rz_new
        res = float(np.linalg.norm(r)) / bnorm
        it += 1
    return x, {"iterations": it, "residual": res}


def _jacobi(M):
    inv = 1.0 / M.diagonal()
    return lambda r: inv * r


def _amg(M):
    import pyamg

    ml = pyamg.ruge_stuben_solver(M.tocsr())
    pc = ml.aspreconditioner(cycle="V")
    return pc.matvec


class ShiftedSolver:
    """Repeated solves with ``A + shift I``; the preconditioner is built once.

    ``precond`` is ``"amg"``, ``"jacobi"``, ``None`` or ``"auto"`` (AMG above
    ``AMG_THRESHOLD`` unknowns, Jacobi below).
    """

    def __init__(self, A, shift=0.0, tol=1e-10, maxiter=None, precond="auto"):
        A = A.matrix if hasattr(A, "matrix") else A
        self.matrix = (A + shift * sp.identity(A.shape[0], format="csr")).tocsr()
        self.shift = shift
        self.tol = tol
        self.maxiter = maxiter
        if precond == "auto":
            precond = "amg" if A.shape[0] > AMG_THRESHOLD else "jacobi"
        self.precond_kind = precond
        if precond == "amg":
            self._M = _amg(self.matrix)
        elif precond == "jacobi":
            self._M = _jacobi(self.matrix)
        elif precond is None:
            self._M = None
        else:
            raise ValueError(f"unknown preconditioner {precond!r}")
        self.calls = 0
        self.iterations = 0
        self.last_info = None

    @property
    def shape(self):
        return self.matrix.shape

    def solve(self, b, x0=None, tol=None):
        x, info = conjugate_gradient(
            self.matrix, b, tol=self.tol if tol is None else tol, maxiter=self.maxiter, M=self._M, x0=x0
        )
        self.calls += 1
        self.iterations += info["iterations"]
        self.last_info = info
        return x

    def solve_block(self, B, tol=None):
        B = np.asarray(B, dtype=float)
        if B.ndim == 1:
            return self.solve(B, tol=tol)
        return np.column_stack([self.solve(B[:, j], tol=tol) for j in range(B.shape[1])])


class SineTransformSolver:
    """Exact solves with ``-Delta_h + shift`` on a full box grid by the type-I sine transform.

    Same interface as :class:`ShiftedSolver`; ``x0`` and ``tol`` are ignored.
    """

    def __init__(self, shape, h, shift=0.0):
        from scipy.fft import dstn

        self._dstn = dstn
        self.grid_shape = tuple(int(m) for m in shape)
        self.shift = shift
        symbol = np.full(self.grid_shape, float(shift))
        for d, m in enumerate(self.grid_shape):
            mu = 4.0 / h**2 * np.sin(np.arange(1, m + 1) * np.pi / (2 * (m + 1))) ** 2
            symbol = symbol + mu.reshape([-1 if j == d else 1 for j in range(len(self.grid_shape))])
        if np.any(symbol <= 0):
            raise ValueError("operator is not positive definite")
        # dstn(type=1) applied twice is a multiple of the identity
        self._inv = 1.0 / (symbol * np.prod([2.0 * (m + 1) for m in self.grid_shape]))
        self.calls = 0
        self.iterations = 0
        self.last_info = {"iterations": 0, "residual": 0.0}

    @property
    def shape(self):
        N = int(np.prod(self.grid_shape))
        return (N, N)

    def solve(self, b, x0=None, tol=None):
        u = np.asarray(b, dtype=float).reshape(self.grid_shape)
        x = self._dstn(self._dstn(u, type=1) * self._inv, type=1)
        self.calls += 1
        return x.ravel()

    def solve_block(self, B, tol=None):
        B = np.asarray(B, dtype=float)
        if B.ndim == 1:
            return self.solve(B)
        return np.column_stack([self.solve(B[:, j]) for j in range(B.shape[1])])
