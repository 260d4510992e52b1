"""Finite-difference Dirichlet Laplacians on perforated and unperforated boxes.

Nodes sit at ``lo + k h`` for ``k = 1 .. N_d - 1`` along each axis; the
boundary of the box is eliminated.  Vectors over the full grid are flattened
in C order.
"""
import logging
import math
import struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .capacity import UnderResolvedError
from .geometry import DomainSpec
from .linalg import ShiftedSolver

logger = logging.getLogger(__name__)

CSR_MAGIC = b"CSR1"
# magic, nrows, ncols, nnz (uint64), h (float64); then indptr, indices (int64), data (float64)
_CSR_HEADER = struct.Struct("<4sQQQd")


@dataclass(frozen=True)
class GridSpec:
    domain: DomainSpec
    h: float

    def __post_init__(self):
        if not self.h > 0:
            raise ValueError("h must be positive")
        for a, b in zip(self.domain.lo, self.domain.hi):
            cells = (b - a) / self.h
            if abs(cells - round(cells)) > 1e-9 * max(1.0, cells):
                raise ValueError(f"box side {b - a} is not a multiple of h={self.h}")

    @classmethod
    def uniform(cls, domain, cells_per_unit):
        return cls(domain, 1.0 / cells_per_unit)

    @property
    def n(self):
        return self.domain.n

    @property
    def intervals(self):
        return tuple(int(round((b - a) / self.h)) for a, b in zip(self.domain.lo, self.domain.hi))

    @property
    def shape(self):
        return tuple(m - 1 for m in self.intervals)

    @property
    def size(self):
        return int(np.prod(self.shape))

    def axis(self, d):
        return self.domain.lo[d] + self.h * np.arange(1, self.intervals[d])

    def nodes(self):
        grids = np.meshgrid(*(self.axis(d) for d in range(self.n)), indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=-1)


@dataclass(frozen=True)
class MaskedGrid:
    grid: GridSpec
    active: np.ndarray  # bool over the full grid, flattened

    @classmethod
    def full(cls, grid):
        return cls(grid, np.ones(grid.size, dtype=bool))

    @classmethod
    def from_holes(cls, grid, holes, min_nodes=3, rtol=1e-12):
        """Deactivate every node in a closed hole; reject holes spanning fewer than ``min_nodes``."""
        active = np.ones(grid.shape, dtype=bool)
        h = grid.h
        lo = np.array(grid.domain.lo)
        for c, d in zip(holes.centers, holes.radii):
            if d <= 0:
                continue
            # node k (1-based) along an axis sits at lo + k h
            first = np.ceil((c - d - lo) / h - 1e-9).astype(int)
            last = np.floor((c + d - lo) / h + 1e-9).astype(int)
            across = int(np.min(last - first + 1))
            if across < min_nodes:
                raise UnderResolvedError(
                    f"hole at {tuple(np.round(c, 12))} with radius {d:.4g} spans {across} nodes "
                    f"across at h={h:.4g}; need {min_nodes}"
                )
            first = np.maximum(first, 1)
            last = np.minimum(last, np.array(grid.intervals) - 1)
            if np.any(last < first):
                continue
            axes = [lo[k] + h * np.arange(first[k], last[k] + 1) for k in range(grid.n)]
            r2 = sum(
                (ax - c[k]).reshape([-1 if j == k else 1 for j in range(grid.n)]) ** 2
                for k, ax in enumerate(axes)
            )
            box = tuple(slice(first[k] - 1, last[k]) for k in range(grid.n))
            active[box] &= r2 > d * d * (1 + rtol)
        return cls(grid, active.ravel())

    @property
    def n_active(self):
        return int(np.count_nonzero(self.active))

    @property
    def index(self):
        return np.flatnonzero(self.active)


@dataclass(frozen=True)
class SparseOperator:
    matrix: sp.csr_matrix
    h: float
    form: str
    grid: Optional[MaskedGrid] = field(default=None, repr=False)

    @property
    def shape(self):
        return self.matrix.shape

    def __matmul__(self, x):
        return self.matrix @ x


def _lap1d(m, h):
    main = np.full(m, 2.0 / h**2)
    off = np.full(max(m - 1, 0), -1.0 / h**2)
    return sp.diags([off, main, off], [-1, 0, 1], shape=(m, m), format="csr")


def _grid_laplacian(grid):
    shape = grid.shape
    if any(m < 1 for m in shape):
        raise ValueError("grid has no interior nodes")
    total = None
    for d, m in enumerate(shape):
        term = _lap1d(m, grid.h)
        for k in range(d):
            term = sp.kron(sp.identity(shape[k], format="csr"), term, format="csr")
        for k in range(d + 1, len(shape)):
            term = sp.kron(term, sp.identity(shape[k], format="csr"), format="csr")
        total = term if total is None else total + term
    return total.tocsr()


def assemble_perforated_laplacian(masked):
    """-Delta_h with homogeneous Dirichlet data on the box boundary and on inactive nodes."""
    if isinstance(masked, GridSpec):
        masked = MaskedGrid.full(masked)
    if masked.n_active == 0:
        raise ValueError("no active nodes")
    A = _grid_laplacian(masked.grid)
    if masked.n_active < masked.grid.size:
        idx = masked.index
        A = A[idx][:, idx]
    A.sort_indices()
    return SparseOperator(A.tocsr(), masked.grid.h, "perforated_laplacian", masked)


def node_potential(grid, V, order=3):
    """Average of V over the dual cell of each node."""
    return V.box_averages(grid.nodes(), grid.h, order)


def assemble_schrodinger(grid, V, order=3):
    """-Delta_h + diag(V) on the full grid, V averaged over each node's dual cell."""
    A = _grid_laplacian(grid)
    vals = node_potential(grid, V, order)
    if np.any(vals < 0):
        raise ValueError("potential must be nonnegative")
    A = (A + sp.diags(vals)).tocsr()
    A.sort_indices()
    return SparseOperator(A, grid.h, "schrodinger", MaskedGrid.full(grid))


def restrict(f, masked):
    f = np.asarray(f)
    if f.shape[0] != masked.active.size:
        raise ValueError(f"expected {masked.active.size} grid values, got {f.shape[0]}")
    return f[masked.active]


def extend(u, masked):
    u = np.asarray(u)
    if u.shape[0] != masked.n_active:
        raise ValueError(f"expected {masked.n_active} active values, got {u.shape[0]}")
    out = np.zeros((masked.active.size,) + u.shape[1:], dtype=u.dtype)
    out[masked.active] = u
    return out


def cg_solve(A, shift, rhs, tol=1e-10, maxiter=None):
    """Solve ``(A + shift) x = rhs``; returns ``(x, iterations)``."""
    if shift < 0:
        raise ValueError("shift must be nonnegative")
    solver = ShiftedSolver(A, shift, tol=tol, maxiter=maxiter)
    x = solver.solve(rhs)
    return x, solver.last_info["iterations"]


def write_csr(op, path):
    """Binary dump: little-endian header ``CSR1, nrows, ncols, nnz, h`` then the three arrays."""
    M = op.matrix if hasattr(op, "matrix") else op
    h = float(getattr(op, "h", math.nan))
    M = M.tocsr()
    with open(path, "wb") as fh:
        fh.write(_CSR_HEADER.pack(CSR_MAGIC, M.shape[0], M.shape[1], M.nnz, h))
        fh.write(M.indptr.astype("<i8").tobytes())
        fh.write(M.indices.astype("<i8").tobytes())
        fh.write(M.data.astype("<f8").tobytes())


def read_csr(path):
    """Inverse of :func:`write_csr`; returns ``(matrix, h)``."""
    with open(path, "rb") as fh:
        magic, nrows, ncols, nnz, h = _CSR_HEADER.unpack(fh.read(_CSR_HEADER.size))
        if magic != CSR_MAGIC:
            raise ValueError(f"{path} is not a CSR dump")
        indptr = np.frombuffer(fh.read(8 * (nrows + 1)), dtype="<i8")
        indices = np.frombuffer(fh.read(8 * nnz), dtype="<i8")
        data = np.frombuffer(fh.read(8 * nnz), dtype="<f8")
    return sp.csr_matrix((data, indices, indptr), shape=(nrows, ncols)), h


def box_laplacian_eigenvalues(grid, k):
    """The ``k`` smallest eigenvalues of ``-Delta_h`` on the full grid, in closed form."""
    mus = [
        4.0 / grid.h**2 * np.sin(np.arange(1, m + 1) * np.pi / (2 * (m + 1))) ** 2 for m in grid.shape
    ]
    # the k smallest sums only involve the k smallest values per axis
    total = np.zeros(1)
    for mu in mus:
        total = np.add.outer(total, mu[:k]).ravel()
        total = np.sort(total)[:k]
    return total
