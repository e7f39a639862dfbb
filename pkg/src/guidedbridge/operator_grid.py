"""Square-root approximation (SqRA) of the generator on a regular grid.

The rate between neighbouring cells i, j is
``Q_ij = sigma^2 / (2 h^2) * sqrt(mu_j / mu_i)`` with ``mu ~ exp(-beta V)``,
``beta = 2 / sigma^2``. Detailed balance holds exactly, so the operator is
similar to a symmetric matrix, which is what the eigensolver works with.
Committor, reactive density and reactive flux are computed on the same grid.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.sparse.csgraph import connected_components

from .cv import GridChiCV
from .errors import InvalidInputError, NumericError
from .model_core import SystemSpec

DENSE_LIMIT = 2500


@dataclass(frozen=True, eq=False)
class RegularGrid:
    """Cell-centred grid on a box. ``lower``/``upper`` are the box faces."""

    lower: tuple
    upper: tuple
    shape: tuple

    def __post_init__(self):
        if not (len(self.lower) == len(self.upper) == len(self.shape)):
            raise InvalidInputError("lower, upper and shape must have equal length")
        for lo, hi, n in zip(self.lower, self.upper, self.shape):
            if not hi > lo:
                raise InvalidInputError("degenerate grid: upper face must exceed lower face")
            if n < 1:
                raise InvalidInputError("grid needs at least one cell per axis")

    @classmethod
    def square(cls, half_width=2.5, n=200, ndim=2):
        return cls((-half_width,) * ndim, (half_width,) * ndim, (n,) * ndim)

    @property
    def ndim(self):
        return len(self.shape)

    @property
    def spacing(self):
        return tuple((hi - lo) / n for lo, hi, n in zip(self.lower, self.upper, self.shape))

    @property
    def size(self):
        return int(np.prod(self.shape))

    @property
    def axes(self):
        return tuple(lo + h * (np.arange(n) + 0.5) for lo, h, n in zip(self.lower, self.spacing, self.shape))

    def points(self) -> np.ndarray:
        """Cell centres in C order, shape (size, ndim)."""
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def cell_of(self, point) -> int:
        """Flat index of the cell containing ``point`` (clamped to the box)."""
        idx = []
        for p, lo, h, n in zip(point, self.lower, self.spacing, self.shape):
            idx.append(int(np.clip(np.floor((p - lo) / h), 0, n - 1)))
        return int(np.ravel_multi_index(tuple(idx), self.shape))

    def to_dict(self):
        return {"lower": list(self.lower), "upper": list(self.upper), "shape": list(self.shape)}


@dataclass(frozen=True, eq=False)
class GridOperator:
    """SqRA rate matrix together with its grid and stationary weights.

    Attributes
    ----------
    Q : scipy.sparse.csr_matrix
        Rate matrix, rows sum to zero.
    mu : ndarray
        Stationary weights per cell, normalized to sum to one.
    energy : ndarray
        Potential at the cell centres.
    """

    grid: RegularGrid
    sigma: float
    energy: np.ndarray
    mu: np.ndarray
    Q: sp.csr_matrix

    @property
    def beta(self):
        return 2.0 / self.sigma**2

    @property
    def n(self):
        return self.grid.size

    def field(self, values) -> np.ndarray:
        """Reshape a flat per-cell vector onto the grid."""
        return np.asarray(values).reshape(self.grid.shape)


def sqra_from_energy(grid: RegularGrid, energy, sigma: float) -> GridOperator:
    """SqRA rate matrix for cell energies on ``grid`` with no-flux faces."""
    if not sigma > 0:
        raise InvalidInputError("sigma must be positive")
    energy = np.asarray(energy, dtype=float).reshape(grid.shape)
    beta = 2.0 / sigma**2
    idx = np.arange(grid.size).reshape(grid.shape)
    rows, cols, vals = [], [], []
    for axis, h in enumerate(grid.spacing):
        if grid.shape[axis] < 2:
            continue
        lo = [slice(None)] * grid.ndim
        hi = [slice(None)] * grid.ndim
        lo[axis] = slice(None, -1)
        hi[axis] = slice(1, None)
        a = idx[tuple(lo)].ravel()
        b = idx[tuple(hi)].ravel()
        dv = (energy[tuple(hi)] - energy[tuple(lo)]).ravel()
        rate = sigma**2 / (2.0 * h * h)
        # sqrt(mu_j / mu_i) = exp(-beta (V_j - V_i) / 2)
        rows += [a, b]
        cols += [b, a]
        vals += [rate * np.exp(-0.5 * beta * dv), rate * np.exp(0.5 * beta * dv)]
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    vals = np.concatenate(vals)
    off = sp.csr_matrix((vals, (rows, cols)), shape=(grid.size, grid.size))
    Q = (off - sp.diags(np.asarray(off.sum(axis=1)).ravel())).tocsr()
    w = np.exp(-beta * (energy.ravel() - energy.min()))
    return GridOperator(grid, float(sigma), energy.ravel(), w / w.sum(), Q)


def build_sqra(spec: SystemSpec, grid: RegularGrid | None = None) -> GridOperator:
    """SqRA discretization of the generator of ``spec`` on ``grid``.

    Defaults to the box [-2.5, 2.5]^2 with 200 x 200 cells.
    """
    grid = grid or RegularGrid.square()
    if grid.ndim != spec.d:
        raise InvalidInputError("grid dimension must equal the system dimension")
    if min(grid.shape) < 3:
        raise InvalidInputError("need at least 3 cells per axis")
    return sqra_from_energy(grid, spec.potential(grid.points()), spec.sigma)


def _symmetrized(op: GridOperator) -> sp.csr_matrix:
    # diag(sqrt mu) Q diag(1/sqrt mu) has off-diagonals sqrt(Q_ij Q_ji); forming
    # them directly avoids over/underflow of sqrt(mu) far from the wells
    Q = op.Q.tocoo()
    off = Q.row != Q.col
    T = sp.csr_matrix((Q.data[off], (Q.row[off], Q.col[off])), shape=Q.shape)
    sym = T.multiply(T.T).sqrt()
    return (sym + sp.diags(op.Q.diagonal())).tocsr()


def dominant_eigenpairs(op: GridOperator, k: int = 3, refine: bool = True):
    """Leading eigenvalues (descending) and right eigenvectors of ``Q``.

    Eigenvalues come from the symmetrized operator (dense solve up to
    ``DENSE_LIMIT`` cells, shift-invert Lanczos above). Mapping the symmetric
    eigenvectors back with ``1 / sqrt(mu)`` loses all accuracy where ``mu``
    underflows, so with ``refine`` each non-constant vector is polished by two
    steps of inverse iteration on ``Q`` itself.

    Returns
    -------
    eigenvalues : ndarray (k,)
    eigenvectors : ndarray (n, k)
        Right eigenvectors, each scaled to unit max-norm; the first is constant.
    """
    if k < 1 or k >= op.n - 1:
        raise InvalidInputError("need 1 <= k < n - 1")
    S = _symmetrized(op)
    try:
        if op.n <= DENSE_LIMIT:
            w, v = scipy.linalg.eigh(S.toarray())
            order = np.argsort(w)[::-1][:k]
        else:
            scale = abs(S.diagonal()).max()
            # fixed start vector: ARPACK's own one depends on earlier calls in the process
            v0 = np.random.default_rng(0).uniform(0.5, 1.5, op.n)
            w, v = spla.eigsh(S, k=k, sigma=1e-9 * scale, which="LM", maxiter=20 * op.n, tol=1e-13, v0=v0)
            order = np.argsort(w)[::-1]
    except (spla.ArpackNoConvergence, np.linalg.LinAlgError) as exc:
        raise NumericError(f"eigensolver failed: {exc}") from exc
    w = w[order]
    v = v[:, order]
    s = np.exp(-0.5 * op.beta * (op.energy - op.energy.min()))
    floor = 1e-10
    vecs = v / np.maximum(s, floor)[:, None]
    vecs[:, 0] = 1.0
    if refine:
        ident = sp.identity(op.n, format="csc")
        for col in range(1, k):
            lam = w[col]
            shift = lam + 1e-9 * max(abs(lam), 1e-300)
            lu = spla.splu((op.Q - shift * ident).tocsc())
            y = vecs[:, col].copy()
            for _ in range(2):
                y = lu.solve(y)
                y /= np.abs(y).max()
            vecs[:, col] = y
    vecs /= np.abs(vecs).max(axis=0)
    return w, vecs


def make_chi(op: GridOperator, eigvec, low_point: Sequence[float] = (-1.0, -1.0)) -> GridChiCV:
    """Membership function ``(phi - min phi) / (max phi - min phi)`` as a grid CV.

    The sign of ``eigvec`` is chosen so that the cell containing ``low_point``
    gets the smaller value. ``phi_min``/``phi_max`` of the returned CV refer to
    the oriented vector.
    """
    if op.grid.ndim != 2:
        raise InvalidInputError("make_chi builds a 2D grid CV")
    phi = np.real(np.asarray(eigvec, dtype=float)).ravel()
    lo, hi = phi.min(), phi.max()
    if not hi > lo:
        raise InvalidInputError("eigenvector is constant; membership function undefined")
    chi = (phi - lo) / (hi - lo)
    if chi[op.grid.cell_of(low_point)] > 0.5:
        phi = -phi
        lo, hi = phi.min(), phi.max()
        chi = (phi - lo) / (hi - lo)
    xs, ys = op.grid.axes
    return GridChiCV(xs, ys, chi.reshape(op.grid.shape), float(lo), float(hi))


def level_sets(values, low=0.1, high=0.9):
    """Boolean masks of ``{values <= low}`` and ``{values >= high}``."""
    values = np.asarray(values).ravel()
    return values <= low, values >= high


def solve_committor(op: GridOperator, A, B, clip: bool = True) -> np.ndarray:
    """Forward committor: ``Q q = 0`` off ``A u B``, ``q = 0`` on A, ``q = 1`` on B."""
    A = np.asarray(A, dtype=bool).ravel()
    B = np.asarray(B, dtype=bool).ravel()
    if not A.any() or not B.any():
        raise InvalidInputError("A and B must be nonempty")
    if (A & B).any():
        raise InvalidInputError("A and B must be disjoint")
    free = ~(A | B)
    _, labels = connected_components(op.Q, directed=False)
    bound_labels = np.unique(labels[A | B])
    if not np.isin(labels[free], bound_labels).all():
        raise NumericError("part of the complement is disconnected from A and B")
    Q = op.Q.tocsr()
    Qff = Q[free][:, free].tocsc()
    rhs = -np.asarray(Q[free][:, B].sum(axis=1)).ravel()
    q = np.zeros(op.n)
    q[B] = 1.0
    sol = spla.spsolve(Qff, rhs)
    if not np.all(np.isfinite(sol)):
        raise NumericError("committor linear solve failed")
    q[free] = sol
    return np.clip(q, 0.0, 1.0) if clip else q


@dataclass(frozen=True, eq=False)
class TPTFields:
    """Committor, reactive density and reactive flux per cell.

    ``flux`` has shape (n, ndim); ``mu_ab`` uses the normalized ``mu``.
    """

    q: np.ndarray
    mu_ab: np.ndarray
    flux: np.ndarray
    A: np.ndarray
    B: np.ndarray


def tpt_fields(op: GridOperator, q, A, B) -> TPTFields:
    q = np.asarray(q, dtype=float).ravel()
    mu_ab = op.mu * q * (1.0 - q)
    mu_ab[np.asarray(A).ravel() | np.asarray(B).ravel()] = 0.0
    grads = np.gradient(q.reshape(op.grid.shape), *op.grid.spacing)
    if op.grid.ndim == 1:
        grads = [grads]
    flux = np.stack([0.5 * op.sigma**2 * op.mu * g.ravel() for g in grads], axis=-1)
    return TPTFields(q, mu_ab, flux, np.asarray(A).ravel(), np.asarray(B).ravel())


def flux_divergence(op: GridOperator, flux) -> np.ndarray:
    """Central-difference divergence of a per-cell vector field."""
    flux = np.asarray(flux)
    div = np.zeros(op.grid.shape)
    for axis, h in enumerate(op.grid.spacing):
        div += np.gradient(flux[:, axis].reshape(op.grid.shape), h, axis=axis)
    return div.ravel()


def interior_mask(op: GridOperator, A, B, margin: int = 3) -> np.ndarray:
    """Cells at least ``margin`` cells away from ``A | B`` and from the box edge."""
    from scipy.ndimage import binary_dilation

    sets = op.field(np.asarray(A).ravel() | np.asarray(B).ravel())
    mask = ~binary_dilation(sets, iterations=margin) if margin > 0 else ~sets
    for axis in range(op.grid.ndim):
        idx = [slice(None)] * op.grid.ndim
        idx[axis] = slice(0, margin)
        mask[tuple(idx)] = False
        idx[axis] = slice(mask.shape[axis] - margin, None)
        mask[tuple(idx)] = False
    return mask.ravel()


# -- exports ------------------------------------------------------------------

def export_fields(path, op: GridOperator, fields: TPTFields):
    pts = op.grid.points()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        coords = [f"x_{i + 1}" for i in range(op.grid.ndim)]
        w.writerow(coords + ["mu", "q", "mu_ab"] + [f"j_{i + 1}" for i in range(op.grid.ndim)])
        for k in range(op.n):
            w.writerow([repr(float(v)) for v in pts[k]] + [repr(float(op.mu[k])), repr(float(fields.q[k])),
                                                          repr(float(fields.mu_ab[k]))]
                       + [repr(float(v)) for v in fields.flux[k]])


def save_rate_matrix(path, Q):
    coo = sp.coo_matrix(Q)
    with open(path, "w") as fh:
        fh.write(f"# {coo.shape[0]} {coo.shape[1]}\n")
        for i, j, v in zip(coo.row, coo.col, coo.data):
            fh.write(f"{int(i)} {int(j)} {float(v)!r}\n")


def load_rate_matrix(path) -> sp.csr_matrix:
    with open(path) as fh:
        n, m = (int(v) for v in fh.readline().lstrip("#").split())
    data = np.loadtxt(path, comments="#", ndmin=2)
    return sp.csr_matrix((data[:, 2], (data[:, 0].astype(int), data[:, 1].astype(int))), shape=(n, m))
