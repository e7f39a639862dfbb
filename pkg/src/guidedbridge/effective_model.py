"""One-dimensional effective dynamics of a membership-function CV.

``dz = (c + lam z) dt + sigma_hat(z) dW`` on [0, 1] with
``sigma_hat(z)^2 = sigma^2 E_mu[|grad chi|^2 | chi = z]`` and
``D_eff = sigma_hat^2 / 2``. The stationary density is
``pi ~ exp(-V_eff)`` with ``V_eff = log D_eff - int (c + lam z) / D_eff dz``.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .cv import GridChiCV
from .errors import InvalidInputError, NumericError
from .model_core import PathRecord, path_generator
from .operator_grid import GridOperator

P_FLOOR = 1e-12


@dataclass(frozen=True, eq=False)
class EffectiveModel:
    """Tabulated coefficients of the latent SDE on a uniform z-grid.

    Attributes
    ----------
    z : ndarray
        Uniform nodes on [0, 1].
    sigma_hat, D, V_eff, pi : ndarray
        Noise, diffusion coefficient, effective potential (min 0) and
        stationary probability mass per node (sums to one).
    c, lam : float
        Drift ``c + lam z``.
    filled : ndarray of bool
        Nodes whose conditional average had no data and were interpolated.
    """

    z: np.ndarray
    sigma_hat: np.ndarray
    D: np.ndarray
    V_eff: np.ndarray
    pi: np.ndarray
    c: float
    lam: float
    filled: np.ndarray = field(default=None)

    @classmethod
    def from_coefficients(cls, z, D, c, lam, filled=None) -> "EffectiveModel":
        """Model from a diffusion table; ``V_eff`` and ``pi`` are derived."""
        z = np.asarray(z, dtype=float)
        D = np.asarray(D, dtype=float)
        if z.ndim != 1 or len(z) < 3 or D.shape != z.shape:
            raise InvalidInputError("z and D must be 1D arrays of equal length >= 3")
        if not np.allclose(np.diff(z), z[1] - z[0]):
            raise InvalidInputError("z-grid must be uniform")
        if np.any(D < 0):
            raise InvalidInputError("diffusion must be nonnegative")
        Dpos = np.maximum(D, np.finfo(float).tiny)
        ratio = (c + lam * z) / Dpos
        integral = np.concatenate([[0.0], np.cumsum(0.5 * (ratio[1:] + ratio[:-1]) * np.diff(z))])
        V = np.log(Dpos) - integral
        V = V - V.min()
        w = np.exp(-V)
        filled = np.zeros(len(z), bool) if filled is None else np.asarray(filled, bool)
        return cls(z, np.sqrt(2 * D), D, V, w / w.sum(), float(c), float(lam), filled)

    @property
    def h(self) -> float:
        return float(self.z[1] - self.z[0])

    @property
    def drift(self) -> np.ndarray:
        return self.c + self.lam * self.z

    def generator(self) -> sp.csr_matrix:
        """Reversible tridiagonal generator with no-flux ends.

        ``L_{i,i+1} = D_{i+1/2} / h^2 * sqrt(pi_{i+1} / pi_i)`` with the
        geometric mean of neighbouring ``D`` at the midpoint; detailed balance
        with respect to ``pi`` holds exactly.
        """
        D = np.maximum(self.D, np.finfo(float).tiny)
        Dm = np.sqrt(D[1:] * D[:-1])
        dV = np.diff(self.V_eff)
        up = Dm / self.h**2 * np.exp(-0.5 * dV)
        down = Dm / self.h**2 * np.exp(0.5 * dV)
        n = len(self.z)
        L = sp.diags([down, up], [-1, 1], shape=(n, n), format="csr")
        return (L - sp.diags(np.asarray(L.sum(axis=1)).ravel())).tocsr()

    # -- serialization ---------------------------------------------------------

    def to_dict(self) -> dict:
        return {"c": self.c, "lam": self.lam, "z": self.z.tolist(), "D": self.D.tolist(),
                "filled": self.filled.tolist()}

    @classmethod
    def from_dict(cls, data) -> "EffectiveModel":
        return cls.from_coefficients(data["z"], data["D"], data["c"], data["lam"], data.get("filled"))

    def save_json(self, path):
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load_json(cls, path) -> "EffectiveModel":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["z", "sigma_hat", "D_eff", "V_eff", "pi"])
            for row in zip(self.z, self.sigma_hat, self.D, self.V_eff, self.pi):
                w.writerow([repr(float(v)) for v in row])


def conditional_average(values, weights, samples, z):
    """Weighted averages of ``samples`` conditioned on ``values`` near each node.

    Each sample is split between its two neighbouring nodes with linear (hat)
    weights. Returns the averages and a mask of nodes that received no weight.
    """
    h = z[1] - z[0]
    u = np.clip((np.asarray(values).ravel() - z[0]) / h, 0, len(z) - 1)
    i = np.minimum(u.astype(int), len(z) - 2)
    f = u - i
    w = np.asarray(weights).ravel()
    s = np.asarray(samples).ravel()
    n = len(z)
    num = np.bincount(i, w * (1 - f) * s, n) + np.bincount(i + 1, w * f * s, n)
    den = np.bincount(i, w * (1 - f), n) + np.bincount(i + 1, w * f, n)
    empty = den <= 0
    avg = np.zeros(n)
    avg[~empty] = num[~empty] / den[~empty]
    return avg, den, empty


def build_effective(op: GridOperator, chi: GridChiCV, lam2: float, sigma: float | None = None,
                    n_z: int = 1001) -> EffectiveModel:
    """Effective model of the membership function ``chi`` built on ``op``'s grid.

    ``c = lam2 * phi_min / (phi_max - phi_min)`` and ``lam = lam2``;
    ``|grad chi|^2`` uses central differences on the grid.
    """
    if not lam2 < 0:
        raise InvalidInputError("second eigenvalue must be negative")
    if chi.phi_min is None or chi.phi_max is None:
        raise InvalidInputError("chi must carry the eigenvector range (use make_chi)")
    sigma = op.sigma if sigma is None else sigma
    c = lam2 * chi.phi_min / (chi.phi_max - chi.phi_min)
    gx, gy = np.gradient(chi.values, *op.grid.spacing)
    grad2 = gx**2 + gy**2
    z = np.linspace(0.0, 1.0, n_z)
    avg, _, empty = conditional_average(chi.values, op.mu, grad2, z)
    if empty.all():
        raise NumericError("no data in any z-bin")
    if empty.any():
        avg[empty] = np.interp(z[empty], z[~empty], avg[~empty])
    return EffectiveModel.from_coefficients(z, 0.5 * sigma**2 * avg, c, lam2, empty)


def chi_marginal(op: GridOperator, chi: GridChiCV, z) -> np.ndarray:
    """Probability mass of ``chi`` under ``mu`` on the nodes ``z`` (hat binning)."""
    _, den, _ = conditional_average(chi.values, op.mu, np.ones(op.n), np.asarray(z))
    return den / den.sum()


def simulate_effective(model: EffectiveModel, z0: float, dt: float, n_steps: int, seed: int = 0,
                       stride: int = 1, chunk: int = 1_000_000) -> PathRecord:
    """Euler-Maruyama path of the effective SDE with reflection at 0 and 1.

    States are stored every ``stride`` steps; ``x`` of the returned record has
    shape (n, 1).
    """
    from . import _kernels

    if not 0.0 <= z0 <= 1.0:
        raise InvalidInputError("z0 must lie in [0, 1]")
    if not dt > 0 or n_steps < 1:
        raise InvalidInputError("need dt > 0 and at least one step")
    gen = path_generator(seed, 0)
    out = np.empty(n_steps // stride + 1)
    out[0] = z0
    z = float(z0)
    pos = 1
    carry = 0
    done = 0
    while done < n_steps:
        m = min(chunk, n_steps - done)
        eta = gen.standard_normal(m)
        z, k, carry = _kernels.latent_run(z, eta, dt, model.c, model.lam, model.z, model.sigma_hat,
                                          stride, carry, out, pos)
        pos += k
        done += m
    t = dt * stride * np.arange(pos)
    return PathRecord(t, out[:pos, None], seed)


@dataclass(frozen=True, eq=False)
class KoopmanEstimate:
    """Box-discretized transfer operator at lag ``tau``.

    ``active`` lists the boxes kept (nonempty rows); ``rates`` are the implied
    generator eigenvalues ``log(eig) / tau`` of the leading real eigenvalues.
    """

    P: np.ndarray
    counts: np.ndarray
    active: np.ndarray
    eigenvalues: np.ndarray
    rates: np.ndarray
    tau: float
    removed: np.ndarray


def estimate_koopman(traj, lag: int, n_boxes: int, dt: float = 1.0, n_eig: int = 4, lo=0.0, hi=1.0):
    """Maximum-likelihood transition matrix between uniform boxes.

    Parameters
    ----------
    traj : array_like
        Scalar time series sampled every ``dt``.
    lag : int
        Lag in samples; ``tau = lag * dt``.
    """
    x = np.asarray(traj, dtype=float).ravel()
    if len(x) <= 100 * lag:
        raise InvalidInputError("trajectory must be longer than 100 lag times")
    boxes = np.clip(((x - lo) / (hi - lo) * n_boxes).astype(int), 0, n_boxes - 1)
    counts = np.zeros((n_boxes, n_boxes))
    np.add.at(counts, (boxes[:-lag], boxes[lag:]), 1.0)
    rows = counts.sum(axis=1)
    active = np.flatnonzero(rows > 0)
    removed = np.flatnonzero(rows == 0)
    C = counts[np.ix_(active, active)]
    P = C / C.sum(axis=1, keepdims=True)
    ev = np.linalg.eigvals(P)
    ev = ev[np.argsort(-ev.real)][:n_eig]
    real = np.clip(ev.real, np.finfo(float).tiny, None)
    tau = lag * dt
    return KoopmanEstimate(P, counts, active, ev, np.log(real) / tau, tau, removed)


@dataclass(frozen=True, eq=False)
class LatentProbabilityTable:
    """``p(s, z) = P(z_t > z_star | z_s = z)`` and ``d/dz log p`` on an (s, z) grid."""

    s: np.ndarray
    z: np.ndarray
    p: np.ndarray
    dlogp: np.ndarray
    z_star: float
    t: float

    def _weights(self, s, z):
        s = np.clip(np.asarray(s, dtype=float), self.s[0], self.s[-1])
        z = np.clip(np.asarray(z, dtype=float), self.z[0], self.z[-1])
        hs = self.s[1] - self.s[0]
        hz = self.z[1] - self.z[0]
        a = (s - self.s[0]) / hs
        b = (z - self.z[0]) / hz
        i = np.minimum(a.astype(int), len(self.s) - 2)
        j = np.minimum(b.astype(int), len(self.z) - 2)
        return i, j, a - i, b - j

    def _lookup(self, table, s, z):
        i, j, fa, fb = self._weights(s, z)
        return (table[i, j] * (1 - fa) * (1 - fb) + table[i + 1, j] * fa * (1 - fb)
                + table[i, j + 1] * (1 - fa) * fb + table[i + 1, j + 1] * fa * fb)

    def prob(self, s, z):
        return self._lookup(self.p, s, z)

    def dlog(self, s, z):
        """Bilinear lookup of ``d/dz log p``; queries are clamped to the table."""
        return self._lookup(self.dlogp, s, z)

    def to_csv(self, path, s_stride=1, z_stride=1):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["s", "z", "p", "dlogp"])
            for k in range(0, len(self.s), s_stride):
                for i in range(0, len(self.z), z_stride):
                    w.writerow([repr(float(self.s[k])), repr(float(self.z[i])), repr(float(self.p[k, i])),
                                repr(float(self.dlogp[k, i]))])


def log_derivative(p, z, p_floor=P_FLOOR):
    """Central-difference ``d/dz log p`` with ``p`` floored at ``p_floor``."""
    logp = np.log(np.maximum(p, p_floor))
    return np.gradient(logp, z, axis=-1)


def terminal_indicator(z, z_star, mollify=False):
    """``1{z > z_star}``; with ``mollify`` the jump is spread linearly over one cell."""
    z = np.asarray(z)
    if not mollify:
        return (z > z_star).astype(float)
    h = z[1] - z[0]
    return np.clip((z - z_star) / h + 0.5, 0.0, 1.0)


def solve_bk(model: EffectiveModel, z_star: float, t: float, n_t: int = 400, p_floor: float = P_FLOOR,
             mollify: bool = False, generator=None) -> LatentProbabilityTable:
    """Backward Kolmogorov solve ``d_s p + L_eff p = 0``, ``p(t) = 1{z > z_star}``.

    Implicit Euler with ``n_t`` uniform steps from ``s = t`` down to ``s = 0``.
    """
    if not 0.0 < z_star < 1.0:
        raise InvalidInputError("z_star must lie in (0, 1)")
    if not t > 0 or n_t < 1:
        raise InvalidInputError("need a positive horizon and at least one time step")
    L = model.generator() if generator is None else generator
    n = L.shape[0]
    ds = t / n_t
    try:
        lu = spla.splu((sp.identity(n, format="csc") - ds * L).tocsc())
    except RuntimeError as exc:
        raise NumericError(f"implicit Euler factorization failed: {exc}") from exc
    p = np.empty((n_t + 1, n))
    p[n_t] = terminal_indicator(model.z, z_star, mollify)
    for k in range(n_t - 1, -1, -1):
        p[k] = lu.solve(p[k + 1])
        if not np.all(np.isfinite(p[k])):
            raise NumericError("backward Kolmogorov solve produced non-finite values")
    p = np.clip(p, 0.0, 1.0)
    s = np.linspace(0.0, t, n_t + 1)
    return LatentProbabilityTable(s, model.z.copy(), p, log_derivative(p, model.z, p_floor), float(z_star),
                                  float(t))


def spectral_approx_p(model: EffectiveModel, z_star: float, t: float, s: float, p_floor: float = P_FLOOR):
    """Two-term spectral approximation of ``p(s, z)`` and ``d/dz log p``.

    Uses the linear second eigenfunction ``(c + lam z) / a`` with
    ``a^2 = E_pi[(c + lam z)^2]``. Returns ``(p, dlogp)`` on ``model.z``.
    """
    b = model.drift
    a = np.sqrt(np.sum(b**2 * model.pi))
    above = model.z > z_star
    pi_B = model.pi[above].sum()
    gamma = np.sum(b[above] * model.pi[above]) / a
    decay = np.exp(model.lam * (t - s))
    p = pi_B + gamma / a * decay * b
    dlogp = gamma * model.lam * decay / (a * pi_B + gamma * decay * b)
    return np.clip(p, p_floor, 1.0), dlogp


def spectral_constants(model: EffectiveModel, z_star: float):
    """``(a, gamma_star, pi(B))`` entering the spectral approximation."""
    b = model.drift
    a = np.sqrt(np.sum(b**2 * model.pi))
    above = model.z > z_star
    return a, np.sum(b[above] * model.pi[above]) / a, model.pi[above].sum()


def latent_committor(model: EffectiveModel, low: float = 0.1, high: float = 0.9, generator=None):
    """Committor of the latent chain between ``{z <= low}`` and ``{z >= high}``."""
    L = (model.generator() if generator is None else generator).tocsr()
    A = model.z <= low
    B = model.z >= high
    free = ~(A | B)
    q = np.zeros(len(model.z))
    q[B] = 1.0
    rhs = -np.asarray(L[free][:, B].sum(axis=1)).ravel()
    sol = spla.spsolve(L[free][:, free].tocsc(), rhs)
    if not np.all(np.isfinite(sol)):
        raise NumericError("latent committor solve failed")
    q[free] = sol
    return np.clip(q, 0.0, 1.0)
