"""Full-dimensional overdamped Langevin systems and their Euler-Maruyama integrator.

The dynamics is ``dX = (b(X) + sigma * u(t, X)) dt + sigma dW`` with
``b = -grad V``. Controls ``u`` are always expressed in noise-channel units,
so the drift increment contributed by a control is ``sigma * u``.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import DivergenceError, InvalidInputError

DIVERGENCE_RADIUS = 1e6

KINDS = ("double-well-2d", "rotated-high-d", "harmonic", "flat")


@dataclass(frozen=True, eq=False)
class SystemSpec:
    """Potential, drift and noise of a full-dimensional system.

    Parameters
    ----------
    kind : str
        One of ``double-well-2d``, ``rotated-high-d``, ``harmonic`` or ``flat``.
        The last two are analytic stubs (Ornstein-Uhlenbeck / free diffusion)
        used as oracles.
    d : int
        State dimension.
    sigma : float
        Scalar noise intensity.
    alpha, beta, gamma : float
        Double-well parameters.
    omegas : tuple of float
        Harmonic frequencies of the coordinates 3..d (rotated variant).
    rotation : ndarray (d, d), optional
        Orthonormal matrix R; the rotated potential is ``W(R x)``.
    stiffness : tuple of float
        Per-coordinate spring constants of the harmonic stub,
        ``V = 0.5 * sum k_i (x_i - c_i)^2``.
    center : tuple of float
        Rest position of the harmonic stub.
    """

    kind: str
    d: int
    sigma: float
    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 2.0
    omegas: tuple = ()
    rotation: Optional[np.ndarray] = field(default=None, repr=False)
    stiffness: tuple = ()
    center: tuple = ()

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidInputError(f"unknown potential kind {self.kind!r}")
        if not self.sigma >= 0 or not np.isfinite(self.sigma):
            raise InvalidInputError("sigma must be finite and nonnegative")
        if self.kind in ("double-well-2d", "rotated-high-d"):
            if min(self.alpha, self.beta, self.gamma) <= 0:
                raise InvalidInputError("alpha, beta, gamma must be positive")
        if self.kind == "double-well-2d" and self.d != 2:
            raise InvalidInputError("double-well-2d requires d == 2")
        if self.kind == "rotated-high-d":
            if self.d < 2 or len(self.omegas) != self.d - 2:
                raise InvalidInputError("rotated-high-d needs d >= 2 and d - 2 omegas")
            if any(w <= 0 for w in self.omegas):
                raise InvalidInputError("all omegas must be positive")
            R = np.asarray(self.rotation, dtype=float)
            if R.shape != (self.d, self.d):
                raise InvalidInputError("rotation must be a d x d matrix")
            if np.max(np.abs(R @ R.T - np.eye(self.d))) > 1e-12:
                raise InvalidInputError("rotation is not orthonormal")
            object.__setattr__(self, "rotation", R)
            object.__setattr__(self, "omegas", tuple(float(w) for w in self.omegas))
        if self.kind == "harmonic":
            if len(self.stiffness) != self.d:
                raise InvalidInputError("harmonic stub needs one stiffness per coordinate")
            if not self.center:
                object.__setattr__(self, "center", (0.0,) * self.d)
            if len(self.center) != self.d:
                raise InvalidInputError("center must have length d")
        if self.d < 1:
            raise InvalidInputError("dimension must be positive")

    # -- potential and gradient, vectorized over leading axes ------------------

    def potential(self, x):
        x = self._check(x)
        if self.kind == "double-well-2d":
            return _dw_potential(x[..., 0], x[..., 1], self.alpha, self.beta, self.gamma)
        if self.kind == "rotated-high-d":
            y = x @ self.rotation.T
            w2 = np.asarray(self.omegas) ** 2
            return _dw_potential(y[..., 0], y[..., 1], self.alpha, self.beta, self.gamma) + 0.5 * np.sum(
                w2 * y[..., 2:] ** 2, axis=-1
            )
        if self.kind == "harmonic":
            k = np.asarray(self.stiffness)
            return 0.5 * np.sum(k * (x - np.asarray(self.center)) ** 2, axis=-1)
        return np.zeros(x.shape[:-1])

    def gradient(self, x):
        x = self._check(x)
        if self.kind == "double-well-2d":
            return _dw_gradient(x, self.alpha, self.beta, self.gamma)
        if self.kind == "rotated-high-d":
            y = x @ self.rotation.T
            gy = np.empty_like(y)
            gy[..., :2] = _dw_gradient(y[..., :2], self.alpha, self.beta, self.gamma)
            gy[..., 2:] = np.asarray(self.omegas) ** 2 * y[..., 2:]
            return gy @ self.rotation
        if self.kind == "harmonic":
            return np.asarray(self.stiffness) * (x - np.asarray(self.center))
        return np.zeros_like(x)

    def drift(self, x):
        return -self.gradient(x)

    def _check(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[-1:] != (self.d,):
            raise InvalidInputError(f"state has shape {x.shape}, expected trailing dimension {self.d}")
        return x

    # -- serialization --------------------------------------------------------

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "d": self.d, "sigma": self.sigma}
        if self.kind in ("double-well-2d", "rotated-high-d"):
            out.update(alpha=self.alpha, beta=self.beta, gamma=self.gamma)
        if self.kind == "rotated-high-d":
            out["omegas"] = list(self.omegas)
            out["rotation"] = self.rotation.tolist()
        if self.kind == "harmonic":
            out["stiffness"] = list(self.stiffness)
            out["center"] = list(self.center)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "SystemSpec":
        data = dict(data)
        allowed = {"kind", "d", "sigma", "alpha", "beta", "gamma", "omegas", "rotation", "stiffness", "center",
                   "rotation_seed"}
        unknown = set(data) - allowed
        if unknown:
            raise InvalidInputError(f"unknown SystemSpec keys: {sorted(unknown)}")
        if data.get("kind") == "rotated-high-d" and "rotation" not in data:
            data["rotation"] = random_rotation(int(data["d"]), int(data.pop("rotation_seed", 0)))
        data.pop("rotation_seed", None)
        for key in ("omegas", "stiffness", "center"):
            if key in data:
                data[key] = tuple(float(v) for v in data[key])
        if "rotation" in data:
            data["rotation"] = np.asarray(data["rotation"], dtype=float)
        return cls(**data)

    def save_json(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load_json(cls, path) -> "SystemSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _dw_potential(x1, x2, alpha, beta, gamma):
    return alpha * (x1**2 - 1) ** 2 + beta * (x2**2 - 1) ** 2 + (1 - np.exp(-gamma * (x1 - x2) ** 2))


def _dw_gradient(x, alpha, beta, gamma):
    x1 = x[..., 0]
    x2 = x[..., 1]
    r = x1 - x2
    coupling = 2 * gamma * r * np.exp(-gamma * r**2)
    g = np.empty(x.shape)
    g[..., 0] = 4 * alpha * x1 * (x1**2 - 1) + coupling
    g[..., 1] = 4 * beta * x2 * (x2**2 - 1) - coupling
    return g


def double_well(alpha=1.0, beta=1.0, gamma=2.0, sigma=0.7) -> SystemSpec:
    return SystemSpec("double-well-2d", 2, sigma, alpha, beta, gamma)


def rotated_system(d, omegas=None, rotation=None, seed=0, alpha=1.0, beta=1.0, gamma=2.0, sigma=0.7) -> SystemSpec:
    """High-dimensional double well ``W(R x)`` with harmonic extra coordinates.

    If ``rotation`` is omitted a random orthonormal matrix is drawn from ``seed``.
    ``omegas`` defaults to 2 for every extra coordinate.
    """
    if omegas is None:
        omegas = (2.0,) * (d - 2)
    if rotation is None:
        rotation = random_rotation(d, seed)
    return SystemSpec("rotated-high-d", d, sigma, alpha, beta, gamma, tuple(omegas), rotation)


def harmonic(stiffness, sigma, center=None) -> SystemSpec:
    stiffness = tuple(float(k) for k in np.atleast_1d(stiffness))
    center = tuple(float(c) for c in np.atleast_1d(center)) if center is not None else ()
    return SystemSpec("harmonic", len(stiffness), sigma, stiffness=stiffness, center=center)


def flat(d, sigma) -> SystemSpec:
    return SystemSpec("flat", d, sigma)


def random_rotation(d: int, seed: int = 0) -> np.ndarray:
    """Orthonormal d x d matrix from the QR factorization of a seeded Gaussian matrix."""
    rng = np.random.default_rng(seed)
    q, r = np.linalg.qr(rng.standard_normal((d, d)))
    q = q * np.sign(np.diag(r))
    # one more Gram-Schmidt pass pushes R R^T - I to round-off level
    q, r = np.linalg.qr(q)
    return q * np.sign(np.diag(r))


def eval_potential(spec: SystemSpec, x) -> float:
    x = np.asarray(x, dtype=float)
    if x.shape != (spec.d,):
        raise InvalidInputError(f"expected a state of dimension {spec.d}, got shape {x.shape}")
    return float(spec.potential(x))


def drift(spec: SystemSpec, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (spec.d,):
        raise InvalidInputError(f"expected a state of dimension {spec.d}, got shape {x.shape}")
    return spec.drift(x)


# -- random streams -----------------------------------------------------------

def path_generator(seed: int, index: int) -> np.random.Generator:
    """Independent stream for path ``index`` under master ``seed``."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(int(index),)))


class NoiseSource:
    """Standard normal increments for a batch of paths, one stream per path.

    Each path's increments depend only on (seed, path index), never on the batch
    size or on the buffering block length.
    """

    def __init__(self, seed, n_paths, d, block=512, indices=None):
        idx = range(n_paths) if indices is None else indices
        self.generators = [path_generator(seed, j) for j in idx]
        self.d = d
        self.block = block
        self._buf = None
        self._pos = block

    def next(self) -> np.ndarray:
        if self._pos >= self.block:
            self._buf = np.stack([g.standard_normal((self.block, self.d)) for g in self.generators], axis=1)
            self._pos = 0
        out = self._buf[self._pos]
        self._pos += 1
        return out


# -- path records -------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class PathRecord:
    """One simulated path on a uniform time grid.

    ``controls[n]`` and ``noise[n]`` hold ``u_n`` and ``eta_n`` of the step
    from ``t_n`` to ``t_{n+1}`` when they were recorded.
    """

    t: np.ndarray
    x: np.ndarray
    seed: int
    controls: Optional[np.ndarray] = None
    noise: Optional[np.ndarray] = None

    def __post_init__(self):
        if len(self.t) != len(self.x):
            raise InvalidInputError("time grid and state array lengths differ")
        if len(self.t) > 1 and not np.all(np.diff(self.t) > 0):
            raise InvalidInputError("time grid must be increasing")

    @property
    def dt(self) -> float:
        return float(self.t[1] - self.t[0])

    @property
    def n_steps(self) -> int:
        return len(self.t) - 1

    def to_csv(self, path):
        x = self.x.reshape(len(self.t), -1)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + [f"x_{i + 1}" for i in range(x.shape[1])])
            for ti, xi in zip(self.t, x):
                w.writerow([repr(float(ti))] + [repr(float(v)) for v in xi])

    @classmethod
    def from_csv(cls, path, seed=0) -> "PathRecord":
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(data[:, 0], data[:, 1:], seed)


def check_finite(x, step):
    """Raise :class:`DivergenceError` if a state is non-finite or too large."""
    x = np.asarray(x)
    if not np.all(np.isfinite(x)) or np.linalg.norm(x) > DIVERGENCE_RADIUS:
        raise DivergenceError(f"path diverged at step {step}", step)


def simulate_em(spec: SystemSpec, x0, dt: float, n_steps: int, control=None, seed: int = 0,
                record: bool = False, t0: float = 0.0, path_index: int = 0) -> PathRecord:
    """Euler-Maruyama path of the (optionally controlled) dynamics.

    ``X_{n+1} = X_n + (b(X_n) + sigma u(t_n, X_n)) dt + sigma sqrt(dt) eta_n``.

    Parameters
    ----------
    control : callable, optional
        ``control(t, X)`` taking a batch ``X`` of shape (n, d) and returning
        controls of the same shape, in noise-channel units.
    record : bool
        Store ``u_n`` and ``eta_n`` alongside the states.
    """
    if not dt > 0:
        raise InvalidInputError("dt must be positive")
    if n_steps < 1:
        raise InvalidInputError("need at least one step")
    x = np.array(x0, dtype=float).reshape(1, spec.d)
    gen = path_generator(seed, path_index)
    eta = gen.standard_normal((n_steps, spec.d))
    xs = np.empty((n_steps + 1, spec.d))
    xs[0] = x[0]
    us = np.zeros((n_steps, spec.d)) if record else None
    sq = np.sqrt(dt)
    t = t0 + dt * np.arange(n_steps + 1)
    for n in range(n_steps):
        incr = spec.drift(x)
        if control is not None:
            u = control(t[n], x)
            incr = incr + spec.sigma * u
            if record:
                us[n] = u[0]
        x = x + incr * dt + spec.sigma * sq * eta[n]
        check_finite(x, n + 1)
        xs[n + 1] = x[0]
    return PathRecord(t, xs, seed, us, eta if record else None)


def long_run(spec: SystemSpec, x0, dt: float, n_steps: int, seed: int = 0, stride: int = 1,
             chunk: int = 1_000_000) -> PathRecord:
    """Long uncontrolled trajectory, stored every ``stride`` steps.

    Uses a compiled kernel for the 2D double well; other systems fall back to
    the vectorized drift. Noise comes from the same per-path stream as
    :func:`simulate_em`, so both agree step for step.
    """
    from . import _kernels

    gen = path_generator(seed, 0)
    x = np.array(x0, dtype=float)
    n_out = n_steps // stride
    xs = np.empty((n_out + 1, spec.d))
    xs[0] = x
    sq = np.sqrt(dt)
    done = 0
    out_pos = 1
    carry = 0
    while done < n_steps:
        m = min(chunk, n_steps - done)
        eta = gen.standard_normal((m, spec.d))
        if spec.kind == "double-well-2d":
            x, k, carry = _kernels.dw_run(x, eta, dt, spec.sigma, spec.alpha, spec.beta, spec.gamma,
                                          stride, carry, xs, out_pos)
            out_pos += k
        else:
            for n in range(m):
                x = x + spec.drift(x) * dt + spec.sigma * sq * eta[n]
                carry += 1
                if carry == stride:
                    xs[out_pos] = x
                    out_pos += 1
                    carry = 0
        if not np.all(np.isfinite(x)) or np.linalg.norm(x) > DIVERGENCE_RADIUS:
            raise DivergenceError(f"long run diverged in chunk ending at step {done + m}", done + m)
        done += m
    t = dt * stride * np.arange(n_out + 1)
    return PathRecord(t, xs[:out_pos], seed)
