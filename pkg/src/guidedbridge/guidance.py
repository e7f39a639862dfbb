"""Feedback control laws in noise-channel units.

A control ``u(t, x)`` enters the dynamics as ``dX = (b + sigma u) dt + sigma dW``.
Every law maps a batch of states of shape (N, d) at time ``t`` to controls of
shape (N, d).
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .cv import CollectiveVariable
from .effective_model import LatentProbabilityTable
from .errors import ConfigError, InvalidInputError, RangeError


# -- reference paths -------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ReferencePath:
    """Piecewise-linear latent reference through knots ``(times[j], values[j])``.

    ``values`` has shape (n_knots,) or (n_knots, m). Queries outside
    ``[times[0], times[-1]]`` raise :class:`RangeError` unless ``hold`` is set,
    in which case the end values are held.
    """

    times: np.ndarray
    values: np.ndarray
    hold: bool = False

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if len(t) < 2 or v.shape[0] != len(t):
            raise InvalidInputError("need at least two knots with one value each")
        if np.any(np.diff(t) <= 0):
            raise InvalidInputError("knot times must be strictly increasing")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)

    @property
    def m(self) -> int:
        return self.values.shape[1]

    def __call__(self, t) -> np.ndarray:
        """Reference value(s) of shape (m,) for scalar ``t``."""
        t = float(t)
        lo, hi = self.times[0], self.times[-1]
        tol = 1e-12 * max(1.0, abs(hi))
        if not lo - tol <= t <= hi + tol:
            if not self.hold:
                raise RangeError(f"t={t} outside the reference range [{lo}, {hi}]")
        t = min(max(t, lo), hi)
        return np.array([np.interp(t, self.times, self.values[:, k]) for k in range(self.m)])


def interpolate_reference(knots, hold: bool = False) -> ReferencePath:
    """Reference path from a sequence of ``(time, value)`` knots."""
    knots = list(knots)
    return ReferencePath(np.array([k[0] for k in knots], float), np.array([k[1] for k in knots], float), hold)


def linear_reference(z_start, z_end, t0, t1, n_knots=10, hold=False) -> ReferencePath:
    """Straight latent ramp from ``z_start`` at ``t0`` to ``z_end`` at ``t1``."""
    t = np.linspace(t0, t1, n_knots)
    return ReferencePath(t, np.linspace(z_start, z_end, n_knots), hold)


# -- gain schedules --------------------------------------------------------------

@dataclass(frozen=True)
class ConstantGain:
    value: float

    def __call__(self, t):
        return self.value


@dataclass(frozen=True)
class PiecewiseGain:
    """Gain ``values[k]`` on ``[breaks[k-1], breaks[k])`` with ``len(values) = len(breaks) + 1``."""

    breaks: tuple
    values: tuple

    def __post_init__(self):
        if len(self.values) != len(self.breaks) + 1:
            raise InvalidInputError("piecewise gain needs one more value than breakpoints")
        if np.any(np.diff(self.breaks) <= 0):
            raise InvalidInputError("breakpoints must increase")

    def __call__(self, t):
        return self.values[int(np.searchsorted(self.breaks, t, side="right"))]


@dataclass(frozen=True)
class RampGain:
    """Gain moving linearly from ``g0`` at ``t0`` to ``g1`` at ``t1``, held outside."""

    t0: float
    t1: float
    g0: float
    g1: float

    def __call__(self, t):
        return float(np.interp(t, [self.t0, self.t1], [self.g0, self.g1]))


def gain_from_config(cfg) -> object:
    """Gain schedule from a number or a ``{"kind": ...}`` mapping."""
    if isinstance(cfg, (int, float)):
        return ConstantGain(float(cfg))
    kind = cfg.get("kind")
    args = {k: v for k, v in cfg.items() if k != "kind"}
    try:
        if kind == "constant":
            return ConstantGain(float(args["value"]))
        if kind == "piecewise":
            return PiecewiseGain(tuple(args["breaks"]), tuple(args["values"]))
        if kind == "ramp":
            return RampGain(**args)
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"bad gain schedule {cfg!r}: {exc}") from exc
    raise ConfigError(f"unknown gain schedule kind {kind!r}")


def _gain_matrix(g, m):
    g = np.asarray(g, dtype=float)
    G = g * np.eye(m) if g.ndim == 0 else g
    if G.shape != (m, m):
        raise InvalidInputError("gain must be scalar or m x m")
    if not np.allclose(G, G.T) or np.linalg.eigvalsh(G).min() < -1e-12:
        raise InvalidInputError("gain must be symmetric positive semidefinite")
    return G


def clip_norm(u, u_max):
    """Rescale rows of ``u`` whose Euclidean norm exceeds ``u_max``."""
    if u_max is None:
        return u
    norm = np.linalg.norm(u, axis=-1, keepdims=True)
    return u * (u_max / np.maximum(norm, u_max))


def _slope(q, z):
    """Central differences with one-sided ends; exactly zero on constant tables."""
    dq = np.empty_like(q)
    dq[1:-1] = (q[2:] - q[:-2]) / (z[2:] - z[:-2])
    dq[0] = (q[1] - q[0]) / (z[1] - z[0])
    dq[-1] = (q[-1] - q[-2]) / (z[-1] - z[-2])
    return dq


# -- control laws ----------------------------------------------------------------

class ControlLaw:
    """Base class; subclasses implement ``__call__(t, x) -> u``."""

    kind = "none"

    def scaled(self, factor: float) -> "ControlLaw":
        """Copy with the gain (or boost) multiplied by ``factor``."""
        raise NotImplementedError


@dataclass(frozen=True, eq=False)
class ZeroControl(ControlLaw):
    kind = "zero"

    def __call__(self, t, x):
        return np.zeros_like(np.asarray(x, dtype=float))

    def scaled(self, factor):
        return self


@dataclass(frozen=True, eq=False)
class ConstantControl(ControlLaw):
    """Constant control vector, broadcast over the batch."""

    u: np.ndarray
    kind = "constant"

    def __call__(self, t, x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(np.asarray(self.u, float), x.shape).copy()

    def scaled(self, factor):
        return dataclasses.replace(self, u=factor * np.asarray(self.u, float))


@dataclass(frozen=True, eq=False)
class TrackingControl(ControlLaw):
    """``u = J^T G~ (zbar_t - xi(x))`` with ``G~ = G_t (J J^T + rho I)^-1`` when ``rho > 0``."""

    cv: CollectiveVariable
    reference: ReferencePath
    gain: object
    rho: float = 0.0
    u_max: float | None = 50.0
    gain_factor: float = 1.0
    kind = "tracking"

    def __call__(self, t, x):
        x = np.asarray(x, dtype=float)
        J = self.cv.jacobian(x)
        err = self.reference(t) - self.cv.value(x)
        G = self.gain_factor * _gain_matrix(self.gain(t), self.cv.m)
        if self.rho > 0:
            M = J @ np.swapaxes(J, -1, -2) + self.rho * np.eye(self.cv.m)
            v = np.linalg.solve(M, err[..., None])[..., 0]
        else:
            v = err
        u = np.einsum("...md,...m->...d", J, v @ G.T)
        return clip_norm(u, self.u_max)

    def scaled(self, factor):
        return dataclasses.replace(self, gain_factor=self.gain_factor * factor)


@dataclass(frozen=True, eq=False)
class OptimalGuidance(ControlLaw):
    """``u = kappa sigma d/dz log p(s, xi(x)) J^T`` from a latent probability table."""

    cv: CollectiveVariable
    table: LatentProbabilityTable
    kappa: float
    sigma: float
    u_max: float | None = None
    kind = "optimal-guidance"

    def __call__(self, t, x):
        x = np.asarray(x, dtype=float)
        if self.kappa == 0:
            return np.zeros_like(x)
        z = self.cv.scalar(x)
        g = self.table.dlog(t, z)
        u = self.kappa * self.sigma * g[..., None] * self.cv.jacobian(x)[..., 0, :]
        return clip_norm(u, self.u_max)

    def scaled(self, factor):
        return dataclasses.replace(self, kappa=self.kappa * factor)


@dataclass(frozen=True, eq=False)
class CommittorGuidance(ControlLaw):
    """``u = kappa sigma q'(xi) / q(xi) J^T`` from a tabulated latent committor."""

    cv: CollectiveVariable
    z: np.ndarray
    q: np.ndarray
    kappa: float
    sigma: float
    q_floor: float = 1e-6
    u_max: float | None = None
    kind = "committor-guidance"

    def __post_init__(self):
        z = np.asarray(self.z, float)
        q = np.asarray(self.q, float)
        if z.shape != q.shape or len(z) < 2:
            raise InvalidInputError("committor table needs matching z and q arrays")
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "_dq", _slope(q, z))

    def __call__(self, t, x):
        x = np.asarray(x, dtype=float)
        if self.kappa == 0:
            return np.zeros_like(x)
        zq = self.cv.scalar(x)
        q = np.maximum(np.interp(zq, self.z, self.q), self.q_floor)
        dq = np.interp(zq, self.z, self._dq)
        u = self.kappa * self.sigma * (dq / q)[..., None] * self.cv.jacobian(x)[..., 0, :]
        return clip_norm(u, self.u_max)

    def scaled(self, factor):
        return dataclasses.replace(self, kappa=self.kappa * factor)


def tracking_control(x, t, cv, ref, gain, rho=0.0, u_max=None):
    """Functional form of :class:`TrackingControl`."""
    g = gain if callable(gain) else ConstantGain(gain)
    return TrackingControl(cv, ref, g, rho, u_max)(t, x)


def optimal_guidance_control(x, s, cv, table, kappa, sigma):
    return OptimalGuidance(cv, table, kappa, sigma)(s, x)


def committor_guidance_control(x, cv, z, q, kappa, sigma, q_floor=1e-6):
    return CommittorGuidance(cv, z, q, kappa, sigma, q_floor)(0.0, x)
