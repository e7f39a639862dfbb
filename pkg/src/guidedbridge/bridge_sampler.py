"""Guided ensembles with Girsanov log-weights, ESS, resampling and SMC.

A guided path follows ``X_{n+1} = X_n + (b(X_n) + sigma u_n) dt + sigma sqrt(dt) eta_n``
and accumulates ``log w -= u_n . eta_n sqrt(dt) + 0.5 |u_n|^2 dt``.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .cv import CollectiveVariable, GridChiCV
from .errors import DegenerateEnsembleError, InvalidInputError
from .guidance import ControlLaw, ReferencePath, TrackingControl, ZeroControl
from .model_core import DIVERGENCE_RADIUS, NoiseSource, PathRecord, SystemSpec


# -- weights -------------------------------------------------------------------

def normalized_weights(logw) -> np.ndarray:
    """Normalized weights from log-weights via log-sum-exp; ``-inf`` entries get weight 0."""
    logw = np.asarray(logw, dtype=float)
    if logw.size == 0 or not np.any(np.isfinite(logw)):
        raise DegenerateEnsembleError("no finite log-weight")
    w = np.exp(logw - logsumexp(logw))
    return w / w.sum()


def ess(weights) -> float:
    """Effective sample size ``1 / sum(w~^2)`` of (unnormalized) nonnegative weights."""
    w = np.asarray(weights, dtype=float)
    if w.size == 0 or np.any(w < 0) or not np.all(np.isfinite(w)):
        raise InvalidInputError("weights must be finite and nonnegative")
    total = w.sum()
    if total <= 0:
        raise DegenerateEnsembleError("all weights are zero")
    wn = w / total
    return float(1.0 / np.sum(wn**2))


def ess_from_logw(logw) -> float:
    return float(1.0 / np.sum(normalized_weights(logw) ** 2))


def systematic_resample(weights, rng: np.random.Generator) -> np.ndarray:
    """Ancestor indices by systematic resampling with a single uniform offset."""
    w = np.asarray(weights, dtype=float)
    n = len(w)
    cdf = np.cumsum(w / w.sum())
    cdf[-1] = 1.0
    positions = (rng.random() + np.arange(n)) / n
    return np.searchsorted(cdf, positions, side="right")


# -- propagation state ---------------------------------------------------------

@dataclass
class _State:
    x: np.ndarray
    logw: np.ndarray
    cost: np.ndarray
    steps: np.ndarray
    active: np.ndarray
    diverged: np.ndarray
    clamped: np.ndarray
    stop_code: np.ndarray
    stop_time: np.ndarray
    first_hit: np.ndarray

    @classmethod
    def start(cls, x0, n):
        x = np.array(np.broadcast_to(np.asarray(x0, float), (n, np.shape(x0)[-1])))
        return cls(x, np.zeros(n), np.zeros(n), np.zeros(n, np.int64), np.ones(n, bool), np.zeros(n, bool),
                   np.zeros(n, bool), np.zeros(n, np.int64), np.full(n, np.nan), np.full(n, np.nan))

    def take(self, idx):
        return _State(*(getattr(self, f)[idx].copy() for f in self.__dataclass_fields__))


def _advance(spec: SystemSpec, control: ControlLaw, state: _State, noise: NoiseSource, t0: float, dt: float,
             n_steps: int, cv: CollectiveVariable | None = None, stop=None, monitor=None, recorder=None):
    """Advance all active paths ``n_steps`` steps from time ``t0`` in place.

    ``stop(x)`` returns an int code per state (0 continue); ``monitor(x)`` a
    bool whose first True time is stored in ``first_hit``.
    """
    sigma = spec.sigma
    sq = np.sqrt(dt)
    zero = isinstance(control, ZeroControl)
    for n in range(n_steps):
        eta_all = noise.next()
        t = t0 + n * dt
        act = np.flatnonzero(state.active)
        if act.size == 0:
            if recorder is not None:
                recorder(n + 1, state.x)
            continue
        x = state.x[act]
        eta = eta_all[act]
        if zero:
            x_new = x + spec.drift(x) * dt + sigma * sq * eta
        else:
            u = control(t, x)
            x_new = x + (spec.drift(x) + sigma * u) * dt + sigma * sq * eta
            uu = np.einsum("ij,ij->i", u, u)
            state.logw[act] -= np.einsum("ij,ij->i", u, eta) * sq + 0.5 * uu * dt
            state.cost[act] += 0.5 * uu * dt
        state.steps[act] += 1
        bad = ~np.all(np.isfinite(x_new), axis=1) | (np.max(np.abs(x_new), axis=1) > DIVERGENCE_RADIUS)
        if bad.any():
            b = act[bad]
            state.diverged[b] = True
            state.active[b] = False
            state.logw[b] = -np.inf
            state.stop_time[b] = t + dt
            x_new[bad] = x[bad]
        state.x[act] = x_new
        if cv is not None:
            state.clamped[act] |= cv.clamped(x_new)
        if monitor is not None:
            fresh = np.isnan(state.first_hit[act])
            if fresh.any():
                hit = monitor(x_new[fresh])
                state.first_hit[act[fresh][hit]] = t + dt
        if stop is not None:
            code = np.asarray(stop(x_new), dtype=np.int64)
            code[bad] = 0
            done = code != 0
            if done.any():
                d = act[done]
                state.stop_code[d] = code[done]
                state.active[d] = False
                state.stop_time[d] = t + dt
        if recorder is not None:
            recorder(n + 1, state.x)


class _Recorder:
    def __init__(self, n_steps, stride, x0):
        self.stride = stride
        self.frames = [x0.copy()]
        self.steps = [0]
        self.offset = 0

    def __call__(self, n, x):
        k = self.offset + n
        if k % self.stride == 0:
            self.frames.append(x.copy())
            self.steps.append(k)


# -- ensembles -----------------------------------------------------------------

@dataclass(eq=False)
class WeightedPathEnsemble:
    """N guided paths with Girsanov log-weights and per-path flags.

    Attributes
    ----------
    endpoints : ndarray (N, d)
        Final (or stopped) states.
    logw : ndarray (N,)
        Log-weights; ``-inf`` for diverged paths.
    cost : ndarray (N,)
        Control energy ``0.5 * int |u|^2 dt``.
    steps : ndarray (N,)
        Fine steps simulated per path.
    stop_code, stop_time : ndarray (N,)
        Stopping-set code (0 if never stopped) and time.
    first_hit : ndarray (N,)
        First time the monitored predicate held (nan if never).
    t, paths : ndarray or None
        Recorded times (n_rec,) and states (n_rec, N, d).
    """

    endpoints: np.ndarray
    logw: np.ndarray
    cost: np.ndarray
    steps: np.ndarray
    diverged: np.ndarray
    clamped: np.ndarray
    stop_code: np.ndarray
    stop_time: np.ndarray
    first_hit: np.ndarray
    dt: float
    seed: int
    t: np.ndarray | None = None
    paths: np.ndarray | None = None
    resampling_log: list = field(default_factory=list)
    gain_log: list = field(default_factory=list)

    @property
    def n(self) -> int:
        return len(self.logw)

    @property
    def weights(self) -> np.ndarray:
        return normalized_weights(self.logw)

    @property
    def ess(self) -> float:
        return float(1.0 / np.sum(self.weights**2))

    @property
    def total_steps(self) -> int:
        return int(self.steps.sum())

    def path(self, j: int) -> PathRecord:
        if self.paths is None:
            raise InvalidInputError("paths were not recorded")
        return PathRecord(self.t.copy(), self.paths[:, j].copy(), self.seed)

    def to_csv(self, path, stride: int = 1):
        """Rows ``(path_id, t, x_1..x_d, logw)``; endpoints only when paths were not recorded."""
        d = self.endpoints.shape[1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["path_id", "t"] + [f"x_{i + 1}" for i in range(d)] + ["logw"])
            for j in range(self.n):
                lw = repr(float(self.logw[j]))
                if self.paths is None:
                    end_t = self.stop_time[j] if np.isfinite(self.stop_time[j]) else self.steps[j] * self.dt
                    w.writerow([j, repr(float(end_t))] + [repr(float(v)) for v in self.endpoints[j]] + [lw])
                    continue
                for k in range(0, len(self.t), stride):
                    w.writerow([j, repr(float(self.t[k]))] + [repr(float(v)) for v in self.paths[k, j]] + [lw])

    def save_resampling_log(self, path):
        with open(path, "w") as fh:
            json.dump({"resampling": self.resampling_log, "gain": self.gain_log}, fh, indent=1)


def _ensemble(state: _State, dt, seed, rec: _Recorder | None, t0) -> WeightedPathEnsemble:
    if state.diverged.all():
        raise DegenerateEnsembleError(f"all {len(state.x)} paths diverged")
    t = paths = None
    if rec is not None:
        t = t0 + dt * np.asarray(rec.steps, float)
        paths = np.stack(rec.frames)
    return WeightedPathEnsemble(state.x.copy(), state.logw, state.cost, state.steps, state.diverged, state.clamped,
                                state.stop_code, state.stop_time, state.first_hit, dt, seed, t, paths)


def _n_steps(T, T_new, dt):
    span = T_new - T
    if not dt > 0 or not span > 0:
        raise InvalidInputError("need dt > 0 and T_new > T")
    m = int(round(span / dt))
    if m < 1 or abs(m * dt - span) > 1e-9 * max(1.0, span):
        raise InvalidInputError("dt must divide T_new - T")
    return m


def run_guided_bridge(spec: SystemSpec, cv: CollectiveVariable | None, control: ControlLaw | None, x0, T: float,
                      T_new: float, dt: float, N: int, seed: int = 0, record_stride: int | None = None,
                      stop=None, monitor=None, block: int = 512) -> WeightedPathEnsemble:
    """Simulate ``N`` guided paths on ``[T, T_new]`` and their Girsanov log-weights.

    ``x0`` is a single state (d,) or one state per path (N, d). With ``stop``
    given, paths freeze when ``stop(x)`` returns a nonzero code.
    """
    if N < 1:
        raise InvalidInputError("N must be positive")
    M = _n_steps(T, T_new, dt)
    control = ZeroControl() if control is None else control
    state = _State.start(x0, N)
    if state.x.shape[1] != spec.d:
        raise InvalidInputError("x0 dimension does not match the system")
    noise = NoiseSource(seed, N, spec.d, block=block)
    rec = _Recorder(M, record_stride, state.x) if record_stride else None
    if stop is not None:
        code = np.asarray(stop(state.x), np.int64)
        state.stop_code[:] = code
        state.active[code != 0] = False
        state.stop_time[code != 0] = T
    _advance(spec, control, state, noise, T, dt, M, cv, stop, monitor, rec)
    return _ensemble(state, dt, seed, rec, T)


def resample_endpoint(ensemble: WeightedPathEnsemble, seed: int = 0):
    """Draw one endpoint with probability equal to its normalized weight.

    Returns ``(state, index)``.
    """
    w = ensemble.weights
    j = int(np.random.default_rng(seed).choice(len(w), p=w))
    return ensemble.endpoints[j].copy(), j


def run_smc_bridge(spec: SystemSpec, cv: CollectiveVariable | None, control: ControlLaw, x0, T: float, T_new: float,
                   dt: float, N: int, seed: int = 0, ess_threshold: float = 0.5, block: int = 100,
                   adaptive_gain: bool = False, record_stride: int | None = None) -> WeightedPathEnsemble:
    """Guided ensemble with systematic resampling whenever ESS < ``ess_threshold * N``.

    Paths are propagated in blocks of ``block`` steps. Each resampling event is
    logged with its time, ESS and ancestor indices; recorded paths are
    reconstructed along the genealogy. With ``adaptive_gain`` the control is
    scaled by 0.8 whenever the ESS of the last block's incremental weights drops
    below ``0.3 N``, down to 0.1 times the initial gain.
    """
    if not 0 < ess_threshold < 1:
        raise InvalidInputError("ess_threshold must lie in (0, 1)")
    if block < 1:
        raise InvalidInputError("block must be positive")
    M = _n_steps(T, T_new, dt)
    state = _State.start(x0, N)
    noise = NoiseSource(seed, N, spec.d)
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(2**31,)))
    frames = [state.x.copy()]
    frame_steps = [0]
    # (frame index at the event, ancestor of each slot)
    events = []
    factor = 1.0
    law = control
    log, gains = [], []
    done = 0
    while done < M:
        m = min(block, M - done)
        before = state.logw.copy()
        rec = None
        if record_stride:
            rec = _Recorder(m, record_stride, state.x)
            rec.offset = done
        _advance(spec, law, state, noise, T + done * dt, dt, m, cv, None, None, rec)
        if rec is not None:
            frames.extend(rec.frames[1:])
            frame_steps.extend(rec.steps[1:])
        done += m
        t_now = T + done * dt
        if state.diverged.all():
            raise DegenerateEnsembleError(f"all {N} paths diverged")
        if adaptive_gain:
            inc = state.logw - np.where(np.isfinite(before), before, 0.0)
            if np.any(np.isfinite(inc)) and ess_from_logw(inc) < 0.3 * N and factor > 0.1:
                factor = max(0.1, 0.8 * factor)
                law = control.scaled(factor)
                gains.append({"t": t_now, "factor": factor})
        cur = ess_from_logw(state.logw)
        if cur < ess_threshold * N and done < M:
            anc = systematic_resample(normalized_weights(state.logw), rng)
            state = state.take(anc)
            state.logw[:] = 0.0
            events.append((len(frames) - 1, anc))
            log.append({"t": t_now, "step": done, "ess": cur, "ancestors": anc.tolist()})
    ens = _ensemble(state, dt, seed, None, T)
    ens.resampling_log = log
    ens.gain_log = gains
    if record_stride:
        paths = np.stack(frames)
        # walk the genealogy backwards so each slot's history follows its ancestors
        lineage = np.arange(N)
        out = paths.copy()
        for frame_idx, anc in reversed(events):
            lineage = anc[lineage]
            out[: frame_idx + 1] = paths[: frame_idx + 1][:, lineage]
        ens.t = T + dt * np.asarray(frame_steps, float)
        ens.paths = out
    return ens


# -- reactive ensembles --------------------------------------------------------

@dataclass(eq=False)
class ReactiveEnsemble:
    """Accepted reactive pieces of guided paths plus summary statistics."""

    paths: list
    durations: np.ndarray
    attempts: int
    histogram: np.ndarray
    edges: tuple
    ensemble: WeightedPathEnsemble

    @property
    def mean_duration(self) -> float:
        return float(self.durations.mean())

    @property
    def std_duration(self) -> float:
        return float(self.durations.std(ddof=1)) if len(self.durations) > 1 else 0.0

    def histogram_to_csv(self, path):
        ex, ey = self.edges
        cx = 0.5 * (ex[1:] + ex[:-1])
        cy = 0.5 * (ey[1:] + ey[:-1])
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "y", "density"])
            for i, xv in enumerate(cx):
                for j, yv in enumerate(cy):
                    w.writerow([repr(float(xv)), repr(float(yv)), repr(float(self.histogram[i, j]))])


def level_band_starts(chi: GridChiCV, mu, z_level: float, tol: float, n: int, seed: int = 0) -> np.ndarray:
    """``n`` states from ``mu`` restricted to nodes with ``|chi - z_level| < tol``.

    Each draw picks a node with probability proportional to ``mu`` and adds a
    uniform jitter within its cell.
    """
    vals = chi.values.ravel()
    band = np.flatnonzero(np.abs(vals - z_level) < tol)
    if band.size == 0:
        raise InvalidInputError("no grid node inside the level-set band")
    p = np.asarray(mu).ravel()[band]
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(2**31 + 1,)))
    pick = band[rng.choice(band.size, size=n, p=p / p.sum())]
    i, j = np.unravel_index(pick, chi.values.shape)
    x = np.stack([chi.xs[i], chi.ys[j]], axis=1)
    return x + (rng.random((n, 2)) - 0.5) * np.array([chi.hx, chi.hy])


def sample_reactive_ensemble(spec: SystemSpec, chi: GridChiCV, mu, segment, gain, N: int = 100,
                             z_min: float = 0.1, z_max: float = 0.9, tol: float = 0.02, dt: float = 1e-3,
                             max_T: float = 100.0, seed: int = 0, u_max: float | None = 50.0,
                             hist_bins=25, hist_range=((-2.5, 2.5), (-2.5, 2.5)), record_stride: int = 10,
                             max_rounds: int = 10) -> ReactiveEnsemble:
    """Guided reactive paths from the ``z_min`` level set to ``{chi >= z_max}``.

    ``segment`` is a coarse latent segment ``(times, values)`` from ``z_min`` to
    ``z_max``; it is shifted to start at 0 and held at its last value. Paths run
    until ``chi >= z_max`` or ``max_T``. The reactive piece of a hitting path runs
    from its last visit to ``{chi <= z_min}`` (or its start) to the hit. Paths
    that never hit are discarded and redrawn, up to ``max_rounds`` rounds.
    """
    times, values = (np.asarray(a, float) for a in segment)
    ref = ReferencePath(times - times[0], values, hold=True)
    law = TrackingControl(chi, ref, gain if callable(gain) else _const(gain), u_max=u_max)

    def stop(x):
        return (chi.scalar(x) >= z_max).astype(np.int64)

    accepted, durations = [], []
    attempts = 0
    last = None
    for r in range(max_rounds):
        need = N - len(accepted)
        if need <= 0:
            break
        n_try = need if r == 0 else 2 * need
        x0 = level_band_starts(chi, mu, z_min, tol, n_try, seed=seed + 7919 * r)
        ens = run_guided_bridge(spec, chi, law, x0, 0.0, max_T, dt, n_try, seed=seed + 7919 * r,
                                record_stride=record_stride, stop=stop)
        attempts += n_try
        last = ens
        for j in np.flatnonzero(ens.stop_code == 1):
            if len(accepted) >= N:
                break
            z = chi.scalar(ens.paths[:, j])
            k_hit = int(np.searchsorted(ens.t, ens.stop_time[j] - 1e-12))
            k_hit = min(max(k_hit, 0), len(ens.t) - 1)
            below = np.flatnonzero(z[: k_hit + 1] <= z_min)
            k0 = int(below[-1]) if below.size else 0
            accepted.append(ens.paths[k0: k_hit + 1, j])
            durations.append(ens.stop_time[j] - ens.t[k0])
    if not accepted:
        raise DegenerateEnsembleError(f"no reactive path accepted out of {attempts} attempts")
    pts = np.concatenate(accepted)
    H, ex, ey = np.histogram2d(pts[:, 0], pts[:, 1], bins=hist_bins, range=hist_range)
    H = H / H.sum()
    return ReactiveEnsemble(accepted, np.asarray(durations), attempts, H, (ex, ey), last)


def _const(g):
    from .guidance import ConstantGain

    return ConstantGain(float(g))
