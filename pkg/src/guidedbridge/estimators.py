"""Estimators for observables, transition probabilities and committors."""
from __future__ import annotations

import json
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import norm

from .bridge_sampler import WeightedPathEnsemble, normalized_weights, run_guided_bridge
from .cv import CollectiveVariable
from .errors import DegenerateEnsembleError, InvalidInputError, NumericError
from .guidance import CommittorGuidance, OptimalGuidance, ZeroControl
from .model_core import SystemSpec


@dataclass
class EstimateReport:
    """Point estimate with standard error, confidence interval and cost.

    ``cost`` counts simulated fine Euler-Maruyama steps over all paths.
    ``extra`` carries estimator-specific diagnostics.
    """

    estimate: float
    se: float
    ci: tuple
    n: int
    cost: int
    kind: str
    level: float = 0.95
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["ci"] = list(self.ci)
        return _jsonable(d)

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=2)
        if path is not None:
            Path(path).write_text(text)
        return text

    def overlaps(self, lo: float, hi: float) -> bool:
        return self.ci[0] <= hi and lo <= self.ci[1]

    def append_csv(self, path, experiment: str = ""):
        """Append one row to a results ledger CSV, writing a header for a new file."""
        p = Path(path)
        new = not p.exists()
        with open(p, "a") as fh:
            if new:
                fh.write("experiment,kind,estimate,se,ci_low,ci_high,n,cost\n")
            nums = [float(v) for v in (self.estimate, self.se, self.ci[0], self.ci[1])]
            fh.write(",".join([experiment, self.kind] + [repr(v) for v in nums] + [str(int(self.n)), str(int(self.cost))])
                     + "\n")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def normal_interval(est, se, level=0.95):
    k = norm.ppf(0.5 + level / 2)
    return (est - k * se, est + k * se)


def wilson_interval(successes: int, n: int, level: float = 0.95):
    """Wilson score interval for a binomial proportion."""
    if n <= 0:
        raise DegenerateEnsembleError("no samples")
    k = norm.ppf(0.5 + level / 2)
    p = successes / n
    denom = 1 + k**2 / n
    center = (p + k**2 / (2 * n)) / denom
    half = k * np.sqrt(p * (1 - p) / n + k**2 / (4 * n**2)) / denom
    return (max(0.0, center - half), min(1.0, center + half))


def _binomial_report(successes, n, cost, kind, level=0.95, extra=None):
    p = successes / n
    se = float(np.sqrt(p * (1 - p) / n))
    return EstimateReport(p, se, wilson_interval(successes, n, level), n, int(cost), kind, level, extra or {})


def weighted_expectation(ensemble: WeightedPathEnsemble, f, level: float = 0.95) -> EstimateReport:
    """Self-normalized importance-sampling estimate of ``E[f(X_T)]``.

    The standard error follows the delta method for a ratio estimator,
    ``se^2 = sum w~_j^2 (f_j - est)^2``.
    """
    w = normalized_weights(ensemble.logw)
    vals = np.asarray(f(ensemble.endpoints), dtype=float)
    return _weighted_report(w, vals, ensemble.n, ensemble.total_steps, "weighted", level,
                            {"ess": float(1.0 / np.sum(w**2))})


def _weighted_report(w, vals, n, cost, kind, level, extra):
    keep = w > 0
    est = float(np.sum(w[keep] * vals[keep]))
    se = float(np.sqrt(np.sum(w[keep] ** 2 * (vals[keep] - est) ** 2)))
    return EstimateReport(est, se, normal_interval(est, se, level), n, int(cost), kind, level, extra)


def unnormalized_is(logw, vals, n, cost, kind, level=0.95, extra=None) -> EstimateReport:
    """Plain importance-sampling mean ``(1/N) sum w_j f_j`` with its sample standard error."""
    w = np.exp(np.asarray(logw, float))
    terms = w * np.asarray(vals, float)
    est = float(terms.mean())
    se = float(terms.std(ddof=1) / np.sqrt(len(terms))) if len(terms) > 1 else 0.0
    extra = dict(extra or {})
    extra["ess"] = float(terms.sum() ** 2 / np.sum(terms**2)) if np.any(terms > 0) else 0.0
    return EstimateReport(est, se, normal_interval(est, se, level), n, int(cost), kind, level, extra)


def estimate_pB_mc(spec: SystemSpec, cv: CollectiveVariable, x0, z_star: float, T: float, N: int,
                   dt: float = 1e-3, seed: int = 0, level: float = 0.95) -> EstimateReport:
    """Fraction of uncontrolled paths with ``xi(X_T) > z_star`` and its Wilson interval.

    The fraction of paths that visited ``{xi > z_star}`` at any time up to
    ``T`` is reported in ``extra["hit_by_T"]``.
    """
    if N < 1:
        raise DegenerateEnsembleError("N must be positive")
    ens = run_guided_bridge(spec, cv, ZeroControl(), x0, 0.0, T, dt, N, seed,
                            monitor=lambda x: cv.scalar(x) > z_star)
    inside = cv.scalar(ens.endpoints) > z_star
    hit = np.isfinite(ens.first_hit) | (cv.scalar(np.asarray(x0, float)) > z_star)
    aux = _binomial_report(int(hit.sum()), N, ens.total_steps, "hit-by-T", level)
    return _binomial_report(int(inside.sum()), N, ens.total_steps, "pB-mc", level,
                            {"hit_by_T": aux.to_dict(), "dt": dt, "T": T, "z_star": z_star,
                             "diverged": int(ens.diverged.sum())})


def estimate_pB_guided(spec: SystemSpec, cv: CollectiveVariable, table, kappa: float, x0, z_star: float, T: float,
                       N: int, eps: float = 1e-12, dt: float = 1e-3, seed: int = 0,
                       level: float = 0.95, u_max: float | None = None) -> EstimateReport:
    """Transition probability from optimally guided paths.

    The returned report holds the unbiased importance-sampling form
    ``mean(w 1_B(X_T))``. ``extra["soc"]`` holds the exponential form
    ``exp(-mean(0.5 int |u|^2))`` over paths ending in B, floored at ``eps``;
    ``extra["soc_strict"]`` is ``eps`` whenever some path misses B.
    ``u_max`` clips the guidance; near the horizon an unclipped table derivative
    can kick paths across the threshold in a single step.
    """
    if abs(table.z_star - z_star) > 1e-12 or abs(table.t - T) > 1e-9:
        raise NumericError("probability table does not match z_star and T")
    law = OptimalGuidance(cv, table, kappa, spec.sigma, u_max)
    ens = run_guided_bridge(spec, cv, law, x0, 0.0, T, dt, N, seed)
    inside = cv.scalar(ens.endpoints) > z_star
    soc = _soc_form(ens.cost, inside, eps, level)
    n_in = int(inside.sum())
    soc_strict = soc["estimate"] if n_in == N else eps
    extra = {"soc": soc, "soc_strict": soc_strict, "b_fraction": n_in / N, "kappa": kappa, "u_max": u_max,
             "dt": dt, "T": T,
             "z_star": z_star, "mean_cost": float(ens.cost.mean()), "diverged": int(ens.diverged.sum()),
             "clamped": int(ens.clamped.sum()), "weighted_ess": float(ens.ess)}
    if n_in == 0:
        warnings.warn("no guided path reached B; estimate is 0", RuntimeWarning, stacklevel=2)
    return unnormalized_is(ens.logw, inside, N, ens.total_steps, "pB-guided-is", level, extra)


def _soc_form(cost, hit, eps, level):
    """``exp(-mean(cost))`` over hitting paths with a delta-method interval."""
    c = np.asarray(cost, float)[np.asarray(hit, bool)]
    if c.size == 0:
        return {"estimate": eps, "se": None, "ci": [eps, eps], "n_used": 0}
    est = float(np.exp(-c.mean()))
    se = float(est * c.std(ddof=1) / np.sqrt(c.size)) if c.size > 1 else 0.0
    lo, hi = normal_interval(est, se, level)
    est_r = max(est, eps)
    return {"estimate": est_r, "se": se, "ci": [max(lo, 0.0), hi], "n_used": int(c.size)}


def estimate_committor_guided(spec: SystemSpec, cv: CollectiveVariable, z, q, kappa: float, x0, z_A: float = 0.1,
                              z_B: float = 0.9, N: int = 100, max_T: float = 200.0, dt: float = 1e-3,
                              seed: int = 0, q_floor: float = 1e-6, level: float = 0.95) -> EstimateReport:
    """Committor of ``x0`` between ``{xi <= z_A}`` and ``{xi >= z_B}`` from guided paths.

    Paths run until they hit either set or ``max_T``. With ``kappa = 0`` the
    paths are uncontrolled and the report is the plain hit fraction with a
    Wilson interval. Otherwise the report holds the exponential form
    ``exp(-mean(0.5 int |u|^2))`` over B-hitting paths, with censored paths
    excluded and counted; ``extra["is"]`` is the weighted hit fraction.
    Hitting-time statistics of B-hitting paths are in ``extra["tau_B"]``.
    """
    x0 = np.asarray(x0, float)
    z0 = float(cv.scalar(x0))
    if z0 >= z_B or z0 <= z_A:
        val = 1.0 if z0 >= z_B else 0.0
        return EstimateReport(val, 0.0, (val, val), N, 0, "committor", level, {"immediate": True})

    def stop(x):
        zz = cv.scalar(x)
        return np.where(zz >= z_B, 2, np.where(zz <= z_A, 1, 0))

    law = ZeroControl() if kappa == 0 else CommittorGuidance(cv, z, q, kappa, spec.sigma, q_floor)
    ens = run_guided_bridge(spec, cv, law, x0, 0.0, max_T, dt, N, seed, stop=stop)
    hit_B = ens.stop_code == 2
    hit_A = ens.stop_code == 1
    censored = ens.stop_code == 0
    if censored.all():
        raise NumericError(f"all {N} paths censored at max_T={max_T}")
    tau = ens.stop_time[hit_B]
    extra = {"kappa": kappa, "n_B": int(hit_B.sum()), "n_A": int(hit_A.sum()), "n_censored": int(censored.sum()),
             "tau_B": {"mean": float(tau.mean()) if tau.size else None,
                       "std": float(tau.std(ddof=1)) if tau.size > 1 else None, "n": int(tau.size)},
             "mean_path_time": float(ens.steps.mean() * dt), "dt": dt, "max_T": max_T,
             "diverged": int(ens.diverged.sum())}
    n_used = int((~censored).sum())
    if kappa == 0:
        return _binomial_report(int(hit_B.sum()), n_used, ens.total_steps, "committor-mc", level, extra)
    extra["is"] = unnormalized_is(np.where(censored, -np.inf, ens.logw), hit_B, n_used, ens.total_steps,
                                  "committor-is", level).to_dict()
    soc = _soc_form(ens.cost, hit_B, 0.0, level)
    rep = EstimateReport(soc["estimate"], soc["se"] or 0.0, tuple(soc["ci"]), n_used, ens.total_steps,
                         "committor-guided", level, extra)
    return rep


@dataclass
class ReactiveSegments:
    """Index ranges ``[start, end]`` of reactive pieces and their durations."""

    starts: np.ndarray
    ends: np.ndarray
    durations: np.ndarray

    @property
    def count(self) -> int:
        return len(self.starts)

    def stats(self, bins=30) -> dict:
        if self.count == 0:
            return {"count": 0, "mean": None, "std": None}
        hist, edges = np.histogram(self.durations, bins=bins)
        return {"count": self.count, "mean": float(self.durations.mean()),
                "std": float(self.durations.std(ddof=1)) if self.count > 1 else 0.0,
                "hist": hist.tolist(), "edges": edges.tolist()}


def reactive_segments_from_values(z, t, z_A: float, z_B: float) -> ReactiveSegments:
    """Reactive segments of a scalar series: last sample in ``{z <= z_A}`` to the next sample in ``{z >= z_B}``."""
    if not z_A < z_B:
        raise InvalidInputError("need z_A < z_B")
    z = np.asarray(z, float)
    t = np.asarray(t, float)
    state = np.where(z <= z_A, -1, np.where(z >= z_B, 1, 0))
    idx = np.flatnonzero(state != 0)
    if idx.size < 2:
        return ReactiveSegments(np.array([], int), np.array([], int), np.array([]))
    s = state[idx]
    change = np.flatnonzero((s[:-1] == -1) & (s[1:] == 1))
    starts = idx[change]
    ends = idx[change + 1]
    return ReactiveSegments(starts, ends, t[ends] - t[starts])


def extract_reactive_segments(path, cv: CollectiveVariable, z_A: float = 0.1, z_B: float = 0.9) -> ReactiveSegments:
    """Reactive A-to-B segments of a long full-state ``PathRecord``."""
    return reactive_segments_from_values(cv.scalar(path.x), path.t, z_A, z_B)
