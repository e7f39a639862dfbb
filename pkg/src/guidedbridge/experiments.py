"""Config-driven experiments on the 2D double well and its rotated lift.

Each experiment takes a resolved parameter dict, writes its artifacts into an
output directory and returns a JSON-serializable ``values`` dict. Results are
deterministic for a fixed config; wall-clock data only goes to the manifest.
"""
from __future__ import annotations

import copy
import hashlib
import json
import platform
import time
from pathlib import Path

import numpy as np

from . import __version__
from .bridge_sampler import resample_endpoint, run_guided_bridge, run_smc_bridge, sample_reactive_ensemble
from .cv import GridChiCV, RotatedChiCV
from .effective_model import (build_effective, chi_marginal, estimate_koopman, latent_committor, simulate_effective,
                              solve_bk, spectral_approx_p)
from .errors import ConfigError, SchemaError
from .estimators import (_jsonable, estimate_committor_guided, estimate_pB_guided, estimate_pB_mc,
                         extract_reactive_segments, reactive_segments_from_values)
from .guidance import ReferencePath, TrackingControl, gain_from_config, linear_reference
from .model_core import double_well, long_run, rotated_system
from .operator_grid import (RegularGrid, build_sqra, dominant_eigenpairs, export_fields, flux_divergence,
                            interior_mask, level_sets, make_chi, save_rate_matrix, solve_committor, tpt_fields)

SYSTEM = {"alpha": 1.0, "beta": 1.0, "gamma": 2.0, "sigma": 0.7, "half_width": 2.5, "n_grid": 200}
SETS = {"z_A": 0.1, "z_B": 0.9}

DEFAULTS = {
    "grid-spectrum": {**SYSTEM, "k": 4, "save_rate_matrix": False},
    "tpt-fields": {**SYSTEM, **SETS, "x0": [-1.0, 0.2], "interior_margin": 3},
    "effective-build": {**SYSTEM, **SETS, "n_z": 1001},
    "effective-sim": {**SYSTEM, "n_z": 1001, "z0": 0.05, "T": 5e5, "dt": 1e-3, "stride": 100, "hist_bins": 50,
                      "csv_stride": 100},
    "koopman": {**SYSTEM, "n_z": 1001, "z0": 0.05, "T": 5e5, "dt": 1e-3, "tau": 2.0, "n_boxes": 200,
                "sample_dt": 0.1},
    "bk-solve": {**SYSTEM, "n_z": 1001, "z_star": 0.9, "t": 20.0, "n_t": 400, "mollify": False},
    "spectral-approx": {**SYSTEM, "n_z": 1001, "z_star": 0.9, "t": 20.0, "s": 0.0, "n_t": 400,
                        "z_range": [0.05, 0.95]},
    "bridge-linear": {**SYSTEM, "x0": [-1.0, -1.0], "x_target": [1.0, 1.0], "T": 0.0, "T_new": 10.0,
                      "n_knots": 11, "gain": 100.0, "rho": 0.0, "u_max": 50.0, "dt": 1e-3, "N": 100,
                      "record_stride": 100, "smc": False, "ess_threshold": 0.5, "block": 100},
    "bridge-effective": {**SYSTEM, "n_z": 1001, "x0": [-1.0, -1.0], "z0": 0.05, "T_new": 400.0, "knot_dt": 1.0,
                         "latent_dt": 1e-3, "gain": 100.0, "rho": 0.0, "u_max": 50.0, "dt": 1e-3, "N": 10,
                         "record_stride": 100, "smc": True, "ess_threshold": 0.5, "block": 1000,
                         "adaptive_gain": False},
    "reactive-ensemble": {**SYSTEM, **SETS, "n_z": 1001, "z0": 0.05, "latent_T": 5e4, "latent_dt": 1e-3,
                          "segment_index": 0, "gains": [15.0, 25.0, 50.0], "N": 100, "tol": 0.02, "dt": 1e-3,
                          "max_T": 100.0, "u_max": 50.0, "hist_bins": 25, "long_run_T": 1e6,
                          "long_run_stride": 100},
    "pB-mc": {**SYSTEM, "x0": [-0.2, -0.2], "z_star": 0.9, "T": 20.0, "N": 5000, "dt": 1e-3},
    "pB-guided": {**SYSTEM, "n_z": 1001, "x0": [-0.2, -0.2], "z_star": 0.9, "T": 20.0, "N": 100, "kappa": 1.6,
                  "eps": 1e-12, "n_t": 400, "dt": 1e-3, "mc_N": 5000, "u_max": None},
    "committor": {**SYSTEM, **SETS, "n_z": 1001, "x0": [-1.0, 0.2], "kappa": 1.3, "N": 100, "N_mc": 100,
                  "max_T": 200.0, "dt": 1e-3, "q_floor": 1e-6},
    "highd-demo": {**SYSTEM, "d": 10, "omegas": 2.0, "rotation_seed": 0, "x0_latent": [-1.0, -1.0],
                   "T_new": 10.0, "n_knots": 11, "gain": 100.0, "rho": 0.01, "u_max": 50.0, "dt": 1e-3,
                   "N": 50},
}
EXPERIMENTS = tuple(DEFAULTS)


def resolve_config(config: dict) -> dict:
    """Merge a user config with the experiment defaults; unknown keys raise :class:`ConfigError`."""
    if not isinstance(config, dict):
        raise ConfigError("config must be a JSON object")
    cfg = dict(config)
    exp = cfg.pop("experiment", None)
    if exp not in DEFAULTS:
        raise ConfigError(f"unknown experiment {exp!r}; choose one of {', '.join(EXPERIMENTS)}")
    seed = cfg.pop("seed", 0)
    out = cfg.pop("output", None)
    params = copy.deepcopy(DEFAULTS[exp])
    unknown = sorted(set(cfg) - set(params))
    if unknown:
        raise ConfigError(f"unknown keys for {exp}: {', '.join(unknown)}")
    for k, v in cfg.items():
        ref = params[k]
        if isinstance(ref, bool) and not isinstance(v, bool):
            raise ConfigError(f"{k} must be a boolean")
        if isinstance(ref, (int, float)) and not isinstance(ref, bool) and not isinstance(v, (int, float)):
            raise ConfigError(f"{k} must be a number")
        params[k] = v
    if not isinstance(seed, int) or seed < 0:
        raise ConfigError("seed must be a nonnegative integer")
    return {"experiment": exp, "seed": seed, "output": out, "params": params}


# -- shared setup ---------------------------------------------------------------

_CACHE: dict = {}


def _grid_setup(p):
    key = tuple(p[k] for k in SYSTEM)
    if key not in _CACHE:
        spec = double_well(p["alpha"], p["beta"], p["gamma"], p["sigma"])
        op = build_sqra(spec, RegularGrid.square(p["half_width"], int(p["n_grid"])))
        lam, vec = dominant_eigenpairs(op, 3)
        chi = make_chi(op, vec[:, 1])
        _CACHE.clear()
        _CACHE[key] = (spec, op, lam, chi)
    return _CACHE[key]


def _effective(p):
    spec, op, lam, chi = _grid_setup(p)
    return spec, op, lam, chi, build_effective(op, chi, lam[1], n_z=int(p["n_z"]))


def _dump(path, obj):
    Path(path).write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True))


def _tv(p, q):
    p = np.asarray(p, float)
    q = np.asarray(q, float)
    return float(0.5 * np.abs(p / p.sum() - q / q.sum()).sum())


# -- experiments ----------------------------------------------------------------

def exp_grid_spectrum(p, seed, out: Path):
    spec, op, _, chi = _grid_setup(p)
    lam, _ = dominant_eigenpairs(op, int(p["k"]))
    chi.save(out / "chi.csv", out / "chi_header.json")
    if p["save_rate_matrix"]:
        save_rate_matrix(out / "rate_matrix.txt", op.Q)
    c = lam[1] * chi.phi_min / (chi.phi_max - chi.phi_min)
    return {"eigenvalues": lam, "lambda2": lam[1], "lambda3": lam[2], "phi_min": chi.phi_min,
            "phi_max": chi.phi_max, "c": c, "grid": op.grid.to_dict()}


def exp_tpt_fields(p, seed, out):
    spec, op, lam, chi = _grid_setup(p)
    A, B = level_sets(chi.values, p["z_A"], p["z_B"])
    q = solve_committor(op, A, B)
    fields = tpt_fields(op, q, A, B)
    export_fields(out / "tpt_fields.csv", op, fields)
    qtab = GridChiCV(chi.xs, chi.ys, op.field(q))
    x0 = np.asarray(p["x0"], float)
    cell = op.grid.cell_of(x0)
    div = op.field(flux_divergence(op, fields.flux))
    interior = op.field(interior_mask(op, A, B, int(p["interior_margin"])))
    jmax = float(np.linalg.norm(fields.flux, axis=1).max())
    h = float(max(op.grid.spacing))
    return {"q_x0_interp": float(qtab.scalar(x0)), "q_x0_cell": float(q[cell]),
            "chi_x0": float(chi.scalar(x0)), "n_A": int(A.sum()), "n_B": int(B.sum()),
            "max_flux": jmax, "interior_div_scaled": float(h * np.abs(div[interior]).max()),
            "div_ratio": float(h * np.abs(div[interior]).max() / jmax), "mu_ab_mass": float(fields.mu_ab.sum())}


def exp_effective_build(p, seed, out):
    spec, op, lam, chi, model = _effective(p)
    model.to_csv(out / "effective_model.csv")
    model.save_json(out / "effective_model.json")
    L = model.generator().toarray()
    ev = np.sort(np.linalg.eigvals(L).real)[::-1][:4]
    q = latent_committor(model, p["z_A"], p["z_B"])
    np.savetxt(out / "latent_committor.csv", np.column_stack([model.z, q]), delimiter=",", header="z,q",
               comments="")
    return {"c": model.c, "lambda": model.lam, "generator_eigenvalues": ev, "filled_bins": int(model.filled.sum()),
            "tv_pi_vs_marginal": _tv(model.pi, chi_marginal(op, chi, model.z))}


def _latent_run(p, model, seed):
    n = int(round(p["T"] / p["dt"]))
    stride = int(p.get("stride", round(p.get("sample_dt", 0.1) / p["dt"])))
    return simulate_effective(model, p["z0"], p["dt"], n, seed=seed, stride=stride)


def exp_effective_sim(p, seed, out):
    spec, op, lam, chi, model = _effective(p)
    rec = _latent_run(p, model, seed)
    z = rec.x[:, 0]
    s = int(p["csv_stride"])
    np.savetxt(out / "latent_path.csv", np.column_stack([rec.t[::s], z[::s]]), delimiter=",", header="t,z",
               comments="")
    nb = int(p["hist_bins"])
    hist, edges = np.histogram(z, bins=nb, range=(0, 1))
    ref, _ = np.histogram(model.z, bins=edges, weights=model.pi)
    return {"mid_fraction": float(np.mean((z > 0.2) & (z < 0.8))), "tv_vs_pi": _tv(hist, ref),
            "n_samples": len(z), "hist": hist}


def exp_koopman(p, seed, out):
    spec, op, lam, chi, model = _effective(p)
    rec = _latent_run(p, model, seed)
    lag = int(round(p["tau"] / p["sample_dt"]))
    k = estimate_koopman(rec.x[:, 0], lag, int(p["n_boxes"]), dt=p["sample_dt"])
    np.savetxt(out / "koopman_matrix.csv", k.P, delimiter=",")
    return {"eigenvalues": k.eigenvalues.real, "rates": k.rates, "lambda2": k.rates[1],
            "removed_boxes": k.removed, "tau": k.tau}


def exp_bk_solve(p, seed, out):
    spec, op, lam, chi, model = _effective(p)
    tab = solve_bk(model, p["z_star"], p["t"], int(p["n_t"]), mollify=p["mollify"])
    tab.to_csv(out / "p_table.csv", s_stride=10, z_stride=10)
    probe = np.linspace(0, 1, 11)
    return {"p0_probe": tab.prob(0.0, probe), "z_probe": probe, "p_min": float(tab.p.min()),
            "p_max": float(tab.p.max())}


def exp_spectral_approx(p, seed, out):
    spec, op, lam, chi, model = _effective(p)
    tab = solve_bk(model, p["z_star"], p["t"], int(p["n_t"]))
    ps, dls = spectral_approx_p(model, p["z_star"], p["t"], p["s"])
    pb = tab.prob(p["s"], model.z)
    sel = (model.z >= p["z_range"][0]) & (model.z <= p["z_range"][1])
    np.savetxt(out / "spectral_vs_bk.csv", np.column_stack([model.z, ps, pb, dls, tab.dlog(p["s"], model.z)]),
               delimiter=",", header="z,p_spectral,p_bk,dlogp_spectral,dlogp_bk", comments="")
    return {"sup_diff": float(np.abs(ps - pb)[sel].max())}


def _tracking_law(p, cv, ref):
    return TrackingControl(cv, ref, gain_from_config(p["gain"]), p["rho"], p["u_max"])


def _bridge(p, spec, cv, law, x0, T, T_new, seed):
    if p["smc"]:
        return run_smc_bridge(spec, cv, law, x0, T, T_new, p["dt"], int(p["N"]), seed, p["ess_threshold"],
                              int(p["block"]), p.get("adaptive_gain", False), int(p["record_stride"]))
    return run_guided_bridge(spec, cv, law, x0, T, T_new, p["dt"], int(p["N"]), seed,
                             record_stride=int(p["record_stride"]))


def _bridge_summary(ens, chi, out, seed):
    ens.to_csv(out / "ensemble.csv")
    if ens.resampling_log or ens.gain_log:
        ens.save_resampling_log(out / "resampling_log.json")
    zT = chi.scalar(ens.endpoints)
    x_star, j = resample_endpoint(ens, seed)
    return {"ess": ens.ess, "fraction_above_0.8": float(np.mean(zT > 0.8)), "z_T": zT, "lifted_state": x_star,
            "lifted_index": j, "n_resampling": len(ens.resampling_log), "diverged": int(ens.diverged.sum()),
            "clamped": int(ens.clamped.sum()), "cost": ens.total_steps}


def exp_bridge_linear(p, seed, out):
    spec, op, lam, chi = _grid_setup(p)
    x0 = np.asarray(p["x0"], float)
    z0, z1 = float(chi.scalar(x0)), float(chi.scalar(np.asarray(p["x_target"], float)))
    ref = linear_reference(z0, z1, p["T"], p["T_new"], int(p["n_knots"]))
    ens = _bridge(p, spec, chi, _tracking_law(p, chi, ref), x0, p["T"], p["T_new"], seed)
    return _bridge_summary(ens, chi, out, seed)


def exp_bridge_effective(p, seed, out):
    spec, op, lam, chi, model = _effective(p)
    n = int(round(p["T_new"] / p["latent_dt"]))
    stride = int(round(p["knot_dt"] / p["latent_dt"]))
    rec = simulate_effective(model, p["z0"], p["latent_dt"], n, seed=seed, stride=stride)
    ref = ReferencePath(rec.t, rec.x[:, 0])
    np.savetxt(out / "reference.csv", np.column_stack([rec.t, rec.x[:, 0]]), delimiter=",", header="t,z",
               comments="")
    ens = _bridge(p, spec, chi, _tracking_law(p, chi, ref), np.asarray(p["x0"], float), 0.0, p["T_new"], seed)
    summary = _bridge_summary(ens, chi, out, seed)
    path_z = chi.scalar(ens.paths)
    summary["tracking_rmse"] = float(np.sqrt(np.mean((path_z - np.interp(ens.t, rec.t, rec.x[:, 0])[:, None]) ** 2)))
    return summary


def exp_reactive_ensemble(p, seed, out):
    spec, op, lam, chi, model = _effective(p)
    n = int(round(p["latent_T"] / p["latent_dt"]))
    rec = simulate_effective(model, p["z0"], p["latent_dt"], n, seed=seed, stride=100)
    segs = reactive_segments_from_values(rec.x[:, 0], rec.t, p["z_A"], p["z_B"])
    k = int(p["segment_index"])
    if k >= segs.count:
        raise ConfigError(f"latent run has only {segs.count} reactive segments")
    s, e = segs.starts[k], segs.ends[k]
    segment = (rec.t[s:e + 1], rec.x[s:e + 1, 0])
    A, B = level_sets(chi.values, p["z_A"], p["z_B"])
    fields = tpt_fields(op, solve_committor(op, A, B), A, B)
    pts = op.grid.points()
    hw = p["half_width"]
    rng_box = ((-hw, hw), (-hw, hw))
    ref, _, _ = np.histogram2d(pts[:, 0], pts[:, 1], bins=int(p["hist_bins"]), range=rng_box, weights=fields.mu_ab)
    res = {"segment_duration": float(rec.t[e] - rec.t[s]), "gains": {}}
    for g in p["gains"]:
        r = sample_reactive_ensemble(spec, chi, op.field(op.mu), segment, g, int(p["N"]), p["z_A"], p["z_B"],
                                     p["tol"], p["dt"], p["max_T"], seed, p["u_max"], int(p["hist_bins"]), rng_box)
        r.histogram_to_csv(out / f"reactive_hist_G{g:g}.csv")
        res["gains"][f"{g:g}"] = {"mean": r.mean_duration, "std": r.std_duration, "accepted": len(r.durations),
                                  "attempts": r.attempts, "tv_vs_mu_ab": _tv(r.histogram, ref)}
    if p["long_run_T"] > 0:
        stride = int(p["long_run_stride"])
        lr = long_run(spec, np.array([-1.0, -1.0]), p["dt"], int(round(p["long_run_T"] / p["dt"])), seed=seed,
                      stride=stride)
        res["long_run"] = extract_reactive_segments(lr, chi, p["z_A"], p["z_B"]).stats()
    return res


def exp_pB_mc(p, seed, out):
    spec, op, lam, chi = _grid_setup(p)
    r = estimate_pB_mc(spec, chi, np.asarray(p["x0"], float), p["z_star"], p["T"], int(p["N"]), p["dt"], seed)
    r.to_json(out / "estimate.json")
    r.append_csv(out / "results.csv", "pB-mc")
    return {"estimate": r.to_dict()}


def exp_pB_guided(p, seed, out):
    spec, op, lam, chi, model = _effective(p)
    tab = solve_bk(model, p["z_star"], p["T"], int(p["n_t"]))
    r = estimate_pB_guided(spec, chi, tab, p["kappa"], np.asarray(p["x0"], float), p["z_star"], p["T"],
                           int(p["N"]), p["eps"], p["dt"], seed, u_max=p["u_max"])
    r.to_json(out / "estimate.json")
    r.append_csv(out / "results.csv", "pB-guided")
    mc_cost = int(p["mc_N"]) * int(round(p["T"] / p["dt"]))
    return {"estimate": r.to_dict(), "is_form": r.estimate, "soc_form": r.extra["soc"]["estimate"],
            "cost": r.cost, "mc_cost": mc_cost, "cost_ratio": r.cost / mc_cost}


def exp_committor(p, seed, out):
    spec, op, lam, chi, model = _effective(p)
    q = latent_committor(model, p["z_A"], p["z_B"])
    x0 = np.asarray(p["x0"], float)
    g = estimate_committor_guided(spec, chi, model.z, q, p["kappa"], x0, p["z_A"], p["z_B"], int(p["N"]),
                                  p["max_T"], p["dt"], seed, p["q_floor"])
    m = estimate_committor_guided(spec, chi, model.z, q, 0.0, x0, p["z_A"], p["z_B"], int(p["N_mc"]), p["max_T"],
                                  p["dt"], seed + 1)
    for r in (g, m):
        r.append_csv(out / "results.csv", "committor")
    return {"guided": g.to_dict(), "mc": m.to_dict(), "latent_committor_x0": float(np.interp(chi.scalar(x0), model.z, q))}


def exp_highd_demo(p, seed, out):
    spec2, op, lam, chi = _grid_setup(p)
    d = int(p["d"])
    spec = rotated_system(d, omegas=[p["omegas"]] * (d - 2), seed=int(p["rotation_seed"]), alpha=p["alpha"],
                          beta=p["beta"], gamma=p["gamma"], sigma=p["sigma"])
    cv = RotatedChiCV(chi, spec.rotation)
    # start at the rotated image of a 2D point with the harmonic tail at rest
    y0 = np.zeros(d)
    y0[:2] = p["x0_latent"]
    x0 = spec.rotation.T @ y0
    z0 = float(cv.scalar(x0))
    ref = linear_reference(z0, float(chi.scalar(np.array([1.0, 1.0]))), 0.0, p["T_new"], int(p["n_knots"]))
    law = TrackingControl(cv, ref, gain_from_config(p["gain"]), p["rho"], p["u_max"])
    ens = run_guided_bridge(spec, cv, law, x0, 0.0, p["T_new"], p["dt"], int(p["N"]), seed)
    zT = cv.scalar(ens.endpoints)
    return {"d": d, "ess": ens.ess, "fraction_above_0.8": float(np.mean(zT > 0.8)), "z0": z0,
            "diverged": int(ens.diverged.sum()), "clamped": int(ens.clamped.sum())}


RUNNERS = {
    "grid-spectrum": exp_grid_spectrum, "tpt-fields": exp_tpt_fields, "effective-build": exp_effective_build,
    "effective-sim": exp_effective_sim, "koopman": exp_koopman, "bk-solve": exp_bk_solve,
    "spectral-approx": exp_spectral_approx, "bridge-linear": exp_bridge_linear,
    "bridge-effective": exp_bridge_effective, "reactive-ensemble": exp_reactive_ensemble, "pB-mc": exp_pB_mc,
    "pB-guided": exp_pB_guided, "committor": exp_committor, "highd-demo": exp_highd_demo,
}


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def run_experiment(config: dict, out_dir=None, seed: int | None = None) -> dict:
    """Resolve ``config``, run it and write ``results.json`` plus ``manifest.json``.

    Returns the results document ``{"experiment", "seed", "params", "values"}``.
    """
    resolved = resolve_config(config)
    if seed is not None:
        resolved["seed"] = int(seed)
    out = Path(out_dir or resolved["output"] or f"runs/{resolved['experiment']}")
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    values = RUNNERS[resolved["experiment"]](resolved["params"], resolved["seed"], out)
    runtime = time.perf_counter() - t0
    doc = {"experiment": resolved["experiment"], "seed": resolved["seed"], "params": resolved["params"],
           "values": values}
    _dump(out / "results.json", doc)
    import numba
    import scipy

    files = {f.name: _sha256(f) for f in sorted(out.iterdir()) if f.is_file() and f.name != "manifest.json"}
    manifest = {"config": {"experiment": resolved["experiment"], "seed": resolved["seed"], **resolved["params"]},
                "versions": {"guidedbridge": __version__, "python": platform.python_version(),
                             "numpy": np.__version__, "scipy": scipy.__version__, "numba": numba.__version__},
                "runtime_seconds": runtime, "files": files}
    _dump(out / "manifest.json", manifest)
    return _jsonable(doc)


# -- comparison -------------------------------------------------------------------

def _flatten(obj, prefix=""):
    flat = {}
    if isinstance(obj, dict):
        for k, v in obj.items():
            flat.update(_flatten(v, f"{prefix}{k}."))
    elif isinstance(obj, list):
        for i, v in enumerate(obj):
            flat.update(_flatten(v, f"{prefix}{i}."))
    else:
        flat[prefix[:-1]] = obj
    return flat


def compare_results(a: dict, b: dict, rel_tol: float = 1e-12) -> dict:
    """Compare result ``a`` with result or reference ``b``.

    A reference has ``{"experiment", "fields": {name: {"value", "rel_tol" | "abs_tol"}}}``
    with dotted names into ``a["values"]``. Two results are compared field by
    field at ``rel_tol``. Returns ``{"passed", "fields": {...}}``; missing
    fields or mismatched experiments raise :class:`SchemaError`.
    """
    for doc in (a, b):
        if "experiment" not in doc:
            raise SchemaError("document has no experiment id")
    if a["experiment"] != b["experiment"]:
        raise SchemaError(f"experiment mismatch: {a['experiment']} vs {b['experiment']}")
    if "values" not in a:
        a, b = b, a
    if "values" not in a:
        raise SchemaError("neither document is a result")
    got = _flatten(a["values"])
    if "fields" in b:
        spec = {k: v for k, v in b["fields"].items()}
    elif "values" in b:
        other = _flatten(b["values"])
        if set(other) != set(got):
            missing = sorted(set(other) ^ set(got))
            raise SchemaError(f"field sets differ: {', '.join(missing[:5])}")
        spec = {k: {"value": v, "rel_tol": rel_tol} for k, v in other.items()}
    else:
        raise SchemaError("second document is neither a result nor a reference")
    report = {}
    for name, ref in spec.items():
        if name not in got:
            raise SchemaError(f"missing field {name}")
        mine, want = got[name], ref["value"]
        if isinstance(want, (int, float)) and not isinstance(want, bool) and isinstance(mine, (int, float)):
            diff = abs(mine - want)
            rel = diff / abs(want) if want != 0 else (0.0 if diff == 0 else np.inf)
            ok = diff <= ref["abs_tol"] if "abs_tol" in ref else rel <= ref.get("rel_tol", rel_tol)
            report[name] = {"value": mine, "reference": want, "rel_diff": float(rel), "passed": bool(ok)}
        else:
            report[name] = {"value": mine, "reference": want, "passed": mine == want}
    return {"passed": all(r["passed"] for r in report.values()), "fields": report}
