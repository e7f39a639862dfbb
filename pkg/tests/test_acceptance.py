"""End-to-end acceptance checks on the 2D double-well test system.

Each test prints one PASS/FAIL line per criterion; the lines are repeated in an
``acceptance criteria`` section at the end of the pytest report.
"""
from __future__ import annotations

import time

import numpy as np
import pytest

from guidedbridge.bridge_sampler import run_guided_bridge
from guidedbridge.cv import GridChiCV, RotatedChiCV
from guidedbridge.effective_model import EffectiveModel, solve_bk
from guidedbridge.experiments import run_experiment
from guidedbridge.guidance import ConstantControl
from guidedbridge.model_core import drift, eval_potential, harmonic, random_rotation
from guidedbridge.operator_grid import build_sqra, dominant_eigenpairs, level_sets, solve_committor

pytestmark = pytest.mark.slow


def within(value, target, rel):
    return abs(value - target) <= rel * abs(target)


def overlaps(ci, centre, half):
    return ci[0] <= centre + half and centre - half <= ci[1]


@pytest.fixture(scope="module")
def run(tmp_path_factory):
    cache = {}

    def get(name, seed=2024, **overrides):
        key = (name, seed, tuple(sorted(overrides.items())))
        if key not in cache:
            out = tmp_path_factory.mktemp(name)
            cache[key] = run_experiment({"experiment": name, **overrides}, out, seed=seed)["values"]
        return cache[key]

    return get


# -- 1 -----------------------------------------------------------------------------

def test_1_spectrum(dw, criterion):
    t0 = time.perf_counter()
    op = build_sqra(dw)
    lam, _ = dominant_eigenpairs(op, 4)
    elapsed = time.perf_counter() - t0
    ok = [
        criterion("1 spectrum lambda2", within(lam[1], -2.4e-3, 0.15), f"{lam[1]:.4e} vs -2.4e-3 +-15%"),
        criterion("1 spectrum lambda3", within(lam[2], -6.6e-3, 0.20), f"{lam[2]:.4e} vs -6.6e-3 +-20%"),
        criterion("1 spectrum runtime", elapsed < 60, f"{elapsed:.1f} s vs < 60 s"),
    ]
    assert all(ok)


# -- 2 -----------------------------------------------------------------------------

def test_2_effective_constants(run, criterion):
    v = run("effective-build")
    k = run("koopman")
    ok = [
        criterion("2 effective c", within(v["c"], 0.0012, 0.15), f"{v['c']:.5f} vs 0.0012 +-15%"),
        criterion("2 effective lambda", within(v["lambda"], -0.0024, 0.15), f"{v['lambda']:.4e} vs -2.4e-3 +-15%"),
        criterion("2 koopman lambda2", within(k["lambda2"], -0.0025, 0.20),
                  f"{k['lambda2']:.4e} vs -2.5e-3 +-20%"),
    ]
    assert all(ok)


# -- 3 -----------------------------------------------------------------------------

def test_3_committor_point_value(run, criterion):
    v = run("tpt-fields")
    q = v["q_x0_interp"]
    assert criterion("3 grid committor at (-1, 0.2)", abs(q - 0.3122) <= 0.01,
                     f"{q:.4f} (cell value {v['q_x0_cell']:.4f}) vs 0.3122 +-0.01")


# -- 4 -----------------------------------------------------------------------------

def test_4_transition_probability(run, criterion):
    mc = run("pB-mc")["estimate"]
    g = run("pB-guided")
    est = g["estimate"]
    ok = [
        criterion("4 pB uncontrolled MC", overlaps(mc["ci"], 0.148, 0.008),
                  f"{mc['estimate']:.4f} CI [{mc['ci'][0]:.4f}, {mc['ci'][1]:.4f}] vs 0.148+-0.008"),
        criterion("4 pB guided", overlaps(est["ci"], 0.151, 0.012),
                  f"{est['estimate']:.4f} CI [{est['ci'][0]:.4f}, {est['ci'][1]:.4f}] vs 0.151+-0.012"),
        criterion("4 pB cost ratio", g["cost_ratio"] <= 1 / 20, f"{g['cost_ratio']:.4f} vs <= 0.05"),
    ]
    assert all(ok)


# -- 5 -----------------------------------------------------------------------------

def test_5_committor_estimation(run, criterion):
    v = run("committor")
    mc, g = v["mc"], v["guided"]
    tau_g = g["extra"]["tau_B"]["mean"]
    tau_mc = mc["extra"]["tau_B"]["mean"]
    ok = [
        criterion("5 committor uncontrolled", overlaps(mc["ci"], 0.27, 0.05),
                  f"{mc['estimate']:.3f} CI [{mc['ci'][0]:.3f}, {mc['ci'][1]:.3f}] vs 0.27+-0.05"),
        criterion("5 committor guided", overlaps(g["ci"], 0.26, 0.05),
                  f"{g['estimate']:.3f} CI [{g['ci'][0]:.3f}, {g['ci'][1]:.3f}] vs 0.26+-0.05"),
        criterion("5 committor guided tau_B", tau_g is not None and tau_g <= 2.0,
                  f"{tau_g} vs <= 2.0 (uncontrolled {tau_mc})"),
    ]
    assert all(ok)


# -- 6 -----------------------------------------------------------------------------

def test_6_reactive_lengths(run, criterion):
    v = run("reactive-ensemble")
    ok = []
    for g, target in (("15", 12.0), ("25", 5.6), ("50", 2.9)):
        m = v["gains"][g]["mean"]
        ok.append(criterion(f"6 reactive length G={g}", within(m, target, 0.30), f"{m:.3f} vs {target} +-30%"))
    lr = v["long_run"]
    ok.append(criterion("6 long-run reactive duration", lr["count"] >= 600 and within(lr["mean"], 9.0, 0.25),
                        f"{lr['mean']:.3f} over {lr['count']} segments vs 9.0 +-25% with >= 600"))
    assert all(ok)


# -- 7 -----------------------------------------------------------------------------

def test_7a_zero_control(criterion):
    ens = run_guided_bridge(harmonic([1.0, 2.0], 0.7), None, None, [0.5, -0.5], 0.0, 1.0, 0.01, 200, seed=1)
    ok = bool(np.all(ens.logw == 0.0)) and ens.ess == pytest.approx(200.0)
    assert criterion("7a zero control", ok, f"max |logw| {np.abs(ens.logw).max():.1e}, ESS {ens.ess:.1f} of 200")


def test_7b_girsanov_ou(criterion):
    spec = harmonic(1.0, 0.7)
    N = 100_000
    plain = run_guided_bridge(spec, None, None, [1.0], 0.0, 1.0, 0.01, N, seed=11)
    guided = run_guided_bridge(spec, None, ConstantControl(np.array([0.5])), [1.0], 0.0, 1.0, 0.01, N, seed=12)
    f0 = plain.endpoints[:, 0]
    f1 = guided.endpoints[:, 0]
    w = guided.weights
    m1 = np.sum(w * f1)
    s1 = np.sqrt(np.sum(w**2 * (f1 - m1) ** 2))
    s0 = f0.std(ddof=1) / np.sqrt(N)
    sd = np.hypot(s0, s1)
    assert criterion("7b Girsanov OU oracle", abs(m1 - f0.mean()) < 3 * sd,
                     f"|{m1:.5f} - {f0.mean():.5f}| = {abs(m1 - f0.mean()) / sd:.2f} sigma vs < 3")


def test_7c_committor_bounds(system, criterion):
    op, chi = system["op"], system["chi"]
    A, B = level_sets(chi.values, 0.1, 0.9)
    q = solve_committor(op, A, B, clip=False)
    ok = bool(np.all(q[A] == 0.0) and np.all(q[B] == 1.0)) and q.min() > -1e-8 and q.max() < 1 + 1e-8
    assert criterion("7c committor max principle", ok, f"range [{q.min():.2e}, {q.max():.8f}]")


def test_7d_detailed_balance(system, criterion):
    op = system["op"]
    Q = op.Q.tocoo()
    rows = np.abs(np.asarray(op.Q.sum(axis=1)).ravel()).max() / np.abs(op.Q.diagonal()).max()
    off = Q.row != Q.col
    r, c, v = Q.row[off], Q.col[off], Q.data[off]
    back = np.asarray(op.Q.tocsr()[c, r]).ravel()
    lhs, rhs = op.mu[r] * v, op.mu[c] * back
    db = float(np.max(np.abs(lhs - rhs) / np.maximum(lhs, rhs)))
    ok = rows < 1e-10 and db < 1e-12 and bool((v >= 0).all())
    assert criterion("7d detailed balance and row sums", ok, f"row sum {rows:.1e}, balance {db:.1e} (relative)")


def test_7e_gradients_and_jacobians(dw, criterion):
    rng = np.random.default_rng(7)
    worst_grad = 0.0
    for x in rng.uniform(-2, 2, size=(100, 2)):
        g = np.array([(eval_potential(dw, x + e) - eval_potential(dw, x - e)) / 2e-5 for e in 1e-5 * np.eye(2)])
        an = -drift(dw, x)
        worst_grad = max(worst_grad, np.linalg.norm(an - g) / max(np.linalg.norm(an), 1e-3))
    xs = np.linspace(-2.5, 2.5, 60)
    X, Y = np.meshgrid(xs, xs, indexing="ij")
    table = GridChiCV(xs, xs, 0.5 * (1 + np.tanh(X + 0.7 * Y)))
    R = random_rotation(4, 3)
    cv = RotatedChiCV(table, R)
    worst_jac = 0.0
    h = 1e-6 * table.hx
    for y in rng.uniform(-2, 2, size=(30, 2)):
        x = R.T @ np.concatenate([y, rng.normal(size=2)])
        J = cv.jacobian(x)[0]
        fd = np.array([(cv.scalar(x + e) - cv.scalar(x - e)) / (2 * h) for e in h * np.eye(4)]).ravel()
        worst_jac = max(worst_jac, np.linalg.norm(J - fd) / np.linalg.norm(J))
    ok = worst_grad < 1e-5 and worst_jac < 1e-3
    assert criterion("7e gradients and Jacobians", ok,
                     f"gradient {worst_grad:.1e} vs 1e-5, Jacobian {worst_jac:.1e} vs 1e-3")


def test_7f_bk_ou_kernel(criterion):
    from scipy.stats import norm

    D, lam, centre = 0.005, -1.0, 0.5
    z = np.linspace(0.0, 1.0, 1001)
    model = EffectiveModel.from_coefficients(z, np.full(z.size, D), -lam * centre, lam)
    z_star = 0.6 + 0.5 * model.h
    tab = solve_bk(model, z_star, 1.0, n_t=1000)
    idx = np.round(np.linspace(0.05, 0.95, 100) * (z.size - 1)).astype(int)
    mean = centre + (z[idx] - centre) * np.exp(lam)
    sd = np.sqrt(D / -lam * (1 - np.exp(2 * lam)))
    err = float(np.abs(tab.p[0, idx] - norm.sf((z_star - mean) / sd)).max())
    assert criterion("7f BK vs OU kernel", err < 1e-3, f"sup error {err:.2e} vs < 1e-3")


def test_7g_spectral_vs_bk(run, criterion):
    d = run("spectral-approx")["sup_diff"]
    assert criterion("7g spectral approximation vs BK", d <= 0.05, f"sup diff {d:.4f} vs <= 0.05")


def test_7h_reactive_histogram(run, criterion):
    tv = run("reactive-ensemble")["gains"]["25"]["tv_vs_mu_ab"]
    assert criterion("7h reactive histogram vs mu_AB", tv < 0.35, f"TV {tv:.3f} at G=25 vs < 0.35")
