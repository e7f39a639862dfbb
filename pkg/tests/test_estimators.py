from __future__ import annotations

import json

import numpy as np
import pytest
from scipy.stats import norm

from guidedbridge.bridge_sampler import run_guided_bridge
from guidedbridge.cv import LinearCV
from guidedbridge.effective_model import EffectiveModel, latent_committor, solve_bk
from guidedbridge.errors import DegenerateEnsembleError, InvalidInputError, NumericError
from guidedbridge.estimators import (
    EstimateReport,
    estimate_committor_guided,
    estimate_pB_guided,
    estimate_pB_mc,
    extract_reactive_segments,
    normal_interval,
    reactive_segments_from_values,
    weighted_expectation,
    wilson_interval,
)
from guidedbridge.guidance import ConstantControl
from guidedbridge.model_core import PathRecord, harmonic

# 1D OU whose state is its own latent variable: b(x) = 0.5 - x, sigma = 0.2
SIG, Z_STAR, HORIZON, X0 = 0.2, 0.8, 1.0, 0.4


def ou_exceedance():
    mean = 0.5 + (X0 - 0.5) * np.exp(-HORIZON)
    sd = np.sqrt(SIG**2 / 2 * (1 - np.exp(-2 * HORIZON)))
    return norm.sf((Z_STAR - mean) / sd)


@pytest.fixture(scope="module")
def ou_setup():
    spec = harmonic(1.0, SIG, center=0.5)
    cv = LinearCV.coordinate(1, 0)
    z = np.linspace(0, 1, 501)
    model = EffectiveModel.from_coefficients(z, np.full(501, SIG**2 / 2), 0.5, -1.0)
    return spec, cv, model


# -- weighted expectation ------------------------------------------------------------

def test_weighted_expectation_constant():
    spec = harmonic(1.0, 0.7)
    ens = run_guided_bridge(spec, None, ConstantControl(np.array([0.8])), [0.0], 0.0, 1.0, 0.01, 200, seed=1)
    rep = weighted_expectation(ens, lambda x: np.ones(len(x)))
    assert rep.estimate == pytest.approx(1.0, abs=1e-12)
    assert rep.se == pytest.approx(0.0, abs=1e-12)


def test_weighted_expectation_zero_control_is_plain_mean():
    spec = harmonic(1.0, 0.7)
    ens = run_guided_bridge(spec, None, None, [1.0], 0.0, 1.0, 0.01, 500, seed=2)
    rep = weighted_expectation(ens, lambda x: x[:, 0])
    assert rep.estimate == pytest.approx(ens.endpoints[:, 0].mean(), rel=1e-12)
    assert rep.extra["ess"] == pytest.approx(500)


def test_weighted_expectation_ou_analytic():
    spec = harmonic(1.0, 0.7)
    ens = run_guided_bridge(spec, None, ConstantControl(np.array([0.6])), [1.0], 0.0, 1.0, 1e-3, 20_000, seed=3)
    rep = weighted_expectation(ens, lambda x: x[:, 0])
    assert abs(rep.estimate - np.exp(-1.0)) < 3 * rep.se


def test_weighted_expectation_degenerate():
    spec = harmonic(-1e3, 0.1)
    with pytest.raises(DegenerateEnsembleError):
        ens = run_guided_bridge(spec, None, None, [1.0], 0.0, 1.0, 0.01, 3)
        weighted_expectation(ens, lambda x: x[:, 0])


# -- intervals and reports -----------------------------------------------------------

def test_wilson_interval():
    lo, hi = wilson_interval(740, 5000)
    assert lo < 0.148 < hi
    assert wilson_interval(0, 10)[0] == 0.0
    assert wilson_interval(10, 10)[1] == pytest.approx(1.0)


def test_intervals_widen_with_level():
    spec = harmonic(1.0, 0.7)
    ens = run_guided_bridge(spec, None, ConstantControl(np.array([0.3])), [1.0], 0.0, 1.0, 0.01, 300, seed=4)
    widths = []
    for level in (0.5, 0.9, 0.95, 0.99):
        rep = weighted_expectation(ens, lambda x: x[:, 0], level=level)
        assert rep.ci[0] <= rep.estimate <= rep.ci[1]
        widths.append(rep.ci[1] - rep.ci[0])
        lo, hi = wilson_interval(30, 300, level)
        widths.append(hi - lo)
    w = np.array(widths).reshape(4, 2)
    assert np.all(np.diff(w, axis=0) > 0)


def test_report_json_and_csv(tmp_path):
    rep = EstimateReport(0.15, 0.01, normal_interval(0.15, 0.01), 100, 2000, "demo", extra={"a": np.float64(1.5)})
    doc = json.loads(rep.to_json(tmp_path / "r.json"))
    assert set(doc) >= {"estimate", "se", "ci", "n", "cost", "kind"}
    rep.append_csv(tmp_path / "ledger.csv", "exp")
    rep.append_csv(tmp_path / "ledger.csv", "exp")
    lines = (tmp_path / "ledger.csv").read_text().splitlines()
    assert len(lines) == 3 and lines[1].startswith("exp,demo,0.15,")
    assert rep.overlaps(0.16, 0.2) and not rep.overlaps(0.3, 0.4)


# -- transition probability ------------------------------------------------------------

def test_pB_mc_whole_range(system):
    rep = estimate_pB_mc(system["spec"], system["chi"], [-0.2, -0.2], -0.01, 0.1, 50, seed=1)
    assert rep.estimate == 1.0


def test_pB_mc_short_horizon(system):
    rep = estimate_pB_mc(system["spec"], system["chi"], [-0.2, -0.2], 0.9, 1e-3, 200, seed=1)
    assert rep.estimate == 0.0
    assert rep.extra["hit_by_T"]["estimate"] == 0.0


def test_pB_ou_both_forms(ou_setup):
    spec, cv, model = ou_setup
    exact = ou_exceedance()
    tab = solve_bk(model, Z_STAR, HORIZON, n_t=2000)
    rep = estimate_pB_guided(spec, cv, tab, 1.0, [X0], Z_STAR, HORIZON, 2000, dt=1e-4, seed=1, u_max=100.0)
    assert abs(rep.estimate - exact) < 3 * rep.se
    soc = rep.extra["soc"]
    assert abs(soc["estimate"] - exact) < 3 * soc["se"]
    assert rep.extra["b_fraction"] > 0.9


def test_pB_mc_ou(ou_setup):
    spec, cv, _ = ou_setup
    # a nearer threshold keeps the plain Monte Carlo sample informative
    rep = estimate_pB_mc(spec, cv, [X0], 0.6, HORIZON, 5000, dt=1e-3, seed=2)
    mean = 0.5 + (X0 - 0.5) * np.exp(-HORIZON)
    sd = np.sqrt(SIG**2 / 2 * (1 - np.exp(-2 * HORIZON)))
    assert rep.ci[0] <= norm.sf((0.6 - mean) / sd) <= rep.ci[1]


def test_pB_kappa_zero_matches_mc(ou_setup):
    spec, cv, model = ou_setup
    tab = solve_bk(model, Z_STAR, HORIZON, n_t=200)
    guided = estimate_pB_guided(spec, cv, tab, 0.0, [X0], Z_STAR, HORIZON, 5000, dt=1e-3, seed=1)
    mc = estimate_pB_mc(spec, cv, [X0], Z_STAR, HORIZON, 5000, dt=1e-3, seed=2)
    assert guided.overlaps(*mc.ci)
    assert guided.extra["weighted_ess"] == pytest.approx(5000)


def test_pB_table_mismatch(ou_setup):
    spec, cv, model = ou_setup
    tab = solve_bk(model, Z_STAR, HORIZON, n_t=20)
    with pytest.raises(NumericError):
        estimate_pB_guided(spec, cv, tab, 1.0, [X0], 0.7, HORIZON, 10)


def test_pB_no_hits_warns(ou_setup):
    spec, cv, model = ou_setup
    tab = solve_bk(model, Z_STAR, 0.01, n_t=5)
    with pytest.warns(RuntimeWarning):
        rep = estimate_pB_guided(spec, cv, tab, 0.0, [0.1], Z_STAR, 0.01, 20, eps=1e-12, dt=1e-3)
    assert rep.estimate == 0.0
    assert rep.extra["soc"]["estimate"] == 1e-12


# -- committor --------------------------------------------------------------------------

def test_committor_boundary_values(system, effective):
    q = latent_committor(effective)
    dw, chi = system["spec"], system["chi"]
    in_B = estimate_committor_guided(dw, chi, effective.z, q, 1.3, [1.0, 1.0])
    in_A = estimate_committor_guided(dw, chi, effective.z, q, 1.3, [-1.0, -1.0])
    assert (in_B.estimate, in_A.estimate) == (1.0, 0.0)
    assert in_B.cost == 0


def test_committor_flat_1d():
    # free diffusion between 0 and 1: committor is linear, so q(0.3) = 0.3
    spec = harmonic(0.0, 1.0)
    cv = LinearCV.coordinate(1, 0)
    z = np.linspace(0, 1, 101)
    mc = estimate_committor_guided(spec, cv, z, z, 0.0, [0.3], 0.0, 1.0, N=2000, max_T=20.0, dt=1e-4, seed=1)
    assert mc.ci[0] <= 0.3 <= mc.ci[1]
    g = estimate_committor_guided(spec, cv, z, z, 1.0, [0.3], 0.0, 1.0, N=500, max_T=20.0, dt=1e-4, seed=2)
    assert g.extra["n_B"] == 500
    assert abs(g.extra["is"]["estimate"] - 0.3) < 3 * g.extra["is"]["se"]
    assert abs(g.estimate - 0.3) < 3 * g.se


def test_committor_all_censored(system, effective):
    q = latent_committor(effective)
    with pytest.raises(NumericError):
        estimate_committor_guided(system["spec"], system["chi"], effective.z, q, 0.0, [-1.0, 0.2], N=5,
                                  max_T=0.01)


# -- reactive segments -----------------------------------------------------------------

def test_segments_confined_path():
    z = np.full(50, 0.05)
    assert reactive_segments_from_values(z, np.arange(50.0), 0.1, 0.9).count == 0


def test_segments_synthetic_sequence():
    t = np.arange(12.0)
    z = np.array([0.05, 0.3, 0.6, 0.95, 0.5, 0.05, 0.02, 0.4, 0.08, 0.5, 0.7, 0.95])
    seg = reactive_segments_from_values(z, t, 0.1, 0.9)
    assert seg.count == 2
    np.testing.assert_array_equal(seg.starts, [0, 8])
    np.testing.assert_array_equal(seg.durations, [3.0, 3.0])
    stats = seg.stats()
    assert stats["mean"] == 3.0 and stats["count"] == 2


def test_segments_from_path():
    t = np.linspace(0, 4, 5)
    x = np.array([[0.0], [0.5], [1.0], [0.0], [1.0]])
    seg = extract_reactive_segments(PathRecord(t, x, 0), LinearCV.coordinate(1, 0), 0.1, 0.9)
    np.testing.assert_array_equal(seg.durations, [2.0, 1.0])


def test_segments_bad_levels():
    with pytest.raises(InvalidInputError):
        reactive_segments_from_values([0.0, 1.0], [0.0, 1.0], 0.9, 0.1)
