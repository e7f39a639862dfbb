from __future__ import annotations

import numpy as np
import pytest
import scipy.linalg

from guidedbridge.errors import InvalidInputError, NumericError
from guidedbridge.model_core import double_well
from guidedbridge.operator_grid import (
    RegularGrid,
    build_sqra,
    dominant_eigenpairs,
    export_fields,
    flux_divergence,
    interior_mask,
    level_sets,
    load_rate_matrix,
    make_chi,
    save_rate_matrix,
    solve_committor,
    sqra_from_energy,
    tpt_fields,
)


def line_grid(n, lo=0.0, hi=1.0):
    return RegularGrid((lo,), (hi,), (n,))


def test_flat_three_cells():
    grid = line_grid(3)
    op = sqra_from_energy(grid, np.zeros(3), 0.7)
    h = 1 / 3
    rate = 0.49 / (2 * h * h)
    Q = op.Q.toarray()
    expected = rate * np.array([[-1, 1, 0], [1, -2, 1], [0, 1, -1]])
    np.testing.assert_allclose(Q, expected, rtol=1e-14)
    np.testing.assert_allclose(Q @ np.ones(3), 0, atol=1e-12)


def test_row_sums_and_detailed_balance(system):
    op = system["op"]
    Q = op.Q.tocoo()
    rows = np.asarray(op.Q.sum(axis=1)).ravel()
    assert np.abs(rows).max() < 1e-10 * np.abs(op.Q.diagonal()).max()
    off = Q.row != Q.col
    assert (Q.data[off] >= 0).all()
    r, c, v = Q.row[off], Q.col[off], Q.data[off]
    Qcsr = op.Q.tocsr()
    back = np.asarray(Qcsr[c, r]).ravel()
    lhs = op.mu[r] * v
    rhs = op.mu[c] * back
    assert np.all(np.abs(lhs - rhs) <= 1e-12 * np.maximum(lhs, rhs) + 1e-300)


def test_degenerate_grid():
    with pytest.raises(InvalidInputError):
        RegularGrid((0.0,), (0.0,), (5,))
    with pytest.raises(InvalidInputError):
        sqra_from_energy(line_grid(4), np.zeros(4), 0.0)


def test_leading_eigenpair(coarse_system):
    lam, vec = coarse_system["lam"], coarse_system["vec"]
    assert abs(lam[0]) < 1e-10 * abs(lam[1])
    assert np.ptp(vec[:, 0]) == 0.0
    assert lam[1] < 0 and lam[2] < lam[1]


def test_eigenvectors_satisfy_generator(coarse_system):
    op = coarse_system["op"]
    lam, vec = coarse_system["lam"], coarse_system["vec"]
    for k in (1, 2):
        res = op.Q @ vec[:, k] - lam[k] * vec[:, k]
        assert np.abs(res).max() < 1e-6 * np.abs(lam[k])


def test_1d_double_well_dense_oracle():
    grid = line_grid(50, -2.0, 2.0)
    x = grid.axes[0]
    op = sqra_from_energy(grid, (x**2 - 1) ** 2, 0.7)
    lam, _ = dominant_eigenpairs(op, 4)
    ev = np.sort(np.real(scipy.linalg.eigvals(op.Q.toarray())))[::-1][:4]
    np.testing.assert_allclose(lam, ev, rtol=1e-8, atol=1e-8 * abs(ev[1]))


def test_sparse_path_matches_dense():
    grid = RegularGrid.square(2.5, 60)
    op = build_sqra(double_well(), grid)
    lam_dense, _ = dominant_eigenpairs(op, 3)
    import guidedbridge.operator_grid as og
    old = og.DENSE_LIMIT
    og.DENSE_LIMIT = 10
    try:
        lam_sparse, _ = dominant_eigenpairs(op, 3)
    finally:
        og.DENSE_LIMIT = old
    np.testing.assert_allclose(lam_sparse, lam_dense, rtol=1e-8, atol=1e-12)


def test_sparse_eigenpairs_independent_of_call_history():
    op = build_sqra(double_well(), RegularGrid.square(2.5, 60))
    _, first = dominant_eigenpairs(op, 3)
    dominant_eigenpairs(build_sqra(double_well(), RegularGrid.square(2.5, 70)), 4)
    _, again = dominant_eigenpairs(op, 3)
    np.testing.assert_array_equal(first, again)


def test_eigenvalue_refinement_stability(system, coarse_system):
    l200 = system["lam"][1]
    l100 = coarse_system["lam"][1]
    assert abs(l200 - l100) / abs(l200) < 0.1


def test_make_chi_orientation_and_range(system):
    chi = system["chi"]
    assert chi.values.min() == 0.0 and chi.values.max() == 1.0
    assert chi.scalar([-1.0, -1.0]) < 0.1
    assert chi.scalar([1.0, 1.0]) > 0.9


def test_make_chi_scale_invariant(coarse_system):
    op, vec = coarse_system["op"], coarse_system["vec"]
    a = make_chi(op, vec[:, 1])
    b = make_chi(op, 3.0 * vec[:, 1])
    c = make_chi(op, -vec[:, 1])
    np.testing.assert_allclose(a.values, b.values, atol=1e-14)
    np.testing.assert_allclose(a.values, c.values, atol=1e-14)


def test_make_chi_constant_vector(coarse_system):
    with pytest.raises(InvalidInputError):
        make_chi(coarse_system["op"], np.ones(coarse_system["op"].n))


def test_committor_flat_linear():
    n = 40
    op = sqra_from_energy(line_grid(n), np.zeros(n), 0.7)
    A = np.zeros(n, bool)
    B = np.zeros(n, bool)
    A[0] = B[-1] = True
    q = solve_committor(op, A, B)
    np.testing.assert_allclose(q, np.arange(n) / (n - 1), atol=1e-8)


def test_committor_boundary_and_max_principle(coarse_system):
    op, chi = coarse_system["op"], coarse_system["chi"]
    A, B = level_sets(chi.values, 0.1, 0.9)
    q = solve_committor(op, A, B, clip=False)
    assert np.all(q[A] == 0.0) and np.all(q[B] == 1.0)
    assert q.min() > -1e-8 and q.max() < 1 + 1e-8


def test_committor_errors(coarse_system):
    op = coarse_system["op"]
    A = np.zeros(op.n, bool)
    A[0] = True
    with pytest.raises(InvalidInputError):
        solve_committor(op, A, A)
    with pytest.raises(InvalidInputError):
        solve_committor(op, A, np.zeros(op.n, bool))


def test_committor_disconnected():
    # two cells joined by a near-zero rate are still connected; drop the link entirely instead
    import scipy.sparse as sp
    grid = line_grid(4)
    op = sqra_from_energy(grid, np.zeros(4), 1.0)
    Q = op.Q.tolil()
    Q[1, 2] = Q[2, 1] = 0.0
    Q.setdiag(0.0)
    Q = Q.tocsr()
    Q = Q - sp.diags(np.asarray(Q.sum(axis=1)).ravel())
    from dataclasses import replace
    cut = replace(op, Q=Q.tocsr())
    A = np.array([True, False, False, False])
    B = np.array([False, True, False, False])
    with pytest.raises(NumericError):
        solve_committor(cut, A, B)


def test_tpt_fields(coarse_system):
    op, chi = coarse_system["op"], coarse_system["chi"]
    A, B = level_sets(chi.values, 0.1, 0.9)
    q = solve_committor(op, A, B)
    f = tpt_fields(op, q, A, B)
    assert np.all(f.mu_ab >= 0)
    assert np.all(f.mu_ab[A | B] == 0)
    assert f.flux.shape == (op.n, 2)


def test_flux_divergence_small_in_interior(system):
    op, chi = system["op"], system["chi"]
    A, B = level_sets(chi.values, 0.1, 0.9)
    q = solve_committor(op, A, B)
    f = tpt_fields(op, q, A, B)
    div = flux_divergence(op, f.flux)
    mask = interior_mask(op, A, B)
    h = op.grid.spacing[0]
    jmax = np.linalg.norm(f.flux, axis=1).max()
    assert h * np.abs(div[mask]).max() < 0.05 * jmax


def test_flux_divergence_exact_on_linear_field():
    grid = RegularGrid.square(1.0, 10)
    op = sqra_from_energy(grid, np.zeros(grid.size), 1.0)
    pts = grid.points()
    flux = np.stack([2 * pts[:, 0], -pts[:, 1]], axis=1)
    np.testing.assert_allclose(flux_divergence(op, flux), 1.0, atol=1e-12)


def test_rate_matrix_io(tmp_path, coarse_system):
    Q = coarse_system["op"].Q
    save_rate_matrix(tmp_path / "Q.txt", Q)
    back = load_rate_matrix(tmp_path / "Q.txt")
    assert (back != Q).nnz == 0


def test_export_fields(tmp_path, coarse_system):
    op, chi = coarse_system["op"], coarse_system["chi"]
    A, B = level_sets(chi.values)
    f = tpt_fields(op, solve_committor(op, A, B), A, B)
    export_fields(tmp_path / "f.csv", op, f)
    data = np.loadtxt(tmp_path / "f.csv", delimiter=",", skiprows=1)
    assert data.shape == (op.n, 7)
    np.testing.assert_array_equal(data[:, 3], f.q)
