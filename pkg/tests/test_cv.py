from __future__ import annotations

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from guidedbridge.cv import GridChiCV, LinearCV, RotatedChiCV, eval_cv, jacobian_cv
from guidedbridge.model_core import random_rotation


def smooth_table(n=60, half=2.5):
    xs = np.linspace(-half, half, n)
    X, Y = np.meshgrid(xs, xs, indexing="ij")
    vals = 0.5 * (1 + np.tanh(X + 0.7 * Y)) + 0.05 * np.sin(2 * X) * np.cos(Y)
    vals = (vals - vals.min()) / (vals.max() - vals.min())
    return GridChiCV(xs, xs, vals)


def fd_jacobian(cv, x, h):
    J = np.empty((cv.m, len(x)))
    for i in range(len(x)):
        e = np.zeros_like(x)
        e[i] = h
        J[:, i] = (cv.value(x + e) - cv.value(x - e)) / (2 * h)
    return J


def test_linear_cv():
    cv = LinearCV.coordinate(2, 0)
    assert eval_cv(cv, [0.3, 7.0])[0] == 0.3
    np.testing.assert_array_equal(jacobian_cv(cv, [0.3, 7.0]), [[1.0, 0.0]])


def test_grid_chi_extremes():
    cv = smooth_table()
    i, j = np.unravel_index(np.argmin(cv.values), cv.values.shape)
    assert cv.scalar([cv.xs[i], cv.ys[j]]) == 0.0
    i, j = np.unravel_index(np.argmax(cv.values), cv.values.shape)
    assert cv.scalar([cv.xs[i], cv.ys[j]]) == 1.0


def test_grid_chi_jacobian_fd():
    cv = smooth_table()
    rng = np.random.default_rng(0)
    h = 1e-6 * cv.hx
    for x in rng.uniform(-2.4, 2.4, size=(50, 2)):
        J = cv.jacobian(x)[0]
        J_fd = fd_jacobian(cv, x, h)
        assert np.linalg.norm(J - J_fd) <= 1e-3 * np.linalg.norm(J)


def test_rotated_chi_identity_matches():
    cv = smooth_table()
    rot = RotatedChiCV(cv, np.eye(2))
    pts = np.random.default_rng(1).uniform(-2, 2, size=(30, 2))
    np.testing.assert_array_equal(rot.value(pts), cv.value(pts))


def test_rotated_chi_jacobian_fd():
    cv = smooth_table()
    R = random_rotation(5, 4)
    rot = RotatedChiCV(cv, R)
    rng = np.random.default_rng(2)
    for _ in range(20):
        y = rng.uniform(-2, 2, size=2)
        x = R.T @ np.concatenate([y, rng.normal(size=3)])
        J = rot.jacobian(x)[0]
        J_fd = fd_jacobian(rot, x, 1e-6 * cv.hx)
        assert np.linalg.norm(J - J_fd) <= 1e-3 * np.linalg.norm(J)


def test_clamping_flagged():
    cv = smooth_table()
    far = np.array([[10.0, 0.0], [0.0, 0.0]])
    flags = cv.clamped(far)
    assert flags.tolist() == [True, False]
    assert cv.scalar(far[0]) == cv.scalar([cv.xs[-1], 0.0])
    assert cv.jacobian(far[0])[0, 0] == 0.0


@settings(max_examples=200, deadline=None)
@given(st.floats(-2.5, 2.5), st.floats(-2.5, 2.5))
def test_interpolation_bounded_by_nodes(x, y):
    cv = smooth_table(20)
    i, j, _, _, _, _ = cv._locate(np.array([x, y]))
    corners = cv.values[i:i + 2, j:j + 2]
    v = cv.scalar([x, y])
    assert corners.min() - 1e-15 <= v <= corners.max() + 1e-15


def test_save_load_roundtrip(tmp_path):
    cv = smooth_table(15)
    cv.save(tmp_path / "chi.csv", tmp_path / "chi.json")
    back = GridChiCV.load(tmp_path / "chi.csv", tmp_path / "chi.json")
    np.testing.assert_array_equal(back.values, cv.values)
    np.testing.assert_allclose(back.xs, cv.xs, rtol=0, atol=1e-14)
