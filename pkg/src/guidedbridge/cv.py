"""Collective variables and their Jacobians.

Every CV maps states of shape (..., d) to latent values of shape (..., m) and
returns Jacobians of shape (..., m, d).
"""
from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .errors import InvalidInputError


class CollectiveVariable:
    """Interface shared by all CV kinds."""

    m: int
    d: int

    def value(self, x) -> np.ndarray:
        raise NotImplementedError

    def jacobian(self, x) -> np.ndarray:
        raise NotImplementedError

    def scalar(self, x) -> np.ndarray:
        """Latent value of a one-dimensional CV with the trailing axis dropped."""
        if self.m != 1:
            raise InvalidInputError("scalar() needs a one-dimensional CV")
        return self.value(x)[..., 0]

    def clamped(self, x) -> np.ndarray:
        """Boolean flag per state: True where the query left the CV's domain."""
        x = np.asarray(x, dtype=float)
        return np.zeros(x.shape[:-1], dtype=bool)


class LinearCV(CollectiveVariable):
    """``xi(x) = A x + b`` with constant Jacobian ``A``."""

    def __init__(self, matrix, offset=None):
        A = np.atleast_2d(np.asarray(matrix, dtype=float))
        self.A = A
        self.m, self.d = A.shape
        self.b = np.zeros(self.m) if offset is None else np.asarray(offset, dtype=float).reshape(self.m)

    @classmethod
    def coordinate(cls, d, index=0, scale=1.0, offset=0.0):
        """CV ``scale * x_index + offset``."""
        A = np.zeros((1, d))
        A[0, index] = scale
        return cls(A, [offset])

    def value(self, x):
        x = np.asarray(x, dtype=float)
        return x @ self.A.T + self.b

    def jacobian(self, x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(self.A, x.shape[:-1] + self.A.shape).copy()


class GridChiCV(CollectiveVariable):
    """Bilinear interpolant of a table of values on a 2D node lattice.

    Nodes sit at ``xs[i], ys[j]`` (typically cell centers of a grid operator).
    Queries outside the node box are clamped to the box boundary; the
    interpolant is then constant in the clamped direction and :meth:`clamped`
    reports the query.
    """

    m = 1
    d = 2

    def __init__(self, xs, ys, values, phi_min=None, phi_max=None):
        self.xs = np.asarray(xs, dtype=float)
        self.ys = np.asarray(ys, dtype=float)
        self.values = np.asarray(values, dtype=float)
        if self.values.shape != (len(self.xs), len(self.ys)):
            raise InvalidInputError("table shape must be (len(xs), len(ys))")
        if len(self.xs) < 2 or len(self.ys) < 2:
            raise InvalidInputError("need at least two nodes per axis")
        self.hx = (self.xs[-1] - self.xs[0]) / (len(self.xs) - 1)
        self.hy = (self.ys[-1] - self.ys[0]) / (len(self.ys) - 1)
        if not (np.allclose(np.diff(self.xs), self.hx) and np.allclose(np.diff(self.ys), self.hy)):
            raise InvalidInputError("grid-chi nodes must be uniformly spaced")
        self.phi_min = phi_min
        self.phi_max = phi_max

    def _locate(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != 2:
            raise InvalidInputError("grid-chi expects 2D states")
        u = (x[..., 0] - self.xs[0]) / self.hx
        v = (x[..., 1] - self.ys[0]) / self.hy
        nx, ny = self.values.shape
        inside_u = (u >= 0) & (u <= nx - 1)
        inside_v = (v >= 0) & (v <= ny - 1)
        u = np.clip(u, 0, nx - 1)
        v = np.clip(v, 0, ny - 1)
        i = np.minimum(u.astype(int), nx - 2)
        j = np.minimum(v.astype(int), ny - 2)
        return i, j, u - i, v - j, inside_u, inside_v

    def value(self, x):
        i, j, fu, fv, _, _ = self._locate(x)
        T = self.values
        val = (T[i, j] * (1 - fu) * (1 - fv) + T[i + 1, j] * fu * (1 - fv)
               + T[i, j + 1] * (1 - fu) * fv + T[i + 1, j + 1] * fu * fv)
        return val[..., None]

    def jacobian(self, x):
        i, j, fu, fv, in_u, in_v = self._locate(x)
        T = self.values
        du = ((T[i + 1, j] - T[i, j]) * (1 - fv) + (T[i + 1, j + 1] - T[i, j + 1]) * fv) / self.hx
        dv = ((T[i, j + 1] - T[i, j]) * (1 - fu) + (T[i + 1, j + 1] - T[i + 1, j]) * fu) / self.hy
        jac = np.stack([np.where(in_u, du, 0.0), np.where(in_v, dv, 0.0)], axis=-1)
        return jac[..., None, :]

    def clamped(self, x):
        _, _, _, _, in_u, in_v = self._locate(x)
        return ~(in_u & in_v)

    def node_of(self, point):
        """Index pair of the node nearest to ``point``."""
        i = int(np.clip(np.rint((point[0] - self.xs[0]) / self.hx), 0, len(self.xs) - 1))
        j = int(np.clip(np.rint((point[1] - self.ys[0]) / self.hy), 0, len(self.ys) - 1))
        return i, j

    # -- table IO: CSV of node values plus a JSON header ----------------------

    def save(self, csv_path, header_path):
        with open(csv_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["i", "j", "x", "y", "chi"])
            for i, xv in enumerate(self.xs):
                for j, yv in enumerate(self.ys):
                    w.writerow([i, j, repr(float(xv)), repr(float(yv)), repr(float(self.values[i, j]))])
        header = {"x0": float(self.xs[0]), "y0": float(self.ys[0]), "hx": float(self.hx), "hy": float(self.hy),
                  "nx": len(self.xs), "ny": len(self.ys), "phi_min": self.phi_min, "phi_max": self.phi_max}
        Path(header_path).write_text(json.dumps(header, indent=2))

    @classmethod
    def load(cls, csv_path, header_path) -> "GridChiCV":
        h = json.loads(Path(header_path).read_text())
        xs = h["x0"] + h["hx"] * np.arange(h["nx"])
        ys = h["y0"] + h["hy"] * np.arange(h["ny"])
        data = np.loadtxt(csv_path, delimiter=",", skiprows=1, ndmin=2)
        vals = np.empty((h["nx"], h["ny"]))
        vals[data[:, 0].astype(int), data[:, 1].astype(int)] = data[:, 4]
        return cls(xs, ys, vals, h.get("phi_min"), h.get("phi_max"))


class RotatedChiCV(CollectiveVariable):
    """``xi(x) = chi(P x)`` where ``P`` holds the first two rows of a rotation."""

    m = 1

    def __init__(self, chi: GridChiCV, rotation):
        R = np.asarray(rotation, dtype=float)
        self.chi = chi
        self.P = R[:2].copy()
        self.d = R.shape[1]

    def value(self, x):
        return self.chi.value(np.asarray(x, dtype=float) @ self.P.T)

    def jacobian(self, x):
        return self.chi.jacobian(np.asarray(x, dtype=float) @ self.P.T) @ self.P

    def clamped(self, x):
        return self.chi.clamped(np.asarray(x, dtype=float) @ self.P.T)


def eval_cv(cv: CollectiveVariable, x) -> np.ndarray:
    return cv.value(np.asarray(x, dtype=float))


def jacobian_cv(cv: CollectiveVariable, x) -> np.ndarray:
    return cv.jacobian(np.asarray(x, dtype=float))
