"""Compiled inner loops for long single-path runs."""
import numpy as np
from numba import njit


@njit(cache=True)
def dw_run(x, eta, dt, sigma, alpha, beta, gamma, stride, carry, out, out_pos):
    """Uncontrolled Euler-Maruyama steps of the 2D double well.

    Writes every ``stride``-th state into ``out`` starting at ``out_pos``.
    Returns the final state, the number of rows written and the step
    counter modulo ``stride``.
    """
    x1 = x[0]
    x2 = x[1]
    sq = sigma * np.sqrt(dt)
    written = 0
    for n in range(eta.shape[0]):
        r = x1 - x2
        cpl = 2.0 * gamma * r * np.exp(-gamma * r * r)
        g1 = 4.0 * alpha * x1 * (x1 * x1 - 1.0) + cpl
        g2 = 4.0 * beta * x2 * (x2 * x2 - 1.0) - cpl
        x1 = x1 - g1 * dt + sq * eta[n, 0]
        x2 = x2 - g2 * dt + sq * eta[n, 1]
        carry += 1
        if carry == stride:
            out[out_pos + written, 0] = x1
            out[out_pos + written, 1] = x2
            written += 1
            carry = 0
    res = np.empty(2)
    res[0] = x1
    res[1] = x2
    return res, written, carry


@njit(cache=True)
def latent_run(z0, eta, dt, c, lam, zgrid, sigma_hat, stride, carry, out, out_pos):
    """Euler-Maruyama for ``dz = (c + lam z) dt + sigma_hat(z) dW`` on [0, 1].

    ``sigma_hat`` is linearly interpolated on the uniform ``zgrid``; post-step
    values outside [0, 1] are reflected back.
    """
    nz = zgrid.shape[0]
    h = zgrid[1] - zgrid[0]
    sq = np.sqrt(dt)
    z = z0
    written = 0
    for n in range(eta.shape[0]):
        u = z / h
        i = int(u)
        if i > nz - 2:
            i = nz - 2
        if i < 0:
            i = 0
        f = u - i
        s = sigma_hat[i] * (1.0 - f) + sigma_hat[i + 1] * f
        z = z + (c + lam * z) * dt + s * sq * eta[n]
        if z < 0.0:
            z = -z
        if z > 1.0:
            z = 2.0 - z
        if z < 0.0:
            z = 0.0
        carry += 1
        if carry == stride:
            out[out_pos + written] = z
            written += 1
            carry = 0
    return z, written, carry
