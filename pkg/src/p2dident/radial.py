"""Finite-volume operator for diffusion in a sphere of unit radius.

Control volumes are uniform shells in r; the stored values are shell
averages. The r^2-weighted content is conserved exactly by construction:
the only change of the particle average comes from the surface flux.
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np
from scipy.linalg import eigh
from scipy.signal import lfilter


@lru_cache(maxsize=16)
def shell_volumes(n: int) -> np.ndarray:
    """Normalized shell volumes; they sum to one so ``w @ c`` is the particle average."""
    r = np.linspace(0.0, 1.0, n + 1)
    w = r[1:] ** 3 - r[:-1] ** 3
    w.setflags(write=False)
    return w


@lru_cache(maxsize=16)
def stiffness(n: int) -> np.ndarray:
    """Matrix of ``-[r^2 dc/dr]`` face fluxes (times 3) assembled per shell."""
    faces = np.arange(1, n) / n
    k = 3.0 * faces**2 * n
    K = np.zeros((n, n))
    idx = np.arange(n - 1)
    K[idx, idx] += k
    K[idx + 1, idx + 1] += k
    K[idx, idx + 1] -= k
    K[idx + 1, idx] -= k
    K.setflags(write=False)
    return K


class RadialStepper:
    """Backward-Euler update ``c' = c - a A^-1 K c + q j`` for one particle.

    ``j`` is the normalized reaction current; the surface boundary flux is
    ``dc/dr|_1 = -tau_d_s/(3 tau_c_s) j``. The surface value is extrapolated
    from the outer shell with that gradient so it is affine in ``j`` as well:
    ``c_ss = advance_free(c)[-1] + s j``.
    """

    def __init__(self, n: int, tau_d_s: float, tau_c_s: float, dt: float):
        if n < 4:
            raise ValueError("need at least 4 radial control volumes")
        if not dt > 0:
            raise ValueError("dt must be positive")
        self.n, self.tau_d_s, self.tau_c_s, self.dt = n, tau_d_s, tau_c_s, dt
        w = shell_volumes(n)
        A = np.diag(w) + (dt / tau_d_s) * stiffness(n)
        try:
            Ainv = np.linalg.inv(A)
        except np.linalg.LinAlgError as exc:
            raise FloatingPointError(f"singular radial system (tau_d_s={tau_d_s}, dt={dt})") from exc
        self._ainv_t = np.ascontiguousarray(Ainv.T)
        self._rate = dt / tau_d_s
        self._k_faces = 3.0 * (np.arange(1, n) / n) ** 2 * n
        # Surface flux for the whole particle: d<c>/dt = -j / tau_c_s.
        self.q = -Ainv[:, -1] * (dt / tau_c_s)
        self.surface_gradient = -tau_d_s / (3.0 * tau_c_s)
        self.s = self.q[-1] + 0.5 / n * self.surface_gradient
        self.weights = w

    def advance_free(self, c: np.ndarray) -> np.ndarray:
        """Zero-flux part of the update.

        The stiffness product is formed from face differences so a uniform
        profile maps onto itself exactly.
        """
        f = self._k_faces * np.diff(c, axis=-1)
        kc = np.zeros_like(c)
        kc[..., :-1] -= f
        kc[..., 1:] += f
        return c - self._rate * (kc @ self._ainv_t)

    def advance(self, c: np.ndarray, j) -> np.ndarray:
        """Advance one or many particles; ``c`` has shape (..., n)."""
        return self.advance_free(c) + np.multiply.outer(j, self.q)

    def surface(self, c_new: np.ndarray, j) -> np.ndarray:
        return c_new[..., -1] + (0.5 / self.n) * self.surface_gradient * np.asarray(j)

    def average(self, c: np.ndarray):
        return c @ self.weights


class ModalRadial:
    """Eigen-decomposition of the particle operator for open-loop batch runs.

    With ``K v = mu W v`` and ``V^T W V = I`` the backward-Euler update
    decouples into scalar recursions
    ``z' = lam (z - (dt/tau_c_s) V[-1] j)`` with ``lam = 1/(1 + mu dt/tau_d_s)``.
    The eigenvectors do not depend on the time constants, so one
    decomposition serves every parameter value and temperature.
    """

    def __init__(self, n: int):
        self.n = n
        self.w = shell_volumes(n)
        mu, V = eigh(stiffness(n), np.diag(self.w))
        self.mu = np.maximum(mu, 0.0)
        self.V = V
        self.b = V[-1].copy()

    def to_modal(self, c):
        return (c * self.w) @ self.V

    def from_modal(self, z):
        return z @ self.V.T

    def history(self, z0: np.ndarray, j, dt, tau_d_s, tau_c_s: float) -> np.ndarray:
        """Modal states after each of ``len(j)`` steps, shape (N, n)."""
        j = np.asarray(j, dtype=float)
        N = j.size
        dt = np.broadcast_to(np.asarray(dt, dtype=float), (N,))
        tau = np.broadcast_to(np.asarray(tau_d_s, dtype=float), (N,))
        Z = np.empty((N, self.n))
        if N == 0:
            return Z
        change = np.flatnonzero((dt[1:] != dt[:-1]) | (tau[1:] != tau[:-1])) + 1
        starts = np.concatenate([[0], change, [N]])
        z = np.asarray(z0, dtype=float)
        if len(starts) - 1 > max(1, N // 64):
            for k in range(N):
                lam = 1.0 / (1.0 + self.mu * (dt[k] / tau[k]))
                z = lam * (z - (dt[k] / tau_c_s) * self.b * j[k])
                Z[k] = z
            return Z
        for a, e in zip(starts[:-1], starts[1:]):
            lam = 1.0 / (1.0 + self.mu * (dt[a] / tau[a]))
            drive = -(dt[a] / tau_c_s) * j[a:e]
            for m in range(self.n):
                y, _ = lfilter([lam[m] * self.b[m]], [1.0, -lam[m]], drive, zi=[lam[m] * z[m]])
                Z[a:e, m] = y
            z = Z[e - 1]
        return Z
