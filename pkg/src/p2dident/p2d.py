"""Finite-volume discretization of the normalized P2D model.

Each region (negative electrode, separator, positive electrode) uses its own
normalized coordinate in [0, 1] split into uniform cells. Particles at every
electrode cell are discretized with :class:`~p2dident.radial.RadialStepper`.

A step is backward Euler for the whole DAE. Both diffusion problems are
linear, so their end-of-step solutions are affine in the unknown reaction
currents; they are folded into the algebraic system, which is then solved by
Newton's method for the solid potentials, electrolyte potentials and
reaction currents.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from .constants import EXCHANGE_CURRENT_FLOOR
from .ocp import OcpCurve
from .params import GroupedParameterSet
from .radial import RadialStepper, shell_volumes
from .spm import CutoffEvent, solid_time_constants

log = logging.getLogger(__name__)


class NumericalError(RuntimeError):
    """Newton failed even after repeated step halving."""


class _NewtonFailure(Exception):
    def __init__(self, message, domain_limited=False, worst=None):
        super().__init__(message)
        self.domain_limited = domain_limited
        self.worst = worst


@dataclass(frozen=True)
class P2dGrid:
    n_neg: int = 12
    n_sep: int = 6
    n_pos: int = 12
    n_r: int = 20

    def __post_init__(self):
        for f in ("n_neg", "n_sep", "n_pos", "n_r"):
            if getattr(self, f) < 4:
                raise ValueError(f"{f} must be at least 4")

    @property
    def n_e(self) -> int:
        return self.n_neg + self.n_sep + self.n_pos

    def refined(self, factor: int = 2) -> "P2dGrid":
        return P2dGrid(self.n_neg * factor, self.n_sep * factor, self.n_pos * factor, self.n_r * factor)

    def centers(self, region: str) -> np.ndarray:
        n = getattr(self, f"n_{region}")
        return (np.arange(n) + 0.5) / n


@dataclass(frozen=True)
class P2dState:
    c_s_neg: np.ndarray  # (n_neg, n_r)
    c_s_pos: np.ndarray  # (n_pos, n_r)
    c_e: np.ndarray  # (n_e,), regions concatenated neg|sep|pos
    phi_s_neg: np.ndarray
    phi_s_pos: np.ndarray
    phi_e: np.ndarray
    j_neg: np.ndarray
    j_pos: np.ndarray
    t: float = 0.0
    current: float = 0.0
    T: float | None = None

    def fields(self) -> dict[str, np.ndarray]:
        return {k: getattr(self, k) for k in
                ("c_s_neg", "c_s_pos", "c_e", "phi_s_neg", "phi_s_pos", "phi_e", "j_neg", "j_pos")}


class _Layout:
    """Index bookkeeping and grid-dependent constant arrays."""

    def __init__(self, grid: P2dGrid, grouped: GroupedParameterSet):
        nn, ns, npos = grid.n_neg, grid.n_sep, grid.n_pos
        self.nn, self.ns, self.np_, self.ne = nn, ns, npos, grid.n_e
        self.nj = nn + npos
        self.n = 2 * self.nj + self.ne
        self.h_neg, self.h_sep, self.h_pos = 1.0 / nn, 1.0 / ns, 1.0 / npos
        h = np.concatenate([np.full(nn, self.h_neg), np.full(ns, self.h_sep), np.full(npos, self.h_pos)])
        self.h = h
        regions = [grouped.neg, grouped.sep, grouped.pos]
        counts = [nn, ns, npos]
        kappa = np.concatenate([np.full(c, r.kappa) for r, c in zip(regions, counts)])
        nu = np.concatenate([np.full(c, r.nu_e) for r, c in zip(regions, counts)])
        D = np.concatenate([np.full(c, r.nu_e / r.tau_d_e) for r, c in zip(regions, counts)])
        # Series resistance / diffusive conductance between neighbouring cell centres.
        self.face_res = 0.5 * h[:-1] / kappa[:-1] + 0.5 * h[1:] / kappa[1:]
        self.face_diff = 1.0 / (0.5 * h[:-1] / D[:-1] + 0.5 * h[1:] / D[1:])
        self.mass = nu * h
        # Electrolyte cells that carry a reaction current, in unknown order.
        self.elec_cells = np.concatenate([np.arange(nn), np.arange(nn + ns, self.ne)])
        self.h_j = np.concatenate([np.full(nn, self.h_neg), np.full(npos, self.h_pos)])
        # Unknown vector slices.
        self.s_phis = slice(0, self.nj)
        self.s_phie = slice(self.nj, self.nj + self.ne)
        self.s_j = slice(self.nj + self.ne, self.n)


class _ElectrolyteStepper:
    """Backward-Euler electrolyte diffusion: ``c' = c - dt A^-1 K c + G j``."""

    def __init__(self, lay: _Layout, gamma: float, dt: float):
        n = lay.ne
        K = np.zeros((n, n))
        idx = np.arange(n - 1)
        K[idx, idx] += lay.face_diff
        K[idx + 1, idx + 1] += lay.face_diff
        K[idx, idx + 1] -= lay.face_diff
        K[idx + 1, idx] -= lay.face_diff
        Ainv = np.linalg.inv(np.diag(lay.mass) + dt * K)
        self._dt_ainv = dt * Ainv
        self._face_diff = lay.face_diff
        self.G = dt * gamma * Ainv[:, lay.elec_cells] * lay.h_j[None, :]

    def advance_free(self, c):
        f = self._face_diff * np.diff(c)
        kc = np.zeros_like(c)
        kc[:-1] -= f
        kc[1:] += f
        return c - self._dt_ainv @ kc


def init_equilibrium(soc_pair, grouped: GroupedParameterSet, grid: P2dGrid,
                     ocp_neg: OcpCurve, ocp_pos: OcpCurve, T: float | None = None) -> P2dState:
    """Rested state at uniform stoichiometries ``(c_neg, c_pos)``."""
    c_neg, c_pos = (float(c) for c in soc_pair)
    for name, c in (("neg", c_neg), ("pos", c_pos)):
        if not 0.0 < c < 1.0:
            raise ValueError(f"initial {name} stoichiometry must lie in (0, 1), got {c}")
    u_neg, u_pos = ocp_neg(c_neg), ocp_pos(c_pos)
    return P2dState(
        c_s_neg=np.full((grid.n_neg, grid.n_r), c_neg),
        c_s_pos=np.full((grid.n_pos, grid.n_r), c_pos),
        c_e=np.ones(grid.n_e),
        phi_s_neg=np.zeros(grid.n_neg),
        phi_s_pos=np.full(grid.n_pos, u_pos - u_neg),
        phi_e=np.full(grid.n_e, -u_neg),
        j_neg=np.zeros(grid.n_neg),
        j_pos=np.zeros(grid.n_pos),
        T=T,
    )


class P2dModel:
    """Normalized P2D model; ``thermal=True`` gives the Arrhenius-coupled variant."""

    def __init__(self, grouped: GroupedParameterSet, ocp_neg: OcpCurve, ocp_pos: OcpCurve,
                 grid: P2dGrid | None = None, thermal: bool = False,
                 newton_tol: float = 1e-10, max_iter: int = 50, max_halvings: int = 10):
        self.grouped, self.ocp_neg, self.ocp_pos = grouped, ocp_neg, ocp_pos
        self.grid = grid or P2dGrid()
        self.thermal = thermal
        self.newton_tol, self.max_iter, self.max_halvings = newton_tol, max_iter, max_halvings
        self.lay = _Layout(self.grid, grouped)
        self._jac0 = self._constant_jacobian()
        self._elyte_cache: dict = {}
        self._radial_cache: dict = {}
        self.last_newton_history: list[float] = []

    @property
    def kind(self) -> str:
        return "P2DT" if self.thermal else "P2D"

    def _constant_jacobian(self) -> np.ndarray:
        """Entries of the Jacobian that do not depend on the iterate."""
        lay, g = self.lay, self.grouped
        nn = lay.nn
        J = np.zeros((lay.n, lay.n))
        for off, count, a in ((0, nn, g.neg.sigma / lay.h_neg), (nn, lay.np_, g.pos.sigma / lay.h_pos)):
            for k in range(1, count):
                r0, r1 = off + k - 1, off + k
                J[r0, r0] += a
                J[r0, r1] -= a
                J[r1, r0] -= a
                J[r1, r1] += a
        jcol = lay.s_j.start
        J[np.arange(lay.nj), jcol + np.arange(lay.nj)] = lay.h_j
        J[0, :] = 0.0
        J[0, 0] = 1.0
        e0 = lay.s_phie.start
        for f in range(1, lay.ne):
            w = 1.0 / lay.face_res[f - 1]
            J[e0 + f - 1, e0 + f - 1] += w
            J[e0 + f - 1, e0 + f] -= w
            J[e0 + f, e0 + f - 1] -= w
            J[e0 + f, e0 + f] += w
        rows = lay.s_j.start + np.arange(lay.nj)
        J[rows, np.arange(lay.nj)] = 1.0
        J[rows, e0 + lay.elec_cells] = -1.0
        return J

    # -- construction helpers ---------------------------------------------
    def initial_state(self, soc_pair, T=None) -> P2dState:
        return init_equilibrium(soc_pair, self.grouped, self.grid, self.ocp_neg, self.ocp_pos, T)

    def _electrolyte(self, dt):
        st = self._elyte_cache.get(dt)
        if st is None:
            if len(self._elyte_cache) > 32:
                self._elyte_cache.clear()
            st = self._elyte_cache[dt] = _ElectrolyteStepper(self.lay, self.grouped.gamma, dt)
        return st

    def _radial(self, dt, taus):
        key = (dt, taus["neg"][0], taus["pos"][0])
        st = self._radial_cache.get(key)
        if st is None:
            if len(self._radial_cache) > 64:
                self._radial_cache.clear()
            st = self._radial_cache[key] = {
                name: RadialStepper(self.grid.n_r, taus[name][0], self.grouped.region(name).tau_c_s, dt)
                for name in ("neg", "pos")
            }
        return st

    def _kinetic_constants(self, T):
        taus, beta_inv = solid_time_constants(self.grouped, T, self.thermal)
        g = self.grouped
        k0 = np.concatenate([
            np.full(self.lay.nn, 3.0 * g.neg.tau_c_s / taus["neg"][1]),
            np.full(self.lay.np_, 3.0 * g.pos.tau_c_s / taus["pos"][1]),
        ])
        return taus, beta_inv, k0

    # -- residual ------------------------------------------------------------
    def _residual(self, z, i_app, ctx, jacobian=True):
        lay, g = self.lay, self.grouped
        nn = lay.nn
        phis, phie, j = z[lay.s_phis], z[lay.s_phie], z[lay.s_j]
        c_ss = ctx["a_ss"] + ctx["s_ss"] * j
        c_e = ctx["ce_base"] + ctx["G"] @ j
        if np.any(c_ss <= 0.0) or np.any(c_ss >= 1.0) or np.any(c_e <= 0.0):
            raise _NewtonFailure("iterate left the physical domain", domain_limited=True)
        beta_inv, k0 = ctx["beta_inv"], ctx["k0"]
        G = ctx["G"]

        R = np.empty(lay.n)
        # Solid-phase charge balance.
        sig_n, sig_p = g.neg.sigma, g.pos.sigma
        is_n = np.empty(nn + 1)
        is_n[0], is_n[-1] = i_app, 0.0
        is_n[1:-1] = -sig_n * np.diff(phis[:nn]) / lay.h_neg
        is_p = np.empty(lay.np_ + 1)
        is_p[0], is_p[-1] = 0.0, i_app
        is_p[1:-1] = -sig_p * np.diff(phis[nn:]) / lay.h_pos
        R[:nn] = np.diff(is_n) + lay.h_neg * j[:nn]
        R[nn:lay.nj] = np.diff(is_p) + lay.h_pos * j[nn:]
        R[0] = phis[0] + i_app * lay.h_neg / (2.0 * sig_n)  # gauge at the negative collector

        # Electrolyte charge balance.
        ln_c = np.log(c_e)
        kdiff = beta_inv * g.k_gamma_f
        ie = np.zeros(lay.ne + 1)
        ie[1:-1] = (-np.diff(phie) + kdiff * np.diff(ln_c)) / lay.face_res
        src = np.zeros(lay.ne)
        src[lay.elec_cells] = lay.h_j * j
        R[lay.s_phie] = np.diff(ie) - src

        # Kinetics in overpotential form.
        ce_j = c_e[lay.elec_cells]
        root = np.sqrt(ce_j * c_ss * (1.0 - c_ss))
        i0 = np.maximum(k0 * root, EXCHANGE_CURRENT_FLOOR)
        x = j / (2.0 * i0)
        u = np.concatenate([self.ocp_neg(c_ss[:nn]), self.ocp_pos(c_ss[nn:])])
        eta = phis - phie[lay.elec_cells] - u
        R[lay.s_j] = eta - beta_inv * np.arcsinh(x)
        if not jacobian:
            return R, None

        J = self._jac0.copy()
        # Electrolyte rows: ie[f] depends on phie[f-1], phie[f] and all j through ln c.
        inv_r = 1.0 / lay.face_res
        dlnc_dj = G / c_e[:, None]  # (ne, nj)
        dface_dj = kdiff * inv_r[:, None] * (dlnc_dj[1:] - dlnc_dj[:-1])  # (ne-1, nj)
        Je = J[lay.s_phie, lay.s_j]
        Je[:-1] += dface_dj
        Je[1:] -= dface_dj
        Je[lay.elec_cells, np.arange(lay.nj)] -= lay.h_j

        # Kinetic rows.
        du = np.concatenate([self.ocp_neg.derivative(c_ss[:nn]), self.ocp_pos.derivative(c_ss[nn:])])
        s = ctx["s_ss"]
        floored = k0 * root <= EXCHANGE_CURRENT_FLOOR
        dlog_i0_dcss = np.where(floored, 0.0, 0.5 * (1.0 - 2.0 * c_ss) / (c_ss * (1.0 - c_ss)))
        dlog_i0_dj = 0.5 * G[lay.elec_cells] / ce_j[:, None]
        dlog_i0_dj[floored] = 0.0
        dlog_i0_dj[np.arange(lay.nj), np.arange(lay.nj)] += dlog_i0_dcss * s
        dasinh = beta_inv / np.sqrt(1.0 + x * x)
        # d asinh(x)/dj_m = (delta/(2 i0) - x dlog_i0/dj_m) / sqrt(1+x^2)
        Jk = -(dasinh[:, None] * (-x[:, None] * dlog_i0_dj))
        Jk[np.arange(lay.nj), np.arange(lay.nj)] -= dasinh / (2.0 * i0)
        Jk[np.arange(lay.nj), np.arange(lay.nj)] -= du * s
        J[lay.s_j, lay.s_j] = Jk
        return R, J

    # -- stepping ------------------------------------------------------------
    def _context(self, state: P2dState, dt: float, T):
        taus, beta_inv, k0 = self._kinetic_constants(T)
        rad = self._radial(dt, taus)
        el = self._electrolyte(dt)
        base_n = rad["neg"].advance_free(state.c_s_neg)
        base_p = rad["pos"].advance_free(state.c_s_pos)
        a_ss = np.concatenate([base_n[:, -1], base_p[:, -1]])
        s_ss = np.concatenate([np.full(self.lay.nn, rad["neg"].s), np.full(self.lay.np_, rad["pos"].s)])
        return dict(rad=rad, base_n=base_n, base_p=base_p, a_ss=a_ss, s_ss=s_ss,
                    ce_base=el.advance_free(state.c_e), G=el.G, beta_inv=beta_inv, k0=k0)

    def _solve(self, state: P2dState, i_app: float, dt: float, T):
        ctx = self._context(state, dt, T)
        lay = self.lay
        z = np.concatenate([state.phi_s_neg, state.phi_s_pos, state.phi_e, state.j_neg, state.j_pos])
        i_old = state.current / self.grouped.i_ref
        if i_app != i_old:
            z[lay.s_j][: lay.nn] += i_app - i_old
            z[lay.s_j][lay.nn:] -= i_app - i_old
        try:
            R, J = self._residual(z, i_app, ctx)
        except _NewtonFailure:
            z = z.copy()
            z[lay.s_j] = np.concatenate([np.full(lay.nn, i_app), np.full(lay.np_, -i_app)])
            R, J = self._residual(z, i_app, ctx)
        history = [float(np.max(np.abs(R)))]
        it = 0
        while history[-1] > self.newton_tol:
            if it >= self.max_iter:
                worst = int(np.argmax(np.abs(R)))
                raise _NewtonFailure(f"no convergence after {it} iterations", worst=(worst, history[-1]))
            it += 1
            try:
                dz = np.linalg.solve(J, -R)
            except np.linalg.LinAlgError as exc:
                raise _NewtonFailure(f"singular Jacobian: {exc}") from None
            lam, merit0 = 1.0, float(R @ R)
            domain_hit = False
            for _ in range(30):
                z_try = z + lam * dz
                try:
                    R_try, _ = self._residual(z_try, i_app, ctx, jacobian=False)
                except _NewtonFailure:
                    domain_hit = True
                    lam *= 0.5
                    continue
                if np.all(np.isfinite(R_try)) and float(R_try @ R_try) <= (1.0 - 1e-4 * lam) * merit0:
                    break
                lam *= 0.5
            else:
                raise _NewtonFailure("line search failed", domain_limited=domain_hit)
            z, R = z_try, R_try
            history.append(float(np.max(np.abs(R))))
            if history[-1] > self.newton_tol:
                R, J = self._residual(z, i_app, ctx)
        self.last_newton_history = history
        j = z[lay.s_j]
        c_s_neg = ctx["base_n"] + np.multiply.outer(j[: lay.nn], ctx["rad"]["neg"].q)
        c_s_pos = ctx["base_p"] + np.multiply.outer(j[lay.nn:], ctx["rad"]["pos"].q)
        c_e = ctx["ce_base"] + ctx["G"] @ j
        return replace(
            state,
            c_s_neg=c_s_neg, c_s_pos=c_s_pos, c_e=c_e,
            phi_s_neg=z[: lay.nn].copy(), phi_s_pos=z[lay.nn: lay.nj].copy(),
            phi_e=z[lay.s_phie].copy(),
            j_neg=j[: lay.nn].copy(), j_pos=j[lay.nn:].copy(),
            t=state.t + dt, current=i_app * self.grouped.i_ref, T=T,
        )

    def step(self, state: P2dState, current: float, dt: float, T=None) -> P2dState:
        """Advance by ``dt`` at constant applied current (A)."""
        if not dt > 0:
            raise ValueError("dt must be positive")
        i_app = current / self.grouped.i_ref
        pending = [dt]
        halvings = 0
        domain_halvings = 0
        s = state
        while pending:
            h = pending.pop()
            try:
                s_new = self._solve(s, i_app, h, T)
            except _NewtonFailure as exc:
                halvings += 1
                if exc.domain_limited:
                    domain_halvings += 1
                    if domain_halvings > 3:
                        raise CutoffEvent(f"P2D state at a physical limit at t={s.t:.6g}s: {exc}") from None
                if halvings > self.max_halvings:
                    raise NumericalError(
                        f"Newton failed at t={s.t:.6g}s, dt={h:.3g}s, current={current:.6g}A: {exc}"
                        + (f" (worst residual index {exc.worst[0]}, value {exc.worst[1]:.3g})" if exc.worst else "")
                    ) from None
                log.debug("halving P2D step at t=%g (dt=%g): %s", s.t, h, exc)
                pending.extend([h / 2, h / 2])
                continue
            _check_state(s_new)
            s = s_new
        return s

    # -- outputs ---------------------------------------------------------------
    def voltage(self, state: P2dState, current=None, T=None) -> float:
        return p2d_voltage(state, self.grouped, self.grid)

    def residual_norm(self, state: P2dState) -> float:
        """Max-norm of the algebraic residual at the stored state."""
        T = state.T
        taus, beta_inv, k0 = self._kinetic_constants(T)
        lay = self.lay
        j = np.concatenate([state.j_neg, state.j_pos])
        grad = np.concatenate([
            np.full(lay.nn, -taus["neg"][0] / (3.0 * self.grouped.neg.tau_c_s)),
            np.full(lay.np_, -taus["pos"][0] / (3.0 * self.grouped.pos.tau_c_s)),
        ])
        surf = np.concatenate([state.c_s_neg[:, -1], state.c_s_pos[:, -1]])
        ctx = dict(a_ss=surf, s_ss=0.5 / self.grid.n_r * grad, ce_base=state.c_e,
                   G=np.zeros((lay.ne, lay.nj)), beta_inv=beta_inv, k0=k0)
        z = np.concatenate([state.phi_s_neg, state.phi_s_pos, state.phi_e, j])
        R, _ = self._residual(z, state.current / self.grouped.i_ref, ctx, jacobian=False)
        return float(np.max(np.abs(R)))

    def face_currents(self, state: P2dState):
        """Electronic and ionic currents at the interior electrode faces."""
        lay, g = self.lay, self.grouped
        T = state.T
        _, beta_inv = solid_time_constants(g, T, self.thermal)
        i_app = state.current / g.i_ref
        ie = (-np.diff(state.phi_e) + beta_inv * g.k_gamma_f * np.diff(np.log(state.c_e))) / lay.face_res
        is_neg = -g.neg.sigma * np.diff(state.phi_s_neg) / lay.h_neg
        is_pos = -g.pos.sigma * np.diff(state.phi_s_pos) / lay.h_pos
        ie_neg = ie[: lay.nn - 1]
        ie_pos = ie[lay.nn + lay.ns: lay.ne - 1]
        return dict(i_s_neg=is_neg, i_e_neg=ie_neg, i_s_pos=is_pos, i_e_pos=ie_pos, i_app=i_app)

    def electrolyte_inventory(self, state: P2dState) -> float:
        """``sum_m nu_e^m <c_e^m>``."""
        return float(self.lay.mass @ state.c_e)

    def solid_inventory(self, state: P2dState) -> float:
        """``tau_c_s^+ <c_s^+> + tau_c_s^- <c_s^->``."""
        w = shell_volumes(self.grid.n_r)
        g = self.grouped
        return float(g.neg.tau_c_s * np.mean(state.c_s_neg @ w) + g.pos.tau_c_s * np.mean(state.c_s_pos @ w))

    def surface_range(self, state: P2dState):
        surf = np.concatenate([state.c_s_neg[:, -1], state.c_s_pos[:, -1]])
        return float(surf.min()), float(surf.max())


def _check_state(s: P2dState) -> None:
    for name in ("c_s_neg", "c_s_pos"):
        c = getattr(s, name)
        if c.min() < -1e-9 or c.max() > 1.0 + 1e-9:
            raise CutoffEvent(f"{name} left [0, 1] at t={s.t:.6g}s", name.rsplit("_", 1)[-1])
    if s.c_e.min() <= 0.0:
        raise CutoffEvent(f"electrolyte depleted at t={s.t:.6g}s")


def p2d_voltage(state: P2dState, grouped: GroupedParameterSet, grid: P2dGrid) -> float:
    """``phi_s^+(1) - phi_s^-(0) - r_f * i`` with collector-face potentials."""
    i = state.current / grouped.i_ref
    phi_pos = state.phi_s_pos[-1] - i * (0.5 / grid.n_pos) / grouped.pos.sigma
    phi_neg = state.phi_s_neg[0] + i * (0.5 / grid.n_neg) / grouped.neg.sigma
    return float(phi_pos - phi_neg - grouped.r_f * i)


def p2d_step(state: P2dState, current: float, dt: float, grouped: GroupedParameterSet,
             ocp_neg: OcpCurve, ocp_pos: OcpCurve, grid: P2dGrid | None = None,
             thermal: bool = False, T=None) -> P2dState:
    """One-off step; prefer :class:`P2dModel` in loops so operators are cached."""
    return P2dModel(grouped, ocp_neg, ocp_pos, grid, thermal).step(state, current, dt, T)
