"""Element kernels for the stabilized weak forms and their Newton matrices.

Unknowns are nodal packed tensors; the test function for row ``(a, c)`` is
``N_a Theta_c`` with ``Theta_c : X = X_c`` (component extraction), and the
matrix column ``(b, e)`` is the nodal direction ``N_b B_e`` with ``B_e`` the
symmetric unit tensor of component ``e``.

Log-morph rows, with R the strong residual at a quadrature point::

    galerkin  N_a R_c
    supg      + tau (u.grad N_a) R_c + tau a3 N_a (W R - R W)_c
    vms       + tau N_a (d a1 L_a1(Psi, R) + a2 L_a2(Psi, R, E))_c
    dc        + a_dc nu grad N_a . G^-1 grad Psi_c

tau and nu are frozen inside a Newton iteration (the matrix does not
differentiate them) and can be passed in to evaluate a residual with the
values of another state.

The morph-GLS baseline works on S itself.  It is a simplified stand-in for
the published GLS/augmented-Lagrangian method: a single penalty term replaces
the Lagrangian iteration and g(S) is frozen in the least-squares weight::

    N_a R_c + tau (u.grad N_a) R_c + tau N_a (a1 R - a2 (ER + RE) + a3 (WR - RW))_c
          + eps_p (det S - 1) N_a cof(S)_c
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._jit import njit
from .morphology import g_morph_matrix, pt_L_hat, pt_norm_L, pt_source_hat, spectral_norm, mandel_basis, mandel_coords
from .spectral import (
    DEFAULT_GUARDS,
    h_dL1,
    h_dL2,
    h_L1,
    h_L2,
    jacobi_eig,
    new_counters,
    pf_dK,
    pf_dL2,
    pf_K,
    pf_L2,
    rot_in,
    rot_out,
)
from .tensors import pack_sym, sym_table, unit_sym, unpack_sym

SCHEMES = ("galerkin", "supg", "vms", "gls_morph")

FLAG_SUPG = 1
FLAG_VMS = 2
NU_FLOOR = 1e-30


@dataclass(frozen=True)
class StabConfig:
    scheme: str = "vms"
    alpha_tau: float = 1.0
    alpha_dc: float = 0.0
    penalty_eps: float = 1e4
    quad_order: int = 2
    vms_source: bool = True

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if not self.alpha_tau > 0:
            raise ValueError("alpha_tau must be positive")
        if self.alpha_dc < 0 or self.penalty_eps < 0:
            raise ValueError("alpha_dc and penalty_eps must be non-negative")

    @property
    def log_form(self) -> bool:
        return self.scheme != "gls_morph"

    def flags(self) -> int:
        f = 0
        if self.scheme in ("supg", "vms"):
            f |= FLAG_SUPG
        if self.scheme == "vms" and self.vms_source:
            f |= FLAG_VMS
        return f


@njit
def tau_value(dt, u, G, normL, alpha_tau):
    uGu = 0.0
    d = u.shape[0]
    for i in range(d):
        for j in range(d):
            uGu += u[i] * G[i, j] * u[j]
    if uGu + normL == 0.0:
        # closed form of the transient-only limit, exact in floating point
        return alpha_tau * dt * 0.5
    return alpha_tau / np.sqrt((2.0 / dt) ** 2 + uGu + normL)


def tau(dt: float, u, G, normL: float, alpha_tau: float = 1.0) -> float:
    """Shakib-type stabilization time scale."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    return float(tau_value(float(dt), np.asarray(u, dtype=float), np.asarray(G, dtype=float),
                           float(normL), float(alpha_tau)))


# --------------------------------------------------------------------------
# helpers on dense d x d matrices


@njit
def _qp_fields(N, dN, Xe, He, a0, dt, d):
    """Interpolated tensor, its time derivative and spatial gradient at a point."""
    nen = N.shape[0]
    X = np.zeros((d, d))
    Xdot = np.zeros((d, d))
    gX = np.zeros((d, d, d))
    for a in range(nen):
        M = unpack_sym(Xe[a], d)
        Mh = unpack_sym(He[a], d)
        X += N[a] * M
        Xdot += N[a] * (a0 * M + Mh) / dt
        for k in range(d):
            gX[k] += dN[a, k] * M
    return X, Xdot, gX


@njit
def _adv(u, gX):
    d = u.shape[0]
    out = np.zeros((d, d))
    for k in range(d):
        out += u[k] * gX[k]
    return out


@njit
def _dc_denominator(gX, Ginv):
    d = Ginv.shape[0]
    acc = 0.0
    for i in range(d):
        for j in range(d):
            for k in range(d):
                for l in range(d):
                    acc += gX[k, i, j] * Ginv[k, l] * gX[l, i, j]
    return acc


@njit
def dc_nu(R, gX, Ginv):
    num = np.sum(R * R)
    den = _dc_denominator(gX, Ginv)
    floor = NU_FLOOR * (1.0 + num)
    if den < floor:
        den = floor
    return np.sqrt(num / den)


@njit
def cof(S):
    d = S.shape[0]
    C = np.empty((d, d))
    if d == 2:
        C[0, 0] = S[1, 1]
        C[1, 1] = S[0, 0]
        C[0, 1] = -S[1, 0]
        C[1, 0] = -S[0, 1]
    else:
        for i in range(3):
            for j in range(3):
                i1 = (i + 1) % 3
                i2 = (i + 2) % 3
                j1 = (j + 1) % 3
                j2 = (j + 2) % 3
                C[i, j] = S[i1, j1] * S[i2, j2] - S[i1, j2] * S[i2, j1]
    return C


@njit
def dcof(S, D):
    """Directional derivative of the cofactor matrix (cof is quadratic in 3D, linear in 2D)."""
    if S.shape[0] == 2:
        return cof(D)
    return cof(S + D) - cof(S) - cof(D)


@njit
def det_small(S):
    if S.shape[0] == 2:
        return S[0, 0] * S[1, 1] - S[0, 1] * S[1, 0]
    return np.linalg.det(S)


# --------------------------------------------------------------------------
# log-morph element kernel


@njit
def elem_logmorph(N_q, w_q, grads, G, Ginv, Xe, He, u_q, gu_q, a0, dt,
                  a1, a2, a3, flags, alpha_tau, alpha_dc,
                  dd_small, arg_small, dd_small_n, arg_small_n, counts,
                  tau_in, nu_in, frozen, want_matrix):
    """Residual (nen, nc) and matrix (nen, nc, nen, nc) of one element.

    ``N_q`` (nq, nen) basis values, ``w_q`` physical weights, ``grads``
    (nen, d) basis gradients, ``Xe``/``He`` nodal Psi and BDF history.
    Returns ``(re, Ke, tau_q, nu_q)``.
    """
    nq, nen = N_q.shape
    d = grads.shape[1]
    nc = d * (d + 1) // 2
    tab = sym_table(d)
    re = np.zeros((nen, nc))
    Ke = np.zeros((nen, nc, nen, nc))
    tau_q = np.zeros(nq)
    nu_q = np.zeros(nq)
    supg = (flags & FLAG_SUPG) != 0
    vms = (flags & FLAG_VMS) != 0
    for q in range(nq):
        N = N_q[q]
        w = w_q[q]
        u = u_q[q]
        gu = gu_q[q]
        E = 0.5 * (gu + gu.T)
        W = 0.5 * (gu - gu.T)
        X, Xdot, gX = _qp_fields(N, grads, Xe, He, a0, dt, d)
        lam, Q, ok = jacobi_eig(X)
        Eh = rot_in(Q, E)
        Wh = rot_in(Q, W)
        tK = pf_K(lam, dd_small, counts)
        tL2 = pf_L2(lam, dd_small, arg_small, counts)
        src = rot_out(Q, pt_source_hat(lam, Eh, Wh, a1, a2, a3))
        R = Xdot + _adv(u, gX) + src
        R = 0.5 * (R + R.T)
        if frozen:
            tq = tau_in[q]
            nu = nu_in[q]
        else:
            tq = 0.0
            if supg:
                normL, okn = pt_norm_L(lam, tK, tL2, Eh, Wh, a1, a2, a3)
                tq = tau_value(dt, u, G, normL, alpha_tau)
            nu = 0.0
            if alpha_dc > 0.0:
                nu = dc_nu(R, gX, Ginv)
        tau_q[q] = tq
        nu_q[q] = nu
        udN = grads @ u  # (nen,)
        Rh = rot_in(Q, R)
        WR = W @ R - R @ W
        if vms:
            V = rot_out(Q, d * a1 * h_L1(lam, tK, Rh) + a2 * h_L2(tL2, Rh, Eh))
        GdX = np.zeros((nen, d, d))  # grad N_a . G^-1 grad X, per node
        if alpha_dc > 0.0:
            for a in range(nen):
                for k in range(d):
                    for l in range(d):
                        GdX[a] += grads[a, k] * Ginv[k, l] * gX[l]
        for a in range(nen):
            for c in range(nc):
                i = tab[c, 0]
                j = tab[c, 1]
                val = N[a] * R[i, j]
                if supg:
                    val += tq * udN[a] * R[i, j] + tq * a3 * N[a] * WR[i, j]
                re[a, c] += w * val
                if vms:
                    re[a, c] += w * tq * N[a] * V[i, j]
                if alpha_dc > 0.0:
                    re[a, c] += w * alpha_dc * nu * GdX[a, i, j]
        if not want_matrix:
            continue
        # per-direction building blocks
        Lm = np.zeros((nc, d, d))
        WB = np.zeros((nc, d, d))
        WL = np.zeros((nc, d, d))
        for e in range(nc):
            B = unit_sym(e, d)
            Bh = rot_in(Q, B)
            Lm[e] = rot_out(Q, pt_L_hat(lam, tK, tL2, Eh, Wh, Bh, a1, a2, a3))
            WB[e] = W @ B - B @ W
            WL[e] = W @ Lm[e] - Lm[e] @ W
        if vms:
            tdK = pf_dK(lam, dd_small_n, arg_small_n, counts)
            ts, tm = pf_dL2(lam, dd_small, arg_small, counts)
            zero = np.zeros((d, d))
            VA = np.zeros((nc, d, d))
            VB = np.zeros((nc, d, d))
            VL = np.zeros((nc, d, d))
            for e in range(nc):
                Bh = rot_in(Q, unit_sym(e, d))
                Lh = rot_in(Q, Lm[e])
                VA[e] = rot_out(Q, d * a1 * h_dL1(lam, tK, tdK, Rh, Bh, zero)
                                + a2 * h_dL2(tL2, ts, tm, Rh, Bh, Eh, zero))
                VB[e] = rot_out(Q, d * a1 * h_L1(lam, tK, Bh) + a2 * h_L2(tL2, Bh, Eh))
                VL[e] = rot_out(Q, d * a1 * h_L1(lam, tK, Lh) + a2 * h_L2(tL2, Lh, Eh))
        for b in range(nen):
            cb = a0 / dt * N[b] + udN[b]
            for e in range(nc):
                for a in range(nen):
                    wa = N[a]
                    if supg:
                        wa += tq * udN[a]
                    for c in range(nc):
                        i = tab[c, 0]
                        j = tab[c, 1]
                        dR = N[b] * Lm[e, i, j]
                        if c == e:
                            dR += cb
                        val = wa * dR
                        if supg:
                            val += tq * a3 * N[a] * (cb * WB[e, i, j] + N[b] * WL[e, i, j])
                        Ke[a, c, b, e] += w * val
                        if vms:
                            Ke[a, c, b, e] += w * tq * N[a] * (N[b] * VA[e, i, j] + cb * VB[e, i, j]
                                                               + N[b] * VL[e, i, j])
                if alpha_dc > 0.0:
                    for a in range(nen):
                        s = 0.0
                        for k in range(d):
                            for l in range(d):
                                s += grads[a, k] * Ginv[k, l] * grads[b, l]
                        Ke[a, e, b, e] += w * alpha_dc * nu * s
    return re, Ke, tau_q, nu_q


# --------------------------------------------------------------------------
# morph-GLS element kernel


@njit
def pt_morph_L_matrix(S, E, W, a1, a2, a3):
    """Linearized morph source X -> a1 (X - dg I) - a2 (EX + XE) - a3 (WX - XW) in Mandel coordinates."""
    d = S.shape[0]
    B = mandel_basis(d)
    n = B.shape[0]
    M = np.empty((n, n))
    for c in range(n):
        Lc = morph_dsource(S, E, W, B[c], a1, a2, a3)
        col = mandel_coords(Lc, B)
        for r in range(n):
            M[r, c] = col[r]
    return M


@njit
def morph_g_dg(S, D):
    d = S.shape[0]
    num, inv2 = g_morph_matrix(S)
    g = num / inv2
    ddet = np.sum(cof(S) * D)
    if d == 2:
        dinv2 = D[0, 0] + D[1, 1]
    else:
        trS = S[0, 0] + S[1, 1] + S[2, 2]
        trD = D[0, 0] + D[1, 1] + D[2, 2]
        dinv2 = trS * trD - np.sum(S * D)
    dg = d * (ddet * inv2 - (num / d) * dinv2) / (inv2 * inv2)
    return g, dg


@njit
def morph_source(S, E, W, a1, a2, a3):
    d = S.shape[0]
    num, inv2 = g_morph_matrix(S)
    g = num / inv2
    return a1 * (S - g * np.eye(d)) - a2 * (E @ S + S @ E) - a3 * (W @ S - S @ W)


@njit
def morph_dsource(S, E, W, D, a1, a2, a3):
    d = S.shape[0]
    g, dg = morph_g_dg(S, D)
    return a1 * (D - dg * np.eye(d)) - a2 * (E @ D + D @ E) - a3 * (W @ D - D @ W)


@njit
def elem_gls_morph(N_q, w_q, grads, G, Xe, He, u_q, gu_q, a0, dt, a1, a2, a3, alpha_tau,
                   penalty, tau_in, frozen, want_matrix):
    nq, nen = N_q.shape
    d = grads.shape[1]
    nc = d * (d + 1) // 2
    tab = sym_table(d)
    re = np.zeros((nen, nc))
    Ke = np.zeros((nen, nc, nen, nc))
    tau_q = np.zeros(nq)
    for q in range(nq):
        N = N_q[q]
        w = w_q[q]
        u = u_q[q]
        gu = gu_q[q]
        E = 0.5 * (gu + gu.T)
        W = 0.5 * (gu - gu.T)
        X, Xdot, gX = _qp_fields(N, grads, Xe, He, a0, dt, d)
        R = Xdot + _adv(u, gX) + morph_source(X, E, W, a1, a2, a3)
        R = 0.5 * (R + R.T)
        if frozen:
            tq = tau_in[q]
        else:
            normL, okn = spectral_norm(pt_morph_L_matrix(X, E, W, a1, a2, a3))
            tq = tau_value(dt, u, G, normL, alpha_tau)
        tau_q[q] = tq
        udN = grads @ u
        LR = a1 * R - a2 * (E @ R + R @ E) + a3 * (W @ R - R @ W)
        C = cof(X)
        dev = det_small(X) - 1.0
        for a in range(nen):
            for c in range(nc):
                i = tab[c, 0]
                j = tab[c, 1]
                val = (N[a] + tq * udN[a]) * R[i, j] + tq * N[a] * LR[i, j]
                val += penalty * dev * N[a] * C[i, j]
                re[a, c] += w * val
        if not want_matrix:
            continue
        Dm = np.zeros((nc, d, d))
        PD = np.zeros((nc, d, d))
        for e in range(nc):
            B = unit_sym(e, d)
            Dm[e] = morph_dsource(X, E, W, B, a1, a2, a3)
            PD[e] = np.sum(C * B) * C + dev * dcof(X, B)
        for b in range(nen):
            cb = a0 / dt * N[b] + udN[b]
            for e in range(nc):
                B = unit_sym(e, d)
                dR = cb * B + N[b] * Dm[e]
                LdR = a1 * dR - a2 * (E @ dR + dR @ E) + a3 * (W @ dR - dR @ W)
                for a in range(nen):
                    for c in range(nc):
                        i = tab[c, 0]
                        j = tab[c, 1]
                        val = (N[a] + tq * udN[a]) * dR[i, j] + tq * N[a] * LdR[i, j]
                        val += penalty * N[a] * N[b] * PD[e, i, j]
                        Ke[a, c, b, e] += w * val
    return re, Ke, tau_q


# --------------------------------------------------------------------------
# single-element public wrappers


@dataclass
class ElementState:
    """Inputs for one element: geometry, nodal values and kinematics at quadrature points."""

    coords: np.ndarray
    values: np.ndarray  # (nen, nc) nodal Psi (or S for the GLS baseline)
    history: np.ndarray  # (nen, nc) BDF history combination
    u_q: np.ndarray
    gu_q: np.ndarray
    a0: float = 1.0
    dt: float = 0.01
    quad_order: int = 2


def _element_arrays(st: ElementState):
    from .mesh import element_metric, quadrature

    geom = element_metric(st.coords)
    d = st.coords.shape[1]
    pts, wts = quadrature(st.quad_order, d)
    N_q = np.column_stack([1.0 - pts.sum(axis=1), pts])
    w_q = wts * geom.volume * (2.0 if d == 2 else 6.0)
    return geom, np.ascontiguousarray(N_q), np.ascontiguousarray(w_q)


def assemble_element(st: ElementState, params, cfg: StabConfig, guards=None, counts=None,
                     tau_in=None, nu_in=None, want_matrix=True):
    """Element residual and Newton matrix for the configured scheme.

    Returns ``(re, Ke, tau_q, nu_q)`` with ``re`` flattened node-major and
    ``Ke`` shaped ``(nen*nc, nen*nc)``.
    """
    g = DEFAULT_GUARDS if guards is None else guards
    counts = new_counters() if counts is None else counts
    geom, N_q, w_q = _element_arrays(st)
    nq = N_q.shape[0]
    frozen = tau_in is not None
    tin = np.zeros(nq) if tau_in is None else np.asarray(tau_in, dtype=float)
    nin = np.zeros(nq) if nu_in is None else np.asarray(nu_in, dtype=float)
    u_q = np.ascontiguousarray(st.u_q, dtype=float)
    gu_q = np.ascontiguousarray(st.gu_q, dtype=float)
    Xe = np.ascontiguousarray(st.values, dtype=float)
    He = np.ascontiguousarray(st.history, dtype=float)
    if cfg.scheme == "gls_morph":
        re, Ke, tq = elem_gls_morph(N_q, w_q, geom.grads, geom.G, Xe, He, u_q, gu_q, st.a0, st.dt,
                                    params.alpha1, params.alpha2, params.alpha3, cfg.alpha_tau,
                                    cfg.penalty_eps, tin, frozen, want_matrix)
        nq_ = np.zeros(nq)
    else:
        re, Ke, tq, nq_ = elem_logmorph(N_q, w_q, geom.grads, geom.G, geom.Ginv, Xe, He, u_q, gu_q,
                                        st.a0, st.dt, params.alpha1, params.alpha2, params.alpha3,
                                        cfg.flags(), cfg.alpha_tau, cfg.alpha_dc, g.dd_small, g.arg_small,
                                        g.dd_small_newton, g.arg_small_newton, counts, tin, nin, frozen,
                                        want_matrix)
    n = re.size
    return re.reshape(n), Ke.reshape(n, n), tq, nq_
