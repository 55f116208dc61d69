"""Global assembly of the stabilized systems on a mesh.

Unknowns are stored node-major: dof ``node * nc + c``.  Element loops run in
a fixed order into a precomputed CSR pattern, so the assembled residual and
matrix are bitwise reproducible.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from ._jit import njit
from .flow import FlowField
from .linalg import gmres_restarted, ilut_factor
from .mesh import Mesh, quadrature
from .morphology import ModelParams
from .spectral import DEFAULT_GUARDS, GuardThresholds, new_counters
from .stabilization import StabConfig, elem_gls_morph, elem_logmorph
from .tensors import ncomp


@njit
def _assemble_log(elements, N_q, w_q, grads, G, Ginv, X, H, u_q, gu_q, a0, dt, a1, a2, a3, flags,
                  alpha_tau, alpha_dc, dd_small, arg_small, dd_small_n, arg_small_n, counts,
                  tau_in, nu_in, frozen, want_matrix, emap, nnz):
    ne, nen = elements.shape
    nc = X.shape[1]
    nq = N_q.shape[0]
    r = np.zeros(X.shape[0] * nc)
    data = np.zeros(nnz if want_matrix else 0)
    tau_out = np.zeros((ne, nq))
    nu_out = np.zeros((ne, nq))
    for e in range(ne):
        nodes = elements[e]
        re, Ke, tq, nu = elem_logmorph(N_q, w_q[e], grads[e], G[e], Ginv[e], X[nodes], H[nodes], u_q[e],
                                       gu_q[e], a0, dt, a1, a2, a3, flags, alpha_tau, alpha_dc, dd_small,
                                       arg_small, dd_small_n, arg_small_n, counts, tau_in[e], nu_in[e],
                                       frozen, want_matrix)
        tau_out[e] = tq
        nu_out[e] = nu
        for a in range(nen):
            for c in range(nc):
                r[nodes[a] * nc + c] += re[a, c]
        if want_matrix:
            k = 0
            for a in range(nen):
                for c in range(nc):
                    for b in range(nen):
                        for f in range(nc):
                            data[emap[e, k]] += Ke[a, c, b, f]
                            k += 1
    return r, data, tau_out, nu_out


@njit
def _assemble_gls(elements, N_q, w_q, grads, G, X, H, u_q, gu_q, a0, dt, a1, a2, a3, alpha_tau, penalty,
                  tau_in, frozen, want_matrix, emap, nnz):
    ne, nen = elements.shape
    nc = X.shape[1]
    nq = N_q.shape[0]
    r = np.zeros(X.shape[0] * nc)
    data = np.zeros(nnz if want_matrix else 0)
    tau_out = np.zeros((ne, nq))
    for e in range(ne):
        nodes = elements[e]
        re, Ke, tq = elem_gls_morph(N_q, w_q[e], grads[e], G[e], X[nodes], H[nodes], u_q[e], gu_q[e], a0, dt,
                                    a1, a2, a3, alpha_tau, penalty, tau_in[e], frozen, want_matrix)
        tau_out[e] = tq
        for a in range(nen):
            for c in range(nc):
                r[nodes[a] * nc + c] += re[a, c]
        if want_matrix:
            k = 0
            for a in range(nen):
                for c in range(nc):
                    for b in range(nen):
                        for f in range(nc):
                            data[emap[e, k]] += Ke[a, c, b, f]
                            k += 1
    return r, data, tau_out, np.zeros((ne, nq))


def trace_split_block(d: int) -> np.ndarray:
    """Per-node change of basis: first row is the trace, the rest span deviatoric directions."""
    if d == 2:
        return np.array([[1.0, 0.0, 1.0], [1.0, 0.0, -1.0], [0.0, 1.0, 0.0]])
    return np.array([
        [1.0, 0.0, 0.0, 1.0, 0.0, 1.0],
        [1.0, 0.0, 0.0, -1.0, 0.0, 0.0],
        [0.0, 0.0, 0.0, 1.0, 0.0, -1.0],
        [0.0, 1.0, 0.0, 0.0, 0.0, 0.0],
        [0.0, 0.0, 1.0, 0.0, 0.0, 0.0],
        [0.0, 0.0, 0.0, 0.0, 1.0, 0.0],
    ])


@dataclass
class Assembled:
    residual: np.ndarray
    matrix: sp.csr_matrix | None
    tau: np.ndarray
    nu: np.ndarray


class FESystem:
    """Discrete system for one scheme on one mesh with a fixed ambient flow."""

    def __init__(self, mesh: Mesh, flow: FlowField, params: ModelParams, stab: StabConfig,
                 guards: GuardThresholds | None = None, dirichlet_nodes=None, dirichlet_value=None):
        if params.dim != mesh.dim:
            raise ValueError("model dimension must match the mesh dimension")
        self.mesh = mesh
        self.params = params
        self.stab = stab
        self.guards = DEFAULT_GUARDS if guards is None else guards
        self.d = mesh.dim
        self.nc = ncomp(self.d)
        self.ndof = mesh.n_nodes * self.nc
        self.counts = new_counters()
        geo = mesh.geometry()
        pts, wts = quadrature(stab.quad_order, self.d)
        self.N_q = np.ascontiguousarray(np.column_stack([1.0 - pts.sum(axis=1), pts]))
        ref_vol = 0.5 if self.d == 2 else 1.0 / 6.0
        self.w_q = np.ascontiguousarray(np.outer(geo["volume"] / ref_vol, wts))
        self.grads = geo["grads"]
        self.G = geo["G"]
        self.Ginv = geo["Ginv"]
        xe = mesh.nodes[mesh.elements]  # (ne, nen, d)
        self.x_q = np.einsum("qa,ead->eqd", self.N_q, xe)
        self.set_flow(flow)
        self._build_pattern()
        self.dirichlet = np.zeros(0, dtype=np.int64) if dirichlet_nodes is None else np.unique(dirichlet_nodes)
        self.dirichlet_value = np.zeros(self.nc) if dirichlet_value is None else np.asarray(dirichlet_value, float)
        T = trace_split_block(self.d)
        n = mesh.n_nodes
        self.T = sp.kron(sp.identity(n, format="csr"), sp.csr_matrix(T), format="csr")
        self.Tinv = sp.kron(sp.identity(n, format="csr"), sp.csr_matrix(np.linalg.inv(T)), format="csr")

    # -- setup --------------------------------------------------------------

    def set_flow(self, flow: FlowField):
        ne, nq, d = self.x_q.shape
        mrf = self.mesh.mrf_region
        mrf_q = np.zeros((ne, nq), dtype=bool) if mrf is None else np.repeat(mrf[:, None], nq, axis=1)
        elem = np.repeat(np.arange(ne), nq)
        bary = np.tile(self.N_q, (ne, 1))
        u, g = flow.evaluate(self.x_q.reshape(-1, d), mrf_q.reshape(-1), elem, bary)
        self.flow = flow
        self.u_q = np.ascontiguousarray(u.reshape(ne, nq, d))
        self.gu_q = np.ascontiguousarray(g.reshape(ne, nq, d, d))

    def _build_pattern(self):
        el = self.mesh.elements
        nen = el.shape[1]
        nc = self.nc
        dofs = (el[:, :, None] * nc + np.arange(nc)[None, None, :]).reshape(el.shape[0], nen * nc)
        rows = np.repeat(dofs, nen * nc, axis=1)
        cols = np.tile(dofs, (1, nen * nc))
        A = sp.csr_matrix((np.ones(rows.size), (rows.ravel(), cols.ravel())), shape=(self.ndof, self.ndof))
        A.sum_duplicates()
        A.sort_indices()
        self.indptr = A.indptr.astype(np.int64)
        self.indices = A.indices.astype(np.int64)
        self.nnz = self.indices.size
        row_of = np.repeat(np.arange(self.ndof), np.diff(self.indptr))
        keys = row_of * self.ndof + self.indices
        ekeys = rows.astype(np.int64) * self.ndof + cols
        self.emap = np.ascontiguousarray(np.searchsorted(keys, ekeys.ravel()).reshape(ekeys.shape))
        self.diag_pos = np.searchsorted(keys, np.arange(self.ndof) * (self.ndof + 1))

    # -- assembly -----------------------------------------------------------

    def assemble(self, X, H, a0, dt, want_matrix=True, tau=None, nu=None) -> Assembled:
        """Residual (and matrix) at nodal state X with BDF history H.

        Passing ``tau``/``nu`` from an earlier call freezes the stabilization
        parameters, which is what the Newton matrix assumes.
        """
        X = np.ascontiguousarray(X, dtype=float).reshape(self.mesh.n_nodes, self.nc)
        H = np.ascontiguousarray(H, dtype=float).reshape(self.mesh.n_nodes, self.nc)
        ne, nq = self.w_q.shape
        frozen = tau is not None
        tau_in = np.zeros((ne, nq)) if tau is None else np.ascontiguousarray(tau)
        nu_in = np.zeros((ne, nq)) if nu is None else np.ascontiguousarray(nu)
        p, s, g = self.params, self.stab, self.guards
        el = self.mesh.elements
        if s.log_form:
            r, data, t, n = _assemble_log(el, self.N_q, self.w_q, self.grads, self.G, self.Ginv, X, H, self.u_q,
                                          self.gu_q, float(a0), float(dt), p.alpha1, p.alpha2, p.alpha3,
                                          s.flags(), s.alpha_tau, s.alpha_dc, g.dd_small, g.arg_small,
                                          g.dd_small_newton, g.arg_small_newton, self.counts, tau_in, nu_in,
                                          frozen, want_matrix, self.emap, self.nnz)
        else:
            r, data, t, n = _assemble_gls(el, self.N_q, self.w_q, self.grads, self.G, X, H, self.u_q, self.gu_q,
                                          float(a0), float(dt), p.alpha1, p.alpha2, p.alpha3, s.alpha_tau,
                                          s.penalty_eps, tau_in, frozen, want_matrix, self.emap, self.nnz)
        if self.dirichlet.size:
            dd = (self.dirichlet[:, None] * self.nc + np.arange(self.nc)).ravel()
            r[dd] = (X[self.dirichlet] - self.dirichlet_value).ravel()
            if want_matrix:
                for i in dd:
                    data[self.indptr[i]:self.indptr[i + 1]] = 0.0
                data[self.diag_pos[dd]] = 1.0
        A = None
        if want_matrix:
            A = sp.csr_matrix((data, self.indices, self.indptr), shape=(self.ndof, self.ndof))
        return Assembled(r, A, t, n)

    # -- linear solves ------------------------------------------------------

    def solve_linear(self, A, rhs, cfg, atol):
        """Solve A x = rhs with ILUT-preconditioned GMRES in the trace/deviatoric basis."""
        if self.stab.log_form:
            At = (self.T @ A @ self.Tinv).tocsr()
            bt = self.T @ rhs
        else:
            At, bt = A, rhs
        P = ilut_factor(At, cfg.ilut_fill, cfg.ilut_threshold)
        y, info = gmres_restarted(At, bt, P, cfg.krylov_dim, cfg.linear_rtol, atol=atol,
                                  max_iter=cfg.gmres_max_iter)
        x = self.Tinv @ y if self.stab.log_form else y
        info.shifts = P.shifts
        return x, info
