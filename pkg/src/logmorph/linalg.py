"""Restarted GMRES and a threshold incomplete LU preconditioner.

Both are written out rather than taken from scipy so that the iteration
counts reported by the solver are exact tallies and the ILUT fill/drop rules
are the classical dual-threshold ones (keep at most ``fill`` entries per row
in each of L and U, drop entries below ``threshold * ||row||``).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from ._jit import njit


@njit
def _ilut_kernel(n, indptr, indices, data, fill, droptol):
    p = min(fill, n)
    capL = n * p + 1
    capU = n * (p + 1) + 1
    Lp = np.zeros(n + 1, dtype=np.int64)
    Li = np.empty(capL, dtype=np.int64)
    Lx = np.empty(capL)
    Up = np.zeros(n + 1, dtype=np.int64)
    Ui = np.empty(capU, dtype=np.int64)
    Ux = np.empty(capU)
    diag = np.empty(n)
    w = np.zeros(n)
    pos = -np.ones(n, dtype=np.int64)
    jl = np.empty(n, dtype=np.int64)
    ju = np.empty(n, dtype=np.int64)
    shifts = 0
    nL = 0
    nU = 0
    for i in range(n):
        lenl = 0
        lenu = 0
        rnorm = 0.0
        has_diag = False
        for k in range(indptr[i], indptr[i + 1]):
            j = indices[k]
            v = data[k]
            rnorm += v * v
            if pos[j] == -1:
                if j < i:
                    jl[lenl] = j
                    lenl += 1
                elif j > i:
                    ju[lenu] = j
                    lenu += 1
                else:
                    has_diag = True
                pos[j] = 1
                w[j] = v
            else:
                w[j] += v
        if not has_diag:
            pos[i] = 1
            w[i] = 0.0
        rnorm = np.sqrt(rnorm)
        tol = droptol * rnorm
        # elimination in increasing column order
        kept = 0
        jj = 0
        while jj < lenl:
            m = jj
            for t in range(jj + 1, lenl):
                if jl[t] < jl[m]:
                    m = t
            tmp = jl[jj]
            jl[jj] = jl[m]
            jl[m] = tmp
            col = jl[jj]
            fact = w[col] / diag[col]
            jj += 1
            if abs(fact) <= tol:
                w[col] = 0.0
                pos[col] = -1
                continue
            w[col] = fact
            jl[kept] = col  # compact survivors in place; kept < jj always
            kept += 1
            for t in range(Up[col], Up[col + 1]):
                j = Ui[t]
                s = fact * Ux[t]
                if pos[j] == -1:
                    pos[j] = 1
                    w[j] = -s
                    if j < i:
                        jl[lenl] = j
                        lenl += 1
                    else:
                        ju[lenu] = j
                        lenu += 1
                else:
                    w[j] -= s
        # select L entries
        nkeep = kept
        if nkeep > p:
            mags = np.empty(nkeep)
            for t in range(nkeep):
                mags[t] = -abs(w[jl[t]])
            order = np.argsort(mags, kind="mergesort")
            for t in range(p):
                Li[nL] = jl[order[t]]
                Lx[nL] = w[jl[order[t]]]
                nL += 1
        else:
            for t in range(nkeep):
                Li[nL] = jl[t]
                Lx[nL] = w[jl[t]]
                nL += 1
        Lp[i + 1] = nL
        # diagonal
        dv = w[i]
        if dv == 0.0:
            dv = tol if tol > 0.0 else (rnorm * 1e-8 if rnorm > 0.0 else 1.0)
            shifts += 1
        diag[i] = dv
        # select U entries above threshold
        cnt = 0
        for t in range(lenu):
            if abs(w[ju[t]]) > tol:
                ju[cnt] = ju[t]
                cnt += 1
            else:
                pos[ju[t]] = -1
                w[ju[t]] = 0.0
        if cnt > p:
            mags = np.empty(cnt)
            for t in range(cnt):
                mags[t] = -abs(w[ju[t]])
            order = np.argsort(mags, kind="mergesort")
            for t in range(p):
                Ui[nU] = ju[order[t]]
                Ux[nU] = w[ju[order[t]]]
                nU += 1
        else:
            for t in range(cnt):
                Ui[nU] = ju[t]
                Ux[nU] = w[ju[t]]
                nU += 1
        Up[i + 1] = nU
        # reset work arrays
        for t in range(kept):
            pos[jl[t]] = -1
            w[jl[t]] = 0.0
        for t in range(lenu):
            pos[ju[t]] = -1
            w[ju[t]] = 0.0
        pos[i] = -1
        w[i] = 0.0
    return Lp, Li[:nL], Lx[:nL], Up, Ui[:nU], Ux[:nU], diag, shifts


@njit
def _ilut_solve(Lp, Li, Lx, Up, Ui, Ux, diag, b):
    n = b.shape[0]
    y = b.copy()
    for i in range(n):
        s = y[i]
        for t in range(Lp[i], Lp[i + 1]):
            s -= Lx[t] * y[Li[t]]
        y[i] = s
    for i in range(n - 1, -1, -1):
        s = y[i]
        for t in range(Up[i], Up[i + 1]):
            s -= Ux[t] * y[Ui[t]]
        y[i] = s / diag[i]
    return y


@dataclass
class ILUT:
    """Incomplete LU of the equilibrated matrix ``Dr A Dc``; ``solve`` applies the inverse of A's approximation."""

    n: int
    factors: tuple
    row_scale: np.ndarray
    col_scale: np.ndarray
    shifts: int = 0
    nnz: int = 0

    def solve(self, b):
        y = _ilut_solve(*self.factors, np.ascontiguousarray(self.row_scale * b))
        return self.col_scale * y


def equilibrate(A: sp.csr_matrix):
    A = sp.csr_matrix(A, dtype=float)
    rmax = np.asarray(abs(A).max(axis=1).todense()).ravel()
    r = np.where(rmax > 0, 1.0 / np.where(rmax > 0, rmax, 1.0), 1.0)
    B = sp.diags(r) @ A
    cmax = np.asarray(abs(B).max(axis=0).todense()).ravel()
    c = np.where(cmax > 0, 1.0 / np.where(cmax > 0, cmax, 1.0), 1.0)
    return sp.csr_matrix(B @ sp.diags(c)), r, c


def ilut_factor(A, fill: int = 20, threshold: float = 1e-4, scale: bool = True) -> ILUT:
    """Dual-threshold ILU.  Zero pivots are replaced by a small shift and counted in ``shifts``."""
    A = sp.csr_matrix(A, dtype=float)
    n = A.shape[0]
    if A.shape[1] != n:
        raise ValueError("ILUT needs a square matrix")
    if scale:
        B, r, c = equilibrate(A)
    else:
        B, r, c = A, np.ones(n), np.ones(n)
    B.sort_indices()
    fill = int(min(fill, n)) if fill >= 0 else n
    Lp, Li, Lx, Up, Ui, Ux, diag, shifts = _ilut_kernel(
        n, B.indptr.astype(np.int64), B.indices.astype(np.int64), B.data.astype(float), fill, float(threshold)
    )
    return ILUT(n, (Lp, Li, Lx, Up, Ui, Ux, diag), r, c, int(shifts), int(Li.size + Ui.size + n))


@dataclass
class GMRESInfo:
    iterations: int = 0
    restarts: int = 0
    converged: bool = False
    residual: float = np.inf
    history: list = field(default_factory=list)


def gmres_restarted(matvec, b, precond=None, krylov_dim: int = 10, tol: float = 1e-8,
                    atol: float = 0.0, max_iter: int = 1000, x0=None):
    """Right-preconditioned restarted GMRES (modified Gram-Schmidt, Givens rotations).

    Stops when ``||b - A x|| <= max(tol * ||b||, atol)``.  Returns ``(x, GMRESInfo)``;
    ``history`` holds the initial residual norm followed by the least-squares
    residual estimate after every inner iteration.
    """
    if not callable(matvec):
        A = matvec
        matvec = lambda v: A @ v
    M = (lambda v: v) if precond is None else (precond.solve if hasattr(precond, "solve") else precond)
    b = np.asarray(b, dtype=float)
    n = b.size
    m = max(1, int(krylov_dim))
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    info = GMRESInfo()
    bnorm = np.linalg.norm(b)
    target = max(tol * bnorm, atol)
    r = b - matvec(x) if x0 is not None else b.copy()
    beta = np.linalg.norm(r)
    info.residual = beta
    info.history.append(beta)
    if beta <= target:
        info.converged = True
        return x, info
    V = np.zeros((m + 1, n))
    Z = np.zeros((m, n))
    H = np.zeros((m + 1, m))
    cs = np.zeros(m)
    sn = np.zeros(m)
    while info.iterations < max_iter:
        V[0] = r / beta
        g = np.zeros(m + 1)
        g[0] = beta
        k = 0
        breakdown = False
        for j in range(m):
            Z[j] = M(V[j])
            wv = matvec(Z[j])
            for i in range(j + 1):
                H[i, j] = np.dot(wv, V[i])
                wv = wv - H[i, j] * V[i]
            H[j + 1, j] = np.linalg.norm(wv)
            for i in range(j):
                t = cs[i] * H[i, j] + sn[i] * H[i + 1, j]
                H[i + 1, j] = -sn[i] * H[i, j] + cs[i] * H[i + 1, j]
                H[i, j] = t
            hn = np.hypot(H[j, j], H[j + 1, j])
            if hn == 0.0:
                cs[j], sn[j] = 1.0, 0.0
            else:
                cs[j], sn[j] = H[j, j] / hn, H[j + 1, j] / hn
            H[j, j] = hn
            hsub = H[j + 1, j]
            H[j + 1, j] = 0.0
            g[j + 1] = -sn[j] * g[j]
            g[j] = cs[j] * g[j]
            info.iterations += 1
            k = j + 1
            info.history.append(abs(g[j + 1]))
            if hsub <= 1e-14 * hn or hn == 0.0:
                breakdown = True
            if abs(g[j + 1]) <= target or breakdown or info.iterations >= max_iter:
                break
            V[j + 1] = wv / hsub
        y = np.zeros(k)
        for i in range(k - 1, -1, -1):
            s = g[i] - np.dot(H[i, i + 1 : k], y[i + 1 : k])
            y[i] = s / H[i, i] if H[i, i] != 0.0 else 0.0
        x = x + y @ Z[:k]
        r = b - matvec(x)
        beta = np.linalg.norm(r)
        info.residual = beta
        if beta <= target:
            info.converged = True
            break
        if info.iterations >= max_iter:
            break
        info.restarts += 1
        if beta == 0.0:
            info.converged = True
            break
    return x, info
