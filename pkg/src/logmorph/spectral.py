"""Matrix functions of symmetric tensors through eigen-projectors.

Every operator here is a sum over eigen-projectors ``P_i = e_i e_i^T`` of the
log-shape tensor, weighted by divided differences of a scalar kernel.  In the
eigenbasis the projector sandwich ``P_i X P_j`` is just the (i, j) entry of
``Q^T X Q``, so each kernel is an elementwise (or small tensor) contraction
followed by a rotation back.

The low-level ``k_*`` / ``pf_*`` functions work on raw arrays and are numba
compiled; the public functions take :class:`SymTensor` and
:class:`SpectralDecomp` objects.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _prefactors as _pf
from ._jit import njit
from ._prefactors import KIND_EXP, KIND_F, N_COUNTERS, dd1, dd2, exp_dd1, f_dd2, f_mixed
from .tensors import SymTensor

JACOBI_MAX_SWEEPS = 50


class EigenConvergenceError(RuntimeError):
    def __init__(self, matrix):
        self.matrix = np.array(matrix)
        super().__init__(f"Jacobi iteration did not converge for\n{self.matrix}")


@dataclass(frozen=True)
class GuardThresholds:
    """Switch points between closed forms and Taylor expansions.

    ``dd_small`` / ``arg_small`` guard the residual-path prefactors and the
    directional derivative of L_alpha2; the ``*_newton`` pair guards the
    three-index exponential prefactor in the derivative of K.
    """

    dd_small: float = 1e-2
    arg_small: float = 1e-1
    dd_small_newton: float = 1e-3
    arg_small_newton: float = 1e-3

    def __post_init__(self):
        for name in ("dd_small", "arg_small", "dd_small_newton", "arg_small_newton"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive")

    def as_array(self) -> np.ndarray:
        return np.array([self.dd_small, self.arg_small, self.dd_small_newton, self.arg_small_newton])


DEFAULT_GUARDS = GuardThresholds()


def new_counters() -> np.ndarray:
    """Fresh instrumentation array; see ``_prefactors.CNT_*`` for the slots."""
    return np.zeros(N_COUNTERS, dtype=np.int64)


# --------------------------------------------------------------------------
# eigen-solver


@njit
def jacobi_eig(A):
    """Cyclic Jacobi eigen-decomposition of a small symmetric matrix.

    Returns ``(eigenvalues ascending, eigenvectors as columns, converged)``.
    """
    n = A.shape[0]
    a = A.copy()
    v = np.eye(n)
    norm2 = 0.0
    for i in range(n):
        for j in range(n):
            norm2 += a[i, j] * a[i, j]
    converged = False
    for _sweep in range(JACOBI_MAX_SWEEPS):
        off = 0.0
        for p in range(n - 1):
            for q in range(p + 1, n):
                off += a[p, q] * a[p, q]
        if off <= 1e-36 * norm2 or off == 0.0:
            converged = True
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                if abs(apq) * 1e18 < abs(a[p, p]) and abs(apq) * 1e18 < abs(a[q, q]):
                    a[p, q] = 0.0
                    a[q, p] = 0.0
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                if abs(theta) > 1e150:
                    t = 0.5 / theta
                elif theta >= 0.0:
                    t = 1.0 / (theta + np.sqrt(1.0 + theta * theta))
                else:
                    t = -1.0 / (-theta + np.sqrt(1.0 + theta * theta))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = t * c
                for k in range(n):
                    akp = a[k, p]
                    akq = a[k, q]
                    a[k, p] = c * akp - s * akq
                    a[k, q] = s * akp + c * akq
                for k in range(n):
                    apk = a[p, k]
                    aqk = a[q, k]
                    a[p, k] = c * apk - s * aqk
                    a[q, k] = s * apk + c * aqk
                for k in range(n):
                    vkp = v[k, p]
                    vkq = v[k, q]
                    v[k, p] = c * vkp - s * vkq
                    v[k, q] = s * vkp + c * vkq
    lam = np.empty(n)
    for i in range(n):
        lam[i] = a[i, i]
    order = np.argsort(lam)
    lam_sorted = np.empty(n)
    vecs = np.empty((n, n))
    for i in range(n):
        lam_sorted[i] = lam[order[i]]
        for k in range(n):
            vecs[k, i] = v[k, order[i]]
    return lam_sorted, vecs, converged


@njit
def rot_in(Q, X):
    return Q.T @ X @ Q


@njit
def rot_out(Q, Xh):
    return Q @ Xh @ Q.T


# --------------------------------------------------------------------------
# prefactor tables (depend on the eigenvalues only)


@njit
def pf_K(lam, dd_small, counts):
    """[exp(-z)](lam_i, lam_j), i.e. minus the sinh-ratio prefactor of K."""
    d = lam.shape[0]
    t = np.empty((d, d))
    for i in range(d):
        for j in range(i, d):
            t[i, j] = exp_dd1(lam[i], lam[j], dd_small, counts)
            t[j, i] = t[i, j]
    return t


@njit
def pf_L2(lam, dd_small, arg_small, counts):
    """c[i,j,k] = (f(l_i - l_k) - f(l_j - l_k)) / (l_i - l_j), guarded."""
    d = lam.shape[0]
    t = np.empty((d, d, d))
    for k in range(d):
        for i in range(d):
            for j in range(i, d):
                t[i, j, k] = dd1(KIND_F, 0, lam[i] - lam[k], lam[j] - lam[k], dd_small, arg_small, counts)
                t[j, i, k] = t[i, j, k]
    return t


@njit
def pf_dK(lam, dd_small, arg_small, counts):
    """Second divided difference of exp(-z) at (l_i, l_j, l_k)."""
    d = lam.shape[0]
    t = np.empty((d, d, d))
    for i in range(d):
        for j in range(d):
            for k in range(d):
                t[i, j, k] = dd2(KIND_EXP, lam[i], lam[j], lam[k], dd_small, arg_small, counts)
    return t


@njit
def pf_dL2(lam, dd_small, arg_small, counts):
    """Second (f[x,y,z]) and mixed prefactors of the derivative of L_alpha2.

    Both tables are symmetric (s in its first three indices, m under i<->j and
    k<->l), so only one representative of each orbit is evaluated.
    """
    d = lam.shape[0]
    s = np.empty((d, d, d, d))
    m = np.empty((d, d, d, d))
    for l in range(d):
        for i in range(d):
            for j in range(i, d):
                for k in range(j, d):
                    v = f_dd2(lam[i] - lam[l], lam[j] - lam[l], lam[k] - lam[l], dd_small, arg_small, counts)
                    s[i, j, k, l] = v
                    s[i, k, j, l] = v
                    s[j, i, k, l] = v
                    s[j, k, i, l] = v
                    s[k, i, j, l] = v
                    s[k, j, i, l] = v
    for i in range(d):
        for j in range(i, d):
            for k in range(d):
                for l in range(k, d):
                    v = f_mixed(lam[i], lam[j], lam[k], lam[l], dd_small, arg_small, counts)
                    m[i, j, k, l] = v
                    m[j, i, k, l] = v
                    m[i, j, l, k] = v
                    m[j, i, l, k] = v
    return s, m


# --------------------------------------------------------------------------
# contractions in the eigenbasis (all arguments already rotated)


@njit
def h_big_f(lam, Eh):
    d = lam.shape[0]
    out = np.empty((d, d))
    for i in range(d):
        for j in range(d):
            out[i, j] = _pf.func_f(lam[i] - lam[j]) * Eh[i, j]
    return out


@njit
def h_K(tK, Rh):
    return tK * Rh


@njit
def h_L1(lam, tK, Rh):
    d = lam.shape[0]
    ex = np.exp(-lam)
    T = ex.sum()
    Kh = tK * Rh
    trK = 0.0
    for i in range(d):
        trK += Kh[i, i]
    out = Kh / T
    for i in range(d):
        out[i, i] -= ex[i] * trK / (T * T)
    return out


@njit
def h_L2(tL2, Rh, Eh):
    d = Rh.shape[0]
    M = np.zeros((d, d))
    for i in range(d):
        for k in range(d):
            acc = 0.0
            for j in range(d):
                acc += tL2[i, j, k] * Rh[i, j] * Eh[j, k]
            M[i, k] = acc
    return M + M.T


@njit
def h_dK(tK, tdK, Rh, Dh, Jh):
    d = Rh.shape[0]
    M = np.zeros((d, d))
    for i in range(d):
        for k in range(d):
            acc = 0.0
            for j in range(d):
                acc += tdK[i, j, k] * Rh[i, j] * Dh[j, k]
            M[i, k] = acc
    return tK * Jh + M + M.T


@njit
def h_dL2(tL2, ts, tm, Rh, Dh, Eh, Jh):
    d = Rh.shape[0]
    N = np.zeros((d, d))
    for i in range(d):
        for l in range(d):
            acc = 0.0
            for j in range(d):
                for k in range(d):
                    acc += ts[i, j, k, l] * (Dh[i, j] * Rh[j, k] + Rh[i, j] * Dh[j, k]) * Eh[k, l]
                    acc += tm[i, j, k, l] * Rh[i, j] * Eh[j, k] * Dh[k, l]
            N[i, l] = acc
    return h_L2(tL2, Jh, Eh) + N + N.T


@njit
def h_dL1(lam, tK, tdK, Rh, Dh, Jh):
    """Directional derivative of L_alpha1(Psi, R(Psi)) along (dPsi, J)."""
    d = lam.shape[0]
    ex = np.exp(-lam)
    T = ex.sum()
    Kh = tK * Rh
    KD = tK * Dh
    dKh = h_dK(tK, tdK, Rh, Dh, Jh)
    trK = 0.0
    dT = 0.0
    trdK = 0.0
    for i in range(d):
        trK += Kh[i, i]
        dT += KD[i, i]
        trdK += dKh[i, i]
    out = dKh / T - Kh * (dT / (T * T)) - KD * (trK / (T * T))
    for i in range(d):
        out[i, i] += -ex[i] * trdK / (T * T) + 2.0 * ex[i] * trK * dT / (T * T * T)
    return out


# --------------------------------------------------------------------------
# public API


@dataclass(frozen=True)
class SpectralDecomp:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    dim: int = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "dim", int(self.eigenvalues.shape[0]))

    def projectors(self) -> list[np.ndarray]:
        Q = self.eigenvectors
        return [np.outer(Q[:, i], Q[:, i]) for i in range(self.dim)]

    def reconstruct(self) -> np.ndarray:
        Q = self.eigenvectors
        return (Q * self.eigenvalues) @ Q.T


def eig_sym(A: SymTensor) -> SpectralDecomp:
    M = A.matrix() if isinstance(A, SymTensor) else np.asarray(A, dtype=float)
    lam, Q, ok = jacobi_eig(M)
    if not ok:
        raise EigenConvergenceError(M)
    return SpectralDecomp(lam, Q)


def func_f(x: float) -> float:
    """f(x) = x / tanh(x/2), with f(0) = 2."""
    return float(_pf.func_f(float(x)))


def _guards(guards):
    return DEFAULT_GUARDS if guards is None else guards


def _counts(counts):
    return new_counters() if counts is None else counts


def _out(dec: SpectralDecomp, Xh) -> SymTensor:
    return SymTensor.from_matrix(rot_out(dec.eigenvectors, Xh))


def _hat(dec: SpectralDecomp, X: SymTensor) -> np.ndarray:
    if X.dim != dec.dim:
        raise ValueError("tensor dimension does not match the decomposition")
    return rot_in(dec.eigenvectors, X.matrix())


def mat_exp_neg(dec: SpectralDecomp) -> SymTensor:
    """exp(-Psi) = sum_i exp(-l_i) P_i."""
    if np.any(-dec.eigenvalues > 709.0):
        raise OverflowError(f"exp(-Psi) overflows for eigenvalues {dec.eigenvalues}")
    return _out(dec, np.diag(np.exp(-dec.eigenvalues)))


def big_f(dec: SpectralDecomp, E: SymTensor) -> SymTensor:
    """F(Psi, E) = sum_ij f(l_i - l_j) P_i E P_j."""
    return _out(dec, h_big_f(dec.eigenvalues, _hat(dec, E)))


def kernel_K(dec: SpectralDecomp, R: SymTensor, guards=None, counts=None) -> SymTensor:
    """K(Psi, R): the Frechet derivative of exp(-Psi) in direction R."""
    g = _guards(guards)
    tK = pf_K(dec.eigenvalues, g.dd_small, _counts(counts))
    return _out(dec, h_K(tK, _hat(dec, R)))


def l_alpha1(dec: SpectralDecomp, R: SymTensor, guards=None, counts=None) -> SymTensor:
    """Derivative of exp(-Psi)/tr(exp(-Psi)) in direction R (traceless)."""
    g = _guards(guards)
    tK = pf_K(dec.eigenvalues, g.dd_small, _counts(counts))
    return _out(dec, h_L1(dec.eigenvalues, tK, _hat(dec, R)))


def l_alpha2(dec: SpectralDecomp, R: SymTensor, E: SymTensor, guards=None, counts=None) -> SymTensor:
    """Derivative of F(Psi, E) with respect to Psi in direction R."""
    g = _guards(guards)
    t = pf_L2(dec.eigenvalues, g.dd_small, g.arg_small, _counts(counts))
    return _out(dec, h_L2(t, _hat(dec, R), _hat(dec, E)))


def dK_direction(dec: SpectralDecomp, R: SymTensor, dPsi: SymTensor, J: SymTensor,
                 guards=None, counts=None) -> SymTensor:
    """d/de K(Psi + e dPsi, R + e J) at e = 0."""
    g = _guards(guards)
    c = _counts(counts)
    tK = pf_K(dec.eigenvalues, g.dd_small, c)
    tdK = pf_dK(dec.eigenvalues, g.dd_small_newton, g.arg_small_newton, c)
    return _out(dec, h_dK(tK, tdK, _hat(dec, R), _hat(dec, dPsi), _hat(dec, J)))


def dL_alpha1_direction(dec: SpectralDecomp, R: SymTensor, dPsi: SymTensor, J: SymTensor,
                        guards=None, counts=None) -> SymTensor:
    """d/de L_alpha1(Psi + e dPsi, R + e J) at e = 0 (chain rule through the trace)."""
    g = _guards(guards)
    c = _counts(counts)
    tK = pf_K(dec.eigenvalues, g.dd_small, c)
    tdK = pf_dK(dec.eigenvalues, g.dd_small_newton, g.arg_small_newton, c)
    return _out(dec, h_dL1(dec.eigenvalues, tK, tdK, _hat(dec, R), _hat(dec, dPsi), _hat(dec, J)))


def dL_alpha2_direction(dec: SpectralDecomp, R: SymTensor, dPsi: SymTensor, E: SymTensor,
                        J: SymTensor, guards=None, counts=None) -> SymTensor:
    """d/de L_alpha2(Psi + e dPsi, R + e J, E) at e = 0."""
    g = _guards(guards)
    c = _counts(counts)
    tL2 = pf_L2(dec.eigenvalues, g.dd_small, g.arg_small, c)
    ts, tm = pf_dL2(dec.eigenvalues, g.dd_small, g.arg_small, c)
    return _out(dec, h_dL2(tL2, ts, tm, _hat(dec, R), _hat(dec, dPsi), _hat(dec, E), _hat(dec, J)))
