"""Strong-form residuals of the morphology and log-morphology equations.

The morphology tensor S obeys

    dS/dt + u.grad(S) + a1 (S - g(S) I) - a2 (ES + SE) - a3 (WS - SW) = 0

and its logarithm Psi = log S obeys

    dPsi/dt + u.grad(Psi) + a1 (I - g(Psi) exp(-Psi)) - a2 F(Psi, E) - a3 (W Psi - Psi W) = 0

with g chosen so that det(S) is conserved for incompressible flow.  The
Fréchet derivative of the log-morph source (``jacobian_source``) doubles as
the linearized operator whose spectral norm enters tau.

The ``pt_*`` functions are compiled point kernels that work in the eigenbasis
of Psi; the stabilization module calls them once per quadrature point.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._jit import njit
from .spectral import (
    DEFAULT_GUARDS,
    SpectralDecomp,
    eig_sym,
    h_big_f,
    h_L1,
    h_L2,
    jacobi_eig,
    new_counters,
    pf_K,
    pf_L2,
    rot_in,
    rot_out,
)
from .tensors import SkewTensor, SymTensor, sym_table

ARORA_ALPHA1 = 5.0
ARORA_ALPHA2 = 4.2298e-4
BLOOD_MU = 0.0035


class SingularShapeError(ValueError):
    pass


class UnphysicalShapeError(ValueError):
    pass


@dataclass(frozen=True)
class ModelParams:
    alpha1: float = ARORA_ALPHA1
    alpha2: float = ARORA_ALPHA2
    alpha3: float = ARORA_ALPHA2
    mu: float = BLOOD_MU
    dim: int = 3

    def __post_init__(self):
        if not self.alpha1 > 0:
            raise ValueError("alpha1 must be positive")
        if not self.mu > 0:
            raise ValueError("mu must be positive")
        if self.dim not in (2, 3):
            raise ValueError("dim must be 2 or 3")


@dataclass(frozen=True)
class KinematicsSample:
    """Velocity and velocity gradient at a point; ``gradU[i, j] = du_i/dx_j``."""

    u: np.ndarray
    gradU: np.ndarray

    def __post_init__(self):
        u = np.asarray(self.u, dtype=float)
        gu = np.asarray(self.gradU, dtype=float)
        if gu.shape != (u.size, u.size) or u.size not in (2, 3):
            raise ValueError("velocity and gradient shapes do not match")
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "gradU", gu)

    @classmethod
    def quiescent(cls, dim: int) -> "KinematicsSample":
        return cls(np.zeros(dim), np.zeros((dim, dim)))

    @classmethod
    def simple_shear(cls, rate: float, dim: int = 3, y: float = 0.0) -> "KinematicsSample":
        gu = np.zeros((dim, dim))
        gu[0, 1] = rate
        u = np.zeros(dim)
        u[0] = rate * y
        return cls(u, gu)

    @property
    def dim(self) -> int:
        return self.u.size

    @property
    def E(self) -> SymTensor:
        return SymTensor.from_matrix(0.5 * (self.gradU + self.gradU.T))

    @property
    def W(self) -> SkewTensor:
        return SkewTensor.from_matrix(0.5 * (self.gradU - self.gradU.T))

    def E_matrix(self) -> np.ndarray:
        return 0.5 * (self.gradU + self.gradU.T)

    def W_matrix(self) -> np.ndarray:
        return 0.5 * (self.gradU - self.gradU.T)


def _check_dims(p: ModelParams, *dims):
    for d in dims:
        if d != p.dim:
            raise ValueError(f"tensor dimension {d} does not match model dimension {p.dim}")


# --------------------------------------------------------------------------
# compiled point kernels


@njit
def g_morph_matrix(S):
    d = S.shape[0]
    if d == 2:
        inv2 = S[0, 0] + S[1, 1]
        inv3 = S[0, 0] * S[1, 1] - S[0, 1] * S[1, 0]
    else:
        tr = S[0, 0] + S[1, 1] + S[2, 2]
        tr2 = 0.0
        for i in range(3):
            for j in range(3):
                tr2 += S[i, j] * S[j, i]
        inv2 = 0.5 * (tr * tr - tr2)
        inv3 = np.linalg.det(S)
    return d * inv3, inv2


@njit
def pt_source_hat(lam, Eh, Wh, a1, a2, a3):
    """Log-morph source a1(I - g e^-Psi) - a2 F - a3 [W, Psi] in the eigenbasis."""
    d = lam.shape[0]
    ex = np.exp(-lam)
    g = d / ex.sum()
    out = -a2 * h_big_f(lam, Eh)
    for i in range(d):
        out[i, i] += a1 * (1.0 - g * ex[i])
        for j in range(d):
            # (W L - L W)_ij = W_ij (l_j - l_i) for diagonal L
            out[i, j] -= a3 * Wh[i, j] * (lam[j] - lam[i])
    return out


@njit
def pt_L_hat(lam, tK, tL2, Eh, Wh, Dh, a1, a2, a3):
    """Derivative of the source in direction Dh (all in the eigenbasis)."""
    d = lam.shape[0]
    out = -d * a1 * h_L1(lam, tK, Dh) - a2 * h_L2(tL2, Dh, Eh)
    out -= a3 * (Wh @ Dh - Dh @ Wh)
    return out


@njit
def mandel_basis(d):
    tab = sym_table(d)
    n = tab.shape[0]
    B = np.zeros((n, d, d))
    r = 1.0 / np.sqrt(2.0)
    for c in range(n):
        i = tab[c, 0]
        j = tab[c, 1]
        if i == j:
            B[c, i, i] = 1.0
        else:
            B[c, i, j] = r
            B[c, j, i] = r
    return B


@njit
def mandel_coords(M, B):
    n = B.shape[0]
    out = np.empty(n)
    for c in range(n):
        out[c] = np.sum(B[c] * M)
    return out


@njit
def pt_L_matrix(lam, tK, tL2, Eh, Wh, a1, a2, a3):
    """Matrix of the linearized source in an orthonormal (Mandel) basis."""
    d = lam.shape[0]
    B = mandel_basis(d)
    n = B.shape[0]
    M = np.empty((n, n))
    for c in range(n):
        col = mandel_coords(pt_L_hat(lam, tK, tL2, Eh, Wh, B[c], a1, a2, a3), B)
        for r in range(n):
            M[r, c] = col[r]
    return M


@njit
def spectral_norm(M):
    """Largest singular value via the Jacobi eigen-solve of M^T M."""
    G = M.T @ M
    G = 0.5 * (G + G.T)
    w, _, ok = jacobi_eig(G)
    top = w[-1]
    if top < 0.0:
        top = 0.0
    return np.sqrt(top), ok


@njit
def pt_norm_L(lam, tK, tL2, Eh, Wh, a1, a2, a3):
    return spectral_norm(pt_L_matrix(lam, tK, tL2, Eh, Wh, a1, a2, a3))


# --------------------------------------------------------------------------
# public API


def g_morph(S: SymTensor) -> float:
    """Volume-conservation factor d*det(S)/II(S); in 2D the invariant II is tr(S)."""
    num, inv2 = g_morph_matrix(S.matrix())
    if abs(inv2) < 1e-14:
        raise SingularShapeError(f"second invariant {inv2} is too small for g(S)")
    return float(num / inv2)


def g_log(dec: SpectralDecomp) -> float:
    return float(dec.dim / np.exp(-dec.eigenvalues).sum())


def residual_morph(S: SymTensor, dSdt: SymTensor, advS: SymTensor, kin: KinematicsSample,
                   p: ModelParams) -> SymTensor:
    _check_dims(p, S.dim, dSdt.dim, advS.dim, kin.dim)
    M = S.matrix()
    E = kin.E_matrix()
    W = kin.W_matrix()
    g = g_morph(S)
    src = p.alpha1 * (M - g * np.eye(p.dim)) - p.alpha2 * (E @ M + M @ E) - p.alpha3 * (W @ M - M @ W)
    return SymTensor.from_matrix(dSdt.matrix() + advS.matrix() + src)


def source_logmorph(dec: SpectralDecomp, kin: KinematicsSample, p: ModelParams) -> SymTensor:
    """The non-transport part a1(I - g e^-Psi) - a2 F(Psi, E) - a3 (W Psi - Psi W)."""
    _check_dims(p, dec.dim, kin.dim)
    Q = dec.eigenvectors
    out = pt_source_hat(dec.eigenvalues, rot_in(Q, kin.E_matrix()), rot_in(Q, kin.W_matrix()),
                        p.alpha1, p.alpha2, p.alpha3)
    return SymTensor.from_matrix(rot_out(Q, out))


def residual_logmorph(dec: SpectralDecomp, dPsidt: SymTensor, advPsi: SymTensor,
                      kin: KinematicsSample, p: ModelParams) -> SymTensor:
    return dPsidt + advPsi + source_logmorph(dec, kin, p)


def _tables(dec, guards, counts):
    g = DEFAULT_GUARDS if guards is None else guards
    c = new_counters() if counts is None else counts
    return pf_K(dec.eigenvalues, g.dd_small, c), pf_L2(dec.eigenvalues, g.dd_small, g.arg_small, c)


def jacobian_source(dec: SpectralDecomp, dPsi: SymTensor, kin: KinematicsSample, p: ModelParams,
                    guards=None, counts=None) -> SymTensor:
    """L(Psi, dPsi) = -d a1 L_a1(Psi, dPsi) - a2 L_a2(Psi, dPsi, E) - a3 (W dPsi - dPsi W)."""
    _check_dims(p, dec.dim, dPsi.dim, kin.dim)
    Q = dec.eigenvectors
    tK, tL2 = _tables(dec, guards, counts)
    out = pt_L_hat(dec.eigenvalues, tK, tL2, rot_in(Q, kin.E_matrix()), rot_in(Q, kin.W_matrix()),
                   rot_in(Q, dPsi.matrix()), p.alpha1, p.alpha2, p.alpha3)
    return SymTensor.from_matrix(rot_out(Q, out))


def source_operator_matrix(dec: SpectralDecomp, kin: KinematicsSample, p: ModelParams,
                           guards=None, counts=None) -> np.ndarray:
    """Matrix of dPsi -> L(Psi, dPsi) in the orthonormal Mandel basis of the eigenframe."""
    _check_dims(p, dec.dim, kin.dim)
    Q = dec.eigenvectors
    tK, tL2 = _tables(dec, guards, counts)
    return pt_L_matrix(dec.eigenvalues, tK, tL2, rot_in(Q, kin.E_matrix()), rot_in(Q, kin.W_matrix()),
                       p.alpha1, p.alpha2, p.alpha3)


def source_operator_norm(dec: SpectralDecomp, kin: KinematicsSample, p: ModelParams,
                         guards=None, counts=None) -> float:
    """Spectral norm of the linearized source, measured in the Frobenius inner product."""
    M = source_operator_matrix(dec, kin, p, guards, counts)
    val, ok = spectral_norm(M)
    if not ok:
        raise RuntimeError("eigen-solve for the operator norm did not converge")
    return float(val)


def distortion(dec: SpectralDecomp) -> float:
    """D = (L - B)/(L + B) from the extreme eigenvalues of S."""
    lam = dec.eigenvalues
    if lam[0] <= 0.0:
        raise UnphysicalShapeError(f"shape tensor has non-positive eigenvalue {lam[0]}")
    L = np.sqrt(lam[-1])
    B = np.sqrt(lam[0])
    return float((L - B) / (L + B))


def distortion_log(dec: SpectralDecomp) -> float:
    """Distortion of S = exp(Psi) from the eigenvalues of Psi."""
    return float(np.tanh(0.25 * (dec.eigenvalues[-1] - dec.eigenvalues[0])))


def sigma_f(E: SymTensor, mu: float) -> float:
    """Scalar shear stress 2 mu sqrt(-II(E))."""
    M = E.matrix()
    tr = np.trace(M)
    minus_II = 0.5 * (np.sum(M * M) - tr * tr)
    return float(2.0 * mu * np.sqrt(max(minus_II, 0.0)))


def sigma_eff(D: float, p: ModelParams) -> float:
    """Effective shear stress on the cell, inverted from the steady-shear distortion."""
    if not 0.0 <= D < 1.0:
        raise ValueError(f"distortion {D} outside [0, 1)")
    return 2.0 * p.mu * p.alpha1 * D / ((1.0 - D * D) * p.alpha2)


def decompose(S: SymTensor) -> SpectralDecomp:
    return eig_sym(S)
