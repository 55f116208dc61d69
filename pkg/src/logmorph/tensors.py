"""Packed symmetric and skew tensors in 2D and 3D.

Symmetric components are stored as the row-major upper triangle:
``[xx, xy, yy]`` in 2D and ``[xx, xy, xz, yy, yz, zz]`` in 3D.  Skew tensors
store ``[xy]`` and ``[xy, xz, yz]``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._jit import njit

SYM_INDEX = {
    2: np.array([[0, 0], [0, 1], [1, 1]], dtype=np.int64),
    3: np.array([[0, 0], [0, 1], [0, 2], [1, 1], [1, 2], [2, 2]], dtype=np.int64),
}
SKEW_INDEX = {
    2: np.array([[0, 1]], dtype=np.int64),
    3: np.array([[0, 1], [0, 2], [1, 2]], dtype=np.int64),
}
_SYM2 = SYM_INDEX[2]
_SYM3 = SYM_INDEX[3]


def ncomp(dim: int) -> int:
    return dim * (dim + 1) // 2


@njit
def sym_table(d):
    if d == 2:
        return _SYM2
    return _SYM3


@njit
def unpack_sym(comps, d):
    tab = sym_table(d)
    M = np.empty((d, d))
    for c in range(tab.shape[0]):
        i = tab[c, 0]
        j = tab[c, 1]
        M[i, j] = comps[c]
        M[j, i] = comps[c]
    return M


@njit
def pack_sym(M):
    d = M.shape[0]
    tab = sym_table(d)
    out = np.empty(tab.shape[0])
    for c in range(tab.shape[0]):
        i = tab[c, 0]
        j = tab[c, 1]
        out[c] = 0.5 * (M[i, j] + M[j, i])
    return out


@njit
def unit_sym(c, d):
    """Matrix with ones at the (i, j) and (j, i) slots of packed component c."""
    tab = sym_table(d)
    M = np.zeros((d, d))
    M[tab[c, 0], tab[c, 1]] = 1.0
    M[tab[c, 1], tab[c, 0]] = 1.0
    return M


def dim_from_ncomp(n: int) -> int:
    if n == 3:
        return 2
    if n == 6:
        return 3
    raise ValueError(f"no symmetric tensor has {n} packed components")


@dataclass(frozen=True)
class SymTensor:
    dim: int
    comps: np.ndarray

    def __post_init__(self):
        comps = np.asarray(self.comps, dtype=float).reshape(-1)
        if self.dim not in (2, 3):
            raise ValueError(f"dim must be 2 or 3, got {self.dim}")
        if comps.size != ncomp(self.dim):
            raise ValueError(f"expected {ncomp(self.dim)} components, got {comps.size}")
        if not np.all(np.isfinite(comps)):
            raise ValueError("tensor components must be finite")
        object.__setattr__(self, "comps", comps)

    @classmethod
    def from_matrix(cls, M) -> "SymTensor":
        M = np.asarray(M, dtype=float)
        return cls(M.shape[0], pack_sym(M))

    @classmethod
    def zeros(cls, dim: int) -> "SymTensor":
        return cls(dim, np.zeros(ncomp(dim)))

    @classmethod
    def identity(cls, dim: int) -> "SymTensor":
        return cls.from_matrix(np.eye(dim))

    def matrix(self) -> np.ndarray:
        return unpack_sym(self.comps, self.dim)

    def trace(self) -> float:
        return float(np.trace(self.matrix()))

    def __add__(self, other: "SymTensor") -> "SymTensor":
        return SymTensor(self.dim, self.comps + other.comps)

    def __sub__(self, other: "SymTensor") -> "SymTensor":
        return SymTensor(self.dim, self.comps - other.comps)

    def __mul__(self, s: float) -> "SymTensor":
        return SymTensor(self.dim, self.comps * s)

    __rmul__ = __mul__

    def __neg__(self) -> "SymTensor":
        return SymTensor(self.dim, -self.comps)


@dataclass(frozen=True)
class SkewTensor:
    dim: int
    comps: np.ndarray

    def __post_init__(self):
        comps = np.asarray(self.comps, dtype=float).reshape(-1)
        if comps.size != self.dim * (self.dim - 1) // 2:
            raise ValueError("wrong number of skew components")
        object.__setattr__(self, "comps", comps)

    @classmethod
    def from_matrix(cls, M) -> "SkewTensor":
        M = np.asarray(M, dtype=float)
        tab = SKEW_INDEX[M.shape[0]]
        return cls(M.shape[0], np.array([0.5 * (M[i, j] - M[j, i]) for i, j in tab]))

    def matrix(self) -> np.ndarray:
        M = np.zeros((self.dim, self.dim))
        for c, (i, j) in enumerate(SKEW_INDEX[self.dim]):
            M[i, j] = self.comps[c]
            M[j, i] = -self.comps[c]
        return M
