"""Scalar building blocks for the spectral kernels.

Three scalar functions appear as Cauchy-integral kernels:

* ``KIND_EXP``: ``g(z) = exp(-z)``
* ``KIND_F``:   ``f(z) = z / tanh(z / 2)``
* ``KIND_C``:   ``c(z) = coth(z / 2) - 2 / z`` so that ``f(z) = z c(z) + 2``

All divided differences are evaluated with Taylor expansions about the
midpoint when the nodes are closer than a denominator guard, and all
derivatives of ``f`` and ``c`` switch to their power series when the argument
falls below an argument guard.  The expansions carry enough terms that both
branches agree to roughly machine precision at the switch.
"""
from fractions import Fraction
from math import factorial

import numpy as np

from ._jit import njit

KIND_EXP = 0
KIND_F = 1
KIND_C = 2

# indices into the instrumentation counter array
CNT_SINHC = 0      # sinh(x)/x prefactor of K replaced by its series
CNT_DD1 = 1        # first divided difference replaced by midpoint Taylor
CNT_ARG = 2        # derivative evaluated by power series below arg guard
CNT_DD2 = 3        # second divided difference replaced by centred Taylor
CNT_MIXED = 4      # mixed difference quotient, one pair close
CNT_MIXED2 = 5     # mixed difference quotient, both pairs close
N_COUNTERS = 8

FUNC_F_CUTOFF = 1e-4
SERIES_RADIUS = 2.0   # closed forms of high derivatives cancel badly below this
MAX_DERIV = 14
_NSERIES = 64


def _bernoulli_even(nmax):
    """B_0, B_2, ..., B_{2 nmax} as exact fractions."""
    B = [Fraction(1)]
    for m in range(1, 2 * nmax + 1):
        acc = Fraction(0)
        for k in range(m):
            acc += Fraction(factorial(m + 1), factorial(k) * factorial(m + 1 - k)) * B[k]
        B.append(-acc / (m + 1))
    return [B[2 * n] for n in range(nmax + 1)]


def _series_tables():
    # f(x) = sum_n 2 B_2n x^2n / (2n)!,  c(x) = (f(x) - 2) / x
    b2n = _bernoulli_even(_NSERIES // 2)
    a = [float(2 * b / factorial(2 * n)) for n, b in enumerate(b2n)]
    fcoef = np.zeros(_NSERIES)
    ccoef = np.zeros(_NSERIES)
    for n in range(_NSERIES // 2):
        fcoef[2 * n] = a[n]
        if 2 * n - 1 >= 0:
            ccoef[2 * n - 1] = a[n]
    # row n holds coef[p] * p! / (p - n)!  so the n-th derivative is a plain polynomial
    ff = np.zeros((2, MAX_DERIV + 1, _NSERIES))
    for n in range(MAX_DERIV + 1):
        for p in range(n, _NSERIES):
            fall = float(factorial(p) // factorial(p - n))
            ff[0, n, p] = fcoef[p] * fall
            ff[1, n, p] = ccoef[p] * fall
    return ff


def _coth_polys():
    # d^n/du^n coth(u) = P_n(coth u),  P_{n+1}(c) = P_n'(c) (1 - c^2)
    P = np.zeros((MAX_DERIV + 1, MAX_DERIV + 2))
    P[0, 1] = 1.0
    for n in range(MAX_DERIV):
        dp = np.zeros(MAX_DERIV + 2)
        for k in range(1, MAX_DERIV + 2):
            dp[k - 1] = k * P[n, k]
        nxt = np.zeros(MAX_DERIV + 2)
        for k in range(MAX_DERIV + 2):
            if dp[k] != 0.0:
                nxt[k] += dp[k]
                if k + 2 < MAX_DERIV + 2:
                    nxt[k + 2] -= dp[k]
        P[n + 1] = nxt
    return P


_SERIES = _series_tables()
_COTH = _coth_polys()
_FACT = np.array([float(factorial(n)) for n in range(MAX_DERIV + 2)])


@njit
def func_f(x):
    """x / tanh(x / 2), continued by its even series near zero."""
    if abs(x) < FUNC_F_CUTOFF:
        x2 = x * x
        return 2.0 + x2 / 6.0 - x2 * x2 / 360.0
    return x / np.tanh(0.5 * x)


@njit
def _series_eval(which, n, x):
    ax = abs(x)
    top = 24 if ax < 0.25 else _NSERIES
    s = 0.0
    for p in range(top - 1, n - 1, -1):
        s = s * x + _SERIES[which, n, p]
    return s


@njit
def _coth_deriv(n, x):
    # n-th derivative of coth(x / 2) with respect to x
    c = 1.0 / np.tanh(0.5 * x)
    s = 0.0
    for k in range(n + 1, -1, -1):
        s = s * c + _COTH[n, k]
    return s * 0.5 ** n


@njit
def deriv(kind, n, x, arg_small, counts):
    """n-th derivative of the scalar kernel ``kind`` at x."""
    if kind == KIND_EXP:
        v = np.exp(-x)
        return -v if n % 2 == 1 else v
    if kind == KIND_F and n == 0 and abs(x) >= arg_small:
        return func_f(x)
    ax = abs(x)
    if ax < arg_small or x == 0.0:
        counts[CNT_ARG] += 1
        return _series_eval(kind - 1, n, x)
    if ax < SERIES_RADIUS and n >= 2:
        return _series_eval(kind - 1, n, x)
    if kind == KIND_F:
        if n == 0:
            return func_f(x)
        return x * _coth_deriv(n, x) + n * _coth_deriv(n - 1, x)
    sign = -1.0 if n % 2 == 1 else 1.0
    return _coth_deriv(n, x) - 2.0 * sign * _FACT[n] / x ** (n + 1)


@njit
def dd1(kind, nd, x, y, dd_small, arg_small, counts):
    """First divided difference of the nd-th derivative of ``kind`` at (x, y)."""
    h = x - y
    if abs(h) < dd_small or h == 0.0:
        counts[CNT_DD1] += 1
        m = 0.5 * (x + y)
        a2 = 0.25 * h * h
        return (deriv(kind, nd + 1, m, arg_small, counts)
                + deriv(kind, nd + 3, m, arg_small, counts) * a2 / 6.0
                + deriv(kind, nd + 5, m, arg_small, counts) * a2 * a2 / 120.0)
    return (deriv(kind, nd, x, arg_small, counts) - deriv(kind, nd, y, arg_small, counts)) / h


@njit
def _sort3(x, y, z):
    if x > y:
        x, y = y, x
    if y > z:
        y, z = z, y
    if x > y:
        x, y = y, x
    return x, y, z


@njit
def dd2(kind, x, y, z, dd_small, arg_small, counts):
    """Second divided difference of ``kind`` at three (possibly equal) nodes."""
    a, b, c = _sort3(x, y, z)
    if c - a < dd_small or c == a:
        counts[CNT_DD2] += 1
        m = (a + b + c) / 3.0
        x1 = a - m
        x2 = b - m
        x3 = c - m
        # g[a,b,c] = sum_n g^(n)(m)/n! * h_{n-2}(x1, x2, x3), h = complete symmetric poly
        h23 = 1.0      # h_j(x2, x3)
        h123 = 1.0     # h_j(x1, x2, x3)
        p2 = 1.0
        s = deriv(kind, 2, m, arg_small, counts) / 2.0
        for j in range(1, 7):
            p2 *= x2
            h23 = p2 + x3 * h23
            h123 = h23 + x1 * h123
            s += deriv(kind, j + 2, m, arg_small, counts) / _FACT[j + 2] * h123
        return s
    return (dd1(kind, 0, b, c, dd_small, arg_small, counts)
            - dd1(kind, 0, a, b, dd_small, arg_small, counts)) / (c - a)


@njit
def sinhc(y):
    if abs(y) < 1e-3:
        y2 = y * y
        return 1.0 + y2 / 6.0 + y2 * y2 / 120.0
    return np.sinh(y) / y


@njit
def exp_dd1(x, y, dd_small, counts):
    """[exp(-z)](x, y) in the product form -e^{-(x+y)/2} sinh(h/2)/(h/2)."""
    h = 0.5 * (x - y)
    e = np.exp(-0.5 * (x + y))
    if abs(x - y) < dd_small:
        counts[CNT_SINHC] += 1
        h2 = h * h
        return -e * (1.0 + h2 / 6.0 + h2 * h2 / 120.0 + h2 * h2 * h2 / 5040.0
                     + h2 * h2 * h2 * h2 / 362880.0)
    return -e * np.sinh(h) / h


@njit
def f_dd2(x, y, z, dd_small, arg_small, counts):
    """Second divided difference of f via the regular part c = coth(z/2) - 2/z.

    f(z) = z c(z) + 2, hence by the Leibniz rule, symmetrised over the three
    node orderings, f[x,y,z] = ((x+y+z) c[x,y,z] + c[x,y] + c[y,z] + c[z,x]) / 3.
    """
    cxyz = dd2(KIND_C, x, y, z, dd_small, arg_small, counts)
    cxy = dd1(KIND_C, 0, x, y, dd_small, arg_small, counts)
    cyz = dd1(KIND_C, 0, y, z, dd_small, arg_small, counts)
    czx = dd1(KIND_C, 0, z, x, dd_small, arg_small, counts)
    return ((x + y + z) * cxyz + cxy + cyz + czx) / 3.0


@njit
def f_mixed(li, lj, lk, ll, dd_small, arg_small, counts):
    """Divided difference of f(z - z') in z over (li, lj) and in z' over (lk, ll)."""
    hk = lk - ll
    if abs(hk) < dd_small or hk == 0.0:
        counts[CNT_MIXED] += 1
        if abs(li - lj) < dd_small:
            counts[CNT_MIXED2] += 1
        mid = 0.5 * (lk + ll)
        a2 = 0.25 * hk * hk
        x = li - mid
        y = lj - mid
        return -(dd1(KIND_F, 1, x, y, dd_small, arg_small, counts)
                 + dd1(KIND_F, 3, x, y, dd_small, arg_small, counts) * a2 / 6.0
                 + dd1(KIND_F, 5, x, y, dd_small, arg_small, counts) * a2 * a2 / 120.0)
    return (dd1(KIND_F, 0, li - lk, lj - lk, dd_small, arg_small, counts)
            - dd1(KIND_F, 0, li - ll, lj - ll, dd_small, arg_small, counts)) / hk
