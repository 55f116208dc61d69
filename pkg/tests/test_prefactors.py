"""Scalar divided differences against extended-precision oracles."""
import mpmath as mp
import numpy as np
import pytest

from logmorph import _prefactors as pf
from logmorph.spectral import func_f, new_counters

mp.mp.dps = 50


def mp_f(x):
    x = mp.mpf(x)
    return mp.mpf(2) if x == 0 else x / mp.tanh(x / 2)


def mp_dd1(g, x, y):
    x, y = mp.mpf(x), mp.mpf(y)
    if x == y:
        return mp.diff(g, x)
    return (g(x) - g(y)) / (x - y)


def mp_dd2(g, x, y, z):
    # recursive definition at 50 digits, confluent nodes through derivatives
    a, b, c = sorted(mp.mpf(v) for v in (x, y, z))
    if a == c:
        return mp.diff(g, a, 2) / 2
    return (mp_dd1(g, b, c) - mp_dd1(g, a, b)) / (c - a)


def test_func_f_values():
    assert func_f(0.0) == 2.0
    assert abs(func_f(1.0) - float(1 / mp.tanh(mp.mpf(0.5)))) <= 1e-14
    for x in [1e-6, 1e-4, 3e-4, 0.1, 5.0, -7.0, 40.0]:
        assert abs(func_f(x) - float(mp_f(x))) <= 1e-14 * float(mp_f(x))


@pytest.mark.parametrize("x,y", [(0.3, 0.3 + 1e-9), (0.3, 0.305), (-1.0, 2.0), (4.0, 4.0), (0.0, 1e-3), (-0.02, 0.05)])
def test_dd1_f_against_mpmath(x, y):
    c = new_counters()
    v = pf.dd1(pf.KIND_F, 0, x, y, 1e-2, 1e-1, c)
    ref = float(mp_dd1(mp_f, x, y))
    assert abs(v - ref) <= 1e-12 * max(1.0, abs(ref))


@pytest.mark.parametrize("x,y", [(0.3, 0.3 + 1e-9), (0.3, 0.305), (-1.0, 2.0), (4.0, 4.0)])
def test_exp_dd1_against_mpmath(x, y):
    c = new_counters()
    v = pf.exp_dd1(x, y, 1e-2, c)
    ref = float(mp_dd1(lambda z: mp.exp(-z), x, y))
    assert abs(v - ref) <= 1e-13 * abs(ref)


@pytest.mark.parametrize("x,y,z", [(0.1, 0.2, 0.7), (0.5, 0.5, 0.5), (0.5, 0.5002, 0.5005), (-2.0, 0.0, 3.0)])
def test_dd2_exp_against_mpmath(x, y, z):
    c = new_counters()
    v = pf.dd2(pf.KIND_EXP, x, y, z, 1e-3, 1e-3, c)
    ref = float(mp_dd2(lambda t: mp.exp(-t), x, y, z))
    assert abs(v - ref) <= 1e-10 * abs(ref)


@pytest.mark.parametrize("x,y,z", [(0.1, 0.2, 0.7), (0.0, 0.0, 0.0), (0.5, 0.5002, 0.5005), (-2.0, 0.0, 3.0),
                                   (1e-5, -2e-5, 0.0)])
def test_f_dd2_against_mpmath(x, y, z):
    c = new_counters()
    v = pf.f_dd2(x, y, z, 1e-2, 1e-1, c)
    ref = float(mp_dd2(mp_f, x, y, z))
    assert abs(v - ref) <= 1e-9 * max(1.0, abs(ref))


@pytest.mark.parametrize("li,lj,lk,ll", [(0.1, 0.9, -0.3, 0.4), (0.2, 0.2, 0.5, 0.5), (0.2, 0.2001, 0.5, 1.5),
                                         (0.0, 1.0, 0.3, 0.3 + 1e-7)])
def test_f_mixed_against_mpmath(li, lj, lk, ll):
    c = new_counters()
    v = pf.f_mixed(li, lj, lk, ll, 1e-2, 1e-1, c)

    def inner(zp):
        return mp_dd1(lambda z: mp_f(z - zp), li, lj)

    ref = float(mp_dd1(inner, lk, ll))
    assert abs(v - ref) <= 1e-8 * max(1.0, abs(ref))


def test_counters_record_guard_use():
    c = new_counters()
    pf.dd1(pf.KIND_F, 0, 0.3, 0.3001, 1e-2, 1e-1, c)
    assert c[pf.CNT_DD1] > 0
    c = new_counters()
    pf.dd1(pf.KIND_F, 0, 0.3, 0.9, 1e-2, 1e-1, c)
    assert c[pf.CNT_DD1] == 0
