import numpy as np
import pytest
from hypothesis import settings
from scipy.linalg import expm
from scipy.stats import ortho_group

from logmorph.tensors import SymTensor

# first calls compile numba kernels, so wall-clock deadlines are meaningless
settings.register_profile("logmorph", deadline=None, max_examples=50)
settings.load_profile("logmorph")


def random_sym(rng, d, scale=1.0):
    A = rng.normal(size=(d, d)) * scale
    return 0.5 * (A + A.T)


def sym_with_eigs(rng, lam):
    d = len(lam)
    Q = ortho_group.rvs(d, random_state=rng)
    return (Q * np.asarray(lam)) @ Q.T


def oracle_exp_neg(P):
    return expm(-P)


def oracle_big_f(P, E):
    """F(P, E) through LAPACK eigh and the closed-form scalar kernel."""
    lam, Q = np.linalg.eigh(P)
    Eh = Q.T @ E @ Q
    x = lam[:, None] - lam[None, :]
    with np.errstate(invalid="ignore", divide="ignore"):
        fx = np.where(np.abs(x) < 1e-8, 2.0 + x * x / 6.0, x / np.tanh(0.5 * x))
    return Q @ (fx * Eh) @ Q.T


def oracle_normalized_exp(P):
    X = expm(-P)
    return X / np.trace(X)


def central(fun, h):
    return (fun(h) - fun(-h)) / (2.0 * h)


def mixed(fun, h1, h2):
    return (fun(h1, h2) - fun(h1, -h2) - fun(-h1, h2) + fun(-h1, -h2)) / (4.0 * h1 * h2)


def rel(a, b, scale=None):
    den = np.linalg.norm(b) if scale is None else max(np.linalg.norm(b), scale)
    return np.linalg.norm(a - b) / max(den, 1e-300)


def sym(M):
    return SymTensor.from_matrix(M)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
