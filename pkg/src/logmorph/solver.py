"""Newton-Raphson with BDF time stepping, ramps and run metrics.

A *problem* exposes ``evaluate(x, hist, a0, dt, want_matrix) -> (r, J)`` for
the BDF residual ``(a0 x + hist)/dt + f(x)`` and optionally
``solve_linear(J, rhs, cfg, atol) -> (dx, info)``; dense Jacobians without
that hook are solved directly.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .morphology import KinematicsSample, ModelParams, pt_L_hat
from .spectral import DEFAULT_GUARDS, jacobi_eig, new_counters, pf_K, pf_L2, rot_in, rot_out
from .morphology import pt_source_hat
from .stabilization import morph_dsource, morph_source
from .tensors import ncomp, pack_sym, unit_sym, unpack_sym

log = logging.getLogger("logmorph.solver")

BDF_COEFFS = {1: (1.0, (-1.0,)), 2: (1.5, (-2.0, 0.5))}
OMEGA_FULL = 50.0 * np.pi


class NonFiniteResidualError(FloatingPointError):
    def __init__(self, bad_dofs, step, iteration):
        self.bad_dofs = np.asarray(bad_dofs)
        super().__init__(f"non-finite residual at step {step}, Newton iteration {iteration}, "
                         f"dofs {self.bad_dofs[:10].tolist()}")


class DivergedError(RuntimeError):
    pass


@dataclass(frozen=True)
class SolverConfig:
    krylov_dim: int = 10
    ilut_fill: int = 20
    ilut_threshold: float = 1e-4
    nr_max: int = 12
    nr_tol: float = 1e-10
    dt: float = 0.01
    t_end: float = 1.0
    bdf_order: int = 2
    linear_rtol: float = 1e-3
    gmres_max_iter: int = 2000
    line_search_trials: int = 5
    strict: bool = False

    def __post_init__(self):
        if self.krylov_dim < 1:
            raise ValueError("krylov_dim must be at least 1")
        if not self.nr_tol > 0 or not self.dt > 0:
            raise ValueError("nr_tol and dt must be positive")
        if self.bdf_order not in (1, 2):
            raise ValueError("bdf_order must be 1 or 2")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_end / self.dt))


@dataclass
class NewtonStats:
    iterations: int = 0
    gmres_iterations: int = 0
    residuals: list = field(default_factory=list)
    converged: bool = False
    damped: int = 0
    pivot_shifts: int = 0


@dataclass
class RunMetrics:
    n_gmres_total: int = 0
    n_nr_total: int = 0
    eps_det: float = 0.0
    max_det_dev: float = 0.0
    converged: list = field(default_factory=list)

    def as_table_row(self) -> dict:
        """Ordered like the Table-1 columns: n_GMRES, n_NR, eps_det, max|det - 1|."""
        return {
            "n_gmres": int(self.n_gmres_total),
            "n_nr": int(self.n_nr_total),
            "eps_det": float(self.eps_det),
            "max_det_dev": float(self.max_det_dev),
        }

    def to_dict(self) -> dict:
        d = self.as_table_row()
        d["all_converged"] = bool(all(self.converged))
        d["unconverged_steps"] = [i for i, c in enumerate(self.converged) if not c]
        return d


def ramp_omega(frac: float, omega_full: float = OMEGA_FULL) -> float:
    """Smoothstep ramp omega_full (3 i^2 - 2 i^3), with i clipped to [0, 1]."""
    i = min(max(float(frac), 0.0), 1.0)
    return omega_full * (3.0 * i * i - 2.0 * i ** 3)


def det_values(values: np.ndarray, log_form: bool) -> np.ndarray:
    values = np.atleast_2d(values)
    d = 2 if values.shape[1] == 3 else 3
    if log_form:
        diag = [0, 2] if d == 2 else [0, 3, 5]
        return np.exp(values[:, diag].sum(axis=1))
    mats = np.array([unpack_sym(v, d) for v in values])
    return np.linalg.det(mats)


def compute_metrics(values, log_form: bool = True) -> tuple[float, float]:
    """(eps_det, max|det - 1|) over nodal tensors; det = exp(tr Psi) for log fields."""
    dev = det_values(np.asarray(values, dtype=float), log_form) - 1.0
    return float(np.sqrt(np.sum(dev * dev))), float(np.abs(dev).max()) if dev.size else 0.0


def bdf_history(history, order):
    """Return (a0, hist) given the most-recent-first list of previous states."""
    order = min(order, len(history))
    a0, coeffs = BDF_COEFFS[order]
    hist = sum(c * h for c, h in zip(coeffs, history))
    return a0, hist


def _linear_solve(problem, J, rhs, cfg, atol):
    if hasattr(problem, "solve_linear"):
        return problem.solve_linear(J, rhs, cfg, atol)
    dx = np.linalg.solve(J, rhs)

    class _Info:
        iterations = 0
        converged = True
        shifts = 0

    return dx, _Info()


def newton_step(problem, x0, hist, a0, dt, cfg: SolverConfig, step: int = 0):
    """Solve one implicit step by damped Newton.  Returns ``(x, NewtonStats)``."""
    x = np.array(x0, dtype=float)
    st = NewtonStats()
    r, J = problem.evaluate(x, hist, a0, dt, True)
    rn = _checked_norm(r, step, 0)
    st.residuals.append(rn)
    atol = 0.1 * cfg.nr_tol
    for it in range(cfg.nr_max + 1):
        if rn <= cfg.nr_tol:
            st.converged = True
            break
        if it == cfg.nr_max:
            break
        dx, info = _linear_solve(problem, J, -r, cfg, atol)
        st.gmres_iterations += int(info.iterations)
        st.pivot_shifts += int(getattr(info, "shifts", 0))
        st.iterations += 1
        lam = 1.0
        accepted = False
        best = None
        for trial in range(cfg.line_search_trials):
            xt = x + lam * dx
            rt, Jt = problem.evaluate(xt, hist, a0, dt, False)
            rtn = np.linalg.norm(rt)
            if np.isfinite(rtn) and (best is None or rtn < best[0]):
                best = (rtn, xt, rt, Jt, lam)
            if np.isfinite(rtn) and rtn < rn:
                accepted = True
                break
            lam *= 0.5
        if best is None:
            _checked_norm(rt, step, it + 1)
        if not accepted:
            log.info("NR step=%d iter=%d stagnated res=%.6e", step, it + 1, rn)
            break
        rtn, x, r, J, lam = best
        if rtn > cfg.nr_tol and it + 1 < cfg.nr_max:
            # matrix only when another iteration will use it; residual is unchanged
            r, J = problem.evaluate(x, hist, a0, dt, True)
        if lam < 1.0:
            st.damped += 1
        rn = rtn
        st.residuals.append(rn)
        log.info("NR step=%d iter=%d res=%.6e gmres=%d", step, it + 1, rn, info.iterations)
    return x, st


def _checked_norm(r, step, it):
    rn = np.linalg.norm(r)
    if not np.isfinite(rn):
        raise NonFiniteResidualError(np.flatnonzero(~np.isfinite(r)), step, it)
    return rn


def advance_bdf(problem, history, cfg: SolverConfig, step: int = 0):
    """One BDF step (BDF1 until two previous states exist).  ``history`` is most recent first."""
    a0, hist = bdf_history(history, cfg.bdf_order)
    x, st = newton_step(problem, history[0], hist, a0, cfg.dt, cfg, step)
    if not st.converged and cfg.strict:
        raise DivergedError(f"Newton did not converge at step {step}")
    return x, st


def integrate(problem, x0, cfg: SolverConfig, callback=None, metrics_log_form=None):
    """Run ``cfg.n_steps`` BDF steps from x0.  Returns ``(x_final, RunMetrics, trajectory)``."""
    x = np.array(x0, dtype=float)
    history = [x]
    metrics = RunMetrics()
    traj = [x.copy()]
    for n in range(cfg.n_steps):
        if hasattr(problem, "begin_step"):
            problem.begin_step(n)
        x, st = advance_bdf(problem, history, cfg, n)
        metrics.n_gmres_total += st.gmres_iterations
        metrics.n_nr_total += st.iterations
        metrics.converged.append(st.converged)
        history = [x] + history[:1]
        traj.append(x.copy())
        if callback is not None:
            callback(n, x, st)
    if metrics_log_form is not None:
        nc = ncomp(getattr(problem, "dim", 3))
        metrics.eps_det, metrics.max_det_dev = compute_metrics(x.reshape(-1, nc), metrics_log_form)
    return x, metrics, traj


# --------------------------------------------------------------------------
# 0D point problems


class PointLogMorph:
    """The log-morph equation at a single material point with fixed kinematics."""

    def __init__(self, kin: KinematicsSample, params: ModelParams, guards=None):
        self.kin = kin
        self.p = params
        self.dim = params.dim
        self.g = DEFAULT_GUARDS if guards is None else guards
        self.counts = new_counters()

    def source(self, x):
        d = self.dim
        lam, Q, _ = jacobi_eig(unpack_sym(x, d))
        Eh = rot_in(Q, self.kin.E_matrix())
        Wh = rot_in(Q, self.kin.W_matrix())
        return pack_sym(rot_out(Q, pt_source_hat(lam, Eh, Wh, self.p.alpha1, self.p.alpha2, self.p.alpha3)))

    def evaluate(self, x, hist, a0, dt, want_matrix):
        d = self.dim
        p = self.p
        lam, Q, _ = jacobi_eig(unpack_sym(np.ascontiguousarray(x), d))
        Eh = rot_in(Q, self.kin.E_matrix())
        Wh = rot_in(Q, self.kin.W_matrix())
        src = pack_sym(rot_out(Q, pt_source_hat(lam, Eh, Wh, p.alpha1, p.alpha2, p.alpha3)))
        r = (a0 * x + hist) / dt + src
        if not want_matrix:
            return r, None
        tK = pf_K(lam, self.g.dd_small, self.counts)
        tL2 = pf_L2(lam, self.g.dd_small, self.g.arg_small, self.counts)
        n = ncomp(d)
        J = np.eye(n) * (a0 / dt)
        for e in range(n):
            Bh = rot_in(Q, unit_sym(e, d))
            J[:, e] += pack_sym(rot_out(Q, pt_L_hat(lam, tK, tL2, Eh, Wh, Bh, p.alpha1, p.alpha2, p.alpha3)))
        return r, J


class PointMorph:
    """The untransformed morphology equation at a single point."""

    def __init__(self, kin: KinematicsSample, params: ModelParams):
        self.kin = kin
        self.p = params
        self.dim = params.dim

    def evaluate(self, x, hist, a0, dt, want_matrix):
        d = self.dim
        p = self.p
        S = unpack_sym(np.ascontiguousarray(x), d)
        E = self.kin.E_matrix()
        W = self.kin.W_matrix()
        r = (a0 * x + hist) / dt + pack_sym(morph_source(S, E, W, p.alpha1, p.alpha2, p.alpha3))
        if not want_matrix:
            return r, None
        n = ncomp(d)
        J = np.eye(n) * (a0 / dt)
        for e in range(n):
            J[:, e] += pack_sym(morph_dsource(S, E, W, unit_sym(e, d), p.alpha1, p.alpha2, p.alpha3))
        return r, J


class FEProblem:
    """Adapter exposing an :class:`~logmorph.assembly.FESystem` to the Newton driver."""

    def __init__(self, system, flow_schedule=None):
        self.system = system
        self.dim = system.d
        self.flow_schedule = flow_schedule
        self.last = None

    def begin_step(self, n):
        if self.flow_schedule is not None:
            flow = self.flow_schedule(n)
            if flow is not None:
                self.system.set_flow(flow)

    def evaluate(self, x, hist, a0, dt, want_matrix):
        out = self.system.assemble(x, hist, a0, dt, want_matrix)
        self.last = out
        return out.residual, out.matrix

    def solve_linear(self, J, rhs, cfg, atol):
        return self.system.solve_linear(J, rhs, cfg, atol)
