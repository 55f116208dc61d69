"""Ambient velocity fields sampled at quadrature points.

Every field returns the advective velocity and the absolute velocity
gradient ``gradU[i, j] = du_i/dx_j``.  Inside a rotating (MRF) zone the
advective velocity is taken relative to the rotating frame, while the strain
rate and vorticity keep their absolute values.  With that convention a rigid
rotation is exactly steady for the morphology equation.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .mesh import Mesh, MeshParseError, load_field, save_field
from .morphology import KinematicsSample

KINDS = ("quiescent", "simple_shear", "rigid_rotation", "mrf_stirrer", "file")
FRAMES = ("inertial", "rotating")

STIRRER_OMEGA = 50.0 * np.pi


class FlowCoverageError(ValueError):
    pass


@dataclass(frozen=True)
class FlowSpec:
    kind: str = "quiescent"
    shear_rate: float = 0.0
    omega: float = STIRRER_OMEGA
    center: tuple = (0.0, 0.0)
    r_interface: float = 0.375
    r_outer: float = 0.5
    path: str | None = None
    frame: str = "inertial"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown flow kind {self.kind!r}")
        if self.frame not in FRAMES:
            raise ValueError(f"unknown frame {self.frame!r}")
        if not (np.isfinite(self.shear_rate) and np.isfinite(self.omega)):
            raise ValueError("shear rate and angular velocity must be finite")
        if self.kind == "mrf_stirrer" and not (0.0 < self.r_interface < self.r_outer):
            raise ValueError("mrf_stirrer needs 0 < r_interface < r_outer")
        if self.kind == "file" and not self.path:
            raise ValueError("file flow needs a path")

    def with_omega(self, omega: float) -> "FlowSpec":
        return replace(self, omega=float(omega))


def _swirl(x, center, omega, r_i, r_o):
    """Rigid core blended to rest by a C1 cubic Hermite profile; returns (u, gradU)."""
    n, d = x.shape
    xr = x[:, 0] - center[0]
    yr = x[:, 1] - center[1]
    r = np.hypot(xr, yr)
    a = np.zeros(n)  # u_theta / r
    da = np.zeros(n)  # d(a)/dr
    core = r <= r_i
    a[core] = omega
    band = (r > r_i) & (r < r_o)
    if np.any(band):
        L = r_o - r_i
        m0 = L / r_i
        s = (r[band] - r_i) / L
        phi = 2 * s**3 - 3 * s**2 + 1 + m0 * (s**3 - 2 * s**2 + s)
        dphi = (6 * s**2 - 6 * s + m0 * (3 * s**2 - 4 * s + 1)) / L
        ut = omega * r_i * phi
        dut = omega * r_i * dphi
        rb = r[band]
        a[band] = ut / rb
        da[band] = (dut - ut / rb) / rb
    u = np.zeros((n, d))
    u[:, 0] = -a * yr
    u[:, 1] = a * xr
    g = np.zeros((n, d, d))
    with np.errstate(invalid="ignore", divide="ignore"):
        q = np.where(r > 0, da / np.where(r > 0, r, 1.0), 0.0)
    g[:, 0, 0] = -q * yr * xr
    g[:, 0, 1] = -a - q * yr * yr
    g[:, 1, 0] = a + q * xr * xr
    g[:, 1, 1] = -g[:, 0, 0]
    return u, g


def _frame_velocity(x, center, omega):
    v = np.zeros_like(x)
    v[:, 0] = -omega * (x[:, 1] - center[1])
    v[:, 1] = omega * (x[:, 0] - center[0])
    return v


@dataclass
class FlowField:
    """A sampled ambient flow; file-backed fields also hold nodal data and a mesh."""

    spec: FlowSpec
    mesh: Mesh | None = None
    nodal_u: np.ndarray | None = None
    elem_grad: np.ndarray | None = field(default=None, repr=False)

    def evaluate(self, x, mrf=None, elem=None, bary=None):
        """Velocity (n, d) and gradient (n, d, d) at points x (n, d)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        n, d = x.shape
        s = self.spec
        mrf = np.zeros(n, dtype=bool) if mrf is None else np.broadcast_to(np.asarray(mrf, dtype=bool), (n,))
        if s.kind == "quiescent":
            return np.zeros((n, d)), np.zeros((n, d, d))
        if s.kind == "simple_shear":
            u = np.zeros((n, d))
            u[:, 0] = s.shear_rate * x[:, 1]
            g = np.zeros((n, d, d))
            g[:, 0, 1] = s.shear_rate
            return u, g
        if s.kind == "rigid_rotation":
            u = _frame_velocity(x, s.center, s.omega)
            g = np.zeros((n, d, d))
            g[:, 0, 1] = -s.omega
            g[:, 1, 0] = s.omega
            if s.frame == "rotating":
                u = np.zeros((n, d))
            else:
                u[mrf] = 0.0
            return u, g
        if s.kind == "mrf_stirrer":
            u, g = _swirl(x, s.center, s.omega, s.r_interface, s.r_outer)
            rel = np.ones(n, dtype=bool) if s.frame == "rotating" else mrf
            u[rel] -= _frame_velocity(x[rel], s.center, s.omega)
            return u, g
        return self._evaluate_file(x, mrf, elem, bary)

    def _evaluate_file(self, x, mrf, elem, bary):
        m = self.mesh
        n, d = x.shape
        if elem is None:
            elem = np.empty(n, dtype=np.int64)
            bary = np.empty((n, d + 1))
            for k in range(n):
                try:
                    elem[k], bary[k] = m.locate(x[k])
                except ValueError:
                    raise FlowCoverageError(f"point {x[k].tolist()} is outside the flow data") from None
        elem = np.asarray(elem, dtype=np.int64)
        bary = np.asarray(bary, dtype=float)
        u = np.einsum("na,nad->nd", bary, self.nodal_u[m.elements[elem]])
        g = self.elem_grad[elem].copy()
        s = self.spec
        if s.omega != 0.0 and np.any(mrf):
            u[mrf] -= _frame_velocity(x[mrf], s.center, s.omega)
        return u, g

    def sample(self, x, mrf_flag: bool = False) -> KinematicsSample:
        u, g = self.evaluate(np.asarray(x, dtype=float)[None, :], np.array([mrf_flag]))
        return KinematicsSample(u[0], g[0])

    def max_trace_E(self) -> float:
        """Largest |tr(E)| over the data; zero for the analytic fields."""
        if self.elem_grad is None:
            return 0.0
        return float(np.abs(np.trace(self.elem_grad, axis1=1, axis2=2)).max())


def sample(spec: FlowSpec, x, mrf_flag: bool = False) -> KinematicsSample:
    if spec.kind == "file":
        raise ValueError("file flows must be ingested against a mesh first")
    return FlowField(spec).sample(x, mrf_flag)


def element_gradients(mesh: Mesh, nodal_u: np.ndarray) -> np.ndarray:
    grads = mesh.geometry()["grads"]  # (ne, d+1, d)
    return np.einsum("ead,eak->edk", nodal_u[mesh.elements], grads)


def ingest_flow(path, mesh: Mesh, spec: FlowSpec | None = None) -> FlowField:
    names, coords, values = load_field(path)
    d = mesh.dim
    if values.shape[0] != mesh.n_nodes:
        raise MeshParseError(path, 1, f"flow has {values.shape[0]} nodes, mesh has {mesh.n_nodes}")
    if values.shape[1] != d:
        raise MeshParseError(path, 1, f"flow needs {d} velocity columns, found {values.shape[1]}")
    spec = spec or FlowSpec(kind="file", path=str(path), omega=0.0)
    nodal_u = np.ascontiguousarray(values)
    return FlowField(spec, mesh, nodal_u, element_gradients(mesh, nodal_u))


def save_flow(path, mesh: Mesh, nodal_u) -> None:
    save_field(path, mesh, nodal_u, ["ux", "uy", "uz"][: mesh.dim])


def build_flow(spec: FlowSpec, mesh: Mesh | None = None) -> FlowField:
    if spec.kind == "file":
        if mesh is None:
            raise ValueError("file flows need a mesh")
        return ingest_flow(spec.path, mesh, spec)
    return FlowField(spec)
