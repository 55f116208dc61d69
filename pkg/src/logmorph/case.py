"""Configuration-driven case runner.

A case is a YAML file with the sections ``mesh``, ``flow``, ``model``,
``stabilization``, ``solver``, ``guards``, ``initial``, ``boundary`` and
``outputs``.  Every key has a default; an empty file runs the 2D
mini-stirrer with the VMS scheme for 1 s at dt = 0.01 s.
"""
from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import yaml

from .assembly import FESystem
from .flow import FlowSpec, build_flow
from .mesh import TAG_WALL, Mesh, MeshError, find_boundary_facets, load_mesh, mini_stirrer, save_field, save_mesh
from .mesh import structured_square
from .morphology import ModelParams, sigma_eff
from .solver import (
    DivergedError,
    FEProblem,
    NonFiniteResidualError,
    RunMetrics,
    SolverConfig,
    advance_bdf,
    compute_metrics,
    ramp_omega,
)
from .spectral import GuardThresholds, jacobi_eig
from .stabilization import StabConfig
from .tensors import SYM_INDEX, ncomp, pack_sym, unpack_sym

log = logging.getLogger("logmorph.case")

METRIC_KEYS = ("n_gmres", "n_nr", "eps_det", "max_det_dev")


class ConfigError(ValueError):
    pass


@dataclass
class MeshSource:
    generator: str = "mini_stirrer"  # mini_stirrer | square | two_triangles
    path: str | None = None
    n: int = 44
    beam_half_cells: tuple = (2, 12)
    r_interface: float = 0.375
    size: float = 1.0


@dataclass
class FlowOptions:
    ramp_steps: int = 0


@dataclass
class Outputs:
    dump_every: int = 0
    line_p0: tuple | None = None  # None: lower-left corner of the bounding box
    line_p1: tuple | None = None  # None: left beam wall midpoint, else the opposite corner
    line_n: int = 100
    metrics: str = "metrics.json"


@dataclass
class Initial:
    psi: tuple | None = None  # packed constant tensor; zero (S = I) by default


@dataclass
class Boundary:
    inflow_dirichlet: bool = True


@dataclass
class CaseConfig:
    mesh: MeshSource = field(default_factory=MeshSource)
    flow: FlowSpec = field(default_factory=lambda: FlowSpec(kind="mrf_stirrer"))
    flow_options: FlowOptions = field(default_factory=FlowOptions)
    model: ModelParams = field(default_factory=lambda: ModelParams(dim=2))
    stabilization: StabConfig = field(default_factory=StabConfig)
    restart_alpha_dc: float | None = None
    solver: SolverConfig = field(default_factory=SolverConfig)
    guards: GuardThresholds = field(default_factory=GuardThresholds)
    initial: Initial = field(default_factory=Initial)
    boundary: Boundary = field(default_factory=Boundary)
    outputs: Outputs = field(default_factory=Outputs)
    base_dir: str = "."

    def fingerprint(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]

    def to_dict(self) -> dict:
        d = {}
        for f in fields(self):
            if f.name == "base_dir":
                continue
            v = getattr(self, f.name)
            d[f.name] = asdict(v) if hasattr(v, "__dataclass_fields__") else v
        return json.loads(json.dumps(d, default=list))


def _section(cls, raw, name, **extra):
    raw = dict(raw or {})
    raw.update(extra)
    known = {f.name for f in fields(cls)}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown keys in '{name}': {sorted(unknown)}")
    for k, v in list(raw.items()):
        if isinstance(v, list):
            raw[k] = tuple(v)
    try:
        return cls(**raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid '{name}' section: {exc}") from None


def parse_config(raw: dict | None, base_dir=".") -> CaseConfig:
    raw = dict(raw or {})
    allowed = {"mesh", "flow", "model", "stabilization", "solver", "guards", "initial", "boundary", "outputs",
               "restart_alpha_dc"}
    unknown = set(raw) - allowed
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
    mesh = _section(MeshSource, raw.get("mesh"), "mesh")
    flow_raw = dict(raw.get("flow") or {"kind": "mrf_stirrer"})
    ramp = flow_raw.pop("ramp_steps", 0)
    flow = _section(FlowSpec, flow_raw, "flow")
    if flow.kind == "file":
        p = Path(flow.path)
        if not p.is_absolute():
            flow = FlowSpec(**{**asdict(flow), "path": str(Path(base_dir) / p)})
        if not Path(flow.path).exists():
            raise ConfigError(f"flow file {flow.path} does not exist")
    if mesh.path is not None:
        p = Path(mesh.path)
        if not p.is_absolute():
            mesh.path = str(Path(base_dir) / p)
        if not Path(mesh.path).exists():
            raise ConfigError(f"mesh file {mesh.path} does not exist")
    model_raw = dict(raw.get("model") or {})
    model_raw.setdefault("dim", 2)
    cfg = CaseConfig(
        mesh=mesh,
        flow=flow,
        flow_options=FlowOptions(ramp_steps=int(ramp)),
        model=_section(ModelParams, model_raw, "model"),
        stabilization=_section(StabConfig, raw.get("stabilization"), "stabilization"),
        restart_alpha_dc=raw.get("restart_alpha_dc"),
        solver=_section(SolverConfig, raw.get("solver"), "solver"),
        guards=_section(GuardThresholds, raw.get("guards"), "guards"),
        initial=_section(Initial, raw.get("initial"), "initial"),
        boundary=_section(Boundary, raw.get("boundary"), "boundary"),
        outputs=_section(Outputs, raw.get("outputs"), "outputs"),
        base_dir=str(base_dir),
    )
    n = cfg.solver.n_steps
    if abs(n * cfg.solver.dt - cfg.solver.t_end) > 1e-9 * max(1.0, cfg.solver.t_end):
        raise ConfigError("t_end must be a whole number of time steps")
    de = cfg.outputs.dump_every
    if de < 0 or (de > 0 and n % de):
        raise ConfigError(f"dump_every={de} does not divide the {n} time steps")
    if cfg.initial.psi is not None and len(cfg.initial.psi) != ncomp(cfg.model.dim):
        raise ConfigError("initial.psi needs one value per packed tensor component")
    return cfg


def load_config(path) -> CaseConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    try:
        raw = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None
    if raw is not None and not isinstance(raw, dict):
        raise ConfigError("config file must hold a mapping")
    return parse_config(raw, path.parent)


# --------------------------------------------------------------------------
# building blocks


def build_mesh(src: MeshSource) -> Mesh:
    if src.path is not None:
        return load_mesh(src.path)
    if src.generator == "mini_stirrer":
        return mini_stirrer(src.n, tuple(src.beam_half_cells), src.r_interface)
    if src.generator == "square":
        nodes, elems = structured_square(src.n, 0.0, src.size)
        facets = find_boundary_facets(elems)
        return Mesh(nodes, elems, facets, np.full(len(facets), TAG_WALL))
    if src.generator == "two_triangles":
        nodes = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]) * src.size
        elems = np.array([[0, 1, 2], [0, 2, 3]])
        facets = find_boundary_facets(elems)
        return Mesh(nodes, elems, facets, np.full(len(facets), TAG_WALL))
    raise ConfigError(f"unknown mesh generator {src.generator!r}")


def inflow_nodes(mesh: Mesh, flow) -> np.ndarray:
    """Nodes of boundary facets whose advective velocity points into the domain."""
    d = mesh.dim
    if mesh.boundary_facets.shape[0] == 0:
        return np.zeros(0, dtype=np.int64)
    owner = {}
    for e, el in enumerate(mesh.elements):
        for k in range(d + 1):
            owner[tuple(sorted(np.delete(el, k)))] = e
    out = []
    for f in mesh.boundary_facets:
        e = owner.get(tuple(sorted(f)))
        if e is None:
            continue
        xf = mesh.nodes[f]
        mid = xf.mean(axis=0)
        if d == 2:
            t = xf[1] - xf[0]
            nrm = np.array([t[1], -t[0]])
        else:
            nrm = np.cross(xf[1] - xf[0], xf[2] - xf[0])
        if np.dot(nrm, mid - mesh.nodes[mesh.elements[e]].mean(axis=0)) < 0:
            nrm = -nrm
        nrm /= np.linalg.norm(nrm)
        mrf = False if mesh.mrf_region is None else bool(mesh.mrf_region[e])
        u, _ = flow.evaluate(mid[None, :], np.array([mrf]))
        scale = max(np.linalg.norm(u), 1e-300)
        if np.dot(u[0], nrm) < -1e-12 * scale:
            out.extend(f.tolist())
    return np.unique(np.array(out, dtype=np.int64))


def nodal_sigma_f(mesh: Mesh, flow, mu: float) -> np.ndarray:
    """Scalar shear stress 2 mu sqrt(-II(E)) from the absolute velocity gradient at nodes."""
    if flow.elem_grad is not None:
        vol = mesh.geometry()["volume"]
        acc = np.zeros((mesh.n_nodes, mesh.dim, mesh.dim))
        wsum = np.zeros(mesh.n_nodes)
        for k in range(mesh.dim + 1):
            np.add.at(acc, mesh.elements[:, k], flow.elem_grad * vol[:, None, None])
            np.add.at(wsum, mesh.elements[:, k], vol)
        g = acc / wsum[:, None, None]
    else:
        _, g = flow.evaluate(mesh.nodes, np.zeros(mesh.n_nodes, dtype=bool))
    E = 0.5 * (g + np.transpose(g, (0, 2, 1)))
    tr = np.trace(E, axis1=1, axis2=2)
    minus_II = 0.5 * (np.einsum("nij,nij->n", E, E) - tr * tr)
    return 2.0 * mu * np.sqrt(np.maximum(minus_II, 0.0))


def shape_indicators(values: np.ndarray, log_form: bool, p: ModelParams):
    """Per-node det(S), distortion D and sigma_eff (NaN where S is not positive definite)."""
    d = p.dim
    n = values.shape[0]
    det = np.empty(n)
    D = np.empty(n)
    seff = np.empty(n)
    for i in range(n):
        lam, _, _ = jacobi_eig(unpack_sym(values[i], d))
        if log_form:
            det[i] = np.exp(lam.sum())
            D[i] = np.tanh(0.25 * (lam[-1] - lam[0]))
        else:
            det[i] = np.prod(lam)
            D[i] = (np.sqrt(lam[-1]) - np.sqrt(lam[0])) / (np.sqrt(lam[-1]) + np.sqrt(lam[0])) if lam[0] > 0 else np.nan
        seff[i] = sigma_eff(D[i], p) if np.isfinite(D[i]) and D[i] < 1.0 else np.nan
    return det, D, seff


def line_sample(mesh: Mesh, values, p0, p1, n: int):
    """Linear interpolation of nodal values at n+1 equally spaced points; returns (s, samples)."""
    values = np.asarray(values, dtype=float).reshape(mesh.n_nodes, -1)
    p0 = np.asarray(p0, dtype=float)
    p1 = np.asarray(p1, dtype=float)
    t = np.linspace(0.0, 1.0, n + 1)
    pts = p0[None, :] + t[:, None] * (p1 - p0)[None, :]
    out = np.empty((n + 1, values.shape[1]))
    for k, x in enumerate(pts):
        e, bary = mesh.locate(x, tol=1e-10)
        out[k] = bary @ values[mesh.elements[e]]
    return t * np.linalg.norm(p1 - p0), out


def write_line_csv(path, s, samples, names):
    import csv

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["s", *names])
        for k in range(s.size):
            w.writerow([repr(float(s[k])), *(repr(float(v)) for v in samples[k])])


def mesh_fingerprint(mesh: Mesh) -> str:
    h = hashlib.sha256()
    h.update(mesh.nodes.tobytes())
    h.update(mesh.elements.tobytes())
    return h.hexdigest()[:16]


def default_line_end(mesh: Mesh) -> tuple:
    """Midpoint of the left beam wall when the mesh has one, else the upper corner."""
    beam = mesh.boundary_nodes(2)
    if beam.size:
        xb = mesh.nodes[beam]
        return (float(xb[:, 0].min()), 0.0)
    return tuple(float(v) for v in mesh.nodes.max(axis=0))


def line_endpoints(mesh: Mesh, outputs: Outputs):
    """Sampling line of a run, or None when ``line_n`` is 0."""
    if outputs.line_n <= 0:
        return None
    p0 = outputs.line_p0 if outputs.line_p0 is not None else tuple(float(v) for v in mesh.nodes.min(axis=0))
    p1 = outputs.line_p1 if outputs.line_p1 is not None else default_line_end(mesh)
    return p0, p1


# --------------------------------------------------------------------------
# running


@dataclass
class CaseResult:
    metrics: RunMetrics
    values: np.ndarray
    mesh: Mesh
    diverged: bool
    out_dir: Path | None
    metrics_dict: dict


def field_names(scheme: str, d: int) -> list[str]:
    prefix = "s" if scheme == "gls_morph" else "psi"
    ax = "xyz"
    return [f"{prefix}_{ax[i]}{ax[j]}" for i, j in SYM_INDEX[d]]


def run_case(cfg: CaseConfig, out_dir=None, strict: bool | None = None) -> CaseResult:
    t_start = time.perf_counter()
    mesh = build_mesh(cfg.mesh)
    if mesh.dim != cfg.model.dim:
        raise ConfigError(f"mesh is {mesh.dim}D but the model is {cfg.model.dim}D")
    scfg = cfg.solver if strict is None else SolverConfig(**{**asdict(cfg.solver), "strict": bool(strict)})
    stab = cfg.stabilization
    log_form = stab.log_form
    flow = build_flow(cfg.flow, mesh)
    line = line_endpoints(mesh, cfg.outputs)
    if line is not None and out_dir is not None:
        try:  # fail before the time loop, not after it
            line_sample(mesh, np.zeros((mesh.n_nodes, 1)), *line, 2)
        except MeshError as exc:
            raise ConfigError(f"sampling line: {exc}") from None
    dnodes = inflow_nodes(mesh, flow) if cfg.boundary.inflow_dirichlet else None
    d = mesh.dim
    nc = ncomp(d)
    psi0 = np.zeros(nc) if cfg.initial.psi is None else np.asarray(cfg.initial.psi, dtype=float)
    if log_form:
        init = psi0
    else:
        lam, Q, _ = jacobi_eig(unpack_sym(psi0, d))
        init = pack_sym((Q * np.exp(lam)) @ Q.T)
    system = FESystem(mesh, flow, cfg.model, stab, cfg.guards, dnodes, init)
    ramp = cfg.flow_options.ramp_steps
    schedule = None
    if ramp > 0 and cfg.flow.kind in ("mrf_stirrer", "rigid_rotation"):
        def schedule(n):
            if n > ramp:
                return None
            return build_flow(cfg.flow.with_omega(ramp_omega((n + 1) / ramp, cfg.flow.omega)), mesh)
    problem = FEProblem(system, schedule)
    x = np.tile(init, mesh.n_nodes)
    history = [x]
    metrics = RunMetrics()
    diverged = False
    names = field_names(stab.scheme, d)
    out = None
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        save_mesh(out / "mesh.txt", mesh)
        sf = nodal_sigma_f(mesh, flow, cfg.model.mu)
        save_field(out / "sigma_f.csv", mesh, sf[:, None], ["sigma_f"])
    fh = None
    if out is not None:
        fh = logging.FileHandler(out / "solver.log", mode="w")
        fh.setFormatter(logging.Formatter("%(message)s"))
        logging.getLogger("logmorph").addHandler(fh)
        logging.getLogger("logmorph").setLevel(logging.INFO)
    try:
        for n in range(scfg.n_steps):
            problem.begin_step(n)
            try:
                xn, st = advance_bdf(problem, history, SolverConfig(**{**asdict(scfg), "strict": False}), n)
                if not st.converged and cfg.restart_alpha_dc is not None:
                    log.info("restart step=%d alpha_dc=%g", n, cfg.restart_alpha_dc)
                    saved = system.stab
                    system.stab = StabConfig(**{**asdict(saved), "alpha_dc": cfg.restart_alpha_dc})
                    try:
                        xr, st_r = advance_bdf(problem, history, SolverConfig(**{**asdict(scfg), "strict": False}), n)
                    finally:
                        system.stab = saved
                    st.iterations += st_r.iterations
                    st.gmres_iterations += st_r.gmres_iterations
                    st.converged = st_r.converged
                    xn = xr
            except NonFiniteResidualError as exc:
                log.error("step %d: %s", n, exc)
                diverged = True
                break
            metrics.n_gmres_total += st.gmres_iterations
            metrics.n_nr_total += st.iterations
            metrics.converged.append(st.converged)
            if not log_form:
                vals = xn.reshape(-1, nc)
                bad = [i for i in range(vals.shape[0]) if jacobi_eig(unpack_sym(vals[i], d))[0][0] <= 0.0]
                if bad:
                    log.error("step %d: shape tensor lost positive definiteness at nodes %s", n, bad[:10])
                    diverged = True
            history = [xn] + history[:1]
            if not st.converged and scfg.strict:
                diverged = True
            if diverged:
                break
            if out is not None and cfg.outputs.dump_every and (n + 1) % cfg.outputs.dump_every == 0:
                _dump(out / f"field_{n + 1:05d}.csv", mesh, xn.reshape(-1, nc), names, log_form, cfg.model)
    finally:
        if fh is not None:
            logging.getLogger("logmorph").removeHandler(fh)
            fh.close()
    values = history[0].reshape(-1, nc)
    metrics.eps_det, metrics.max_det_dev = compute_metrics(values, log_form)
    md = metrics.as_table_row()
    md.update({
        "scheme": stab.scheme,
        "steps": len(metrics.converged),
        "all_converged": bool(all(metrics.converged)) and len(metrics.converged) == scfg.n_steps,
        "unconverged_steps": [i for i, c in enumerate(metrics.converged) if not c],
        "diverged": diverged,
        "guard_counters": [int(c) for c in system.counts],
        "n_nodes": mesh.n_nodes,
        "mesh_fingerprint": mesh_fingerprint(mesh),
        "flow": cfg.flow.kind,
        "case_fingerprint": cfg.fingerprint(),
    })
    if out is not None:
        _dump(out / "field_final.csv", mesh, values, names, log_form, cfg.model)
        if line is not None:
            det, D, seff = shape_indicators(values, log_form, cfg.model)
            sf = nodal_sigma_f(mesh, flow, cfg.model.mu)
            s, smp = line_sample(mesh, np.column_stack([seff, sf, D]), *line, cfg.outputs.line_n)
            write_line_csv(out / "line_sample.csv", s, smp, ["sigma_eff", "sigma_f", "distortion"])
        (out / cfg.outputs.metrics).write_text(json.dumps(md, indent=2) + "\n")
    log.info("case finished in %.2f s", time.perf_counter() - t_start)
    return CaseResult(metrics, values, mesh, diverged, out, md)


def _dump(path, mesh, values, names, log_form, p):
    det, D, seff = shape_indicators(values, log_form, p)
    save_field(path, mesh, np.column_stack([values, det, D, seff]), [*names, "det", "distortion", "sigma_eff"])


# --------------------------------------------------------------------------
# comparisons


def compare_runs(metrics_a: dict, metrics_b: dict, field_a=None, field_b=None) -> dict:
    """Side-by-side metrics with ordering flags; rejects runs on different meshes."""
    fa, fb = metrics_a.get("mesh_fingerprint"), metrics_b.get("mesh_fingerprint")
    if fa is not None and fb is not None and fa != fb:
        raise ConfigError("runs were computed on different meshes")
    rows = []
    for k in METRIC_KEYS:
        a, b = metrics_a[k], metrics_b[k]
        rows.append({"metric": k, "a": a, "b": b, "delta": b - a})
    flags = {}
    ea, eb = metrics_a["eps_det"], metrics_b["eps_det"]
    tiny = 1e-300
    flags["eps_det_ratio_b_over_a"] = eb / max(ea, tiny)
    flags["eps_det_b_exceeds_a_by_1e3"] = eb > 1e3 * max(ea, tiny)
    flags["eps_det_a_exceeds_b_by_1e3"] = ea > 1e3 * max(eb, tiny)
    flags["nr_reduction_a_vs_b"] = metrics_b["n_nr"] - metrics_a["n_nr"]
    flags["fewer_nr_in_a"] = metrics_a["n_nr"] < metrics_b["n_nr"]
    report = {"a_scheme": metrics_a.get("scheme"), "b_scheme": metrics_b.get("scheme"), "rows": rows, "flags": flags}
    if field_a is not None and field_b is not None:
        from .mesh import load_field

        na, _, va = load_field(field_a)
        nb, _, vb = load_field(field_b)
        if va.shape[0] != vb.shape[0]:
            raise ConfigError("field files have different node counts")
        common = [c for c in na if c in nb]
        report["field_deltas"] = {c: float(np.nanmax(np.abs(va[:, na.index(c)] - vb[:, nb.index(c)])))
                                  for c in common}
    return report


def format_report(rep: dict) -> str:
    lines = [f"{'metric':<12} {'a (' + str(rep['a_scheme']) + ')':>22} {'b (' + str(rep['b_scheme']) + ')':>22} {'b - a':>14}"]
    for r in rep["rows"]:
        lines.append(f"{r['metric']:<12} {r['a']:>22.6g} {r['b']:>22.6g} {r['delta']:>14.6g}")
    for k, v in rep["flags"].items():
        lines.append(f"{k}: {v}")
    for k, v in rep.get("field_deltas", {}).items():
        lines.append(f"max|delta| {k}: {v:.6g}")
    return "\n".join(lines)
