import json

import numpy as np
import pytest
import yaml

from logmorph.case import ConfigError, compare_runs, line_sample, load_config, parse_config, run_case
from logmorph.cli import main
from logmorph.mesh import load_field, load_mesh, structured_square, Mesh, find_boundary_facets
from logmorph.morphology import ModelParams, sigma_eff


def write_cfg(path, cfg):
    path.write_text(yaml.safe_dump(cfg))
    return path


def small_cfg(**over):
    cfg = {
        "mesh": {"generator": "square", "n": 4},
        "flow": {"kind": "simple_shear", "shear_rate": 200.0},
        "solver": {"t_end": 0.05, "dt": 0.01},
        "outputs": {"line_p0": [0.05, 0.05], "line_p1": [0.95, 0.95], "line_n": 8},
    }
    for k, v in over.items():
        cfg.setdefault(k, {}).update(v)
    return cfg


def rk4_morph_2d(rate, p, t_end=1.0, h=1e-4):
    E = np.array([[0.0, 0.5], [0.5, 0.0]]) * rate
    W = np.array([[0.0, 0.5], [-0.5, 0.0]]) * rate

    def rhs(S):
        g = 2 * np.linalg.det(S) / np.trace(S)
        return -(p.alpha1 * (S - g * np.eye(2)) - p.alpha2 * (E @ S + S @ E) - p.alpha3 * (W @ S - S @ W))

    S = np.eye(2)
    for _ in range(int(round(t_end / h))):
        k1 = rhs(S)
        k2 = rhs(S + 0.5 * h * k1)
        k3 = rhs(S + 0.5 * h * k2)
        k4 = rhs(S + h * k3)
        S = S + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    return S


def test_defaults_describe_the_stirrer():
    cfg = parse_config({})
    assert cfg.mesh.generator == "mini_stirrer"
    assert cfg.flow.kind == "mrf_stirrer"
    assert cfg.stabilization.scheme == "vms"
    assert cfg.solver.dt == 0.01 and cfg.solver.t_end == 1.0
    assert cfg.solver.krylov_dim == 10 and cfg.solver.ilut_fill == 20 and cfg.solver.ilut_threshold == 1e-4
    assert cfg.model.dim == 2 and cfg.stabilization.alpha_dc == 0.0


@pytest.mark.parametrize("raw", [
    {"solver": {"krylov": 3}},
    {"colour": 1},
    {"stabilization": {"scheme": "dg"}},
    {"outputs": {"dump_every": 7}},
    {"solver": {"t_end": 0.015}},
    {"flow": {"kind": "file", "path": "missing.csv"}},
])
def test_bad_configs_rejected(raw):
    with pytest.raises(ConfigError):
        parse_config(raw)


def test_single_element_shear_matches_ode_oracle(tmp_path):
    cfg = parse_config({
        "mesh": {"generator": "two_triangles"},
        "flow": {"kind": "simple_shear", "shear_rate": 1000.0},
        "boundary": {"inflow_dirichlet": False},
    })
    res = run_case(cfg)
    p = ModelParams(dim=2)
    lam = np.linalg.eigvalsh(rk4_morph_2d(1000.0, p))
    D_ref = (np.sqrt(lam[1]) - np.sqrt(lam[0])) / (np.sqrt(lam[1]) + np.sqrt(lam[0]))
    psi = res.values[0]
    lp = np.linalg.eigvalsh(np.array([[psi[0], psi[1]], [psi[1], psi[2]]]))
    D = np.tanh(0.25 * (lp[1] - lp[0]))
    assert sigma_eff(D, p) == pytest.approx(sigma_eff(D_ref, p), rel=1e-3)
    assert res.metrics_dict["all_converged"]


def test_run_writes_artifacts_and_is_deterministic(tmp_path):
    c = write_cfg(tmp_path / "c.yaml", small_cfg(outputs={"dump_every": 5}))
    assert main(["run", str(c), "--out", str(tmp_path / "a")]) == 0
    assert main(["run", str(c), "--out", str(tmp_path / "b")]) == 0
    for name in ["mesh.txt", "field_final.csv", "field_00005.csv", "sigma_f.csv", "line_sample.csv", "metrics.json",
                 "solver.log"]:
        assert (tmp_path / "a" / name).exists()
    assert (tmp_path / "a" / "metrics.json").read_bytes() == (tmp_path / "b" / "metrics.json").read_bytes()
    m = json.loads((tmp_path / "a" / "metrics.json").read_text())
    assert list(m)[:4] == ["n_gmres", "n_nr", "eps_det", "max_det_dev"]
    log = (tmp_path / "a" / "solver.log").read_text().splitlines()
    nr = [l for l in log if l.startswith("NR ")]
    assert len(nr) == m["n_nr"]
    assert sum(int(l.split("gmres=")[1]) for l in nr) == m["n_gmres"]
    mesh = load_mesh(tmp_path / "a" / "mesh.txt")
    names, _, vals = load_field(tmp_path / "a" / "field_final.csv")
    assert vals.shape[0] == mesh.n_nodes and names[:3] == ["psi_xx", "psi_xy", "psi_yy"]


def test_cli_exit_codes(tmp_path):
    assert main(["run", str(tmp_path / "nope.yaml")]) == 2
    bad = tmp_path / "bad.yaml"
    bad.write_text("solver: [1, 2\n")
    assert main(["run", str(bad)]) == 2
    c = write_cfg(tmp_path / "c.yaml", small_cfg(solver={"nr_max": 1}))
    assert main(["run", str(c), "--out", str(tmp_path / "s"), "--strict"]) == 1
    assert main(["run", str(c), "--out", str(tmp_path / "t"), "--tolerant"]) == 0
    m = json.loads((tmp_path / "t" / "metrics.json").read_text())
    assert not m["all_converged"] and len(m["unconverged_steps"]) > 0


def test_scheme_override_and_compare(tmp_path, capsys):
    c = write_cfg(tmp_path / "c.yaml", small_cfg())
    assert main(["run", str(c), "--out", str(tmp_path / "v")]) == 0
    assert main(["run", str(c), "--out", str(tmp_path / "s"), "--scheme", "supg"]) == 0
    capsys.readouterr()
    rc = main(["compare", str(tmp_path / "v" / "metrics.json"), str(tmp_path / "s" / "metrics.json"),
               "--field-a", str(tmp_path / "v" / "field_final.csv"),
               "--field-b", str(tmp_path / "s" / "field_final.csv"), "--json", str(tmp_path / "rep.json")])
    assert rc == 0
    out = capsys.readouterr().out
    assert "n_nr" in out and "max|delta| psi_xx" in out
    rep = json.loads((tmp_path / "rep.json").read_text())
    assert rep["a_scheme"] == "vms" and rep["b_scheme"] == "supg"


def test_compare_rejects_different_meshes_and_flags_ratio():
    a = {"n_gmres": 1, "n_nr": 2, "eps_det": 1e-14, "max_det_dev": 0.0, "mesh_fingerprint": "x"}
    b = dict(a, eps_det=1e-8, n_nr=5)
    rep = compare_runs(a, b)
    assert rep["flags"]["eps_det_b_exceeds_a_by_1e3"] and rep["flags"]["fewer_nr_in_a"]
    with pytest.raises(ConfigError):
        compare_runs(a, dict(b, mesh_fingerprint="y"))


def test_line_sample_reproduces_linear_field():
    nodes, elems = structured_square(6)
    f = find_boundary_facets(elems)
    m = Mesh(nodes, elems, f, np.ones(len(f), dtype=int))
    vals = 2.0 * nodes[:, 0] - 3.0 * nodes[:, 1] + 1.0
    s, v = line_sample(m, vals, (-0.5, -0.5), (0.4, 0.3), 17)
    pts = np.array([-0.5, -0.5]) + np.outer(s / s[-1], [0.9, 0.8])
    assert np.allclose(v[:, 0], 2 * pts[:, 0] - 3 * pts[:, 1] + 1, atol=1e-13)
    assert s[0] == 0.0 and s[-1] == pytest.approx(np.hypot(0.9, 0.8))


def test_gen_mesh_and_sample_verbs(tmp_path):
    assert main(["gen-mesh", "--n", "22", "--beam-half-cells", "1", "6", "--out", str(tmp_path / "m.txt")]) == 0
    m = load_mesh(tmp_path / "m.txt")
    from logmorph.mesh import save_field

    save_field(tmp_path / "f.csv", m, m.nodes[:, :1] * 2.0, ["q"])
    assert main(["sample", "--mesh", str(tmp_path / "m.txt"), "--field", str(tmp_path / "f.csv"),
                 "--p0", "-0.5", "-0.5", "--p1", "-0.1", "0.0", "--n", "4", "--out", str(tmp_path / "l.csv")]) == 0
    rows = (tmp_path / "l.csv").read_text().splitlines()
    assert rows[0] == "s,q" and len(rows) == 6
    assert float(rows[-1].split(",")[1]) == pytest.approx(-0.2, abs=1e-12)
    assert main(["sample", "--mesh", str(tmp_path / "m.txt"), "--field", str(tmp_path / "f.csv"),
                 "--p0", "0", "0", "--p1", "1", "1", "--columns", "zz"]) == 2


def test_compare_accepts_run_directories(tmp_path, capsys):
    c = write_cfg(tmp_path / "c.yaml", small_cfg())
    assert main(["run", str(c), "--out", str(tmp_path / "v")]) == 0
    assert main(["run", str(c), "--out", str(tmp_path / "s"), "--scheme", "supg"]) == 0
    capsys.readouterr()
    assert main(["compare", str(tmp_path / "v"), str(tmp_path / "s")]) == 0
    assert "max|delta| psi_xx" in capsys.readouterr().out
    assert main(["compare", str(tmp_path / "v"), str(c)]) == 2


def test_default_line_and_bad_line_fail_early(tmp_path):
    cfg = small_cfg()
    del cfg["outputs"]
    res = run_case(parse_config(cfg), tmp_path / "a")
    rows = (tmp_path / "a" / "line_sample.csv").read_text().splitlines()
    assert len(rows) == 102 and float(rows[-1].split(",")[0]) == pytest.approx(np.sqrt(2.0))
    assert res.metrics_dict["steps"] == 5
    bad = parse_config(small_cfg(outputs={"line_p1": [3.0, 3.0]}))
    with pytest.raises(ConfigError, match="sampling line"):
        run_case(bad, tmp_path / "b")
    assert not (tmp_path / "b" / "metrics.json").exists()


def test_gen_mesh_rejects_impossible_geometry(tmp_path):
    assert main(["gen-mesh", "--n", "22", "--out", str(tmp_path / "m.txt")]) == 2
