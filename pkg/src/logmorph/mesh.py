"""Linear simplex meshes, shape functions, quadrature and element metrics.

Mesh file format (plain text, whitespace separated, floats written with
``repr`` so a save/load round trip is bit exact)::

    LOGMORPH-MESH 1
    dim <d>
    nodes <n>
    <x> <y> [<z>]                  # n lines
    elements <m> mrf <0|1>
    <v0> ... <vd> [<flag>]         # m lines, flag present when mrf is 1
    boundary <k>
    <v0> ... <v(d-1)> <tag>        # k lines

Field CSV columns are ``node_id, x, y[, z]`` followed by the value columns.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = "LOGMORPH-MESH 1"

TAG_WALL = 1
TAG_BEAM = 2

# unit-edge equilateral triangle / regular tetrahedron, vertex 0 at the origin
_EQUI = {
    2: np.array([[1.0, 0.5], [0.0, np.sqrt(3.0) / 2.0]]),
    3: np.array([
        [1.0, 0.5, 0.5],
        [0.0, np.sqrt(3.0) / 2.0, np.sqrt(3.0) / 6.0],
        [0.0, 0.0, np.sqrt(2.0 / 3.0)],
    ]),
}


class MeshError(ValueError):
    pass


class MeshParseError(MeshError):
    def __init__(self, path, line, msg):
        super().__init__(f"{path}:{line}: {msg}")
        self.line = line


@dataclass(frozen=True)
class ElementGeometry:
    jacobian_map: np.ndarray  # dx/dxi of the unit-simplex map
    G: np.ndarray
    Ginv: np.ndarray
    volume: float
    grads: np.ndarray  # physical gradients of the d+1 linear basis functions


def _ref_grads(d):
    g = np.zeros((d + 1, d))
    g[0] = -1.0
    g[1:] = np.eye(d)
    return g


def element_metric(coords, elem_id: int | None = None) -> ElementGeometry:
    """Geometry of one linear simplex given its (d+1, d) vertex coordinates."""
    x = np.asarray(coords, dtype=float)
    d = x.shape[1]
    J = (x[1:] - x[0]).T
    det = np.linalg.det(J)
    scale = np.abs(J).max() ** d if np.abs(J).max() > 0 else 0.0
    if scale == 0.0 or abs(det) <= 1e-14 * scale:
        where = "" if elem_id is None else f" {elem_id}"
        raise MeshError(f"degenerate element{where}")
    Jinv = np.linalg.inv(J)
    T = _EQUI[d] @ Jinv  # d(eta)/dx with eta the equilateral reference coordinate
    G = T.T @ T
    G = 0.5 * (G + G.T)
    Ginv = np.linalg.inv(G)
    Ginv = 0.5 * (Ginv + Ginv.T)
    vol = abs(det) / (2.0 if d == 2 else 6.0)
    return ElementGeometry(J, G, Ginv, vol, _ref_grads(d) @ Jinv)


def shape_values(xi) -> np.ndarray:
    xi = np.asarray(xi, dtype=float)
    return np.concatenate([[1.0 - xi.sum()], xi])


def shape_eval(geom: ElementGeometry, xi):
    """Linear Lagrange basis values at reference point ``xi`` and physical gradients."""
    return shape_values(xi), geom.grads


_TRI3_A = 0.659027622374092
_TRI3_B = 0.231933368553031
_TRI3_C = 0.109039009072877


def _tet_gauss_jacobi():
    # collapsed tensor rule, 2 points per direction: exact to degree 3
    xg, wg = np.polynomial.legendre.leggauss(2)
    a, wa = _gauss_jacobi(2, 2.0)
    b, wb = _gauss_jacobi(2, 1.0)
    pts, wts = [], []
    for i in range(2):
        for j in range(2):
            for k in range(2):
                u = 0.5 * (a[i] + 1.0)
                v = 0.5 * (b[j] + 1.0)
                w = 0.5 * (xg[k] + 1.0)
                z = u
                y = (1.0 - u) * v
                x = (1.0 - u) * (1.0 - v) * w
                pts.append([x, y, z])
                wts.append(wa[i] * wb[j] * wg[k] / 64.0)
    return np.array(pts), np.array(wts)


def _gauss_jacobi(n, alpha):
    """Gauss-Jacobi nodes/weights for weight (1-x)^alpha on [-1, 1] (beta = 0)."""
    from scipy.special import roots_jacobi

    x, w = roots_jacobi(n, alpha, 0.0)
    return x, w


def quadrature(order: int, dim: int = 2):
    """Points in the unit simplex and weights summing to its volume."""
    if dim == 2:
        if order == 1:
            return np.array([[1.0 / 3.0, 1.0 / 3.0]]), np.array([0.5])
        if order == 2:
            p = np.array([[1 / 6, 1 / 6], [2 / 3, 1 / 6], [1 / 6, 2 / 3]])
            return p, np.full(3, 1.0 / 6.0)
        if order == 3:
            a, b, c = _TRI3_A, _TRI3_B, _TRI3_C
            bary = [(a, b, c), (a, c, b), (b, a, c), (b, c, a), (c, a, b), (c, b, a)]
            return np.array([[l1, l2] for _, l1, l2 in bary]), np.full(6, 1.0 / 12.0)
    elif dim == 3:
        if order == 1:
            return np.array([[0.25, 0.25, 0.25]]), np.array([1.0 / 6.0])
        if order == 2:
            a, b = 0.5854101966249685, 0.1381966011250105
            p = np.array([[b, b, b], [a, b, b], [b, a, b], [b, b, a]])
            return p, np.full(4, 1.0 / 24.0)
        if order == 3:
            return _tet_gauss_jacobi()
    raise ValueError(f"unsupported quadrature order {order} for dim {dim}")


@dataclass
class Mesh:
    nodes: np.ndarray
    elements: np.ndarray
    boundary_facets: np.ndarray = None
    boundary_tags: np.ndarray = None
    mrf_region: np.ndarray | None = None
    _geom: dict = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        self.nodes = np.ascontiguousarray(self.nodes, dtype=float)
        self.elements = np.ascontiguousarray(self.elements, dtype=np.int64)
        d = self.nodes.shape[1]
        if d not in (2, 3) or self.elements.shape[1] != d + 1:
            raise MeshError("node/element shapes are inconsistent")
        if self.boundary_facets is None:
            self.boundary_facets = np.zeros((0, d), dtype=np.int64)
            self.boundary_tags = np.zeros(0, dtype=np.int64)
        self.boundary_facets = np.ascontiguousarray(self.boundary_facets, dtype=np.int64).reshape(-1, d)
        self.boundary_tags = np.ascontiguousarray(self.boundary_tags, dtype=np.int64)
        if self.mrf_region is not None:
            self.mrf_region = np.ascontiguousarray(self.mrf_region, dtype=bool)
            if self.mrf_region.shape != (self.n_elements,):
                raise MeshError("mrf_region needs one flag per element")
        n = self.n_nodes
        if self.elements.size and (self.elements.min() < 0 or self.elements.max() >= n):
            raise MeshError("element connectivity out of range")
        if self.boundary_facets.size and (self.boundary_facets.min() < 0 or self.boundary_facets.max() >= n):
            raise MeshError("boundary facet references a missing node")
        if self.boundary_tags.shape[0] != self.boundary_facets.shape[0]:
            raise MeshError("one tag per boundary facet required")
        vols = self.signed_volumes()
        bad = np.flatnonzero(vols <= 0.0)
        if bad.size:
            raise MeshError(f"element {bad[0]} has non-positive volume {vols[bad[0]]}")

    @property
    def dim(self) -> int:
        return self.nodes.shape[1]

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_elements(self) -> int:
        return self.elements.shape[0]

    def element_coords(self, e: int) -> np.ndarray:
        return self.nodes[self.elements[e]]

    def jacobians(self) -> np.ndarray:
        x = self.nodes[self.elements]
        return np.transpose(x[:, 1:] - x[:, :1], (0, 2, 1))

    def signed_volumes(self) -> np.ndarray:
        d = self.dim
        return np.linalg.det(self.jacobians()) / (2.0 if d == 2 else 6.0)

    def geometry(self) -> dict:
        """Batched element geometry: volume, basis gradients, G and G^-1."""
        if self._geom is None:
            d = self.dim
            J = self.jacobians()
            Jinv = np.linalg.inv(J)
            T = np.einsum("ab,ebc->eac", _EQUI[d], Jinv)
            G = np.einsum("eka,ekb->eab", T, T)
            G = 0.5 * (G + np.transpose(G, (0, 2, 1)))
            Ginv = np.linalg.inv(G)
            Ginv = 0.5 * (Ginv + np.transpose(Ginv, (0, 2, 1)))
            grads = np.einsum("ak,ekc->eac", _ref_grads(d), Jinv)
            self._geom = {
                "volume": np.abs(np.linalg.det(J)) / (2.0 if d == 2 else 6.0),
                "grads": np.ascontiguousarray(grads),
                "G": np.ascontiguousarray(G),
                "Ginv": np.ascontiguousarray(Ginv),
            }
        return self._geom

    def total_volume(self) -> float:
        return float(self.geometry()["volume"].sum())

    def locate(self, x, tol: float = 1e-12):
        """Element index and barycentric coordinates of point x (first match)."""
        x = np.asarray(x, dtype=float)
        J = self.jacobians()
        x0 = self.nodes[self.elements[:, 0]]
        xi = np.linalg.solve(J, (x - x0)[..., None])[..., 0]
        bary = np.concatenate([1.0 - xi.sum(axis=1, keepdims=True), xi], axis=1)
        inside = np.flatnonzero(bary.min(axis=1) >= -tol)
        if inside.size == 0:
            raise MeshError(f"point {x.tolist()} lies outside the mesh")
        e = int(inside[0])
        return e, bary[e]

    def boundary_nodes(self, tag: int | None = None) -> np.ndarray:
        f = self.boundary_facets if tag is None else self.boundary_facets[self.boundary_tags == tag]
        return np.unique(f)


def find_boundary_facets(elements: np.ndarray) -> np.ndarray:
    """Facets that belong to exactly one element, in a deterministic order."""
    d = elements.shape[1] - 1
    faces = []
    for k in range(d + 1):
        faces.append(np.delete(elements, k, axis=1))
    faces = np.concatenate(faces)
    key = np.sort(faces, axis=1)
    uniq, inv, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
    once = counts[inv.reshape(-1)] == 1
    out = faces[once]
    order = np.lexsort(np.sort(out, axis=1).T[::-1])
    return out[order]


# --------------------------------------------------------------------------
# file IO


def save_mesh(path, mesh: Mesh) -> None:
    d = mesh.dim
    has_mrf = mesh.mrf_region is not None
    lines = [MAGIC, f"dim {d}", f"nodes {mesh.n_nodes}"]
    lines += [" ".join(repr(float(v)) for v in row) for row in mesh.nodes]
    lines.append(f"elements {mesh.n_elements} mrf {int(has_mrf)}")
    for e, row in enumerate(mesh.elements):
        s = " ".join(str(int(v)) for v in row)
        if has_mrf:
            s += f" {int(mesh.mrf_region[e])}"
        lines.append(s)
    lines.append(f"boundary {mesh.boundary_facets.shape[0]}")
    for row, tag in zip(mesh.boundary_facets, mesh.boundary_tags):
        lines.append(" ".join(str(int(v)) for v in row) + f" {int(tag)}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_mesh(path) -> Mesh:
    text = Path(path).read_text().splitlines()
    pos = 0

    def take(expect_fields=None):
        nonlocal pos
        while pos < len(text) and not text[pos].strip():
            pos += 1
        if pos >= len(text):
            raise MeshParseError(path, pos + 1, "unexpected end of file")
        pos += 1
        parts = text[pos - 1].split()
        if expect_fields is not None and len(parts) != expect_fields:
            raise MeshParseError(path, pos, f"expected {expect_fields} fields, got {len(parts)}")
        return parts

    def header(parts, word):
        if parts[0] != word:
            raise MeshParseError(path, pos, f"expected '{word}' section")
        try:
            return int(parts[1])
        except (IndexError, ValueError):
            raise MeshParseError(path, pos, f"bad count in '{word}' line") from None

    def numbers(parts, conv):
        try:
            return [conv(v) for v in parts]
        except ValueError:
            raise MeshParseError(path, pos, "malformed number") from None

    first = take()
    if " ".join(first) != MAGIC:
        raise MeshParseError(path, pos, f"missing magic header '{MAGIC}'")
    d = header(take(2), "dim")
    if d not in (2, 3):
        raise MeshParseError(path, pos, f"unsupported dimension {d}")
    nn = header(take(2), "nodes")
    nodes = np.array([numbers(take(d), float) for _ in range(nn)], dtype=float).reshape(nn, d)
    parts = take(4)
    ne = header(parts, "elements")
    if parts[2] != "mrf" or parts[3] not in ("0", "1"):
        raise MeshParseError(path, pos, "elements line must end with 'mrf 0|1'")
    has_mrf = parts[3] == "1"
    rows = [numbers(take(d + 1 + has_mrf), int) for _ in range(ne)]
    arr = np.array(rows, dtype=np.int64).reshape(ne, d + 1 + has_mrf)
    nb = header(take(2), "boundary")
    brows = np.array([numbers(take(d + 1), int) for _ in range(nb)], dtype=np.int64).reshape(nb, d + 1)
    try:
        return Mesh(nodes, arr[:, : d + 1], brows[:, :d], brows[:, d],
                    arr[:, d + 1].astype(bool) if has_mrf else None)
    except MeshError as exc:
        raise MeshParseError(path, pos, str(exc)) from None


def save_field(path, mesh: Mesh, values, names) -> None:
    values = np.asarray(values, dtype=float).reshape(mesh.n_nodes, -1)
    if values.shape[1] != len(names):
        raise ValueError("one column name per value column required")
    coord = ["x", "y", "z"][: mesh.dim]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["node_id", *coord, *names])
        for i in range(mesh.n_nodes):
            w.writerow([i, *(repr(float(v)) for v in mesh.nodes[i]), *(repr(float(v)) for v in values[i])])


def load_field(path):
    """Returns ``(names, coords, values)`` from a field CSV."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][0] != "node_id":
        raise MeshParseError(path, 1, "field CSV must start with a node_id header")
    head = rows[0]
    d = sum(1 for c in head[1:4] if c in ("x", "y", "z"))
    data = []
    for k, r in enumerate(rows[1:], start=2):
        if len(r) != len(head):
            raise MeshParseError(path, k, f"expected {len(head)} columns, got {len(r)}")
        try:
            data.append([float(v) for v in r])
        except ValueError:
            raise MeshParseError(path, k, "malformed number") from None
    data = np.array(data, dtype=float).reshape(-1, len(head))
    ids = data[:, 0].astype(np.int64)
    if not np.array_equal(ids, np.arange(ids.size)):
        raise MeshParseError(path, 2, "node ids must be 0..n-1 in order")
    return head[1 + d:], data[:, 1 : 1 + d], data[:, 1 + d:]


# --------------------------------------------------------------------------
# generators


def unit_square_two_triangles() -> Mesh:
    nodes = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    elems = np.array([[0, 1, 2], [0, 2, 3]])
    facets = find_boundary_facets(elems)
    return Mesh(nodes, elems, facets, np.full(len(facets), TAG_WALL))


def structured_square(n: int, lo=-0.5, hi=0.5) -> tuple[np.ndarray, np.ndarray]:
    """(n+1)^2 grid with alternating diagonals, counter-clockwise triangles."""
    t = np.linspace(lo, hi, n + 1)
    X, Y = np.meshgrid(t, t, indexing="xy")
    nodes = np.column_stack([X.ravel(), Y.ravel()])
    idx = lambda i, j: j * (n + 1) + i
    elems = []
    for j in range(n):
        for i in range(n):
            a, b, c, d = idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1)
            if (i + j) % 2 == 0:
                elems += [[a, b, c], [a, c, d]]
            else:
                elems += [[a, b, d], [b, c, d]]
    return nodes, np.array(elems, dtype=np.int64)


def _ring(r, m, phase):
    t = 2.0 * np.pi * (np.arange(m) + phase) / m
    return np.column_stack([r * np.cos(t), r * np.sin(t)])


def mini_stirrer(n: int = 44, beam_half_cells=(2, 12), r_interface: float = 0.375) -> Mesh:
    """Unit square around a rectangular stirrer beam with a circular rotating zone.

    Grid points of spacing 1/n fill the square away from the interface
    circle; three node rings (on the circle and one row either side) make
    the interface a chain of element edges, so the MRF zone is bounded by a
    conforming polygon instead of a staircase.  The beam is the grid-aligned
    rectangle of ``beam_half_cells`` cells on either side of the centre and
    is cut out.  Facets on the outer square are tagged 1, beam facets 2.
    Elements whose centroid lies inside the circle form the rotating zone.
    """
    from scipy.spatial import Delaunay

    if n % 2:
        raise MeshError("grid resolution must be even so the beam is centred")
    h = 1.0 / n
    bx, by = beam_half_cells[0] * h, beam_half_cells[1] * h
    m = max(12, int(round(2.0 * np.pi * r_interface / h)))
    dr = h * np.sqrt(3.0) / 2.0
    if np.hypot(bx, by) > r_interface - 2.0 * dr or r_interface + 2.0 * dr > 0.5:
        raise MeshError("the interface circle must clear both the beam and the outer wall")
    t = np.linspace(-0.5, 0.5, n + 1)
    X, Y = np.meshgrid(t, t, indexing="xy")
    grid = np.column_stack([X.ravel(), Y.ravel()])
    r = np.hypot(grid[:, 0], grid[:, 1])
    in_beam = (np.abs(grid[:, 0]) < bx - 1e-12) & (np.abs(grid[:, 1]) < by - 1e-12)
    grid = grid[(np.abs(r - r_interface) > dr + 0.6 * h) & ~in_beam]
    rings = [_ring(r_interface - dr, m, 0.5), _ring(r_interface, m, 0.0), _ring(r_interface + dr, m, 0.5)]
    nodes = np.concatenate([grid, *rings])
    elems = Delaunay(nodes).simplices.astype(np.int64)
    x = nodes[elems]
    area = (x[:, 1, 0] - x[:, 0, 0]) * (x[:, 2, 1] - x[:, 0, 1]) - (x[:, 1, 1] - x[:, 0, 1]) * (x[:, 2, 0] - x[:, 0, 0])
    elems[area < 0] = elems[area < 0][:, [0, 2, 1]]
    elems = elems[np.abs(area) > 1e-12 * h * h]
    cen = nodes[elems].mean(axis=1)
    elems = elems[~((np.abs(cen[:, 0]) < bx) & (np.abs(cen[:, 1]) < by))]
    # canonical ordering so the mesh does not depend on the triangulator's output order
    elems = np.sort(elems, axis=1)
    x = nodes[elems]
    area = (x[:, 1, 0] - x[:, 0, 0]) * (x[:, 2, 1] - x[:, 0, 1]) - (x[:, 1, 1] - x[:, 0, 1]) * (x[:, 2, 0] - x[:, 0, 0])
    elems[area < 0] = elems[area < 0][:, [0, 2, 1]]
    elems = elems[np.lexsort(np.sort(elems, axis=1).T[::-1])]
    facets = find_boundary_facets(elems)
    fx = nodes[facets].mean(axis=1)
    outer = np.isclose(np.abs(fx).max(axis=1), 0.5)
    tags = np.where(outer, TAG_WALL, TAG_BEAM)
    cen = nodes[elems].mean(axis=1)
    mrf = np.hypot(cen[:, 0], cen[:, 1]) < r_interface
    return Mesh(nodes, elems, facets, tags, mrf)
