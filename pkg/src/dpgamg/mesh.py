"""Conforming 2D meshes of triangles or quadrilaterals.

A :class:`Mesh` stores vertex coordinates and CCW element connectivity and
derives the facet topology every discretization routine relies on:

* facets are vertex pairs stored with ascending global vertex index, which
  also fixes the facet parametrization direction;
* the single-valued facet normal points out of ``facet_to_elems[e, 0]``
  (the lower-indexed neighbour), so on the boundary it is the outward normal.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

TRI = "tri"
QUAD = "quad"
_NVERT = {TRI: 3, QUAD: 4}


class MeshError(ValueError):
    """Raised for malformed, non-conforming or inverted meshes."""


@dataclass(frozen=True, eq=False)
class Mesh:
    vertices: np.ndarray  # (V, 2)
    elements: np.ndarray  # (F, 3|4), CCW
    kind: str
    attribute: np.ndarray  # (F,)
    facets: np.ndarray = field(init=False)  # (E, 2), ascending vertex index
    facet_to_elems: np.ndarray = field(init=False)  # (E, 2), -1 if absent
    facet_local: np.ndarray = field(init=False)  # (E, 2) local edge index per side
    elem_facets: np.ndarray = field(init=False)  # (F, nv)
    elem_facet_flip: np.ndarray = field(init=False)  # (F, nv) local dir != ascending
    elem_facet_sign: np.ndarray = field(init=False)  # (F, nv) n_facet . n_elem
    boundary_facets: np.ndarray = field(init=False)
    unused_vertices: np.ndarray = field(init=False)

    def __post_init__(self):
        if self.kind not in _NVERT:
            raise MeshError(f"unknown element kind {self.kind!r}")
        verts = np.ascontiguousarray(self.vertices, dtype=float)
        elems = np.ascontiguousarray(self.elements, dtype=np.int64)
        attr = np.ascontiguousarray(self.attribute, dtype=np.int64)
        nv = _NVERT[self.kind]
        if verts.ndim != 2 or verts.shape[1] != 2:
            raise MeshError("vertices must have shape (V, 2)")
        if elems.ndim != 2 or elems.shape[1] != nv:
            raise MeshError(f"{self.kind} elements need {nv} vertices each")
        if attr.shape != (elems.shape[0],):
            raise MeshError("one attribute per element required")
        if elems.size and (elems.min() < 0 or elems.max() >= len(verts)):
            raise MeshError("element references a vertex out of range")
        for name, val in (("vertices", verts), ("elements", elems), ("attribute", attr)):
            val.setflags(write=False)
            object.__setattr__(self, name, val)
        _check_orientation(verts, elems, self.kind)
        self._build_topology()

    def _build_topology(self):
        V = len(self.vertices)
        F, nv = self.elements.shape
        a = self.elements
        b = np.roll(self.elements, -1, axis=1)
        lo, hi = np.minimum(a, b), np.maximum(a, b)
        keys = (lo * V + hi).ravel()
        uniq, inverse, counts = np.unique(keys, return_inverse=True, return_counts=True)
        if np.any(counts > 2):
            raise MeshError("non-conforming connectivity: an edge is shared by more than two elements")
        E = len(uniq)
        facets = np.stack([uniq // V, uniq % V], axis=1)
        elem_facets = inverse.reshape(F, nv)

        f2e = np.full((E, 2), -1, dtype=np.int64)
        floc = np.full((E, 2), -1, dtype=np.int64)
        elem_ids = np.repeat(np.arange(F), nv)
        loc_ids = np.tile(np.arange(nv), F)
        # element ids arrive in increasing order, so side 0 is the lower index
        order = np.argsort(inverse, kind="stable")
        sorted_facets = inverse[order]
        first = np.ones(len(order), dtype=bool)
        first[1:] = sorted_facets[1:] != sorted_facets[:-1]
        side = np.where(first, 0, 1)
        f2e[sorted_facets, side] = elem_ids[order]
        floc[sorted_facets, side] = loc_ids[order]

        # two elements traversing an edge in the same direction means flipped orientation
        interior = f2e[:, 1] >= 0
        e0, l0 = f2e[interior, 0], floc[interior, 0]
        e1, l1 = f2e[interior, 1], floc[interior, 1]
        if np.any(a[e0, l0] == a[e1, l1]):
            raise MeshError("inconsistent element orientation across a shared edge")

        flip = a > b
        sign = np.where(f2e[elem_facets, 0] == np.arange(F)[:, None], 1.0, -1.0)
        used = np.zeros(V, dtype=bool)
        used[a.ravel()] = True
        unused = np.flatnonzero(~used)
        if unused.size:
            log.warning("mesh has %d unused vertices", unused.size)

        for name, val in (
            ("facets", facets),
            ("facet_to_elems", f2e),
            ("facet_local", floc),
            ("elem_facets", elem_facets),
            ("elem_facet_flip", flip),
            ("elem_facet_sign", sign),
            ("boundary_facets", np.flatnonzero(~interior)),
            ("unused_vertices", unused),
        ):
            val.setflags(write=False)
            object.__setattr__(self, name, val)

    @property
    def nverts(self) -> int:
        return len(self.vertices)

    @property
    def nelems(self) -> int:
        return len(self.elements)

    @property
    def nfacets(self) -> int:
        return len(self.facets)

    @property
    def verts_per_elem(self) -> int:
        return _NVERT[self.kind]

    @property
    def interior_facets(self) -> np.ndarray:
        return np.flatnonzero(self.facet_to_elems[:, 1] >= 0)

    @property
    def boundary_vertices(self) -> np.ndarray:
        return np.unique(self.facets[self.boundary_facets].ravel())

    def facet_lengths(self) -> np.ndarray:
        d = self.vertices[self.facets[:, 1]] - self.vertices[self.facets[:, 0]]
        return np.hypot(d[:, 0], d[:, 1])

    def facet_normals(self) -> np.ndarray:
        """Unit normals pointing out of the lower-indexed neighbour."""
        e = self.facet_to_elems[:, 0]
        loc = self.facet_local[:, 0]
        nv = self.verts_per_elem
        p0 = self.vertices[self.elements[e, loc]]
        p1 = self.vertices[self.elements[e, (loc + 1) % nv]]
        t = p1 - p0
        n = np.stack([t[:, 1], -t[:, 0]], axis=1)
        return n / np.linalg.norm(n, axis=1)[:, None]

    def h(self) -> float:
        """Largest facet length (edge-based mesh size)."""
        return float(self.facet_lengths().max())

    def euler_characteristic(self) -> int:
        return self.nverts - self.nfacets + self.nelems


def _check_orientation(verts, elems, kind):
    if len(elems) == 0:
        raise MeshError("mesh has no elements")
    x = verts[elems]
    if kind == TRI:
        d1, d2 = x[:, 1] - x[:, 0], x[:, 2] - x[:, 0]
        det = (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])[:, None]
    else:
        # det of the bilinear map is affine in each variable: corners suffice
        prev = np.roll(x, 1, axis=1)
        nxt = np.roll(x, -1, axis=1)
        d1, d2 = nxt - x, prev - x
        det = d1[..., 0] * d2[..., 1] - d1[..., 1] * d2[..., 0]
    scale = np.max(np.abs(x.reshape(len(x), -1)), axis=1, initial=1.0)[:, None] ** 2
    if np.any(det <= 1e-14 * scale):
        bad = int(np.flatnonzero(np.any(det <= 1e-14 * scale, axis=1))[0])
        raise MeshError(f"inverted element {bad}: non-positive Jacobian determinant")


def build_cartesian_mesh(nx: int, ny: int, kind: str = QUAD) -> Mesh:
    """Uniform grid of the unit square.

    Triangles split each cell along its lower-left to upper-right diagonal.
    """
    if int(nx) < 1 or int(ny) < 1:
        raise MeshError("cartesian mesh needs nx, ny >= 1")
    nx, ny = int(nx), int(ny)
    xs, ys = np.linspace(0.0, 1.0, nx + 1), np.linspace(0.0, 1.0, ny + 1)
    X, Y = np.meshgrid(xs, ys)
    verts = np.stack([X.ravel(), Y.ravel()], axis=1)
    i, j = np.meshgrid(np.arange(nx), np.arange(ny))
    v00 = (j * (nx + 1) + i).ravel()
    v10, v01 = v00 + 1, v00 + nx + 1
    v11 = v01 + 1
    if kind == QUAD:
        elems = np.stack([v00, v10, v11, v01], axis=1)
    elif kind == TRI:
        lower = np.stack([v00, v10, v11], axis=1)
        upper = np.stack([v00, v11, v01], axis=1)
        elems = np.stack([lower, upper], axis=1).reshape(-1, 3)
    else:
        raise MeshError(f"unknown element kind {kind!r}")
    return Mesh(verts, elems, kind, np.zeros(len(elems), dtype=np.int64))


def refine_uniform(m: Mesh) -> Mesh:
    """Split every element into four via edge midpoints (and centroid for quads)."""
    V, E, F = m.nverts, m.nfacets, m.nelems
    mids = 0.5 * (m.vertices[m.facets[:, 0]] + m.vertices[m.facets[:, 1]])
    verts = [m.vertices, mids]
    v = m.elements
    e = m.elem_facets + V
    if m.kind == TRI:
        children = np.stack(
            [
                np.stack([v[:, 0], e[:, 0], e[:, 2]], axis=1),
                np.stack([e[:, 0], v[:, 1], e[:, 1]], axis=1),
                np.stack([e[:, 2], e[:, 1], v[:, 2]], axis=1),
                np.stack([e[:, 0], e[:, 1], e[:, 2]], axis=1),
            ],
            axis=1,
        ).reshape(-1, 3)
    else:
        verts.append(m.vertices[v].mean(axis=1))
        c = V + E + np.arange(F)
        children = np.stack(
            [
                np.stack([v[:, 0], e[:, 0], c, e[:, 3]], axis=1),
                np.stack([e[:, 0], v[:, 1], e[:, 1], c], axis=1),
                np.stack([c, e[:, 1], v[:, 2], e[:, 2]], axis=1),
                np.stack([e[:, 3], c, e[:, 2], v[:, 3]], axis=1),
            ],
            axis=1,
        ).reshape(-1, 4)
    return Mesh(np.vstack(verts), children, m.kind, np.repeat(m.attribute, 4))


def refine(m: Mesh, times: int) -> Mesh:
    for _ in range(times):
        m = refine_uniform(m)
    return m


def load_mesh(path) -> Mesh:
    """Read the plain-text ``mesh2d`` format.

    ::

        mesh2d tri
        vertices 3
        0 0
        1 0
        0 1
        elements 1
        0 1 2 0
    """
    lines = [ln.split("#", 1)[0].strip() for ln in Path(path).read_text().splitlines()]
    lines = [ln for ln in lines if ln]
    try:
        return _parse(lines)
    except MeshError:
        raise
    except (ValueError, IndexError) as exc:
        raise MeshError(f"cannot parse mesh file {path}: {exc}") from exc


def _parse(lines) -> Mesh:
    head = lines[0].split()
    if len(head) != 2 or head[0] != "mesh2d" or head[1] not in _NVERT:
        raise MeshError("header must be 'mesh2d tri' or 'mesh2d quad'")
    kind = head[1]
    tag, nv = lines[1].split()
    if tag != "vertices":
        raise MeshError("expected 'vertices <V>'")
    nv = int(nv)
    verts = np.array([[float(t) for t in ln.split()] for ln in lines[2 : 2 + nv]])
    if verts.shape != (nv, 2):
        raise MeshError("each vertex line needs exactly two coordinates")
    tag, ne = lines[2 + nv].split()
    if tag != "elements":
        raise MeshError("expected 'elements <F>'")
    ne = int(ne)
    rows = [[int(t) for t in ln.split()] for ln in lines[3 + nv : 3 + nv + ne]]
    if len(rows) != ne or any(len(r) != _NVERT[kind] + 1 for r in rows):
        raise MeshError(f"expected {ne} element lines with {_NVERT[kind]} indices + attribute")
    if len(lines) != 3 + nv + ne:
        raise MeshError("trailing content after element block")
    rows = np.array(rows, dtype=np.int64)
    conn = rows[:, :-1]
    if any(len(set(r)) != len(r) for r in conn.tolist()):
        raise MeshError("inverted element: repeated vertex gives zero Jacobian")
    return Mesh(verts, conn, kind, rows[:, -1])


def write_mesh(m: Mesh, path) -> None:
    out = [f"mesh2d {m.kind}", f"vertices {m.nverts}"]
    out += [f"{x!r} {y!r}" for x, y in m.vertices.tolist()]
    out.append(f"elements {m.nelems}")
    out += [" ".join(map(str, list(c) + [a])) for c, a in zip(m.elements.tolist(), m.attribute.tolist())]
    Path(path).write_text("\n".join(out) + "\n")


SAMPLES = {TRI: "unstructured_tri.mesh2d", QUAD: "unstructured_quad.mesh2d"}


def sample_mesh(kind: str) -> Mesh:
    """One of the small unstructured meshes shipped with the package."""
    if kind not in SAMPLES:
        raise MeshError(f"no sample mesh of kind {kind!r}; choose from {sorted(SAMPLES)}")
    with resources.as_file(resources.files("dpgamg") / "data" / SAMPLES[kind]) as path:
        return load_mesh(path)
