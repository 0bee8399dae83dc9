"""Regenerate the unstructured sample meshes shipped in ``src/dpgamg/data``.

Triangles come from a Delaunay triangulation of a jittered point cloud on the
unit square; quadrilaterals split each of those triangles into three quads
through the centroid and the edge midpoints.
"""

from pathlib import Path

import numpy as np
from scipy.spatial import Delaunay

from dpgamg.mesh import QUAD, TRI, Mesh, write_mesh

OUT = Path(__file__).resolve().parents[1] / "src" / "dpgamg" / "data"


def point_cloud(n=7, jitter=0.3, seed=7):
    rng = np.random.default_rng(seed)
    t = np.linspace(0.0, 1.0, n)
    X, Y = np.meshgrid(t, t, indexing="ij")
    pts = np.column_stack([X.ravel(), Y.ravel()])
    inner = (pts > 0).all(1) & (pts < 1).all(1)
    pts[inner] += jitter / (n - 1) * rng.uniform(-1, 1, (inner.sum(), 2))
    # move boundary points along their edge so the boundary is irregular too
    for axis in (0, 1):
        on = ((pts[:, axis] == 0) | (pts[:, axis] == 1)) & (pts[:, 1 - axis] > 0) & (pts[:, 1 - axis] < 1)
        pts[on, 1 - axis] += jitter / (n - 1) * rng.uniform(-1, 1, on.sum())
    return pts


def ccw(verts, tris):
    a, b, c = verts[tris[:, 0]], verts[tris[:, 1]], verts[tris[:, 2]]
    area = (b - a)[:, 0] * (c - a)[:, 1] - (b - a)[:, 1] * (c - a)[:, 0]
    tris = tris.copy()
    tris[area < 0] = tris[area < 0][:, [0, 2, 1]]
    return tris


def split_to_quads(verts, tris):
    verts = list(map(tuple, verts))
    index = {}

    def vid(p):
        key = (round(p[0], 14), round(p[1], 14))
        if key not in index:
            index[key] = len(verts)
            verts.append(p)
        return index[key]

    for i, v in enumerate(verts):
        index[(round(v[0], 14), round(v[1], 14))] = i
    quads = []
    V = np.asarray(verts)
    for t in tris:
        P = V[t]
        c = vid(tuple(P.mean(0)))
        m = [vid(tuple(0.5 * (P[j] + P[(j + 1) % 3]))) for j in range(3)]
        for j in range(3):
            quads.append([t[j], m[j], c, m[j - 1]])
    return np.asarray(verts), np.asarray(quads)


def main():
    pts = point_cloud()
    tris = ccw(pts, Delaunay(pts).simplices)
    tri = Mesh(pts, tris, TRI, np.zeros(len(tris), dtype=np.int64))
    qv, quads = split_to_quads(pts, tris)
    quad = Mesh(qv, quads, QUAD, np.zeros(len(quads), dtype=np.int64))
    OUT.mkdir(parents=True, exist_ok=True)
    write_mesh(tri, OUT / "unstructured_tri.mesh2d")
    write_mesh(quad, OUT / "unstructured_quad.mesh2d")
    print(f"triangles: {tri.nelems}, quadrilaterals: {quad.nelems}")


if __name__ == "__main__":
    main()
