"""Nested tetrahedral meshes of the unit cube.

The base mesh is the Kuhn triangulation (each of n^3 subcubes split into six
tetrahedra around the main diagonal), which is conforming, quasi-uniform and
fits the boundary exactly. Uniform refinement splits every tetrahedron into
eight children with a fixed interior-diagonal choice, so refined meshes are
nested: the parent vertex set is a prefix of the child vertex set and every
new vertex is the midpoint of a recorded parent edge. `refine_red(build_box_mesh(n))`
reproduces the vertex lattice of `build_box_mesh(2n)`.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp

__all__ = [
    "Mesh",
    "MeshError",
    "NonNestedError",
    "build_box_mesh",
    "refine_red",
    "prolongation_matrix",
    "prolongate",
    "write_mesh",
]

# local vertex pairs defining the six edges of a tetrahedron
_EDGE_LOCAL = np.array([(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)])

# local vertex triples defining the four faces
_FACE_LOCAL = np.array([(1, 2, 3), (0, 2, 3), (0, 1, 3), (0, 1, 2)])


class MeshError(Exception):
    """Invalid mesh topology or geometry."""


class NonNestedError(MeshError):
    """The two meshes are not related by refinement."""


@dataclass(eq=False)
class Mesh:
    vertices: np.ndarray            # (nv, 3) coordinates in [0, 1]^3
    tets: np.ndarray                # (nt, 4) vertex indices, positive orientation
    boundary_mask: np.ndarray       # (nv,) True iff the vertex lies on the cube surface
    level: int                      # refinement count from the base mesh
    h: float                        # max edge length over all tetrahedra
    shape_ratio: float              # max diameter / min inradius
    parent: Optional["Mesh"] = None
    edge_parents: Optional[np.ndarray] = field(default=None, repr=False)
    # (n_new, 2) parent endpoints of each appended midpoint vertex

    @property
    def n_vertices(self):
        return self.vertices.shape[0]

    @property
    def n_tets(self):
        return self.tets.shape[0]

    def tet_volumes(self):
        return _tet_volumes(self.vertices, self.tets)


def _tet_volumes(vertices, tets):
    x = vertices[tets]
    d = x[:, 1:] - x[:, :1]
    return np.linalg.det(d) / 6.0


def _orient_positive(vertices, tets):
    vols = _tet_volumes(vertices, tets)
    flip = vols < 0
    if np.any(flip):
        tets = tets.copy()
        tets[flip, 2], tets[flip, 3] = tets[flip, 3].copy(), tets[flip, 2].copy()
        vols = np.abs(vols)
    if np.any(vols <= 0):
        bad = int(np.argmin(vols))
        raise MeshError(f"degenerate tetrahedron {bad} (volume {vols[bad]:.3e})")
    return tets


def _boundary_mask(vertices):
    return np.any((vertices == 0.0) | (vertices == 1.0), axis=1)


def _mesh_metrics(vertices, tets):
    """Return (h, shape_ratio): longest edge and diameter/inradius bound."""
    x = vertices[tets]
    e = x[:, _EDGE_LOCAL[:, 0]] - x[:, _EDGE_LOCAL[:, 1]]
    edge_len = np.sqrt(np.sum(e * e, axis=2))
    diam = edge_len.max(axis=1)
    vols = np.abs(_tet_volumes(vertices, tets))
    # inradius = 3V / (sum of face areas)
    areas = np.zeros(tets.shape[0])
    for f in _FACE_LOCAL:
        a = x[:, f[1]] - x[:, f[0]]
        b = x[:, f[2]] - x[:, f[0]]
        areas += 0.5 * np.linalg.norm(np.cross(a, b), axis=1)
    inradius = 3.0 * vols / areas
    return float(diam.max()), float(diam.max() / inradius.min())


def build_box_mesh(n: int) -> Mesh:
    """Kuhn triangulation of the unit cube with n subdivisions per axis.

    Produces (n+1)^3 vertices and 6*n^3 tetrahedra with h = sqrt(3)/n.
    """
    if not isinstance(n, (int, np.integer)) or n < 1:
        raise ValueError(f"subdivisions per axis must be a positive integer, got {n!r}")

    grid = np.arange(n + 1) / n
    xs, ys, zs = np.meshgrid(grid, grid, grid, indexing="ij")
    vertices = np.column_stack([xs.ravel(), ys.ravel(), zs.ravel()])

    def vid(ix, iy, iz):
        return (ix * (n + 1) + iy) * (n + 1) + iz

    corners = np.arange(n)
    ix, iy, iz = np.meshgrid(corners, corners, corners, indexing="ij")
    ix, iy, iz = ix.ravel(), iy.ravel(), iz.ravel()

    tet_list = []
    for perm in itertools.permutations((0, 1, 2)):
        steps = np.zeros((4, 3), dtype=np.int64)
        for k, axis in enumerate(perm):
            steps[k + 1] = steps[k]
            steps[k + 1, axis] += 1
        cols = [
            vid(ix + dx, iy + dy, iz + dz) for dx, dy, dz in steps
        ]
        tet_list.append(np.column_stack(cols))
    tets = np.vstack(tet_list)
    tets = _orient_positive(vertices, tets)

    h, ratio = _mesh_metrics(vertices, tets)
    return Mesh(
        vertices=vertices,
        tets=tets,
        boundary_mask=_boundary_mask(vertices),
        level=0,
        h=h,
        shape_ratio=ratio,
    )


def _unique_edges(tets):
    """All mesh edges as sorted vertex pairs plus the tet->edge index map."""
    pairs = tets[:, _EDGE_LOCAL].reshape(-1, 2)
    pairs = np.sort(pairs, axis=1)
    edges, inverse = np.unique(pairs, axis=0, return_inverse=True)
    t2e = inverse.reshape(-1, 6)
    return edges, t2e


# for each octahedron diagonal (an opposite midpoint pair), the remaining
# four midpoints in cyclic order around it; indices into (m01, m02, m03,
# m12, m13, m23)
_DIAGONALS = ((0, 5), (1, 4), (2, 3))
_CYCLES = ((1, 2, 4, 3), (0, 2, 5, 3), (0, 1, 5, 4))


def refine_red(mesh: Mesh) -> Mesh:
    """Split every tetrahedron into eight children: four corner copies plus
    four around the shortest diagonal of the interior octahedron.

    The diagonal is interior to its parent, so the choice never breaks
    conformity; taking the shortest one keeps the similarity classes of the
    family bounded and reproduces Kuhn triangulations at half mesh size
    (h halves exactly). Ties break on a fixed diagonal order.
    """
    edges, t2e = _unique_edges(mesh.tets)
    nv = mesh.n_vertices
    midpoints = 0.5 * (mesh.vertices[edges[:, 0]] + mesh.vertices[edges[:, 1]])
    vertices = np.vstack([mesh.vertices, midpoints])

    v = mesh.tets.T
    m = (t2e + nv).T  # midpoint ids in edge order (01, 02, 03, 12, 13, 23)

    diag_len = np.stack([
        np.sum((vertices[m[a]] - vertices[m[b]]) ** 2, axis=1)
        for a, b in _DIAGONALS
    ])
    choice = np.argmin(diag_len, axis=0)

    corner = [
        (v[0], m[0], m[1], m[2]),
        (m[0], v[1], m[3], m[4]),
        (m[1], m[3], v[2], m[5]),
        (m[2], m[4], m[5], v[3]),
    ]
    blocks = [np.column_stack(c) for c in corner]
    for d, ((a, b), cyc) in enumerate(zip(_DIAGONALS, _CYCLES)):
        sel = choice == d
        if not np.any(sel):
            continue
        for i in range(4):
            q1, q2 = cyc[i], cyc[(i + 1) % 4]
            blocks.append(np.column_stack(
                (m[a][sel], m[b][sel], m[q1][sel], m[q2][sel])
            ))
    tets = np.vstack(blocks)
    tets = _orient_positive(vertices, tets)

    h, ratio = _mesh_metrics(vertices, tets)
    return Mesh(
        vertices=vertices,
        tets=tets,
        boundary_mask=_boundary_mask(vertices),
        level=mesh.level + 1,
        h=h,
        shape_ratio=ratio,
        parent=mesh,
        edge_parents=edges,
    )


def _refinement_chain(coarse: Mesh, fine: Mesh):
    chain = []
    node = fine
    while node is not coarse:
        if node.parent is None:
            raise NonNestedError(
                f"mesh at level {fine.level} is not a refinement of level {coarse.level}"
            )
        chain.append(node)
        node = node.parent
    chain.reverse()
    return chain


def prolongation_matrix(coarse: Mesh, fine: Mesh) -> sp.csr_matrix:
    """Sparse nodal interpolation operator from coarse to fine vertices.

    Exact for piecewise-linear functions because the meshes are nested.
    """
    chain = _refinement_chain(coarse, fine)
    op = sp.identity(coarse.n_vertices, format="csr")
    for child in chain:
        nv_old = child.parent.n_vertices
        n_new = child.n_vertices - nv_old
        rows = np.concatenate([np.arange(nv_old), np.repeat(np.arange(nv_old, child.n_vertices), 2)])
        cols = np.concatenate([np.arange(nv_old), child.edge_parents.ravel()])
        vals = np.concatenate([np.ones(nv_old), np.full(2 * n_new, 0.5)])
        step = sp.csr_matrix((vals, (rows, cols)), shape=(child.n_vertices, nv_old))
        op = step @ op
    return op.tocsr()


def prolongate(coarse: Mesh, fine: Mesh, values: np.ndarray) -> np.ndarray:
    """Interpolate nodal values from a coarse mesh onto a nested refinement.

    `values` holds one value per coarse vertex (boundary nodes included);
    the result is pointwise equal to the coarse piecewise-linear function.
    """
    values = np.asarray(values, dtype=float)
    if values.shape != (coarse.n_vertices,):
        raise ValueError(
            f"expected {coarse.n_vertices} nodal values, got shape {values.shape}"
        )
    return prolongation_matrix(coarse, fine) @ values


def validate(mesh: Mesh):
    """Structural conformity checks; raises MeshError on violation."""
    vols = mesh.tet_volumes()
    if np.any(vols <= 0):
        raise MeshError("non-positive tetrahedron volume")
    faces = np.sort(mesh.tets[:, _FACE_LOCAL].reshape(-1, 3), axis=1)
    _, counts = np.unique(faces, axis=0, return_counts=True)
    if counts.max() > 2:
        raise MeshError("face shared by more than two tetrahedra")
    # every face shared once must lie on the cube surface
    uniq, idx, counts = np.unique(faces, axis=0, return_counts=True, return_index=True)
    outer = uniq[counts == 1]
    coords = mesh.vertices[outer]  # (nf, 3, 3)
    on_plane = ((coords == 0.0) | (coords == 1.0)).all(axis=1).any(axis=1)
    if not np.all(on_plane):
        raise MeshError("boundary face not on the cube surface")
    expected = _boundary_mask(mesh.vertices)
    if not np.array_equal(expected, mesh.boundary_mask):
        raise MeshError("boundary mask inconsistent with vertex coordinates")


def write_mesh(mesh: Mesh, path):
    """Plain-text dump: header 'vertices <N> tets <M>', N lines 'x y z b',
    M lines of four 0-based vertex indices."""
    with open(path, "w") as f:
        f.write(f"vertices {mesh.n_vertices} tets {mesh.n_tets}\n")
        for p, b in zip(mesh.vertices, mesh.boundary_mask):
            f.write(f"{float(p[0])!r} {float(p[1])!r} {float(p[2])!r} {int(b)}\n")
        for t in mesh.tets:
            f.write(f"{t[0]} {t[1]} {t[2]} {t[3]}\n")
