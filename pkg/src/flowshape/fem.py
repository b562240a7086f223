"""P1 finite-element machinery: quadrature, shape gradients, sparse assembly.

Volume operators are assembled over triangles, curve operators over the
arc-length parameterized obstacle polyline.  All matrices are scipy CSR.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .mesh import Mesh, BoundaryTag, MeshError, obstacle_loop

__all__ = [
    "quadrature_triangle",
    "p1_gradients",
    "P1Geometry",
    "assemble_volume",
    "mass_matrix",
    "stiffness_matrix",
    "CurveOperators",
    "assemble_boundary_curve",
    "apply_dirichlet",
]

# Dunavant rules on the reference triangle in barycentric coordinates.
# Weights are normalized to sum to one (reference measure normalized).
_QUAD_RULES = {
    1: (np.array([[1 / 3, 1 / 3, 1 / 3]]), np.array([1.0])),
    2: (
        np.array(
            [
                [2 / 3, 1 / 6, 1 / 6],
                [1 / 6, 2 / 3, 1 / 6],
                [1 / 6, 1 / 6, 2 / 3],
            ]
        ),
        np.array([1 / 3, 1 / 3, 1 / 3]),
    ),
    4: (
        np.array(
            [
                [0.108103018168070, 0.445948490915965, 0.445948490915965],
                [0.445948490915965, 0.108103018168070, 0.445948490915965],
                [0.445948490915965, 0.445948490915965, 0.108103018168070],
                [0.816847572980459, 0.091576213509771, 0.091576213509771],
                [0.091576213509771, 0.816847572980459, 0.091576213509771],
                [0.091576213509771, 0.091576213509771, 0.816847572980459],
            ]
        ),
        np.array(
            [
                0.223381589678011,
                0.223381589678011,
                0.223381589678011,
                0.109951743655322,
                0.109951743655322,
                0.109951743655322,
            ]
        ),
    ),
}


def quadrature_triangle(order: int):
    """Barycentric points and weights; weights sum to 1; exact to the given degree."""
    if order not in _QUAD_RULES:
        raise ValueError(f"unsupported quadrature order {order}; supported: 1, 2, 4")
    pts, w = _QUAD_RULES[order]
    return pts.copy(), w.copy()


def p1_gradients(coords: np.ndarray) -> np.ndarray:
    """Constant gradients of the three nodal hat functions on one triangle."""
    coords = np.asarray(coords, dtype=float)
    d1 = coords[1] - coords[0]
    d2 = coords[2] - coords[0]
    det = d1[0] * d2[1] - d1[1] * d2[0]
    if det <= 0.0:
        raise MeshError("degenerate or negatively oriented triangle")
    # rows of the inverse Jacobian give the gradients of the barycentric coords
    g1 = np.array([d2[1], -d2[0]]) / det
    g2 = np.array([-d1[1], d1[0]]) / det
    return np.array([-g1 - g2, g1, g2])


@dataclass(frozen=True)
class P1Geometry:
    """Precomputed per-triangle data for vectorized assembly.

    grads[t, l] is the gradient of local hat function l on triangle t; h is the
    longest edge of the reference element (used by the PSPG stabilization).
    """

    tri: np.ndarray        # (nt, 3)
    grads: np.ndarray      # (nt, 3, 2)
    area: np.ndarray       # (nt,)
    h: np.ndarray          # (nt,)
    centroid: np.ndarray   # (nt, 2)

    @classmethod
    def build(cls, mesh: Mesh, cells: np.ndarray | None = None) -> "P1Geometry":
        tri = mesh.triangles if cells is None else mesh.triangles[cells]
        p = mesh.vertices[tri]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
        if np.any(det <= 0.0):
            raise MeshError(f"degenerate triangle {int(np.argmin(det))}")
        g1 = np.column_stack([d2[:, 1], -d2[:, 0]]) / det[:, None]
        g2 = np.column_stack([-d1[:, 1], d1[:, 0]]) / det[:, None]
        grads = np.stack([-g1 - g2, g1, g2], axis=1)
        edges = np.stack(
            [p[:, 1] - p[:, 0], p[:, 2] - p[:, 1], p[:, 0] - p[:, 2]], axis=1
        )
        h = np.linalg.norm(edges, axis=2).max(axis=1)
        return cls(tri, grads, 0.5 * det, h, p.mean(axis=1))

    @property
    def num_triangles(self) -> int:
        return len(self.tri)


def assemble_volume(mesh: Mesh, kernel, n_dofs: int | None = None,
                    cells: np.ndarray | None = None, order: int = 4):
    """Assemble a scalar-field operator sum_T kernel(T) into a CSR matrix.

    ``kernel(tri_coords, grads, area, qpoints, qweights)`` returns the local
    3x3 matrix of one triangle; global dof = vertex index.
    """
    geo = P1Geometry.build(mesh, cells)
    qp, qw = quadrature_triangle(order)
    n = mesh.num_vertices if n_dofs is None else n_dofs
    rows, cols, vals = [], [], []
    for t in range(geo.num_triangles):
        loc = kernel(mesh.vertices[geo.tri[t]], geo.grads[t], geo.area[t], qp, qw)
        idx = geo.tri[t]
        rows.append(np.repeat(idx, 3))
        cols.append(np.tile(idx, 3))
        vals.append(np.asarray(loc, dtype=float).ravel())
    mat = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n, n),
    )
    return mat.tocsr()


def mass_matrix(mesh: Mesh, cells: np.ndarray | None = None) -> sp.csr_matrix:
    """P1 mass matrix over the given cells (all cells by default)."""
    def kernel(coords, grads, area, qp, qw):
        m = np.einsum("q,ql,qm->lm", qw, qp, qp)
        return area * m

    return assemble_volume(mesh, kernel, order=2, cells=cells)


def stiffness_matrix(mesh: Mesh, cells: np.ndarray | None = None) -> sp.csr_matrix:
    """P1 stiffness matrix (homogeneous Laplace) over the given cells."""
    def kernel(coords, grads, area, qp, qw):
        return area * grads @ grads.T

    return assemble_volume(mesh, kernel, order=1, cells=cells)


# -- curve operators on the obstacle polyline -------------------------------------


@dataclass(frozen=True)
class CurveOperators:
    """1D P1 mass/stiffness on the closed obstacle polyline.

    ``loop`` maps curve dof index -> mesh vertex index; matrices are (m, m).
    """

    loop: np.ndarray
    seg_length: np.ndarray      # length of segment (loop[s], loop[s+1])
    mass: sp.csr_matrix
    stiffness: sp.csr_matrix

    @property
    def total_length(self) -> float:
        return float(self.seg_length.sum())


def assemble_boundary_curve(mesh: Mesh, tag: BoundaryTag = BoundaryTag.OBSTACLE) -> CurveOperators:
    """Curve mass and stiffness for the closed polyline with the given tag."""
    if tag != BoundaryTag.OBSTACLE:
        # only the obstacle polyline is closed; other tags are open polylines
        raise MeshError(f"curve assembly requires a closed polyline; tag {tag} is open")
    loop = obstacle_loop(mesh)
    m = len(loop)
    pts = mesh.vertices[loop]
    seg = np.roll(pts, -1, axis=0) - pts
    length = np.linalg.norm(seg, axis=1)
    if np.any(length == 0.0):
        raise MeshError(f"degenerate obstacle segment {int(np.argmin(length))}")
    i = np.arange(m)
    j = (i + 1) % m
    rows = np.concatenate([i, j, i, j])
    cols = np.concatenate([i, j, j, i])
    mvals = np.concatenate([length / 3, length / 3, length / 6, length / 6])
    kvals = np.concatenate([1 / length, 1 / length, -1 / length, -1 / length])
    mass = sp.coo_matrix((mvals, (rows, cols)), shape=(m, m)).tocsr()
    stiff = sp.coo_matrix((kvals, (rows, cols)), shape=(m, m)).tocsr()
    return CurveOperators(loop, length, mass, stiff)


# -- Dirichlet conditions ---------------------------------------------------------


def apply_dirichlet(matrix: sp.spmatrix, rhs: np.ndarray, dofs, values):
    """Impose matrix[d] = e_d, rhs[d] = value by symmetric row/column elimination.

    Returns the modified (csr matrix, rhs).  The eliminated columns are folded
    into the right-hand side so the reduced system stays consistent.
    """
    dofs = np.asarray(dofs, dtype=int)
    values = np.broadcast_to(np.asarray(values, dtype=float), dofs.shape)
    uniq, first = np.unique(dofs, return_index=True)
    if len(uniq) != len(dofs):
        for d in uniq:
            vs = values[dofs == d]
            if np.ptp(vs) > 0.0:
                raise ValueError(f"conflicting Dirichlet values for dof {d}")
        dofs, values = uniq, values[first]
    if len(dofs) == 0:
        return matrix.tocsr(), np.asarray(rhs, dtype=float).copy()
    n = matrix.shape[0]
    A = matrix.tocsc(copy=True)
    rhs = np.asarray(rhs, dtype=float).copy()
    full = np.zeros(n)
    full[dofs] = values
    rhs -= A @ full
    mask = np.ones(n)
    mask[dofs] = 0.0
    D = sp.diags(mask)
    A = D @ A @ D + sp.diags(1.0 - mask)
    rhs[dofs] = values
    return A.tocsr(), rhs
