"""Per-element algebra of the domain transformation F = id + w.

For P1 displacements the Jacobian DF = I + Dw, its determinant and inverse are
constant per triangle.  The determinant penalty keeps det(DF) above a bound
eta_det; its first derivative is semismooth through the positive part, and an
element of the generalized second derivative uses the active-set indicator
{det(DF) < eta_det}.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .fem import P1Geometry
from .mesh import Mesh

__all__ = [
    "ElementTransform",
    "element_kinematics",
    "element_transform",
    "pushed_gradients",
    "det_penalty",
    "det_penalty_gradient",
    "det_penalty_hessian",
    "det_penalty_hessian_action",
]


@dataclass(frozen=True)
class ElementTransform:
    """DF, det(DF) and (DF)^-1 of a single triangle."""

    DF: np.ndarray
    det: float
    DFinv: np.ndarray


def displacement_gradient(geo: P1Geometry, w: np.ndarray) -> np.ndarray:
    """Constant per-element Jacobian Dw, shape (nt, 2, 2); Dw_ab = d w_a / d x_b."""
    wloc = w[geo.tri]  # (nt, 3, 2)
    return np.einsum("tla,tlb->tab", wloc, geo.grads)


def element_kinematics(geo: P1Geometry, w: np.ndarray):
    """Batched (DF, det, DFinv) for all triangles of the geometry.

    Determinants may be non-positive; the inverse is computed wherever the
    determinant is nonzero (callers decide how to react).  Dtype follows w so
    extended-precision evaluation is possible.
    """
    Dw = displacement_gradient(geo, w)
    DF = Dw.copy()
    DF[:, 0, 0] += 1.0
    DF[:, 1, 1] += 1.0
    det = DF[:, 0, 0] * DF[:, 1, 1] - DF[:, 0, 1] * DF[:, 1, 0]
    inv = np.empty_like(DF)
    safe = np.where(det != 0.0, det, 1.0)
    inv[:, 0, 0] = DF[:, 1, 1] / safe
    inv[:, 1, 1] = DF[:, 0, 0] / safe
    inv[:, 0, 1] = -DF[:, 0, 1] / safe
    inv[:, 1, 0] = -DF[:, 1, 0] / safe
    return DF, det, inv


def element_transform(mesh: Mesh, w: np.ndarray, index: int) -> ElementTransform:
    """Transformation data of one triangle."""
    geo = P1Geometry.build(mesh, np.asarray([index]))
    DF, det, inv = element_kinematics(geo, np.asarray(w, dtype=float))
    return ElementTransform(DF[0], float(det[0]), inv[0])


def pushed_gradients(geo: P1Geometry, DFinv: np.ndarray) -> np.ndarray:
    """(DF)^-T-transformed hat gradients gt[t, l] = DFinv^T grads[t, l].

    These satisfy (Dv DFinv)_ab = sum_l v_l[a] gt_l[b] for nodal fields v.
    """
    return np.einsum("tlr,tra->tla", geo.grads, DFinv)


# -- determinant penalty ----------------------------------------------------------


def _penalty_parts(geo: P1Geometry, w, eta_det):
    _, det, inv = element_kinematics(geo, w)
    gap = eta_det - det
    plus = np.maximum(gap, 0.0)
    active = gap > 0.0  # ties (equality) treated as inactive
    return det, inv, plus, active


def det_penalty(geo: P1Geometry, w: np.ndarray, eta_det: float, beta: float) -> float:
    """(beta/2) * integral of ((eta_det - det DF)_+)^2 over the geometry cells."""
    _, _, plus, _ = _penalty_parts(geo, w, eta_det)
    return 0.5 * beta * float(np.sum(geo.area * plus * plus))


def det_penalty_gradient(geo: P1Geometry, w: np.ndarray, eta_det: float,
                         beta: float) -> np.ndarray:
    """Gradient of det_penalty with respect to the nodal displacement, (nv, 2)."""
    det, inv, plus, _ = _penalty_parts(geo, w, eta_det)
    gt = pushed_gradients(geo, inv)
    coeff = -beta * geo.area * plus * det  # (nt,)
    loc = coeff[:, None, None] * gt  # (nt, 3, 2)
    out = np.zeros_like(np.asarray(w, dtype=loc.dtype))
    np.add.at(out, geo.tri, loc)
    return out


def det_penalty_hessian(geo: P1Geometry, w: np.ndarray, eta_det: float, beta: float,
                        n_vertices: int) -> sp.csr_matrix:
    """Element of the generalized second derivative as a sparse (2nv, 2nv) matrix.

    Per element, with gt the pushed gradients, J the determinant and chi the
    active indicator:

        H[(l,a),(m,c)] = beta*area*[ chi J^2 gt_l[a] gt_m[c]
                                     - (eta-J)_+ J (gt_l[a] gt_m[c] - gt_l[c] gt_m[a]) ]
    """
    det, inv, plus, active = _penalty_parts(geo, w, eta_det)
    gt = pushed_gradients(geo, inv)
    outer = np.einsum("tla,tmc->tlamc", gt, gt)
    swapped = np.einsum("tlc,tma->tlamc", gt, gt)
    coeff1 = beta * geo.area * active * det * det
    coeff2 = beta * geo.area * plus * det
    H = coeff1[:, None, None, None, None] * outer - coeff2[:, None, None, None, None] * (
        outer - swapped
    )
    dof = 2 * geo.tri[:, :, None] + np.arange(2)[None, None, :]  # (nt, 3, 2)
    rows = np.repeat(dof.reshape(len(geo.tri), 6), 6, axis=1).ravel()
    cols = np.tile(dof.reshape(len(geo.tri), 6), (1, 6)).ravel()
    return sp.coo_matrix(
        (H.reshape(len(geo.tri), 36).ravel(), (rows, cols)),
        shape=(2 * n_vertices, 2 * n_vertices),
    ).tocsr()


def det_penalty_hessian_action(geo: P1Geometry, w: np.ndarray, direction: np.ndarray,
                               eta_det: float, beta: float) -> np.ndarray:
    """Generalized-derivative action on a nodal direction field, (nv, 2)."""
    n = len(w)
    H = det_penalty_hessian(geo, w, eta_det, beta, n)
    return (H @ np.asarray(direction, dtype=float).ravel()).reshape(n, 2)
