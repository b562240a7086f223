"""Shared per-element term engine for the coupled optimality system.

Every functional of the problem -- dissipation, control regularization,
determinant penalty, the state/extension/boundary constraint pairings and the
geometric constraints -- has a closed-form element integral for P1 fields,
because the transformation data (DF)^-1 and det(DF) are constant per triangle.
This module evaluates the total value, the gradient with respect to every
variable block, and all second-derivative blocks, from one set of shared
per-element arrays.  The flow and KKT solvers are thin wrappers around these
routines, which keeps the state equation, the adjoint equation and the coupled
Newton matrix consistent by construction.

Conventions: a displacement dof is a pair (vertex m, component c); for a unit
perturbation of that dof the transformation derivatives are

    d det(DF)        =  det(DF) * gt_m[c]
    d gt_l[a]        = -gt_l[c] * gt_m[a]
    d (DF)^-1[r, s]  = -(DF)^-1[r, c] * gt_m[s]

with gt the pushed gradients of transform.pushed_gradients.  The Hessian
formulas below follow from these by the product rule; each is symmetric under
exchange of the two dofs, which the assembled matrix inherits.
"""

from __future__ import annotations

from dataclasses import dataclass
from types import SimpleNamespace

import numpy as np
import scipy.sparse as sparse

from .fem import P1Geometry, CurveOperators, assemble_boundary_curve
from .mesh import BoundaryTag, Mesh, boundary_normals
from .transform import (element_kinematics, pushed_gradients,
                        det_penalty_gradient, det_penalty_hessian)

__all__ = ["Spaces", "block_sizes", "zero_blocks", "total_value",
           "gradient_blocks", "hessian_blocks"]

# integral of phi_l phi_m over a triangle is area * S12[l, m]
_S12 = np.array([[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]]) / 12.0

BLOCK_NAMES = ("w", "v", "p", "b", "c", "lam_w", "lam_v", "lam_p", "lam_b",
               "lam_vol", "lam_bc")


@dataclass(frozen=True)
class Spaces:
    """Fixed discrete structure shared by all evaluations on one mesh.

    geo_fluid covers the flow domain; geo_ext covers the extension domain,
    which additionally includes the obstacle interior when the mesh discretizes
    the full holdall.  The stored first moment makes the barycenter residual
    vanish exactly at w = 0.
    """

    mesh: Mesh
    geo_fluid: P1Geometry
    geo_ext: P1Geometry
    curve: CurveOperators | None
    normals: np.ndarray       # (m, 2) nodal normals along the obstacle loop
    moment: np.ndarray        # (2,) first moment of the undeformed fluid domain

    @classmethod
    def build(cls, mesh: Mesh) -> "Spaces":
        geo_fluid = P1Geometry.build(mesh, mesh.fluid_cells)
        geo_ext = P1Geometry.build(mesh) if mesh.is_holdall else geo_fluid
        has_obstacle = np.any(mesh.segment_tags == BoundaryTag.OBSTACLE)
        curve = assemble_boundary_curve(mesh) if has_obstacle else None
        normals = (boundary_normals(mesh) if has_obstacle
                   else np.empty((0, 2)))
        moment = (geo_fluid.area[:, None] * geo_fluid.centroid).sum(axis=0)
        return cls(mesh, geo_fluid, geo_ext, curve, normals, moment)

    @property
    def num_loop(self) -> int:
        return 0 if self.curve is None else len(self.curve.loop)


def block_sizes(spaces: Spaces) -> dict:
    nv = spaces.mesh.num_vertices
    m = spaces.num_loop
    return {"w": 2 * nv, "v": 2 * nv, "p": nv, "b": 2 * m, "c": m,
            "lam_w": 2 * nv, "lam_v": 2 * nv, "lam_p": nv, "lam_b": 2 * m,
            "lam_vol": 1, "lam_bc": 2}


def zero_blocks(spaces: Spaces, dtype=float) -> dict:
    nv = spaces.mesh.num_vertices
    m = spaces.num_loop
    return {"w": np.zeros((nv, 2), dtype), "v": np.zeros((nv, 2), dtype),
            "p": np.zeros(nv, dtype), "b": np.zeros((m, 2), dtype),
            "c": np.zeros(m, dtype), "lam_w": np.zeros((nv, 2), dtype),
            "lam_v": np.zeros((nv, 2), dtype), "lam_p": np.zeros(nv, dtype),
            "lam_b": np.zeros((m, 2), dtype), "lam_vol": np.zeros(1, dtype),
            "lam_bc": np.zeros(2, dtype)}


# -- per-element working arrays ---------------------------------------------------


def _fluid_frame(spaces: Spaces, z: dict) -> SimpleNamespace:
    geo = spaces.geo_fluid
    tri = geo.tri
    _, J, A = element_kinematics(geo, z["w"])
    g = pushed_gradients(geo, A)                       # (t, l, a)
    vloc, lvloc = z["v"][tri], z["lam_v"][tri]
    ploc, lploc = z["p"][tri], z["lam_p"][tri]
    M = np.einsum("tla,tlb->tab", vloc, g)             # Dv (DF)^-1
    N = np.einsum("tla,tlb->tab", lvloc, g)
    gradp = np.einsum("tl,tla->ta", ploc, geo.grads)
    gradlp = np.einsum("tl,tla->ta", lploc, geo.grads)
    return SimpleNamespace(
        geo=geo, tri=tri, area=geo.area, h=geo.h, J=J, A=A, g=g,
        vloc=vloc, lvloc=lvloc, ploc=ploc, lploc=lploc, M=M, N=N,
        trM=M[:, 0, 0] + M[:, 1, 1], trN=N[:, 0, 0] + N[:, 1, 1],
        pbar=ploc.mean(axis=1), lpbar=lploc.mean(axis=1),
        gradp=gradp, gradlp=gradlp,
        ghp=np.einsum("tab,tb->ta", A, gradp),         # (DF)^-1 grad p
        ghlp=np.einsum("tab,tb->ta", A, gradlp),
        wbar=z["w"][tri].mean(axis=1),
    )


def _ext_frame(spaces: Spaces, z: dict) -> SimpleNamespace:
    geo = spaces.geo_ext
    tri = geo.tri
    wloc = z["w"][tri]
    lwloc = z["lam_w"][tri]
    Dw = np.einsum("tla,tlb->tab", wloc, geo.grads)
    Dlw = np.einsum("tla,tlb->tab", lwloc, geo.grads)
    J = (1.0 + Dw[:, 0, 0]) * (1.0 + Dw[:, 1, 1]) - Dw[:, 0, 1] * Dw[:, 1, 0]
    return SimpleNamespace(geo=geo, tri=tri, area=geo.area, G=geo.grads,
                           wloc=wloc, lwloc=lwloc, Dw=Dw, Dlw=Dlw, J=J)


def _scalar(value) -> float:
    """Accept a bare float or a length-one array for the volume multiplier."""
    return float(np.ravel(value)[0]) if np.ndim(value) else float(value)


def _curve_mass_pair(seg_length, u, v):
    """integral of u.v along the closed polyline, both nodal P1 fields."""
    u = u[:, None] if u.ndim == 1 else u
    v = v[:, None] if v.ndim == 1 else v
    u2 = np.roll(u, -1, axis=0)
    v2 = np.roll(v, -1, axis=0)
    s = seg_length[:, None]
    return np.sum(s / 6.0 * (2.0 * u * v + 2.0 * u2 * v2 + u * v2 + u2 * v))


def _curve_stiff_pair(seg_length, u, v):
    du = np.roll(u, -1, axis=0) - u
    dv = np.roll(v, -1, axis=0) - v
    return np.sum(du * dv / seg_length[:, None])


# -- value ------------------------------------------------------------------------


def total_value(spaces: Spaces, params, z: dict):
    """Scalar value of the full functional; dtype follows the input blocks.

    With extended-precision input blocks the whole evaluation stays in that
    precision, which finite-difference verification of the gradient relies on
    at small steps.
    """
    f = _fluid_frame(spaces, z)
    e = _ext_frame(spaces, z)
    nu, mu = params.nu, params.mu
    area = f.area

    MM = np.einsum("tab,tab->t", f.M, f.M)
    MN = np.einsum("tab,tab->t", f.M, f.N)
    Mv = np.einsum("tab,tlb->tla", f.M, f.vloc)
    conv = area * np.einsum("lm,tla,tma->t", _S12, Mv, f.lvloc)

    val = 0.5 * nu * np.sum(area * f.J * MM)
    val -= np.sum(nu * area * f.J * MN + f.J * conv - area * f.J * f.pbar * f.trN)
    val += np.sum(area * f.J * f.lpbar * f.trM)
    val += mu * np.sum(f.h * f.h * area * np.einsum("ta,ta->t", f.ghp, f.ghlp))

    # determinant penalty over the extension domain
    plus = np.maximum(params.eta_det - e.J, 0.0)
    val += 0.5 * params.beta * np.sum(e.area * plus * plus)

    # extension constraint pairing
    sym = e.Dw + np.swapaxes(e.Dw, 1, 2)
    Dww = np.einsum("tab,tlb->tla", e.Dw, e.wloc)
    val -= np.sum(e.area * np.einsum("tab,tab->t", sym, e.Dlw))
    val -= params.eta_ext * np.sum(
        e.area * np.einsum("lm,tla,tma->t", _S12, Dww, e.lwloc))

    # boundary pairings on the obstacle loop
    if spaces.curve is not None:
        seg = spaces.curve.seg_length
        lw_loop = z["lam_w"][spaces.curve.loop]
        val += _curve_mass_pair(seg, z["b"], lw_loop)
        val += 0.5 * params.alpha * _curve_mass_pair(seg, z["c"], z["c"])
        val -= _curve_mass_pair(seg, z["b"], z["lam_b"])
        val -= _curve_stiff_pair(seg, z["b"], z["lam_b"])
        val += _curve_mass_pair(seg, z["c"][:, None] * spaces.normals,
                                z["lam_b"])

    # geometric constraints (fluid domain)
    cent = f.geo.centroid + f.wbar
    bary = np.einsum("t,ta->a", area * f.J, cent) - spaces.moment
    val -= z["lam_bc"] @ bary
    val -= _scalar(z["lam_vol"]) * np.sum(area * (f.J - 1.0))
    return val


# -- gradient ---------------------------------------------------------------------


def gradient_blocks(spaces: Spaces, params, z: dict) -> dict:
    """All eleven first-derivative blocks, without boundary conditions."""
    f = _fluid_frame(spaces, z)
    e = _ext_frame(spaces, z)
    nu, mu = params.nu, params.mu
    out = zero_blocks(spaces)
    area, J, g, h = f.area, f.J, f.g, f.h
    aJ = area * J
    mh2 = mu * h * h * area

    MM = np.einsum("tab,tab->t", f.M, f.M)
    MN = np.einsum("tab,tab->t", f.M, f.N)
    K = np.einsum("tab,tac->tbc", f.M, f.M)
    B = np.einsum("tab,tac->tbc", f.M, f.N) + np.einsum("tab,tac->tbc", f.N, f.M)
    Mv = np.einsum("tab,tlb->tla", f.M, f.vloc)
    conv = area * np.einsum("lm,tla,tma->t", _S12, Mv, f.lvloc)
    P = area[:, None, None] * np.einsum("lm,tla,tmb->tab", _S12, f.vloc, f.lvloc)
    R = np.einsum("tab,tbc->tac", P, f.M)
    Kg = np.einsum("tbc,tmb->tmc", K, g)
    Bg = np.einsum("tbc,tmb->tmc", B, g)
    Rg = np.einsum("trc,tmr->tmc", R, g)
    Mg = np.einsum("tab,tnb->tna", f.M, g)      # (M gt_n)[a]
    Ng = np.einsum("tab,tnb->tna", f.N, g)
    MTg = np.einsum("tac,tma->tmc", f.M, g)     # (M^T gt_m)[c]
    NTg = np.einsum("tac,tma->tmc", f.N, g)
    sgp = np.einsum("tma,ta->tm", g, f.gradp)
    sglp = np.einsum("tma,ta->tm", g, f.gradlp)
    agp = np.einsum("trc,tr->tc", f.A, f.ghp)   # (DF)^-1[:, c] . ghp
    aglp = np.einsum("trc,tr->tc", f.A, f.ghlp)
    AG = np.einsum("trs,tls->tlr", f.A, f.geo.grads)

    # displacement block, fluid terms
    gw = aJ[:, None, None] * (
        nu * (0.5 * MM[:, None, None] * g - Kg)
        + nu * (Bg - MN[:, None, None] * g)
        + f.pbar[:, None, None] * (f.trN[:, None, None] * g - NTg)
        + f.lpbar[:, None, None] * (f.trM[:, None, None] * g - MTg))
    gw += J[:, None, None] * Rg - (J * conv)[:, None, None] * g
    gw -= mh2[:, None, None] * (np.einsum("tm,tc->tmc", sgp, aglp)
                                + np.einsum("tm,tc->tmc", sglp, agp))
    lbcw = np.einsum("a,ta->t", z["lam_bc"], f.geo.centroid + f.wbar)
    gw -= (area * J * lbcw)[:, None, None] * g
    gw -= (area * J / 3.0)[:, None, None] * z["lam_bc"][None, None, :]
    gw -= _scalar(z["lam_vol"]) * aJ[:, None, None] * g
    np.add.at(out["w"], f.tri, gw)

    # displacement block, extension terms (symmetrized gradient + advection)
    Dlw_sym = e.Dlw + np.swapaxes(e.Dlw, 1, 2)
    Pw = e.area[:, None, None] * np.einsum("lm,tla,tmb->tab", _S12, e.wloc, e.lwloc)
    Lam = e.area[:, None, None] * np.einsum("mn,tnb->tmb", _S12, e.lwloc)
    gwe = -e.area[:, None, None] * np.einsum("tcb,tmb->tmc", Dlw_sym, e.G)
    gwe -= params.eta_ext * (np.einsum("trc,tmr->tmc", Pw, e.G)
                             + np.einsum("tac,tma->tmc", e.Dw, Lam))
    np.add.at(out["w"], e.tri, gwe)
    out["w"] += det_penalty_gradient(spaces.geo_ext, z["w"], params.eta_det,
                                     params.beta)

    # velocity block
    gv = aJ[:, None, None] * (nu * (Mg - Ng) + f.lpbar[:, None, None] * g)
    Mtlam = np.einsum("tba,tkb->tka", f.M, f.lvloc)
    gv -= J[:, None, None] * (
        np.einsum("tnr,tra->tna", g, P)
        + area[:, None, None] * np.einsum("nk,tka->tna", _S12, Mtlam))
    np.add.at(out["v"], f.tri, gv)

    # pressure block
    gp = np.repeat((aJ * f.trN / 3.0)[:, None], 3, axis=1)
    gp += mh2[:, None] * np.einsum("tnr,tr->tn", AG, f.ghlp)
    np.add.at(out["p"], f.tri, gp)

    # adjoint velocity block (the state momentum equation)
    glv = -nu * aJ[:, None, None] * Mg
    glv -= (J * area)[:, None, None] * np.einsum("ln,tla->tna", _S12, Mv)
    glv += aJ[:, None, None] * f.pbar[:, None, None] * g
    np.add.at(out["lam_v"], f.tri, glv)

    # adjoint pressure block (the state continuity equation with stabilization)
    glp = np.repeat((aJ * f.trM / 3.0)[:, None], 3, axis=1)
    glp += mh2[:, None] * np.einsum("tnr,tr->tn", AG, f.ghp)
    np.add.at(out["lam_p"], f.tri, glp)

    # adjoint displacement block (the extension equation)
    Dw_sym = e.Dw + np.swapaxes(e.Dw, 1, 2)
    W = e.area[:, None, None] * np.einsum("nl,tlb->tnb", _S12, e.wloc)
    glw = -e.area[:, None, None] * np.einsum("tab,tnb->tna", Dw_sym, e.G)
    glw -= params.eta_ext * np.einsum("tab,tnb->tna", e.Dw, W)
    np.add.at(out["lam_w"], e.tri, glw)

    # boundary blocks on the obstacle loop
    if spaces.curve is not None:
        loop = spaces.curve.loop
        Mc, Kc = spaces.curve.mass, spaces.curve.stiffness
        out["lam_w"][loop] += Mc @ z["b"]
        out["b"] = Mc @ z["lam_w"][loop] - (Mc + Kc) @ z["lam_b"]
        out["c"] = params.alpha * (Mc @ z["c"]) + np.einsum(
            "ma,ma->m", spaces.normals, Mc @ z["lam_b"])
        out["lam_b"] = -(Mc + Kc) @ z["b"] + Mc @ (
            z["c"][:, None] * spaces.normals)

    # geometric constraint residuals
    cent = f.geo.centroid + f.wbar
    out["lam_bc"] = -(np.einsum("t,ta->a", aJ, cent) - spaces.moment)
    out["lam_vol"] = -np.array([np.sum(area * (J - 1.0))])
    return out


# -- Hessian ----------------------------------------------------------------------


def _vdofs(tri):
    return (2 * tri[:, :, None] + np.arange(2)[None, None, :]).reshape(len(tri), 6)


def _scatter(loc, rows, cols, nr, nc) -> sparse.coo_matrix:
    t, R, C = loc.shape
    r = np.repeat(rows, C, axis=1).ravel()
    c = np.tile(cols, (1, R)).ravel()
    return sparse.coo_matrix((loc.reshape(t, R * C).ravel(), (r, c)),
                             shape=(nr, nc))


def _wpat(g, antiJ, s, Y, X=None, gg=None):
    """Recurring displacement-Hessian pattern of J-weighted invariants.

    Second derivative of J*s for scalars s whose dof-derivative is -(Y_m)[c],
    optionally with the extra quadratic coupling X[c,d] (gt_m . gt_n).
    """
    out = antiJ * s[:, None, None, None, None]
    out -= np.einsum("tmc,tnd->tmcnd", g, Y) + np.einsum("tnd,tmc->tmcnd", g, Y)
    out += np.einsum("tnc,tmd->tmcnd", g, Y) + np.einsum("tmd,tnc->tmcnd", g, Y)
    if X is not None:
        out += np.einsum("tcd,tmn->tmcnd", X, gg)
    return out


def hessian_blocks(spaces: Spaces, params, z: dict) -> dict:
    """Second-derivative blocks as sparse matrices keyed by block-name pairs.

    Only one triangle of the block structure is produced; the assembled system
    matrix places each off-diagonal block together with its transpose.  The
    penalty contribution uses the generalized derivative with the active set
    {det(DF) < eta_det} (ties inactive), making the result an element of the
    generalized Jacobian of the gradient.
    """
    f = _fluid_frame(spaces, z)
    e = _ext_frame(spaces, z)
    nu, mu = params.nu, params.mu
    nvert = spaces.mesh.num_vertices
    sizes = block_sizes(spaces)
    area, J, g, h = f.area, f.J, f.g, f.h
    aJ = area * J
    mh2 = mu * h * h * area
    eye = np.eye(2)

    MM = np.einsum("tab,tab->t", f.M, f.M)
    MN = np.einsum("tab,tab->t", f.M, f.N)
    K = np.einsum("tab,tac->tbc", f.M, f.M)
    B = np.einsum("tab,tac->tbc", f.M, f.N) + np.einsum("tab,tac->tbc", f.N, f.M)
    Mv = np.einsum("tab,tlb->tla", f.M, f.vloc)
    conv = area * np.einsum("lm,tla,tma->t", _S12, Mv, f.lvloc)
    P = area[:, None, None] * np.einsum("lm,tla,tmb->tab", _S12, f.vloc, f.lvloc)
    R = np.einsum("tab,tbc->tac", P, f.M)
    gg = np.einsum("tma,tna->tmn", g, g)
    Kg = np.einsum("tbc,tmb->tmc", K, g)
    Bg = np.einsum("tbc,tmb->tmc", B, g)
    Rg = np.einsum("trc,tmr->tmc", R, g)
    Mg = np.einsum("tab,tnb->tna", f.M, g)
    Ng = np.einsum("tab,tnb->tna", f.N, g)
    MTg = np.einsum("tac,tma->tmc", f.M, g)
    NTg = np.einsum("tac,tma->tmc", f.N, g)
    sgp = np.einsum("tma,ta->tm", g, f.gradp)
    sglp = np.einsum("tma,ta->tm", g, f.gradlp)
    agp = np.einsum("trc,tr->tc", f.A, f.ghp)
    aglp = np.einsum("trc,tr->tc", f.A, f.ghlp)
    T = np.einsum("tra,trb->tab", f.A, f.A)
    AG = np.einsum("trs,tls->tlr", f.A, f.geo.grads)
    TG = np.einsum("tcs,tns->tnc", T, f.geo.grads)
    gG = np.einsum("tma,tna->tmn", g, f.geo.grads)
    antiJ = (np.einsum("tmc,tnd->tmcnd", g, g)
             - np.einsum("tmd,tnc->tmcnd", g, g))

    blocks = {}
    fdofs = _vdofs(f.tri)
    ftri = f.tri
    edofs = _vdofs(e.tri)

    # -- (w, w): every J-carrying term plus stabilization, advection, penalty
    Hww = 0.5 * nu * _wpat(g, antiJ, MM, 2.0 * Kg, 2.0 * K, gg)
    Hww -= nu * _wpat(g, antiJ, MN, Bg, B, gg)
    Hww += f.pbar[:, None, None, None, None] * _wpat(g, antiJ, f.trN, NTg)
    Hww += f.lpbar[:, None, None, None, None] * _wpat(g, antiJ, f.trM, MTg)
    Hww *= aJ[:, None, None, None, None]
    Hww -= J[:, None, None, None, None] * _wpat(g, antiJ, conv, Rg)
    lbcw = np.einsum("a,ta->t", z["lam_bc"], f.geo.centroid + f.wbar)
    shape5 = Hww.shape
    Hww -= (area * J * lbcw)[:, None, None, None, None] * antiJ
    Hww -= (area * J / 3.0)[:, None, None, None, None] * (
        np.broadcast_to(np.einsum("tmc,d->tmcd", g, z["lam_bc"])
                        [:, :, :, None, :], shape5)
        + np.broadcast_to(np.einsum("tnd,c->tcnd", g, z["lam_bc"])
                          [:, None, :, :, :], shape5))
    Hww -= _scalar(z["lam_vol"]) * aJ[:, None, None, None, None] * antiJ
    Hww += mh2[:, None, None, None, None] * (
        np.einsum("tmd,tn,tc->tmcnd", g, sgp, aglp)
        + np.einsum("tnc,tm,td->tmcnd", g, sgp, aglp)
        + np.einsum("tm,tn,tcd->tmcnd", sgp, sglp, T)
        + np.einsum("tm,tn,tcd->tmcnd", sglp, sgp, T)
        + np.einsum("tmd,tn,tc->tmcnd", g, sglp, agp)
        + np.einsum("tnc,tm,td->tmcnd", g, sglp, agp))
    ww = _scatter(Hww.reshape(-1, 6, 6), fdofs, fdofs, sizes["w"], sizes["w"])

    Lam = e.area[:, None, None] * np.einsum("mn,tnb->tmb", _S12, e.lwloc)
    Hwwe = -params.eta_ext * (np.einsum("tmd,tnc->tmcnd", e.G, Lam)
                              + np.einsum("tnc,tmd->tmcnd", e.G, Lam))
    ww = ww + _scatter(Hwwe.reshape(-1, 6, 6), edofs, edofs,
                       sizes["w"], sizes["w"])
    blocks[("w", "w")] = ww.tocsr() + det_penalty_hessian(
        spaces.geo_ext, z["w"], params.eta_det, params.beta, nvert)

    # -- (w, v)
    Hwv = nu * (np.einsum("tmc,tna->tmcna", g, Mg)
                - np.einsum("tac,tmn->tmcna", f.M, gg)
                - np.einsum("tnc,tma->tmcna", g, Mg))
    Hwv -= nu * (np.einsum("tmc,tna->tmcna", g, Ng)
                 - np.einsum("tac,tmn->tmcna", f.N, gg)
                 - np.einsum("tnc,tma->tmcna", g, Ng))
    Hwv += f.lpbar[:, None, None, None, None] * (
        np.einsum("tmc,tna->tmcna", g, g) - np.einsum("tnc,tma->tmcna", g, g))
    Hwv *= aJ[:, None, None, None, None]
    gP = np.einsum("tnr,tra->tna", g, P)
    Mtlam = np.einsum("tba,tkb->tka", f.M, f.lvloc)
    Q1 = area[:, None, None] * np.einsum("nk,tka->tna", _S12, Mtlam)
    Hwv += J[:, None, None, None, None] * (
        np.einsum("tnc,tma->tmcna", g, gP) - np.einsum("tmc,tna->tmcna", g, gP)
        + np.einsum("tma,tnc->tmcna", g, Q1)
        - np.einsum("tmc,tna->tmcna", g, Q1))
    blocks[("w", "v")] = _scatter(Hwv.reshape(-1, 6, 6), fdofs, fdofs,
                                  sizes["w"], sizes["v"])

    # -- (w, lam_v)
    Hwl = -nu * aJ[:, None, None, None, None] * (
        np.einsum("tmc,tna->tmcna", g, Mg)
        - np.einsum("tac,tmn->tmcna", f.M, gg)
        - np.einsum("tnc,tma->tmcna", g, Mg))
    Q3 = area[:, None, None] * np.einsum("ln,tla->tna", _S12, Mv)
    gv_ = np.einsum("tla,tma->tlm", f.vloc, g)
    Q5 = area[:, None, None] * np.einsum("ln,tlm->tnm", _S12, gv_)
    Hwl += J[:, None, None, None, None] * (
        np.einsum("tac,tnm->tmcna", f.M, Q5)
        - np.einsum("tmc,tna->tmcna", g, Q3))
    Hwl += (aJ * f.pbar)[:, None, None, None, None] * (
        np.einsum("tmc,tna->tmcna", g, g) - np.einsum("tnc,tma->tmcna", g, g))
    blocks[("w", "lam_v")] = _scatter(Hwl.reshape(-1, 6, 6), fdofs, fdofs,
                                      sizes["w"], sizes["lam_v"])

    # -- (w, p) and (w, lam_p)
    Hwp = np.repeat(((aJ[:, None, None] / 3.0)
                     * (f.trN[:, None, None] * g - NTg))[:, :, :, None],
                    3, axis=3)
    Hwp -= mh2[:, None, None, None] * (
        np.einsum("tmn,tc->tmcn", gG, aglp)
        + np.einsum("tm,tnc->tmcn", sglp, TG))
    blocks[("w", "p")] = _scatter(Hwp.reshape(-1, 6, 3), fdofs, ftri,
                                  sizes["w"], sizes["p"])
    Hwlp = np.repeat(((aJ[:, None, None] / 3.0)
                      * (f.trM[:, None, None] * g - MTg))[:, :, :, None],
                     3, axis=3)
    Hwlp -= mh2[:, None, None, None] * (
        np.einsum("tmn,tc->tmcn", gG, agp)
        + np.einsum("tm,tnc->tmcn", sgp, TG))
    blocks[("w", "lam_p")] = _scatter(Hwlp.reshape(-1, 6, 3), fdofs, ftri,
                                      sizes["w"], sizes["lam_p"])

    # -- (w, lam_w): the extension linearization
    ggG = np.einsum("tma,tna->tmn", e.G, e.G)
    W = e.area[:, None, None] * np.einsum("nl,tlb->tnb", _S12, e.wloc)
    WG = np.einsum("tnb,tmb->tmn", W, e.G)
    aS12 = e.area[:, None, None] * _S12[None, :, :]
    Hwlw = -e.area[:, None, None, None, None] * (
        np.einsum("tmn,ca->tmcna", ggG, eye)
        + np.einsum("tma,tnc->tmcna", e.G, e.G))
    Hwlw -= params.eta_ext * (np.einsum("tmn,ca->tmcna", WG, eye)
                              + np.einsum("tmn,tac->tmcna", aS12, e.Dw))
    blocks[("w", "lam_w")] = _scatter(Hwlw.reshape(-1, 6, 6), edofs, edofs,
                                      sizes["w"], sizes["lam_w"])

    # -- (w, lam_vol) and (w, lam_bc)
    blocks[("w", "lam_vol")] = _scatter(
        -(aJ[:, None, None] * g).reshape(-1, 6, 1), fdofs,
        np.zeros((len(ftri), 1), dtype=int), sizes["w"], 1)
    cent = f.geo.centroid + f.wbar
    Hwbc = -(area[:, None, None, None]
             * (np.einsum("t,tmc,d->tmcd", J, g, np.ones(2))
                * cent[:, None, None, :]
                + (J[:, None, None, None] / 3.0) * eye[None, None, :, :]))
    bccols = np.broadcast_to(np.arange(2)[None, :], (len(ftri), 2)).copy()
    blocks[("w", "lam_bc")] = _scatter(Hwbc.reshape(-1, 6, 2), fdofs, bccols,
                                       sizes["w"], 2)

    # -- (v, v), (v, lam_v), (v, lam_p), (p, lam_v), (p, lam_p)
    Lamv = area[:, None, None] * np.einsum("mk,tka->tma", _S12, f.lvloc)
    Hvv = nu * aJ[:, None, None, None, None] * np.einsum(
        "tmn,ca->tmcna", gg, eye)
    Hvv -= J[:, None, None, None, None] * (
        np.einsum("tma,tnc->tmcna", g, Lamv)
        + np.einsum("tnc,tma->tmcna", g, Lamv))
    blocks[("v", "v")] = _scatter(Hvv.reshape(-1, 6, 6), fdofs, fdofs,
                                  sizes["v"], sizes["v"])
    Hvlv = -nu * aJ[:, None, None, None, None] * np.einsum(
        "tmn,ca->tmcna", gg, eye)
    Hvlv -= J[:, None, None, None, None] * (
        np.einsum("tnm,ca->tmcna", Q5, eye)
        + np.einsum("tmn,tac->tmcna", area[:, None, None] * _S12[None], f.M))
    blocks[("v", "lam_v")] = _scatter(Hvlv.reshape(-1, 6, 6), fdofs, fdofs,
                                      sizes["v"], sizes["lam_v"])
    Hvlp = np.repeat(((aJ[:, None, None] / 3.0) * g)[:, :, :, None], 3, axis=3)
    blocks[("v", "lam_p")] = _scatter(Hvlp.reshape(-1, 6, 3), fdofs, ftri,
                                      sizes["v"], sizes["lam_p"])
    Hplv = np.repeat(((aJ[:, None, None] / 3.0) * g)[:, None, :, :], 3, axis=1)
    blocks[("p", "lam_v")] = _scatter(Hplv.reshape(-1, 3, 6), ftri, fdofs,
                                      sizes["p"], sizes["lam_v"])
    Hplp = mh2[:, None, None] * np.einsum("tmr,tnr->tmn", AG, AG)
    blocks[("p", "lam_p")] = _scatter(Hplp, ftri, ftri,
                                      sizes["p"], sizes["lam_p"])

    # -- boundary blocks on the obstacle loop
    if spaces.curve is None:
        return {k: v.tocsr() for k, v in blocks.items()}
    Mc, Kc = spaces.curve.mass, spaces.curve.stiffness
    m = spaces.num_loop
    blocks[("c", "c")] = params.alpha * Mc
    Mcoo = Mc.tocoo()
    lb_cols = 2 * Mcoo.col[:, None] + np.arange(2)[None, :]
    vals = Mcoo.data[:, None] * spaces.normals[Mcoo.row]
    blocks[("c", "lam_b")] = sparse.coo_matrix(
        (vals.ravel(), (np.repeat(Mcoo.row, 2), lb_cols.ravel())),
        shape=(m, 2 * m))
    blocks[("b", "lam_b")] = -sparse.kron(
        (Mc + Kc), sparse.identity(2, format="csr"), format="csr")
    loop = spaces.curve.loop
    lw_cols = 2 * loop[Mcoo.col][:, None] + np.arange(2)[None, :]
    b_rows = 2 * Mcoo.row[:, None] + np.arange(2)[None, :]
    blocks[("b", "lam_w")] = sparse.coo_matrix(
        (np.repeat(Mcoo.data, 2), (b_rows.ravel(), lw_cols.ravel())),
        shape=(2 * m, sizes["lam_w"]))
    return {k: v.tocsr() for k, v in blocks.items()}
