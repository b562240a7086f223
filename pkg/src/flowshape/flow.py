"""Stationary incompressible Navier-Stokes on the transformed domain.

State and adjoint are posed entirely on the reference mesh: all integrals see
the deformation only through the per-element (DF)^-1 and det(DF).  Both
equations, and the Newton matrix of the state solve, are extracted from the
shared term engine in :mod:`flowshape.lagrangian`: the state residual is the
adjoint-multiplier gradient of the functional, its Jacobian is the transpose
pairing of the corresponding second-derivative blocks, and the adjoint matrix
is the transpose of the state Jacobian at the converged state.  Equal-order
P1-P1 velocity/pressure is stabilized by the element-wise pressure term with
coefficient mu and the longest reference edge as length scale.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sparse
import scipy.sparse.linalg as spla

from .fem import quadrature_triangle
from .lagrangian import Spaces, gradient_blocks, hessian_blocks, zero_blocks
from .mesh import BoundaryTag, Mesh

__all__ = [
    "SolverError", "FlowParams", "FlowState", "AdjointFlowState",
    "inflow_profile", "velocity_dirichlet", "state_residual", "solve_state",
    "dissipation", "solve_adjoint", "reduced_gradient",
]


class SolverError(RuntimeError):
    """Newton divergence or a singular linearization; carries the history."""

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = list(history) if history is not None else []


@dataclass(frozen=True)
class FlowParams:
    """Viscosity, stabilization and Newton controls of the flow solves."""

    nu: float = 0.01
    mu: float = 0.1
    delta: float = 6.0
    inflow: str = "paper-cosine"
    newton_tol: float = 1e-10
    newton_max_iter: int = 25

    def __post_init__(self):
        if self.nu <= 0.0:
            raise ValueError("viscosity nu must be positive")
        if self.mu < 0.0:
            raise ValueError("stabilization coefficient mu must be >= 0")


@dataclass(frozen=True)
class FlowState:
    """Nodal velocity (nv, 2) and pressure (nv,)."""

    v: np.ndarray
    p: np.ndarray


@dataclass(frozen=True)
class AdjointFlowState:
    lam_v: np.ndarray
    lam_p: np.ndarray


def inflow_profile(x, delta: float, kind: str = "paper-cosine") -> np.ndarray:
    """Inflow velocity at one or many points.

    ``paper-cosine`` is (cos(2 pi |x| / delta), 0); ``parabolic`` is the
    clamped channel profile (max(0, 1 - (2 y / delta)^2), 0) with delta as
    the channel height.
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    pts = np.atleast_2d(x)
    out = np.zeros_like(pts)
    if kind == "paper-cosine":
        r = np.linalg.norm(pts, axis=1)
        out[:, 0] = np.cos(2.0 * np.pi * r / delta)
    elif kind == "parabolic":
        out[:, 0] = np.maximum(0.0, 1.0 - (2.0 * pts[:, 1] / delta) ** 2)
    else:
        raise ValueError(f"unknown inflow profile {kind!r}")
    return out[0] if single else out


def _tag_vertices(mesh: Mesh, *tags) -> np.ndarray:
    segs = [mesh.vertices_with_tag(t).reshape(-1) for t in tags]
    return np.unique(np.concatenate(segs)) if segs else np.empty(0, dtype=int)


def velocity_dirichlet(mesh: Mesh, params, homogeneous: bool = False,
                       override=None):
    """Constrained velocity vertices and their values.

    Inflow vertices carry the profile, wall and obstacle vertices carry zero;
    a vertex on both (tunnel corner) is treated as wall.  ``override`` replaces
    the rule by a callable x -> velocity applied on the whole outer boundary
    and the obstacle (used by manufactured-solution runs).  ``homogeneous``
    gives the same vertex set with zero values (adjoint test space).
    """
    if override is not None:
        verts = np.unique(np.concatenate(
            [mesh.outer_boundary_vertices(),
             _tag_vertices(mesh, BoundaryTag.OBSTACLE)]))
        vals = np.zeros((len(verts), 2)) if homogeneous else np.asarray(
            [override(x) for x in mesh.vertices[verts]], dtype=float)
        return verts, vals
    v_in = _tag_vertices(mesh, BoundaryTag.INFLOW)
    v_zero = _tag_vertices(mesh, BoundaryTag.WALL, BoundaryTag.OBSTACLE)
    verts = np.concatenate([v_in, v_zero])
    vals = np.zeros((len(verts), 2))
    if not homogeneous:
        kind = getattr(params, "inflow", "paper-cosine")
        vals[:len(v_in)] = inflow_profile(mesh.vertices[v_in], params.delta,
                                          kind)
        vals[np.isin(verts, v_zero)] = 0.0  # wall wins at shared corners
    keep = np.concatenate([~np.isin(v_in, v_zero), np.ones(len(v_zero), bool)])
    return verts[keep], vals[keep]


def _interior_pins(mesh: Mesh):
    """Obstacle-interior vertices of a holdall mesh (flow fields vanish there)."""
    return (mesh.obstacle_interior_vertices() if mesh.is_holdall
            else np.empty(0, int))


def _state_blocks(spaces: Spaces, params, w, v, p):
    z = zero_blocks(spaces)
    z["w"], z["v"], z["p"] = w, v, p
    return z


class _EngineParams:
    """Pads flow parameters with inert shape-term coefficients.

    The flow blocks never see the control cost, penalty or extension weight
    when every shape multiplier is zero, so neutral values are safe.
    """

    alpha = 1.0
    beta = 0.0
    eta_det = 1.0
    eta_ext = 0.0

    def __init__(self, params):
        self.nu = params.nu
        self.mu = params.mu


def _forcing(spaces: Spaces, body_force) -> np.ndarray:
    """Nodal load vector of an optional manufactured body force (nv, 2)."""
    geo = spaces.geo_fluid
    qp, qw = quadrature_triangle(4)
    pts = np.einsum("ql,tlx->tqx", qp, spaces.mesh.vertices[geo.tri])
    nt, nq = pts.shape[:2]
    vals = np.asarray(body_force(pts.reshape(-1, 2)), dtype=float).reshape(nt, nq, 2)
    loc = geo.area[:, None, None] * np.einsum("q,ql,tqa->tla", qw, qp, vals)
    out = np.zeros((spaces.mesh.num_vertices, 2))
    np.add.at(out, geo.tri, loc)
    return out


def state_residual(mesh: Mesh, w: np.ndarray, state: FlowState, params,
                   spaces: Spaces | None = None, body_force=None) -> np.ndarray:
    """Weak residual of momentum and stabilized continuity, concatenated.

    Layout: 2*nv velocity entries (vertex-major) followed by nv pressure
    entries.  Dirichlet rows are not altered here.
    """
    spaces = spaces or Spaces.build(mesh)
    z = _state_blocks(spaces, params, w, state.v, state.p)
    grad = gradient_blocks(spaces, _EngineParams(params), z)
    rv = grad["lam_v"]
    if body_force is not None:
        rv = rv + _forcing(spaces, body_force)
    return np.concatenate([rv.ravel(), grad["lam_p"]])


def _state_jacobian(spaces: Spaces, params, w, v, p) -> sparse.csr_matrix:
    z = _state_blocks(spaces, params, w, v, p)
    H = hessian_blocks(spaces, _EngineParams(params), z)
    top = sparse.hstack([H[("v", "lam_v")].T, H[("p", "lam_v")].T])
    bot = sparse.hstack([H[("v", "lam_p")].T, H[("p", "lam_p")].T])
    return sparse.vstack([top, bot]).tocsr()


def _flow_dirichlet(mesh: Mesh, params, homogeneous, override, pin_pressure):
    nv = mesh.num_vertices
    verts, vals = velocity_dirichlet(mesh, params, homogeneous, override)
    dofs = [np.repeat(2 * verts, 2) + np.tile([0, 1], len(verts))]
    values = [vals.ravel()]
    pins = _interior_pins(mesh)
    if len(pins):
        dofs.append(np.repeat(2 * pins, 2) + np.tile([0, 1], len(pins)))
        values.append(np.zeros(2 * len(pins)))
        dofs.append(2 * nv + pins)
        values.append(np.zeros(len(pins)))
    if pin_pressure is not None:
        vertex, value = pin_pressure
        dofs.append(np.asarray([2 * nv + vertex]))
        values.append(np.asarray([0.0 if homogeneous else value]))
    return np.concatenate(dofs), np.concatenate(values)


def _constrain(A: sparse.spmatrix, dofs: np.ndarray) -> sparse.csr_matrix:
    n = A.shape[0]
    mask = np.ones(n)
    mask[dofs] = 0.0
    D = sparse.diags(mask)
    return (D @ A @ D + sparse.diags(1.0 - mask)).tocsr()


def solve_state(mesh: Mesh, w: np.ndarray, params,
                spaces: Spaces | None = None, body_force=None,
                dirichlet_override=None, pin_pressure=None,
                initial=None) -> FlowState:
    """Damped Newton solve of the pulled-back stationary flow equations.

    ``pin_pressure`` is a (vertex, value) pair fixing the pressure level for
    fully enclosed configurations; the tunnel's open outflow needs none.
    """
    spaces = spaces or Spaces.build(mesh)
    if np.any(_element_dets(spaces, w) <= 0.0):
        import warnings
        warnings.warn("non-positive det(DF); state solve attempted anyway")
    nv = mesh.num_vertices
    dofs, values = _flow_dirichlet(mesh, params, False, dirichlet_override,
                                   pin_pressure)
    u = np.zeros(3 * nv)
    if initial is not None:
        u[:2 * nv] = initial.v.ravel()
        u[2 * nv:] = initial.p
    u[dofs] = values

    def residual(uvec):
        st = FlowState(uvec[:2 * nv].reshape(nv, 2), uvec[2 * nv:])
        r = state_residual(mesh, w, st, params, spaces, body_force)
        r[dofs] = 0.0
        return r

    history = []
    for _ in range(params.newton_max_iter):
        r = residual(u)
        rnorm = float(np.linalg.norm(r))
        history.append(rnorm)
        if rnorm < params.newton_tol:
            return FlowState(u[:2 * nv].reshape(nv, 2).copy(), u[2 * nv:].copy())
        A = _state_jacobian(spaces, params, w, u[:2 * nv].reshape(nv, 2),
                            u[2 * nv:])
        A = _constrain(A, dofs)
        try:
            step = spla.splu(A.tocsc()).solve(-r)
        except RuntimeError as exc:
            raise SolverError(f"singular state Jacobian: {exc}", history)
        scale = 1.0
        for _ in range(30):
            if np.linalg.norm(residual(u + scale * step)) < rnorm:
                break
            scale *= 0.5
        u = u + scale * step
    raise SolverError(
        f"state Newton did not converge: last residual {history[-1]:.3e}",
        history)


def _element_dets(spaces: Spaces, w) -> np.ndarray:
    from .transform import element_kinematics
    _, det, _ = element_kinematics(spaces.geo_fluid, np.asarray(w, float))
    return det


def dissipation(mesh: Mesh, w: np.ndarray, state: FlowState, nu: float) -> float:
    """Pulled-back energy dissipation (nu/2) integral |Dv (DF)^-1|^2 det(DF)."""
    from .transform import element_kinematics, pushed_gradients
    spaces_geo = Spaces.build(mesh).geo_fluid
    _, J, A = element_kinematics(spaces_geo, np.asarray(w, float))
    g = pushed_gradients(spaces_geo, A)
    M = np.einsum("tla,tlb->tab", state.v[spaces_geo.tri], g)
    return 0.5 * nu * float(np.sum(
        spaces_geo.area * J * np.einsum("tab,tab->t", M, M)))


def solve_adjoint(mesh: Mesh, w: np.ndarray, state: FlowState, params,
                  spaces: Spaces | None = None, pin_pressure=None,
                  dirichlet_override=None) -> AdjointFlowState:
    """Linear adjoint solve at a converged state.

    The matrix is the transpose of the state Jacobian; the right-hand side is
    the derivative of the dissipation with respect to velocity and pressure.
    """
    spaces = spaces or Spaces.build(mesh)
    nv = mesh.num_vertices
    z = _state_blocks(spaces, params, w, state.v, state.p)
    eng = _EngineParams(params)
    H = hessian_blocks(spaces, eng, z)
    top = sparse.hstack([H[("v", "lam_v")], H[("v", "lam_p")]])
    bot = sparse.hstack([H[("p", "lam_v")], H[("p", "lam_p")]])
    A = sparse.vstack([top, bot]).tocsr()
    grad = gradient_blocks(spaces, eng, z)
    rhs = -np.concatenate([grad["v"].ravel(), grad["p"]])
    dofs, _ = _flow_dirichlet(mesh, params, True, dirichlet_override,
                              pin_pressure)
    A = _constrain(A, dofs)
    rhs[dofs] = 0.0
    try:
        sol = spla.splu(A.tocsc()).solve(rhs)
    except RuntimeError as exc:
        raise SolverError(f"singular adjoint matrix: {exc}")
    return AdjointFlowState(sol[:2 * nv].reshape(nv, 2).copy(),
                            sol[2 * nv:].copy())


def reduced_gradient(mesh: Mesh, w: np.ndarray, state: FlowState,
                     adjoint: AdjointFlowState, params,
                     spaces: Spaces | None = None) -> np.ndarray:
    """Adjoint-based derivative of the dissipation with respect to w, (nv, 2).

    Only the flow terms contribute: the extension pairing and penalty carry no
    adjoint flow multipliers here.
    """
    spaces = spaces or Spaces.build(mesh)
    z = zero_blocks(spaces)
    z["w"], z["v"], z["p"] = w, state.v, state.p
    z["lam_v"], z["lam_p"] = adjoint.lam_v, adjoint.lam_p
    return gradient_blocks(spaces, _EngineParams(params), z)["w"]
