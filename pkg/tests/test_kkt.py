"""Tests for the coupled first-order optimality system."""

import numpy as np
import pytest
from dataclasses import replace

from flowshape.flow import FlowParams, solve_state, solve_adjoint
from flowshape.kkt import (
    DofMap,
    KktParams,
    KktVector,
    barycenter_residual,
    gradient_fd_slopes,
    kkt_matrix,
    kkt_residual,
    lagrangian_value,
    solve_kkt,
    volume_residual,
)
from flowshape.lagrangian import Spaces, gradient_blocks, zero_blocks


@pytest.fixture(scope="module")
def spaces(circle_mesh):
    return Spaces.build(circle_mesh)


def _random_vector(spaces, rng, w_scale=0.01, scale=0.5):
    y = KktVector.zeros(spaces)
    for name in ("w", "v", "p", "b", "c", "lam_w", "lam_v", "lam_p",
                 "lam_b", "lam_bc"):
        field = getattr(y, name)
        s = w_scale if name == "w" else scale
        setattr(y, name, s * rng.standard_normal(np.shape(field)))
    y.lam_vol = float(scale * rng.standard_normal())
    return y


def test_params_validation():
    with pytest.raises(ValueError):
        KktParams(alpha=0.0)
    with pytest.raises(ValueError):
        KktParams(beta=-1.0)
    with pytest.raises(ValueError):
        KktParams(eta_det=0.0)


def test_dofmap_roundtrip(spaces, rng):
    dm = DofMap(spaces)
    y = _random_vector(spaces, rng)
    u = dm.pack(y)
    z = dm.unpack(u)
    for name, val in y.as_dict().items():
        assert np.array_equal(np.asarray(val), np.asarray(getattr(z, name)))


def test_volume_and_barycenter_vanish_at_identity(circle_mesh):
    w = np.zeros((circle_mesh.num_vertices, 2))
    assert abs(volume_residual(circle_mesh, w)) <= 1e-12
    assert np.abs(barycenter_residual(circle_mesh, w)).max() <= 1e-12


def test_control_stationarity_row_is_alpha_mass(spaces, rng):
    """The c-block of the gradient is alpha M_G c plus the lam_b coupling."""
    params = KktParams(alpha=0.37)
    y = KktVector.zeros(spaces)
    y.c = rng.standard_normal(spaces.num_loop)
    grad = gradient_blocks(spaces, params, y.as_dict())
    want = 0.37 * (spaces.curve.mass @ y.c)
    assert np.abs(grad["c"] - want).max() <= 1e-13


def test_residual_matches_gradient_on_free_rows(circle_mesh, spaces, rng):
    """Away from Dirichlet rows the KKT residual is the Lagrangian gradient."""
    params = KktParams()
    dm = DofMap(spaces)
    y = _random_vector(spaces, rng)
    r = kkt_residual(circle_mesh, y, params, spaces)
    grad = gradient_blocks(spaces, params, y.as_dict())
    flat = dm.pack({k: np.asarray(v) for k, v in grad.items()})
    from flowshape.kkt import _dirichlet

    _, dofs, _ = _dirichlet(spaces, params)
    free = np.setdiff1d(np.arange(dm.total), dofs)
    assert np.array_equal(r[free], flat[free])


def test_matrix_matches_residual_fd(circle_mesh, spaces, rng):
    params = KktParams(alpha=0.3, beta=7.0, eta_det=1.5, eta_ext=2.0)
    dm = DofMap(spaces)
    u = dm.pack(_random_vector(spaces, rng))
    A = kkt_matrix(circle_mesh, dm.unpack(u), params, spaces)
    h = np.longdouble(1e-7)
    d = rng.standard_normal(dm.total)
    # Dirichlet columns are eliminated from the matrix, so do not perturb them
    from flowshape.kkt import _dirichlet

    _, dofs, _ = _dirichlet(spaces, params)
    d[dofs] = 0.0
    ul = u.astype(np.longdouble)
    fd = (kkt_residual(circle_mesh, dm.unpack(ul + h * d), params, spaces)
          - kkt_residual(circle_mesh, dm.unpack(ul - h * d), params,
                         spaces)) / (2 * h)
    got = A @ d
    assert np.abs(got - fd.astype(float)).max() <= 1e-6 * np.abs(fd).max()


def test_matrix_is_symmetric(circle_mesh, spaces, rng):
    params = KktParams(alpha=0.3, beta=7.0, eta_det=1.5, eta_ext=2.0)
    y = _random_vector(spaces, rng)
    A = kkt_matrix(circle_mesh, y, params, spaces)
    asym = abs(A - A.T).max()
    assert asym <= 1e-12 * abs(A).max()


def test_gradient_fd_slopes_all_blocks(circle_mesh, spaces, rng):
    params = KktParams(alpha=0.3, beta=7.0, eta_det=1.5, eta_ext=2.0)
    y = _random_vector(spaces, rng, w_scale=0.01, scale=0.5)
    slopes = gradient_fd_slopes(circle_mesh, y, params, n_directions=5,
                                seed=1, spaces=spaces)
    assert set(slopes) == {"w", "v", "p", "b", "c", "lam_w", "lam_v",
                           "lam_p", "lam_b", "lam_vol", "lam_bc"}
    for name, slope in slopes.items():
        assert slope >= 1.9, (name, slope)


def test_lagrangian_value_finite(circle_mesh, spaces, rng):
    params = KktParams()
    y = _random_vector(spaces, rng)
    val = lagrangian_value(circle_mesh, y, params, spaces)
    assert np.isfinite(val)


def test_solve_kkt_large_alpha_keeps_shape_fixed(circle_mesh, spaces):
    """With a huge control cost the optimum is the unperturbed shape."""
    params = KktParams(alpha=1e6, nu=0.05)
    y0 = KktVector.zeros(spaces)
    state = solve_state(circle_mesh, y0.w, FlowParams(nu=0.05), spaces=spaces)
    y0.v, y0.p = state.v, state.p
    y = solve_kkt(circle_mesh, y0, params, spaces)
    assert np.abs(y.c).max() <= 1e-6
    assert np.abs(y.w).max() <= 1e-6
    assert abs(volume_residual(circle_mesh, y.w, spaces)) <= 1e-9


def test_solve_kkt_reaches_tolerance_and_constraints(circle_mesh, spaces):
    params = KktParams(alpha=1e-2, nu=0.05)
    y0 = KktVector.zeros(spaces)
    state = solve_state(circle_mesh, y0.w, FlowParams(nu=0.05), spaces=spaces)
    y0.v, y0.p = state.v, state.p
    y, hist = solve_kkt(circle_mesh, y0, params, spaces, return_info=True)
    assert hist[-1] < 10 * params.newton_tol or hist[-1] < params.newton_tol
    r = kkt_residual(circle_mesh, y, params, spaces)
    assert np.linalg.norm(r) < params.newton_tol
    assert abs(volume_residual(circle_mesh, y.w, spaces)) <= 1e-9
    assert np.abs(barycenter_residual(circle_mesh, y.w, spaces)).max() <= 1e-9
    # the flow blocks solve the state equation at the optimal shape
    st = solve_state(circle_mesh, y.w, FlowParams(nu=0.05), spaces=spaces,
                     initial=None)
    assert np.abs(st.v - y.v).max() <= 1e-6


def test_solve_kkt_warm_start_is_cheaper(circle_mesh, spaces):
    params = KktParams(alpha=1e-2, nu=0.05)
    y0 = KktVector.zeros(spaces)
    state = solve_state(circle_mesh, y0.w, FlowParams(nu=0.05), spaces=spaces)
    y0.v, y0.p = state.v, state.p
    y, hist_cold = solve_kkt(circle_mesh, y0, params, spaces,
                             return_info=True)
    y2, hist_warm = solve_kkt(circle_mesh, y, replace(params, alpha=5e-3),
                              spaces, return_info=True)
    assert len(hist_warm) <= len(hist_cold)


def test_adjoint_blocks_match_standalone_adjoint(circle_mesh, spaces):
    """At the KKT solution the flow multipliers solve the adjoint system
    driven by the dissipation only (the shape rows carry the rest)."""
    params = KktParams(alpha=1e-2, nu=0.05)
    y0 = KktVector.zeros(spaces)
    fp = FlowParams(nu=0.05)
    state = solve_state(circle_mesh, y0.w, fp, spaces=spaces)
    y0.v, y0.p = state.v, state.p
    y = solve_kkt(circle_mesh, y0, params, spaces)
    st = solve_state(circle_mesh, y.w, fp, spaces=spaces)
    adj = solve_adjoint(circle_mesh, y.w, st, fp, spaces=spaces)
    assert np.abs(adj.lam_v - y.lam_v).max() <= 1e-5 * max(
        1.0, np.abs(y.lam_v).max())
