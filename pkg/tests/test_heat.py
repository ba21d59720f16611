#  (C) Copyright the wentropy developers 2026. Distributed under the GPL-3.0-or-later
#  Software License, (See accompanying file LICENSE or copy at
#  https://www.gnu.org/licenses/gpl-3.0.txt)

import math

import numpy as np
import pytest

from wentropy.errors import DomainError, InsufficientDataError, ResolutionError
from wentropy.heat import adjoint_propagator, heat_kernel, propagate, propagator, solve


def _circle_kernel(flow, node, t):
    """The heat kernel of the discrete circle Laplacian as a Fourier sum."""
    grid = flow.grid
    k = np.arange(-(grid.size // 2), grid.size // 2)
    symbol = (2 - 2 * np.cos(k * grid.h)) / grid.h ** 2
    phase = np.outer(grid.x - grid.x[node], k)
    return np.cos(phase) @ np.exp(-symbol * t) / (grid.hi - grid.lo)


def test_circle_kernel(flat_circle):
    state = heat_kernel(flat_circle, 100, 0.5)
    expected = _circle_kernel(flat_circle, 100, 0.5)
    np.testing.assert_allclose(state.u, expected, rtol=1e-8, atol=1e-12)
    np.testing.assert_allclose(state.mass, 1.0, rtol=1e-12)


def test_kernel_resolution(flat_circle):
    t = 0.5 * flat_circle.geometry_at(0.0).h_arc ** 2
    with pytest.raises(ResolutionError):
        heat_kernel(flat_circle, 0, t)
    state = heat_kernel(flat_circle, 0, t, strict=False)
    assert np.all(np.isfinite(state.u))


def test_solve_conserves_mass(flat_circle):
    x = flat_circle.grid.x
    traj = solve(1 + 0.5 * np.cos(x), flat_circle, 0.0, 1.0, 0.01)
    assert len(traj) == 101
    for state in traj.states:
        np.testing.assert_allclose(state.mass, 1.0, rtol=1e-12)


def test_crank_nicolson_matches_spectral(flat_circle):
    x = flat_circle.grid.x
    u0 = 1 + 0.5 * np.cos(x)
    traj = solve(u0, flat_circle, 0.0, 1.0, 0.01)
    exact = propagate(flat_circle, traj[0].u, 0.0, 1.0)
    np.testing.assert_allclose(traj[-1].u, exact, atol=1e-5)


def test_solve_rejects(flat_circle):
    size = flat_circle.grid.size
    with pytest.raises(DomainError):
        solve(-np.ones(size), flat_circle, 0.0, 1.0, 0.1)
    with pytest.raises(DomainError):
        solve(np.ones(size - 1), flat_circle, 0.0, 1.0, 0.1)
    with pytest.raises(DomainError):
        solve(np.ones(size), flat_circle, 1.0, 1.0, 0.1)
    with pytest.raises(DomainError):
        solve(np.ones(size), flat_circle, 0.0, 1.0, 0.0)


def test_time_derivative(flat_circle):
    traj = solve(1 + 0.5 * np.cos(flat_circle.grid.x), flat_circle, 0.0, 0.2, 0.01)
    derivative = traj.time_derivative(10)
    np.testing.assert_allclose(derivative, traj[10].ops.apply(traj[10].u), atol=1e-5)
    with pytest.raises(InsufficientDataError):
        traj.time_derivative(0)
    with pytest.raises(InsufficientDataError):
        traj.time_derivative(len(traj) - 1)


def test_propagate(ou_line):
    v = np.exp(-ou_line.grid.x ** 2)
    np.testing.assert_allclose(propagate(ou_line, v, 0.5, 0.5), v)
    with pytest.raises(DomainError):
        propagate(ou_line, v, 1.0, 0.5)
    # Hermite eigenfunction: L x = -x
    x = ou_line.grid.x
    moved = propagate(ou_line, x, 0.0, 0.5)
    interior = np.abs(x) <= 3
    np.testing.assert_allclose(moved[interior], math.exp(-0.5) * x[interior], atol=1e-2)


def test_adjoint_propagator(ou_line):
    x = ou_line.grid.x
    ops = ou_line.operators_at(0.0)
    f = np.cos(x)
    g = np.exp(-(x - 1) ** 2)
    forward = propagator(ou_line, 0.2, 0.7)
    backward = adjoint_propagator(ou_line, 0.2, 0.7)
    np.testing.assert_allclose(ops.inner(backward @ g, f), ops.inner(g, forward @ f), rtol=1e-10)


def test_kernel_on_moving_flow():
    from wentropy.flows import make_shrinking_sphere

    flow = make_shrinking_sphere(n=2, size=256)
    state = heat_kernel(flow, 128, 0.1)
    np.testing.assert_allclose(state.mass, 1.0, rtol=1e-12)
    assert np.all(state.u > 0)


def test_roundoff_negatives_are_clipped(flat_circle):
    u0 = np.exp(-(flat_circle.grid.x - math.pi) ** 2 / 0.1)
    u0[7] = -1e-14
    traj = solve(u0, flat_circle, 0.0, 0.1, 0.01)
    assert traj[0].u[7] == 0.0
    assert all(np.all(state.u >= -1e-12) for state in traj.states)
    u0[7] = -0.1
    with pytest.raises(DomainError, match='negative values'):
        solve(u0, flat_circle, 0.0, 0.1, 0.01)


@pytest.mark.parametrize('kind', ['flat_line', 'ou_line'])
def test_kernel_tails_are_non_negative(kind, request):
    flow = request.getfixturevalue(kind)
    state = heat_kernel(flow, flow.grid.nearest_node(0.0), 1.0)
    assert np.min(state.u) >= 0.0
    np.testing.assert_allclose(state.mass, 1.0, rtol=1e-12)
    # a kernel feeds straight into a trajectory
    traj = solve(state.u, flow, 1.0, 1.05, 0.01)
    assert len(traj) == 6


def test_semigroup(ou_line):
    v = np.exp(-(ou_line.grid.x - 1) ** 2)
    twice = propagate(ou_line, propagate(ou_line, v, 0.0, 0.3), 0.3, 0.7)
    np.testing.assert_allclose(twice, propagate(ou_line, v, 0.0, 0.7), rtol=1e-9, atol=1e-12)


def test_kernel_symmetry(ou_line):
    i, j = ou_line.grid.nearest_node(-0.5), ou_line.grid.nearest_node(1.5)
    forward = heat_kernel(ou_line, i, 0.4).u[j]
    backward = heat_kernel(ou_line, j, 0.4).u[i]
    np.testing.assert_allclose(forward, backward, rtol=1e-8)


def test_maximum_principle(flat_circle):
    u0 = 1 + 0.5 * np.cos(flat_circle.grid.x) + 0.2 * np.sin(3 * flat_circle.grid.x)
    traj = solve(u0, flat_circle, 0.0, 0.5, 0.01)
    lo, hi = np.min(traj[0].u), np.max(traj[0].u)
    for state in traj.states:
        assert np.min(state.u) >= lo - 1e-10
        assert np.max(state.u) <= hi + 1e-10
