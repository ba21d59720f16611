#  (C) Copyright the wentropy developers 2026. Distributed under the GPL-3.0-or-later
#  Software License, (See accompanying file LICENSE or copy at
#  https://www.gnu.org/licenses/gpl-3.0.txt)

import math

import numpy as np
import pytest

from wentropy.errors import DomainError
from wentropy.flows import make_canonical
from wentropy.logsobolev import LogSobolevSolution, euler_lagrange_residual, initial_guesses, mu_monotonicity, \
    mu_profile, optimal_constant, w_functional


def circle_mu(t):
    """The optimal constant of the circle of length 2 pi for N = 1, K = 0 and t >= 1/2, attained by the uniform density."""
    return math.log(2 * math.pi) - 0.5 * math.log(4 * math.pi * t) - 1


@pytest.fixture(scope='module')
def small_circle():
    return make_canonical('flat_circle', size=128)


def test_w_functional_of_uniform_density(small_circle):
    space = small_circle.geometry_at(0.0)
    t = 1.5
    u = np.full(small_circle.grid.size, math.sqrt(math.sqrt(4 * math.pi * t) / (2 * math.pi)))
    np.testing.assert_allclose(w_functional(space, u, t, 1.0), circle_mu(t), rtol=1e-12)


def test_w_functional_rejects(small_circle):
    space = small_circle.geometry_at(0.0)
    u = np.ones(small_circle.grid.size)
    with pytest.raises(DomainError):
        w_functional(space, u, 0.0, 1.0)
    with pytest.raises(DomainError):
        w_functional(space, u, 1.0, math.inf)
    with pytest.raises(DomainError):
        w_functional(space, -u, 1.0, 1.0)


def test_optimal_constant_of_circle(small_circle):
    space = small_circle.geometry_at(0.0)
    solution = optimal_constant(space, 2.0, 1.0, budget=300)
    assert solution.converged
    np.testing.assert_allclose(solution.mu, circle_mu(2.0), atol=1e-8)
    assert solution.constraint_residual <= 1e-8
    assert euler_lagrange_residual(solution, space) <= 1e-6
    np.testing.assert_allclose(solution.el_residual, euler_lagrange_residual(solution, space))


def test_optimal_constant_from_initial_field(small_circle):
    space = small_circle.geometry_at(0.0)
    x = small_circle.grid.x
    solution = optimal_constant(space, 2.0, 1.0, init=np.exp(0.1 * np.cos(x)), budget=300)
    assert solution.mu >= circle_mu(2.0) - 1e-8
    assert solution.history[-1] <= solution.history[0]
    with pytest.raises(DomainError):
        optimal_constant(space, 2.0, 1.0, init=np.zeros_like(x))


def test_unconverged_solution_has_no_residual(small_circle):
    space = small_circle.geometry_at(0.0)
    solution = LogSobolevSolution(1.0, 1.0, 0.0, 0.0, np.ones(small_circle.grid.size), 0.0, 5, False, [0.0])
    with pytest.raises(DomainError):
        euler_lagrange_residual(solution, space)


def test_initial_guesses(small_circle):
    guesses = initial_guesses(small_circle.geometry_at(0.0), 1.0)
    assert len(guesses) == 3
    for guess in guesses:
        assert guess.shape == (small_circle.grid.size,)
        assert np.all(np.isfinite(guess))


def test_intervals_start_at_the_left_end(flat_line):
    guesses = initial_guesses(flat_line.geometry_at(0.0), 1.0)
    assert len(guesses) == 4
    assert int(np.argmin(guesses[-1])) == 0


def test_mu_profile_order(small_circle):
    mus, solutions = mu_profile(small_circle, 1.0, 0.0, [3.0, 1.0], budget=300)
    np.testing.assert_allclose(mus, [circle_mu(3.0), circle_mu(1.0)], atol=1e-8)
    assert [solution.t for solution in solutions] == [3.0, 1.0]


def test_mu_monotonicity_and_reversed_time(small_circle):
    forward = mu_monotonicity(small_circle, 1.0, 0.0, [1.0, 2.0, 3.0], budget=300)
    assert forward.status == 'pass'
    backward = mu_monotonicity(small_circle, 1.0, 0.0, [3.0, 2.0, 1.0], budget=300)
    assert backward.status == 'fail'
    np.testing.assert_allclose(backward.value, circle_mu(2.0) - circle_mu(1.0), atol=1e-6)


def test_half_gaussian_is_the_interval_extremal():
    # a reflecting end halves the volume a concentrated density sees, so mu drops to -log 2
    flow = make_canonical('flat_line', size=512, extent=24.0)
    space = flow.geometry_at(0.0)
    solution = optimal_constant(space, 1.0, 1.0)
    np.testing.assert_allclose(solution.mu, -math.log(2), atol=1e-2)
    assert int(np.argmax(solution.u)) < 5
    density = solution.u ** 2 / math.sqrt(4 * math.pi)
    np.testing.assert_allclose(space.operators.integrate(density), 1.0, rtol=1e-8)


@pytest.fixture(scope='module')
def long_circle():
    return make_canonical('flat_circle', size=1024, length=40.0)


def test_gaussian_extremal_on_a_long_circle(long_circle):
    # without ends the concentrated Gaussian is the extremal and mu vanishes
    space = long_circle.geometry_at(0.0)
    solution = optimal_constant(space, 1.0, 1.0)
    assert solution.converged
    assert abs(solution.mu) <= 5e-3
    assert euler_lagrange_residual(solution, space) <= 1e-3
    gaussian = np.exp(-space.distances_from(int(np.argmax(solution.u))) ** 2 / 8)
    np.testing.assert_allclose(solution.u / np.max(solution.u), gaussian, atol=1e-2)


def test_unconverged_descent_does_not_certify_monotonicity(long_circle):
    result = mu_monotonicity(long_circle, 1.0, 0.0, [1.0, 1.5], budget=1)
    assert result.status == 'not-applicable'
    assert 'did not converge' in result.reason
