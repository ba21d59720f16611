#  (C) Copyright the wentropy developers 2026. Distributed under the GPL-3.0-or-later
#  Software License, (See accompanying file LICENSE or copy at
#  https://www.gnu.org/licenses/gpl-3.0.txt)

import math

import numpy as np
import pytest
from scipy.integrate import simpson
from scipy.linalg import expm

from wentropy.errors import ConfigurationError, InsufficientDataError
from wentropy.flows import make_canonical, make_shrinking_sphere
from wentropy.heat import kernel_trajectory
from wentropy.verify import CHECKS, QUADRATURE_NODES, STEP_RESOLUTION, CheckResult, bump_density, describe_check, \
    gradient_estimate_terms, refinement_study, run_check, smooth_function, transport_distance, unit_ball_volume


def test_registry():
    kinds = {info.kind for info in CHECKS.values()}
    assert kinds == {'identity', 'inequality', 'asymptotic'}
    assert len(CHECKS) == 23
    assert 'W_MONOTONE' in describe_check('W_MONOTONE')
    assert 'fixed tolerance' in describe_check('MU_MONOTONE')
    with pytest.raises(ConfigurationError):
        describe_check('W_MONOTONIC')


def test_check_result_outcomes():
    assert CheckResult('FIRST_DISSIPATION', 'identity', 1e-3, 2e-3, '').status == 'pass'
    assert CheckResult('FIRST_DISSIPATION', 'identity', 3e-3, 2e-3, '').status == 'fail'
    assert CheckResult('W_MONOTONE', 'inequality', -1e-3, 2e-3, '').passed
    assert not CheckResult('W_MONOTONE', 'inequality', -3e-3, 2e-3, '').passed
    skipped = CheckResult.not_applicable('LI_YAU', 'no finite dimension')
    assert skipped.passed is None
    record = skipped.to_dict()
    assert record['status'] == 'not-applicable'
    assert record['value'] is None and record['tolerance'] is None
    assert record['reason'] == 'no finite dimension'


@pytest.mark.parametrize('check_id', ['FIRST_DISSIPATION', 'W_DEFINITION', 'FISHER_BOUND'])
def test_gaussian_checks_pass(gaussian_trajectory, flat_line, check_id):
    result = run_check(check_id, gaussian_trajectory, flat_line, {'N': 1.0, 'K': 0.0})
    assert result.status == 'pass', str(result)


def test_fisher_bound_negative_control(gaussian_trajectory, flat_line):
    # an origin long before the start of the heat flow makes N/2(t - origin) too small
    result = run_check('FISHER_BOUND', gaussian_trajectory, flat_line, {'N': 1.0, 'K': 0.0, 'origin': -5.0})
    assert result.status == 'fail'
    assert result.value < -result.tolerance


def test_class_mismatch_is_not_applicable(gaussian_trajectory, flat_line):
    result = run_check('RICCATI_EDI', gaussian_trajectory, flat_line, {'N': 1.0, 'K': 1.0})
    assert result.status == 'not-applicable'
    assert 'class mismatch' in result.reason
    result = run_check('W_MONOTONE', gaussian_trajectory, flat_line, {'N': math.inf})
    assert result.status == 'not-applicable'


def test_asymptotic_check_needs_static_space():
    flow = make_shrinking_sphere(n=2, size=128)
    result = run_check('NASH_MONOTONE', None, flow, {'N': 2.0})
    assert result.status == 'not-applicable'


def test_unknown_check(gaussian_trajectory, flat_line):
    with pytest.raises(ConfigurationError):
        run_check('ENTROPY', gaussian_trajectory, flat_line, {})


def test_noncollapse_on_flat_line(flat_line):
    result = run_check('NONCOLLAPSE_EQUIV', None, flat_line, {'N': 1.0})
    assert result.status == 'pass'
    np.testing.assert_allclose(result.detail['C'], 2.0, rtol=1e-9)


def test_unit_ball_volume():
    np.testing.assert_allclose(unit_ball_volume(1.0), 2.0)
    np.testing.assert_allclose(unit_ball_volume(2.0), math.pi)
    np.testing.assert_allclose(unit_ball_volume(3.0), 4 * math.pi / 3)


def test_transport_distance_of_translates(flat_line):
    geometry = flat_line.geometry_at(0.0)
    shift = 32 * flat_line.grid.h
    rho = bump_density(flat_line, 0.0, 0.5, center=-1.0)
    sigma = bump_density(flat_line, 0.0, 0.5, center=-1.0 + shift)
    np.testing.assert_allclose(transport_distance(geometry, rho, sigma), shift ** 2, rtol=1e-6)
    np.testing.assert_allclose(transport_distance(geometry, rho, rho), 0.0, atol=1e-12)


def test_transport_distance_on_circle(flat_circle):
    geometry = flat_circle.geometry_at(0.0)
    shift = 16 * flat_circle.grid.h
    rho = bump_density(flat_circle, 0.0, 0.3, center=0.5)
    sigma = bump_density(flat_circle, 0.0, 0.3, center=0.5 + shift)
    np.testing.assert_allclose(transport_distance(geometry, rho, sigma), shift ** 2, rtol=1e-3)


def test_refinement_study_needs_levels(gaussian_trajectory, flat_line):
    with pytest.raises(InsufficientDataError):
        refinement_study('FIRST_DISSIPATION', lambda level: (gaussian_trajectory, flat_line), {}, levels=1)


def test_refinement_study_on_circle():
    flows = {level: make_canonical('flat_circle', size=128 * 2 ** level) for level in range(2)}

    def factory(level):
        flow = flows[level]
        return kernel_trajectory(flow, flow.grid.size // 2, 0.5, 0.6, 0.02 / 2 ** level), flow

    study = refinement_study('FIRST_DISSIPATION', factory, {'N': 1.0}, levels=2)
    assert len(study.residuals) == 2
    assert len(study.orders) == 1
    assert study.order == study.orders[-1]
    assert all(residual >= 0 for residual in study.residuals)


def test_coarse_time_step_is_not_applicable(flat_circle):
    traj = kernel_trajectory(flat_circle, 128, 0.05, 0.1, 0.01)
    assert traj.times[1] < STEP_RESOLUTION * traj.dt
    result = run_check('FIRST_DISSIPATION', traj, flat_circle, {'N': 1.0})
    assert result.status == 'not-applicable'
    assert 'does not resolve' in result.reason


@pytest.mark.parametrize('check_id', ['SECOND_DISSIPATION', 'HARNACK_EVOLUTION', 'RICCATI_EDI', 'ENTROPY_POWER_CONCAVE',
                                      'LOG_ENTROPY_DECAY', 'LI_YAU', 'HARNACK_NU', 'W_MONOTONE'])
def test_gaussian_equality_cases_pass(gaussian_trajectory, flat_line, check_id):
    result = run_check(check_id, gaussian_trajectory, flat_line, {'N': 1.0, 'K': 0.0})
    assert result.status == 'pass', str(result)


@pytest.fixture(scope='module')
def fine_gaussian():
    flow = make_canonical('flat_line', size=8192, extent=32.0)
    return kernel_trajectory(flow, flow.grid.nearest_node(0.0), 1.0, 1.1, 0.01), flow


@pytest.mark.parametrize('check_id', ['FIRST_DISSIPATION', 'SECOND_DISSIPATION', 'W_DEFINITION', 'W_DERIVATIVE_FORMULA'])
def test_gaussian_identity_residuals(fine_gaussian, check_id):
    traj, flow = fine_gaussian
    result = run_check(check_id, traj, flow, {'N': 1.0, 'K': 0.0})
    assert result.status == 'pass'
    assert result.value <= 1e-3


@pytest.mark.parametrize('check_id', ['W_MONOTONE', 'RICCATI_EDI', 'FISHER_BOUND', 'HARNACK_NU'])
def test_gaussian_margins_vanish(fine_gaussian, check_id):
    # the Gaussian is the equality case of these inequalities
    traj, flow = fine_gaussian
    result = run_check(check_id, traj, flow, {'N': 1.0, 'K': 0.0})
    assert result.status == 'pass'
    assert abs(result.value) <= 1e-3


@pytest.fixture(scope='module')
def sphere_trajectory():
    flow = make_shrinking_sphere(n=2, size=512)
    return kernel_trajectory(flow, 256, 0.05, 0.08, 0.001), flow


@pytest.mark.parametrize('check_id', ['FIRST_DISSIPATION', 'SECOND_DISSIPATION', 'W_DEFINITION', 'W_DERIVATIVE_FORMULA',
                                      'HARNACK_EVOLUTION'])
def test_shrinking_sphere_identities(sphere_trajectory, check_id):
    traj, flow = sphere_trajectory
    result = run_check(check_id, traj, flow, {'N': 2.0, 'K': 0.0})
    assert result.status == 'pass', str(result)


@pytest.mark.parametrize('check_id', ['DYNAMIC_BOCHNER', 'GRADIENT_ESTIMATE', 'W2_CONTRACTION'])
def test_dynamic_checks_on_flat_circle(flat_circle, check_id):
    result = run_check(check_id, None, flat_circle, {'N': 1.0, 'K': 0.0, 's': 0.0, 't': 0.5})
    assert result.status == 'pass', str(result)


@pytest.mark.parametrize('check_id', ['DYNAMIC_BOCHNER', 'GRADIENT_ESTIMATE', 'W2_CONTRACTION'])
def test_dynamic_checks_on_ou_line(ou_line, check_id):
    result = run_check(check_id, None, ou_line, {'K': 1.0, 's': 0.0, 't': 0.5})
    assert result.status == 'pass', str(result)
    assert run_check(check_id, None, ou_line, {'K': 2.0}).status == 'not-applicable'


def test_gradient_estimate_against_dense_semigroup():
    flow = make_canonical('flat_circle', size=64)
    ops = flow.operators_at(0.0)
    L = np.column_stack([ops.apply(e) for e in np.eye(flow.grid.size)])

    def P(a, b):
        return expm((b - a) * L)

    u = smooth_function(flow)
    s, t, N = 0.0, 0.5, 1.0
    forward = P(s, t) @ u
    expected = P(s, t) @ ops.gamma(u, u) - ops.gamma(forward, forward)
    nodes = np.linspace(s, t, QUADRATURE_NODES)
    values = np.array([(P(r, t) @ (L @ (P(s, r) @ u))) ** 2 for r in nodes])
    expected -= 2 / N * simpson(values, x=nodes, axis=0)
    np.testing.assert_allclose(gradient_estimate_terms(flow, u, s, t, N, 0.0), expected, atol=1e-8)
    result = run_check('GRADIENT_ESTIMATE', None, flow, {'N': N, 's': s, 't': t})
    np.testing.assert_allclose(result.value, np.min(expected), atol=1e-8)


def test_w_infinity_is_log_kappa_on_flat_line(flat_line):
    result = run_check('W_INFINITY_KAPPA', None, flat_line, {'N': 1.0})
    assert result.status == 'pass', str(result)
    np.testing.assert_allclose(result.detail['kappa'], 1.0, atol=1e-2)
    assert result.value <= 5e-3


def test_heat_kernel_bounds_on_flat_circle(flat_circle):
    result = run_check('HEAT_KERNEL_BOUNDS', None, flat_circle, {})
    assert result.status == 'pass', str(result)
    assert 0 < result.detail['C1'] <= 10.0
    assert 0 <= result.detail['C2'] <= 10.0


def test_noncollapse_fails_below_the_volume_growth():
    # balls around the vertex of the 3-cone have volume r^3 / 3, which collapses against r^1
    flow = make_canonical('cone', size=512, N=3.0, radius=12.0)
    result = run_check('NONCOLLAPSE_EQUIV', None, flow, {'N': 1.0})
    assert result.status == 'fail'
    np.testing.assert_allclose(result.detail['volume_exponent'], 1.0, atol=0.05)
    result = run_check('NONCOLLAPSE_EQUIV', None, flow, {'N': 3.0})
    assert result.status == 'pass', str(result)
    np.testing.assert_allclose(result.detail['C'], 1 / 3, rtol=0.1)


def test_identity_residuals_converge_at_second_order():
    flows = {level: make_canonical('flat_circle', size=128 * 2 ** level) for level in range(3)}

    def factory(level):
        flow = flows[level]
        return kernel_trajectory(flow, flow.grid.size // 2, 0.5, 0.6, 0.02 / 2 ** level), flow

    study = refinement_study('FIRST_DISSIPATION', factory, {'N': 1.0}, levels=3)
    assert study.residuals[-1] < study.residuals[0]
    assert study.residuals[-2] / study.residuals[-1] >= 3.5
