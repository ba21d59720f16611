#  (C) Copyright the wentropy developers 2026. Distributed under the GPL-3.0-or-later
#  Software License, (See accompanying file LICENSE or copy at
#  https://www.gnu.org/licenses/gpl-3.0.txt)

import math

import numpy as np
import pytest

from wentropy.entropy import SERIES_COLUMNS, boltzmann_entropy, entropy_HN, entropy_HNK, entropy_panel, \
    entropy_power, entropy_series, fisher_information, log_entropy, logarithmic_mean, nash_entropy, \
    perelman_normalization, perelman_w_sphere, w_direct, w_via_derivative
from wentropy.errors import DomainError, InsufficientDataError
from wentropy.flows import make_shrinking_sphere
from wentropy.heat import Trajectory, heat_kernel


def test_gaussian_equality_case(flat_line):
    state = heat_kernel(flat_line, flat_line.grid.nearest_node(0.0), 1.0)
    H = boltzmann_entropy(state)
    np.testing.assert_allclose(H, 0.5 * math.log(4 * math.pi * math.e), atol=5e-3)
    np.testing.assert_allclose(nash_entropy(H, 1.0, 1.0), 0.0, atol=5e-3)
    np.testing.assert_allclose(w_direct(state, 1.0), 0.0, atol=1e-2)


@pytest.mark.parametrize('form', ['edge', 'quotient', 'log'])
def test_fisher_information_forms(flat_line, form):
    state = heat_kernel(flat_line, flat_line.grid.nearest_node(0.0), 1.0)
    np.testing.assert_allclose(fisher_information(state, form), 0.5, rtol=1e-2)


def test_fisher_information_unknown_form(flat_line):
    state = heat_kernel(flat_line, flat_line.grid.nearest_node(0.0), 1.0)
    with pytest.raises(DomainError):
        fisher_information(state, 'trace')


def test_logarithmic_mean():
    p = np.array([1.0, 1.0, 2.0])
    q = np.array([1.0 + 1e-4, 3.0, 2.0])
    expected = np.array([1e-4 / math.log1p(1e-4), 2.0 / math.log(3.0), 2.0])
    np.testing.assert_allclose(logarithmic_mean(p, q), expected, rtol=1e-12)


def test_scalar_functionals():
    np.testing.assert_allclose(entropy_power(1.0, 2.0), math.e)
    np.testing.assert_allclose(entropy_HNK(0.3, 2.0, 0.0, 1.5), entropy_HN(0.3, 2.0, 1.5))
    np.testing.assert_allclose(entropy_HN(0.0, 2.0, 1.0 / (4 * math.pi)), -1.0)
    np.testing.assert_allclose(log_entropy(1.0, 4.0, 2.0, 0.0, 0.0, 1.0), 1.0)
    with pytest.raises(DomainError):
        log_entropy(0.0, 1.0, 1.0, 0.0, -1.0, 1.0)


def test_w_via_derivative_matches_direct(gaussian_trajectory):
    times, values = w_via_derivative(gaussian_trajectory, 1.0)
    direct = [w_direct(gaussian_trajectory[k], 1.0) for k in range(1, len(gaussian_trajectory) - 1)]
    np.testing.assert_allclose(times, gaussian_trajectory.times[1:-1])
    np.testing.assert_allclose(values, direct, atol=1e-3)


def test_w_via_derivative_needs_three_states(gaussian_trajectory):
    short = gaussian_trajectory.subsample(10)
    assert len(short) == 3
    w_via_derivative(short, 1.0)
    pair = Trajectory(short.times[:2], short.states[:2], short.dt, short.flow)
    with pytest.raises(InsufficientDataError):
        w_via_derivative(pair, 1.0)


def test_entropy_series(gaussian_trajectory):
    reports = entropy_series(gaussian_trajectory, 1.0, 0.0, 0.0)
    assert len(reports) == len(gaussian_trajectory)
    assert reports[0].W_via_derivative is None
    assert reports[1].W_via_derivative is not None
    rows = np.array([report.row() for report in reports])
    assert rows.shape == (len(reports), len(SERIES_COLUMNS))
    assert np.isnan(rows[0, SERIES_COLUMNS.index('W_via_derivative')])
    # the Nash entropy of the Gaussian is constant
    np.testing.assert_allclose(rows[:, SERIES_COLUMNS.index('nash')], 0.0, atol=5e-3)


def test_entropy_panel_rejects(gaussian_trajectory, flat_line):
    with pytest.raises(DomainError):
        entropy_panel(gaussian_trajectory[0], flat_line, math.inf)


def test_perelman_entropy_of_shrinking_sphere():
    flow = make_shrinking_sphere(n=2, size=128)
    values = [perelman_w_sphere(flow, tau) for tau in (0.5, 0.3, 0.2)]
    np.testing.assert_allclose(values, values[0], rtol=1e-10)
    # the round soliton has tau R = n / 2 and a constant f
    f, _ = perelman_normalization(flow, 0.3)
    np.testing.assert_allclose(values[0], 1.0 + f - 2.0, atol=1e-2)
    with pytest.raises(DomainError):
        perelman_w_sphere(flow, 0.05)


def test_perelman_entropy_of_shrinking_3_sphere():
    flow = make_shrinking_sphere(n=3, size=128)
    values = [perelman_w_sphere(flow, tau) for tau in (0.25, 0.15, 0.08)]
    np.testing.assert_allclose(values, values[0], rtol=1e-10)
    f, _ = perelman_normalization(flow, 0.15)
    np.testing.assert_allclose(values[0], 1.5 + f - 3.0, atol=2e-2)


def test_perelman_entropy_in_panel():
    flow = make_shrinking_sphere(n=2, size=256)
    state = heat_kernel(flow, 128, 0.1)
    report = entropy_panel(state, flow, 2.0)
    np.testing.assert_allclose(report.perelman_W, perelman_w_sphere(flow, 0.4))
