#  (C) Copyright the wentropy developers 2026. Distributed under the GPL-3.0-or-later
#  Software License, (See accompanying file LICENSE or copy at
#  https://www.gnu.org/licenses/gpl-3.0.txt)

import math

import numpy as np
import pytest

from wentropy.errors import ConfigurationError, DomainError
from wentropy.flows import certify_class, describe, enforce_conjugate, make_canonical, make_custom, \
    make_shrinking_sphere, super_ricci_defect, time_rescale
from wentropy.space import Grid1D


@pytest.mark.parametrize('kind, params, declared', [
    ('flat_circle', {}, (0.0, 1, 1.0)),
    ('flat_line', {}, (0.0, 1, 1.0)),
    ('ou_line', {}, (1.0, 1, math.inf)),
    ('cone', {'N': 4.0}, (0.0, 1, 4.0)),
    ('weighted_sphere', {'n': 3}, (2.0, 1, 3.0)),
])
def test_canonical_classes(kind, params, declared):
    flow = make_canonical(kind, size=128, **params)
    assert flow.declared_class == declared
    assert flow.static and flow.conjugate


@pytest.mark.parametrize('kind, params', [
    ('ou_line', {}),
    ('weighted_sphere', {'n': 2}),
    ('weighted_sphere', {'n': 3}),
])
def test_canonical_flows_are_certified(kind, params):
    minimum, certified = certify_class(make_canonical(kind, size=256, **params))
    assert certified
    assert minimum > -1e-6


def test_describe(flat_circle):
    text = describe(flat_circle)
    assert text.startswith('flat_circle(')
    assert text.endswith('[static, conjugate]')


def test_unknown_kind():
    with pytest.raises(ConfigurationError):
        make_canonical('torus')
    with pytest.raises(ConfigurationError):
        make_canonical('cone', N=1.0)


def test_flat_line_has_no_defect(flat_line):
    defect = super_ricci_defect(flat_line, 1.0, 0.0, 0.0)
    np.testing.assert_allclose(defect.field, 0.0, atol=1e-12)


def test_shrinking_sphere():
    flow = make_shrinking_sphere(n=2, horizon_fraction=0.8, size=256)
    np.testing.assert_allclose(flow.horizon, 0.4)
    assert flow.conjugate and not flow.static
    # the conjugate potential keeps the weighted measure fixed
    np.testing.assert_allclose(flow.geometry_at(0.3).total_measure, flow.geometry_at(0.0).total_measure,
                               rtol=1e-12)
    np.testing.assert_allclose(flow.geometry_at(0.0).total_measure, 2.0, rtol=1e-8)
    minimum, certified = certify_class(flow)
    assert certified
    with pytest.raises(DomainError):
        flow.geometry_at(0.45)


def test_shrinking_sphere_clock():
    flow = make_shrinking_sphere(n=3, size=128)
    s, t = 0.05, 0.15
    # the generator is L_0 / a(t), so the clock is the integral of 1/a
    expected = -math.log((1 - 4 * t) / (1 - 4 * s)) / 4
    np.testing.assert_allclose(flow.clock(s, t), expected, rtol=1e-12)


def _custom_tables(size=64):
    grid = Grid1D.interval(0.0, 1.0, size)
    times = np.array([0.0, 1.0, 2.0])
    metric = (1.0 + times)[:, None] * np.ones(size)[None, :]
    potential = np.zeros_like(metric)
    return grid.x, times, metric, potential


def test_custom_flow_from_tables():
    x, times, metric, potential = _custom_tables()
    flow = make_custom(x=x, times=times, metric=metric, potential=potential)
    assert not flow.static
    np.testing.assert_allclose(flow.horizon, 2.0)
    np.testing.assert_allclose(flow.metric_rate_at(0.5), 1.0)
    np.testing.assert_allclose(flow.geometry_at(1.5).metric, 2.5)


def test_custom_flow_rejects_tables():
    x, times, metric, potential = _custom_tables()
    with pytest.raises(ConfigurationError):
        make_custom(x=x, times=times[::-1], metric=metric, potential=potential)
    with pytest.raises(ConfigurationError):
        make_custom(x=x, times=times, metric=metric[:, :-1], potential=potential)
    with pytest.raises(ConfigurationError):
        make_custom(x=x, times=times, metric=metric, potential=potential, metric_rate=2 * np.ones_like(metric))
    with pytest.raises(ConfigurationError):
        make_custom(x=x, times=times)


def test_enforce_conjugate():
    x, times, metric, potential = _custom_tables()
    flow = enforce_conjugate(make_custom(x=x, times=times, metric=metric, potential=potential))
    assert flow.conjugate
    np.testing.assert_allclose(flow.potential_rate_at(1.0), 0.25, rtol=1e-12)
    np.testing.assert_allclose(flow.geometry_at(1.0).total_measure, flow.geometry_at(0.0).total_measure, rtol=1e-9)


def test_time_rescale(ou_line):
    flat = time_rescale(ou_line, 0.0)
    assert flat.static
    assert flat.declared_class == ou_line.declared_class

    rescaled = time_rescale(ou_line, 1.0)
    assert rescaled.declared_class[0] == 0.0
    np.testing.assert_allclose(rescaled.horizon, 0.5)
    # the rescaled metric is a(tau(t)) / tau'(t) = 1 - 2t
    np.testing.assert_allclose(rescaled.geometry_at(0.25).metric, 0.5, rtol=1e-12)
    with pytest.raises(DomainError):
        time_rescale(ou_line, 1.0, C=0.0)


def test_trace_rate_of_shrinking_sphere():
    flow = make_shrinking_sphere(n=2, size=64)
    # a(t) = 1 - 2t, so the trace m a_t / a is -4 / (1 - 2t) and the conjugate potential moves at half of it
    np.testing.assert_allclose(flow.trace_rate_at(0.1), -5.0)
    np.testing.assert_allclose(flow.trace_rate_at(0.1), 2 * flow.potential_rate_at(0.1))
