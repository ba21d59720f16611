#  (C) Copyright the wentropy developers 2026. Distributed under the GPL-3.0-or-later
#  Software License, (See accompanying file LICENSE or copy at
#  https://www.gnu.org/licenses/gpl-3.0.txt)

import logging
import math
from typing import Callable, Dict, Optional, Tuple

import numpy as np
from scipy.integrate import quad_vec

from wentropy.errors import ConfigurationError, DomainError
from wentropy.space import Field, Grid1D, OperatorSet, WeightedGeometry, bakry_emery_ricci

logger = logging.getLogger(__name__)

# A function of the chart coordinate and the time.
SpaceTimeFunction = Callable[[np.ndarray, float], np.ndarray]

# (K, n, N)
FlowClass = Tuple[float, int, float]

CANONICAL_KINDS = ('flat_circle', 'flat_line', 'ou_line', 'cone', 'weighted_sphere', 'shrinking_sphere', 'custom')

# Relative tolerance of supplied rate tables against secant differences.
RATE_TOLERANCE = 1e-6

COLLAR_CELLS = 3


def _zero(x: np.ndarray, t: float) -> np.ndarray:
    return np.zeros_like(np.asarray(x, dtype=float))


def _one(x: np.ndarray, t: float) -> np.ndarray:
    return np.ones_like(np.asarray(x, dtype=float))


def _static_clock(s: float, t: float) -> float:
    return t - s


class FlowFamily(object):
    """
    A time dependent weighted chart t -> (a(., t), phi(., t)) on a fixed grid. Geometries are built
    lazily from the closed forms. A flow with a clock has generators L_t = c(t) L_ref, and
    clock(s, t) is the integral of c over [s, t].
    """

    def __init__(self,
                 kind: str,
                 grid: Grid1D,
                 metric: SpaceTimeFunction,
                 potential: SpaceTimeFunction,
                 metric_rate: SpaceTimeFunction = _zero,
                 potential_rate: SpaceTimeFunction = _zero,
                 horizon: float = math.inf,
                 declared_class: FlowClass = (0.0, 1, math.inf),
                 model_dimension: float = 1.0,
                 conjugate: bool = False,
                 static: bool = False,
                 potential_x: Optional[SpaceTimeFunction] = None,
                 potential_xx: Optional[SpaceTimeFunction] = None,
                 metric_x: Optional[SpaceTimeFunction] = None,
                 metric_xx: Optional[SpaceTimeFunction] = None,
                 clock: Optional[Callable[[float, float], float]] = None,
                 reference: Optional['FlowFamily'] = None,
                 collar: Tuple[float, float] = (0.0, 0.0),
                 params: Optional[Dict[str, float]] = None
                 ):
        self.kind = kind
        self.grid = grid
        self.metric = metric
        self.potential = potential
        self.metric_rate = metric_rate
        self.potential_rate = potential_rate
        self.horizon = horizon
        self.declared_class = declared_class
        self.model_dimension = model_dimension
        self.conjugate = conjugate
        self.static = static
        self.potential_x = potential_x
        self.potential_xx = potential_xx
        self.metric_x = metric_x
        self.metric_xx = metric_xx
        self.clock = clock
        self.reference = reference
        self.collar = collar
        self.params = dict(params or {})
        self._geometries: Dict[float, WeightedGeometry] = {}

    def check_time(self, t: float) -> None:
        if t < 0 or t > self.horizon * (1 + 1e-12):
            raise DomainError(f'time {t} outside the horizon [0, {self.horizon}] of the {self.kind} flow')

    def _bind(self, function: Optional[SpaceTimeFunction], t: float) -> Optional[Callable[[np.ndarray], np.ndarray]]:
        if function is None:
            return None
        return lambda x: function(x, t)

    def _build_geometry(self, t: float) -> WeightedGeometry:
        return WeightedGeometry.from_functions(self.grid,
                                               self._bind(self.metric, t),
                                               self._bind(self.potential, t),
                                               model_dimension=self.model_dimension,
                                               potential_x=self._bind(self.potential_x, t),
                                               potential_xx=self._bind(self.potential_xx, t),
                                               metric_x=self._bind(self.metric_x, t),
                                               metric_xx=self._bind(self.metric_xx, t),
                                               collar=self.collar)

    def geometry_at(self, t: float) -> WeightedGeometry:
        t = float(t)
        if self.static:
            t = 0.0
        geometry = self._geometries.get(t)
        if geometry is None:
            self.check_time(t)
            geometry = self._build_geometry(t)
            self._geometries[t] = geometry
        return geometry

    def operators_at(self, t: float) -> OperatorSet:
        return self.geometry_at(t).operators

    def reference_geometry(self) -> WeightedGeometry:
        """The geometry whose generator the clock refers to."""
        if self.reference is not None:
            return self.reference.geometry_at(0.0)
        return self.geometry_at(0.0)

    def metric_rate_at(self, t: float) -> Field:
        return np.broadcast_to(self.metric_rate(self.grid.x, t), self.grid.x.shape).astype(float)

    def potential_rate_at(self, t: float) -> Field:
        return np.broadcast_to(self.potential_rate(self.grid.x, t), self.grid.x.shape).astype(float)

    def trace_rate_at(self, t: float) -> Field:
        """The full trace m a_t / a of the metric rate."""
        return self.model_dimension * self.metric_rate_at(t) / self.geometry_at(t).metric

    def sample_times(self, count: int) -> np.ndarray:
        end = 1.0 if math.isinf(self.horizon) else 0.9 * self.horizon
        return np.linspace(0.0, end, count)

    def copy(self, **changes) -> 'FlowFamily':
        """A plain closed form family with the same fields, except for the given changes."""
        fields = dict(kind=self.kind, grid=self.grid, metric=self.metric, potential=self.potential,
                      metric_rate=self.metric_rate, potential_rate=self.potential_rate, horizon=self.horizon,
                      declared_class=self.declared_class, model_dimension=self.model_dimension,
                      conjugate=self.conjugate, static=self.static, potential_x=self.potential_x,
                      potential_xx=self.potential_xx, metric_x=self.metric_x, metric_xx=self.metric_xx,
                      clock=self.clock, reference=self.reference, collar=self.collar, params=self.params)
        fields.update(changes)
        return FlowFamily(**fields)

    def __str__(self):
        return describe(self)


class TabulatedFlow(FlowFamily):
    """A custom flow given by nodal tables a(x_i, t_k) and phi(x_i, t_k), linear in time."""

    def __init__(self, grid: Grid1D, times: np.ndarray, metric: np.ndarray, potential: np.ndarray,
                 metric_rate: Optional[np.ndarray], potential_rate: Optional[np.ndarray],
                 declared_class: FlowClass, model_dimension: float, conjugate: bool):
        self.grid = grid
        self.times = times
        self.metric_table = metric
        self.potential_table = potential
        self.metric_rate_table = metric_rate
        self.potential_rate_table = potential_rate
        static = not np.any(metric_rate) and not np.any(potential_rate)
        super().__init__('custom', grid,
                         metric=self._interpolate(metric),
                         potential=self._interpolate(potential),
                         metric_rate=self._interpolate(metric_rate),
                         potential_rate=self._interpolate(potential_rate),
                         horizon=float(times[-1]) if not static else math.inf,
                         declared_class=declared_class,
                         model_dimension=model_dimension,
                         conjugate=conjugate,
                         static=static,
                         clock=_static_clock if static else None)

    def _interpolate(self, table: np.ndarray) -> SpaceTimeFunction:
        times = self.times
        grid = self.grid

        def function(x: np.ndarray, t: float) -> np.ndarray:
            k = int(np.clip(np.searchsorted(times, t, side='right') - 1, 0, len(times) - 2))
            theta = (t - times[k]) / (times[k + 1] - times[k])
            nodal = (1 - theta) * table[k] + theta * table[k + 1]
            x = np.asarray(x, dtype=float)
            if grid.is_circle:
                return np.interp(x, grid.x, nodal, period=grid.hi - grid.lo)
            return np.interp(x, grid.x, nodal)

        return function

    def _build_geometry(self, t: float) -> WeightedGeometry:
        return WeightedGeometry(self.grid, self.metric(self.grid.x, t), self.potential(self.grid.x, t),
                                model_dimension=self.model_dimension, collar=self.collar)


class FlowDefect(object):
    def __init__(self, t: float, field: Field, minimum: float):
        self.t = t
        self.field = field
        self.minimum = minimum


def describe(flow: FlowFamily) -> str:
    K, n, N = flow.declared_class
    flags = [name for name, value in (('static', flow.static), ('conjugate', flow.conjugate)) if value]
    params = ', '.join(f'{key}={value:g}' for key, value in sorted(flow.params.items()))
    return f'{flow.kind}({params}) on {flow.grid}, class ({K:g}, {n}, {N:g}), horizon {flow.horizon:g}' + \
        (f' [{", ".join(flags)}]' if flags else '')


def _static_flow(kind: str, grid: Grid1D, potential: SpaceTimeFunction, potential_x: SpaceTimeFunction,
                 potential_xx: SpaceTimeFunction, declared_class: FlowClass, params: Dict[str, float],
                 collar: Tuple[float, float] = (0.0, 0.0)) -> FlowFamily:
    return FlowFamily(kind, grid, metric=_one, potential=potential, declared_class=declared_class,
                      conjugate=True, static=True, potential_x=potential_x, potential_xx=potential_xx,
                      metric_x=_zero, metric_xx=_zero, clock=_static_clock, collar=collar, params=params)


def make_canonical(kind: str, size: int = 512, **params) -> FlowFamily:
    """
    Creates one of the static model flows.
    @param kind: flat_circle, flat_line, ou_line, cone, weighted_sphere or custom.
    @param size: The number of grid nodes.
    @param params: length (flat_circle), extent (flat_line, ou_line), N and radius (cone), n (weighted_sphere);
                   custom flows take the keyword arguments of make_custom.
    @return: A static flow family with its declared (K, n, N) class.
    """
    if kind == 'custom':
        return make_custom(**params)
    if kind == 'flat_circle':
        length = float(params.get('length', 2 * math.pi))
        grid = Grid1D.circle(0.0, length, size)
        return _static_flow(kind, grid, _zero, _zero, _zero, (0.0, 1, 1.0), {'length': length})
    if kind == 'flat_line':
        extent = float(params.get('extent', 32.0))
        grid = Grid1D.interval(-extent / 2, extent / 2, size)
        return _static_flow(kind, grid, _zero, _zero, _zero, (0.0, 1, 1.0), {'extent': extent})
    if kind == 'ou_line':
        extent = float(params.get('extent', 16.0))
        grid = Grid1D.interval(-extent / 2, extent / 2, size)
        return _static_flow(kind, grid,
                            lambda x, t: 0.5 * np.asarray(x) ** 2,
                            lambda x, t: np.asarray(x, dtype=float),
                            _one,
                            (1.0, 1, math.inf), {'extent': extent})
    if kind == 'cone':
        N = float(params.get('N', 3.0))
        radius = float(params.get('radius', 12.0))
        if not N > 1:
            raise ConfigurationError(f'a cone needs N > 1, got N = {N}')
        grid = Grid1D.interval(0.0, radius, size)
        return _static_flow(kind, grid,
                            lambda x, t: -(N - 1) * np.log(x),
                            lambda x, t: -(N - 1) / np.asarray(x),
                            lambda x, t: (N - 1) / np.asarray(x) ** 2,
                            (0.0, 1, N), {'N': N, 'radius': radius},
                            collar=(COLLAR_CELLS * grid.h, 0.0))
    if kind == 'weighted_sphere':
        n = int(params.get('n', 2))
        if n < 2:
            raise ConfigurationError(f'a weighted sphere needs n >= 2, got n = {n}')
        grid = Grid1D.interval(0.0, math.pi, size)
        return _static_flow(kind, grid,
                            lambda x, t: -(n - 1) * np.log(np.sin(x)),
                            lambda x, t: -(n - 1) / np.tan(x),
                            lambda x, t: (n - 1) / np.sin(x) ** 2,
                            (float(n - 1), 1, float(n)), {'n': n},
                            collar=(COLLAR_CELLS * grid.h, COLLAR_CELLS * grid.h))
    raise ConfigurationError(f'unknown flow kind {kind!r}, expected one of {", ".join(CANONICAL_KINDS)}')


def make_shrinking_sphere(n: int = 2, horizon_fraction: float = 0.8, size: int = 512) -> FlowFamily:
    """
    Creates the Ricci flow of the round n-sphere in the weighted chart (0, pi), a(t) = 1 - 2(n-1)t, with the
    conjugate potential phi_t = -(n-1) log sin + (n/2) log a(t).
    @param n: The dimension of the sphere.
    @param horizon_fraction: The horizon as a fraction of the singular time 1/(2(n-1)).
    @param size: The number of grid nodes.
    """
    if n < 2:
        raise ConfigurationError(f'a shrinking sphere needs n >= 2, got n = {n}')
    if not 0 < horizon_fraction < 1:
        raise DomainError(f'horizon fraction {horizon_fraction} reaches the singular time of the sphere flow')
    rate = -2.0 * (n - 1)

    def a(t: float) -> float:
        return 1.0 + rate * t

    grid = Grid1D.interval(0.0, math.pi, size)
    return FlowFamily('shrinking_sphere', grid,
                      metric=lambda x, t: np.full_like(np.asarray(x, dtype=float), a(t)),
                      potential=lambda x, t: -(n - 1) * np.log(np.sin(x)) + 0.5 * n * math.log(a(t)),
                      metric_rate=lambda x, t: np.full_like(np.asarray(x, dtype=float), rate),
                      potential_rate=lambda x, t: np.full_like(np.asarray(x, dtype=float), 0.5 * n * rate / a(t)),
                      horizon=horizon_fraction / (2.0 * (n - 1)),
                      declared_class=(0.0, 1, float(n)),
                      model_dimension=float(n),
                      conjugate=True,
                      potential_x=lambda x, t: -(n - 1) / np.tan(x),
                      potential_xx=lambda x, t: (n - 1) / np.sin(x) ** 2,
                      metric_x=_zero,
                      metric_xx=_zero,
                      clock=lambda s, t: -math.log(a(t) / a(s)) / (2.0 * (n - 1)),
                      collar=(COLLAR_CELLS * grid.h, COLLAR_CELLS * grid.h),
                      params={'n': n, 'horizon_fraction': horizon_fraction})


def _secant_check(times: np.ndarray, table: np.ndarray, rates: np.ndarray, name: str) -> None:
    dt = np.diff(times)[:, None]
    secant = np.diff(table, axis=0) / dt
    trapezoid = 0.5 * (rates[1:] + rates[:-1])
    scale = max(float(np.max(np.abs(secant))), 1e-300)
    error = float(np.max(np.abs(secant - trapezoid))) / scale
    if error > RATE_TOLERANCE:
        raise ConfigurationError(f'the {name} rate table deviates from secant differences (relative error {error:.2e})')


def make_custom(x: np.ndarray = None, times: np.ndarray = None, metric: np.ndarray = None,
                potential: np.ndarray = None, metric_rate: Optional[np.ndarray] = None,
                potential_rate: Optional[np.ndarray] = None, topology: str = 'interval',
                declared_class: FlowClass = (0.0, 1, math.inf), model_dimension: float = 1.0,
                conjugate: bool = False, lo: Optional[float] = None, hi: Optional[float] = None) -> TabulatedFlow:
    """
    Creates a flow from tables of shape (len(times), len(x)). Missing rate tables are derived with
    np.gradient in time, supplied tables are validated against secant differences.
    """
    if x is None or times is None or metric is None or potential is None:
        raise ConfigurationError('a custom flow needs x, times, metric and potential tables')
    x = np.asarray(x, dtype=float)
    times = np.asarray(times, dtype=float)
    metric = np.asarray(metric, dtype=float)
    potential = np.asarray(potential, dtype=float)
    if len(times) < 2 or np.any(np.diff(times) <= 0):
        raise ConfigurationError('custom flow times must be strictly increasing with at least two entries')
    if metric.shape != (len(times), len(x)) or potential.shape != metric.shape:
        raise ConfigurationError(f'custom flow tables must have shape {(len(times), len(x))}')
    h = float(np.mean(np.diff(x)))
    if topology == 'circle':
        grid = Grid1D.circle(x[0] if lo is None else lo, x[0] + len(x) * h if hi is None else hi, len(x))
    else:
        grid = Grid1D.interval(x[0] - h / 2 if lo is None else lo, x[-1] + h / 2 if hi is None else hi, len(x))
    if not np.allclose(grid.x, x, rtol=0, atol=1e-9 * max(1.0, float(np.max(np.abs(x))))):
        raise ConfigurationError('custom flow nodes must be uniformly spaced grid nodes')

    if metric_rate is None:
        metric_rate = np.gradient(metric, times, axis=0)
    else:
        metric_rate = np.asarray(metric_rate, dtype=float)
        _secant_check(times, metric, metric_rate, 'metric')
    if potential_rate is None:
        potential_rate = np.gradient(potential, times, axis=0)
    else:
        potential_rate = np.asarray(potential_rate, dtype=float)
        _secant_check(times, potential, potential_rate, 'potential')
    return TabulatedFlow(grid, times, metric, potential, metric_rate, potential_rate,
                         declared_class, model_dimension, conjugate)


def _uniform_in_space(flow: FlowFamily, function: SpaceTimeFunction) -> bool:
    x = flow.grid.x
    for t in flow.sample_times(5):
        values = np.broadcast_to(function(x, t), x.shape)
        if np.ptp(values) > 1e-12 * max(1.0, float(np.max(np.abs(values)))):
            return False
    return True


def enforce_conjugate(flow: FlowFamily) -> FlowFamily:
    """
    Replaces the potential rate by half the trace of the metric rate and integrates the potential in time,
    phi_t = phi_0 + int_0^t 1/2 tr(d_r g) dr, so that the weighted measure does not depend on t.
    """
    if flow.static:
        return flow.copy(conjugate=True)
    m = flow.model_dimension
    metric, metric_rate, potential = flow.metric, flow.metric_rate, flow.potential

    def half_trace(x: np.ndarray, t: float) -> np.ndarray:
        return 0.5 * m * metric_rate(x, t) / metric(x, t)

    def conjugate_potential(x: np.ndarray, t: float) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if t == 0:
            return potential(x, 0.0)
        increment, _ = quad_vec(lambda r: half_trace(x, r), 0.0, t, epsabs=1e-13, epsrel=1e-12)
        return potential(x, 0.0) + increment

    uniform = _uniform_in_space(flow, half_trace) and _uniform_in_space(flow, flow.potential_rate)
    changes = dict(potential=conjugate_potential, potential_rate=half_trace, conjugate=True)
    if uniform:
        # an x-constant shift of phi leaves the chart derivatives and the generator unchanged
        changes.update(potential_x=(lambda x, t: flow.potential_x(x, 0.0)) if flow.potential_x else None,
                       potential_xx=(lambda x, t: flow.potential_xx(x, 0.0)) if flow.potential_xx else None)
    else:
        changes.update(potential_x=None, potential_xx=None, clock=None, reference=None)
    result = flow.copy(**changes)
    logger.debug(f'enforced the conjugate equation on {flow.kind} (uniform rates: {uniform})')
    return result


def super_ricci_defect(flow: FlowFamily, N: float, K: float, t: float) -> FlowDefect:
    """
    Computes 1/2 d_t g + Ric_{N,1}(L_t) - K g on the unit chart direction, i.e.
    1/2 a_t / a + V_ss - V_s^2 / (N - 1) - K.
    """
    geometry = flow.geometry_at(t)
    coordinate = flow.grid.x
    unit = bakry_emery_ricci(geometry, N, coordinate) * geometry.metric
    field = 0.5 * flow.metric_rate_at(t) / geometry.metric + unit - K
    interior = geometry.operators.interior
    return FlowDefect(t, field, float(np.min(field[interior])))


def certify_class(flow: FlowFamily, samples: int = 5, constant: float = 10.0) -> Tuple[float, bool]:
    """
    Evaluates the declared (K, n, N) condition at sample times.
    @return: The minimal defect and whether it is at least -constant h^2.
    """
    K, _, N = flow.declared_class
    minimum = min(super_ricci_defect(flow, N, K, t).minimum for t in flow.sample_times(samples))
    bound = -constant * flow.geometry_at(0.0).h_arc ** 2
    return minimum, minimum >= bound


def time_rescale(flow: FlowFamily, K: float, C: float = 1.0) -> FlowFamily:
    """
    Rescales a (K, n, N) flow into a (0, n, N) flow: a~(., t) = a(., tau) / tau'(t) with
    tau' = 1 / (C - 2Kt), and phi~ = phi(., tau) - (m/2) log tau' so that the measure is m_{tau(t)}.
    """
    if C <= 0:
        raise DomainError(f'time rescaling needs C > 0, got C = {C}')
    if K == 0:
        tau0 = 0.0
    else:
        tau0 = -math.log(C) / (2 * K)
    if tau0 < 0 or tau0 > flow.horizon:
        raise DomainError(f'the rescaled clock starts at tau = {tau0:.6g}, outside [0, {flow.horizon:g}]')

    def tau_rate(t: float) -> float:
        return 1.0 / (C - 2 * K * t)

    def tau(t: float) -> float:
        if K == 0:
            return t / C
        return -math.log(C - 2 * K * t) / (2 * K)

    if K == 0:
        horizon = C * flow.horizon
    elif math.isinf(flow.horizon):
        horizon = C / (2 * K) if K > 0 else math.inf
    else:
        horizon = (C - math.exp(-2 * K * flow.horizon)) / (2 * K)
    if not horizon > 0:
        raise DomainError(f'no time t > 0 satisfies 2Kt < C for K = {K}, C = {C}')
    m = flow.model_dimension

    def derivative(function: Optional[SpaceTimeFunction], scaled: bool) -> Optional[SpaceTimeFunction]:
        if function is None:
            return None
        if scaled:
            return lambda x, t: function(x, tau(t)) / tau_rate(t)
        return lambda x, t: function(x, tau(t))

    base_clock = flow.clock
    K0, n, N = flow.declared_class
    return FlowFamily(f'rescaled_{flow.kind}', flow.grid,
                      metric=lambda x, t: flow.metric(x, tau(t)) / tau_rate(t),
                      potential=lambda x, t: flow.potential(x, tau(t)) - 0.5 * m * math.log(tau_rate(t)),
                      metric_rate=lambda x, t: flow.metric_rate(x, tau(t)) - 2 * K * flow.metric(x, tau(t)),
                      potential_rate=lambda x, t: tau_rate(t) * (flow.potential_rate(x, tau(t)) - m * K),
                      horizon=horizon,
                      declared_class=(K0 - K, n, N),
                      model_dimension=m,
                      conjugate=flow.conjugate,
                      static=flow.static and K == 0 and C == 1,
                      potential_x=derivative(flow.potential_x, False),
                      potential_xx=derivative(flow.potential_xx, False),
                      metric_x=derivative(flow.metric_x, True),
                      metric_xx=derivative(flow.metric_xx, True),
                      clock=(lambda s, t: base_clock(tau(s), tau(t))) if base_clock else None,
                      reference=flow.reference or flow,
                      collar=flow.collar,
                      params=dict(flow.params, K=K, C=C))
