#  (C) Copyright the wentropy developers 2026. Distributed under the GPL-3.0-or-later
#  Software License, (See accompanying file LICENSE or copy at
#  https://www.gnu.org/licenses/gpl-3.0.txt)

import logging
import math
from typing import Any, Callable, Dict, List, Mapping, Optional, Tuple

import numpy as np
import ot
from scipy.integrate import simpson
from scipy.optimize import minimize_scalar
from scipy.special import gamma as gamma_function

from wentropy.entropy import (boltzmann_entropy, entropy_HNK, fisher_information, log_entropy, nash_entropy,
                              w_direct)
from wentropy.errors import ConfigurationError, DomainError, InsufficientDataError, ModelError, NumericalError, \
    ResolutionError
from wentropy.flows import FlowFamily
from wentropy.harnack import evolution_residual, harnack_field, harnack_rhs, liyau_residual, residual_norm
from wentropy.heat import KERNEL_RESOLUTION, HeatState, Trajectory, adjoint_propagator, heat_kernel, \
    kernel_trajectory, propagate
from wentropy.logsobolev import BUDGET, mu_profile
from wentropy.space import Field, WeightedGeometry, bakry_emery_ricci, ball_volume, hessian

logger = logging.getLogger(__name__)

# Nodes where the density is below this fraction of its maximum are outside the support of pointwise checks.
SUPPORT_FRACTION = 1e-8

# Number of sub-atoms per cell in the transport distance.
TRANSPORT_REFINEMENT = 8

# Number of nodes of the time quadratures in the dynamic checks.
QUADRATURE_NODES = 17

# A volume ratio or W growing faster than this power of the squared scale marks a collapsing geometry.
NONCOLLAPSE_EXPONENT = 0.25

# Time differences need trajectories whose first interior time is at least STEP_RESOLUTION * dt,
# their relative error is O((dt / t)^2).
STEP_RESOLUTION = 16

KAPPA_TOLERANCE = 5e-3
KERNEL_CONSTANT_LIMIT = 10.0
MU_TOLERANCE = 1e-3

Params = Mapping[str, Any]


class CheckResult(object):
    """
    The outcome of one check. An identity passes when its residual is at most the tolerance, an inequality
    when its worst margin is at least minus the tolerance. Asymptotic checks decide from their fitted constants.
    """

    def __init__(self,
                 check_id: str,
                 kind: str,
                 value: float,
                 tolerance: float,
                 anchor: str,
                 passed: Optional[bool] = None,
                 order: Optional[float] = None,
                 detail: Optional[Dict[str, Any]] = None,
                 status: Optional[str] = None,
                 reason: Optional[str] = None
                 ):
        self.check_id = check_id
        self.kind = kind
        self.value = value
        self.tolerance = tolerance
        self.anchor = anchor
        self.order = order
        self.detail = dict(detail or {})
        self.reason = reason
        if status == 'not-applicable':
            self.passed = None
            self.status = status
            return
        if passed is None:
            if kind == 'identity':
                passed = value <= tolerance
            else:
                passed = value >= -tolerance
        self.passed = bool(passed)
        self.status = 'pass' if self.passed else 'fail'

    @staticmethod
    def not_applicable(check_id: str, reason: str) -> 'CheckResult':
        info = CHECKS[check_id]
        return CheckResult(check_id, info.kind, math.nan, math.nan, info.anchor, status='not-applicable',
                           reason=reason)

    def to_dict(self) -> Dict[str, Any]:
        def number(x):
            if x is None or (isinstance(x, float) and not math.isfinite(x)):
                return None
            return float(x)

        result = {'id': self.check_id, 'kind': self.kind, 'value': number(self.value),
                  'tolerance': number(self.tolerance), 'pass': self.passed, 'status': self.status,
                  'anchor': self.anchor}
        if self.order is not None:
            result['order'] = number(self.order)
        if self.reason is not None:
            result['reason'] = self.reason
        if self.detail:
            result['detail'] = {key: number(value) if isinstance(value, (int, float)) else value
                                for key, value in sorted(self.detail.items())}
        return result

    def __str__(self):
        if self.status == 'not-applicable':
            return f'{self.check_id}: not applicable ({self.reason})'
        return f'{self.check_id}: {self.status} ({self.kind}, value {self.value:.3e}, tolerance {self.tolerance:.3e})'


class CheckInfo(object):
    def __init__(self, check_id: str, kind: str, anchor: str, constant: float, evaluator: Callable,
                 fixed_tolerance: Optional[float] = None):
        self.check_id = check_id
        self.kind = kind
        self.anchor = anchor
        self.constant = constant
        self.evaluator = evaluator
        self.fixed_tolerance = fixed_tolerance


def _param(params: Params, key: str, default: Any) -> Any:
    value = params.get(key, default)
    return default if value is None else value


def _finite_dimension(params: Params) -> float:
    N = float(_param(params, 'N', math.inf))
    if math.isinf(N):
        raise DomainError('this check needs a finite dimension N')
    return N


def _require_class(flow: FlowFamily, K: float, N: float) -> None:
    """A declared (K0, n, N0) flow is also a (K, n, N) flow for K <= K0 and N >= N0."""
    K0, n, N0 = flow.declared_class
    if K > K0 + 1e-12 or N < N0 - 1e-12:
        raise DomainError(f'class mismatch: the check asks for (K, N) = ({K:g}, {N:g}) '
                          f'but the {flow.kind} flow is declared ({K0:g}, {n}, {N0:g})')


def _require_conjugate(flow: FlowFamily) -> None:
    if not flow.conjugate:
        raise DomainError(f'the {flow.kind} flow does not satisfy the conjugate equation')


class _Series(object):
    """Entropy and Fisher information along a trajectory, with central differences in time."""

    def __init__(self, traj: Trajectory):
        if len(traj) < 3:
            raise InsufficientDataError(f'a trajectory with {len(traj)} states has no interior times')
        self.traj = traj
        self.t = traj.times
        self.dt = traj.dt
        if self.t[1] < STEP_RESOLUTION * self.dt * (1 - 1e-9):
            raise ResolutionError(f'the time step {self.dt:.4g} does not resolve the trajectory at t = {self.t[1]:.4g}, '
                                  f'differences need t >= {STEP_RESOLUTION} dt')
        self.indices = np.arange(1, len(traj) - 1)
        self.H = np.array([boltzmann_entropy(state) for state in traj.states])
        self.I = np.array([fisher_information(state) for state in traj.states])

    def first(self, values: np.ndarray) -> np.ndarray:
        k = self.indices
        return (values[k + 1] - values[k - 1]) / (2 * self.dt)

    def second(self, values: np.ndarray) -> np.ndarray:
        k = self.indices
        return (values[k + 1] - 2 * values[k] + values[k - 1]) / self.dt ** 2

    def sampled(self, samples: int) -> np.ndarray:
        if len(self.indices) <= samples:
            return self.indices
        picks = np.unique(np.linspace(0, len(self.indices) - 1, samples).round().astype(int))
        return self.indices[picks]


class _Chart(object):
    """Chart derivatives of psi = log u on the geometry of a state."""

    def __init__(self, state: HeatState, flow: FlowFamily):
        geometry = state.geometry
        self.state = state
        self.geometry = geometry
        self.u = state.u
        self.psi = state.log_u
        self.psi_s = geometry.arclength_derivative(self.psi)
        self.psi_ss = hessian(geometry, self.psi)
        self.v_s, self.v_ss = geometry.effective_potential_derivatives
        self.L_psi = state.ops.apply(self.psi)
        self.rate = flow.metric_rate_at(state.t) / geometry.metric

    @property
    def gamma2(self) -> Field:
        return self.psi_ss ** 2 + self.v_ss * self.psi_s ** 2

    def integrate(self, field: Field) -> float:
        return self.state.ops.integrate(field * self.u)


def _support(state: HeatState) -> np.ndarray:
    return state.ops.interior & (state.u >= SUPPORT_FRACTION * float(np.max(state.u)))


def _resolved(flow: FlowFamily, t: float) -> bool:
    return t >= 4 * KERNEL_RESOLUTION * flow.geometry_at(0.0).h_arc ** 2


# identities: each returns (residual, scale, detail)

def _first_dissipation(traj: Trajectory, flow: FlowFamily, params: Params):
    _require_conjugate(flow)
    series = _Series(traj)
    lhs = series.first(series.H)
    rhs = series.I[series.indices]
    return float(np.max(np.abs(lhs - rhs))), max(1.0, float(np.max(np.abs(rhs)))), {}


def _second_dissipation(traj: Trajectory, flow: FlowFamily, params: Params):
    _require_conjugate(flow)
    series = _Series(traj)
    lhs = series.second(series.H)
    rhs = []
    for k in series.indices:
        chart = _Chart(traj[k], flow)
        rhs.append(-2 * chart.integrate(chart.gamma2 + 0.5 * chart.rate * chart.psi_s ** 2))
    rhs = np.array(rhs)
    return float(np.max(np.abs(lhs - rhs))), max(1.0, float(np.max(np.abs(rhs)))), {}


def _w_definition(traj: Trajectory, flow: FlowFamily, params: Params):
    N = _finite_dimension(params)
    K = float(_param(params, 'K', 0.0))
    series = _Series(traj)
    positive = series.t > 0
    tH = np.zeros(len(traj))
    tH[positive] = [t * entropy_HNK(H, N, K, t) for t, H in zip(series.t[positive], series.H[positive])]
    lhs = series.first(tH)
    rhs = np.array([w_direct(traj[k], N, K) for k in series.indices])
    return float(np.max(np.abs(lhs - rhs))), max(1.0, float(np.max(np.abs(rhs)))), \
        {'W_min': float(np.min(rhs)), 'W_max': float(np.max(rhs))}


def _w_derivative_formula(traj: Trajectory, flow: FlowFamily, params: Params):
    _require_conjugate(flow)
    N = _finite_dimension(params)
    K = float(_param(params, 'K', 0.0))
    series = _Series(traj)
    W = np.array([w_direct(state, N, K) if state.t > 0 else 0.0 for state in traj.states])
    lhs = series.first(W)
    rhs = np.array([traj[k].ops.integrate(harnack_rhs(traj[k], flow, N, K)) for k in series.indices])
    return float(np.max(np.abs(lhs - rhs))), max(1.0, float(np.max(np.abs(rhs)))), {}


def _w_gamma2_form(traj: Trajectory, flow: FlowFamily, params: Params):
    _require_conjugate(flow)
    N = _finite_dimension(params)
    K = float(_param(params, 'K', 0.0))
    series = _Series(traj)
    W = np.array([w_direct(state, N, -K) if state.t > 0 else 0.0 for state in traj.states])
    lhs = series.first(W)
    rhs = []
    for k in series.indices:
        t = series.t[k]
        chart = _Chart(traj[k], flow)
        c = 1 / t - K
        integrand = 0.5 * chart.rate * chart.psi_s ** 2 + chart.gamma2 + c * chart.L_psi + 0.25 * N * c ** 2 \
            - K * traj[k].log_gradient
        rhs.append(-2 * t * chart.integrate(integrand))
    rhs = np.array(rhs)
    return float(np.max(np.abs(lhs - rhs))), max(1.0, float(np.max(np.abs(rhs)))), {}


def _riccati_remainder(chart: _Chart, N: float, K: float) -> float:
    """
    The right hand side of H'' + (2/N) H'^2 + 2K H' on a one dimensional chart, where the traceless Hessian
    vanishes and Tr Hess - L = V_s d_s.
    """
    ricci = bakry_emery_ricci(chart.geometry, N, chart.psi)
    psi_s2 = chart.psi_s ** 2
    total = -2 * chart.integrate(0.5 * chart.rate * psi_s2 + ricci - K * psi_s2)
    if N > chart.geometry.dimension:
        n = chart.geometry.dimension
        coefficient = 1.0 if math.isinf(N) else (N - n) / (N * n)
        ratio = 1.0 if math.isinf(N) else N / (N - n)
        total -= 2 * coefficient * chart.integrate((chart.L_psi + ratio * chart.v_s * chart.psi_s) ** 2)
    if not math.isinf(N):
        total -= 2 / N * _variance(chart)
    return total


def _variance(chart: _Chart) -> float:
    mean = chart.integrate(chart.L_psi)
    return chart.integrate((chart.L_psi - mean) ** 2)


def _entropy_power_identity(traj: Trajectory, flow: FlowFamily, params: Params):
    _require_conjugate(flow)
    N = float(_param(params, 'N', math.inf))
    K = float(_param(params, 'K', 0.0))
    series = _Series(traj)
    H1 = series.first(series.H)
    lhs = series.second(series.H) + (0 if math.isinf(N) else 2 / N) * H1 ** 2 + 2 * K * H1
    rhs = np.array([_riccati_remainder(_Chart(traj[k], flow), N, K) for k in series.indices])
    return float(np.max(np.abs(lhs - rhs))), max(1.0, float(np.max(np.abs(rhs)))), {}


def _harnack_evolution(traj: Trajectory, flow: FlowFamily, params: Params):
    N = float(_param(params, 'N', math.inf))
    K = float(_param(params, 'K', 0.0))
    series = _Series(traj)
    residuals = []
    scale = 1.0
    for k in series.sampled(int(_param(params, 'samples', 16))):
        lhs, rhs = evolution_residual(traj, flow, N, K, series.t[k])
        ops = traj[k].ops
        residuals.append(residual_norm(ops, lhs, rhs))
        scale = max(scale, ops.integrate(np.abs(rhs), mask=ops.interior))
    return float(np.max(residuals)), scale, {}


# inequalities: each returns (worst margin, scale, detail)

def _w_monotone(traj: Trajectory, flow: FlowFamily, params: Params):
    _require_conjugate(flow)
    N = _finite_dimension(params)
    K = float(_param(params, 'K', 0.0))
    _require_class(flow, K, N)
    series = _Series(traj)
    W = np.array([w_direct(state, N, -K) if state.t > 0 else 0.0 for state in traj.states])
    derivative = series.first(W)
    bounds = []
    for k in series.indices:
        t = series.t[k]
        chart = _Chart(traj[k], flow)
        bounds.append(2 * t / N * chart.integrate((chart.L_psi + 0.5 * N * (1 / t - K)) ** 2))
    margins = -derivative - np.array(bounds)
    return float(np.min(margins)), max(1.0, float(np.max(np.abs(derivative)))), \
        {'dW_max': float(np.max(derivative))}


def _riccati_margins(traj: Trajectory, flow: FlowFamily, params: Params, sharp: bool):
    _require_conjugate(flow)
    N = float(_param(params, 'N', math.inf))
    K = float(_param(params, 'K', 0.0))
    _require_class(flow, K, N)
    series = _Series(traj)
    H1 = series.first(series.H)
    H2 = series.second(series.H)
    value = H2 + (0 if math.isinf(N) else 2 / N) * H1 ** 2 + 2 * K * H1
    margins = -value
    if sharp:
        if math.isinf(N):
            raise DomainError('the variance sharpened Riccati inequality needs a finite dimension N')
        margins = margins - np.array([2 / N * _variance(_Chart(traj[k], flow)) for k in series.indices])
    return float(np.min(margins)), max(1.0, float(np.max(np.abs(H2)))), {}


def _riccati_edi(traj: Trajectory, flow: FlowFamily, params: Params):
    return _riccati_margins(traj, flow, params, sharp=False)


def _riccati_edi_sharp(traj: Trajectory, flow: FlowFamily, params: Params):
    return _riccati_margins(traj, flow, params, sharp=True)


def _entropy_power_concave(traj: Trajectory, flow: FlowFamily, params: Params):
    _require_conjugate(flow)
    N = _finite_dimension(params)
    K = float(_param(params, 'K', 0.0))
    _require_class(flow, K, N)
    series = _Series(traj)
    power = np.exp(2 * series.H / N)
    margins = -(series.second(power) + 2 * K * series.first(power))
    t_min = float(np.min(series.t[series.indices]))
    return float(np.min(margins)), max(1.0, float(np.max(power)) / t_min ** 2), {}


def _fisher_bound(traj: Trajectory, flow: FlowFamily, params: Params):
    N = _finite_dimension(params)
    K = float(_param(params, 'K', 0.0))
    _require_class(flow, K, N)
    origin = float(_param(params, 'origin', 0.0))
    series = _Series(traj)
    k = series.indices
    elapsed = series.t[k] - origin
    if np.any(elapsed <= 0):
        raise DomainError('the Fisher information bound needs times after the origin of the heat flow')
    if K == 0:
        bound = 0.5 * N / elapsed
    else:
        bound = N * K / np.expm1(2 * K * elapsed)
    I = series.I[k]
    ratio = I / bound
    return float(np.min(bound - I)), max(1.0, float(np.max(bound))), \
        {'ratio_min': float(np.min(ratio)), 'ratio_max': float(np.max(ratio))}


def _log_entropy_decay(traj: Trajectory, flow: FlowFamily, params: Params):
    _require_conjugate(flow)
    N = _finite_dimension(params)
    K = float(_param(params, 'K', 0.0))
    a = float(_param(params, 'a', 0.0))
    _require_class(flow, K, N)
    series = _Series(traj)
    Y = np.array([log_entropy(H, I, N, K, a, t) if t > 0 else 0.0
                  for H, I, t in zip(series.H, series.I, series.t)])
    derivative = series.first(Y)
    margins = []
    for j, k in enumerate(series.indices):
        omega = 0.25 * series.I[k] + a
        chart = _Chart(traj[k], flow)
        bound = -chart.integrate((chart.L_psi + 4 * omega) ** 2) / (4 * omega) + a * N * K / omega
        margins.append(bound - derivative[j])
    return float(np.min(margins)), max(1.0, float(np.max(np.abs(derivative)))), {}


def _li_yau(traj: Trajectory, flow: FlowFamily, params: Params):
    N = _finite_dimension(params)
    _require_class(flow, 0.0, N)
    series = _Series(traj)
    worst = math.inf
    scale = 1.0
    for k in series.sampled(int(_param(params, 'samples', 16))):
        state = traj[k]
        if not _resolved(flow, state.t):
            continue
        residual = liyau_residual(state, traj, N)
        mask = _support(state)
        worst = min(worst, float(np.min(residual[mask])))
        scale = max(scale, 0.5 * N / state.t)
    if math.isinf(worst):
        raise InsufficientDataError('no resolved sample time for the Li-Yau inequality')
    return worst, scale, {}


def _harnack_nu(traj: Trajectory, flow: FlowFamily, params: Params):
    N = _finite_dimension(params)
    K = float(_param(params, 'K', 0.0))
    # the Li-Xu field with K > 0 belongs to the lower bound -K
    _require_class(flow, min(0.0, -K), N)
    series = _Series(traj)
    worst = -math.inf
    scale = 1.0
    for k in series.sampled(int(_param(params, 'samples', 16))):
        state = traj[k]
        if not _resolved(flow, state.t):
            continue
        field = harnack_field(state, flow, N, K)
        mask = _support(state)
        worst = max(worst, float(np.max(field.nu[mask])))
        scale = max(scale, float(np.max(state.u)))
    if math.isinf(worst):
        raise InsufficientDataError('no resolved sample time for the Harnack field')
    return -worst, scale, {'nu_max': worst}


def smooth_function(flow: FlowFamily) -> Field:
    """A smooth test function compatible with the boundary rule of the grid."""
    grid = flow.grid
    phase = (grid.x - grid.lo) / (grid.hi - grid.lo)
    if grid.is_circle:
        return np.sin(2 * math.pi * phase)
    return np.cos(math.pi * phase)


def bump_density(flow: FlowFamily, t: float, width: float, center: Optional[float] = None) -> Field:
    """A Gaussian bump of the given width in chart units, normalized to mass one at time t."""
    grid = flow.grid
    center = 0.5 * (grid.lo + grid.hi) if center is None else center
    d = grid.x - center
    if grid.is_circle:
        period = grid.hi - grid.lo
        d = (d + 0.5 * period) % period - 0.5 * period
    bump = np.exp(-0.5 * (d / width) ** 2)
    return bump / flow.operators_at(t).integrate(bump)


def _time_nodes(s: float, t: float) -> np.ndarray:
    return np.linspace(s, t, QUADRATURE_NODES)


def gradient_estimate_terms(flow: FlowFamily, u: Field, s: float, t: float, N: float, K: float) -> Field:
    """
    Evaluates e^{2Ks} P_{t,s}|grad u|^2 - (2/N) int_s^t e^{2Kr} (P_{t,r} L_r P_{r,s} u)^2 dr - e^{2Kt}|grad P_{t,s} u|^2
    at every node, with Simpson's rule on QUADRATURE_NODES times.
    """
    ops_s = flow.operators_at(s)
    ops_t = flow.operators_at(t)
    forward = propagate(flow, u, s, t)
    margin = math.exp(2 * K * s) * propagate(flow, ops_s.gamma(u, u), s, t) - \
        math.exp(2 * K * t) * ops_t.gamma(forward, forward)
    if not math.isinf(N):
        nodes = _time_nodes(s, t)
        values = []
        for r in nodes:
            inner = flow.operators_at(r).apply(propagate(flow, u, s, r))
            values.append(math.exp(2 * K * r) * propagate(flow, inner, r, t) ** 2)
        margin = margin - 2 / N * simpson(np.array(values), x=nodes, axis=0)
    return margin


def _gradient_estimate(traj: Optional[Trajectory], flow: FlowFamily, params: Params):
    N = float(_param(params, 'N', math.inf))
    K = float(_param(params, 'K', 0.0))
    _require_class(flow, K, N)
    s = float(_param(params, 's', 0.0))
    t = float(_param(params, 't', 0.5))
    if not t > s:
        raise DomainError(f'the gradient estimate needs s < t, got s = {s}, t = {t}')
    u = smooth_function(flow)
    margin = gradient_estimate_terms(flow, u, s, t, N, K)
    interior = flow.operators_at(t).interior
    scale = max(1.0, float(np.max(flow.operators_at(s).gamma(u, u))))
    return float(np.min(margin[interior])), scale, {'s': s, 't': t}


def _dynamic_bochner(traj: Optional[Trajectory], flow: FlowFamily, params: Params):
    N = float(_param(params, 'N', math.inf))
    K = float(_param(params, 'K', 0.0))
    _require_class(flow, K, N)
    s = float(_param(params, 's', 0.0))
    t = float(_param(params, 't', 0.5))
    if not t > s:
        raise DomainError(f'the dynamic Bochner inequality needs s < t, got s = {s}, t = {t}')
    u_s = smooth_function(flow)
    grid = flow.grid
    g_t = bump_density(flow, t, (grid.hi - grid.lo) / 8)
    margins = []
    scale = 1.0
    for r in _time_nodes(s, t)[1:-1]:
        geometry = flow.geometry_at(r)
        ops = geometry.operators
        u_r = propagate(flow, u_s, s, r)
        g_r = adjoint_propagator(flow, r, t) @ g_t
        u_rs = geometry.arclength_derivative(u_r)
        _, v_ss = geometry.effective_potential_derivatives
        gamma2 = hessian(geometry, u_r) ** 2 + v_ss * u_rs ** 2
        gamma = u_rs ** 2
        # d/dr Gamma_r(u) = -(a_r / a) Gamma_r(u) at fixed u
        gamma_dot = -flow.metric_rate_at(r) / geometry.metric * gamma
        value = ops.integrate(gamma2 * g_r) - 0.5 * ops.integrate(gamma_dot * g_r) - K * ops.integrate(gamma * g_r)
        if not math.isinf(N):
            value -= ops.integrate(ops.apply(u_r) * g_r) ** 2 / N
        margins.append(value)
        scale = max(scale, ops.integrate(gamma2 * g_r))
    return float(np.min(margins)), scale, {'s': s, 't': t}


def _transport_sample(geometry: WeightedGeometry, density: Field) -> Tuple[np.ndarray, np.ndarray]:
    """Sub-atoms of the piecewise linear density, located by arclength."""
    grid = geometry.grid
    q = TRANSPORT_REFINEMENT
    offsets = grid.h * ((np.arange(q) + 0.5) / q - 0.5)
    points = (grid.x[:, None] + offsets[None, :]).ravel()
    if grid.is_circle:
        values = np.interp(points, grid.x, density, period=grid.hi - grid.lo)
    else:
        values = np.interp(points, grid.x, density)
    weights = (np.maximum(values, 0.0).reshape(grid.size, q) * (geometry.measure / q)[:, None]).ravel()
    lower, upper = grid.cell_bounds
    faces_x = np.concatenate((lower, upper[-1:]))
    positions = np.interp(points, faces_x, geometry.face_arclength)
    return positions, weights / np.sum(weights)


def transport_distance(geometry: WeightedGeometry, rho: Field, sigma: Field) -> float:
    """The squared quadratic transport distance between two densities of the geometry."""
    x, a = _transport_sample(geometry, rho)
    y, b = _transport_sample(geometry, sigma)
    if geometry.grid.is_circle:
        period = geometry.face_arclength[-1]
        return period ** 2 * float(np.squeeze(ot.wasserstein_circle(x / period % 1.0, y / period % 1.0, a, b, p=2)))
    return float(np.squeeze(ot.wasserstein_1d(x, y, a, b, p=2)))


def _relative_entropy(geometry: WeightedGeometry, rho: Field) -> float:
    """S(rho) = int rho log rho dmu."""
    positive = rho > 0
    return float(np.dot(geometry.measure[positive], rho[positive] * np.log(rho[positive])))


def _dual_flow(flow: FlowFamily, rho_t: Field, r: float, t: float) -> Field:
    rho = adjoint_propagator(flow, r, t) @ rho_t
    return rho / flow.operators_at(r).integrate(rho)


def _w2_contraction(traj: Optional[Trajectory], flow: FlowFamily, params: Params):
    N = float(_param(params, 'N', math.inf))
    K = float(_param(params, 'K', 0.0))
    _require_class(flow, K, N)
    s = float(_param(params, 's', 0.0))
    t = float(_param(params, 't', 0.5))
    if not t > s:
        raise DomainError(f'the transport contraction needs s < t, got s = {s}, t = {t}')
    width = flow.grid.hi - flow.grid.lo
    mu = bump_density(flow, t, width / 16)
    nu = bump_density(flow, t, width / 6)
    w2_t = transport_distance(flow.geometry_at(t), mu, nu)
    w2_s = transport_distance(flow.geometry_at(s), _dual_flow(flow, mu, s, t), _dual_flow(flow, nu, s, t))
    margin = math.exp(-2 * K * (t - s)) * w2_t - w2_s
    if not math.isinf(N):
        nodes = _time_nodes(s, t)
        gaps = []
        for r in nodes:
            geometry = flow.geometry_at(r)
            gap = _relative_entropy(geometry, _dual_flow(flow, mu, r, t)) - \
                _relative_entropy(geometry, _dual_flow(flow, nu, r, t))
            gaps.append(math.exp(-2 * K * (r - s)) * gap ** 2)
        margin -= 2 / N * simpson(np.array(gaps), x=nodes)
    return margin, max(1.0, w2_t), {'W2_t': w2_t, 'W2_s': w2_s}


def _mu_monotone(traj: Optional[Trajectory], flow: FlowFamily, params: Params):
    _require_conjugate(flow)
    N = _finite_dimension(params)
    K = float(_param(params, 'K', 0.0))
    _require_class(flow, K, N)
    times = params.get('times')
    if times is None:
        times = np.linspace(0.5, 2.5, 5) if flow.static else flow.sample_times(6)[1:]
    times = [float(t) for t in times]
    if len(times) < 2:
        raise InsufficientDataError(f'the log-Sobolev scan needs at least 2 sample times, got {len(times)}')
    mus, solutions = mu_profile(flow, N, K, times, budget=int(_param(params, 'budget', BUDGET)))
    unconverged = [solution.t for solution in solutions if not solution.converged]
    if unconverged:
        raise InsufficientDataError('the log-Sobolev descent did not converge at t = ' +
                                    ', '.join(f'{t:g}' for t in unconverged) + ', so monotonicity is not certified')
    return float(np.min(mus[:-1] - mus[1:])), 1.0, {'mu_first': float(mus[0]), 'mu_last': float(mus[-1])}


# asymptotic checks: each returns (value, tolerance, passed, detail)

def _center(flow: FlowFamily, params: Params) -> float:
    if 'center' in params and params['center'] is not None:
        return float(params['center'])
    if flow.kind == 'cone':
        return 0.0
    return 0.5 * (flow.grid.lo + flow.grid.hi)


def unit_ball_volume(N: float) -> float:
    """omega_N = pi^{N/2} / Gamma(N/2 + 1)"""
    return math.pi ** (0.5 * N) / float(gamma_function(0.5 * N + 1))


def _radius_range(flow: FlowFamily, params: Params, center: float) -> Tuple[float, float]:
    geometry = flow.geometry_at(0.0)
    r_min = float(_param(params, 'r_min', 4 * geometry.h_arc))
    reach = min(center - flow.grid.lo, flow.grid.hi - center) * math.sqrt(float(np.min(geometry.metric)))
    if flow.kind == 'cone':
        reach = flow.grid.hi - center
    r_max = float(_param(params, 'r_max', 0.5 * reach))
    if not r_max > r_min:
        raise InsufficientDataError(f'empty radius range [{r_min:.4g}, {r_max:.4g}]')
    return r_min, r_max


def _noncollapse_equiv(flow: FlowFamily, params: Params):
    N = _finite_dimension(params)
    center = _center(flow, params)
    geometry = flow.geometry_at(0.0)
    r_min, r_max = _radius_range(flow, params, center)
    radii = np.geomspace(r_min, r_max, int(_param(params, 'radii', 24)))
    volumes = ball_volume(geometry, center, radii)
    C = float(np.min(volumes / radii ** N))
    tau_min = float(_param(params, 'tau_min', 4 * KERNEL_RESOLUTION * geometry.h_arc ** 2))
    tau_max = float(_param(params, 'tau_max', (0.5 * r_max) ** 2))
    if not tau_max > tau_min:
        raise InsufficientDataError(f'empty time range [{tau_min:.4g}, {tau_max:.4g}]')
    node = flow.grid.nearest_node(center)
    taus = np.geomspace(tau_min, tau_max, int(_param(params, 'taus', 12)))
    W = np.array([w_direct(heat_kernel(flow, node, tau), N) for tau in taus])
    A = max(0.0, -float(np.min(W)))
    # kappa(r) ~ r^{2 alpha} and W(tau) ~ alpha log tau both degenerate at small scales when alpha > 0
    volume_exponent = float(np.polyfit(np.log(radii ** 2), np.log(volumes / radii ** N), 1)[0])
    entropy_exponent = float(np.polyfit(np.log(taus), W, 1)[0])
    value = max(volume_exponent, entropy_exponent)
    tolerance = float(_param(params, 'tolerance', NONCOLLAPSE_EXPONENT))
    passed = C > 0 and math.isfinite(A) and value <= tolerance
    return value, tolerance, passed, {'C': C, 'A': A, 'volume_exponent': volume_exponent,
                                      'entropy_exponent': entropy_exponent, 'r_min': r_min, 'r_max': r_max,
                                      'tau_min': tau_min, 'tau_max': tau_max}


def _w_infinity_kappa(flow: FlowFamily, params: Params):
    N = _finite_dimension(params)
    center = _center(flow, params)
    geometry = flow.geometry_at(0.0)
    _, r_max = _radius_range(flow, params, center)
    kappa = ball_volume(geometry, center, r_max) / (unit_ball_volume(N) * r_max ** N)
    t_late = float(_param(params, 't_late', 4.0))
    W = w_direct(heat_kernel(flow, flow.grid.nearest_node(center), t_late), N)
    value = abs(W - math.log(kappa))
    tolerance = float(_param(params, 'tolerance', KAPPA_TOLERANCE))
    return value, tolerance, value <= tolerance, {'kappa': kappa, 'W_late': W, 't_late': t_late}


def _kernel_ratios(flow: FlowFamily, params: Params, epsilon: float):
    geometry = flow.geometry_at(0.0)
    grid = flow.grid
    sources = int(_param(params, 'sources', 3))
    times = np.linspace(float(_param(params, 't_min', 0.25)), float(_param(params, 't_max', 2.0)), 8)
    upper, lower, stamps_u, stamps_l = [], [], [], []
    for node in np.linspace(grid.size // 4, 3 * grid.size // 4, sources).round().astype(int):
        distances = geometry.distances_from(node)
        for t in times:
            p = heat_kernel(flow, node, t).u
            mask = p >= 1e-12 * float(np.max(p))
            if not grid.is_circle:
                mask &= flow.operators_at(t).interior
            volume = ball_volume(geometry, grid.x[node], math.sqrt(t))
            d2 = distances[mask] ** 2
            upper.append(np.max(p[mask] * volume * np.exp(d2 / ((4 + epsilon) * t))))
            lower.append(np.min(p[mask] * volume * np.exp(d2 / ((4 - epsilon) * t))))
            stamps_u.append(t)
            stamps_l.append(t)
    return np.array(upper), np.array(lower), np.array(stamps_u), np.array(stamps_l)


def _heat_kernel_bounds(flow: FlowFamily, params: Params):
    epsilon = float(_param(params, 'epsilon', 1.0))
    if not 0 < epsilon < 4:
        raise DomainError(f'the kernel envelope needs 0 < epsilon < 4, got {epsilon}')
    upper, lower, t_u, t_l = _kernel_ratios(flow, params, epsilon)

    def constant(c2: float) -> float:
        return max(float(np.max(upper * np.exp(-c2 * t_u))), float(np.max(1.0 / (lower * np.exp(c2 * t_l)))))

    fit = minimize_scalar(constant, bounds=(0.0, 10.0), method='bounded')
    c2 = float(fit.x) if constant(float(fit.x)) <= constant(0.0) else 0.0
    c1 = constant(c2)
    limit = float(_param(params, 'limit', KERNEL_CONSTANT_LIMIT))
    return c1, limit, c1 <= limit, {'C1': c1, 'C2': c2, 'epsilon': epsilon}


def _nash_monotone(flow: FlowFamily, params: Params):
    N = _finite_dimension(params)
    center = _center(flow, params)
    geometry = flow.geometry_at(0.0)
    t0 = float(_param(params, 't_min', 0.5))
    t1 = float(_param(params, 't_max', 4.0))
    dt = float(_param(params, 'dt', geometry.h_arc))
    traj = kernel_trajectory(flow, flow.grid.nearest_node(center), t0, t1, dt)
    nash = np.array([nash_entropy(boltzmann_entropy(state), N, state.t) for state in traj.states])
    margin = float(np.min(nash[:-1] - nash[1:]))
    tolerance = CHECKS['NASH_MONOTONE'].constant * (geometry.h_arc ** 2 + traj.dt ** 2) * max(1.0, float(np.max(np.abs(nash)))) + 1e-10
    return margin, tolerance, margin >= -tolerance, {'nash_start': float(nash[0]), 'nash_end': float(nash[-1])}


CHECKS: Dict[str, CheckInfo] = {}


def _register(check_id: str, kind: str, anchor: str, constant: float, evaluator: Callable,
              fixed_tolerance: Optional[float] = None) -> None:
    CHECKS[check_id] = CheckInfo(check_id, kind, anchor, constant, evaluator, fixed_tolerance)


_register('FIRST_DISSIPATION', 'identity',
          'first entropy dissipation: d/dt H(u(t)) = int |grad u|^2 / u dmu', 20.0, _first_dissipation)
_register('SECOND_DISSIPATION', 'identity',
          'second entropy dissipation: d^2/dt^2 H(u(t)) = -2 int [|Hess log u|^2 + '
          '(1/2 dg/dt + Ric_{inf,n}(L))(grad log u, grad log u)] u dmu', 50.0, _second_dissipation)
_register('W_DEFINITION', 'identity',
          'W_N(u, t) = int [t |grad f|^2 + f - N] u dmu equals d/dt (t H_N(u, t))', 20.0, _w_definition)
_register('W_DERIVATIVE_FORMULA', 'identity',
          'dW_{N,K}/dt = -2t int [|Hess f - g/2t|^2 + (1/2 dg/dt + Ric_{N,n}(L))(grad f, grad f)] u dmu '
          '- (2t/(N-n)) int (grad phi . grad f + (N-n)/2t)^2 u dmu - NK - N K^2 t / 2', 50.0, _w_derivative_formula)
_register('W_GAMMA2_FORM', 'identity',
          'dW/dt = -2t int [1/2 dg/dt(grad psi, grad psi) + Gamma_2(psi) + (1/t - K) L psi + (N/4)(1/t - K)^2 '
          '- K Gamma(psi)] u dmu with psi = log u', 50.0, _w_gamma2_form)
_register('ENTROPY_POWER_IDENTITY', 'identity',
          "H'' + (2/N) H'^2 + 2K H' = -2 int [|Hess log u - (Tr Hess log u / n) g|^2 + (1/2 dg/dt + Ric_{N,n}(L) - K g)"
          '(grad log u, grad log u)] u dmu - (2(N-n)/(Nn)) int [L log u + (N/(N-n))(Tr Hess - L) log u]^2 u dmu '
          '- (2/N) int [L log u - int L log u u dmu]^2 u dmu', 50.0, _entropy_power_identity)
_register('HARNACK_EVOLUTION', 'identity',
          '(d_t - L) nu_H = -2t [|Hess f - g/2t|^2 + (1/2 dg/dt + Ric_{N,n})(grad f, grad f)] H '
          '- (2t/(N-n)) (grad phi . grad f + (N-n)/2t)^2 H, with box* = d_t - L', 100.0, _harnack_evolution)
_register('W_MONOTONE', 'inequality',
          'd/dt W_{N,K}(u) <= -(2t/N) int |L log u + (N/2)(1/t - K)|^2 u dmu', 50.0, _w_monotone)
_register('RICCATI_EDI', 'inequality',
          "Riccati entropy differential inequality: H'' + (2/N) H'^2 + 2K H' <= 0", 50.0, _riccati_edi)
_register('RICCATI_EDI_SHARP', 'inequality',
          "H'' + (2/N) H'^2 + 2K H' <= -(2/N) int [L log u - int L log u u dmu]^2 u dmu", 50.0, _riccati_edi_sharp)
_register('ENTROPY_POWER_CONCAVE', 'inequality',
          'the entropy power N(u) = exp(2H(u)/N) satisfies d^2 N/dt^2 <= -2K dN/dt', 50.0, _entropy_power_concave)
_register('FISHER_BOUND', 'inequality',
          'I(u(t)) = d/dt H(u(t)) <= NK / (e^{2Kt} - 1), and I(u(t)) <= N/2t when K = 0', 20.0, _fisher_bound)
_register('LOG_ENTROPY_DECAY', 'inequality',
          'dY_a/dt <= -(1/4 omega) int [L log u + 4 omega]^2 u dmu + aNK/omega, '
          'omega = (1/4) int |grad u|^2 / u dmu + a', 50.0, _log_entropy_decay)
_register('DYNAMIC_BOCHNER', 'inequality',
          'dynamic Bochner inequality: Gamma_{2,r}(u_r)(g_r) >= 1/2 int dGamma_r(u_r) g_r dm_r + K int Gamma_r(u_r) g_r dm_r '
          '+ (1/N) (int L_r u_r g_r dm_r)^2 with u_r = P_{r,s} u_s, g_r = P*_{t,r} g_t', 50.0, _dynamic_bochner)
_register('GRADIENT_ESTIMATE', 'inequality',
          'e^{2Kt} |grad P_{t,s} u|^2 <= e^{2Ks} P_{t,s}(|grad u|^2) - (2/N) int_s^t e^{2Kr} (P_{t,r} L_r P_{r,s} u)^2 dr',
          20.0, _gradient_estimate)
_register('W2_CONTRACTION', 'inequality',
          'W_s^2(P^_{t,s} mu, P^_{t,s} nu) <= e^{-2K(t-s)} W_t^2(mu, nu) '
          '- (2/N) int_s^t e^{-2K(r-s)} [S_r(P^_{t,r} mu) - S_r(P^_{t,r} nu)]^2 dr', 50.0, _w2_contraction)
_register('LI_YAU', 'inequality',
          'Li-Yau Harnack differential inequality: |grad u|^2 / u^2 - d_t u / u <= N / 2t', 50.0, _li_yau)
_register('HARNACK_NU', 'inequality',
          'nu_H(t) = [t(2Lf - |grad f|^2) + f - N] H <= 0 for the fundamental solution H', 50.0, _harnack_nu)
_register('MU_MONOTONE', 'inequality',
          'mu_K(t) = inf {W_{N,K}(u, t) : int (4 pi t)^{-N/2} u^2 dmu = 1} is non-increasing in t', 0.0, _mu_monotone,
          fixed_tolerance=MU_TOLERANCE)
_register('NONCOLLAPSE_EQUIV', 'asymptotic',
          'volume non-collapsing mu(B(x, r)) >= C r^N holds if and only if W_N(f, tau) >= -A', 0.0, _noncollapse_equiv)
_register('W_INFINITY_KAPPA', 'asymptotic',
          'W_inf = log kappa with kappa = lim mu(B(x, r)) / (omega_N r^N)', 0.0, _w_infinity_kappa)
_register('HEAT_KERNEL_BOUNDS', 'asymptotic',
          'there exist positive constants C1, C2 with p_t(x, y) within '
          'C1^{+-1} V_x(sqrt t)^{-1} exp(-d^2(x, y)/((4 -+ eps) t) -+ C2 t)', 0.0, _heat_kernel_bounds)
_register('NASH_MONOTONE', 'asymptotic',
          'the Nash entropy H - (N/2) log(4 pi e t) is non-increasing in t', 20.0, _nash_monotone)

# inequality checks evaluated on the flow alone
TRAJECTORY_FREE = ('DYNAMIC_BOCHNER', 'GRADIENT_ESTIMATE', 'W2_CONTRACTION', 'MU_MONOTONE')


def describe_check(check_id: str) -> str:
    info = CHECKS.get(check_id)
    if info is None:
        raise ConfigurationError(f'unknown check id {check_id!r}')
    if info.fixed_tolerance is not None:
        tolerance = f'fixed tolerance {info.fixed_tolerance:g}'
    else:
        tolerance = f'tolerance constant {info.constant:g}'
    return f'{check_id} ({info.kind}, {tolerance})\n  {info.anchor}'


def _tolerance(info: CheckInfo, flow: FlowFamily, dt: float, scale: float) -> float:
    if info.fixed_tolerance is not None:
        return info.fixed_tolerance
    h = flow.geometry_at(0.0).h_arc
    return info.constant * (h ** 2 + dt ** 2) * scale + 1e-10


def _lookup(check_id: str, kind: str) -> CheckInfo:
    info = CHECKS.get(check_id)
    if info is None:
        raise ConfigurationError(f'unknown check id {check_id!r}')
    if info.kind != kind:
        raise ConfigurationError(f'{check_id} is an {info.kind} check, not an {kind} check')
    return info


def check_identity(check_id: str, traj: Trajectory, flow: FlowFamily, params: Params) -> CheckResult:
    """
    Evaluates an identity check along a trajectory.
    @param check_id: The id of an identity check.
    @param traj: A trajectory on the flow.
    @param flow: The flow.
    @param params: N and K, plus optional samples.
    @return: The result with the residual as value.
    """
    info = _lookup(check_id, 'identity')
    residual, scale, detail = info.evaluator(traj, flow, params)
    return CheckResult(check_id, info.kind, residual, _tolerance(info, flow, traj.dt, scale), info.anchor,
                       detail=detail)


def check_inequality(check_id: str, traj: Optional[Trajectory], flow: FlowFamily, params: Params) -> CheckResult:
    """
    Evaluates an inequality check. The dynamic checks only use the flow and the times s < t of params.
    @return: The result with the worst margin as value; positive margins are slack.
    """
    info = _lookup(check_id, 'inequality')
    if traj is None and check_id not in TRAJECTORY_FREE:
        raise InsufficientDataError(f'{check_id} needs a trajectory')
    margin, scale, detail = info.evaluator(traj, flow, params)
    dt = traj.dt if traj is not None else float(_param(params, 'dt', flow.geometry_at(0.0).h_arc))
    return CheckResult(check_id, info.kind, margin, _tolerance(info, flow, dt, scale), info.anchor, detail=detail)


def check_asymptotic(check_id: str, flow: FlowFamily, params: Params) -> CheckResult:
    """
    Evaluates a check on a static space, given as a static flow, from heat kernels and ball volumes.
    @return: The result with the fitted constants in the detail map.
    """
    info = _lookup(check_id, 'asymptotic')
    if not flow.static:
        raise DomainError(f'{check_id} needs a static space, the {flow.kind} flow depends on time')
    value, tolerance, passed, detail = info.evaluator(flow, params)
    return CheckResult(check_id, info.kind, value, tolerance, info.anchor, passed=passed, detail=detail)


def run_check(check_id: str, traj: Optional[Trajectory], flow: FlowFamily, params: Params) -> CheckResult:
    """Runs any check; domain, model and data errors become a not-applicable result."""
    info = CHECKS.get(check_id)
    if info is None:
        raise ConfigurationError(f'unknown check id {check_id!r}')
    try:
        if info.kind == 'identity':
            result = check_identity(check_id, traj, flow, params)
        elif info.kind == 'inequality':
            result = check_inequality(check_id, traj, flow, params)
        else:
            result = check_asymptotic(check_id, flow, params)
    except (DomainError, ModelError, InsufficientDataError, ResolutionError) as err:
        result = CheckResult.not_applicable(check_id, str(err))
    except NumericalError as err:
        if err.check_id is None:
            raise NumericalError(str(err), check_id) from err
        raise
    logger.info(str(result))
    return result


class RefinementStudy(object):
    def __init__(self, check_id: str, residuals: List[float], orders: List[float]):
        self.check_id = check_id
        self.residuals = residuals
        self.orders = orders

    @property
    def order(self) -> float:
        return self.orders[-1]


def refinement_study(check_id: str, factory: Callable[[int], Tuple[Trajectory, FlowFamily]],
                     params: Params, levels: int = 2) -> RefinementStudy:
    """
    Evaluates an identity at successive levels, each halving h and dt.
    @param check_id: The id of an identity check.
    @param factory: Builds the trajectory and flow of a level, 0 being the coarsest.
    @param params: The check parameters.
    @param levels: The number of levels, at least 2.
    @return: The residuals and the observed orders log2(r_k / r_{k+1}).
    """
    if levels < 2:
        raise InsufficientDataError(f'a refinement study needs at least 2 levels, got {levels}')
    residuals = []
    for level in range(levels):
        traj, flow = factory(level)
        residuals.append(check_identity(check_id, traj, flow, params).value)
    orders = [math.log2(coarse / fine) if fine > 0 else math.inf for coarse, fine in zip(residuals, residuals[1:])]
    logger.info(f'{check_id} refinement: residuals {residuals}, orders {orders}')
    return RefinementStudy(check_id, residuals, orders)
