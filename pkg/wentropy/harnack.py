#  (C) Copyright the wentropy developers 2026. Distributed under the GPL-3.0-or-later
#  Software License, (See accompanying file LICENSE or copy at
#  https://www.gnu.org/licenses/gpl-3.0.txt)

import logging
import math
from typing import Optional, Tuple

import numpy as np

from wentropy.errors import DomainError, InsufficientDataError
from wentropy.flows import FlowFamily
from wentropy.heat import HeatState, Trajectory, propagate
from wentropy.space import Field, OperatorSet, WeightedGeometry, bakry_emery_ricci, gamma2, hessian

logger = logging.getLogger(__name__)


class HarnackField(object):
    """
    The Harnack quantities of a heat state: w = 2Lf - |grad f|^2, the normalized field w_N and
    nu = w_N u. For K = 0, w_N = t w + f - N; for K != 0 the Li-Xu form
    w_N = t Lf + t(1 + Kt)(Lf - |grad f|^2) + f - N(1 + Kt/2)^2 is used. For N = inf, w_N = t w.
    """

    def __init__(self, t: float, w: Field, w_N: Field, density: Field):
        self.t = t
        self.w = w
        self.w_N = w_N
        self.density = density
        self.nu = w_N * density

    def maximum(self, ops: OperatorSet) -> float:
        """The largest value of nu outside the boundary layer and the collar."""
        return float(np.max(self.nu[ops.interior]))


def _normalized_log(state: HeatState, N: float) -> Field:
    if math.isinf(N):
        return -state.log_u
    return state.potential(N)


def harnack_field(state: HeatState, flow: FlowFamily, N: float, K: float = 0.0) -> HarnackField:
    """
    Computes the Harnack field of a heat state.
    @param state: A positive heat state, e.g. a heat kernel.
    @param flow: The flow the state lives on.
    @param N: The synthetic dimension; N = inf gives the dimension free field t w u.
    @param K: The curvature parameter of the Li-Xu variant.
    @return: The Harnack field at the time of the state.
    """
    t = state.t
    if t <= 0:
        raise DomainError(f'the Harnack field needs t > 0, got t = {t}')
    ops = state.ops
    f = _normalized_log(state, N)
    Lf = ops.apply(f)
    # |grad f|^2 as Gamma(log u, u) / u, so that int nu dmu is exactly W_{N,K}
    G = state.log_gradient
    w = 2 * Lf - G
    if math.isinf(N):
        w_N = t * w
    elif K == 0:
        w_N = t * w + f - N
    else:
        w_N = t * Lf + t * (1 + K * t) * (Lf - G) + f - N * (1 + 0.5 * K * t) ** 2
    return HarnackField(t, w, w_N, state.u)


def commutator(flow: FlowFamily, f: Field, t: float) -> Field:
    """
    Computes [d_t, L] f in the reduced chart. With c = a_t / 2a and the effective potential V,
    [d_t, L] f = -2c (f_ss - V_s f_s) - ((d_t V)_s + c_s) f_s.
    """
    f = np.asarray(f, dtype=float)
    metric_rate = flow.metric_rate_at(t)
    potential_rate = flow.potential_rate_at(t)
    if flow.static or (not np.any(metric_rate) and not np.any(potential_rate)):
        return np.zeros_like(f)
    geometry = flow.geometry_at(t)
    a = geometry.metric
    m = geometry.model_dimension
    c = 0.5 * metric_rate / a
    v_rate = potential_rate - (m - 1) * c
    v_s, _ = geometry.effective_potential_derivatives
    f_s = geometry.arclength_derivative(f)
    f_ss = hessian(geometry, f)
    c_s = geometry.arclength_derivative(c)
    v_rate_s = geometry.arclength_derivative(v_rate)
    return -2 * c * (f_ss - v_s * f_s) - (v_rate_s + c_s) * f_s


def _chart_gamma2(geometry: WeightedGeometry, f: Field) -> Field:
    """Gamma_2(f) = f_ss^2 + V_ss f_s^2 on a one dimensional weighted chart."""
    _, v_ss = geometry.effective_potential_derivatives
    f_s = geometry.arclength_derivative(f)
    return hessian(geometry, f) ** 2 + v_ss * f_s ** 2


def _static_dissipation(geometry: WeightedGeometry, f: Field, t: float, N: float) -> Field:
    """
    Returns Gamma_2(f) - Lf / t + N / 4t^2 in the chart form
    (f_ss - 1/2t)^2 + Ric_{N,1}(f_s, f_s) + (V_s f_s + (N - 1)/2t)^2 / (N - 1).
    """
    v_s, _ = geometry.effective_potential_derivatives
    f_s = geometry.arclength_derivative(f)
    f_ss = hessian(geometry, f)
    ricci = bakry_emery_ricci(geometry, N, f)
    result = (f_ss - 0.5 / t) ** 2 + ricci
    if N > geometry.dimension:
        n = geometry.dimension
        result = result + (v_s * f_s + 0.5 * (N - n) / t) ** 2 / (N - n)
    return result


def harnack_rhs(state: HeatState, flow: FlowFamily, N: float, K: float = 0.0) -> Field:
    """
    The right hand side of the evolution of nu:
    (d_t - L) nu = -2t [(f_ss - 1/2t)^2 + Ric_{N,1}(f_s, f_s) + (V_s f_s + (N-1)/2t)^2 / (N-1)] u
                   + t (2 [d_t, L] f + (a_t / a) f_s^2) u
    for K = 0, and additionally -2Kt Lu - NK(1 + Kt/2) u - K t^2 [d_t, L] u for the Li-Xu variant.
    For N = inf the field t w u evolves by (w - 2t Gamma_2(f)) u plus the same flow terms.
    """
    t = state.t
    geometry = state.geometry
    u = state.u
    f = _normalized_log(state, N)
    metric_rate = flow.metric_rate_at(t)
    moving = t * (2 * commutator(flow, f, t) + metric_rate / geometry.metric * geometry.arclength_derivative(f) ** 2)
    if math.isinf(N):
        w = 2 * state.ops.apply(f) - state.log_gradient
        return (w - 2 * t * _chart_gamma2(geometry, f) + moving) * u
    rhs = (-2 * t * _static_dissipation(geometry, f, t, N) + moving) * u
    if K != 0:
        Lu = state.ops.apply(u)
        rhs = rhs - 2 * K * t * Lu - N * K * (1 + 0.5 * K * t) * u - K * t ** 2 * commutator(flow, u, t)
    return rhs


def _interior_index(traj: Trajectory, t: float) -> int:
    k = traj.index(t)
    if not 0 < k < len(traj) - 1:
        raise InsufficientDataError(f't = {t} is not interior to the trajectory [{traj.times[0]}, {traj.times[-1]}]')
    return k


def evolution_residual(traj: Trajectory, flow: FlowFamily, N: float, K: float, t: float) -> Tuple[Field, Field]:
    """
    Evaluates both sides of the evolution equation of nu at the trajectory time nearest to t.
    @return: (lhs, rhs) where lhs = (d_t - L) nu uses a central difference in time.
    """
    k = _interior_index(traj, t)
    before = harnack_field(traj[k - 1], flow, N, K)
    after = harnack_field(traj[k + 1], flow, N, K)
    current = harnack_field(traj[k], flow, N, K)
    ops = traj[k].ops
    lhs = (after.nu - before.nu) / (2 * traj.dt) - ops.apply(current.nu)
    return lhs, harnack_rhs(traj[k], flow, N, K)


def residual_norm(ops: OperatorSet, lhs: Field, rhs: Field) -> float:
    """The L1 norm of lhs - rhs outside the boundary layer and the collar."""
    return ops.integrate(np.abs(lhs - rhs), mask=ops.interior)


def w_evolution_residual(traj: Trajectory, t: float) -> Field:
    """(d_t - L) w + 2 Gamma_2(f) + 2 Gamma(w, f) with w = 2Lf - |grad f|^2 and f = -log u, on a static flow."""
    k = _interior_index(traj, t)
    fields = []
    for state in (traj[k - 1], traj[k], traj[k + 1]):
        f = -state.log_u
        fields.append(2 * state.ops.apply(f) - state.ops.gamma(f, f))
    ops = traj[k].ops
    f = -traj[k].log_u
    w = fields[1]
    return (fields[2] - fields[0]) / (2 * traj.dt) - ops.apply(w) + 2 * gamma2(ops, f) + 2 * ops.gamma(w, f)


def liyau_residual(state: HeatState, traj: Trajectory, N: float) -> Field:
    """
    Computes N/2t - (|grad log u|^2 - d_t u / u) at every node; the Li-Yau inequality asks for values >= 0.
    @param state: A state of the trajectory.
    @param traj: The trajectory that provides the time derivative.
    @param N: The synthetic dimension.
    """
    if state.t <= 0:
        raise DomainError(f'the Li-Yau residual needs t > 0, got t = {state.t}')
    k = _interior_index(traj, state.t)
    ops = state.ops
    log_u = state.log_u
    u_t = traj.time_derivative(k)
    return 0.5 * N / state.t - (ops.gamma(log_u, log_u) - u_t / np.maximum(state.u, 1e-300))


def propagated_monotonicity(traj: Trajectory, flow: FlowFamily, N: float, K: float = 0.0,
                            samples: int = 20, T: Optional[float] = None) -> Tuple[np.ndarray, np.ndarray]:
    """
    Samples t -> P_{T,t} nu(t), which is non-increasing in t at every node when (d_t - L) nu <= 0.
    The fields are densities of the heat flow, so flows with a moving measure are refused.
    @param traj: A heat trajectory.
    @param flow: Its flow.
    @param N: The synthetic dimension.
    @param K: The curvature parameter.
    @param samples: The number of sample times.
    @param T: The final time, by default the end of the trajectory.
    @return: The sample times and a (samples, nodes) array of propagated fields.
    """
    if not (flow.static or flow.conjugate):
        raise DomainError(f'the {flow.kind} flow moves its measure, P_{{T,t}} does not act on its Harnack fields')
    T = traj.times[-1] if T is None else T
    indices = np.unique(np.linspace(1, len(traj) - 1, samples).round().astype(int))
    if len(indices) < 2:
        raise InsufficientDataError(f'a trajectory with {len(traj)} states cannot be sampled for monotonicity')
    rows = []
    for k in indices:
        field = harnack_field(traj[k], flow, N, K)
        rows.append(propagate(flow, field.nu, traj.times[k], T))
    logger.debug(f'propagated {len(rows)} Harnack fields to T = {T:.4g}')
    return traj.times[indices], np.array(rows)
