#  (C) Copyright the wentropy developers 2026. Distributed under the GPL-3.0-or-later
#  Software License, (See accompanying file LICENSE or copy at
#  https://www.gnu.org/licenses/gpl-3.0.txt)

import logging
import math
from typing import List, Optional, Tuple

import numpy as np
from scipy.special import gammaln

from wentropy.errors import DomainError, InsufficientDataError
from wentropy.flows import FlowFamily
from wentropy.heat import HeatState, Trajectory, floored
from wentropy.space import hessian

logger = logging.getLogger(__name__)

# Below this relative spread the logarithmic mean is evaluated by its series.
SERIES_THRESHOLD = 1e-3


class EntropyReport(object):
    """The scalar functionals of one heat state."""

    def __init__(self, t: float, H: float, I: float, N: float, K: float, a: float):
        self.t = t
        self.H = H
        self.I = I
        self.N = N
        self.K = K
        self.a = a
        self.H_N = 0.0
        self.H_NK = 0.0
        self.W_N_direct = 0.0
        self.W_NK_direct = 0.0
        self.W_via_derivative: Optional[float] = None
        self.entropy_power = 0.0
        self.U_N = 0.0
        self.Y_a = math.nan
        self.nash = 0.0
        self.perelman_W: Optional[float] = None
        self.clamped_nodes = 0
        self.clamped_mass = 0.0

    def row(self) -> List[float]:
        """The values of the time series columns."""
        return [self.t, self.H, self.I, self.H_NK, self.W_NK_direct,
                math.nan if self.W_via_derivative is None else self.W_via_derivative,
                self.entropy_power, self.Y_a, self.nash]


SERIES_COLUMNS = ['t', 'H', 'I', 'H_NK', 'W_NK_direct', 'W_via_derivative', 'entropy_power', 'Y_a', 'nash']


def logarithmic_mean(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """(q - p) / (log q - log p), with the series m (1 - e^2/3 - 4 e^4/45) for nearby values."""
    p = floored(p) if np.ndim(p) else p
    mean = 0.5 * (p + q)
    spread = (q - p) / (q + p)
    small = np.abs(spread) < SERIES_THRESHOLD
    with np.errstate(divide='ignore', invalid='ignore'):
        exact = (q - p) / (np.log(q) - np.log(p))
    e2 = spread ** 2
    series = mean * (1 - e2 / 3 - 4 * e2 ** 2 / 45)
    return np.where(small, series, exact)


def clamped(state: HeatState) -> Tuple[int, float]:
    """The number of nodes where the log floor is active, and their mass."""
    mask = floored(state.u) > state.u
    return int(np.count_nonzero(mask)), float(np.dot(state.ops.measure[mask], state.u[mask]))


def boltzmann_entropy(state: HeatState) -> float:
    """H = -int u log u dmu with 0 log 0 = 0."""
    return -float(np.dot(state.ops.measure, state.u * state.log_u))


def fisher_information(state: HeatState, form: str = 'edge') -> float:
    """
    Computes the Fisher information.
    @param state: A heat state.
    @param form: 'edge' for sum_e w_e du dlog u, 'quotient' for int Gamma(u, u)/u and 'log' for
                 int Gamma(log u, log u) u, both with logarithmic means on the edges.
    """
    ops = state.ops
    du = ops.edge_differences(state.u)
    if form == 'edge':
        return float(np.dot(ops.weights, du * ops.edge_differences(state.log_u)))
    tail, head = ops.geometry.grid.edges
    u = floored(state.u)
    mean = logarithmic_mean(u[tail], u[head])
    if form == 'quotient':
        return float(np.dot(ops.weights, du * du / mean))
    if form == 'log':
        dl = ops.edge_differences(state.log_u)
        return float(np.dot(ops.weights, dl * dl * mean))
    raise DomainError(f'unknown Fisher information form {form!r}')


def entropy_power(H: float, N: float) -> float:
    return math.exp(2 * H / N)


def nash_entropy(H: float, N: float, t: float) -> float:
    return H - 0.5 * N * math.log(4 * math.pi * math.e * t)


def log_entropy(H: float, I: float, N: float, K: float, a: float, t: float) -> float:
    """Y_a = H + (N/2) log(I/4 + a) + (NK - 4a) t"""
    omega = 0.25 * I + a
    if omega <= 0:
        raise DomainError(f'the logarithmic entropy needs I/4 + a > 0, i.e. a > {-0.25 * I:.6g}')
    return H + 0.5 * N * math.log(omega) + (N * K - 4 * a) * t


def entropy_HN(H: float, N: float, t: float) -> float:
    return H - 0.5 * N * (1 + math.log(4 * math.pi * t))


def entropy_HNK(H: float, N: float, K: float, t: float) -> float:
    return entropy_HN(H, N, t) - 0.5 * N * K * t * (1 + K * t / 6)


def w_direct(state: HeatState, N: float, K: float = 0.0) -> float:
    """W_{N,K} = int [t |grad f|^2 + f - N (1 + Kt/2)^2] u dmu with f = -log u - (N/2) log 4 pi t."""
    t = state.t
    f = state.potential(N)
    integrand = (t * state.log_gradient + f - N * (1 + 0.5 * K * t) ** 2) * state.u
    return state.ops.integrate(integrand)


def entropy_panel(state: HeatState, flow: FlowFamily, N: float, K: float = 0.0, a: float = 0.0) -> EntropyReport:
    """
    Evaluates every scalar functional of a heat state.
    @param state: A heat state with t > 0.
    @param flow: The flow the state lives on; shrinking sphere flows also get Perelman's entropy.
    @param N: The synthetic dimension, finite.
    @param K: The curvature parameter of H_{N,K} and W_{N,K}.
    @param a: The shift of the logarithmic entropy.
    """
    t = state.t
    if t <= 0:
        raise DomainError(f'entropy panel needs t > 0, got t = {t}')
    if math.isinf(N):
        raise DomainError('the entropy panel needs a finite dimension N')
    H = boltzmann_entropy(state)
    I = fisher_information(state)
    report = EntropyReport(t, H, I, N, K, a)
    report.H_N = entropy_HN(H, N, t)
    report.H_NK = entropy_HNK(H, N, K, t)
    report.W_N_direct = w_direct(state, N)
    report.W_NK_direct = w_direct(state, N, K)
    report.entropy_power = entropy_power(H, N)
    report.U_N = math.exp(H / N)
    report.Y_a = log_entropy(H, I, N, K, a, t)
    report.nash = nash_entropy(H, N, t)
    report.clamped_nodes, report.clamped_mass = clamped(state)
    if flow.kind == 'shrinking_sphere':
        report.perelman_W = perelman_w_sphere(flow, singular_time(flow) - t)
    return report


def entropy_series(traj: Trajectory, N: float, K: float = 0.0, a: float = 0.0) -> List[EntropyReport]:
    reports = [entropy_panel(state, traj.flow, N, K, a) for state in traj.states]
    if len(reports) >= 3:
        times, values = w_via_derivative(traj, N, K, reports)
        for k, value in zip(range(1, len(reports) - 1), values):
            reports[k].W_via_derivative = value
    return reports


def w_via_derivative(traj: Trajectory, N: float, K: float = 0.0,
                     reports: Optional[List[EntropyReport]] = None) -> Tuple[np.ndarray, np.ndarray]:
    """
    Computes W_{N,K} = d/dt (t H_{N,K}) by central differences on the trajectory time grid.
    @return: The interior times and the corresponding values.
    """
    if len(traj) < 3:
        raise InsufficientDataError(f'W via the derivative needs at least 3 states, got {len(traj)}')
    if reports is None:
        values = [entropy_HNK(boltzmann_entropy(state), N, K, state.t) for state in traj.states]
    else:
        values = [report.H_NK for report in reports]
    product = traj.times * np.asarray(values)
    derivative = (product[2:] - product[:-2]) / (2 * traj.dt)
    return traj.times[1:-1], derivative


def singular_time(flow: FlowFamily) -> float:
    n = flow.params['n']
    return 1.0 / (2.0 * (n - 1))


def sphere_area(n: int) -> float:
    """The area 2 pi^{(n+1)/2} / Gamma((n+1)/2) of the unit n-sphere."""
    return 2.0 * math.exp(0.5 * (n + 1) * math.log(math.pi) - gammaln(0.5 * (n + 1)))


def perelman_normalization(flow: FlowFamily, tau: float) -> Tuple[float, float]:
    """
    Returns the constant f with int e^{-f} (4 pi tau)^{-n/2} dv = 1 on the round sphere at t = T - tau,
    and the volume of that sphere.
    """
    if flow.kind != 'shrinking_sphere':
        raise DomainError(f"Perelman's entropy is only available on the shrinking sphere, not on {flow.kind}")
    n = flow.params['n']
    t = singular_time(flow) - tau
    if not 0 < tau or t < 0 or t > flow.horizon * (1 + 1e-12):
        raise DomainError(f'tau = {tau} does not correspond to a time of the sphere flow')
    a = 1.0 - 2.0 * (n - 1) * t
    volume = a ** (0.5 * n) * sphere_area(n - 1) * flow.geometry_at(0.0).total_measure
    f = math.log(volume) - 0.5 * n * math.log(4 * math.pi * tau)
    return f, volume


def perelman_w_sphere(flow: FlowFamily, tau: float) -> float:
    """
    Integrates W = int [tau (R + |grad f|^2) + f - n] e^{-f} (4 pi tau)^{-n/2} dv over the chart of the shrinking
    round sphere at t = T - tau. R is evaluated from the warping function psi = sqrt(a) sin x of the metric
    ds^2 + psi^2 g_{S^{n-1}}, and f is the constant normalized potential.
    """
    n = flow.params['n']
    f, volume = perelman_normalization(flow, tau)
    geometry = flow.geometry_at(singular_time(flow) - tau)
    psi = np.sqrt(geometry.metric) * np.sin(flow.grid.x)
    psi_s = geometry.arclength_derivative(psi)
    R = -2 * (n - 1) * hessian(geometry, psi) / psi + (n - 1) * (n - 2) * (1 - psi_s ** 2) / psi ** 2
    potential = np.full(flow.grid.size, f)
    f_s = geometry.arclength_derivative(potential)
    # dv is the invariant measure scaled to the volume of the sphere
    density = np.exp(-potential) * (4 * math.pi * tau) ** (-0.5 * n) * volume / geometry.total_measure
    return geometry.operators.integrate((tau * (R + f_s ** 2) + potential - n) * density)
