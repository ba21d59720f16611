#  (C) Copyright the wentropy developers 2026. Distributed under the GPL-3.0-or-later
#  Software License, (See accompanying file LICENSE or copy at
#  https://www.gnu.org/licenses/gpl-3.0.txt)

import logging
import math
import weakref
from functools import cached_property
from typing import List, Optional

import numpy as np
import scipy.sparse as sp
from scipy.linalg import eigh, eigh_tridiagonal
from scipy.sparse.linalg import splu

from wentropy.errors import DomainError, InsufficientDataError, NumericalError, ResolutionError
from wentropy.flows import FlowFamily
from wentropy.space import Field, OperatorSet, WeightedGeometry

logger = logging.getLogger(__name__)

# Densities are floored inside logarithms only.
LOG_FLOOR = 1e-300
RELATIVE_LOG_FLOOR = 1e-13

# Eigenpairs with theta * lambda above this cutoff are dropped from spectral propagators.
SPECTRAL_CUTOFF = 60.0

# Kernels are resolvable for t > KERNEL_RESOLUTION * h^2.
KERNEL_RESOLUTION = 4.0

RANNACHER_STEPS = 2

# Negative values down to -NEGATIVE_TOLERANCE * max u are round-off and are clipped to zero.
NEGATIVE_TOLERANCE = 1e-6


def clipped(u: Field, what: str) -> Field:
    """Clips round-off negatives of a density to zero, raising DomainError for larger ones."""
    lowest = float(np.min(u))
    if lowest >= 0:
        return u
    if lowest < -NEGATIVE_TOLERANCE * float(np.max(np.abs(u))):
        raise DomainError(f'{what} has negative values (min {lowest:.3e})')
    logger.debug(f'clipped round-off negatives of {what} (min {lowest:.3e})')
    return np.maximum(u, 0.0)


def floored(u: Field) -> Field:
    """Replaces values below max(1e-300, 1e-13 max u) by that floor."""
    floor = max(LOG_FLOOR, RELATIVE_LOG_FLOOR * float(np.max(u)))
    return np.maximum(u, floor)


class HeatState(object):
    """A mass one density u at time t together with the operators of the geometry at time t."""

    def __init__(self, t: float, u: Field, ops: OperatorSet):
        self.t = float(t)
        self.u = u
        self.ops = ops

    @property
    def geometry(self) -> WeightedGeometry:
        return self.ops.geometry

    @property
    def mass(self) -> float:
        return self.ops.integrate(self.u)

    @cached_property
    def log_u(self) -> Field:
        return np.log(floored(self.u))

    def potential(self, N: float) -> Field:
        """f = -log u - (N/2) log(4 pi t)"""
        if self.t <= 0:
            raise DomainError(f'the potential f needs t > 0, got t = {self.t}')
        return -self.log_u - 0.5 * N * math.log(4 * math.pi * self.t)

    @cached_property
    def log_gradient(self) -> Field:
        """G = Gamma(log u, u) / u, which satisfies int G u dmu = I(u)."""
        return self.ops.gamma(self.log_u, self.u) / floored(self.u)


class Trajectory(object):
    def __init__(self, times: np.ndarray, states: List[HeatState], dt: float, flow: FlowFamily):
        self.times = np.asarray(times, dtype=float)
        self.states = states
        self.dt = dt
        self.flow = flow

    def __len__(self):
        return len(self.states)

    def __getitem__(self, k: int) -> HeatState:
        return self.states[k]

    def index(self, t: float) -> int:
        return int(np.argmin(np.abs(self.times - t)))

    def time_derivative(self, k: int) -> Field:
        """The central difference (u_{k+1} - u_{k-1}) / 2 dt at an interior index."""
        if not 0 < k < len(self.states) - 1:
            raise InsufficientDataError(f'no central difference at index {k} of a trajectory with {len(self)} states')
        return (self.states[k + 1].u - self.states[k - 1].u) / (2 * self.dt)

    def subsample(self, stride: int) -> 'Trajectory':
        states = self.states[::stride]
        return Trajectory(self.times[::stride], states, self.dt * stride, self.flow)


class SpectralPropagator(object):
    """
    The exact semigroup exp(theta L) of a fixed generator, from the eigenpairs of
    S = M^{-1/2} A M^{-1/2}. Only eigenvalues below SPECTRAL_CUTOFF / theta are kept.
    """

    def __init__(self, geometry: WeightedGeometry):
        self.geometry = geometry
        ops = geometry.operators
        self.sqrt_measure = np.sqrt(ops.measure)
        scale = sp.diags(1.0 / self.sqrt_measure)
        self.symmetric = (scale @ ops.stiffness @ scale).tocsr()
        row_sums = np.asarray(abs(self.symmetric).sum(axis=1)).ravel()
        self.bound = float(np.max(row_sums))
        self.cap = -1.0
        self.complete = False
        self.values: Optional[np.ndarray] = None
        self.vectors: Optional[np.ndarray] = None

    def ensure(self, cap: float) -> None:
        if self.complete or cap <= self.cap:
            return
        full = cap >= self.bound
        if self.geometry.grid.is_circle:
            dense = self.symmetric.toarray()
            if full:
                values, vectors = eigh(dense)
            else:
                values, vectors = eigh(dense, subset_by_value=(-1.0, cap))
        else:
            diagonal = self.symmetric.diagonal()
            off_diagonal = self.symmetric.diagonal(1)
            if full:
                values, vectors = eigh_tridiagonal(diagonal, off_diagonal)
            else:
                values, vectors = eigh_tridiagonal(diagonal, off_diagonal, select='v', select_range=(-1.0, cap))
        if not np.all(np.isfinite(values)):
            raise NumericalError('the eigenproblem of the generator returned non-finite values')
        self.values = np.maximum(values, 0.0)
        self.vectors = vectors
        self.cap = cap
        self.complete = full
        logger.debug(f'spectral propagator: {len(values)} eigenpairs below {cap:.4g} (complete: {full})')

    def _prepare(self, theta: float) -> np.ndarray:
        self.ensure(SPECTRAL_CUTOFF / theta)
        return np.exp(-theta * self.values)

    def apply(self, v: np.ndarray, theta: float) -> np.ndarray:
        if theta < 0:
            raise DomainError(f'spectral propagation needs theta >= 0, got {theta}')
        if theta == 0:
            return np.array(v, dtype=float)
        decay = self._prepare(theta)
        scaled = v * (self.sqrt_measure if v.ndim == 1 else self.sqrt_measure[:, None])
        coefficients = self.vectors.T @ scaled
        coefficients *= decay if v.ndim == 1 else decay[:, None]
        result = self.vectors @ coefficients
        return result / (self.sqrt_measure if v.ndim == 1 else self.sqrt_measure[:, None])

    def matrix(self, theta: float) -> np.ndarray:
        if theta == 0:
            return np.eye(len(self.sqrt_measure))
        decay = self._prepare(theta)
        core = (self.vectors * decay) @ self.vectors.T
        return core * (self.sqrt_measure[None, :] / self.sqrt_measure[:, None])


_spectra: 'weakref.WeakKeyDictionary[FlowFamily, SpectralPropagator]' = weakref.WeakKeyDictionary()


def spectral_propagator(flow: FlowFamily) -> SpectralPropagator:
    """The cached spectral propagator of the reference generator of a flow with a clock."""
    if flow.clock is None:
        raise DomainError(f'the {flow.kind} flow has no clock, its propagator is not spectral')
    key = flow.reference or flow
    propagator = _spectra.get(key)
    if propagator is None:
        propagator = SpectralPropagator(flow.reference_geometry())
        _spectra[key] = propagator
    return propagator


def _factorize(matrix: sp.spmatrix):
    try:
        return splu(matrix.tocsc())
    except RuntimeError as err:
        raise NumericalError(f'the Crank-Nicolson system is singular: {err}')


def _backward_euler(flow: FlowFamily, v: np.ndarray, t: float, dt: float) -> np.ndarray:
    ops = flow.operators_at(t + dt)
    return _factorize(ops.mass + dt * ops.stiffness).solve(ops.mass @ v)


def _crank_nicolson(flow: FlowFamily, v: np.ndarray, t0: float, dt: float, steps: int,
                    startup: int = 0, keep: bool = False) -> List[np.ndarray]:
    """
    Advances (M_h + dt/2 A_h) u^{k+1} = (M_h - dt/2 A_h) u^k with the operators of the half step time.
    The first startup steps are replaced by two backward Euler half steps each.
    """
    result = [v] if keep else []
    static = flow.static
    solver = None
    explicit = None
    u = v
    for k in range(steps):
        t = t0 + k * dt
        if k < startup:
            u = _backward_euler(flow, u, t, 0.5 * dt)
            u = _backward_euler(flow, u, t + 0.5 * dt, 0.5 * dt)
        else:
            if solver is None or not static:
                ops = flow.operators_at(t + 0.5 * dt)
                solver = _factorize(ops.mass + 0.5 * dt * ops.stiffness)
                explicit = ops.mass - 0.5 * dt * ops.stiffness
            u = solver.solve(explicit @ u)
        if not np.all(np.isfinite(u)):
            raise NumericalError(f'non-finite density at t = {t + dt:.6g}')
        if keep:
            result.append(u)
    return result if keep else [u]


def _check_initial(u0: Field, geometry: WeightedGeometry) -> Field:
    u0 = np.asarray(u0, dtype=float)
    if u0.shape != (geometry.grid.size,):
        raise DomainError(f'initial density has shape {u0.shape}, expected ({geometry.grid.size},)')
    u0 = clipped(u0, 'initial density')
    mass = float(np.dot(geometry.measure, u0))
    if not mass > 0:
        raise DomainError(f'initial density has non-positive mass {mass:.3e}')
    return u0 / mass


def solve(u0: Field, flow: FlowFamily, t0: float, T: float, dt: float, startup: int = 0) -> Trajectory:
    """
    Solves the heat equation d_t u = L_t u with Crank-Nicolson.
    @param u0: A non-negative initial density, normalized to mass one.
    @param flow: The flow family that provides L_t.
    @param t0: The initial time.
    @param T: The final time.
    @param dt: The requested step; it is adjusted so that the steps divide [t0, T].
    @param startup: The number of backward Euler startup steps for rough data.
    @return: The trajectory of mass one states.
    """
    if not T > t0:
        raise DomainError(f'empty time interval [{t0}, {T}]')
    if not dt > 0:
        raise DomainError(f'time step must be positive, got {dt}')
    steps = max(1, int(round((T - t0) / dt)))
    dt = (T - t0) / steps
    u = _check_initial(u0, flow.geometry_at(t0))
    densities = _crank_nicolson(flow, u, t0, dt, steps, startup=startup, keep=True)
    times = t0 + dt * np.arange(steps + 1)
    states = [HeatState(t, density, flow.operators_at(t)) for t, density in zip(times, densities)]
    logger.debug(f'solved {steps} Crank-Nicolson steps of size {dt:.4g} on {flow.kind}')
    return Trajectory(times, states, dt, flow)


def propagate(flow: FlowFamily, v: np.ndarray, s: float, t: float, dt: Optional[float] = None) -> np.ndarray:
    """
    Applies P_{t,s} to v (a field or a matrix of column fields) without materializing the propagator.
    Flows with a clock are propagated exactly, other flows with Crank-Nicolson.
    """
    if s > t:
        raise DomainError(f'propagator needs s <= t, got s = {s}, t = {t}')
    v = np.asarray(v, dtype=float)
    if s == t:
        return v.copy()
    if flow.clock is not None:
        return spectral_propagator(flow).apply(v, flow.clock(s, t))
    if dt is None:
        dt = min(flow.geometry_at(s).h_arc, (t - s) / 4)
    steps = max(1, int(math.ceil((t - s) / dt - 1e-9)))
    return _crank_nicolson(flow, v, s, (t - s) / steps, steps, startup=RANNACHER_STEPS)[-1]


def propagator(flow: FlowFamily, s: float, t: float) -> np.ndarray:
    """The dense matrix of P_{t,s}, mapping densities at time s to densities at time t."""
    if s > t:
        raise DomainError(f'propagator needs s <= t, got s = {s}, t = {t}')
    if flow.clock is not None:
        return spectral_propagator(flow).matrix(flow.clock(s, t))
    return propagate(flow, np.eye(flow.grid.size), s, t)


def adjoint_propagator(flow: FlowFamily, s: float, t: float) -> np.ndarray:
    """P*_{t,s} = M_s^{-1} P_{t,s}^T M_t, the adjoint with respect to the measures at s and t."""
    matrix = propagator(flow, s, t)
    measure_s = flow.geometry_at(s).measure
    measure_t = flow.geometry_at(t).measure
    return (matrix.T * measure_t[None, :]) / measure_s[:, None]


def _resolution_check(flow: FlowFamily, t: float, strict: bool) -> None:
    t_min = KERNEL_RESOLUTION * flow.geometry_at(0.0).h_arc ** 2
    if t <= t_min:
        message = f'heat kernel at t = {t:.4g} is not resolved by the grid (t_min = {t_min:.4g})'
        if strict:
            raise ResolutionError(message)
        logger.warning(message)


def heat_kernel(flow: FlowFamily, x0: int, t: float, strict: bool = True) -> HeatState:
    """
    Computes the fundamental solution p_t(., x0) as the propagated unit point mass at the node x0.
    @param flow: A flow family.
    @param x0: The index of the source node.
    @param t: The time, larger than 4 h^2.
    @param strict: Refuse unresolved times instead of warning.
    """
    _resolution_check(flow, t, strict)
    geometry = flow.geometry_at(0.0)
    v = np.zeros(flow.grid.size)
    v[x0] = 1.0 / geometry.measure[x0]
    if flow.clock is not None:
        u = spectral_propagator(flow).apply(v, flow.clock(0.0, t))
    else:
        smoothing = min(KERNEL_RESOLUTION * geometry.h_arc ** 2, 0.5 * t)
        v = _backward_euler(flow, v, 0.0, smoothing)
        u = propagate(flow, v, smoothing, t)
    try:
        u = clipped(u, f'heat kernel at t = {t:.4g}')
    except DomainError as err:
        raise NumericalError(str(err))
    ops = flow.operators_at(t)
    return HeatState(t, u / ops.integrate(u), ops)


def kernel_trajectory(flow: FlowFamily, x0: int, t0: float, t1: float, dt: float, strict: bool = True) -> Trajectory:
    """The heat kernel from x0 at t0 continued with Crank-Nicolson up to t1."""
    start = heat_kernel(flow, x0, t0, strict=strict)
    return solve(start.u, flow, t0, t1, dt)
