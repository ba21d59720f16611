#  (C) Copyright the wentropy developers 2026. Distributed under the GPL-3.0-or-later
#  Software License, (See accompanying file LICENSE or copy at
#  https://www.gnu.org/licenses/gpl-3.0.txt)

import logging
import math
from typing import List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from wentropy.errors import DomainError, NumericalError
from wentropy.flows import FlowFamily
from wentropy.space import Field, WeightedGeometry

logger = logging.getLogger(__name__)

BUDGET = 2000
CONVERGENCE_WINDOW = 50
CONVERGENCE_TOLERANCE = 1e-10
CONSTRAINT_TOLERANCE = 1e-8
ARMIJO = 1e-4
SMALLEST_STEP = 1e-10

# u = exp(-v/2) is kept above exp(-VARIABLE_CEILING/2)
VARIABLE_CEILING = 600.0


class LogSobolevSolution(object):
    """
    A minimizer of the W-entropy over the constraint int (4 pi t)^{-N/2} u^2 dmu = 1. The density of the
    extremal is (4 pi t)^{-N/2} u^2.
    """

    def __init__(self, t: float, N: float, K: float, mu: float, u: Field, constraint_residual: float,
                 iterations: int, converged: bool, history: List[float], spread: float = 0.0):
        self.t = t
        self.N = N
        self.K = K
        self.mu = mu
        self.u = u
        self.constraint_residual = constraint_residual
        self.iterations = iterations
        self.converged = converged
        self.history = history
        self.spread = spread
        self.el_residual: Optional[float] = None

    def __str__(self):
        state = 'converged' if self.converged else 'unconverged'
        return f'mu = {self.mu:.8g} at t = {self.t:g} ({state} after {self.iterations} iterations, spread {self.spread:.2e})'


def _normalization(t: float, N: float) -> float:
    return (4 * math.pi * t) ** (-0.5 * N)


def _euler_lagrange_constant(N: float, K: float, t: float) -> float:
    return N * (1 + 0.5 * K * t) ** 2


def w_functional(space: WeightedGeometry, u: Field, t: float, N: float, K: float = 0.0) -> float:
    """
    Evaluates W_{N,K} of the density (4 pi t)^{-N/2} u^2, i.e.
    (4 pi t)^{-N/2} int [4t |grad u|^2 - 2 u^2 log u - N(1 + Kt/2)^2 u^2] dmu.
    @param space: The geometry.
    @param u: A positive field.
    @param t: The time, t > 0.
    @param N: The synthetic dimension, finite.
    @param K: The curvature parameter.
    """
    if t <= 0 or math.isinf(N):
        raise DomainError(f'the W functional needs t > 0 and a finite N, got t = {t}, N = {N}')
    u = np.asarray(u, dtype=float)
    if np.any(u <= 0):
        raise DomainError('the W functional needs a positive field')
    ops = space.operators
    energy = float(u @ (ops.stiffness @ u))
    local = ops.integrate(2 * u ** 2 * np.log(u) + _euler_lagrange_constant(N, K, t) * u ** 2)
    return _normalization(t, N) * (4 * t * energy - local)


class _Problem(object):
    """The objective in the variable v = -2 log u, restricted to the constraint by an additive shift of v."""

    def __init__(self, space: WeightedGeometry, t: float, N: float, K: float):
        self.space = space
        self.ops = space.operators
        self.t = t
        self.N = N
        self.c = _normalization(t, N)
        self.c_K = _euler_lagrange_constant(N, K, t)
        self.K = K

    def project(self, v: Field) -> Field:
        lowest = float(np.min(v))
        shift = math.log(self.c * self.ops.integrate(np.exp(-(v - lowest)))) - lowest
        return np.minimum(v + shift, VARIABLE_CEILING)

    def objective(self, v: Field) -> float:
        u = np.exp(-0.5 * v)
        energy = float(u @ (self.ops.stiffness @ u))
        local = self.ops.integrate(-v * u ** 2 + self.c_K * u ** 2)
        return self.c * (4 * self.t * energy - local)

    def constraint_residual(self, v: Field) -> float:
        return abs(self.c * self.ops.integrate(np.exp(-v)) - 1.0)

    def gradient(self, v: Field) -> Field:
        """The gradient of the projected objective at a point on the constraint."""
        u = np.exp(-0.5 * v)
        measure = self.ops.measure
        d_u = self.c * (8 * self.t * (self.ops.stiffness @ u) -
                        measure * (-2 * v * u + 2 * u + 2 * self.c_K * u))
        g = -0.5 * u * d_u
        return g - np.sum(g) * self.c * measure * u ** 2

    def preconditioner(self, v: Field):
        """A weighted Newton metric c (2t D^T W_u D + diag(mu u^2 (1 + |v|)))."""
        u2 = np.exp(-v)
        ops = self.ops
        tail, head = self.space.grid.edges
        edge_u2 = 0.5 * (u2[tail] + u2[head])
        diffusion = ops.incidence.T @ sp.diags(ops.weights * edge_u2) @ ops.incidence
        matrix = self.c * (2 * self.t * diffusion + sp.diags(ops.measure * u2 * (1 + np.abs(v))))
        try:
            return splu(matrix.tocsc())
        except RuntimeError as err:
            raise NumericalError(f'singular log-Sobolev preconditioner at t = {self.t}: {err}') from err


def _descend(problem: _Problem, v: Field, budget: int) -> Tuple[Field, List[float], int, bool, float]:
    v = problem.project(v)
    value = problem.objective(v)
    history = [value]
    worst_constraint = problem.constraint_residual(v)
    for iteration in range(1, budget + 1):
        g = problem.gradient(v)
        direction = -problem.preconditioner(v).solve(g)
        slope = float(g @ direction)
        scale = max(1.0, abs(value))
        if slope > -1e-30 * scale:
            logger.debug(f'stationary after {iteration - 1} iterations (slope {slope:.2e})')
            return v, history, iteration - 1, True, worst_constraint
        step = 1.0
        while step >= SMALLEST_STEP:
            candidate = problem.project(v + step * direction)
            candidate_value = problem.objective(candidate)
            if candidate_value <= value + ARMIJO * step * slope:
                break
            step *= 0.5
        else:
            converged = abs(slope) <= 1e-14 * scale
            logger.debug(f'line search stalled after {iteration - 1} iterations (slope {slope:.2e})')
            return v, history, iteration - 1, converged, worst_constraint
        v, value = candidate, candidate_value
        history.append(value)
        worst_constraint = max(worst_constraint, problem.constraint_residual(v))
        if len(history) > CONVERGENCE_WINDOW and \
                abs(history[-1 - CONVERGENCE_WINDOW] - value) <= CONVERGENCE_TOLERANCE * scale:
            return v, history, iteration, True, worst_constraint
    return v, history, budget, False, worst_constraint


def initial_guesses(space: WeightedGeometry, t: float) -> List[Field]:
    """
    The uniform field, the Gaussian of scale t around the chart center and a perturbed Gaussian. Intervals
    also get the Gaussian at the left end, since a reflecting end halves the volume seen by a concentrated density.
    """
    grid = space.grid
    distances = space.distances_from(grid.size // 2)
    gaussian = distances ** 2 / (4 * t)
    phase = (grid.x - grid.lo) / (grid.hi - grid.lo)
    perturbation = 0.5 * np.cos(2 * math.pi * phase)
    guesses = [np.zeros(grid.size), gaussian, gaussian + perturbation]
    if not grid.is_circle:
        guesses.append(space.distances_from(0) ** 2 / (4 * t))
    return guesses


def optimal_constant(space: WeightedGeometry, t: float, N: float, K: float = 0.0, init: Optional[Field] = None,
                     budget: int = BUDGET) -> LogSobolevSolution:
    """
    Computes the optimal log-Sobolev constant mu_K(t) = inf W_{N,K}(u, t) over densities.
    @param space: The geometry.
    @param t: The time, t > 0.
    @param N: The synthetic dimension, finite.
    @param K: The curvature parameter.
    @param init: An optional positive start field u; by default the starts of initial_guesses are used and the best is kept.
    @param budget: The iteration budget per start.
    @return: The best solution; unconverged solutions are flagged.
    """
    if t <= 0 or math.isinf(N):
        raise DomainError(f'the log-Sobolev constant needs t > 0 and a finite N, got t = {t}, N = {N}')
    if init is None:
        starts = initial_guesses(space, t)
    else:
        init = np.asarray(init, dtype=float)
        if np.any(init <= 0):
            raise DomainError('the initial field of the log-Sobolev descent must be positive')
        starts = [-2 * np.log(init)]
    problem = _Problem(space, t, N, K)
    solutions = []
    for start in starts:
        v, history, iterations, converged, constraint = _descend(problem, start, budget)
        solutions.append(LogSobolevSolution(t, N, K, history[-1], np.exp(-0.5 * v), constraint, iterations,
                                            converged, history))
    best = min(solutions, key=lambda solution: solution.mu)
    values = [solution.mu for solution in solutions]
    best.spread = max(values) - min(values)
    if not best.converged:
        logger.warning(f'log-Sobolev descent at t = {t:g} did not converge within {budget} iterations')
    logger.debug(str(best))
    return best


def euler_lagrange_residual(solution: LogSobolevSolution, space: WeightedGeometry) -> float:
    """
    Computes |-4t Lu - 2u log u - N(1 + Kt/2)^2 u - mu u| / |u| in L^2(mu).
    """
    if not solution.converged:
        raise DomainError(f'refusing the Euler-Lagrange residual of an unconverged solution ({solution})')
    ops = space.operators
    u = solution.u
    t = solution.t
    residual = -4 * t * ops.apply(u) - 2 * u * np.log(u) - \
        (_euler_lagrange_constant(solution.N, solution.K, t) + solution.mu) * u
    value = math.sqrt(ops.integrate(residual ** 2) / ops.integrate(u ** 2))
    solution.el_residual = value
    return value


def mu_profile(flow: FlowFamily, N: float, K: float, times: Sequence[float],
               budget: int = BUDGET) -> Tuple[np.ndarray, List[LogSobolevSolution]]:
    """The optimal constants at the sample times, in the given order."""
    solutions = [optimal_constant(flow.geometry_at(t), t, N, K, budget=budget) for t in times]
    return np.array([solution.mu for solution in solutions]), solutions


def mu_monotonicity(flow: FlowFamily, N: float, K: float, times: Sequence[float], budget: int = BUDGET):
    """
    Checks that mu_K(t) does not increase along the sample times. Listing the times in decreasing order
    runs the scan backwards in time, which makes a strictly decreasing profile fail.
    @return: The CheckResult of MU_MONOTONE.
    """
    from wentropy.verify import run_check

    return run_check('MU_MONOTONE', None, flow, {'N': N, 'K': K, 'times': list(times), 'budget': budget})
