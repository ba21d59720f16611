#  (C) Copyright the wentropy developers 2026. Distributed under the GPL-3.0-or-later
#  Software License, (See accompanying file LICENSE or copy at
#  https://www.gnu.org/licenses/gpl-3.0.txt)

import logging
import math
from functools import cached_property
from typing import Callable, Dict, Optional, Tuple, Union

import numpy as np
import scipy.sparse as sp

from wentropy.errors import ConfigurationError, DomainError, ModelError

logger = logging.getLogger(__name__)

# A field is a vector with one value per grid node.
Field = np.ndarray
ChartFunction = Callable[[np.ndarray], np.ndarray]

GAUSS_POINTS = 8

# Number of nodes at each interval end where second order stencils see the reflecting face.
BOUNDARY_LAYER = 3


class Grid1D(object):
    """
    A uniform one dimensional grid. Interval grids are cell centered with reflecting faces at
    lo and hi, circle grids have nodes lo + i h and periodic closure.
    """

    def __init__(self, topology: str, lo: float, hi: float, size: int, boundary: Optional[str] = None):
        """
        @param topology: 'circle' or 'interval'
        @param lo: The left end of the chart.
        @param hi: The right end of the chart.
        @param size: The number of nodes.
        @param boundary: 'periodic' or 'reflecting'; a circle defaults to periodic.
        """
        if topology not in ('circle', 'interval'):
            raise ConfigurationError(f'unknown topology {topology!r}')
        if not hi > lo:
            raise ConfigurationError(f'empty chart [{lo}, {hi}]')
        if size < 3:
            raise ConfigurationError(f'a grid needs at least 3 nodes, got {size}')
        if topology == 'circle':
            boundary = boundary or 'periodic'
            if boundary != 'periodic':
                raise ConfigurationError(f'a circle requires the periodic boundary rule, got {boundary!r}')
        elif boundary not in (None, 'reflecting'):
            raise ConfigurationError(f'an interval supports only the reflecting boundary rule, got {boundary!r}')
        self.topology = topology
        self.lo = float(lo)
        self.hi = float(hi)
        self.size = int(size)
        self.boundary = boundary
        self.h = (self.hi - self.lo) / self.size
        if topology == 'circle':
            self.x = self.lo + self.h * np.arange(self.size)
        else:
            self.x = self.lo + self.h * (np.arange(self.size) + 0.5)

    @staticmethod
    def interval(lo: float, hi: float, size: int) -> 'Grid1D':
        return Grid1D('interval', lo, hi, size, 'reflecting')

    @staticmethod
    def circle(lo: float, hi: float, size: int) -> 'Grid1D':
        return Grid1D('circle', lo, hi, size, 'periodic')

    @property
    def is_circle(self) -> bool:
        return self.topology == 'circle'

    @cached_property
    def edges(self) -> Tuple[np.ndarray, np.ndarray]:
        """The (tail, head) node indices of every edge."""
        if self.is_circle:
            tail = np.arange(self.size)
            return tail, (tail + 1) % self.size
        tail = np.arange(self.size - 1)
        return tail, tail + 1

    @cached_property
    def edge_midpoints(self) -> np.ndarray:
        tail, _ = self.edges
        return self.x[tail] + 0.5 * self.h

    @cached_property
    def cell_bounds(self) -> Tuple[np.ndarray, np.ndarray]:
        return self.x - 0.5 * self.h, self.x + 0.5 * self.h

    def nearest_node(self, x: float) -> int:
        return int(np.argmin(np.abs(self.x - x)))

    def derivative(self, f: Field) -> Field:
        """Second order centered first derivative, one sided at interval ends."""
        if self.is_circle:
            return (np.roll(f, -1) - np.roll(f, 1)) / (2.0 * self.h)
        return np.gradient(f, self.h, edge_order=2)

    def second_derivative(self, f: Field) -> Field:
        if self.is_circle:
            return (np.roll(f, -1) - 2.0 * f + np.roll(f, 1)) / self.h ** 2
        result = np.gradient(np.gradient(f, self.h, edge_order=2), self.h, edge_order=2)
        result[1:-1] = (f[2:] - 2.0 * f[1:-1] + f[:-2]) / self.h ** 2
        return result

    def __str__(self):
        return f'{self.topology}[{self.lo:g}, {self.hi:g}] with {self.size} nodes'


class WeightedGeometry(object):
    """
    A weighted chart (X, g = a dx^2, e^{-phi} dm). The model dimension m is the volume exponent of
    the reduced model: the measure density is e^{-phi} a^{m/2} and the edge conductance is
    e^{-phi} a^{(m-2)/2}. The geometric dimension of the chart is always 1.
    """

    dimension = 1

    def __init__(self,
                 grid: Grid1D,
                 metric: Field,
                 potential: Field,
                 model_dimension: float = 1.0,
                 measure: Optional[Field] = None,
                 conductance: Optional[Field] = None,
                 edge_metric: Optional[Field] = None,
                 derivatives: Optional[Dict[str, Field]] = None,
                 collar: Tuple[float, float] = (0.0, 0.0)
                 ):
        """
        @param grid: The underlying grid.
        @param metric: The nodal metric coefficient a > 0.
        @param potential: The nodal potential phi.
        @param model_dimension: The volume exponent m.
        @param measure: Optional cell masses; defaults to e^{-phi} a^{m/2} h.
        @param conductance: Optional edge densities e^{-phi} a^{(m-2)/2}; defaults to nodal averages.
        @param edge_metric: Optional metric coefficient at the edge midpoints.
        @param derivatives: Optional analytic chart derivatives with keys potential_x, potential_xx,
                            metric_x and metric_xx.
        @param collar: Widths excluded from pointwise checks at the left and right chart ends.
        """
        self.grid = grid
        self.metric = np.asarray(metric, dtype=float)
        self.potential = np.asarray(potential, dtype=float)
        self.model_dimension = float(model_dimension)
        self.collar = (float(collar[0]), float(collar[1]))
        self.derivatives = dict(derivatives or {})

        n = grid.size
        if self.metric.shape != (n,) or self.potential.shape != (n,):
            raise ConfigurationError(f'metric and potential must have {n} nodal values')
        if not np.all(np.isfinite(self.metric)) or np.any(self.metric <= 0):
            raise ConfigurationError(f'non-positive metric coefficient (min {np.min(self.metric):.3e})')
        if not np.all(np.isfinite(self.potential)):
            raise ConfigurationError('the potential must be finite at every node')

        m = self.model_dimension
        tail, head = grid.edges
        if measure is None:
            measure = np.exp(-self.potential) * self.metric ** (m / 2) * grid.h
        if edge_metric is None:
            edge_metric = 0.5 * (self.metric[tail] + self.metric[head])
        if conductance is None:
            density = np.exp(-self.potential) * self.metric ** ((m - 2) / 2)
            conductance = 0.5 * (density[tail] + density[head])
        self.measure = np.asarray(measure, dtype=float)
        self.edge_metric = np.asarray(edge_metric, dtype=float)
        self.conductance = np.asarray(conductance, dtype=float)

        if not np.all(np.isfinite(self.measure)) or np.any(self.measure <= 0):
            raise ConfigurationError(f'non-positive measure weight (min {np.min(self.measure):.3e})')
        if not np.all(np.isfinite(self.conductance)) or np.any(self.conductance <= 0):
            raise ConfigurationError('edge conductances must be positive and finite')
        if np.any(self.edge_metric <= 0):
            raise ConfigurationError('non-positive metric coefficient at an edge')

    @staticmethod
    def from_functions(grid: Grid1D,
                       metric: ChartFunction,
                       potential: ChartFunction,
                       model_dimension: float = 1.0,
                       potential_x: Optional[ChartFunction] = None,
                       potential_xx: Optional[ChartFunction] = None,
                       metric_x: Optional[ChartFunction] = None,
                       metric_xx: Optional[ChartFunction] = None,
                       collar: Tuple[float, float] = (0.0, 0.0)
                       ) -> 'WeightedGeometry':
        """
        Builds a geometry from closed forms. Cell masses are Gauss-Legendre integrals of the
        measure density over each cell, conductances are sampled at the edge midpoints.
        """
        m = float(model_dimension)
        xi, weights = np.polynomial.legendre.leggauss(GAUSS_POINTS)
        half = 0.5 * grid.h
        points = grid.x[:, None] + half * xi[None, :]
        density = np.broadcast_to(np.exp(-potential(points)) * metric(points) ** (m / 2), points.shape)
        measure = half * density @ weights

        midpoints = grid.edge_midpoints
        edge_metric = np.broadcast_to(metric(midpoints), midpoints.shape)
        conductance = np.exp(-potential(midpoints)) * edge_metric ** ((m - 2) / 2)

        derivatives = {}
        for key, function in (('potential_x', potential_x), ('potential_xx', potential_xx),
                              ('metric_x', metric_x), ('metric_xx', metric_xx)):
            if function is not None:
                derivatives[key] = np.broadcast_to(function(grid.x), grid.x.shape).astype(float)

        return WeightedGeometry(grid,
                                np.broadcast_to(metric(grid.x), grid.x.shape),
                                np.broadcast_to(potential(grid.x), grid.x.shape),
                                model_dimension=m,
                                measure=measure,
                                conductance=conductance,
                                edge_metric=edge_metric,
                                derivatives=derivatives,
                                collar=collar)

    @cached_property
    def operators(self) -> 'OperatorSet':
        return build_operators(self)

    @property
    def total_measure(self) -> float:
        return float(np.sum(self.measure))

    @property
    def h_arc(self) -> float:
        """The largest arclength spacing of the grid."""
        return self.grid.h * math.sqrt(float(np.max(self.metric)))

    def _chart_derivative(self, key: str, values: Field, order: int) -> Field:
        if key in self.derivatives:
            return self.derivatives[key]
        if order == 1:
            return self.grid.derivative(values)
        return self.grid.second_derivative(values)

    @cached_property
    def effective_potential(self) -> Field:
        """V = phi - ((m-1)/2) log a, so that L f = f_ss - V_s f_s in arclength."""
        return self.potential - 0.5 * (self.model_dimension - 1) * np.log(self.metric)

    @cached_property
    def effective_potential_derivatives(self) -> Tuple[Field, Field]:
        """The arclength derivatives (V_s, V_ss)."""
        a = self.metric
        c = 0.5 * (self.model_dimension - 1)
        phi_x = self._chart_derivative('potential_x', self.potential, 1)
        phi_xx = self._chart_derivative('potential_xx', self.potential, 2)
        a_x = self._chart_derivative('metric_x', a, 1)
        a_xx = self._chart_derivative('metric_xx', a, 2)
        v_x = phi_x - c * a_x / a
        v_xx = phi_xx - c * (a_xx / a - (a_x / a) ** 2)
        v_s = v_x / np.sqrt(a)
        v_ss = (v_xx - 0.5 * (a_x / a) * v_x) / a
        return v_s, v_ss

    @cached_property
    def metric_slope(self) -> Field:
        """a_x / a"""
        return self._chart_derivative('metric_x', self.metric, 1) / self.metric

    def arclength_derivative(self, f: Field) -> Field:
        return self.grid.derivative(f) / np.sqrt(self.metric)

    @cached_property
    def face_arclength(self) -> np.ndarray:
        """Arclength of the cell faces, starting at 0 at the left face."""
        return np.concatenate(([0.0], np.cumsum(np.sqrt(self.metric) * self.grid.h)))

    @cached_property
    def arclength(self) -> Field:
        """Arclength coordinate of the nodes."""
        faces = self.face_arclength
        return 0.5 * (faces[:-1] + faces[1:])

    def distances_from(self, node: int) -> Field:
        d = np.abs(self.arclength - self.arclength[node])
        if self.grid.is_circle:
            d = np.minimum(d, self.face_arclength[-1] - d)
        return d

    def __str__(self):
        return f'weighted {self.grid} (m = {self.model_dimension:g}, measure {self.total_measure:.6g})'


class OperatorSet(object):
    """
    The divergence form calculus of a weighted geometry: the generator L = -M^{-1} D^T W D,
    the carre du champ and the edge gradient. M L is symmetric, so integration by parts is exact.
    """

    def __init__(self, geometry: WeightedGeometry):
        grid = geometry.grid
        if grid.topology == 'interval' and grid.boundary != 'reflecting':
            raise ConfigurationError('an interval grid requires the reflecting boundary rule')
        n = grid.size
        tail, head = grid.edges
        rows = np.arange(len(tail))
        self.geometry = geometry
        self.measure = geometry.measure
        self.weights = geometry.conductance / grid.h
        self.incidence = sp.csr_matrix(
            (np.concatenate((-np.ones(len(tail)), np.ones(len(head)))),
             (np.concatenate((rows, rows)), np.concatenate((tail, head)))),
            shape=(len(tail), n))
        self.abs_incidence = abs(self.incidence)
        self.stiffness = (self.incidence.T @ sp.diags(self.weights) @ self.incidence).tocsc()
        self.L = -(sp.diags(1.0 / self.measure) @ self.stiffness).tocsr()
        self.mass = sp.diags(self.measure).tocsc()
        self.interior = self._interior_mask()

    def _interior_mask(self) -> np.ndarray:
        grid = self.geometry.grid
        mask = np.ones(grid.size, dtype=bool)
        if not grid.is_circle:
            mask[:BOUNDARY_LAYER] = False
            mask[-BOUNDARY_LAYER:] = False
        left, right = self.geometry.collar
        mask &= grid.x - grid.lo >= left
        mask &= grid.hi - grid.x >= right
        return mask

    def _check(self, f: Field) -> Field:
        f = np.asarray(f, dtype=float)
        if f.shape[0] != self.geometry.grid.size:
            raise DomainError(f'field has {f.shape[0]} values, the grid has {self.geometry.grid.size} nodes')
        return f

    def apply(self, f: Field) -> Field:
        return self.L @ self._check(f)

    def edge_differences(self, f: Field) -> Field:
        return self.incidence @ self._check(f)

    def gamma(self, f: Field, g: Field) -> Field:
        df = self.edge_differences(f)
        dg = self.edge_differences(g)
        return 0.5 * (self.abs_incidence.T @ (self.weights * df * dg)) / self.measure

    def gradient(self, f: Field) -> Field:
        """The metric gradient on the edges."""
        return self.edge_differences(f) / (self.geometry.grid.h * np.sqrt(self.geometry.edge_metric))

    def inner(self, f: Field, g: Field) -> float:
        return float(np.dot(self.measure * f, g))

    def integrate(self, f: Field, mask: Optional[np.ndarray] = None) -> float:
        if mask is None:
            return float(np.dot(self.measure, f))
        return float(np.dot(self.measure[mask], np.asarray(f)[mask]))


class CurvaturePanel(object):
    def __init__(self, ric_field: Field, hessian_field: Field, gamma2_field: Field):
        self.ric_field = ric_field
        self.hessian_field = hessian_field
        self.gamma2_field = gamma2_field


def build_operators(geom: WeightedGeometry) -> OperatorSet:
    """
    Builds the Witten Laplacian and its square field operator.
    @param geom: A weighted geometry.
    @return: The operator set of the geometry.
    """
    ops = OperatorSet(geom)
    logger.debug(f'built operators on {geom}')
    return ops


def carre_du_champ(ops: OperatorSet, f: Field, g: Field) -> Field:
    return ops.gamma(f, g)


def gamma2(ops: OperatorSet, f: Field) -> Field:
    """
    Computes Gamma_2(f, f) = 1/2 L Gamma(f, f) - Gamma(f, L f). The values in the boundary layer of an
    interval and inside the collar are not reliable, see ops.interior.
    """
    f = np.asarray(f, dtype=float)
    return 0.5 * ops.apply(ops.gamma(f, f)) - ops.gamma(f, ops.apply(f))


def hessian(geom: WeightedGeometry, f: Field) -> Field:
    """The covariant second derivative f_ss = (f_xx - 1/2 (a_x / a) f_x) / a."""
    grid = geom.grid
    f_x = grid.derivative(f)
    f_xx = grid.second_derivative(f)
    return (f_xx - 0.5 * geom.metric_slope * f_x) / geom.metric


def _is_constant(values: Field, scale: float) -> bool:
    return float(np.max(np.abs(values))) <= 1e-10 * max(1.0, scale)


def bakry_emery_ricci(geom: WeightedGeometry, N: float, f: Field) -> Field:
    """
    Computes Ric_{N,1}(L)(grad f, grad f) = (V_ss - V_s^2 / (N - 1)) f_s^2 with V the effective potential.
    N = inf drops the last term.
    @param geom: A weighted geometry.
    @param N: The synthetic dimension, at least 1.
    @param f: A test field.
    @return: The nodal curvature field.
    """
    n = geom.dimension
    if N < n:
        raise DomainError(f'the synthetic dimension N = {N} is smaller than the dimension n = {n}')
    v_s, v_ss = geom.effective_potential_derivatives
    f_s = geom.arclength_derivative(np.asarray(f, dtype=float))
    if math.isinf(N):
        return v_ss * f_s ** 2
    if N == n:
        interior = geom.operators.interior
        if not _is_constant(v_s[interior], float(np.max(np.abs(geom.effective_potential)))):
            raise ModelError('N = n requires a constant potential')
        return np.zeros_like(f_s)
    return (v_ss - v_s ** 2 / (N - n)) * f_s ** 2


def curvature_panel(geom: WeightedGeometry, N: float, f: Field) -> CurvaturePanel:
    f = np.asarray(f, dtype=float)
    f_s = geom.arclength_derivative(f)
    ric = bakry_emery_ricci(geom, N, f)
    with np.errstate(divide='ignore', invalid='ignore'):
        ric_field = np.where(np.abs(f_s) > 1e-12, ric / f_s ** 2, np.nan)
    return CurvaturePanel(ric_field, hessian(geom, f), gamma2(geom.operators, f))


def s_kappa(kappa: float, theta: float) -> float:
    if kappa > 0:
        return math.sin(math.sqrt(kappa) * theta) / math.sqrt(kappa)
    if kappa < 0:
        return math.sinh(math.sqrt(-kappa) * theta) / math.sqrt(-kappa)
    return theta


def c_kappa(kappa: float, theta: float) -> float:
    if kappa >= 0:
        return math.cos(math.sqrt(kappa) * theta)
    return math.cosh(math.sqrt(-kappa) * theta)


def distortion_coefficient(kappa: float, theta: float, t: float) -> float:
    """
    Computes the distortion coefficient sigma_kappa^{(t)}(theta).
    @param kappa: The curvature parameter.
    @param theta: A distance, theta >= 0.
    @param t: An interpolation parameter in [0, 1].
    @return: s_kappa(t theta) / s_kappa(theta), t in the degenerate case and inf beyond the first conjugate point.
    """
    if theta < 0 or not 0 <= t <= 1:
        raise DomainError(f'distortion coefficient needs theta >= 0 and t in [0, 1], got ({theta}, {t})')
    k = kappa * theta ** 2
    if k >= math.pi ** 2:
        return math.inf
    if k == 0:
        return t
    return s_kappa(kappa, t * theta) / s_kappa(kappa, theta)


def cheeger_energy(geom: WeightedGeometry, f: Field) -> float:
    ops = geom.operators
    df = ops.edge_differences(f)
    return float(np.dot(ops.weights, df * df))


def ball_volume(geom: WeightedGeometry, center: float, r: Union[float, np.ndarray]) -> Union[float, np.ndarray]:
    """
    Computes the measure of the arclength ball of radius r around the chart point center. The value
    is exact when the ball ends on cell faces and linearly interpolated inside cells.
    """
    faces = geom.face_arclength
    cumulative = np.concatenate(([0.0], np.cumsum(geom.measure)))
    grid = geom.grid
    position = (center - (grid.x[0] - 0.5 * grid.h)) / grid.h
    s_center = float(np.interp(position, np.arange(len(faces)), faces))
    r = np.asarray(r, dtype=float)
    if grid.is_circle:
        period = faces[-1]
        total = cumulative[-1]
        extended_faces = np.concatenate((faces[:-1] - period, faces[:-1], faces + period))
        extended_mass = np.concatenate((cumulative[:-1] - total, cumulative[:-1], cumulative + total))
        volume = np.interp(s_center + r, extended_faces, extended_mass) - \
            np.interp(s_center - r, extended_faces, extended_mass)
        volume = np.where(2 * r >= period, total, volume)
    else:
        volume = np.interp(s_center + r, faces, cumulative) - np.interp(s_center - r, faces, cumulative)
    return float(volume) if volume.ndim == 0 else volume
