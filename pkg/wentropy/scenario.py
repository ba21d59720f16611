#  (C) Copyright the wentropy developers 2026. Distributed under the GPL-3.0-or-later
#  Software License, (See accompanying file LICENSE or copy at
#  https://www.gnu.org/licenses/gpl-3.0.txt)

import json
import logging
import math
import time
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np

import wentropy
from wentropy.entropy import SERIES_COLUMNS, entropy_series
from wentropy.errors import ConfigurationError, DomainError, InsufficientDataError, ModelError, ResolutionError
from wentropy.flows import FlowFamily, certify_class, describe, make_canonical, make_shrinking_sphere
from wentropy.heat import Trajectory, kernel_trajectory
from wentropy.logsobolev import euler_lagrange_residual, optimal_constant
from wentropy.verify import CHECKS, CheckResult, refinement_study, run_check

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1

SCENARIO_DIRECTORY = Path(__file__).resolve().parent.parent / 'scenarios'

FLOW_KINDS = ('flat_circle', 'flat_line', 'ou_line', 'cone', 'weighted_sphere', 'shrinking_sphere')

# the parameters each flow kind accepts under flow.*
FLOW_PARAMETERS = {
    'flat_circle': ('length',),
    'flat_line': ('extent',),
    'ou_line': ('extent',),
    'cone': ('N', 'radius'),
    'weighted_sphere': ('n',),
    'shrinking_sphere': ('n', 'horizon_fraction'),
}

# the parameters accepted under check.<ID>.*
CHECK_PARAMETERS = ('N', 'K', 'a', 's', 't', 'samples', 'origin', 'center', 'r_min', 'r_max', 'radii', 'tau_min',
                    'tau_max', 'taus', 'epsilon', 't_late', 't_min', 't_max', 'sources', 'dt', 'times', 'budget',
                    'tolerance', 'limit')

INTEGER_PARAMETERS = ('samples', 'radii', 'taus', 'sources', 'budget')

KNOWN_KEYS = ('version', 'name', 'description', 'flow.kind', 'grid.size', 'time.start', 'time.end', 'time.step',
              'source.x', 'params.N', 'params.K', 'params.a', 'checks', 'refinement.levels', 'logsobolev.t',
              'output.timestamp')

MIN_GRID_SIZE = 64
MAX_GRID_SIZE = 8192

# errors of the numerical layers that a scenario file can provoke
INPUT_ERRORS = (DomainError, ModelError, InsufficientDataError)


class Properties(dict):
    """The key-value pairs of a scenario file, with the line and column of every value."""

    def __init__(self):
        super().__init__()
        self.positions: Dict[str, Tuple[int, int]] = {}

    def error(self, key: str, message: str) -> ConfigurationError:
        line, column = self.positions.get(key, (None, None))
        return ConfigurationError(message, line, column)


def parse_properties(text: str) -> Properties:
    """
    Parses a string containing key-value pairs.
    Lines should have the format `key = value`. A value can be a multiline string. In that
    case subsequent lines should start with a space. Lines starting with '#' are ignored.
    @param text: A string.
    @return: The key-value pairs, with their positions.
    """
    result = Properties()
    key = None
    value = []

    for number, line in enumerate(text.splitlines(), start=1):
        line = line.rstrip()
        if line.startswith('#') or not line.strip():
            continue
        elif line.startswith(' '):
            if key is None:
                raise ConfigurationError(f"continuation line '{line.strip()}' without a key", number, 1)
            value.append(line.lstrip())
        else:
            if key:
                result[key] = '\n'.join(value).strip()
            words = line.split('=', 1)
            if len(words) != 2:
                raise ConfigurationError(f"expected 'key = value', got '{line}'", number, 1)
            key = words[0].strip()
            if not key:
                raise ConfigurationError('empty key', number, 1)
            if key in result.positions:
                raise ConfigurationError(f'duplicate key {key!r}', number, 1)
            column = len(words[0]) + 2 + len(words[1]) - len(words[1].lstrip())
            result.positions[key] = (number, column)
            value = [words[1].strip()]

    if key:
        result[key] = '\n'.join(value).strip()

    return result


def _convert(properties: Properties, key: str, convert: Callable[[str], Any], default: Any = None,
             required: bool = False) -> Any:
    if key not in properties or properties[key] == '':
        if required:
            raise ConfigurationError(f'missing required key {key!r}')
        return default
    text = properties[key]
    try:
        return convert(text)
    except ValueError:
        raise properties.error(key, f'invalid value {text!r} for {key!r}')


def _boolean(text: str) -> bool:
    lowered = text.lower()
    if lowered in ('true', 'yes', '1'):
        return True
    if lowered in ('false', 'no', '0'):
        return False
    raise ValueError(text)


def _floats(text: str) -> List[float]:
    return [float(word) for word in text.split()]


class ScenarioConfig(object):
    def __init__(self,
                 name: str,
                 flow_kind: str,
                 flow_params: Dict[str, float],
                 size: int,
                 t_start: float,
                 t_end: float,
                 dt: float,
                 N: float = math.inf,
                 K: float = 0.0,
                 a: float = 0.0,
                 checks: Optional[List[str]] = None,
                 overrides: Optional[Dict[str, Dict[str, Any]]] = None,
                 source: Optional[float] = None,
                 refinement_levels: int = 0,
                 logsobolev_t: Optional[float] = None,
                 description: str = '',
                 strict: bool = False,
                 timestamp: bool = False,
                 properties: Optional[Properties] = None
                 ):
        self.name = name
        self.flow_kind = flow_kind
        self.flow_params = flow_params
        self.size = size
        self.t_start = t_start
        self.t_end = t_end
        self.dt = dt
        self.N = N
        self.K = K
        self.a = a
        self.checks = list(checks or [])
        self.overrides = dict(overrides or {})
        self.source = source
        self.refinement_levels = refinement_levels
        self.logsobolev_t = logsobolev_t
        self.description = description
        self.strict = strict
        self.timestamp = timestamp
        self.properties = properties if properties is not None else Properties()

    @staticmethod
    def from_properties(properties: Properties, strict: bool = False) -> 'ScenarioConfig':
        """
        Validates the key-value pairs of a scenario file.
        @param properties: The parsed scenario.
        @param strict: Reject unknown keys instead of ignoring them with a warning.
        """
        version = _convert(properties, 'version', int, required=True)
        if version != SCHEMA_VERSION:
            raise properties.error('version', f'unsupported scenario version {version}, expected {SCHEMA_VERSION}')

        flow_kind = _convert(properties, 'flow.kind', str, required=True)
        if flow_kind not in FLOW_KINDS:
            raise properties.error('flow.kind', f'unknown flow kind {flow_kind!r}, expected one of {", ".join(FLOW_KINDS)}')
        flow_params = {}
        for parameter in FLOW_PARAMETERS[flow_kind]:
            value = _convert(properties, f'flow.{parameter}', float)
            if value is not None:
                flow_params[parameter] = value

        size = _convert(properties, 'grid.size', int, required=True)
        if not MIN_GRID_SIZE <= size <= MAX_GRID_SIZE:
            raise properties.error('grid.size', f'grid size {size} outside [{MIN_GRID_SIZE}, {MAX_GRID_SIZE}]')
        t_start = _convert(properties, 'time.start', float, required=True)
        t_end = _convert(properties, 'time.end', float, required=True)
        if not 0 < t_start < t_end:
            raise properties.error('time.end', f'expected 0 < time.start < time.end, got {t_start} and {t_end}')
        dt = _convert(properties, 'time.step', float, required=True)
        if not dt > 0:
            raise properties.error('time.step', f'the time step must be positive, got {dt}')

        checks = _convert(properties, 'checks', str.split, default=[])
        for check_id in checks:
            if check_id not in CHECKS:
                raise properties.error('checks', f'unknown check id {check_id!r}')
        if len(set(checks)) != len(checks):
            raise properties.error('checks', 'a check id is listed twice')

        overrides: Dict[str, Dict[str, Any]] = {}
        unknown = []
        for key in properties:
            if key in KNOWN_KEYS or (key.startswith('flow.') and key[5:] in FLOW_PARAMETERS[flow_kind]):
                continue
            words = key.split('.')
            if len(words) == 3 and words[0] == 'check' and words[1] in CHECKS and words[2] in CHECK_PARAMETERS:
                if words[1] not in checks:
                    raise properties.error(key, f'parameter for the check {words[1]} which is not listed in checks')
                parameter = words[2]
                if parameter == 'times':
                    value = _convert(properties, key, _floats)
                elif parameter in INTEGER_PARAMETERS:
                    value = _convert(properties, key, int)
                else:
                    value = _convert(properties, key, float)
                overrides.setdefault(words[1], {})[parameter] = value
                continue
            unknown.append(key)
        for key in unknown:
            if strict:
                raise properties.error(key, f'unknown key {key!r}')
            logger.warning(f'ignoring unknown key {key!r} at line {properties.positions[key][0]}')

        refinement_levels = _convert(properties, 'refinement.levels', int, default=0)
        if refinement_levels == 1 or refinement_levels < 0:
            raise properties.error('refinement.levels', f'a refinement study needs 0 or at least 2 levels, got {refinement_levels}')
        logsobolev_t = _convert(properties, 'logsobolev.t', float)
        if logsobolev_t is not None and not logsobolev_t > 0:
            raise properties.error('logsobolev.t', f'the log-Sobolev time must be positive, got {logsobolev_t}')

        return ScenarioConfig(name=_convert(properties, 'name', str, required=True),
                              flow_kind=flow_kind,
                              flow_params=flow_params,
                              size=size,
                              t_start=t_start,
                              t_end=t_end,
                              dt=dt,
                              N=_convert(properties, 'params.N', float, default=math.inf),
                              K=_convert(properties, 'params.K', float, default=0.0),
                              a=_convert(properties, 'params.a', float, default=0.0),
                              checks=checks,
                              overrides=overrides,
                              source=_convert(properties, 'source.x', float),
                              refinement_levels=refinement_levels,
                              logsobolev_t=logsobolev_t,
                              description=_convert(properties, 'description', str, default=''),
                              strict=strict,
                              timestamp=_convert(properties, 'output.timestamp', _boolean, default=False),
                              properties=properties)

    def build_flow(self, size: Optional[int] = None) -> FlowFamily:
        size = self.size if size is None else size
        if self.flow_kind == 'shrinking_sphere':
            return make_shrinking_sphere(n=int(self.flow_params.get('n', 2)),
                                         horizon_fraction=self.flow_params.get('horizon_fraction', 0.8),
                                         size=size)
        params = dict(self.flow_params)
        if 'n' in params:
            params['n'] = int(params['n'])
        return make_canonical(self.flow_kind, size=size, **params)

    def source_node(self, flow: FlowFamily) -> int:
        grid = flow.grid
        if self.source is not None:
            if not grid.lo <= self.source <= grid.hi:
                raise self.properties.error('source.x', f'source {self.source} outside the chart [{grid.lo:g}, {grid.hi:g}]')
            return grid.nearest_node(self.source)
        if flow.kind == 'cone':
            return 0
        return grid.size // 2

    def check_params(self, check_id: str) -> Dict[str, Any]:
        params: Dict[str, Any] = {'N': self.N, 'K': self.K, 'a': self.a}
        params.update(self.overrides.get(check_id, {}))
        return params

    def echo(self) -> Dict[str, str]:
        return {key: self.properties[key] for key in sorted(self.properties)}


def load_scenario(path: Path, strict: bool = False) -> ScenarioConfig:
    return ScenarioConfig.from_properties(parse_properties(Path(path).read_text()), strict)


def builtin_path(name: str) -> Path:
    path = SCENARIO_DIRECTORY / f'{name}.txt'
    if not path.is_file() or name == 'REFERENCE':
        raise ConfigurationError(f'unknown built-in scenario {name!r}, available: {", ".join(list_scenarios())}')
    return path


def list_scenarios() -> List[str]:
    return sorted(path.stem for path in SCENARIO_DIRECTORY.glob('*.txt') if path.stem != 'REFERENCE')


def scenario_description(name: str) -> str:
    return parse_properties(builtin_path(name).read_text()).get('description', '')


class RunReport(object):
    def __init__(self, config: ScenarioConfig, results: List[CheckResult], series: List[List[float]],
                 environment: Dict[str, Any], flow_summary: Dict[str, Any],
                 logsobolev: Optional[Dict[str, Any]] = None, extremal: Optional[np.ndarray] = None):
        self.config = config
        self.results = results
        self.series = series
        self.environment = environment
        self.flow_summary = flow_summary
        self.logsobolev = logsobolev
        self.extremal = extremal
        self.series_files: List[str] = []

    @property
    def passed(self) -> bool:
        return all(result.status != 'fail' for result in self.results)

    @property
    def exit_code(self) -> int:
        return 0 if self.passed else 1

    def to_dict(self) -> Dict[str, Any]:
        result = {
            'config': self.config.echo(),
            'environment': self.environment,
            'flow': self.flow_summary,
            'checks': [check.to_dict() for check in self.results],
            'series_files': self.series_files,
        }
        if self.logsobolev is not None:
            result['logsobolev'] = self.logsobolev
        if self.config.timestamp and not self.config.strict:
            result['timestamp'] = time.strftime('%Y-%m-%dT%H:%M:%S')
        return result

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, allow_nan=False)

    def _planned_files(self) -> List[str]:
        files = ['series.csv']
        files += [f'check-{result.check_id}.csv' for result in self.results if result.detail]
        if self.extremal is not None:
            files.append('logsobolev-extremal.csv')
        return files

    def write(self, out: Path) -> Path:
        """
        Writes report.json, the entropy time series and the per-check detail files to the directory out.
        @return: The path of the report.
        """
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        self.series_files = self._planned_files()
        _write_csv(out / 'series.csv', SERIES_COLUMNS, np.array(self.series, dtype=float).reshape(-1, len(SERIES_COLUMNS)))
        for result in self.results:
            if result.detail:
                lines = ['key,value'] + [f'{key},{_format(value)}' for key, value in sorted(result.detail.items())]
                (out / f'check-{result.check_id}.csv').write_text('\n'.join(lines) + '\n')
        if self.extremal is not None:
            _write_csv(out / 'logsobolev-extremal.csv', ['x', 'u'], self.extremal)
        path = out / 'report.json'
        path.write_text(self.to_json() + '\n')
        logger.info(f'wrote {path}')
        return path


def _format(value: Any) -> str:
    if isinstance(value, (int, float, np.floating)):
        return '%.17g' % value
    return str(value)


def _write_csv(path: Path, columns: List[str], rows: np.ndarray) -> None:
    np.savetxt(path, rows, fmt='%.17g', delimiter=',', header=','.join(columns), comments='')


def _trajectory(config: ScenarioConfig, flow: FlowFamily, dt: float) -> Trajectory:
    try:
        return kernel_trajectory(flow, config.source_node(flow), config.t_start, config.t_end, dt)
    except ResolutionError as err:
        raise config.properties.error('time.start', str(err)) from err
    except INPUT_ERRORS as err:
        raise config.properties.error('time.end', str(err)) from err


def _build_flow(config: ScenarioConfig, size: Optional[int] = None) -> FlowFamily:
    try:
        return config.build_flow(size)
    except INPUT_ERRORS as err:
        raise config.properties.error('flow.kind', str(err)) from err


def _flow_summary(flow: FlowFamily, reports) -> Dict[str, Any]:
    defect, certified = certify_class(flow)
    summary: Dict[str, Any] = {'description': describe(flow), 'class_defect': defect, 'class_certified': certified}
    if flow.conjugate and not flow.static:
        masses = [flow.geometry_at(t).total_measure for t in flow.sample_times(5)]
        summary['measure_drift'] = max(abs(mass - masses[0]) for mass in masses)
    values = [report.perelman_W for report in reports if report.perelman_W is not None]
    if values:
        summary['perelman_W'] = values[0]
        summary['perelman_W_spread'] = max(values) - min(values)
    return summary


def run_scenario(config: ScenarioConfig, out: Optional[Path] = None) -> RunReport:
    """
    Runs the heat kernel trajectory of a scenario, its entropy panel and all requested checks.
    @param config: A validated scenario.
    @param out: The output directory; no files are written if it is None.
    @return: The report.
    """
    logger.info(f'running scenario {config.name}')
    flow = _build_flow(config)
    traj = _trajectory(config, flow, config.dt)

    try:
        reports = entropy_series(traj, config.N, config.K, config.a) if not math.isinf(config.N) else []
    except INPUT_ERRORS as err:
        raise config.properties.error('params.N', str(err)) from err
    series = [report.row() for report in reports]

    levels: Dict[int, Tuple[Trajectory, FlowFamily]] = {}

    def factory(level: int) -> Tuple[Trajectory, FlowFamily]:
        if level not in levels:
            if level == 0:
                levels[level] = traj, flow
            else:
                refined = _build_flow(config, config.size * 2 ** level)
                levels[level] = _trajectory(config, refined, config.dt / 2 ** level), refined
        return levels[level]

    results = []
    for check_id in config.checks:
        params = config.check_params(check_id)
        result = run_check(check_id, traj, flow, params)
        if config.refinement_levels >= 2 and result.kind == 'identity' and result.status != 'not-applicable':
            study = refinement_study(check_id, factory, params, config.refinement_levels)
            result.order = study.order
            result.detail['refined_residual'] = study.residuals[-1]
        results.append(result)

    logsobolev = None
    extremal = None
    if config.logsobolev_t is not None:
        if math.isinf(config.N):
            raise config.properties.error('logsobolev.t', 'the log-Sobolev constant needs a finite params.N')
        try:
            geometry = flow.geometry_at(config.logsobolev_t)
            solution = optimal_constant(geometry, config.logsobolev_t, config.N, config.K)
        except INPUT_ERRORS as err:
            raise config.properties.error('logsobolev.t', str(err)) from err
        logsobolev = {'t': solution.t, 'mu': solution.mu, 'converged': solution.converged,
                      'iterations': solution.iterations, 'spread': solution.spread,
                      'constraint_residual': solution.constraint_residual}
        if solution.converged:
            logsobolev['el_residual'] = euler_lagrange_residual(solution, geometry)
        extremal = np.column_stack((flow.grid.x, solution.u))

    environment = {
        'version': wentropy.__version__,
        'grid': {'size': config.size, 'h_arc': flow.geometry_at(0.0).h_arc, 'dt': config.dt},
        'tolerances': {check_id: CHECKS[check_id].fixed_tolerance if CHECKS[check_id].fixed_tolerance is not None
                       else CHECKS[check_id].constant for check_id in config.checks},
    }
    report = RunReport(config, results, series, environment, _flow_summary(flow, reports), logsobolev, extremal)
    if out is not None:
        report.write(out)
    failed = [result.check_id for result in results if result.status == 'fail']
    logger.info(f'scenario {config.name}: {len(results) - len(failed)} of {len(results)} checks passed or not applicable')
    return report
