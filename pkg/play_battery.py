#!/usr/bin/env python3

#  (C) Copyright the wentropy developers 2026. Distributed under the GPL-3.0-or-later
#  Software License, (See accompanying file LICENSE or copy at
#  https://www.gnu.org/licenses/gpl-3.0.txt)

import argparse
import json
import logging
import multiprocessing
import sys
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from wentropy.errors import ConfigurationError, NumericalError, WEntropyError
from wentropy.scenario import builtin_path, list_scenarios, load_scenario, run_scenario

logger = logging.getLogger('play_battery')

BatteryEntry = Tuple[str, int, Dict[str, str]]


def run_one(name: str, out: Path, strict: bool) -> BatteryEntry:
    """Runs a built-in scenario and returns its exit code and the status of every check."""
    try:
        config = load_scenario(builtin_path(name), strict)
        report = run_scenario(config, out / name)
    except ConfigurationError as err:
        logger.error(f'{name}: {err}')
        return name, 2, {}
    except NumericalError as err:
        logger.error(f'{name}: {err}')
        return name, 3, {}
    except WEntropyError as err:
        logger.error(f'{name}: {err}')
        return name, 2, {}
    return name, report.exit_code, {result.check_id: result.status for result in report.results}


def play_battery(names: List[str], out: Path, strict: bool = False, workers: Optional[int] = None) -> int:
    """
    Runs scenarios with a pool of worker processes and writes battery.json with the outcomes sorted by name.
    @param names: The names of built-in scenarios.
    @param out: The output directory; every scenario writes to a subdirectory with its name.
    @param strict: Reject unknown keys in the scenario files.
    @param workers: The number of processes (default: one per scenario, at most the number of CPUs).
    @return: The largest exit code of the scenarios.
    """
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    if workers is None:
        workers = max(1, min(len(names), multiprocessing.cpu_count()))
    arguments = [(name, out, strict) for name in names]
    if workers == 1:
        entries = [run_one(*argument) for argument in arguments]
    else:
        with multiprocessing.Pool(workers) as pool:
            entries = pool.starmap(run_one, arguments)

    # results are keyed by scenario, so the worker count does not affect the output
    results = {name: {'exit_code': code, 'checks': checks} for name, code, checks in entries}
    summary = {name: results[name] for name in sorted(results)}
    (out / 'battery.json').write_text(json.dumps(summary, indent=2) + '\n')
    for name in sorted(results):
        print(f'{name}: exit code {results[name]["exit_code"]}')
    return max((code for _, code, _ in entries), default=0)


def main():
    if 'fork' in multiprocessing.get_all_start_methods():
        multiprocessing.set_start_method('fork')
    cmdline_parser = argparse.ArgumentParser(description='Run the built-in scenarios of the verification battery.')
    cmdline_parser.add_argument('names', nargs='*', help='the scenario names (default: all built-in scenarios)')
    cmdline_parser.add_argument('--out', type=str, default='battery', help='the output directory (default: battery)')
    cmdline_parser.add_argument('--strict', help='reject unknown keys in scenario files', action='store_true')
    cmdline_parser.add_argument('--workers', type=int, help='the number of worker processes')
    cmdline_parser.add_argument('--verbose', help='give verbose output', action='store_true')
    args = cmdline_parser.parse_args()

    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format='%(levelname)s %(name)s: %(message)s')
    try:
        names = args.names or list_scenarios()
        for name in names:
            builtin_path(name)
    except ConfigurationError as err:
        print(f'Error: {err}', file=sys.stderr)
        sys.exit(2)
    sys.exit(play_battery(names, Path(args.out), args.strict, args.workers))


if __name__ == '__main__':
    main()
