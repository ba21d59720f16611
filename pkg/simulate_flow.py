#!/usr/bin/env python3

#  (C) Copyright the wentropy developers 2026. Distributed under the GPL-3.0-or-later
#  Software License, (See accompanying file LICENSE or copy at
#  https://www.gnu.org/licenses/gpl-3.0.txt)

import argparse
import logging
import multiprocessing
import sys
from pathlib import Path

from play_battery import play_battery
from wentropy.errors import ConfigurationError, NumericalError, WEntropyError
from wentropy.scenario import list_scenarios, load_scenario, run_scenario, scenario_description
from wentropy.verify import describe_check


def run(config_file: str, out: str, strict: bool) -> int:
    """
    Runs one scenario file and prints the outcome of every check.
    @return: 0 if every check passes or is not applicable, 1 otherwise.
    """
    config = load_scenario(Path(config_file), strict)
    report = run_scenario(config, Path(out))
    for result in report.results:
        print(result)
    print(f'Report written to {Path(out) / "report.json"}')
    return report.exit_code


def print_scenarios() -> None:
    for name in list_scenarios():
        print(f'{name:24} {scenario_description(name)}')


def main():
    cmdline_parser = argparse.ArgumentParser(description='Run weighted heat flow scenarios and their verification checks.')
    cmdline_parser.add_argument('--verbose', help='give verbose output', action='store_true')
    cmdline_parser.add_argument('--quiet', help='print warnings and errors only', action='store_true')
    commands = cmdline_parser.add_subparsers(dest='command', required=True)

    run_parser = commands.add_parser('run', help='run a scenario file')
    run_parser.add_argument('--config', metavar='FILE', type=str, required=True, help='a scenario file')
    run_parser.add_argument('--out', metavar='DIR', type=str, default='out', help='the output directory (default: out)')
    run_parser.add_argument('--strict', help='reject unknown keys', action='store_true')

    commands.add_parser('list', help='list the built-in scenarios')

    describe_parser = commands.add_parser('describe', help='print the statement checked by a check id')
    describe_parser.add_argument('check_id', type=str)

    battery_parser = commands.add_parser('battery', help='run built-in scenarios with a worker pool')
    battery_parser.add_argument('--all', help='run every built-in scenario', action='store_true')
    battery_parser.add_argument('names', nargs='*', help='scenario names, if --all is not given')
    battery_parser.add_argument('--out', metavar='DIR', type=str, default='battery', help='the output directory (default: battery)')
    battery_parser.add_argument('--strict', help='reject unknown keys', action='store_true')
    battery_parser.add_argument('--workers', type=int, help='the number of worker processes')
    args = cmdline_parser.parse_args()

    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, format='%(levelname)s %(name)s: %(message)s')

    try:
        if args.command == 'run':
            code = run(args.config, args.out, args.strict)
        elif args.command == 'list':
            print_scenarios()
            code = 0
        elif args.command == 'describe':
            print(describe_check(args.check_id))
            code = 0
        else:
            if not args.all and not args.names:
                raise ConfigurationError('battery needs --all or scenario names')
            if 'fork' in multiprocessing.get_all_start_methods():
                multiprocessing.set_start_method('fork')
            code = play_battery(list_scenarios() if args.all else args.names, Path(args.out), args.strict, args.workers)
    except ConfigurationError as err:
        print(f'Error: {err}', file=sys.stderr)
        code = 2
    except NumericalError as err:
        print(f'Error: numerical failure in {err}', file=sys.stderr)
        code = 3
    except WEntropyError as err:
        print(f'Error: {err}', file=sys.stderr)
        code = 2
    sys.exit(code)


if __name__ == '__main__':
    main()
