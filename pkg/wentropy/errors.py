#  (C) Copyright the wentropy developers 2026. Distributed under the GPL-3.0-or-later
#  Software License, (See accompanying file LICENSE or copy at
#  https://www.gnu.org/licenses/gpl-3.0.txt)

from typing import Optional


class WEntropyError(Exception):
    """Base class of all errors raised by the wentropy package."""


class ConfigurationError(WEntropyError, ValueError):
    """An invalid scenario, geometry or flow configuration."""

    def __init__(self, message: str, line: Optional[int] = None, column: Optional[int] = None):
        """
        @param message: A description of the problem.
        @param line: The (one based) line of the offending key, if known.
        @param column: The (one based) column of the offending value, if known.
        """
        self.line = line
        self.column = column
        if line is not None:
            message = f'line {line}, column {column or 1}: {message}'
        super().__init__(message)


class DomainError(WEntropyError, ValueError):
    """A quantity was requested outside the range where it is defined."""


class ModelError(WEntropyError, ValueError):
    """The model violates a structural assumption, e.g. N = n with a non-constant potential."""


class InsufficientDataError(WEntropyError, ValueError):
    """A trajectory or sample set is too short for the requested derivative or scan."""


class ResolutionError(WEntropyError, ValueError):
    """The grid cannot resolve the requested object, e.g. a heat kernel at a too small time."""


class NumericalError(WEntropyError, RuntimeError):
    """A linear solve, eigenproblem or optimization failed."""

    def __init__(self, message: str, check_id: Optional[str] = None):
        self.check_id = check_id
        if check_id is not None:
            message = f'{check_id}: {message}'
        super().__init__(message)
