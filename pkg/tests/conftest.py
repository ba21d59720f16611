#  (C) Copyright the wentropy developers 2026. Distributed under the GPL-3.0-or-later
#  Software License, (See accompanying file LICENSE or copy at
#  https://www.gnu.org/licenses/gpl-3.0.txt)

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from wentropy.flows import make_canonical  # noqa: E402
from wentropy.heat import kernel_trajectory  # noqa: E402


@pytest.fixture(scope='session')
def flat_line():
    return make_canonical('flat_line', size=1024, extent=32.0)


@pytest.fixture(scope='session')
def flat_circle():
    return make_canonical('flat_circle', size=256)


@pytest.fixture(scope='session')
def ou_line():
    return make_canonical('ou_line', size=256, extent=16.0)


@pytest.fixture(scope='session')
def gaussian_trajectory(flat_line):
    """The heat kernel of the flat line from the origin on [1, 1.2]."""
    return kernel_trajectory(flat_line, flat_line.grid.nearest_node(0.0), 1.0, 1.2, 0.01)
