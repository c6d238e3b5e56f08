import math

import pytest

from gridlock import _backend

K = 120.0 * math.pi
W0 = 2.0 * math.pi * 60.0


@pytest.fixture(params=_backend.available())
def backend(request):
    """Every kernel backend that is importable in this environment."""
    return request.param
