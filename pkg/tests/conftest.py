import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

FIG1 = [
    "Four airplanes are parked at the airport.",
    "There are some planes and cars in the airport.",
    "Four different kinds of airplanes are in the airport.",
    "Four different sizes of airplanes are in the airport.",
    "Here are some airplanes and cars in the airport.",
]


@pytest.fixture
def fig1():
    return list(FIG1)
