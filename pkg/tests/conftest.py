import logging

import numpy as np
import pytest

from boxmen.geometry import Box, Layer, LayerStack, Metallization, Port

A_BOX = 0.0675  # square shielding box side used by the reference circuits
SUBSTRATE = Layer(2.33, 1.57e-3)
AIR_COVER = Layer(1.0, 9.83e-3)


@pytest.fixture
def microstrip_stack():
    return LayerStack([SUBSTRATE], [AIR_COVER])


def resonator_geometry(a=A_BOX, gap=2e-3, width=4.6e-3):
    """Strip from the port gap at x = gap to the far wall, centered in y."""
    box = Box(a, a)
    metal = Metallization.from_rects((gap, a / 2 - width / 2, a, a / 2 + width / 2))
    port = Port(1, (gap / 2, a / 2), width, gap, "x")
    return box, metal, port


def through_line_geometry(a=A_BOX, gap=2e-3, width=4.6e-3):
    """Strip between two port gaps at the x = 0 and x = a walls (mirror symmetric)."""
    box = Box(a, a)
    metal = Metallization.from_rects((gap, a / 2 - width / 2, a - gap, a / 2 + width / 2))
    p1 = Port(1, (gap / 2, a / 2), width, gap, "x")
    p2 = Port(2, (a - gap / 2, a / 2), width, gap, "x")
    return box, metal, (p1, p2)


@pytest.fixture(autouse=True)
def _quiet_logs(caplog):
    caplog.set_level(logging.INFO, logger="boxmen")
    yield


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
