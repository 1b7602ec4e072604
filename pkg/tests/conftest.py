import numpy as np
import pytest

from sdde_lyap import Phase, Segment, get_preset, integrate


def origin(model):
    return Phase(np.zeros(model.driving.dim))


def const(model, c, n=1):
    return Segment.constant(model.r, np.full(model.dim, float(c)), n)


def orbit_point(model, c=1.0, t=2.0):
    tr = integrate(model, origin(model), const(model, c), t)
    return tr.phase(t), tr.segment(t)


@pytest.fixture(scope="session")
def presets():
    return {k: get_preset(k) for k in ("m0", "m1", "m2", "m3", "m4")}
