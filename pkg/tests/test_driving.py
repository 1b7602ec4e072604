import numpy as np
import pytest

from sdde_lyap import MalformedInputError, Phase, TorusFlow, advance, phase_distance

GOLDEN = 0.6180339887


def test_identity_at_time_zero():
    flow = TorusFlow([1.0])
    assert advance(flow, Phase([0.25]), 0.0).tolist() == [0.25]


def test_one_unit_on_two_torus():
    flow = TorusFlow([1.0, GOLDEN])
    th = advance(flow, Phase([0.0, 0.0]), 1.0).theta
    assert th[0] == pytest.approx(0.0, abs=1e-15)
    assert th[1] == pytest.approx(GOLDEN, abs=1e-15)


def test_wraps_mod_one():
    flow = TorusFlow([1.0])
    assert advance(flow, Phase([0.9]), 0.2).theta[0] == pytest.approx(0.1, abs=1e-12)


@pytest.mark.parametrize("a,b,d", [([0.1], [0.1], 0.0), ([0.95], [0.05], 0.1),
                                   ([0.0, 0.5], [0.5, 0.5], 0.5)])
def test_phase_distance(a, b, d):
    assert phase_distance(Phase(a), Phase(b)) == pytest.approx(d, abs=1e-12)


def test_group_property_and_reversibility():
    rng = np.random.default_rng(3)
    flow = TorusFlow([1.0, GOLDEN])
    for _ in range(200):
        th = Phase(rng.random(2))
        s, t = rng.uniform(-50, 50, 2)
        two = advance(flow, advance(flow, th, s), t)
        assert phase_distance(two, advance(flow, th, s + t)) < 1e-12
        assert phase_distance(advance(flow, advance(flow, th, t), -t), th) < 1e-12


def test_orbit_is_dense_at_coarse_resolution():
    flow = TorusFlow([1.0, GOLDEN])
    pts = flow.orbit(Phase([0.0, 0.0]), np.arange(0.0, 2000.0, 0.05))
    # every cell of a 10x10 grid is visited, so the orbit is 0.05-dense
    cells = {(int(a * 10), int(b * 10)) for a, b in pts}
    assert len(cells) == 100


def test_dimension_mismatch():
    with pytest.raises(MalformedInputError):
        phase_distance(Phase([0.1]), Phase([0.1, 0.2]))
    with pytest.raises(MalformedInputError):
        advance(TorusFlow([1.0]), Phase([0.1, 0.2]), 1.0)


def test_rejects_nonfinite_phase():
    with pytest.raises(MalformedInputError):
        Phase([np.nan])
