import math

import numpy as np
import pytest

from sdde_lyap import (BlowUpError, MalformedInputError, ModelViolation, Phase, Segment,
                       StepControl, check_compatibility, combine, integrate, model_from_dsl,
                       omega_limit_sample, semiflow_map, shift_extract)
from sdde_lyap.sdde import check_derivatives
from sdde_lyap.selftest import cocycle_defect, COCYCLE_INITIAL

from conftest import const, orbit_point, origin


def test_m0_closed_form(presets):
    m = presets["m0"]
    tr = integrate(m, origin(m), const(m, 1.0), 5.0)
    assert abs(tr.y(5.0)[0] - math.exp(-5)) < 1e-7
    _, seg = semiflow_map(m, origin(m), const(m, 1.0), 1.0)
    for s in np.linspace(-1, 0, 10):
        assert abs(seg.eval(s)[0] - math.exp(-(1 + s))) < 1e-6


def test_m1_step_doubling(presets):
    m = presets["m1"]
    a = integrate(m, origin(m), const(m, 1.0), 20.0)
    b = integrate(m, origin(m), const(m, 1.0), 20.0, StepControl(h=1 / 128))
    assert abs(a.y(20.0)[0] - b.y(20.0)[0]) < 1e-6


@pytest.mark.parametrize("name", ["m0", "m1", "m2"])
def test_zero_is_preserved(presets, name):
    m = presets[name]
    tr = integrate(m, origin(m), Segment.zeros(1.0, 1), 5.0)
    assert np.all(tr.values == 0.0)


@pytest.mark.parametrize("name", ["m1", "m2", "m3", "m4"])
def test_self_convergence(presets, name):
    m = presets[name]
    if name == "m1":
        # constant delay: breaking points fall on the grid
        th, x = origin(m), const(m, 1.0)
    else:
        th, x = orbit_point(m, 0.8, t=2.0)
    ends = [integrate(m, th, x, 6.0, StepControl(h=1 / k)).y(6.0)[0] for k in (8, 16, 256)]
    e1, e2 = abs(ends[0] - ends[2]), abs(ends[1] - ends[2])
    assert e1 / e2 >= 8


def test_residuals_vanish_at_nodes(presets):
    m = presets["m3"]
    tr = integrate(m, origin(m), const(m, 0.3), 5.0)
    assert tr.residuals().max() < 1e-12


def test_shift_extract(presets):
    m = presets["m2"]
    x = const(m, 0.7)
    tr = integrate(m, origin(m), x, 4.0)
    assert combine(1.0, shift_extract(tr, 0.0), -1.0, x).norm_W() == 0.0
    assert shift_extract(tr, 4.0).eval(0.0)[0] == tr.y(4.0)[0]
    c = model_from_dsl(["0*y1_1"], 1.0, 1.0, [1.0])
    flat = integrate(c, Phase([0.0]), Segment.constant(1.0, [2.5]), 3.0)
    assert shift_extract(flat, 2.2).norm_C() == 2.5


def test_semiflow_at_zero_is_identity(presets):
    m = presets["m3"]
    th, x = origin(m), const(m, 0.2)
    th2, x2 = semiflow_map(m, th, x, 0.0)
    assert th2 == th and x2 is x


@pytest.mark.parametrize("name", sorted(COCYCLE_INITIAL))
def test_cocycle(presets, name):
    m = presets[name]
    assert cocycle_defect(m, const(m, COCYCLE_INITIAL[name]), n_splits=50, seed=1) < 1e-5


def test_compatibility(presets):
    m = presets["m0"]
    c = 0.8
    res = check_compatibility(m, origin(m), const(m, c))
    assert not res.compatible and res.residual == pytest.approx(c)
    exact = Segment.from_function(1.0, lambda s: c * np.exp(-s), lambda s: -c * np.exp(-s), 32)
    assert check_compatibility(m, origin(m), exact).compatible
    rng = np.random.default_rng(0)
    noisy = Segment(1.0, np.linspace(-1, 0, 9), rng.standard_normal(9))
    assert not check_compatibility(presets["m2"], origin(m), noisy).compatible


def test_omega_limit_sample(presets):
    m = presets["m0"]
    pts = omega_limit_sample(m, origin(m), const(m, 1.0), 5.0, 5.0, 1.0)
    assert len(pts) == 6
    # the segment at time t reaches back to t - r
    assert all(x.norm_C() <= math.exp(-(t - 1.0)) * (1 + 1e-6) for (_, x), t in zip(pts, range(5, 11)))
    zero = omega_limit_sample(m, origin(m), Segment.zeros(1.0, 1), 1.0, 2.0, 0.5)
    assert all(x.norm_W() == 0.0 for _, x in zero)
    assert zero[1][0] == m.driving.advance(origin(m), 1.5)


def test_m3_near_returns_agree(presets):
    m = presets["m3"]
    pts = omega_limit_sample(m, origin(m), const(m, 0.0), 20.0, 200.0, 0.25)
    from sdde_lyap import phase_distance
    pairs = 0
    for i in range(len(pts)):
        for j in range(i + 1, len(pts)):
            if phase_distance(pts[i][0], pts[j][0]) < 0.01:
                pairs += 1
                assert combine(1.0, pts[i][1], -1.0, pts[j][1]).norm_C() < 0.05
    assert pairs > 0


def test_blow_up_is_reported():
    m = model_from_dsl(["y1_1^2"], 1.0, 1.0, [1.0])
    tr = integrate(m, Phase([0.0]), Segment.constant(1.0, [1.0]), 5.0)
    assert tr.blown_up and tr.horizon < 1.1
    with pytest.raises(BlowUpError):
        omega_limit_sample(m, Phase([0.0]), Segment.constant(1.0, [1.0]), 1.0, 1.0, 0.5)


def test_delay_out_of_range():
    m = model_from_dsl(["-y2_1"], "1 + x0_1^2", 1.0, [1.0])
    with pytest.raises(ModelViolation):
        integrate(m, Phase([0.0]), Segment.constant(1.0, [1.0]), 1.0)


def test_step_must_divide_r():
    with pytest.raises(MalformedInputError):
        StepControl(h=0.3).step(1.0)
    assert StepControl(h=0.25).step(1.0) == 0.25


@pytest.mark.parametrize("name", ["m0", "m1", "m2", "m3", "m4"])
def test_model_derivatives(presets, name):
    rep = check_derivatives(presets[name], rng=0)
    assert max(rep["D2F"], rep["D3F"], rep["D2tau"]) < 1e-6


def test_csv_schema(presets, tmp_path):
    m = presets["m2"]
    tr = integrate(m, origin(m), const(m, 1.0), 2.0)
    p = tmp_path / "traj.csv"
    tr.to_csv(p, stride=8)
    lines = p.read_text().splitlines()
    assert lines[0] == "t,y_1,tau_realized"
    assert len(lines) == 1 + 17
    t, y, tau = map(float, lines[-1].split(","))
    assert t == 2.0 and 0.0 <= tau <= 1.0
