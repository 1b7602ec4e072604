import math

import numpy as np
import pytest

from sdde_lyap import (CompatibilityError, Phase, Segment, StepControl, build_L, combine,
                       direction_ensemble, directional_derivative_check, inequality_checks,
                       integrate, integrate_variational, model_from_dsl, remainder_g)
from sdde_lyap.variational import batch_norms, stack_directions, unstack_directions

from conftest import const, orbit_point, origin


def test_L_on_zero_reference(presets):
    m = presets["m2"]
    L = build_L(m, origin(m), Segment.zeros(1.0, 1))
    assert L.tau == pytest.approx(0.5)
    phi = Segment.from_function(1.0, lambda s: np.cos(2 * s) + s, n_intervals=32)
    expect = -1.0 * phi.eval(0.0) - 0.25 * phi.eval(-0.5)
    assert np.allclose(L.apply(phi), expect, atol=1e-15)


def test_L_linear_presets(presets):
    phi = Segment.from_function(1.0, lambda s: np.exp(s) * np.sin(5 * s), n_intervals=32)
    m0 = presets["m0"]
    th, x = orbit_point(m0, 2.0)
    assert np.allclose(build_L(m0, th, x).apply(phi), -phi.eval(0.0))
    m1 = presets["m1"]
    th, x = orbit_point(m1, 2.0)
    b = m1.params["b"]
    assert np.allclose(build_L(m1, th, x).apply(phi), -b * phi.eval(-1.0))


def test_L_state_dependent_term(presets):
    # L phi = A phi(0) + B phi(-tau) - B xbar'(-tau) (D2tau phi)
    m = presets["m2"]
    th, xb = orbit_point(m, 1.0, t=3.0)
    L = build_L(m, th, xb)
    y0 = xb.eval(0.0)[0]
    tau = 0.5 * (1 + math.tanh(y0))
    dtau = 0.5 * (1 - math.tanh(y0) ** 2)
    d = xb.eval_deriv_left(-tau)[0]
    phi = Segment.from_function(1.0, lambda s: 1 + s ** 2, n_intervals=16)
    expect = -phi.eval(0.0)[0] - 0.25 * phi.eval(-tau)[0] + 0.25 * d * dtau * phi.eval(0.0)[0]
    assert L.apply(phi)[0] == pytest.approx(expect, rel=1e-12)


def test_gate_rejects_incompatible(presets):
    m = presets["m0"]
    with pytest.raises(CompatibilityError):
        build_L(m, origin(m), const(m, 1.0))


def test_m0_variational_closed_form(presets):
    m = presets["m0"]
    th, x = orbit_point(m, 1.0)
    ref = integrate(m, th, x, 5.0)
    lin = integrate_variational(m, ref, Segment.constant(1.0, [1.0]), 5.0)
    assert abs(lin.z(5.0)[0] - math.exp(-5)) < 1e-7


def test_linearity(presets):
    m = presets["m3"]
    th, x = orbit_point(m, 0.4, t=3.0)
    ref = integrate(m, th, x, 6.0)
    v1, v2 = direction_ensemble(1.0, 1, 2, seed=4)
    a = integrate_variational(m, ref, combine(2.0, v1, 1.0, v2), 5.0)
    b1 = integrate_variational(m, ref, v1, 5.0)
    b2 = integrate_variational(m, ref, v2, 5.0)
    for t in np.linspace(0.0, 5.0, 20):
        za, zb = a.z(t), 2 * b1.z(t) + b2.z(t)
        assert np.allclose(za, zb, rtol=1e-9, atol=1e-12)


def test_batch_equals_single(presets):
    m = presets["m2"]
    th, x = orbit_point(m, 1.0, t=2.0)
    ref = integrate(m, th, x, 4.0)
    dirs = direction_ensemble(1.0, 1, 5, seed=2)
    batch = integrate_variational(m, ref, stack_directions(dirs), 3.0)
    for j, v in enumerate(dirs):
        one = integrate_variational(m, ref, v, 3.0)
        assert np.allclose(batch.directions(3.0)[j].values, one.segment(3.0).values,
                           rtol=0, atol=1e-14)


def test_zero_reference_is_constant_delay(presets):
    m = presets["m2"]
    ref = integrate(m, origin(m), Segment.zeros(1.0, 1), 8.0)
    cd = model_from_dsl(["-a*y1_1 - b*y2_1"], 0.5, 1.0, [1.0], {"a": 1.0, "b": 0.25})
    v = direction_ensemble(1.0, 1, 3, seed=0)[2]
    lin = integrate_variational(m, ref, v, 8.0)
    direct = integrate(cd, origin(m), v, 8.0)
    for t in np.linspace(0.0, 8.0, 17):
        assert abs(lin.z(t)[0] - direct.y(t)[0]) < 1e-12


def test_stack_round_trip():
    dirs = direction_ensemble(1.0, 2, 4, seed=1)
    back = unstack_directions(stack_directions(dirs), 4)
    for a, b in zip(dirs, back):
        assert combine(1.0, a, -1.0, b).norm_W() == 0.0
    nC, nW = batch_norms(stack_directions(dirs), 4)
    assert np.allclose(nC, 1.0) and np.all(nW >= nC)


def test_directional_derivative_m2(presets):
    m = presets["m2"]
    base = integrate(m, origin(m), const(m, 1.0), 3.0)
    v = direction_ensemble(1.0, 1, 4, seed=0)[1]
    eps = [1e-2 * 2.0 ** -k for k in range(8)]
    rep = directional_derivative_check(m, base.phase(3.0), base.segment(3.0), v, 3.0, eps)
    assert all(1.7 <= q <= 2.3 for q in rep.ratios)


def test_directional_derivative_linear_and_zero(presets):
    m = presets["m1"]
    th, x = orbit_point(m, 1.0)
    v = direction_ensemble(1.0, 1, 2, seed=0)[0]
    rep = directional_derivative_check(m, th, x, v, 3.0, [1e-1, 1e-2, 1e-3])
    assert max(rep.errors) <= 1e-8
    m2 = presets["m2"]
    th, x = orbit_point(m2, 1.0)
    rep = directional_derivative_check(m2, th, x, Segment.zeros(1.0, 1), 2.0, [1e-3])
    assert rep.errors == [0.0] and rep.norm_w == 0.0


def test_remainder(presets):
    m2 = presets["m2"]
    base = integrate(m2, origin(m2), const(m2, 1.0), 3.0)
    th, xb = base.phase(3.0), base.segment(3.0)
    assert np.all(remainder_g(m2, th, xb, xb) == 0.0)
    v = direction_ensemble(1.0, 1, 4, seed=0)[1]
    for d in (1e-1, 1e-2, 1e-3):
        g1 = np.abs(remainder_g(m2, th, xb, combine(1.0, xb, d, v))).max()
        g2 = np.abs(remainder_g(m2, th, xb, combine(1.0, xb, d / 2, v))).max()
        assert 0.2 <= g2 / g1 <= 0.35
    m1 = presets["m1"]
    th, xb = orbit_point(m1, 1.0)
    x = Segment.from_function(1.0, lambda s: np.sin(4 * s), n_intervals=16)
    assert np.abs(remainder_g(m1, th, xb, x)).max() < 1e-15


@pytest.mark.parametrize("name", ["m2", "m3"])
def test_inequalities(presets, name):
    m = presets[name]
    th, x = orbit_point(m, 1.0, t=5.0)
    ref = integrate(m, th, x, 16.0)
    dirs = direction_ensemble(1.0, 1, 8, seed=3)
    rep = inequality_checks(m, ref, dirs, 15.0, seed=3)
    assert rep.ok and rep.n_pairs == 2 * 15 * 8
    assert rep.worst_ratio_i <= 1.0 and rep.worst_ratio_iii <= 1.0


def test_ensemble_is_seeded():
    a = direction_ensemble(1.0, 1, 6, seed=9)
    b = direction_ensemble(1.0, 1, 6, seed=9)
    assert all(np.array_equal(x.values, y.values) for x, y in zip(a, b))
    assert all(abs(x.norm_C() - 1.0) < 1e-12 for x in a)
