import math

import numpy as np
import pytest

from sdde_lyap import (InsufficientDataError, Phase, Segment, almost_periodicity_diagnostic,
                       basin_probe, combine, cover_detect, direction_ensemble,
                       estimate_exponent, get_preset, integrate, model_from_dsl,
                       omega_limit_sample, smallness_profile, stability_probe)
from sdde_lyap.analysis import log_linear_fit

from conftest import const, orbit_point, origin


def test_log_linear_fit_exact():
    t = np.linspace(0, 5, 20)
    slope, c, r2 = log_linear_fit(t, 3.0 * np.exp(-0.7 * t))
    assert slope == pytest.approx(-0.7) and c == pytest.approx(math.log(3.0)) and r2 == 1.0


def test_stability_m0():
    m = get_preset("m0")
    cert = stability_probe(m, [orbit_point(m, 1.0)], delta=1e-3, T=10.0, lambda_hat=-1.0)
    assert abs(cert.beta_fit - 1.0) <= 0.02 and abs(cert.beta_fit_W - 1.0) <= 0.02
    assert cert.verdict == "stable-consistent"


def test_stability_m2_zero_reference():
    m = get_preset("m2")
    pts = [(origin(m), Segment.zeros(1.0, 1))]
    lam = estimate_exponent(m, pts, 30.0, 8).lambda_C
    cert = stability_probe(m, pts, T=10.0, lambda_hat=lam)
    assert lam < 0 and cert.beta_fit >= 0.8 * (-lam)
    assert cert.r2_C >= 0.98 and cert.r2_W >= 0.98 and math.isfinite(cert.k2_fit)
    assert cert.verdict == "stable-consistent"
    # a bump away from s = 0 and s = -tau never reaches the zero solution
    assert cert.n_extinct == sum(r["extinct"] for r in cert.per_sample)


def test_stability_m1_unstable():
    m = get_preset("m1", {"b": 2.0})
    pts = [(origin(m), Segment.zeros(1.0, 1))]
    cert = stability_probe(m, pts, T=10.0, lambda_hat=0.17)
    assert cert.verdict == "unstable-consistent" and cert.beta_fit < 0


def test_cover_zero_section():
    m = get_preset("m0")
    runs = [omega_limit_sample(m, origin(m), const(m, c), 40.0, 5.0, 1.0) for c in (-1, 2)]
    rep = cover_detect(m, m.driving.advance(origin(m), 42.0), runs, 1e-9, 1e-3)
    assert rep.k == 1 and rep.diameters[0] < 1e-6 and rep.n_samples == 12


def test_cover_two_branches():
    m = get_preset("m4")
    runs = [omega_limit_sample(m, origin(m), const(m, c), 30.0, 10.0, 0.5)
            for c in (-1.0, -0.5, 0.5, 1.0)]
    rep = cover_detect(m, m.driving.advance(origin(m), 35.0), runs, 1e-9, 1e-2)
    assert rep.k == 2 and rep.well_separated and rep.l_estimate == 2
    assert rep.min_separation > 1.0


def test_cover_no_samples():
    m = get_preset("m3")
    pts = omega_limit_sample(m, origin(m), const(m, 0.0), 10.0, 40.0, 0.5)
    with pytest.raises(InsufficientDataError):
        cover_detect(m, Phase([0.3, 0.7]), pts, 1e-9, 1e-3)


def test_basin_trivial_and_m0():
    m = get_preset("m0")
    M = omega_limit_sample(m, origin(m), const(m, 1.0), 10.0, 4.0, 1.0)
    res = basin_probe(m, M, [M[0]], 10.0, 1e-3)
    assert res[0].attracted and res[0].t_entry == 0.0
    res = basin_probe(m, M, [(M[0][0], const(m, 10.0))], 20.0, 1e-3)
    assert res[0].attracted and res[0].rate == pytest.approx(1.0, abs=0.02)


def test_basin_m1_unstable():
    m = get_preset("m1", {"b": 2.0})
    M = [(origin(m), Segment.zeros(1.0, 1))]
    res = basin_probe(m, M, [(origin(m), const(m, 1e-3))], 30.0, 1e-3)
    assert not res[0].attracted


def test_basin_openness_and_disjointness():
    m = get_preset("m4")
    th = origin(m)
    plus = omega_limit_sample(m, th, const(m, 1.0), 30.0, 4.0, 0.5)
    minus = omega_limit_sample(m, th, const(m, -1.0), 30.0, 4.0, 0.5)
    eps = 1e-3
    probe = (plus[0][0], const(m, 0.9))
    first = basin_probe(m, plus, [probe], 20.0, eps)[0]
    assert first.attracted and first.final_distance < eps / 4
    dirs = direction_ensemble(1.0, 1, 8, seed=5)
    near = [(probe[0], combine(1.0, probe[1], eps / 10, d)) for d in dirs]
    assert all(r.attracted for r in basin_probe(m, plus, near, 20.0, eps))
    # the two branches are far apart, so no probe is drawn to both
    sep = combine(1.0, plus[0][1], -1.0, minus[0][1]).norm_C()
    assert sep > 4 * eps
    for x in (const(m, 0.9), const(m, -0.9), const(m, 0.05)):
        a = basin_probe(m, plus, [(plus[0][0], x)], 20.0, eps)[0].attracted
        b = basin_probe(m, minus, [(plus[0][0], x)], 20.0, eps)[0].attracted
        assert not (a and b)


def _periodic_model():
    return model_from_dsl(["-2*y1_1 - 0.5*tanh(y2_1) + 0.5*sin(th1)"],
                          "0.5*(1 + 0.5*tanh(x0_1))", 1.0, [1.0])


def test_ap_periodic_forcing():
    m = _periodic_model()
    tr = integrate(m, Phase([0.0]), Segment.constant(1.0, [0.0]), 40.0)
    rep = almost_periodicity_diagnostic(tr, deltas=(1e-9,), t_start=15.0, max_period=1.0)
    assert rep.best_period[0] == pytest.approx(1.0) and rep.sup_diff[0] < 1e-4


def test_ap_zero_solution():
    m = get_preset("m3")
    tr = integrate(model_from_dsl(["-y1_1"], 1.0, 1.0, [1.0, 0.6180339887]),
                   origin(m), Segment.zeros(1.0, 1), 150.0)
    rep = almost_periodicity_diagnostic(tr, t_start=10.0, max_period=60.0)
    assert rep.sup_diff == [0.0, 0.0, 0.0]


def test_ap_m3_monotone():
    m = get_preset("m3")
    tr = integrate(m, origin(m), const(m, 0.0), 120.0)
    rep = almost_periodicity_diagnostic(tr, deltas=(0.05, 0.02, 0.01), t_start=20.0,
                                        max_period=60.0)
    assert rep.consistent
    assert rep.sup_diff[0] > rep.sup_diff[1] > rep.sup_diff[2]


def test_ap_needs_data():
    m = get_preset("m0")
    tr = integrate(m, origin(m), const(m, 1.0), 2.0)
    with pytest.raises(InsufficientDataError):
        almost_periodicity_diagnostic(tr, t_start=1.9, max_period=1.0)


@pytest.mark.parametrize("name", ["m2", "m3"])
def test_smallness(name):
    m = get_preset(name)
    th, x = orbit_point(m, 1.0, t=3.0)
    v = direction_ensemble(1.0, 1, 4, seed=0)[1]
    p = smallness_profile(m, th, x, v, [1e-1, 1e-2, 1e-3], 6.0)
    for key in ("bracket", "lagdiff", "g", "lagdiff_early", "g_early"):
        vals = p[key]
        # the measured epsilon shrinks in proportion to delta
        assert 8 <= vals[0] / vals[1] <= 12 and 8 <= vals[1] / vals[2] <= 12
    # early regime: the lag difference is at most twice the C distance
    assert max(p["lagdiff_early"]) <= 2.0
