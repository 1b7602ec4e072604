import math

import numpy as np
import pytest

from sdde_lyap import (MalformedInputError, ProvenanceError, Segment, characteristic_root_oracle,
                       direction_ensemble, estimate_exponent, exponent_norm_equality_check,
                       get_preset)

from conftest import orbit_point, origin


def zero_point(m):
    return [(origin(m), Segment.zeros(m.r, m.dim))]


@pytest.fixture(scope="module")
def m0_reports():
    m = get_preset("m0")
    pts = [orbit_point(m, 1.0)]
    return (estimate_exponent(m, pts, 50.0, 8, norm="C", seed=3),
            estimate_exponent(m, pts, 50.0, 8, norm="W", seed=3))


def test_m0_exponent(m0_reports):
    rc, rw = m0_reports
    assert np.isfinite(rc.lambda_C)
    for v in (rc.lambda_C, rc.lambda_W, rw.lambda_C, rw.lambda_W):
        assert abs(v + 1.0) <= 5e-3
    assert exponent_norm_equality_check(rc, rw, 1e-2)
    assert rc.bound_check["violations"] == 0 and rc.ineq_i["violations"] == 0


def test_mismatched_seeds(m0_reports):
    rc, _ = m0_reports
    m = get_preset("m0")
    other = estimate_exponent(m, [orbit_point(m, 1.0)], 50.0, 8, norm="W", seed=4)
    with pytest.raises(ProvenanceError):
        exponent_norm_equality_check(rc, other, 1e-2)


def test_oracle_examples():
    assert characteristic_root_oracle(1.0, 0.0, 0.7) == pytest.approx(-1.0, abs=1e-12)
    # double root at s = -1; Newton lands within ~1e-8 of it
    s = characteristic_root_oracle(0.0, 1.0 / math.e, 1.0)
    assert abs(s + 1.0) < 1e-7 and abs(s.imag) < 1e-7
    s = characteristic_root_oracle(0.0, math.pi / 2, 1.0)
    assert abs(s.real) < 1e-10 and abs(s.imag - math.pi / 2) < 1e-8
    s = characteristic_root_oracle(0.0, 2.0, 1.0)
    assert s.real == pytest.approx(0.17281600284, abs=1e-9)
    assert s.imag == pytest.approx(1.67368641374, abs=1e-9)
    # the reduction of M2 about zero: s + 1 + 0.25 exp(-s/2) = 0
    s = characteristic_root_oracle(1.0, 0.25, 0.5)
    assert s.real == pytest.approx(-1.53991995, abs=1e-8)
    assert abs(s + 1 + 0.25 * np.exp(-0.5 * s)) < 1e-12


def test_oracle_rejects_bad_delay():
    with pytest.raises(MalformedInputError):
        characteristic_root_oracle(1.0, 1.0, 0.0)


def test_m2_matches_constant_delay_oracle():
    m = get_preset("m2")
    rep = estimate_exponent(m, zero_point(m), 50.0, 8, seed=0)
    assert rep.lambda_C == pytest.approx(characteristic_root_oracle(1.0, 0.25, 0.5).real,
                                         abs=2e-3)


def test_m1_unstable_sign():
    m = get_preset("m1", {"b": 2.0})
    rep = estimate_exponent(m, zero_point(m), 60.0, 8, seed=0)
    assert rep.lambda_C > 0.1 and characteristic_root_oracle(0.0, 2.0, 1.0).real > 0


def test_renormalization_invariance():
    m = get_preset("m3")
    pts = [orbit_point(m, 0.3, t=4.0)]
    dirs = direction_ensemble(1.0, 1, 3, seed=1)
    a = estimate_exponent(m, pts, 20.0, dirs)
    b = estimate_exponent(m, pts, 20.0, [d.scale(1000.0) for d in dirs])
    assert abs(a.lambda_C - b.lambda_C) < 1e-12
    assert abs(a.lambda_W - b.lambda_W) < 1e-12


def test_horizon_stabilizes_on_m1():
    m = get_preset("m1")
    dirs = direction_ensemble(1.0, 1, 4, seed=0)
    l100 = estimate_exponent(m, zero_point(m), 100.0, dirs).lambda_C
    l200 = estimate_exponent(m, zero_point(m), 200.0, dirs).lambda_C
    assert abs(l100 - l200) < 1e-2
    assert abs(l200 + 1.0) <= 2e-2


def test_threads_do_not_change_results():
    m = get_preset("m3")
    pts = [orbit_point(m, c, t=4.0) for c in (-0.5, 0.5)]
    a = estimate_exponent(m, pts, 10.0, 4, seed=2, workers=1)
    b = estimate_exponent(m, pts, 10.0, 4, seed=2, workers=2)
    assert np.array_equal(a.cum_log_C, b.cum_log_C)


def test_shifted_start_and_one_sided_checks():
    m = get_preset("m2")
    pts = [orbit_point(m, 1.0, t=3.0)]
    rc = estimate_exponent(m, pts, 20.0, 6, norm="C", seed=0)
    rw = estimate_exponent(m, pts, 20.0, 6, norm="W", seed=0, with_shift=True)
    assert rw.per_point_shift_W is not None
    assert exponent_norm_equality_check(rc, rw, 3e-2)


def test_windows_csv(m0_reports, tmp_path):
    rc, _ = m0_reports
    p = tmp_path / "w.csv"
    rc.write_windows_csv(p)
    lines = p.read_text().splitlines()
    assert lines[0] == "point_id,dir_id,window_idx,log_growth"
    assert len(lines) == 1 + 1 * 8 * 50
    rows = [ln.split(",") for ln in lines[1:]]
    later = [float(r[3]) for r in rows if r[2] != "0" and r[3] != "-inf"]
    assert later and all(abs(v + 1.0) < 1e-6 for v in later)
    # directions with v(0) = 0 vanish exactly under z' = -z
    extinct = {r[1] for r in rows if r[3] == "-inf"}
    assert len(extinct) == rc.n_extinct


@pytest.mark.parametrize("kw", [dict(T=2.5), dict(T=10.0, window=0.5), dict(T=1.0),
                                dict(T=10.0, norm="X")])
def test_bad_arguments(kw):
    m = get_preset("m0")
    T = kw.pop("T")
    with pytest.raises(MalformedInputError):
        estimate_exponent(m, [orbit_point(m)], T, 2, **kw)
