import numpy as np
import pytest

from sdde_lyap import MalformedInputError, Segment, combine


def test_constant_reproduced():
    x = Segment.constant(1.0, [1.0], 3)
    for s in np.linspace(-1, 0, 11):
        assert x.eval(s)[0] == 1.0
        assert x.eval_deriv(s)[0] == 0.0


def test_linear_and_cubic_exact():
    mesh = np.array([-1.0, -0.7, -0.2, 0.0])
    lin = Segment(1.0, mesh, mesh)
    assert lin.eval(-0.5)[0] == pytest.approx(-0.5, abs=1e-15)
    assert lin.eval_deriv(-0.33)[0] == pytest.approx(1.0, abs=1e-14)
    cub = Segment(1.0, mesh, mesh ** 3, 3 * mesh ** 2)
    assert cub.eval(-0.3)[0] == pytest.approx(-0.027, abs=1e-15)
    sq = Segment(1.0, mesh, mesh ** 2, 2 * mesh)
    assert sq.eval_deriv(-0.5)[0] == pytest.approx(-1.0, abs=1e-14)


def test_norms():
    x = Segment.constant(1.0, [3.0, 4.0])
    assert x.norm_C() == pytest.approx(5.0)
    assert x.norm_W() == pytest.approx(5.0)
    mesh = np.linspace(-1, 0, 5)
    y = Segment(1.0, mesh, mesh, np.ones_like(mesh))
    assert y.norm_C() == pytest.approx(1.0)
    assert y.norm_W() == pytest.approx(1.0)
    z = Segment.from_function(1.0, lambda s: np.sin(10 * s), lambda s: 10 * np.cos(10 * s),
                              n_intervals=400)
    assert 0.999 <= z.norm_C() <= 1.0 + 1e-9
    assert 9.99 <= z.norm_W() <= 10.0 + 1e-6
    assert z.norm_C() <= z.norm_W()


def test_derivative_at_breakpoints():
    # kink at s = -0.5: right slope inside, left slope at s = 0
    mesh = np.array([-1.0, -0.5, 0.0])
    x = Segment(1.0, mesh, [[0.0], [0.0], [1.0]], d0=[[0.0], [2.0]], d1=[[0.0], [3.0]])
    assert x.eval_deriv(-0.5)[0] == pytest.approx(2.0)
    assert x.eval_deriv_left(-0.5)[0] == pytest.approx(0.0)
    assert x.eval_deriv(0.0)[0] == pytest.approx(3.0)
    assert x.has_jumps()


@pytest.mark.parametrize("f,df", [(np.sin, np.cos), (np.exp, np.exp),
                                  (lambda s: 1 / (2 + s), lambda s: -1 / (2 + s) ** 2)])
def test_interpolation_order(f, df):
    probe = np.linspace(-1, 0, 997)
    errs = []
    for n in (4, 8, 16, 32, 64):
        x = Segment.from_function(1.0, f, df, n_intervals=n)
        errs.append(max(abs(x.eval(s)[0] - f(s)) for s in probe))
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(orders >= 3.5)


def test_combine_examples():
    rng = np.random.default_rng(0)
    x = Segment(1.0, np.linspace(-1, 0, 7), rng.standard_normal((7, 2)))
    y = Segment(1.0, np.linspace(-1, 0, 4), rng.standard_normal((4, 2)))
    same = combine(1.0, x, 0.0, y)
    for s in x.mesh:
        assert np.allclose(same.eval(s), x.eval(s), atol=1e-15)
    assert combine(1.0, x, -1.0, x).norm_W() == 0.0
    eight = combine(2.0, Segment.constant(1.0, [1.0]), 3.0, Segment.constant(1.0, [2.0]))
    assert eight.norm_C() == pytest.approx(8.0) and eight.eval(-0.4)[0] == pytest.approx(8.0)


def test_combine_bilinear():
    rng = np.random.default_rng(1)
    x = Segment(1.0, np.sort(np.r_[-1, rng.uniform(-1, 0, 5), 0]), rng.standard_normal((7, 1)))
    y = Segment(1.0, np.linspace(-1, 0, 9), rng.standard_normal((9, 1)))
    a, b = 1.7, -0.3
    z = combine(a, x, b, y)
    for s in rng.uniform(-1, 0, 100):
        assert abs(z.eval(s)[0] - a * x.eval(s)[0] - b * y.eval(s)[0]) < 1e-12
        assert abs(z.eval_deriv(s)[0] - a * x.eval_deriv(s)[0] - b * y.eval_deriv(s)[0]) < 1e-11


def test_combine_rejects_mismatch():
    with pytest.raises(MalformedInputError):
        combine(1, Segment.constant(1.0, [1.0]), 1, Segment.constant(2.0, [1.0]))
    with pytest.raises(MalformedInputError):
        combine(1, Segment.constant(1.0, [1.0]), 1, Segment.constant(1.0, [1.0, 2.0]))


def test_mesh_must_span_interval():
    with pytest.raises(MalformedInputError):
        Segment(1.0, [-0.5, 0.0], [1.0, 1.0])


def test_dict_round_trip():
    rng = np.random.default_rng(2)
    x = Segment(1.0, np.linspace(-1, 0, 6), rng.standard_normal((6, 2)))
    y = Segment.from_dict(x.to_dict())
    assert combine(1.0, x, -1.0, y).norm_W() == 0.0
