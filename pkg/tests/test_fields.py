import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from zvonkin.fields import (
    FieldError,
    Grid,
    Mollifier,
    SpaceTimeField,
    admissible_q,
    dumps_field,
    holder_seminorm,
    lebesgue_holder_norm,
    loads_field,
    mollify,
    mollify_convergence,
    power_cell_average,
    read_field,
    write_field,
)

# brute force over all 41 nodes of [-1, 1] at hx=0.05 (independent double loop)
SEMINORM_SQRT_EXACT = 1.0
# scipy.quad of int sign(x - y/4) rho(y) dy with an independently normalised bump
MOLLIFIED_SIGN = {0.0: 0.0, 0.05: 0.3269549731363878, 0.1: 0.6257444686225161,
                  0.2: 0.9864180009414566, 0.3: 1.0}
# scipy.quad sup_x |h_n - h| for h = min(|x|^0.5, 1)
MOLLIFY_SUP_ERRORS = {2: 0.3820279599940351, 4: 0.2701345611146452,
                      8: 0.19101397999701755, 16: 0.1350672805573226}


class TestGrid:
    def test_node_count_and_symmetry(self):
        g = Grid(1, 1.0, 0.1, 1.0, 0.1)
        assert g.n == 21
        np.testing.assert_allclose(g.axis, -g.axis[::-1], atol=1e-15)
        assert g.axis[10] == 0.0

    def test_node_count_floor(self):
        assert Grid(1, 1.0, 0.3, 1.0, 0.5).n == math.floor(2 / 0.3) + 1

    @pytest.mark.parametrize("kw", [dict(hx=0.0), dict(ht=-1.0), dict(L=0.0), dict(ht=0.3)])
    def test_invalid(self, kw):
        base = dict(d=1, L=1.0, hx=0.1, T=1.0, ht=0.1)
        base.update(kw)
        with pytest.raises(FieldError):
            Grid(**base)

    def test_time_index(self):
        g = Grid(1, 1.0, 0.1, 1.0, 0.1)
        assert g.time_index(0.3) == 3
        with pytest.raises(FieldError):
            g.time_index(0.35)
        assert g.cell_index(0.35) == 3

    def test_nodes_2d(self):
        g = Grid(2, 1.0, 0.5, 1.0, 0.5)
        assert g.nodes().shape == (25, 2)


class TestField:
    def test_admissible_q(self):
        assert admissible_q(0.5, 2.0)
        assert not admissible_q(0.5, 4.0 / 3.0)
        assert not admissible_q(0.5, 3.0)

    def test_rejects_bad_q(self, small_grid):
        with pytest.raises(FieldError, match="admissible"):
            SpaceTimeField.constant(small_grid, 1.0, 0.5, 3.0)

    def test_rejects_nonfinite(self, small_grid):
        vals = np.zeros((1, small_grid.n, 1))
        vals[0, 3] = np.nan
        with pytest.raises(FieldError):
            SpaceTimeField(small_grid, vals)

    def test_constant_extension(self, small_grid):
        f = SpaceTimeField.from_function(small_grid, lambda t, X: X[:, 0])
        np.testing.assert_allclose(f.evaluate(0.0, [10.0, -10.0])[:, 0], [4.0, -4.0])

    def test_multilinear(self, small_grid):
        f = SpaceTimeField.from_function(small_grid, lambda t, X: 2 * X[:, 0] + 1)
        np.testing.assert_allclose(f.evaluate(0.0, [0.0123, -1.777])[:, 0], [1.0246, -2.554])

    def test_bilinear_2d(self):
        g = Grid(2, 1.0, 0.25, 1.0, 0.5)
        f = SpaceTimeField.from_function(g, lambda t, X: X[:, 0] * X[:, 1])
        pts = np.array([[0.1, 0.3], [-0.6, 0.2]])
        np.testing.assert_allclose(f.evaluate(0.0, pts)[:, 0], pts[:, 0] * pts[:, 1], atol=0.02)
        # exact at nodes
        np.testing.assert_allclose(f.evaluate(0.0, [[0.25, 0.5]])[:, 0], [0.125])

    def test_left_constant_in_time(self, small_grid):
        f = SpaceTimeField.from_function(small_grid, lambda t, X: t + 0 * X[:, 0], static=False)
        assert f.evaluate(0.025, 0.0)[0] == pytest.approx(0.02)
        assert f.evaluate(0.03, 0.0)[0] == pytest.approx(0.03)

    def test_time_reversed(self, small_grid):
        f = SpaceTimeField.from_function(small_grid, lambda t, X: t + 0 * X[:, 0], static=False)
        r = f.time_reversed()
        T, ht = small_grid.T, small_grid.ht
        # cell [k ht, (k+1) ht) of the reversal carries cell T - (k+1) ht of f
        for k in range(small_grid.nt):
            assert r.slice(k)[0, 0] == pytest.approx(T - (k + 1) * ht)

    def test_read_only(self, small_grid):
        f = SpaceTimeField.constant(small_grid, 1.0)
        with pytest.raises(ValueError):
            f.values[0, 0, 0] = 2.0


class TestSeminorm:
    def test_constant_zero(self, small_grid):
        assert holder_seminorm(SpaceTimeField.constant(small_grid, 3.0), 0.0) == 0.0

    def test_identity_unit_box(self):
        g = Grid(1, 0.5, 0.05, 1.0, 0.5)
        f = SpaceTimeField.from_function(g, lambda t, X: X[:, 0])
        assert holder_seminorm(f, 0.0, 0.5, exhaustive=True) == pytest.approx(1.0)

    def test_sqrt_exhaustive_matches_brute_force(self):
        g = Grid(1, 1.0, 0.05, 1.0, 0.5)
        f = SpaceTimeField.from_function(g, lambda t, X: np.minimum(np.abs(X[:, 0]) ** 0.5, 1))
        v = holder_seminorm(f, 0.0, 0.5, exhaustive=True)
        assert 1.0 <= v <= 2 ** 0.5
        assert v == pytest.approx(SEMINORM_SQRT_EXACT, abs=1e-12)

    def test_sampled_is_lower_bound(self):
        g = Grid(1, 1.0, 0.01, 1.0, 0.5)
        rng = np.random.default_rng(1)
        f = SpaceTimeField(g, rng.normal(size=(1, g.n)))
        assert holder_seminorm(f, 0.0) <= holder_seminorm(f, 0.0, exhaustive=True) + 1e-12

    def test_off_grid_time(self, small_grid):
        with pytest.raises(FieldError):
            holder_seminorm(SpaceTimeField.constant(small_grid, 1.0), 0.015)

    def test_single_node(self):
        g = Grid(1, 0.01, 0.5, 1.0, 0.5)
        with pytest.raises(FieldError):
            holder_seminorm(SpaceTimeField.constant(g, 1.0), 0.0)

    @settings(max_examples=25, deadline=None)
    @given(c=st.floats(-5, 5), shift=st.floats(-5, 5), seed=st.integers(0, 1000))
    def test_translation_invariant_and_homogeneous(self, c, shift, seed):
        g = Grid(1, 1.0, 0.05, 1.0, 0.5)
        vals = np.random.default_rng(seed).normal(size=(1, g.n))
        f = SpaceTimeField(g, vals)
        base = holder_seminorm(f, 0.0)
        assert holder_seminorm(SpaceTimeField(g, vals + shift), 0.0) == pytest.approx(base, rel=1e-9, abs=1e-9)
        assert holder_seminorm(SpaceTimeField(g, c * vals), 0.0) == pytest.approx(abs(c) * base, rel=1e-9,
                                                                                   abs=1e-9)


class TestLebesgueHolder:
    def test_constant(self, small_grid):
        f = SpaceTimeField.constant(small_grid, 2.0, 0.5, 1.5)
        assert lebesgue_holder_norm(f) == pytest.approx(2.0 * 0.5 ** (1 / 1.5))

    def test_zero(self, small_grid):
        assert lebesgue_holder_norm(SpaceTimeField.constant(small_grid, 0.0)) == 0.0

    def test_q_below_one(self, small_grid):
        with pytest.raises(FieldError):
            lebesgue_holder_norm(SpaceTimeField.constant(small_grid, 1.0), q=0.5)

    def test_singular_time_profile(self):
        # c t^(-1/4) with q=2: closed form c * sqrt(int_0^1 t^(-1/2) dt) = c sqrt(2)
        g = Grid(1, 1.0, 0.5, 1.0, 1e-3)
        prof = power_cell_average(g, 0.25)
        f = SpaceTimeField.from_function(g, lambda t, X: 3.0 + 0 * X[:, 0], time_profile=prof)
        assert lebesgue_holder_norm(f, q=2.0) == pytest.approx(3.0 * math.sqrt(2), rel=0.02)

    @settings(max_examples=20, deadline=None)
    @given(c=st.floats(-10, 10), seed=st.integers(0, 100))
    def test_homogeneity(self, c, seed):
        g = Grid(1, 1.0, 0.1, 0.5, 0.1)
        vals = np.random.default_rng(seed).normal(size=(g.nt + 1, g.n))
        f = SpaceTimeField(g, vals)
        assert lebesgue_holder_norm(c * f) == pytest.approx(abs(c) * lebesgue_holder_norm(f), rel=1e-9, abs=1e-12)


class TestMollifier:
    @pytest.mark.parametrize("d", [1, 2, 3])
    def test_unit_mass(self, d):
        from scipy import integrate

        m = Mollifier(1, d)
        if d == 1:
            mass = integrate.quad(lambda x: m.profile(np.array([x]))[()], -1, 1, epsabs=1e-13)[0]
        elif d == 2:
            mass = integrate.dblquad(lambda y, x: m.profile(np.array([x, y]))[()], -1, 1, -1, 1,
                                     epsabs=1e-11)[0]
        else:
            # radial reduction
            mass = integrate.quad(lambda r: 4 * math.pi * r * r * m.profile(np.array([r, 0, 0]))[()], 0, 1,
                                  epsabs=1e-13)[0]
        assert mass == pytest.approx(1.0, abs=1e-8)

    def test_support(self):
        m = Mollifier(1)
        assert m.profile(np.array([1.0, -1.0, 1.5])).max() == 0.0
        assert m.profile(0.0) > 0

    def test_constant_preserved(self, small_grid):
        f = SpaceTimeField.constant(small_grid, 2.5)
        assert mollify(f, Mollifier(4)).is_constant

    def test_constant_exact_interior(self):
        g = Grid(1, 2.0, 0.01, 1.0, 0.5)
        vals = np.where(np.arange(g.n) == 0, 9.0, 1.7)[None]
        out = mollify(SpaceTimeField(g, vals), Mollifier(8))
        inner = np.abs(g.axis) < 1.5
        np.testing.assert_allclose(out.values[0, inner, 0], 1.7, atol=1e-14)

    def test_linear_preserved(self):
        g = Grid(1, 2.0, 0.01, 1.0, 0.5)
        f = SpaceTimeField.from_function(g, lambda t, X: X[:, 0])
        out = mollify(f, Mollifier(4))
        inner = np.abs(g.axis) < 1.5
        np.testing.assert_allclose(out.values[0, inner, 0], g.axis[inner], atol=1e-12)

    def test_sign_against_quadrature(self):
        g = Grid(1, 1.0, 0.0025, 1.0, 0.5)
        f = SpaceTimeField.from_function(g, lambda t, X: np.sign(X[:, 0]))
        out = mollify(f, Mollifier(4))
        for x, expected in MOLLIFIED_SIGN.items():
            assert out.evaluate(0.0, x)[0] == pytest.approx(expected, abs=5e-3)
        assert out.evaluate(0.0, 0.25)[0] == pytest.approx(1.0, abs=1e-12)
        assert out.evaluate(0.0, -0.3)[0] == pytest.approx(-1.0, abs=1e-12)

    def test_warns_below_grid(self, small_grid):
        f = SpaceTimeField.from_function(small_grid, lambda t, X: X[:, 0])
        with pytest.warns(UserWarning):
            assert mollify(f, Mollifier(100)) is f

    @settings(max_examples=25, deadline=None)
    @given(n=st.integers(1, 16), seed=st.integers(0, 1000))
    def test_sup_contraction(self, n, seed):
        g = Grid(1, 1.0, 0.02, 1.0, 0.5)
        vals = np.random.default_rng(seed).normal(size=(1, g.n))
        f = SpaceTimeField(g, vals)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            assert mollify(f, Mollifier(n)).sup_norm() <= f.sup_norm() + 1e-12

    def test_convergence_sqrt(self):
        g = Grid(1, 2.0, 0.001, 1.0, 0.5)
        f = SpaceTimeField.from_function(g, lambda t, X: np.minimum(np.abs(X[:, 0]) ** 0.5, 1.0))
        errs = mollify_convergence(f, 2.0, [2, 4, 8, 16])
        assert np.all(np.diff(errs) < 0)
        for e, n in zip(errs, [2, 4, 8, 16]):
            assert e == pytest.approx(MOLLIFY_SUP_ERRORS[n], rel=0.05)

    def test_convergence_constant(self, small_grid):
        np.testing.assert_array_equal(mollify_convergence(SpaceTimeField.constant(small_grid, 1.0), 1, [1, 2]), 0)

    def test_convergence_factorises(self):
        # f(t, x) = t g(x): the error is the L^q time norm of t times the error for g
        g = Grid(1, 2.0, 0.005, 1.0, 0.01)
        prof = g.times
        gx = lambda t, X: np.minimum(np.abs(X[:, 0]) ** 0.5, 1.0)  # noqa: E731
        f = SpaceTimeField.from_function(g, gx, time_profile=prof)
        static = SpaceTimeField.from_function(g, gx)
        q = 2.0
        tnorm = (g.ht * np.sum(prof[:-1] ** q)) ** (1 / q)
        np.testing.assert_allclose(mollify_convergence(f, q, [4, 8]),
                                   tnorm * mollify_convergence(static, q, [4, 8]), rtol=1e-10)


class TestSerialisation:
    def test_round_trip_bitwise(self, tmp_path):
        g = Grid(2, 1.0, 0.5, 0.2, 0.1)
        rng = np.random.default_rng(3)
        f = SpaceTimeField(g, rng.normal(size=(g.nt + 1,) + g.shape + (3,)) * 1e-7, 0.3, 1.8)
        back = read_field(write_field(f, tmp_path / "f.csv"))
        assert back.grid == g
        assert back.holder_alpha == 0.3 and back.q == 1.8
        assert np.array_equal(back.values, f.values)

    def test_header(self, small_grid):
        text = dumps_field(SpaceTimeField.constant(small_grid, 1.0))
        assert text.splitlines()[0] == "1,4.0,0.05,0.5,0.01,1,0.5,2.0"

    def test_static_round_trip(self, small_grid):
        f = SpaceTimeField.from_function(small_grid, lambda t, X: np.sin(X[:, 0]) / 3)
        back = loads_field(dumps_field(f))
        assert back.static and np.array_equal(back.values, f.values)

    @settings(max_examples=30, deadline=None)
    @given(st.lists(st.floats(allow_nan=False, allow_infinity=False, width=64), min_size=3, max_size=3))
    def test_round_trip_any_floats(self, vals):
        g = Grid(1, 0.1, 0.1, 1.0, 1.0)
        f = SpaceTimeField(g, np.array(vals)[None, :, None])
        assert np.array_equal(loads_field(dumps_field(f)).values, f.values)
