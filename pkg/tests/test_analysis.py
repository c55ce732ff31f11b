import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from zvonkin.analysis import (
    AnalysisError,
    TestFunction,
    audit_hypotheses,
    chain_bound,
    chain_holder,
    chain_statistics,
    format_record,
    gaussian_l2_norm,
    global_modulus,
    homeomorphism_audit,
    nonconfluence,
    semigroup,
    transition_density,
    weak_derivative,
    write_series,
)
from zvonkin.fields import Grid, SpaceTimeField
from zvonkin.sde_sim import EulerScheme, PathEnsemble, SdeProblem, brownian, euler, flow_grid

# (2 sqrt(pi))^(-1/2): L2 norm of the standard normal density
GAUSS_L2 = 0.5311259660135985
# Phi(0.1) - Phi(0), from scipy.stats.norm
HALFSPACE_GAP = 0.03982783727702899

G = Grid(1, 8.0, 0.02, 1.0, 1e-3)
ZERO = SdeProblem(SpaceTimeField.constant(G, 0.0))
OU = SdeProblem(SpaceTimeField.from_function(G, lambda t, X: -X[:, 0]))


class TestReports:
    def test_format_record_sorted(self):
        text = format_record("x", {"b": np.float64(0.5), "a": [1, np.int64(2)], "c": np.array([0.25])})
        assert text == "[x]\na=[1, 2]\nb=0.5\nc=[0.25]\n"

    def test_write_series(self, tmp_path):
        p = write_series(tmp_path / "s.txt", [1, 2], np.array([0.5, 0.25]))
        assert p.read_text() == "1.0 0.5\n2.0 0.25\n"


class TestDensity:
    def test_gaussian_norm(self):
        assert gaussian_l2_norm(1.0) == pytest.approx(GAUSS_L2)
        assert gaussian_l2_norm(1.0, 2) == pytest.approx(GAUSS_L2 ** 2)

    def test_kde_standard_normal(self):
        e = euler(ZERO, 0.0, brownian(1, 1.0, 0.1, 20000, 2), record_every=10)
        est = transition_density(e, 1.0)
        assert est.mass == pytest.approx(1.0, abs=1e-3)
        assert est.norms[1.0] == pytest.approx(1.0, abs=1e-3)
        # the KDE convolves with N(0, h^2): its L2 norm is that of variance 1 + h^2
        assert est.norms[2.0] == pytest.approx(gaussian_l2_norm(1 + est.bandwidth ** 2), rel=0.02)
        assert est.bandwidth_rule == "silverman"

    def test_fixed_bandwidth(self):
        e = euler(ZERO, 0.0, brownian(1, 1.0, 0.1, 5000, 2), record_every=10)
        est = transition_density(e, 1.0, bandwidth=0.2)
        assert est.bandwidth == pytest.approx(0.2)
        with pytest.raises(AnalysisError):
            transition_density(e, 1.0, bandwidth=-1.0)

    def test_degenerate_at_time_zero(self):
        e = euler(ZERO, 0.0, brownian(1, 1.0, 0.1, 50, 2))
        est = transition_density(e, 0.0)
        assert est.degenerate and math.isinf(est.norms[2.0])

    def test_flagged_mass_scaled(self):
        paths = np.random.default_rng(0).normal(size=(1000, 2, 1))
        flagged = np.arange(1000) < 100
        est = transition_density(PathEnsemble(paths, np.array([0.0, 1.0]), flagged), 1.0)
        assert est.mass == pytest.approx(0.9, abs=2e-3)
        assert est.unflagged_fraction == pytest.approx(0.9)


class TestSemigroupEstimator:
    def test_parse(self):
        f = TestFunction.parse("halfspace:0:0.0")
        assert f.kind == "halfspace" and f.bound == 1.0
        assert TestFunction.parse("ball:0:0:1").params == (0.0, 0.0, 1.0)
        assert TestFunction.parse("cos:0:2").describe() == "cos:0:2.0"
        for bad in ("nope:1", "halfspace:x:1", "cos:1"):
            with pytest.raises(AnalysisError):
                TestFunction.parse(bad)

    def test_values(self):
        x = np.array([[-1.0], [0.5], [2.0]])
        np.testing.assert_array_equal(TestFunction.halfspace()(x), [0, 1, 1])
        np.testing.assert_array_equal(TestFunction.ball([0.0], 1.0)(x), [0, 1, 0])
        np.testing.assert_array_equal(TestFunction.constant(2.0)(x), [2, 2, 2])

    def test_rejects_plain_callable(self):
        e = euler(ZERO, 0.0, brownian(1, 1.0, 0.5, 5, 0))
        with pytest.raises(AnalysisError):
            semigroup([e], lambda x: x, 1.0)

    def test_constant_function_exact(self):
        w = brownian(1, 1.0, 0.1, 100, 0)
        fl = flow_grid(EulerScheme(ZERO), 2, w)
        rep = semigroup(fl, TestFunction.constant(0.7), 1.0)
        np.testing.assert_allclose(rep.values, 0.7, atol=1e-15)
        np.testing.assert_allclose(rep.modulus, 0.0, atol=1e-15)
        assert len(rep.spacings) == 3

    def test_halfspace_additive(self):
        w = brownian(1, 1.0, 1e-2, 20000, 3)
        a, b = euler(ZERO, 0.0, w, record_every=100), euler(ZERO, 0.1, w, record_every=100)
        rep = semigroup([a, b], TestFunction.halfspace(), 1.0)
        assert rep.values[0] == pytest.approx(0.5, abs=4 * rep.stderr[0])
        assert abs(rep.modulus[0] - HALFSPACE_GAP) < 3 * rep.modulus_stderr[0]
        assert rep.spacings == [pytest.approx(0.1)]

    def test_cosine_additive(self):
        # E cos(x + W_1) = exp(-1/2) cos(x)
        w = brownian(1, 1.0, 1e-2, 20000, 4)
        e = euler(ZERO, 0.3, w, record_every=100)
        rep = semigroup([e], TestFunction.trig("cos"), 1.0)
        assert abs(rep.values[0] - math.exp(-0.5) * math.cos(0.3)) < 4 * rep.stderr[0]


class TestChain:
    def test_rigid_flow_slope_exact(self):
        fl = flow_grid(EulerScheme(ZERO), 4, brownian(1, 1.0, 1e-2, 20, 0), record_every=10)
        rep = chain_holder(fl, 4, range(1, 5))
        assert rep.slope == pytest.approx(4.0, abs=1e-9)
        assert rep.beta_eff == pytest.approx(1.0, abs=1e-9)
        assert rep.chain_bound_holds

    def test_ou_flow_slope_exact(self):
        fl = flow_grid(EulerScheme(OU), 3, brownian(1, 1.0, 1e-3, 20, 0), record_every=100)
        rep = chain_holder(fl, 2, [1, 2, 3])
        assert rep.slope == pytest.approx(2.0, abs=1e-9)

    def test_unit_cube_scaling(self):
        w = brownian(1, 1.0, 1e-2, 5, 0)
        a = chain_holder(flow_grid(EulerScheme(ZERO), 3, w), 2, [1, 2, 3])
        b = chain_holder(flow_grid(EulerScheme(ZERO), 3, w, lower=-2.0, upper=2.0), 2, [1, 2, 3])
        np.testing.assert_allclose(a.moments, b.moments, rtol=1e-9)

    def test_statistics_shape(self):
        fl = flow_grid(EulerScheme(ZERO), 3, brownian(1, 1.0, 0.1, 4, 0))
        K = chain_statistics(fl)
        assert K.shape == (4, 4, 11)
        np.testing.assert_allclose(K[:, 0, 0], 2.0 ** -np.arange(4))

    @settings(max_examples=15, deadline=None)
    @given(seed=st.integers(0, 10 ** 6), beta=st.floats(0.1, 1.0))
    def test_chain_bound_dominates_modulus(self, seed, beta):
        # random monotone maps of D_3 in d=1; the dyadic chaining inequality is deterministic
        rng = np.random.default_rng(seed)
        vals = np.cumsum(rng.exponential(size=(9, 3, 2, 1)), axis=0)
        from zvonkin.sde_sim import FlowEnsemble

        fl = FlowEnsemble(np.linspace(0, 1, 9)[:, None], vals, np.array([0.0, 1.0]), np.zeros(3, bool),
                          {}, "", 3)
        K = chain_statistics(fl)
        assert np.all(chain_bound(K, beta) >= global_modulus(fl, beta) - 1e-12)

    def test_chain_bound_2d(self):
        from zvonkin.sde_sim import FlowEnsemble, dyadic_points

        rng = np.random.default_rng(1)
        pts = dyadic_points(2, 2)
        vals = pts[:, None, None, :] + 0.3 * rng.normal(size=(len(pts), 4, 2, 2))
        fl = FlowEnsemble(pts, vals, np.array([0.0, 1.0]), np.zeros(4, bool), {}, "", 2)
        assert np.all(chain_bound(chain_statistics(fl), 0.5, d=2) >= global_modulus(fl, 0.5))

    def test_validation(self):
        fl = flow_grid(EulerScheme(ZERO), 2, brownian(1, 1.0, 0.1, 4, 0))
        with pytest.raises(AnalysisError):
            chain_holder(fl, 2, [1])
        with pytest.raises(AnalysisError):
            chain_holder(fl, 2, [1, 5])
        with pytest.raises(AnalysisError):
            chain_holder(fl, -1, [1, 2])


class TestWeakDerivative:
    def test_rigid_flow(self):
        rep = weak_derivative(EulerScheme(ZERO), 0.0, 0, [0.1, 0.05, 0.025], brownian(1, 1.0, 1e-2, 50, 0))
        assert max(rep.gaps) < 1e-9
        np.testing.assert_allclose(rep.norms, 1.0, atol=1e-9)
        assert rep.non_increasing

    def test_ou_flow(self):
        # D = (1 - dt)^k deterministically; L2(0, T) norm is sqrt(sum dt (1 - dt)^(2k))
        rep = weak_derivative(EulerScheme(OU), 0.0, 0, [0.1, 0.05], brownian(1, 1.0, 1e-3, 20, 0))
        k = np.arange(1000)
        assert rep.norms[0] == pytest.approx(math.sqrt(np.sum(1e-3 * (1 - 1e-3) ** (2 * k))), rel=1e-9)
        assert rep.gaps[0] < 1e-9

    def test_validation(self):
        w = brownian(1, 1.0, 0.1, 4, 0)
        with pytest.raises(AnalysisError):
            weak_derivative(EulerScheme(ZERO), 0.0, 0, [0.05, 0.1], w)
        with pytest.raises(AnalysisError):
            weak_derivative(EulerScheme(ZERO), 0.0, 1, [0.1, 0.05], w)


class TestNonconfluence:
    SIGMA = SpaceTimeField.from_function(G, lambda t, X: 1 + np.minimum(np.abs(X[:, 0]) ** 0.6, 1) / 2,
                                         alpha=0.6)

    def test_audit_passes_for_holder_sigma(self):
        p = SdeProblem(SpaceTimeField.constant(G, 0.0), self.SIGMA)
        audit = audit_hypotheses(p, lambda x: 0.5 * np.sign(x) * np.abs(x) ** 0.2, lambda x: 0 * x)
        assert audit.passed and audit.h1 and audit.h2 and audit.h3

    def test_audit_rejects_degenerate_sigma(self):
        p = SdeProblem(SpaceTimeField.constant(G, 0.0), SpaceTimeField.from_function(G, lambda t, X: X[:, 0]))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            audit = audit_hypotheses(p, None, None)
        assert not audit.h2 and not audit.passed
        assert audit.skipped == ["H1", "H3"]

    def test_audit_rejects_wrong_h1_function(self):
        p = SdeProblem(SpaceTimeField.constant(G, 0.0), self.SIGMA)
        audit = audit_hypotheses(p, lambda x: 0 * x, lambda x: 0 * x)
        assert audit.h1 is False

    def test_audit_h3_lipschitz(self):
        p = SdeProblem(SpaceTimeField.from_function(G, lambda t, X: np.sin(X[:, 0])))
        assert audit_hypotheses(p, lambda x: 0 * x, lambda x: x).h3
        assert not audit_hypotheses(p, lambda x: 0 * x, lambda x: 0.5 * x).h3

    def test_missing_function_warns(self):
        with pytest.warns(UserWarning, match="H1"):
            audit_hypotheses(ZERO, None, lambda x: 0 * x)

    def test_additive_pair_never_meets(self):
        rep = nonconfluence(ZERO, 0.0, 0.5, brownian(1, 1.0, 1e-2, 100, 0), lambda x: 0 * x, lambda x: 0 * x)
        assert rep.min_separation == pytest.approx(0.5)
        assert rep.below_threshold == 0 and rep.threshold == pytest.approx(0.1)
        assert "audit_passed=True" in rep.to_text()

    def test_same_start_rejected(self):
        with pytest.raises(AnalysisError):
            nonconfluence(ZERO, 0.0, 0.0, brownian(1, 1.0, 0.1, 2, 0))


class TestHomeomorphism:
    def test_rigid_flow(self):
        fl = flow_grid(EulerScheme(ZERO), 3, brownian(1, 1.0, 0.1, 10, 0))
        rep = homeomorphism_audit(fl, 1.0)
        assert rep.order_preserved_fraction == 1.0
        assert rep.min_distance == pytest.approx(0.125)
        assert rep.negative_moment_product == pytest.approx(1.0)
        assert rep.clipped == 0

    def test_collapsed_flow_is_clipped(self):
        from zvonkin.sde_sim import FlowEnsemble

        vals = np.zeros((3, 2, 2, 1))
        fl = FlowEnsemble(np.array([[0.0], [0.5], [1.0]]), vals, np.array([0.0, 1.0]), np.zeros(2, bool),
                          {}, "", 1)
        rep = homeomorphism_audit(fl, 1.0, clip=1e-3)
        assert rep.clipped == 4
        assert rep.order_preserved_fraction == 0.0
        assert rep.negative_moment_product == pytest.approx(0.25e6)

    def test_2d(self):
        g2 = Grid(2, 4.0, 0.5, 1.0, 0.5)
        p = SdeProblem(SpaceTimeField.constant(g2, [0.0, 0.0]))
        fl = flow_grid(EulerScheme(p), 1, brownian(2, 1.0, 0.1, 3, 0))
        rep = homeomorphism_audit(fl, 1.0)
        assert rep.order_preserved_fraction is None
        # D_1 spacing on the unit square
        assert rep.min_distance == pytest.approx(0.5)
