import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from calibkit.core import (
    BinaryDataset,
    DomainError,
    FormatError,
    GroundTruthMap,
    bregman,
    cmee,
    cmee_ceac_decomposition,
    invert_monotone,
    logit,
    loss_eval,
    mean_loss,
    reduce_multiclass,
    sigmoid,
    true_ce,
)


class TestBinaryDataset:
    def test_rejects_length_mismatch(self):
        with pytest.raises(FormatError):
            BinaryDataset([0.1, 0.2], [1])

    @pytest.mark.parametrize("p", [[-0.1], [1.5], [np.nan]])
    def test_rejects_bad_probability(self, p):
        with pytest.raises(FormatError):
            BinaryDataset(p, [1])

    @pytest.mark.parametrize("y", [[2], [0.5], [-1]])
    def test_rejects_soft_labels(self, y):
        with pytest.raises(FormatError):
            BinaryDataset([0.3], y)

    def test_arrays_are_read_only(self):
        ds = BinaryDataset([0.1, 0.9], [0, 1])
        with pytest.raises(ValueError):
            ds.predictions[0] = 0.5


class TestTrueCE:
    def test_identity_is_zero(self, rng):
        ds = BinaryDataset(rng.uniform(size=50), rng.integers(0, 2, 50))
        assert true_ce(ds, GroundTruthMap.identity()) == 0.0

    def test_single_point(self):
        gt = GroundTruthMap.from_callable(lambda p: np.asarray(p) ** 2)
        assert true_ce(BinaryDataset([0.5], [1]), gt, 1) == pytest.approx(0.25)

    def test_two_points_alpha_two(self):
        gt = GroundTruthMap.stepwise([0.0, 0.5, 1.0 + 1e-9], [0.3, 0.6])
        ds = BinaryDataset([0.2, 0.8], [0, 1])
        assert true_ce(ds, gt, 2) == pytest.approx(0.025, abs=1e-15)

    @given(st.integers(0, 2**31 - 1))
    def test_permutation_invariant(self, seed):
        r = np.random.default_rng(seed)
        p = r.uniform(size=30)
        y = r.integers(0, 2, 30)
        gt = GroundTruthMap.analytic(lambda c: c**2)
        perm = r.permutation(30)
        a = true_ce(BinaryDataset(p, y), gt)
        b = true_ce(BinaryDataset(p[perm], y[perm]), gt)
        assert a == pytest.approx(b, rel=1e-13)


class TestLosses:
    def test_examples(self):
        assert loss_eval("mse", 0.5, 1) == 0.25
        assert loss_eval("mse", 0, 0) == 0
        assert loss_eval("ce", 1 - 1e-12, 1) < 1.1e-6

    def test_unknown_loss(self):
        with pytest.raises(DomainError):
            loss_eval("hinge", 0.5, 1)

    @pytest.mark.parametrize("kind", ["mse", "ce"])
    def test_strictly_proper_on_grid(self, kind):
        grid = np.round(np.arange(1, 100) / 100, 2)
        for q in grid:
            expected = q * loss_eval(kind, grid, 1) + (1 - q) * loss_eval(kind, grid, 0)
            assert grid[np.argmin(expected)] == pytest.approx(q)


class TestBregman:
    def test_examples(self):
        assert bregman("squared", 0.3, 0.5) == pytest.approx(0.04)
        assert bregman("entropy", 0.5, 1.0) == pytest.approx(np.log(2))
        for kind in ("squared", "entropy"):
            assert bregman(kind, 0.37, 0.37) == pytest.approx(0.0, abs=1e-15)

    def test_squared_matches_squared_error_exactly(self):
        g = np.linspace(0, 1, 101)
        P, Q = np.meshgrid(g, g)
        assert np.array_equal(bregman("squared", P, Q), (Q - P) ** 2)

    @pytest.mark.parametrize("p", [0.0, 1.0])
    def test_entropy_domain(self, p):
        with pytest.raises(DomainError):
            bregman("entropy", p, 0.5)

    def test_entropy_is_expected_log_loss_gap(self):
        # d(p, q) = E_q[-log p] - E_q[-log q]
        p, q = 0.3, 0.8
        expected = q * loss_eval("ce", p, 1) + (1 - q) * loss_eval("ce", p, 0)
        entropy = -(q * np.log(q) + (1 - q) * np.log(1 - q))
        assert bregman("entropy", p, q) == pytest.approx(expected - entropy, rel=1e-9)

    @given(st.floats(0.01, 0.99), st.floats(0.0, 1.0))
    def test_nonnegative(self, p, q):
        assert bregman("entropy", p, q) >= -1e-15
        assert bregman("squared", p, q) >= 0


class TestCMEE:
    def test_examples(self):
        ident = lambda p: np.asarray(p)
        assert cmee(ident, GroundTruthMap.identity(), [0.1, 0.7]) == 0.0
        sq = GroundTruthMap.from_callable(lambda p: np.asarray(p) ** 2)
        assert cmee(ident, sq, [0.5]) == pytest.approx(0.25)
        half = lambda p: np.full_like(np.asarray(p, float), 0.5)
        assert cmee(half, GroundTruthMap.identity(), [0.0, 1.0]) == pytest.approx(0.5)

    def test_empty_points(self):
        with pytest.raises(DomainError):
            cmee(lambda p: p, GroundTruthMap.identity(), [])


class TestDecomposition:
    def test_no_ties_means_zero_tie_term(self, rng):
        w = rng.uniform(size=6)
        cs = rng.uniform(0.05, 0.95, 6)
        ch = np.sort(rng.uniform(0.05, 0.95, 6))
        m, c, t = cmee_ceac_decomposition(w, cs, ch, "squared")
        assert t == pytest.approx(0.0, abs=1e-15)
        assert m == pytest.approx(c, abs=1e-15)

    def test_constant_map(self):
        # c_hat constant 0.5: CEAC is d(0.5, E c*) and the tie term is the variance.
        w = np.array([0.5, 0.5])
        cs = np.array([0.2, 0.6])
        m, c, t = cmee_ceac_decomposition(w, cs, [0.5, 0.5], "squared")
        assert c == pytest.approx(0.01)
        assert t == pytest.approx(0.04)
        assert m == pytest.approx(0.05)


class TestReduceMulticlass:
    def test_confidence(self):
        ds = reduce_multiclass([[0.7, 0.2, 0.1]], [0], "confidence")
        assert ds.predictions[0] == 0.7 and ds.labels[0] == 1

    @pytest.mark.parametrize("mode", ["ovr:1", ("ovr", 1)])
    def test_one_vs_rest(self, mode):
        ds = reduce_multiclass([[0.7, 0.2, 0.1]], [0], mode)
        assert ds.predictions[0] == 0.2 and ds.labels[0] == 0

    def test_tie_goes_to_lowest_index(self):
        ds = reduce_multiclass([[0.5, 0.5]], [1], "confidence")
        assert ds.predictions[0] == 0.5 and ds.labels[0] == 0

    def test_row_sum_violation(self):
        with pytest.raises(FormatError):
            reduce_multiclass([[0.5, 0.6]], [0])

    def test_class_out_of_range(self):
        with pytest.raises(DomainError):
            reduce_multiclass([[0.5, 0.5]], [0], "ovr:3")


class TestNumerics:
    def test_logit_clips(self):
        assert np.isfinite(logit(np.array([0.0, 1.0]))).all()
        assert logit(0.5) == 0.0

    def test_sigmoid_stable(self):
        z = np.array([-800.0, 0.0, 800.0])
        np.testing.assert_array_equal(sigmoid(z), [0.0, 0.5, 1.0])
        assert isinstance(sigmoid(0.3), float)

    def test_invert_monotone(self):
        c = np.random.default_rng(0).uniform(size=1000)
        back = invert_monotone(lambda x: x**3, c**3)
        np.testing.assert_allclose(back, c, atol=1e-11)

    def test_analytic_gt(self):
        gt = GroundTruthMap.analytic(lambda c: c**2)
        assert gt(0.25) == pytest.approx(0.5, abs=1e-12)

    def test_stepwise_validation(self):
        with pytest.raises(FormatError):
            GroundTruthMap.stepwise([0.0, 1.0], [0.1, 0.2])
        gt = GroundTruthMap.stepwise([0.0, 0.5, 1.0 + 1e-9], [0.1, 0.9])
        np.testing.assert_array_equal(gt([0.0, 0.49, 0.5, 1.0]), [0.1, 0.1, 0.9, 0.9])

    def test_mean_loss(self):
        assert mean_loss("mse", [0.5, 1.0], [1, 1]) == pytest.approx(0.125)
