import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from calibkit import binning as bn
from calibkit.core import BinaryDataset, DomainError


def random_dataset(seed, n_max=200):
    r = np.random.default_rng(seed)
    n = int(r.integers(1, n_max))
    p = r.uniform(size=n)
    if r.uniform() < 0.3:  # force ties
        p = np.round(p, 1)
    return BinaryDataset(p, (r.uniform(size=n) < p).astype(int))


def diagram(ds, scheme, b):
    return bn.reliability_diagram(ds, bn.build_binning(ds, scheme, b))


class TestBuildBinning:
    def test_equal_width_two(self):
        b = bn.build_binning(None, "equal-width", 2)
        np.testing.assert_array_equal(b.boundaries, [0.0, 0.5, 1.0 + bn.EPS])

    def test_equal_size_midpoint(self, d4):
        b = bn.build_binning(d4, "equal-size", 2)
        np.testing.assert_allclose(b.boundaries, [0.0, 0.5, 1.0 + bn.EPS])

    @pytest.mark.parametrize("scheme", bn.SCHEMES)
    def test_single_bin(self, d4, scheme):
        np.testing.assert_array_equal(
            bn.build_binning(d4, scheme, 1).boundaries, [0.0, 1.0 + bn.EPS]
        )

    def test_too_many_equal_size_bins(self, d4):
        with pytest.raises(DomainError):
            bn.build_binning(d4, "equal-size", 5)

    def test_unknown_scheme(self, d4):
        with pytest.raises(DomainError):
            bn.build_binning(d4, "quantile", 2)

    def test_one_lands_in_last_bin(self):
        b = bn.build_binning(None, "equal-width", 4)
        assert b.assign([1.0])[0] == 3

    def test_ties_merge(self):
        p = np.array([0.1, 0.5, 0.5, 0.5, 0.5, 0.9])
        b = bn.build_binning(p, "equal-size", 3)
        counts = np.bincount(b.assign(p), minlength=b.n_bins)
        # no tie group is split across bins
        for k in range(b.n_bins):
            vals = set(p[b.assign(p) == k])
            for other in range(b.n_bins):
                if other != k:
                    assert not vals & set(p[b.assign(p) == other])
        assert counts.sum() == 6

    @given(st.integers(0, 2**31 - 1), st.integers(1, 40))
    def test_equal_size_balanced_when_distinct(self, seed, b):
        p = np.random.default_rng(seed).uniform(size=97)
        binning = bn.build_binning(p, "equal-size", b)
        counts = np.bincount(binning.assign(p), minlength=binning.n_bins)
        assert binning.n_bins == b
        assert counts.max() - counts.min() <= 1


class TestDiagramAndECE:
    def test_d4_statistics(self, d4):
        d = diagram(d4, "equal-width", 2)
        np.testing.assert_array_equal(d.counts, [2, 2])
        np.testing.assert_allclose(d.mean_pred, [0.3, 0.7])
        np.testing.assert_allclose(d.mean_label, [0.5, 0.5])

    def test_d4_ece(self, d4):
        d = diagram(d4, "equal-width", 2)
        assert bn.ece_binned(d, 1) == pytest.approx(0.2)
        assert bn.ece_binned(d, 2) == pytest.approx(0.04)

    def test_constant_predictions(self):
        ds = BinaryDataset(np.full(5, 0.5), [1, 0, 1, 1, 0])
        d = diagram(ds, "equal-width", 1)
        assert d.mean_pred[0] == 0.5 and d.mean_label[0] == pytest.approx(0.6)

    def test_empty_bin_flagged(self):
        ds = BinaryDataset([0.7, 0.9], [1, 0])
        d = diagram(ds, "equal-width", 2)
        assert d.counts[0] == 0 and np.isnan(d.mean_pred[0])
        assert not d.nonempty[0]

    def test_calibrated_bins_zero(self):
        ds = BinaryDataset([0.5, 0.5], [0, 1])
        assert bn.ece_binned(diagram(ds, "equal-width", 3), 1) == 0.0

    def test_records_structure(self, d4):
        recs = diagram(d4, "equal-width", 2).records()
        assert [set(r) for r in recs] == [
            {"left", "right", "count", "mean_pred", "mean_label", "tilted_height"}
        ] * 2
        for r in recs:
            assert r["tilted_height"] - r["left"] == pytest.approx(r["mean_label"] - r["mean_pred"])


class TestTiltedRoof:
    def test_d4_heights(self, d4):
        t = bn.tilted_roof_map(diagram(d4, "equal-width", 2))
        np.testing.assert_allclose(t.heights, [0.2, 0.3])
        assert t(0.2) == pytest.approx(0.4)
        assert np.mean(np.abs(t(d4.predictions) - d4.predictions)) == pytest.approx(0.2)

    def test_calibrated_is_identity(self):
        ds = BinaryDataset([0.25, 0.75], [0, 1])
        t = bn.tilted_roof_map(diagram(ds, "equal-width", 1))
        assert t(0.3) == pytest.approx(0.3)

    def test_empty_bin_identity_segment(self):
        ds = BinaryDataset([0.7, 0.9], [1, 1])
        t = bn.tilted_roof_map(diagram(ds, "equal-width", 2))
        assert t(0.2) == pytest.approx(0.2)

    @given(
        st.integers(0, 2**31 - 1),
        st.sampled_from(bn.SCHEMES),
        st.integers(1, 30),
        st.sampled_from([1, 2, 0.5]),
    )
    def test_equals_binned_ece(self, seed, scheme, b, alpha):
        ds = random_dataset(seed)
        b = min(b, len(ds)) if scheme == "equal-size" else b
        d = diagram(ds, scheme, b)
        t = bn.tilted_roof_map(d)
        p = ds.predictions
        via_map = np.mean(np.abs(t(p) - p) ** alpha)
        assert abs(bn.ece_binned(d, alpha) - via_map) <= 1e-10
        m = d.nonempty
        np.testing.assert_allclose(t(d.mean_pred[m]), d.mean_label[m], atol=1e-12)

    @pytest.mark.parametrize("seed", range(5))
    def test_local_optimality(self, seed):
        ds = random_dataset(seed + 100)
        d = diagram(ds, "equal-width", 5)
        t = bn.tilted_roof_map(d)
        base = np.sum((t(ds.predictions) - ds.labels) ** 2)
        for k in range(5):
            for delta in (-1e-3, 1e-3):
                h = t.heights.copy()
                h[k] += delta
                pert = bn.TiltedMap(t.binning, h)
                assert np.sum((pert(ds.predictions) - ds.labels) ** 2) >= base - 1e-12


class TestDebias:
    def test_closed_form_single_bin(self):
        # p = y_bar = 0.5, n = 100: sigma = 0.05
        ds = BinaryDataset(np.full(100, 0.5), np.repeat([0, 1], 50))
        deb = bn.debias_ece(diagram(ds, "equal-width", 1))
        assert deb == pytest.approx(-0.05 * np.sqrt(2 / np.pi), abs=1e-5)

    def test_degenerate_bin_no_bias(self):
        ds = BinaryDataset([0.2, 0.3], [1, 1])
        d = diagram(ds, "equal-width", 1)
        assert bn.debias_ece(d) == bn.ece_binned(d, 1)

    def test_large_bin_negligible(self):
        n = 10**6
        y = np.zeros(n, dtype=int)
        y[: n // 2] = 1
        ds = BinaryDataset(np.full(n, 0.3), y)
        d = diagram(ds, "equal-width", 1)
        raw = bn.ece_binned(d, 1)
        assert raw == pytest.approx(0.2)
        assert 0 <= raw - bn.debias_ece(d) < 1e-3
        assert bn.debias_ece(d) == pytest.approx(raw, abs=1e-3)

    @given(st.integers(0, 2**31 - 1))
    def test_never_above_raw(self, seed):
        ds = random_dataset(seed)
        d = diagram(ds, "equal-width", 4)
        assert bn.debias_ece(d) <= bn.ece_binned(d, 1) + 1e-12

    def test_expected_abs_dev_oracle(self):
        # E|c - R| for a normal has the closed form s*sqrt(2/pi)*exp(-z^2/2) + d*(2 Phi(z) - 1)
        from scipy.stats import norm

        c, mu, s = 0.42, 0.5, 0.03
        z = (c - mu) / s
        exact = s * np.sqrt(2 / np.pi) * np.exp(-z * z / 2) + (c - mu) * (2 * norm.cdf(z) - 1)
        assert bn._expected_abs_dev(c, mu, s) == pytest.approx(exact, abs=1e-7)


def sweep_oracle(ds, scheme):
    best = 1
    for b in range(1, len(ds) + 1):
        if bn.is_monotone(diagram(ds, scheme, b)):
            best = b
    return best


class TestSweep:
    def test_d4(self, d4):
        assert bn.sweep_select(d4, "equal-size") == 2

    def test_staircase_labels(self):
        ds = BinaryDataset([0.1, 0.2, 0.3, 0.4], [0, 0, 1, 1])
        assert bn.sweep_select(ds, "equal-size") == 4

    def test_single_point(self):
        assert bn.sweep_select(BinaryDataset([0.3], [1])) == 1

    @given(st.integers(0, 2**31 - 1), st.sampled_from(bn.SCHEMES))
    def test_matches_brute_force(self, seed, scheme):
        ds = random_dataset(seed, n_max=40)
        assert bn.sweep_select(ds, scheme) == sweep_oracle(ds, scheme)

    @given(st.integers(0, 2**31 - 1))
    def test_maximality(self, seed):
        ds = random_dataset(seed, n_max=60)
        b = bn.sweep_select(ds, "equal-size")
        assert bn.is_monotone(diagram(ds, "equal-size", b))
        if b < len(ds):
            assert not bn.is_monotone(diagram(ds, "equal-size", b + 1))


class TestCV:
    def test_tolerance_rule(self):
        assert bn.select_with_tolerance({3: 0.2500, 7: 0.2501}) == 3
        assert bn.select_with_tolerance({3: 0.2510, 7: 0.2500}) == 7
        assert bn.select_with_tolerance({15: 0.3}) == 15

    def test_single_candidate(self, rng):
        p = rng.uniform(size=100)
        ds = BinaryDataset(p, (rng.uniform(size=100) < p).astype(int))
        assert bn.cv_select_bins(ds, "equal-size", [15]) == 15

    def test_too_few_rows(self, d4):
        with pytest.raises(DomainError):
            bn.cv_select_bins(d4, "equal-size", [1, 2])

    def test_regularisation_on_calibrated_data(self):
        r = np.random.default_rng(7)
        p = r.uniform(size=3000)
        ds = BinaryDataset(p, (r.uniform(size=3000) < p).astype(int))
        losses = bn.cv_bin_losses(ds, "equal-size", range(1, 31), seed=3)
        chosen = bn.select_with_tolerance(losses)
        assert chosen <= min(losses, key=losses.get)
        assert losses[chosen] <= 1.001 * min(losses.values())
        assert chosen == min(b for b, v in losses.items() if v <= 1.001 * min(losses.values()))

    def test_fold_indices_partition(self):
        parts = bn.fold_indices(23, 10, 0)
        assert len(parts) == 10
        np.testing.assert_array_equal(np.sort(np.concatenate(parts)), np.arange(23))
        assert max(map(len, parts)) - min(map(len, parts)) <= 1

    def test_deterministic(self, rng):
        p = rng.uniform(size=200)
        ds = BinaryDataset(p, (rng.uniform(size=200) < p).astype(int))
        a = bn.cv_bin_losses(ds, "equal-width", [2, 5, 9], seed=4)
        b = bn.cv_bin_losses(ds, "equal-width", [9, 5, 2], seed=4)
        assert a == b
