"""Sample-based NWJ estimation: binning, tabular critic ascent, benchmarks."""

import numpy as np
import pytest

from structssl.estimators import (empirical_tables, estimate_mi_discrete,
                                  estimate_mi_gaussian, fit_tabular_critic,
                                  discretize, nwj_sample_bound, quantile_bins)
from structssl.exactinfo import (DiscreteJoint, GaussianPairSpec, gaussian_mi,
                                 nwj_exact, optimal_critic, pairwise_mi,
                                 random_joint)


class TestSampleBound:
    def test_constant_critic_one_is_zero(self):
        t = np.ones(1000)
        assert nwj_sample_bound(t, t) == pytest.approx(0.0, abs=1e-15)

    def test_matches_direct_formula(self):
        rng = np.random.default_rng(0)
        tj, tp = rng.standard_normal(500), rng.standard_normal(500)
        expected = tj.mean() - np.exp(tp - 1.0).mean()
        assert nwj_sample_bound(tj, tp) == pytest.approx(expected, rel=1e-12)


class TestBinning:
    def test_quantile_bins_are_interior_and_sorted(self):
        samples = np.random.default_rng(1).standard_normal(5000)
        edges = quantile_bins(samples, 8)
        assert edges.shape == (7,)
        assert np.all(np.diff(edges) > 0)
        assert edges[0] > samples.min() and edges[-1] < samples.max()

    def test_discretize_balanced_on_continuous_data(self):
        samples = np.random.default_rng(2).standard_normal(8000)
        idx = discretize(samples, quantile_bins(samples, 8))
        counts = np.bincount(idx, minlength=8)
        assert idx.min() >= 0 and idx.max() <= 7
        assert counts.min() > 8000 / 8 * 0.9

    def test_empirical_tables_are_distributions(self):
        rng = np.random.default_rng(3)
        ix = rng.integers(0, 4, size=2000)
        iz = rng.integers(0, 3, size=2000)
        joint, product = empirical_tables(ix, iz, (4, 3))
        assert joint.sum() == pytest.approx(1.0, abs=1e-12)
        assert product.sum() == pytest.approx(1.0, abs=1e-12)
        np.testing.assert_allclose(product, np.outer(joint.sum(1), joint.sum(0)),
                                   atol=1e-15)


class TestTabularCritic:
    def test_ascends_toward_exact_mi_on_known_table(self):
        j = random_joint((6, 6, 2), np.random.default_rng(4))
        joint = j.pair_marginal("XZ")
        product = np.outer(j.marginal_x(), j.marginal_z())
        fit = fit_tabular_critic(joint, product, steps=800, lr=0.1)
        mi = pairwise_mi(j, "XZ")
        assert fit.bound <= mi + 1e-9
        assert fit.bound >= 0.9 * mi - 0.01

    def test_recovers_optimal_critic_shape(self):
        # on the true tables the stationary point is T* = 1 + log(p/q)
        j = random_joint((4, 4, 2), np.random.default_rng(5))
        joint = j.pair_marginal("XZ")
        product = np.outer(j.marginal_x(), j.marginal_z())
        fit = fit_tabular_critic(joint, product, steps=4000, lr=0.05)
        t_star = 1.0 + np.log(joint / product)
        assert np.max(np.abs(fit.critic - t_star)) < 0.05

    def test_final_bound_no_worse_than_constant_critic(self):
        j = random_joint((5, 3, 2), np.random.default_rng(6))
        joint = j.pair_marginal("XZ")
        product = np.outer(j.marginal_x(), j.marginal_z())
        fit = fit_tabular_critic(joint, product, steps=300, lr=0.1)
        assert fit.bound > 0.0


class TestGaussianBenchmark:
    def test_d1_rho08_recovers_reference_interval(self):
        spec = GaussianPairSpec(d=1, rho=0.8)
        true_mi = gaussian_mi(spec)
        assert true_mi == pytest.approx(0.5108, abs=5e-5)
        for seed in (0, 1, 2):
            est = estimate_mi_gaussian(spec, n=10000, seed=seed)
            assert est.true_mi == pytest.approx(true_mi, rel=1e-12)
            assert 0.40 <= est.estimate <= 0.56

    def test_independent_gaussian_estimates_near_zero(self):
        est = estimate_mi_gaussian(GaussianPairSpec(d=1, rho=0.0), n=8000, seed=0)
        assert abs(est.estimate) < 0.05

    def test_estimate_is_deterministic_in_seed(self):
        spec = GaussianPairSpec(d=1, rho=0.6)
        a = estimate_mi_gaussian(spec, n=4000, seed=7)
        b = estimate_mi_gaussian(spec, n=4000, seed=7)
        assert a.estimate == b.estimate

    def test_metadata_fields(self):
        est = estimate_mi_gaussian(GaussianPairSpec(d=2, rho=0.5), n=2000, seed=3)
        assert est.n == 2000 and est.seed == 3
        assert est.estimator == "nwj-tabular"


class TestDiscreteBenchmark:
    def test_tracks_exact_mi_on_small_joint(self):
        j = random_joint((4, 4, 3), np.random.default_rng(8))
        mi = pairwise_mi(j, "XZ")
        est = estimate_mi_discrete(j, "XZ", n=20000, seed=0)
        assert est.true_mi == pytest.approx(mi, rel=1e-12)
        assert abs(est.estimate - mi) < 0.1

    def test_lower_bound_holds_in_expectation_band(self):
        j = random_joint((3, 3, 2), np.random.default_rng(9))
        mi = pairwise_mi(j, "XZ")
        ests = [estimate_mi_discrete(j, "XZ", n=10000, seed=s).estimate
                for s in range(3)]
        assert np.mean(ests) < mi + 0.05
