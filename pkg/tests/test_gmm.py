import math

import numpy as np
import pytest

from luq.errors import ClassTooSmallError, DimMismatchError, TooFewSamplesError
from luq.gmm import (
    TIED_COVARIANCE,
    ClassConditionalGmm,
    EmOptions,
    GaussianComponent,
    Gmm,
    em_fit,
    fit_class_conditional,
    gmm_log_prob,
)
from luq.linalg import cholesky


def make_gaussian(mean, cov, log_weight=0.0):
    mean = np.asarray(mean, dtype=float)
    return GaussianComponent(
        log_weight=log_weight, mean=mean, cov_chol=cholesky(np.asarray(cov, dtype=float))
    )


def std_normal_gmm(dim):
    return Gmm(dim=dim, components=(make_gaussian(np.zeros(dim), np.eye(dim)),))


class TestGmmLogProb:
    def test_standard_normal_at_origin(self):
        g = std_normal_gmm(2)
        assert gmm_log_prob(g, np.zeros(2)) == pytest.approx(
            -math.log(2 * math.pi), abs=1e-12
        )
        assert gmm_log_prob(g, np.zeros(2)) == pytest.approx(-1.837877, abs=1e-6)

    def test_symmetric_1d_mixture_at_zero(self):
        # 0.5 N(-1,1) + 0.5 N(+1,1) at 0: log phi(1) = -0.5 log(2 pi) - 0.5
        g = Gmm(
            dim=1,
            components=(
                make_gaussian([-1.0], [[1.0]], math.log(0.5)),
                make_gaussian([1.0], [[1.0]], math.log(0.5)),
            ),
        )
        expected = -0.5 * math.log(2 * math.pi) - 0.5
        assert gmm_log_prob(g, np.zeros(1)) == pytest.approx(expected, abs=1e-12)
        assert gmm_log_prob(g, np.zeros(1)) == pytest.approx(-1.418939, abs=1e-6)

    def test_translation_invariance(self):
        rng = np.random.default_rng(0)
        a = rng.normal(size=(3, 3))
        cov = a @ a.T + 3 * np.eye(3)
        mean = rng.normal(size=3)
        z = rng.normal(size=3)
        offset = rng.normal(size=3) * 10
        g0 = Gmm(dim=3, components=(make_gaussian(mean, cov),))
        g1 = Gmm(dim=3, components=(make_gaussian(mean + offset, cov),))
        assert gmm_log_prob(g1, z + offset) == pytest.approx(
            gmm_log_prob(g0, z), abs=1e-10
        )

    def test_batch_matches_loop(self):
        rng = np.random.default_rng(1)
        g = Gmm(
            dim=2,
            components=(
                make_gaussian([0.0, 0.0], np.eye(2), math.log(0.3)),
                make_gaussian([2.0, -1.0], [[2.0, 0.3], [0.3, 0.5]], math.log(0.7)),
            ),
        )
        zs = rng.normal(size=(20, 2))
        batch = gmm_log_prob(g, zs)
        for i, z in enumerate(zs):
            assert batch[i] == pytest.approx(gmm_log_prob(g, z), abs=1e-12)

    def test_dim_mismatch(self):
        with pytest.raises(DimMismatchError):
            gmm_log_prob(std_normal_gmm(2), np.zeros(3))

    def test_matches_scipy_multivariate_normal(self):
        # independent implementation of the Gaussian log density
        from scipy.stats import multivariate_normal

        rng = np.random.default_rng(21)
        for _ in range(20):
            d = int(rng.integers(1, 6))
            a = rng.normal(size=(d, d))
            cov = a @ a.T + d * np.eye(d)
            mean = rng.normal(size=d)
            weights = rng.dirichlet(np.ones(2))
            cov2 = cov + np.diag(rng.uniform(0.5, 2.0, size=d))
            mean2 = rng.normal(size=d)
            g = Gmm(
                dim=d,
                components=(
                    make_gaussian(mean, cov, np.log(weights[0])),
                    make_gaussian(mean2, cov2, np.log(weights[1])),
                ),
            )
            z = rng.normal(size=d)
            ref = np.log(
                weights[0] * multivariate_normal.pdf(z, mean, cov)
                + weights[1] * multivariate_normal.pdf(z, mean2, cov2)
            )
            assert gmm_log_prob(g, z) == pytest.approx(ref, abs=1e-10)


class TestEmFit:
    def test_single_point_single_component(self):
        x = np.array([[1.5, -2.0]])
        g = em_fit(x, EmOptions(n_components=1, cov_reg=1e-4))
        np.testing.assert_allclose(g.components[0].mean, [1.5, -2.0], atol=1e-12)
        cov = g.components[0].cov_chol.reconstruct()
        np.testing.assert_allclose(cov, 1e-4 * np.eye(2), atol=1e-12)

    def test_two_separated_clusters(self):
        rng = np.random.default_rng(2)
        a = rng.normal(loc=-10.0, scale=1.0, size=(150, 1))
        b = rng.normal(loc=10.0, scale=1.0, size=(150, 1))
        x = np.vstack([a, b])
        g = em_fit(x, EmOptions(n_components=2, seed=0))
        means = sorted(float(c.mean[0]) for c in g.components)
        assert means[0] == pytest.approx(a.mean(), abs=0.1)
        assert means[1] == pytest.approx(b.mean(), abs=0.1)

    def test_component_per_row_with_regularization(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(6, 2))
        g = em_fit(x, EmOptions(n_components=6, cov_reg=1e-3, seed=1))
        assert np.isfinite(g.em_log[-1])

    def test_too_few_samples(self):
        with pytest.raises(TooFewSamplesError):
            em_fit(np.zeros((2, 1)), EmOptions(n_components=3))

    def test_monotone_log_likelihood(self):
        rng = np.random.default_rng(4)
        for trial in range(20):
            n = int(rng.integers(20, 200))
            d = int(rng.integers(1, 6))
            k = int(rng.integers(1, 4))
            x = rng.normal(size=(n, d)) + rng.normal(scale=3.0, size=(1, d))
            g = em_fit(x, EmOptions(n_components=k, seed=trial))
            diffs = np.diff(g.em_log)
            assert np.all(diffs >= -1e-8), f"trial {trial}: {diffs.min()}"

    def test_deterministic(self):
        rng = np.random.default_rng(5)
        x = rng.normal(size=(80, 3))
        opts = EmOptions(n_components=3, seed=42)
        g1 = em_fit(x, opts)
        g2 = em_fit(x.copy(), opts)
        for c1, c2 in zip(g1.components, g2.components):
            assert c1.log_weight == c2.log_weight
            np.testing.assert_array_equal(c1.mean, c2.mean)
            np.testing.assert_array_equal(c1.cov_chol.lower, c2.cov_chol.lower)

    def test_tied_covariances_shared(self):
        rng = np.random.default_rng(6)
        x = rng.normal(size=(100, 2))
        g = em_fit(x, EmOptions(n_components=3, covariance_mode=TIED_COVARIANCE, seed=0))
        ref = g.components[0].cov_chol.lower
        for c in g.components[1:]:
            np.testing.assert_array_equal(c.cov_chol.lower, ref)

    @pytest.mark.parametrize("dim", [1, 2])
    def test_density_integrates_to_one(self, dim):
        rng = np.random.default_rng(7)
        x = rng.normal(size=(200, dim)) * 1.5 + 0.3
        g = em_fit(x, EmOptions(n_components=2, seed=0))
        if dim == 1:
            grid = np.linspace(-18.0, 18.0, 4001)
            dens = np.exp(gmm_log_prob(g, grid[:, None]))
            mass = np.trapezoid(dens, grid)
        else:
            grid = np.linspace(-18.0, 18.0, 501)
            xx, yy = np.meshgrid(grid, grid)
            pts = np.column_stack([xx.ravel(), yy.ravel()])
            dens = np.exp(gmm_log_prob(g, pts)).reshape(xx.shape)
            mass = np.trapezoid(np.trapezoid(dens, grid, axis=1), grid)
        assert mass == pytest.approx(1.0, abs=1e-3)


class TestFitClassConditional:
    def test_single_class_matches_full_fit(self):
        rng = np.random.default_rng(8)
        x = rng.normal(size=(50, 2))
        opts = EmOptions(n_components=2, seed=3)
        ccg = fit_class_conditional(x, np.zeros(50, dtype=int), opts)
        direct = em_fit(x, opts)
        assert ccg.classes == (0,)
        for c1, c2 in zip(ccg.per_class[0].components, direct.components):
            np.testing.assert_array_equal(c1.mean, c2.mean)

    def test_two_classes_recover_centers(self):
        rng = np.random.default_rng(9)
        xa = rng.normal(size=(60, 2)) * 0.3 + np.array([5.0, 0.0])
        xb = rng.normal(size=(40, 2)) * 0.3 + np.array([-5.0, 2.0])
        x = np.vstack([xa, xb])
        labels = np.array([0] * 60 + [1] * 40)
        ccg = fit_class_conditional(x, labels, EmOptions(n_components=1, seed=0))
        np.testing.assert_allclose(
            ccg.per_class[0].components[0].mean, xa.mean(axis=0), atol=1e-9
        )
        np.testing.assert_allclose(
            ccg.per_class[1].components[0].mean, xb.mean(axis=0), atol=1e-9
        )

    def test_small_class_strict_raises(self):
        x = np.zeros((5, 2))
        labels = np.array([0, 0, 0, 0, 1])
        with pytest.raises(ClassTooSmallError):
            fit_class_conditional(
                x, labels, EmOptions(n_components=3), reduce_small_classes=False
            )

    def test_small_class_reduced_with_warning(self):
        rng = np.random.default_rng(10)
        x = rng.normal(size=(25, 2))
        labels = np.array([0] * 20 + [1] * 5)
        with pytest.warns(UserWarning, match="reducing components"):
            ccg = fit_class_conditional(x, labels, EmOptions(n_components=8, seed=0))
        assert len(ccg.per_class[1].components) == 2

    def test_declared_class_with_no_rows_raises(self):
        x = np.zeros((3, 1))
        with pytest.raises(ClassTooSmallError):
            fit_class_conditional(
                x, np.zeros(3, dtype=int), EmOptions(n_components=1), classes=[0, 1]
            )

    def test_classes_sorted(self):
        rng = np.random.default_rng(11)
        x = rng.normal(size=(30, 1))
        labels = np.array([5] * 10 + [1] * 10 + [3] * 10)
        ccg = fit_class_conditional(x, labels, EmOptions(n_components=1, seed=0))
        assert ccg.classes == (1, 3, 5)
