import math

import numpy as np
import pytest

from luq.errors import BadKindError, DimMismatchError
from luq.flow import FlowTrainConfig
from luq.gmm import EmOptions
from luq.mlp import CLASSIFICATION, MlpModel, MlpTrainConfig, mlp_train, mlp_predict
from luq.toy import (
    EnsembleModel,
    ToyClassificationSpec,
    ToyRegressionSpec,
    ensemble_scores,
    gen_classification_data,
    gen_ood_data,
    gen_regression_data,
    perturb,
    regression_target,
    run_classification_study,
    run_regression_study,
    train_ensemble,
)


class TestRegressionData:
    def test_target_values(self):
        assert regression_target(0.0) == pytest.approx(-0.5, abs=1e-12)
        assert regression_target(0.25) == pytest.approx(0.625, abs=1e-12)

    def test_no_samples_in_gap(self):
        spec = ToyRegressionSpec(seed=3)
        x, y = gen_regression_data(spec)
        assert x.shape == (750, 1)
        assert not np.any((x[:, 0] > spec.gap[0]) & (x[:, 0] < spec.gap[1]))
        assert np.all((x[:, 0] >= spec.x_lo) & (x[:, 0] <= spec.x_hi))

    def test_noiseless_targets_on_curve(self):
        x, y = gen_regression_data(ToyRegressionSpec(seed=1))
        np.testing.assert_allclose(y, regression_target(x[:, 0]), atol=1e-12)

    def test_noise_added_when_requested(self):
        spec = ToyRegressionSpec(noise_sigma=0.1, seed=1)
        x, y = gen_regression_data(spec)
        resid = y - regression_target(x[:, 0])
        assert np.std(resid) == pytest.approx(0.1, rel=0.15)

    def test_deterministic(self):
        a = gen_regression_data(ToyRegressionSpec(seed=9))
        b = gen_regression_data(ToyRegressionSpec(seed=9))
        np.testing.assert_array_equal(a[0], b[0])

    def test_bad_gap_rejected(self):
        with pytest.raises(ValueError):
            ToyRegressionSpec(gap=(-2.0, 0.0))

    def test_train_rmse_meets_bar(self):
        spec = ToyRegressionSpec(seed=0)
        x, y = gen_regression_data(spec)
        model, _ = mlp_train(
            x, y, (1, 50, 50, 50, 50, 1),
            cfg=MlpTrainConfig(max_epochs=2500, seed=0),
        )
        pred = mlp_predict(model, x)[:, 0]
        assert np.sqrt(np.mean((pred - y) ** 2)) < 0.05


class TestClassificationData:
    def test_shapes_and_labels(self):
        spec = ToyClassificationSpec(n_per_class=50, seed=0)
        x, labels = gen_classification_data(spec)
        assert x.shape == (200, 2)
        assert set(labels.tolist()) == {0, 1, 2, 3}

    def test_ood_shift_distance(self):
        spec = ToyClassificationSpec(n_per_class=200, seed=0)
        x, _ = gen_classification_data(spec)
        ood, _ = gen_ood_data(spec)
        shift = ood.mean(axis=0) - x.mean(axis=0)
        assert np.linalg.norm(shift) == pytest.approx(spec.ood_shift, rel=0.05)


class TestPerturb:
    def test_zero_sigma_identity(self):
        x = np.random.default_rng(0).normal(size=(10, 2))
        np.testing.assert_array_equal(perturb(x, "gaussian_noise", sigma=0.0), x)

    def test_rotation_involution(self):
        x = np.random.default_rng(1).normal(size=(20, 2))
        twice = perturb(perturb(x, "rotate_2d", angle=180.0), "rotate_2d", angle=180.0)
        np.testing.assert_allclose(twice, x, atol=1e-12)

    def test_noise_std_matches_sigma(self):
        x = np.zeros((100_000, 1))
        noisy = perturb(x, "gaussian_noise", sigma=2.5, seed=11)
        assert np.std(noisy - x) == pytest.approx(2.5, rel=0.02)

    def test_noise_reproducible_per_seed(self):
        x = np.ones((50, 2))
        a = perturb(x, "gaussian_noise", sigma=1.0, seed=5)
        b = perturb(x, "gaussian_noise", sigma=1.0, seed=5)
        np.testing.assert_array_equal(a, b)

    def test_flip_axis(self):
        x = np.array([[1.0, 2.0], [3.0, -4.0]])
        out = perturb(x, "flip_axis", axis=1)
        np.testing.assert_array_equal(out, [[1.0, -2.0], [3.0, 4.0]])

    def test_rotate_needs_2d(self):
        with pytest.raises(DimMismatchError):
            perturb(np.ones((5, 3)), "rotate_2d", angle=90.0)

    def test_bad_kind(self):
        with pytest.raises(BadKindError):
            perturb(np.ones((2, 2)), "shear")


def one_hot_classifier(logit_bias):
    """Zero network whose head bias fixes the softmax output."""
    dims = (2, 4, len(logit_bias))
    weights = [np.zeros((dims[i], dims[i + 1])) for i in range(len(dims) - 1)]
    biases = [np.zeros(d) for d in dims[1:]]
    biases[-1] = np.asarray(logit_bias, dtype=float)
    return MlpModel(layer_dims=dims, weights=weights, biases=biases, head=CLASSIFICATION)


class TestEnsembleScores:
    def test_identical_members_no_epistemic(self):
        m = one_hot_classifier([0.3, -0.2])
        ens = EnsembleModel(members=(m, m.copy()))
        epi, ale = ensemble_scores(ens, np.zeros((5, 2)))
        np.testing.assert_allclose(epi, 0.0, atol=1e-12)

    def test_two_one_hot_members(self):
        # members sure of different classes: MI = ln 2, aleatoric = 0
        ens = EnsembleModel(
            members=(one_hot_classifier([200.0, 0.0]), one_hot_classifier([0.0, 200.0]))
        )
        epi, ale = ensemble_scores(ens, np.zeros((3, 2)))
        np.testing.assert_allclose(epi, math.log(2.0), atol=1e-12)
        np.testing.assert_allclose(ale, 0.0, atol=1e-12)

    def test_decomposition_identity(self):
        rng = np.random.default_rng(2)
        members = []
        for s in range(4):
            m, _ = mlp_train(
                rng.normal(size=(30, 2)), rng.integers(0, 3, size=30),
                (2, 8, 3), head=CLASSIFICATION,
                cfg=MlpTrainConfig(max_epochs=30, seed=s),
            )
            members.append(m)
        ens = EnsembleModel(members=tuple(members))
        x = rng.normal(size=(20, 2))
        epi, ale = ensemble_scores(ens, x)
        probs = np.stack([mlp_predict(m, x) for m in ens.members]).mean(axis=0)
        logp = np.where(probs > 0, np.log(probs), 0.0)
        total = -np.sum(probs * logp, axis=1)
        np.testing.assert_allclose(epi + ale, total, atol=1e-12)

    def test_regression_variance(self):
        x = np.random.default_rng(3).normal(size=(40, 1))
        y = x[:, 0] * 0.5
        ens = train_ensemble(
            x, y, (1, 8, 1), cfg=MlpTrainConfig(max_epochs=50, seed=0), n_members=3
        )
        epi, ale = ensemble_scores(ens, x)
        preds = np.stack([mlp_predict(m, x)[:, 0] for m in ens.members])
        np.testing.assert_allclose(epi, preds.var(axis=0), atol=1e-12)
        np.testing.assert_array_equal(ale, 0.0)

    def test_mismatched_architectures_rejected(self):
        a = one_hot_classifier([1.0, 0.0])
        b, _ = mlp_train(
            np.zeros((4, 2)), np.array([0, 1, 0, 1]), (2, 3, 2),
            head=CLASSIFICATION, cfg=MlpTrainConfig(max_epochs=2, seed=0),
        )
        with pytest.raises(ValueError):
            EnsembleModel(members=(a, b))


class TestStudySmoke:
    def test_regression_study_shapes(self):
        spec = ToyRegressionSpec(n_train=120, seed=0)
        study = run_regression_study(
            spec,
            eval_points=41,
            grid_points=200,
            mlp_cfg=MlpTrainConfig(max_epochs=300, seed=0),
            flow_cfg=FlowTrainConfig(batch_size=120, max_epochs=8, seed=0),
        )
        assert study.eval_x.shape == (41,)
        assert study.scores.epistemic.shape == (41,)
        assert len(study.bands) == 41
        for band, pred in zip(study.bands, study.predictions):
            assert band.lower <= pred <= band.upper
        assert study.gap_mask().sum() + study.train_region_mask().sum() == 41

    def test_classification_study_smoke(self):
        spec = ToyClassificationSpec(n_per_class=60, seed=0)
        study = run_classification_study(
            spec,
            em_opts=EmOptions(n_components=2, cov_reg=1e-4, seed=0),
            mlp_cfg=MlpTrainConfig(max_epochs=200, seed=0),
        )
        n_test = study.test_x.shape[0]
        assert study.test_scores.epistemic.shape == (n_test,)
        assert np.all(study.test_scores.aleatoric >= 0.0)
        assert np.all(study.test_scores.aleatoric <= math.log(4) + 1e-12)
        acc = (study.test_predictions == study.test_labels).mean()
        assert acc > 0.9
        # far OOD scores higher than in-distribution on average
        ood_x, _ = gen_ood_data(spec, seed_offset=2)
        ood = study.score_inputs(ood_x)
        assert ood.epistemic.mean() > study.test_scores.epistemic.mean()

    def test_median_epistemic_monotone_in_noise(self):
        from scipy.stats import spearmanr

        spec = ToyClassificationSpec(n_per_class=150, seed=0)
        study = run_classification_study(
            spec,
            em_opts=EmOptions(n_components=5, cov_reg=1e-4, seed=0),
            mlp_cfg=MlpTrainConfig(max_epochs=400, seed=0),
        )
        sigmas = [0.0, 0.5, 1.0, 2.0, 4.0]
        medians = []
        for sigma in sigmas:
            px = perturb(study.test_x, "gaussian_noise", sigma=sigma, seed=42)
            medians.append(float(np.median(study.score_inputs(px).epistemic)))
        rho = spearmanr(sigmas, medians).statistic
        assert rho >= 0.9
        assert np.all(np.diff(medians) >= 0)
