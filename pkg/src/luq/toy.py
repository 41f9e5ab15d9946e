"""Self-contained desk-scale experiments.

Generates the sinusoid regression task (with a gap in the training inputs)
and a Gaussian-blob classification task, trains small MLPs on them,
extracts hidden-layer latents, fits the latent density models, and scores
uncertainty end to end.  Also provides input perturbations and a
deep-ensemble baseline for comparison.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .engine import (
    ConfidenceRegion,
    RegressionPosterior,
    SupportGrid,
    UncertaintyScores,
    confidence_region,
    score_classification,
    score_regression,
)
from .errors import BadKindError, DimMismatchError
from .flow import ConditionalFlow, FlowArchitecture, FlowTrainConfig, FlowTrainLog, flow_train
from .gmm import ClassConditionalGmm, EmOptions, fit_class_conditional
from .linalg import PcaModel, pca_fit, pca_transform
from .mlp import (
    CLASSIFICATION,
    REGRESSION,
    MlpModel,
    MlpTrainConfig,
    latent_extract,
    mlp_predict,
    mlp_train,
    mlp_train_many,
)
from .priors import CategoricalPrior, UniformPrior, fit_categorical


def regression_target(x):
    """The sinusoid-plus-ramp target, normalized to map [-1, 1] into
    [-1, 1]: f(x) = (sin(4 pi x - pi/2) + x) / 2."""
    x = np.asarray(x, dtype=np.float64)
    return 0.5 * (np.sin(4.0 * np.pi * x - 0.5 * np.pi) + x)


@dataclass(frozen=True)
class ToyRegressionSpec:
    n_train: int = 750
    x_lo: float = -1.0
    x_hi: float = 1.0
    gap: tuple[float, float] = (-0.25, 0.25)
    noise_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not self.x_lo < self.gap[0] < self.gap[1] < self.x_hi:
            raise ValueError("gap must lie strictly inside the x range")


def gen_regression_data(spec: ToyRegressionSpec):
    """Training pairs with x uniform over the range minus the gap."""
    rng = np.random.default_rng(spec.seed)
    left = spec.gap[0] - spec.x_lo
    right = spec.x_hi - spec.gap[1]
    u = rng.uniform(0.0, left + right, size=spec.n_train)
    x = np.where(u < left, spec.x_lo + u, spec.gap[1] + (u - left))
    y = regression_target(x)
    if spec.noise_sigma > 0:
        y = y + rng.normal(scale=spec.noise_sigma, size=y.shape)
    return x[:, None], y


@dataclass(frozen=True)
class ToyClassificationSpec:
    """Gaussian blobs at the corners of a square, plus a far-shifted copy
    as unambiguous OOD."""

    n_classes: int = 4
    center_scale: float = 2.0
    sigma: float = 0.4
    n_per_class: int = 500
    ood_shift: float = 8.0
    seed: int = 0

    def __post_init__(self):
        if self.n_classes < 2:
            raise ValueError("need at least 2 classes")

    def centers(self) -> np.ndarray:
        corners = np.array(
            [[1.0, 1.0], [-1.0, -1.0], [1.0, -1.0], [-1.0, 1.0],
             [0.0, 1.0], [0.0, -1.0], [1.0, 0.0], [-1.0, 0.0]]
        )
        if self.n_classes > len(corners):
            raise ValueError("at most 8 blob classes supported")
        return self.center_scale * corners[: self.n_classes]


def gen_classification_data(spec: ToyClassificationSpec, seed_offset: int = 0,
                            shift: float = 0.0):
    """Blob samples and labels; ``shift`` slides every center by that many
    units along the diagonal (used for the OOD copy)."""
    rng = np.random.default_rng(spec.seed + seed_offset)
    centers = spec.centers() + shift / np.sqrt(2.0)
    labels = np.repeat(np.arange(spec.n_classes), spec.n_per_class)
    x = centers[labels] + rng.normal(scale=spec.sigma, size=(labels.size, 2))
    return x, labels


def gen_ood_data(spec: ToyClassificationSpec, seed_offset: int = 0):
    return gen_classification_data(spec, seed_offset=seed_offset, shift=spec.ood_shift)


def perturb(inputs, kind: str, sigma: float | None = None, angle: float | None = None,
            axis: int | None = None, seed: int = 0) -> np.ndarray:
    """Perturbed copy of the inputs.

    Kinds: ``gaussian_noise`` (additive, std ``sigma``), ``rotate_2d``
    (``angle`` in degrees, requires 2-D inputs), ``flip_axis`` (negates
    column ``axis``).
    """
    x = np.asarray(inputs, dtype=np.float64)
    if kind == "gaussian_noise":
        if sigma is None or sigma < 0:
            raise ValueError("gaussian_noise needs sigma >= 0")
        if sigma == 0:
            return x.copy()
        rng = np.random.default_rng(seed)
        return x + rng.normal(scale=sigma, size=x.shape)
    if kind == "rotate_2d":
        if angle is None:
            raise ValueError("rotate_2d needs an angle")
        if x.ndim != 2 or x.shape[1] != 2:
            raise DimMismatchError("rotate_2d requires 2-D inputs")
        rad = np.deg2rad(angle)
        rot = np.array([[np.cos(rad), -np.sin(rad)], [np.sin(rad), np.cos(rad)]])
        return x @ rot.T
    if kind == "flip_axis":
        if axis is None or not 0 <= axis < x.shape[1]:
            raise ValueError("flip_axis needs a valid axis")
        out = x.copy()
        out[:, axis] = -out[:, axis]
        return out
    raise BadKindError(f"unknown perturbation kind {kind!r}")


@dataclass(frozen=True)
class EnsembleModel:
    members: tuple[MlpModel, ...]

    def __post_init__(self):
        dims = {m.layer_dims for m in self.members}
        if len(dims) != 1:
            raise ValueError("ensemble members must share one architecture")


def train_ensemble(x, y, layer_dims, head=REGRESSION, cfg: MlpTrainConfig | None = None,
                   n_members: int = 10, base_seed: int = 0) -> EnsembleModel:
    """Train ``n_members`` identical architectures from different seeds.

    Members train in lockstep (vectorized over the member axis), which is
    equivalent to independent runs with a shared epoch budget.
    """
    cfg = cfg or MlpTrainConfig()
    seeds = [base_seed + i for i in range(n_members)]
    members, _ = mlp_train_many(x, y, layer_dims, head, cfg, seeds)
    return EnsembleModel(members=tuple(members))


def _row_entropies(probs: np.ndarray) -> np.ndarray:
    logp = np.where(probs > 0.0, np.log(np.maximum(probs, 1e-300)), 0.0)
    return -np.sum(probs * logp, axis=1)


def ensemble_scores(ensemble: EnsembleModel, inputs):
    """(epistemic, aleatoric) per input from member disagreement.

    Classification: epistemic is the mutual information between the
    prediction and the member choice, H(mean p) - mean H(p); aleatoric is
    the mean member entropy, so the two add up to the entropy of the
    averaged predictive.  Regression: epistemic is the variance of the
    member means; aleatoric is zero (members are deterministic point
    predictors).
    """
    if len(ensemble.members) < 2:
        raise ValueError("ensemble needs at least 2 members")
    head = ensemble.members[0].head
    if head == CLASSIFICATION:
        probs = np.stack([mlp_predict(m, inputs) for m in ensemble.members])
        mean_probs = probs.mean(axis=0)
        total = _row_entropies(mean_probs)
        aleatoric = np.mean([_row_entropies(p) for p in probs], axis=0)
        return total - aleatoric, aleatoric
    preds = np.stack([mlp_predict(m, inputs)[:, 0] for m in ensemble.members])
    return preds.var(axis=0), np.zeros(preds.shape[1])


@dataclass
class RegressionStudy:
    """Everything the toy regression pipeline produces for one seed."""

    spec: ToyRegressionSpec
    train_x: np.ndarray
    train_y: np.ndarray
    model: MlpModel
    mlp_losses: np.ndarray
    flow: ConditionalFlow
    flow_log: FlowTrainLog
    prior: UniformPrior
    grid: SupportGrid
    pca: PcaModel | None
    eval_x: np.ndarray
    predictions: np.ndarray
    scores: UncertaintyScores
    bands: list[ConfidenceRegion]
    band_mass: float
    ensemble: EnsembleModel | None = None
    ensemble_epistemic: np.ndarray | None = None

    def gap_mask(self) -> np.ndarray:
        lo, hi = self.spec.gap
        return (self.eval_x > lo) & (self.eval_x < hi)

    def train_region_mask(self) -> np.ndarray:
        inside = (self.eval_x >= self.spec.x_lo) & (self.eval_x <= self.spec.x_hi)
        return inside & ~self.gap_mask()

    def latents_for(self, x) -> np.ndarray:
        z = latent_extract(self.model, self.model.n_hidden - 1, np.asarray(x)[:, None]).data
        if self.pca is not None:
            z = pca_transform(self.pca, z)
        return z


REGRESSION_MLP_DIMS = (1, 50, 50, 50, 50, 1)


def run_regression_study(
    spec: ToyRegressionSpec | None = None,
    eval_points: int = 201,
    band_mass: float = 0.2,
    prior_lo: float = -10.0,
    prior_hi: float = 10.0,
    grid_points: int = 1000,
    pca_dim: int | None = None,
    mlp_cfg: MlpTrainConfig | None = None,
    flow_cfg: FlowTrainConfig | None = None,
    flow_arch: FlowArchitecture | None = None,
    with_ensemble: bool = False,
    n_ensemble: int = 10,
    ensemble_cfg: MlpTrainConfig | None = None,
) -> RegressionStudy:
    """Full toy regression pipeline.

    Trains the regressor on the gapped sinusoid, fits a conditional flow on
    penultimate-layer latents conditioned on the network's own predictions,
    assumes a uniform output prior, and scores a dense x grid with both
    uncertainties plus a predictive confidence band.
    """
    spec = spec or ToyRegressionSpec()
    train_x, train_y = gen_regression_data(spec)

    mlp_cfg = mlp_cfg or MlpTrainConfig(seed=spec.seed)
    model, losses = mlp_train(train_x, train_y, REGRESSION_MLP_DIMS, REGRESSION, mlp_cfg)

    train_latents = latent_extract(model, model.n_hidden - 1, train_x, source="toy-train").data
    pca = None
    if pca_dim is not None:
        pca = pca_fit(train_latents, pca_dim)
        train_latents = pca_transform(pca, train_latents)
    train_preds = mlp_predict(model, train_x)[:, 0]

    # full batch; the modest epoch budget keeps the conditioning soft so the
    # posterior over outputs stays wider than the regressor's error
    flow_cfg = flow_cfg or FlowTrainConfig(
        batch_size=spec.n_train, max_epochs=40, seed=spec.seed
    )
    flow, flow_log = flow_train(train_latents, train_preds, flow_cfg, arch=flow_arch)

    prior = UniformPrior(prior_lo, prior_hi)
    grid = SupportGrid.from_range(prior_lo, prior_hi, grid_points)

    eval_x = np.linspace(spec.x_lo, spec.x_hi, eval_points)
    eval_latents = latent_extract(model, model.n_hidden - 1, eval_x[:, None]).data
    if pca is not None:
        eval_latents = pca_transform(pca, eval_latents)
    predictions = mlp_predict(model, eval_x[:, None])[:, 0]
    scores = score_regression(flow, prior, grid, eval_latents, keep_posteriors=True)

    bands = []
    for i in range(eval_x.size):
        post = RegressionPosterior(
            grid=grid, density=scores.posterior[i], log_marginal=-scores.epistemic[i]
        )
        bands.append(confidence_region(post, float(predictions[i]), band_mass))

    ensemble = None
    ens_epi = None
    if with_ensemble:
        ensemble_cfg = ensemble_cfg or MlpTrainConfig(max_epochs=600, seed=spec.seed)
        ensemble = train_ensemble(
            train_x, train_y, REGRESSION_MLP_DIMS, REGRESSION,
            ensemble_cfg, n_members=n_ensemble, base_seed=spec.seed * 1000 + 1,
        )
        ens_epi, _ = ensemble_scores(ensemble, eval_x[:, None])

    return RegressionStudy(
        spec=spec,
        train_x=train_x,
        train_y=train_y,
        model=model,
        mlp_losses=losses,
        flow=flow,
        flow_log=flow_log,
        prior=prior,
        grid=grid,
        pca=pca,
        eval_x=eval_x,
        predictions=predictions,
        scores=scores,
        bands=bands,
        band_mass=band_mass,
        ensemble=ensemble,
        ensemble_epistemic=ens_epi,
    )


@dataclass
class ClassificationStudy:
    """Artifacts of the toy classification pipeline for one seed."""

    spec: ToyClassificationSpec
    model: MlpModel
    density: ClassConditionalGmm
    prior: CategoricalPrior
    pca: PcaModel | None
    latent_layer: int
    train_x: np.ndarray
    train_labels: np.ndarray
    test_x: np.ndarray
    test_labels: np.ndarray
    test_scores: UncertaintyScores
    test_predictions: np.ndarray

    def latents_for(self, x) -> np.ndarray:
        z = latent_extract(self.model, self.latent_layer, x).data
        if self.pca is not None:
            z = pca_transform(self.pca, z)
        return z

    def score_inputs(self, x) -> UncertaintyScores:
        return score_classification(self.density, self.prior, self.latents_for(x))


CLASSIFICATION_MLP_HIDDEN = (50, 50)


def run_classification_study(
    spec: ToyClassificationSpec | None = None,
    em_opts: EmOptions | None = None,
    latent_layer: int = 0,
    pca_dim: int | None = None,
    mlp_cfg: MlpTrainConfig | None = None,
) -> ClassificationStudy:
    """Full toy classification pipeline.

    Trains a small classifier on the blobs, fits one GMM per *predicted*
    class on hidden-layer latents, estimates the class prior by counting
    the predicted labels, and scores a held-out test set.

    ``latent_layer`` defaults to the first hidden layer: shallow-layer
    densities give the most conservative epistemic estimates and the
    strongest OOD separation, while deeper layers trade that for slightly
    better-calibrated aleatoric scores.
    """
    spec = spec or ToyClassificationSpec()
    train_x, train_labels = gen_classification_data(spec)
    test_x, test_labels = gen_classification_data(spec, seed_offset=1)

    dims = (2, *CLASSIFICATION_MLP_HIDDEN, spec.n_classes)
    mlp_cfg = mlp_cfg or MlpTrainConfig(max_epochs=800, seed=spec.seed)
    model, _ = mlp_train(train_x, train_labels, dims, CLASSIFICATION, mlp_cfg)

    latents = latent_extract(model, latent_layer, train_x, source="toy-train").data
    pca = None
    if pca_dim is not None:
        pca = pca_fit(latents, pca_dim)
        latents = pca_transform(pca, latents)
    predicted = mlp_predict(model, train_x).argmax(axis=1)

    em_opts = em_opts or EmOptions(n_components=20, cov_reg=1e-4, seed=spec.seed)
    density = fit_class_conditional(latents, predicted, em_opts,
                                    classes=range(spec.n_classes))
    prior = fit_categorical(predicted, classes=range(spec.n_classes))

    study = ClassificationStudy(
        spec=spec,
        model=model,
        density=density,
        prior=prior,
        pca=pca,
        latent_layer=latent_layer,
        train_x=train_x,
        train_labels=train_labels,
        test_x=test_x,
        test_labels=test_labels,
        test_scores=UncertaintyScores(np.empty(0), np.empty(0)),
        test_predictions=np.empty(0),
    )
    study.test_scores = study.score_inputs(test_x)
    study.test_predictions = mlp_predict(model, test_x).argmax(axis=1)
    return study
