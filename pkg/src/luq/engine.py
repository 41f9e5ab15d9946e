"""Core uncertainty scoring.

Epistemic uncertainty is the surprisal -log p(z) of a latent vector under
the training-set latent density, obtained by marginalizing the
output-conditional density over the output prior (summation for classes,
trapezoid quadrature on a support grid for scalar outputs).  Aleatoric
uncertainty is the entropy of the Bayes posterior over outputs given z.
All mixing of log-densities happens in log space with max-shifted sums.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import GridTooCoarseWarning, MassUnreachableError, MissingClassDensityError
from .flow import ConditionalFlow, flow_log_prob
from .gmm import ClassConditionalGmm, gmm_log_prob
from .linalg import logsumexp
from .priors import CategoricalPrior, OutputPrior


@dataclass(frozen=True)
class SupportGrid:
    """Equidistant output values used for the regression marginalization."""

    points: np.ndarray
    spacing: float

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 1 or pts.size < 2:
            raise ValueError("support grid needs at least 2 points")
        diffs = np.diff(pts)
        if np.any(diffs <= 0):
            raise ValueError("support grid must be strictly increasing")
        if np.abs(diffs - self.spacing).max() > 1e-12 * max(1.0, abs(self.spacing)):
            raise ValueError("support grid must be equidistant")
        object.__setattr__(self, "points", pts)

    @classmethod
    def from_range(cls, lo: float, hi: float, n: int) -> "SupportGrid":
        if not lo < hi:
            raise ValueError("need lo < hi")
        pts = np.linspace(lo, hi, n)
        return cls(points=pts, spacing=(hi - lo) / (n - 1))

    def trapezoid_weights(self) -> np.ndarray:
        w = np.full(self.points.size, self.spacing)
        w[0] = w[-1] = 0.5 * self.spacing
        return w

    def refined(self) -> "SupportGrid":
        """Same range at half the spacing (keeps the original points)."""
        return SupportGrid.from_range(
            float(self.points[0]), float(self.points[-1]), 2 * self.points.size - 1
        )


@dataclass(frozen=True)
class ConfidenceRegion:
    lower: float
    upper: float
    mass: float


@dataclass(frozen=True)
class UncertaintyScores:
    """Per-sample (epistemic nats, aleatoric nats) plus the posterior the
    aleatoric entropy was computed from."""

    epistemic: np.ndarray
    aleatoric: np.ndarray
    posterior: np.ndarray | None = None

    def __post_init__(self):
        if len(self.epistemic) != len(self.aleatoric):
            raise ValueError("score vectors must have equal length")


def _posterior_scores(log_joint: np.ndarray):
    """Scores from a (n, K) matrix of log p(z|k) + log p(k).

    Returns (-log marginal, posterior entropy, posterior) per row.
    """
    log_mass = logsumexp(log_joint, axis=1)
    log_post = log_joint - log_mass[:, None]
    post = np.exp(log_post)
    with np.errstate(invalid="ignore"):
        ent = -np.sum(np.where(post > 0.0, post * log_post, 0.0), axis=1) + 0.0
    return -log_mass, ent, post


def class_log_joint(d: ClassConditionalGmm, prior: CategoricalPrior, z) -> np.ndarray:
    """(n, K) matrix of log p(z|k) + log p(k) over the prior's classes."""
    missing = [c for c in prior.classes if c not in d.per_class]
    if missing:
        raise MissingClassDensityError(f"no density for classes {missing}")
    z = np.asarray(z, dtype=np.float64)
    if z.ndim == 1:
        z = z[None, :]
    cols = [
        gmm_log_prob(d.per_class[c], z) + prior.log_probs[i]
        for i, c in enumerate(prior.classes)
    ]
    return np.stack(cols, axis=1)


def epistemic_classification(d: ClassConditionalGmm, prior: CategoricalPrior, z):
    """-log p(z) by summing the class-conditional densities against the
    class prior."""
    single = np.asarray(z).ndim == 1
    epi, _, _ = _posterior_scores(class_log_joint(d, prior, z))
    return float(epi[0]) if single else epi


def aleatoric_classification(d: ClassConditionalGmm, prior: CategoricalPrior, z):
    """Entropy of the Bayes posterior over classes, plus that posterior."""
    single = np.asarray(z).ndim == 1
    _, ent, post = _posterior_scores(class_log_joint(d, prior, z))
    if single:
        return float(ent[0]), post[0]
    return ent, post


def score_classification(d: ClassConditionalGmm, prior: CategoricalPrior, z) -> UncertaintyScores:
    """Both classification scores for a batch, sharing one density pass."""
    epi, ent, post = _posterior_scores(class_log_joint(d, prior, z))
    return UncertaintyScores(epistemic=epi, aleatoric=ent, posterior=post)


def _grid_log_prior(prior: OutputPrior, grid: SupportGrid) -> np.ndarray:
    return np.array([prior.log_pdf(float(y)) for y in grid.points])


def _regression_log_joint(flow: ConditionalFlow, grid: SupportGrid, z,
                          log_prior_grid: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64).ravel()
    g = grid.points.size
    z_tiled = np.broadcast_to(z, (g, z.size))
    cond = grid.points[:, None]
    return flow_log_prob(flow, z_tiled, cond) + log_prior_grid


def _log_trapz(log_values: np.ndarray, grid: SupportGrid) -> float:
    """log of the trapezoid integral of exp(log_values) over the grid."""
    with np.errstate(divide="ignore"):
        log_w = np.log(grid.trapezoid_weights())
    return logsumexp(log_values + log_w)


def epistemic_regression(flow: ConditionalFlow, prior: OutputPrior, grid: SupportGrid,
                         z, self_check: bool = False) -> float:
    """-log p(z) by trapezoid quadrature of p(z|y) p(y) over the grid.

    The integrand is combined in log space via a max-shifted sum.  With
    ``self_check`` the quadrature is repeated at half the spacing and a
    GridTooCoarseWarning is emitted if the value moves by more than 1e-3.
    """
    log_prior_grid = _grid_log_prior(prior, grid)
    value = -_log_trapz(_regression_log_joint(flow, grid, z, log_prior_grid), grid)
    if self_check:
        fine = grid.refined()
        fine_value = -_log_trapz(
            _regression_log_joint(flow, fine, z, _grid_log_prior(prior, fine)), fine
        )
        if abs(fine_value - value) > 1e-3:
            warnings.warn(
                f"halving the grid spacing moved -log p(z) by "
                f"{abs(fine_value - value):.3e}",
                GridTooCoarseWarning,
            )
    return value


@dataclass(frozen=True)
class RegressionPosterior:
    """Bayes posterior density over the support grid for one latent vector.

    ``log_marginal`` records the pre-normalization quadrature mass
    log p(z); the stored density is renormalized so it integrates to 1 on
    the grid exactly.
    """

    grid: SupportGrid
    density: np.ndarray
    log_marginal: float

    def mean(self) -> float:
        w = self.grid.trapezoid_weights()
        return float(np.sum(w * self.density * self.grid.points))


def aleatoric_regression(flow: ConditionalFlow, prior: OutputPrior, grid: SupportGrid, z):
    """Differential entropy of the posterior over outputs, plus the
    posterior itself.

    The entropy of a density may be negative; it is reported as-is.
    """
    log_prior_grid = _grid_log_prior(prior, grid)
    log_joint = _regression_log_joint(flow, grid, z, log_prior_grid)
    log_mass = _log_trapz(log_joint, grid)
    log_q = log_joint - log_mass
    q = np.exp(log_q)
    w = grid.trapezoid_weights()
    with np.errstate(invalid="ignore"):
        ent = -float(np.sum(np.where(q > 0.0, w * q * log_q, 0.0)))
    return ent, RegressionPosterior(grid=grid, density=q, log_marginal=float(log_mass))


def score_regression(flow: ConditionalFlow, prior: OutputPrior, grid: SupportGrid,
                     z, keep_posteriors: bool = False) -> UncertaintyScores:
    """Both regression scores for a batch of latent vectors.

    One quadrature pass per row; pass ``keep_posteriors`` to retain the
    (n, grid) posterior densities.
    """
    z = np.asarray(z, dtype=np.float64)
    if z.ndim == 1:
        z = z[None, :]
    log_prior_grid = _grid_log_prior(prior, grid)
    w = grid.trapezoid_weights()
    epi = np.empty(z.shape[0])
    ale = np.empty(z.shape[0])
    post = np.empty((z.shape[0], grid.points.size)) if keep_posteriors else None
    for i in range(z.shape[0]):
        log_joint = _regression_log_joint(flow, grid, z[i], log_prior_grid)
        log_mass = _log_trapz(log_joint, grid)
        log_q = log_joint - log_mass
        q = np.exp(log_q)
        epi[i] = -log_mass
        with np.errstate(invalid="ignore"):
            ale[i] = -float(np.sum(np.where(q > 0.0, w * q * log_q, 0.0)))
        if post is not None:
            post[i] = q
    return UncertaintyScores(epistemic=epi, aleatoric=ale, posterior=post)


def confidence_region(posterior: RegressionPosterior, prediction: float,
                      mass: float) -> ConfidenceRegion:
    """Smallest symmetric-by-probability region around the prediction
    holding the target mass.

    Accumulates grid-point masses outward from the prediction, alternating
    one step in the positive and negative direction and skipping exhausted
    sides, until the accumulated probability reaches the target.
    """
    if not 0.0 < mass < 1.0:
        raise ValueError("mass must be in (0, 1)")
    pts = posterior.grid.points
    if not pts[0] <= prediction <= pts[-1]:
        raise ValueError(f"prediction {prediction} outside the grid range")
    pm = posterior.grid.trapezoid_weights() * posterior.density
    if pm.sum() < mass - 1e-12:
        raise MassUnreachableError(
            f"grid holds {pm.sum():.6f} probability, target is {mass}"
        )
    i0 = int(np.argmin(np.abs(pts - prediction)))
    left = right = i0
    acc = pm[i0]
    positive_turn = True
    while acc < mass - 1e-12:
        stepped = False
        for want_positive in (positive_turn, not positive_turn):
            if want_positive and right + 1 < pts.size:
                right += 1
                acc += pm[right]
                stepped = True
                break
            if not want_positive and left - 1 >= 0:
                left -= 1
                acc += pm[left]
                stepped = True
                break
        if not stepped:
            raise MassUnreachableError("both grid ends reached before the target mass")
        positive_turn = not positive_turn
    return ConfidenceRegion(
        lower=float(min(pts[left], prediction)),
        upper=float(max(pts[right], prediction)),
        mass=mass,
    )
