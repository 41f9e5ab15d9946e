"""Batch command-line surface.

Commands: ``fit`` (estimate density + prior from feature/prediction files),
``score`` (epistemic/aleatoric CSV for new features), ``eval`` (ranking and
calibration metrics), ``toy`` (self-contained desk-scale experiments), and
``pca`` (standalone dimensionality reduction).

Exit codes: 0 success, 2 usage error, 3 data error.  ``LUQ_THREADS`` caps
internal parallelism (applied to the BLAS thread pools; the toolkit's own
code is single-threaded and deterministic).
"""

from __future__ import annotations

import os
import sys


def _apply_thread_cap():
    cap = os.environ.get("LUQ_THREADS")
    if cap:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                    "NUMEXPR_NUM_THREADS"):
            os.environ.setdefault(var, cap)


_apply_thread_cap()

import argparse

import numpy as np

from . import fileio
from .engine import SupportGrid, score_classification, score_regression
from .errors import LuqError
from .flow import FlowArchitecture, FlowTrainConfig, flow_train
from .gmm import EmOptions, fit_class_conditional
from .linalg import pca_fit, pca_transform
from .metrics import auroc, average_precision, calibration_curve, fpr_at_tpr, rmse_below_uncertainty
from .mlp import mlp_predict
from .priors import (
    BetaPrimePrior,
    CategoricalPrior,
    UniformPrior,
    betaprime_fit_mom,
    fit_categorical,
    fit_histogram,
)
from .toy import (
    ToyClassificationSpec,
    ToyRegressionSpec,
    gen_ood_data,
    perturb,
    run_classification_study,
    run_regression_study,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3


class UsageError(Exception):
    """Bad flag combination or value; maps to exit code 2."""


def _emit(key, value):
    if isinstance(value, float):
        value = fileio.format_float(value)
    print(f"{key}={value}")


def _parse_prior_spec(spec: str, predictions: np.ndarray | None):
    """Prior from a CLI spec like ``categorical``, ``uniform:-10:10``,
    ``betaprime[:alpha:beta]``, or ``histogram[:bins]``."""
    parts = spec.split(":")
    kind = parts[0]
    try:
        if kind == "categorical":
            if predictions is None:
                raise UsageError("categorical prior needs a predictions file")
            return fit_categorical(predictions.astype(np.int64))
        if kind == "uniform":
            if len(parts) != 3:
                raise UsageError("uniform prior spec is uniform:LO:HI")
            return UniformPrior(float(parts[1]), float(parts[2]))
        if kind == "betaprime":
            if len(parts) == 3:
                return BetaPrimePrior(float(parts[1]), float(parts[2]))
            if predictions is None:
                raise UsageError("betaprime fit needs a predictions file")
            return betaprime_fit_mom(predictions)
        if kind == "histogram":
            if predictions is None:
                raise UsageError("histogram prior needs a predictions file")
            bins = int(parts[1]) if len(parts) > 1 else 32
            return fit_histogram(predictions, bins=bins)
    except ValueError as exc:
        raise UsageError(f"bad prior spec {spec!r}: {exc}") from exc
    raise UsageError(f"unknown prior kind {kind!r}")


def _parse_range(text: str, flag: str):
    parts = text.split(":")
    if len(parts) != 2:
        raise UsageError(f"{flag} expects LO:HI")
    try:
        lo, hi = float(parts[0]), float(parts[1])
    except ValueError as exc:
        raise UsageError(f"{flag}: {exc}") from exc
    if not lo < hi:
        raise UsageError(f"{flag}: need LO < HI")
    return lo, hi


# --- fit -------------------------------------------------------------------


def cmd_fit(args) -> int:
    features = fileio.read_features(args.features)
    x = features.data
    predictions = fileio.read_values(args.predictions)
    if len(predictions) != x.shape[0]:
        raise fileio.DataFormatError(
            f"{args.predictions}: {len(predictions)} predictions for "
            f"{x.shape[0]} feature rows"
        )

    pca = None
    if args.pca is not None:
        pca = pca_fit(x, args.pca, whiten=args.whiten)
        x = pca_transform(pca, x)
        _emit("pca_dim", args.pca)

    _emit("n_rows", x.shape[0])
    _emit("dim", x.shape[1])

    if args.model == "gmm":
        labels = predictions.astype(np.int64)
        opts = EmOptions(
            n_components=args.components,
            max_iter=args.max_iter,
            tol=args.tol,
            cov_reg=args.cov_reg,
            covariance_mode=(
                "tied_across_components" if args.covariance == "tied"
                else "full_per_component"
            ),
            seed=args.seed,
        )
        density = fit_class_conditional(x, labels, opts)
        prior = _parse_prior_spec(args.prior or "categorical", predictions)
        for c in density.classes:
            _emit(f"class_{c}_count", int(np.sum(labels == c)))
            _emit(f"class_{c}_final_ll", density.per_class[c].em_log[-1])
        bundle = fileio.ModelBundle(prior=prior, class_gmms=density, pca=pca)
    else:
        cfg = FlowTrainConfig(
            learning_rate=args.learning_rate,
            weight_decay=args.weight_decay,
            batch_size=args.batch_size,
            max_epochs=args.max_epochs,
            patience=args.patience,
            val_fraction=args.val_fraction,
            seed=args.seed,
        )
        arch = FlowArchitecture(
            n_layers=args.flow_layers,
            hidden=(args.flow_hidden, args.flow_hidden),
        )
        flow, log = flow_train(x, predictions, cfg, arch=arch)
        prior = _parse_prior_spec(args.prior or "uniform:-10:10", predictions)
        _emit("epochs_run", len(log.train_nll))
        _emit("best_epoch", log.best_epoch)
        _emit("best_val_nll", log.best_val_nll)
        _emit("final_train_nll", float(log.train_nll[-1]))
        bundle = fileio.ModelBundle(prior=prior, flow=flow, pca=pca)

    fileio.write_model(args.output, bundle)
    _emit("model_file", args.output)
    return EXIT_OK


# --- score -----------------------------------------------------------------


def _grid_for(bundle: fileio.ModelBundle, args) -> SupportGrid:
    if args.grid_range:
        lo, hi = _parse_range(args.grid_range, "--grid-range")
    elif isinstance(bundle.prior, UniformPrior):
        lo, hi = bundle.prior.lo, bundle.prior.hi
    elif hasattr(bundle.prior, "edges"):
        lo, hi = float(bundle.prior.edges[0]), float(bundle.prior.edges[-1])
    else:
        raise UsageError(
            "the prior has unbounded support; pass --grid-range LO:HI"
        )
    return SupportGrid.from_range(lo, hi, args.grid)


def cmd_score(args) -> int:
    bundle = fileio.read_model(args.model)
    features = fileio.read_features(args.features)
    x = features.data
    if bundle.pca is not None and x.shape[1] == bundle.pca.input_dim:
        x = pca_transform(bundle.pca, x)
    if x.shape[1] != bundle.feature_dim:
        raise fileio.DataFormatError(
            f"{args.features}: feature dim {x.shape[1]} does not match "
            f"model dim {bundle.feature_dim}"
        )
    if bundle.class_gmms is not None:
        if not isinstance(bundle.prior, CategoricalPrior):
            raise UsageError("class-conditional GMM model needs a categorical prior")
        scores = score_classification(bundle.class_gmms, bundle.prior, x)
    else:
        grid = _grid_for(bundle, args)
        scores = score_regression(bundle.flow, bundle.prior, grid, x)
    fileio.write_scores_csv(args.output, scores.epistemic, scores.aleatoric)
    _emit("rows_scored", x.shape[0])
    _emit("scores_file", args.output)
    return EXIT_OK


# --- eval ------------------------------------------------------------------


def cmd_eval(args) -> int:
    if args.mode == "ood":
        if args.plot:
            raise UsageError("--plot applies to calibration and rmse modes")
        cols = fileio.read_csv_columns(args.input, ["score", "label"])
        scores, labels = cols["score"], cols["label"].astype(int)
        values = {
            "auroc": auroc(scores, labels),
            "ap": average_precision(scores, labels),
            "fpr95": fpr_at_tpr(scores, labels, 0.95),
        }
        fileio.write_csv(args.output, list(values),
                         [np.array([v]) for v in values.values()])
        for k, v in values.items():
            _emit(k, v)
    elif args.mode == "calibration":
        cols = fileio.read_csv_columns(args.input, ["uncertainty", "correct"])
        curve = calibration_curve(cols["uncertainty"], cols["correct"],
                                  percentile_step=args.percentile_step)
        fileio.write_csv(args.output, ["percentile", "accuracy"],
                         [curve.percentiles, curve.accuracies])
        if args.plot:
            from .plots import svg_line_plot

            svg_line_plot(args.plot, curve.percentiles,
                          [("accuracy", curve.accuracies)],
                          title="calibration", x_label="uncertainty percentile",
                          y_label="accuracy")
            _emit("plot_file", args.plot)
        _emit("final_accuracy", float(curve.accuracies[-1]))
    else:  # rmse
        cols = fileio.read_csv_columns(args.input, ["error", "uncertainty"])
        if args.thresholds:
            thresholds = np.array([float(t) for t in args.thresholds.split(",")])
        else:
            thresholds = np.percentile(cols["uncertainty"], np.arange(5, 101, 5))
        values = rmse_below_uncertainty(cols["error"], cols["uncertainty"], thresholds)
        fileio.write_csv(args.output, ["threshold", "rmse"], [thresholds, values])
        if args.plot:
            from .plots import svg_line_plot

            svg_line_plot(args.plot, thresholds, [("rmse", values)],
                          title="error below uncertainty",
                          x_label="uncertainty threshold", y_label="rmse")
            _emit("plot_file", args.plot)
    _emit("metrics_file", args.output)
    return EXIT_OK


# --- toy -------------------------------------------------------------------


def _toy_regression(args, out) -> int:
    spec = ToyRegressionSpec(
        n_train=args.n_train,
        gap=_parse_range(args.gap, "--gap"),
        noise_sigma=args.noise,
        seed=args.seed,
    )
    study = run_regression_study(
        spec,
        eval_points=args.eval_points,
        band_mass=args.mass,
        grid_points=args.grid,
        with_ensemble=args.ensemble,
    )
    fileio.write_csv(out / "train_data.csv", ["x", "y"],
                     [study.train_x[:, 0], study.train_y])
    fileio.write_csv(out / "mlp_loss.csv",
                     ["epoch", "loss"],
                     [np.arange(len(study.mlp_losses)), study.mlp_losses])
    fileio.write_matrix(out / "train_latents.luq",
                        study.latents_for(study.train_x[:, 0]))
    train_preds = mlp_predict(study.model, study.train_x)[:, 0]
    fileio.write_matrix(out / "train_predictions.luq", train_preds[:, None])
    fileio.write_model(out / "model.luqm",
                       fileio.ModelBundle(prior=study.prior, flow=study.flow,
                                          pca=study.pca))
    fileio.write_scores_csv(out / "scores.csv", study.scores.epistemic,
                            study.scores.aleatoric)
    lower = np.array([b.lower for b in study.bands])
    upper = np.array([b.upper for b in study.bands])
    fileio.write_csv(
        out / "curve.csv",
        ["x", "prediction", "band_lower", "band_upper", "epistemic_nats",
         "aleatoric_nats"],
        [study.eval_x, study.predictions, lower, upper,
         study.scores.epistemic, study.scores.aleatoric],
    )
    if study.ensemble_epistemic is not None:
        fileio.write_csv(out / "ensemble.csv", ["x", "epistemic_variance"],
                         [study.eval_x, study.ensemble_epistemic])
    if args.plot:
        from .plots import svg_line_plot

        svg_line_plot(out / "prediction_band.svg", study.eval_x,
                      [("prediction", study.predictions)],
                      band=(lower, upper), title="prediction with confidence band",
                      x_label="x", y_label="y")
        svg_line_plot(out / "epistemic.svg", study.eval_x,
                      [("epistemic", study.scores.epistemic)],
                      title="epistemic uncertainty", x_label="x", y_label="nats")
        _emit("plots", str(out / "prediction_band.svg"))
    gap = study.gap_mask()
    train_region = study.train_region_mask()
    _emit("mlp_epochs", len(study.mlp_losses))
    _emit("flow_best_epoch", study.flow_log.best_epoch)
    _emit("epistemic_gap_mean", float(study.scores.epistemic[gap].mean()))
    _emit("epistemic_train_mean", float(study.scores.epistemic[train_region].mean()))
    return EXIT_OK


def _toy_classification(args, out) -> int:
    spec = ToyClassificationSpec(
        sigma=args.cluster_sigma,
        n_per_class=args.per_class,
        seed=args.seed,
    )
    study = run_classification_study(
        spec, em_opts=EmOptions(n_components=args.components, cov_reg=args.cov_reg,
                                seed=args.seed),
    )
    fileio.write_csv(out / "train_data.csv", ["x0", "x1", "label"],
                     [study.train_x[:, 0], study.train_x[:, 1], study.train_labels])
    fileio.write_matrix(out / "train_latents.luq", study.latents_for(study.train_x))
    predicted = mlp_predict(study.model, study.train_x).argmax(axis=1)
    fileio.write_matrix(out / "train_predicted_labels.luq",
                        predicted.astype(np.float64)[:, None])
    fileio.write_model(out / "model.luqm",
                       fileio.ModelBundle(prior=study.prior,
                                          class_gmms=study.density, pca=study.pca))
    fileio.write_scores_csv(out / "scores.csv", study.test_scores.epistemic,
                            study.test_scores.aleatoric)

    ood_x, _ = gen_ood_data(spec, seed_offset=2)
    ood_scores = study.score_inputs(ood_x)
    fileio.write_scores_csv(out / "ood_scores.csv", ood_scores.epistemic,
                            ood_scores.aleatoric)
    labels = np.concatenate([np.zeros(len(study.test_x)), np.ones(len(ood_x))])
    pooled = np.concatenate([study.test_scores.epistemic, ood_scores.epistemic])
    values = {
        "auroc": auroc(pooled, labels),
        "ap": average_precision(pooled, labels),
        "fpr95": fpr_at_tpr(pooled, labels, 0.95),
    }
    fileio.write_csv(out / "ood_metrics.csv", list(values),
                     [np.array([v]) for v in values.values()])
    correct = (study.test_predictions == study.test_labels).astype(float)
    curve = calibration_curve(study.test_scores.aleatoric, correct)
    fileio.write_csv(out / "calibration.csv", ["percentile", "accuracy"],
                     [curve.percentiles, curve.accuracies])
    if args.plot:
        from .plots import svg_line_plot

        svg_line_plot(out / "calibration.svg", curve.percentiles,
                      [("accuracy", curve.accuracies)], title="calibration",
                      x_label="aleatoric percentile", y_label="accuracy")
        _emit("plots", str(out / "calibration.svg"))
    for k, v in values.items():
        _emit(f"ood_{k}", v)
    _emit("test_accuracy", float(correct.mean()))
    return EXIT_OK


def cmd_toy(args) -> int:
    from pathlib import Path

    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write_probe"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise fileio.DataFormatError(f"{out}: not writable: {exc}") from exc
    if args.kind == "regression":
        return _toy_regression(args, out)
    return _toy_classification(args, out)


# --- pca -------------------------------------------------------------------


def cmd_pca(args) -> int:
    features = fileio.read_features(args.features)
    model = pca_fit(features.data, args.out_dim, whiten=args.whiten)
    transformed = pca_transform(model, features.data)
    fileio.write_matrix(args.output, transformed)
    total = float(np.sum(model.eigenvalues))
    _emit("input_dim", model.input_dim)
    _emit("out_dim", model.out_dim)
    _emit("eigenvalue_sum", total)
    _emit("top_eigenvalue", float(model.eigenvalues[0]))
    _emit("output_file", args.output)
    return EXIT_OK


# --- parser ----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="luq",
        description="Uncertainty from the density of latent representations.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_fit = sub.add_parser("fit", help="fit a density model and output prior")
    p_fit.add_argument("--features", required=True)
    p_fit.add_argument("--predictions", required=True)
    p_fit.add_argument("--model", choices=["gmm", "flow"], required=True)
    p_fit.add_argument("--output", required=True)
    p_fit.add_argument("--prior", default=None,
                       help="categorical | uniform:LO:HI | betaprime[:A:B] | histogram[:BINS]")
    p_fit.add_argument("--components", type=int, default=1)
    p_fit.add_argument("--cov-reg", type=float, default=1e-6)
    p_fit.add_argument("--covariance", choices=["full", "tied"], default="full")
    p_fit.add_argument("--max-iter", type=int, default=200)
    p_fit.add_argument("--tol", type=float, default=1e-6)
    p_fit.add_argument("--pca", type=int, default=None)
    p_fit.add_argument("--whiten", action="store_true")
    p_fit.add_argument("--learning-rate", type=float, default=1e-3)
    p_fit.add_argument("--weight-decay", type=float, default=1e-5)
    p_fit.add_argument("--batch-size", type=int, default=128)
    p_fit.add_argument("--max-epochs", type=int, default=500)
    p_fit.add_argument("--patience", type=int, default=20)
    p_fit.add_argument("--val-fraction", type=float, default=0.2)
    p_fit.add_argument("--flow-layers", type=int, default=3)
    p_fit.add_argument("--flow-hidden", type=int, default=64)
    p_fit.add_argument("--seed", type=int, default=0)
    p_fit.add_argument("--config", default=None)
    p_fit.set_defaults(func=cmd_fit)

    p_score = sub.add_parser("score", help="score features with a fitted model")
    p_score.add_argument("--model", required=True)
    p_score.add_argument("--features", required=True)
    p_score.add_argument("--output", required=True)
    p_score.add_argument("--grid", type=int, default=1000)
    p_score.add_argument("--grid-range", default=None)
    p_score.add_argument("--config", default=None)
    p_score.set_defaults(func=cmd_score)

    p_eval = sub.add_parser("eval", help="threshold-free metrics over a scores CSV")
    p_eval.add_argument("--mode", choices=["ood", "calibration", "rmse"], required=True)
    p_eval.add_argument("--input", required=True)
    p_eval.add_argument("--output", required=True)
    p_eval.add_argument("--plot", default=None)
    p_eval.add_argument("--percentile-step", type=float, default=5.0)
    p_eval.add_argument("--thresholds", default=None)
    p_eval.add_argument("--config", default=None)
    p_eval.set_defaults(func=cmd_eval)

    p_toy = sub.add_parser("toy", help="run a self-contained toy experiment")
    p_toy.add_argument("kind", choices=["regression", "classification"])
    p_toy.add_argument("--out", required=True)
    p_toy.add_argument("--seed", type=int, default=0)
    p_toy.add_argument("--mass", type=float, default=0.2)
    p_toy.add_argument("--grid", type=int, default=1000)
    p_toy.add_argument("--n-train", type=int, default=750)
    p_toy.add_argument("--gap", default="-0.25:0.25")
    p_toy.add_argument("--noise", type=float, default=0.0)
    p_toy.add_argument("--eval-points", type=int, default=201)
    p_toy.add_argument("--ensemble", action="store_true")
    p_toy.add_argument("--components", type=int, default=20)
    p_toy.add_argument("--cov-reg", type=float, default=1e-4)
    p_toy.add_argument("--per-class", type=int, default=500)
    p_toy.add_argument("--cluster-sigma", type=float, default=0.4)
    p_toy.add_argument("--plot", action="store_true")
    p_toy.add_argument("--config", default=None)
    p_toy.set_defaults(func=cmd_toy)

    p_pca = sub.add_parser("pca", help="fit PCA and write transformed features")
    p_pca.add_argument("--features", required=True)
    p_pca.add_argument("--out-dim", type=int, required=True)
    p_pca.add_argument("--output", required=True)
    p_pca.add_argument("--whiten", action="store_true")
    p_pca.add_argument("--config", default=None)
    p_pca.set_defaults(func=cmd_pca)

    return parser


def _merge_config(argv: list[str], parser: argparse.ArgumentParser) -> list[str]:
    """Inject config-file entries as flags ahead of the explicit CLI flags,
    so explicit flags win (argparse keeps the last occurrence).

    Config keys are the long flag names without dashes; unknown keys are
    rejected with their line number.
    """
    if "--config" not in argv:
        return argv
    idx = argv.index("--config")
    if idx + 1 >= len(argv):
        return argv
    path = argv[idx + 1]
    sub_action = next(
        a for a in parser._actions if isinstance(a, argparse._SubParsersAction)
    )
    cmd_idx = next((i for i, tok in enumerate(argv) if tok in sub_action.choices), None)
    if cmd_idx is None:
        return argv
    subparser = sub_action.choices[argv[cmd_idx]]
    insert = cmd_idx + 1
    while insert < len(argv) and not argv[insert].startswith("-"):
        insert += 1  # keep positionals (e.g. the toy kind) in front
    known_flags = {}
    for action in subparser._actions:
        for opt in action.option_strings:
            if opt.startswith("--"):
                known_flags[opt[2:]] = action
    injected = []
    for lineno, key, value in fileio.parse_config(path):
        if key not in known_flags:
            raise fileio.DataFormatError(f"{path}: line {lineno}: unknown key {key!r}")
        action = known_flags[key]
        if isinstance(action, argparse._StoreTrueAction):
            if value.lower() in ("1", "true", "yes", "on"):
                injected.append(f"--{key}")
        else:
            injected.extend([f"--{key}", value])
    return argv[:insert] + injected + argv[insert:]


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        argv = _merge_config(argv, parser)
    except LuqError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else 0
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except LuqError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
