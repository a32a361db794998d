"""Command-line interface: ``generate``, ``train``, ``evaluate``, ``oracle``, ``sweep``.

Settings come from built-in defaults, then the command's section of an INI
file given by ``--config``, then command-line flags.  The effective settings
are written to ``config.ini`` in the output directory.

Exit codes: 0 success, 1 failed check, 2 invalid usage or input.
"""
from __future__ import annotations

import argparse
import configparser
import logging
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from . import fileio
from .core import LocalLoss, GroundTruthModel, ValidationError
from .estimators import EstimatorSpec, expomf_posteriors, ideal_loss
from .experiment import SweepConfig, run_sweep, summarize
from .metrics import ideal_dcg, metric_report, rank_labeled, split_validation
from .mf import ConfigurationError, TrainConfig, estimator_objective, grid_search, snips_objective, train
from .oracle import MIN_TRIALS, bias_variance_sweep, estimate_moments
from .propensity import estimate_popularity_propensity, rare_items
from .synth import SynthConfig, generate_base_matrices, make_ground_truth, sample_clicks

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
CLIP_GRID = (0.01, 0.02, 0.05, 0.1)

logger = logging.getLogger("unbiased_implicit")


class UsageError(Exception):
    pass


def _floats(text: str) -> tuple[float, ...]:
    values = tuple(float(v) for v in str(text).replace(",", " ").split())
    if not values:
        raise ValueError("expected a non-empty list of numbers")
    return values


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in _floats(text))


@dataclass(frozen=True)
class Option:
    flag: str
    type: Callable[[str], Any]
    default: Any
    help: str
    choices: Sequence[str] | None = None

    @property
    def dest(self) -> str:
        return self.flag.lstrip("-").replace("-", "_")


SHARED = [
    Option("--seed", int, 0, "random seed"),
    Option("--workers", int, 1, "worker processes for Monte-Carlo trials and sweep seeds"),
    Option("--out-dir", str, "out", "output directory"),
]

SYNTH = [
    Option("--m", int, 200, "number of users"),
    Option("--n", int, 300, "number of items"),
    Option("--rank", int, 5, "rank of the random base matrices"),
    Option("--epsilon", float, 5.0, "relevance offset: gamma = sigmoid(rating - epsilon)"),
    Option("--rating-trim", float, SynthConfig.rating_trim, "quantile mapped to ratings 1 and 5"),
    Option("--obs-logit-mean", float, SynthConfig.obs_logit_mean, "location of the observation base (logit scale)"),
    Option("--obs-logit-scale", float, SynthConfig.obs_logit_scale, "spread of the observation base (logit scale)"),
]

TRAINING = [
    Option("--loss", str, "squared", "local loss", ("squared", "log")),
    Option("--link", str, "", "link function (default: identity for squared, sigmoid for log)", ("", "sigmoid", "identity")),
    Option("--latent-dim", int, 5, "latent dimension K"),
    Option("--learning-rate", float, 0.05, "SGD step size"),
    Option("--l2", float, 0.01, "L2 regularization"),
    Option("--batch-size", int, 1024, "mini-batch size"),
    Option("--epochs", int, 100, "maximum number of epochs"),
    Option("--patience", int, 5, "epochs without improvement before stopping"),
]

COMMANDS: dict[str, list[Option]] = {
    "generate": SYNTH
    + [
        Option("--p", float, 1.0, "exposure skew: theta = observation ** p"),
        Option("--rating-base", str, "", "rating base matrix in [1, 5] (TSV); default: generated"),
        Option("--observation-base", str, "", "observation base matrix in (0, 1] (TSV); default: generated"),
    ],
    "train": TRAINING
    + [
        Option("--clicks", str, "", "training click log (TSV)"),
        Option("--estimator", str, "unbiased", "loss estimator", ("naive", "wmf", "expomf", "unbiased", "clipped")),
        Option("--c", float, 1.0, "WMF weight on clicks"),
        Option("--clip", float, -1.0, "clipping constant M (negative: grid search over 0.01..0.1)"),
        Option("--propensity", str, "", "propensity source for unbiased/clipped", ("", "popularity", "file", "oracle")),
        Option("--propensity-file", str, "", "propensity TSV for --propensity file"),
        Option("--gamma", str, "", "ground-truth gamma matrix (TSV)"),
        Option("--theta", str, "", "ground-truth theta matrix (TSV)"),
        Option("--eta", float, 0.5, "popularity exponent"),
        Option("--validation-fraction", float, 0.1, "share of clicks held out for early stopping"),
        Option("--tuning", str, "snips", "early-stopping objective", ("snips", "loss")),
    ],
    "evaluate": [
        Option("--model", str, "", "model checkpoint (.npz)"),
        Option("--labels", str, "", "test labels (TSV, click=0 rows are negatives)"),
        Option("--gamma", str, "", "ground-truth gamma matrix (TSV)"),
        Option("--clicks", str, "", "training click log, used to find rare items"),
        Option("--eta", float, 0.5, "popularity exponent for the rare-item split"),
        Option("--ks", _ints, (1, 3, 5), "cutoffs K"),
    ],
    "oracle": [
        Option("--gamma", str, "", "ground-truth gamma matrix (TSV); default: generated"),
        Option("--theta", str, "", "ground-truth theta matrix (TSV); default: generated"),
        Option("--predictions", str, "", "prediction matrix (TSV); default: uniform random"),
        Option("--m", int, 20, "users of the generated instance"),
        Option("--n", int, 30, "items of the generated instance"),
        Option("--p", float, 2.0, "exposure skew of the generated instance"),
        Option("--loss", str, "squared", "local loss", ("squared", "log")),
        Option("--trials", int, 50_000, "Monte-Carlo trials"),
        Option("--c", float, 3.0, "WMF weight on clicks"),
        Option("--clip", float, 0.2, "clipping constant for the single clipped check"),
        Option("--clip-values", _floats, (0.0, 0.05, 0.2, 0.5, 1.0), "clipping constants of the M sweep"),
        Option("--z-max", float, 4.0, "mean check tolerance in standard errors"),
        Option("--var-tol", float, 0.05, "relative variance tolerance"),
        Option("--variance-target", str, "exact", "variance reference", ("exact", "closed-form")),
        Option("--propensity-scale", float, 1.0, "multiply the propensities (misspecification test)"),
    ],
    "sweep": SYNTH
    + TRAINING
    + [
        Option("--p-values", _floats, (0.5, 1.0, 2.0, 3.0, 4.0), "exposure skews"),
        Option("--num-seeds", int, 10, "seeds seed, seed+1, ..."),
        Option("--max-k", int, 10, "largest DCG cutoff"),
    ],
}
# the sweep trains through a sigmoid link unless told otherwise
SWEEP_LINK_DEFAULT = "sigmoid"


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="unbiased-implicit", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, options in COMMANDS.items():
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="INI file; section [%s]" % name)
        for opt in SHARED + options:
            kw = {"dest": opt.dest, "default": None, "help": f"{opt.help} (default: {opt.default!r})"}
            if opt.choices:
                kw["choices"] = opt.choices
            p.add_argument(opt.flag, type=opt.type, **kw)
    return parser


def resolve(args: argparse.Namespace) -> dict[str, Any]:
    """Defaults, then the INI section, then explicit flags."""
    options = {o.dest: o for o in SHARED + COMMANDS[args.command]}
    settings = {dest: o.default for dest, o in options.items()}
    if args.command == "sweep":
        settings["link"] = SWEEP_LINK_DEFAULT
    if args.config:
        parser = configparser.ConfigParser()
        if not parser.read(args.config):
            raise UsageError(f"cannot read config file {args.config}")
        for section in ("common", args.command):
            if not parser.has_section(section):
                continue
            for key, raw in parser.items(section):
                dest = key.replace("-", "_")
                if dest not in options:
                    raise UsageError(f"{args.config}: unknown setting {key!r} in [{section}]")
                opt = options[dest]
                try:
                    value = opt.type(raw)
                except ValueError as exc:
                    raise UsageError(f"{args.config}: bad value for {key}: {exc}") from None
                if opt.choices and value not in opt.choices:
                    raise UsageError(f"{args.config}: {key} must be one of {list(opt.choices)}")
                settings[dest] = value
    for dest in options:
        value = getattr(args, dest, None)
        if value is not None:
            settings[dest] = value
    if settings["workers"] < 1:
        raise UsageError("--workers must be positive")
    return settings


def _echo_config(out_dir: Path, command: str, settings: dict) -> None:
    cp = configparser.ConfigParser()
    cp[command] = {k: _ini_value(v) for k, v in sorted(settings.items())}
    with (out_dir / "config.ini").open("w") as fh:
        cp.write(fh)


def _ini_value(value) -> str:
    if isinstance(value, (tuple, list)):
        return ",".join(fileio.format_value(v) for v in value)
    return fileio.format_value(value)


def _out_dir(settings) -> Path:
    out = Path(settings["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _require(settings, key: str, what: str) -> str:
    path = settings[key]
    if not path:
        raise UsageError(f"--{key.replace('_', '-')} ({what}) is required")
    if not Path(path).is_file():
        raise UsageError(f"{what} not found: {path}")
    return path


def _local(settings) -> LocalLoss:
    return LocalLoss(settings["loss"])


# generate -------------------------------------------------------------------


def cmd_generate(settings) -> int:
    config = SynthConfig(
        num_users=settings["m"],
        num_items=settings["n"],
        base_rank=settings["rank"],
        epsilon=settings["epsilon"],
        p=settings["p"],
        seed=settings["seed"],
        rating_trim=settings["rating_trim"],
        obs_logit_mean=settings["obs_logit_mean"],
        obs_logit_scale=settings["obs_logit_scale"],
    )
    if bool(settings["rating_base"]) != bool(settings["observation_base"]):
        raise UsageError("--rating-base and --observation-base must be given together")
    if settings["rating_base"]:
        rating_base = fileio.read_matrix(_require(settings, "rating_base", "rating base"))
        obs_base = fileio.read_matrix(_require(settings, "observation_base", "observation base"))
        if not np.all((rating_base >= 1) & (rating_base <= 5)):
            raise UsageError("rating base entries must lie in [1, 5]")
    else:
        rating_base, obs_base = generate_base_matrices(config)
    truth = make_ground_truth(rating_base, obs_base, config.epsilon, config.p)
    sample = sample_clicks(truth, config.seed)

    out = _out_dir(settings)
    fileio.write_matrix(out / "gamma.tsv", truth.gamma)
    fileio.write_matrix(out / "theta.tsv", truth.theta)
    fileio.write_clicks(out / "clicks.tsv", sample.dataset)
    # relevance draws as labels, for evaluating on realized relevance
    rel = sample.relevance
    with (out / "relevance.tsv").open("w") as fh:
        fh.write("\t".join(fileio.CLICK_HEADER) + "\n")
        for u, i in zip(*np.nonzero(np.ones_like(rel))):
            fh.write(f"{u}\t{i}\t{int(rel[u, i])}\n")
    _echo_config(out, "generate", settings)
    m, n = truth.shape
    print(
        f"m={m} n={n} p={config.p:g} epsilon={config.epsilon:g} "
        f"clicks={sample.dataset.num_clicks} click_rate={sample.dataset.num_clicks / (m * n):.6f}"
    )
    return EXIT_OK


# train ----------------------------------------------------------------------


def _load_truth(settings, shape=None) -> GroundTruthModel:
    gamma = fileio.read_matrix(_require(settings, "gamma", "gamma matrix"))
    theta = fileio.read_matrix(_require(settings, "theta", "theta matrix"))
    truth = GroundTruthModel(gamma, theta)
    if shape is not None and truth.shape != tuple(shape):
        raise UsageError(f"ground truth shape {truth.shape} does not match data shape {tuple(shape)}")
    return truth


def _propensities(settings, dataset):
    source = settings["propensity"]
    if not source:
        raise UsageError(f"--propensity is required for the {settings['estimator']} estimator")
    if source == "popularity":
        return estimate_popularity_propensity(dataset, settings["eta"])
    if source == "file":
        return fileio.read_propensities(_require(settings, "propensity_file", "propensity file"), dataset.num_items)
    theta = fileio.read_matrix(_require(settings, "theta", "theta matrix"))
    if theta.shape != dataset.shape:
        raise UsageError(f"theta shape {theta.shape} does not match data shape {dataset.shape}")
    return GroundTruthModel(np.full(theta.shape, 0.5), theta).theta


def _estimator_spec(settings, dataset, local: LocalLoss) -> EstimatorSpec:
    name = settings["estimator"]
    if name == "naive":
        return EstimatorSpec("wmf", c=1.0, local=local)
    if name == "wmf":
        return EstimatorSpec("wmf", c=settings["c"], local=local)
    if name == "expomf":
        truth = _load_truth(settings, dataset.shape)
        return EstimatorSpec("expomf", posteriors=expomf_posteriors(truth, dataset), local=local)
    if name == "clipped":
        clip = settings["clip"]
        return EstimatorSpec("clipped", clip=clip if clip >= 0 else CLIP_GRID[0], local=local)
    return EstimatorSpec("unbiased", local=local)


def cmd_train(settings) -> int:
    dataset = fileio.read_clicks(_require(settings, "clicks", "click log"))
    local = _local(settings)
    spec = _estimator_spec(settings, dataset, local)
    propensities = _propensities(settings, dataset) if spec.needs_propensities else None
    train_set, validation = split_validation(dataset, settings["validation_fraction"], seed=settings["seed"])
    if train_set.num_clicks == 0:
        raise UsageError("no clicks left for training after the validation split")
    # SNIPS needs propensities even for estimators that do not use them
    tuning_props = propensities if propensities is not None else estimate_popularity_propensity(dataset, settings["eta"])
    if settings["tuning"] == "snips":
        objective, maximize = snips_objective(validation, tuning_props), True
    else:
        objective, maximize = estimator_objective(spec, validation, propensities), False

    base = dict(
        latent_dim=settings["latent_dim"],
        learning_rate=settings["learning_rate"],
        l2_reg=settings["l2"],
        batch_size=settings["batch_size"],
        max_epochs=settings["epochs"],
        patience=settings["patience"],
        seed=settings["seed"],
        link=settings["link"] or None,
    )
    config = TrainConfig(spec, **base)
    if spec.variant == "clipped" and settings["clip"] < 0:
        grid = [TrainConfig(EstimatorSpec("clipped", clip=m, local=local), **base) for m in CLIP_GRID]
        tuning = "snips_dcg" if settings["tuning"] == "snips" else None
        if tuning is None:
            raise UsageError("the clipping grid search tunes on SNIPS; pass --clip with --tuning loss")
        found = grid_search(train_set, validation, grid, "snips_dcg", propensities, tuning_propensities=tuning_props)
        config = found.best_config
        print(f"selected clip={config.estimator.clip:g}")
    result = train(train_set, config, propensities, objective=objective, maximize=maximize)
    valid_loss = estimator_objective(config.estimator, validation, propensities)(result.model)

    out = _out_dir(settings)
    fileio.save_model(out / "model.npz", result.model)
    fileio.write_csv(
        out / "history.csv",
        ("epoch", "train_loss", "validation"),
        ((h["epoch"], h["train_loss"], h["validation"]) for h in result.history),
    )
    if propensities is not None and np.ndim(getattr(propensities, "theta", propensities)) == 1:
        fileio.write_propensities(out / "propensities.tsv", propensities)
    _echo_config(out, "train", settings)
    print(
        f"estimator={config.estimator.describe()} best_epoch={result.best_epoch} "
        f"best_validation={result.best_score:.6f} validation_loss={valid_loss!r}"
    )
    return EXIT_OK


# evaluate -------------------------------------------------------------------


def cmd_evaluate(settings) -> int:
    model = fileio.load_model(_require(settings, "model", "model checkpoint"))
    labels = fileio.read_labels(_require(settings, "labels", "test labels")) if settings["labels"] else None
    gamma = fileio.read_matrix(_require(settings, "gamma", "gamma matrix")) if settings["gamma"] else None
    if labels is None and gamma is None:
        raise UsageError("evaluate needs --labels or --gamma")
    shape = (model.num_users, model.num_items)
    if gamma is not None and gamma.shape != shape:
        raise UsageError(f"gamma shape {gamma.shape} does not match model {shape}")
    if labels is not None:
        for u in labels.users:
            if u >= shape[0] or labels.items[u].max() >= shape[1]:
                raise UsageError("test labels reference users or items outside the model")
    rare = None
    if settings["clicks"]:
        train_set = fileio.read_clicks(_require(settings, "clicks", "click log"), *shape)
        rare = rare_items(estimate_popularity_propensity(train_set, settings["eta"]))
    ks = settings["ks"]
    if any(k < 1 for k in ks):
        raise UsageError("cutoffs must be positive")

    rows = []
    if labels is not None:
        rows += metric_report(rank_labeled(model, labels), labels, ks, "all")
        if rare is not None:
            rare_labels = labels.restrict(rare)
            rows += metric_report(rank_labeled(model, rare_labels), rare_labels, ks, "rare")
    if gamma is not None:
        pred = model.predict_matrix()
        rows += [("relevance_DCG", k, "all", ideal_dcg(pred, gamma, k)) for k in ks]
        if rare is not None and rare.size:
            rows += [("relevance_DCG", k, "rare", ideal_dcg(pred[:, rare], gamma[:, rare], k)) for k in ks]
        rows.append(("ideal_log_loss", None, "all", ideal_loss(gamma, pred, LocalLoss("log"))))

    out = _out_dir(settings)
    fileio.write_csv(out / "metrics.csv", ("metric", "K", "item_group", "value"), rows)
    _echo_config(out, "evaluate", settings)
    for metric, k, group, value in rows:
        print(f"{metric}@{k if k is not None else '-'} [{group}] = {value:.6f}")
    return EXIT_OK


# oracle ---------------------------------------------------------------------

ORACLE_COLUMNS = (
    "check", "estimator", "trials", "empirical_mean", "analytic_expectation", "standard_error", "z_score",
    "empirical_variance", "analytic_variance", "exact_variance", "pass_mean", "pass_var", "pass_exact_var",
)


def cmd_oracle(settings) -> int:
    if settings["trials"] < MIN_TRIALS:
        raise UsageError(f"--trials must be at least {MIN_TRIALS}")
    if settings["propensity_scale"] <= 0:
        raise UsageError("--propensity-scale must be positive")
    seed = settings["seed"]
    if settings["gamma"] or settings["theta"]:
        truth = _load_truth(settings)
    else:
        config = SynthConfig(num_users=settings["m"], num_items=settings["n"], p=settings["p"], seed=seed)
        truth = make_ground_truth(*generate_base_matrices(config), config.epsilon, config.p)
    if settings["predictions"]:
        predictions = fileio.read_matrix(_require(settings, "predictions", "prediction matrix"))
        if predictions.shape != truth.shape:
            raise UsageError("prediction matrix shape does not match the ground truth")
    else:
        predictions = np.random.default_rng(np.random.SeedSequence([seed, 4])).random(truth.shape)
    local = _local(settings)
    propensities = np.minimum(truth.theta * settings["propensity_scale"], 1.0)
    reference = sample_clicks(truth, seed).dataset
    specs = [
        EstimatorSpec("ideal", local=local),
        EstimatorSpec("wmf", c=settings["c"], local=local),
        EstimatorSpec("expomf", posteriors=expomf_posteriors(truth, reference), local=local),
        EstimatorSpec("unbiased", local=local),
        EstimatorSpec("clipped", clip=settings["clip"], local=local),
    ]
    common = dict(trials=settings["trials"], seed=seed, z_max=settings["z_max"], var_tol=settings["var_tol"], workers=settings["workers"])
    reports = [
        ("moments", estimate_moments(truth, predictions, spec, propensities=propensities, **common)) for spec in specs
    ]
    sweep = []
    if settings["propensity_scale"] == 1.0:
        sweep = bias_variance_sweep(truth, predictions, settings["clip_values"], local, **common)
        reports += [("clip_sweep", row.report) for row in sweep]

    exact = settings["variance_target"] == "exact"
    out = _out_dir(settings)
    fileio.write_csv(
        out / "oracle.csv",
        ORACLE_COLUMNS,
        ([check, *rep.as_row().values()] for check, rep in reports),
    )
    if sweep:
        fileio.write_csv(
            out / "clip_sweep.csv",
            ("M", "analytic_bias", "analytic_variance", "empirical_bias", "empirical_variance", "empirical_mse"),
            ((r.clip, r.analytic_bias, r.analytic_variance, r.empirical_bias, r.empirical_variance, r.empirical_mse) for r in sweep),
        )
    _echo_config(out, "oracle", settings)

    failed = []
    for check, rep in reports:
        ok = rep.pass_mean and (rep.pass_exact_var if exact else rep.pass_var)
        ratio = rep.exact_variance_ratio if exact else rep.variance_ratio
        print(f"{'PASS' if ok else 'FAIL'} {check:<10} {rep.label:<28} z={rep.z_score:+.2f} var_ratio={ratio:.4f}")
        if not ok:
            failed.append((check, rep))
    if failed:
        print(f"{len(failed)} oracle check(s) failed:")
        for check, rep in failed:
            print(f"  {check} {rep.as_row()}")
        return EXIT_FAIL
    return EXIT_OK


# sweep ----------------------------------------------------------------------


def cmd_sweep(settings) -> int:
    if settings["num_seeds"] < 1:
        raise UsageError("--num-seeds must be positive")
    synth = SynthConfig(
        num_users=settings["m"],
        num_items=settings["n"],
        base_rank=settings["rank"],
        epsilon=settings["epsilon"],
        rating_trim=settings["rating_trim"],
        obs_logit_mean=settings["obs_logit_mean"],
        obs_logit_scale=settings["obs_logit_scale"],
    )
    if any(p <= 0 for p in settings["p_values"]):
        raise UsageError("p values must be positive")
    config = SweepConfig(
        synth=synth,
        p_values=settings["p_values"],
        seeds=tuple(range(settings["seed"], settings["seed"] + settings["num_seeds"])),
        local=_local(settings),
        link=settings["link"] or ("sigmoid" if settings["loss"] == "log" else "identity"),
        latent_dim=settings["latent_dim"],
        learning_rate=settings["learning_rate"],
        l2_reg=settings["l2"],
        batch_size=settings["batch_size"],
        max_epochs=settings["epochs"],
        patience=settings["patience"],
        max_k=settings["max_k"],
    )
    records = run_sweep(config, settings["workers"])
    summary = summarize(records)

    out = _out_dir(settings)
    header = ("p", "model", "metric", "K", "value")
    fileio.write_csv(out / "sweep.csv", header, ((r.p, r.model, r.metric, r.k, r.value) for r in summary))
    fileio.write_csv(
        out / "sweep_runs.csv",
        ("seed",) + header,
        ((r.seed, r.p, r.model, r.metric, r.k, r.value) for r in records),
    )
    _echo_config(out, "sweep", settings)
    for r in summary:
        if r.metric == "log_loss" or r.k == 5:
            print(f"p={r.p:g} {r.model:<9} {r.metric}{'@5' if r.k else ''} = {r.value:.6f}")
    return EXIT_OK


HANDLERS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "oracle": cmd_oracle,
    "sweep": cmd_sweep,
}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        settings = resolve(args)
        return HANDLERS[args.command](settings)
    except (UsageError, ValidationError, ConfigurationError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
