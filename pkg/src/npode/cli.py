"""
Command line: ``npode {generate,train,evaluate,predict,plot,params}``.

Every command reads an optional ``section.key = value`` config file, applies
flag overrides, writes the fully resolved configuration into the output
directory and exits with a status that identifies the failure class.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import diffcore as dc
from .baselines import GpModel, gp_fit_columns, gp_predict_columns
from .config import RunConfig
from .data import (
    Dataset,
    Normalizer,
    SpiralConfig,
    SplitSpec,
    generate_spiral,
    generate_synthetic6,
    load_csv,
    normalize,
    spiral_curve,
    split_train_test,
    write_csv,
)
from .decoders import MlpDecoderParams, OdeNetParams, OdeSolverConfig, count_parameters
from .errors import (
    ConfigError,
    ContractError,
    DegenerateColumnError,
    DimensionError,
    DomainError,
    IllConditionedKernelError,
    IngestionError,
    TrainingFailure,
    UndefinedMetricError,
    UnsupportedConfigError,
)
from .experiments import GP_KERNELS, MODEL_KINDS, NEURAL_KINDS
from .metrics import CI_MULTIPLIERS, EvalReport, evaluate
from .model import ModelConfig
from .plotting import curve_chart, interval_chart
from .predictive import PredictiveDistribution
from .training import CHECKPOINT_FORMAT, ModelCheckpoint, TrainConfig, predict, train

log = logging.getLogger("npode")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_TRAINING = 4
EXIT_IO = 5

GP_SET_FORMAT = "npode-gp-set/1"


# ---------------------------------------------------------------- configuration helpers


def model_config(cfg: RunConfig, x_dim: int, y_dim: int) -> ModelConfig:
    kind = cfg["model.kind"]
    return ModelConfig(
        x_dim,
        y_dim,
        decoder_kind=NEURAL_KINDS.get(kind, "npode"),
        feature_width=cfg["model.feature_width"],
        latent_dim=cfg["model.latent_dim"],
        num_heads=cfg["model.num_heads"],
        ode_channels=cfg["model.ode_channels"],
        kernel_size=cfg["model.kernel_size"],
        encoder_layers=cfg["model.encoder_layers"],
        mlp_layers=cfg["model.mlp_layers"],
        solver=OdeSolverConfig(cfg["model.solver_start"], cfg["model.solver_end"], cfg["model.solver_step"]),
    )


def train_config(cfg: RunConfig) -> TrainConfig:
    return TrainConfig(
        iterations=cfg["train.iterations"],
        learning_rate=cfg["train.learning_rate"],
        seed=cfg["run.seed"],
        context_fraction_range=(cfg["train.context_min"], cfg["train.context_max"]),
        latent_samples_train=cfg["train.latent_samples_train"],
        latent_samples_predict=cfg["train.latent_samples_predict"],
        kl_per_target=cfg["train.kl_per_target"],
        grad_clip=cfg["train.grad_clip"],
        trace_every=cfg["train.trace_every"],
        lr_schedule=cfg["train.lr_schedule"],
        lr_floor=cfg["train.lr_floor"],
    )


def validate(cfg: RunConfig) -> None:
    """Reject bad values before any file is written."""
    if cfg["data.noise_std"] < 0:
        raise ConfigError(f"data.noise_std must be non-negative, got {cfg['data.noise_std']}")
    if cfg["data.n_points"] < 2:
        raise ConfigError("data.n_points must be at least 2")
    if cfg["model.kind"] not in MODEL_KINDS:
        raise ConfigError(f"model.kind must be one of {MODEL_KINDS}, got {cfg['model.kind']!r}")
    if cfg["eval.ci"] not in ("auto", *CI_MULTIPLIERS):
        raise ConfigError(f"eval.ci must be auto, one_sigma or ci95, got {cfg['eval.ci']!r}")
    if cfg["split.test_count"] < 1:
        raise ConfigError("split.test_count must be at least 1")
    try:
        SplitSpec(cfg["split.test_count"], cfg.nested_sizes())
    except ContractError as err:
        raise ConfigError(f"split: {err}") from None
    model_config(cfg, 1, 1)
    train_config(cfg)


def load_run_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise ConfigError(f"--set expects section.key=value, got {item!r}")
        key, value = item.split("=", 1)
        cfg.set(key.strip(), value.strip())
    if args.seed is not None:
        cfg.set("run.seed", args.seed)
    if args.out is not None:
        cfg.set("run.out", args.out)
    if getattr(args, "model", None):
        cfg.set("model.kind", args.model)
    if getattr(args, "ci", None):
        cfg.set("eval.ci", args.ci)
    validate(cfg)
    return cfg


def out_dir(cfg: RunConfig) -> Path:
    path = Path(cfg["run.out"])
    path.mkdir(parents=True, exist_ok=True)
    (path / "config.txt").write_text(cfg.resolved_text())
    return path


# ---------------------------------------------------------------- datasets and models


def build_dataset(cfg: RunConfig, data_path: str | None = None) -> Dataset:
    source = data_path or cfg["data.source"]
    seed = cfg["run.seed"]
    if source == "spiral":
        return generate_spiral(SpiralConfig(
            n_points=cfg["data.n_points"], x_range=(cfg["data.x_start"], cfg["data.x_end"]),
            noise_std=cfg["data.noise_std"], seed=seed))
    if source == "synthetic6":
        return generate_synthetic6(cfg["data.n_points"], cfg["data.noise_std"], seed)
    if not Path(source).exists():
        raise IngestionError(f"data file {source} does not exist")
    return load_csv(source)


def save_gp_set(models: list[GpModel], normalization: dict, path: Path) -> None:
    doc = {"format": GP_SET_FORMAT, "normalization": normalization,
           "models": [json.loads(m.to_json()) for m in models]}
    path.write_text(json.dumps(doc, sort_keys=True, indent=1))


def load_model_file(path):
    """Return ``(kind, model, normalization dict)`` for a checkpoint or GP file."""
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError:
        raise ContractError(f"{path} is not a model file") from None
    tag = doc.get("format")
    if tag == CHECKPOINT_FORMAT:
        ckpt = ModelCheckpoint.from_json(json.dumps(doc))
        return "neural", ckpt, ckpt.normalization
    if tag == GP_SET_FORMAT:
        return "gp", [GpModel.from_json(json.dumps(m)) for m in doc["models"]], doc["normalization"]
    raise ContractError(f"{path}: unknown model format {tag!r}")


def model_io_dims(kind, model) -> tuple[int, int]:
    if kind == "neural":
        return model.model.config.x_dim, model.model.config.y_dim
    return model[0].X.shape[1], len(model)


def predict_raw(kind, model, norm: Normalizer, X_raw, samples: int, seed: int) -> PredictiveDistribution:
    Xn = norm.transform_x(X_raw)
    if kind == "neural":
        dist = predict(model, model.context_x, model.context_y, Xn, rng=dc.make_rng(seed), samples=samples)
    else:
        dist = gp_predict_columns(model, Xn)
    return PredictiveDistribution(norm.inverse_y(dist.mean), norm.inverse_y_std(dist.std))


def default_ci(provenance: str, m: int, p: int) -> str:
    return "one_sigma" if provenance == "spiral" or (m == 1 and p == 2) else "ci95"


# ---------------------------------------------------------------- commands


def cmd_generate(args) -> int:
    cfg = load_run_config(args)
    ds = build_dataset(cfg)
    out = out_dir(cfg)
    write_csv(ds, out / "data.csv")
    if ds.provenance == "spiral":
        x = np.linspace(cfg["data.x_start"], cfg["data.x_end"], 1000)
        write_csv(Dataset(x[:, None], spiral_curve(x), "spiral"), out / "reference.csv", write_metadata=False)
    print(f"wrote {out / 'data.csv'}: {len(ds)} rows, {ds.m} input columns, {ds.p} output columns")
    return EXIT_OK


def _train_one(cfg, train_set: Dataset, target: Path) -> str:
    target.mkdir(parents=True, exist_ok=True)
    kind = cfg["model.kind"]
    norm = train_set.normalization.to_dict()
    start = time.perf_counter()
    if kind in GP_KERNELS:
        models = gp_fit_columns(train_set.X, train_set.Y, GP_KERNELS[kind])
        save_gp_set(models, norm, target / "model.json")
        lml = ", ".join(f"{m.log_marginal_likelihood:.4f}" for m in models)
        return f"fitted {kind} in {time.perf_counter() - start:.1f}s (log marginal likelihood {lml})"
    res = train(model_config(cfg, train_set.m, train_set.p), train_set.X, train_set.Y,
                train_config(cfg), normalization=norm)
    res.checkpoint.save(target / "model.json")
    (target / "trace.csv").write_text(res.trace_csv())
    return (f"trained {kind} for {res.checkpoint.iteration} iterations in "
            f"{time.perf_counter() - start:.1f}s, final loss {res.checkpoint.final_loss:.6g}")


def cmd_train(args) -> int:
    cfg = load_run_config(args)
    ds = normalize(build_dataset(cfg, args.data))
    sizes = cfg.nested_sizes()
    split = split_train_test(ds, SplitSpec(cfg["split.test_count"], sizes, seed=cfg["run.seed"]))
    out = out_dir(cfg)
    write_csv(split.train, out / "train.csv")
    write_csv(split.test, out / "test.csv")
    if sizes:
        for size in sizes:
            msg = _train_one(cfg, split.nested[size], out / f"size_{size}")
            print(f"[train size {size}] {msg}")
    else:
        print(_train_one(cfg, split.train, out))
    return EXIT_OK


def _report(kind, model, norm, test: Dataset, ci: str, samples: int, seed: int) -> EvalReport:
    dist = predict_raw(kind, model, norm, test.X, samples, seed)
    with_mape = bool(np.all(test.Y != 0))
    return evaluate(test.Y, dist, ci, with_mape=with_mape, X=test.X)


def cmd_evaluate(args) -> int:
    cfg = load_run_config(args)
    test = load_csv(args.data)
    out = out_dir(cfg)
    summary = [["label", "rmse", "mape", "coverage", "ci"]]
    for path in args.checkpoint:
        kind, model, norm_d = load_model_file(path)
        m, p = model_io_dims(kind, model)
        if (test.m, test.p) != (m, p):
            raise DimensionError(
                f"{path} expects {m} inputs and {p} outputs, found {test.m} and {test.p} in {args.data}")
        ci = cfg["eval.ci"] if cfg["eval.ci"] != "auto" else default_ci(test.provenance, m, p)
        norm = Normalizer.from_dict(norm_d)
        rep = _report(kind, model, norm, test, ci, cfg["train.latent_samples_predict"], cfg["run.seed"])
        label = Path(path).parent.name if len(args.checkpoint) > 1 else "model"
        name = "eval.csv" if len(args.checkpoint) == 1 else f"eval_{label}.csv"
        (out / name).write_text(rep.to_csv())
        if kind == "neural":
            ck = model
            own = Dataset(norm.inverse_x(ck.context_x), norm.inverse_y(ck.context_y))
            train_rep = _report(kind, model, norm, own, ci, cfg["train.latent_samples_predict"], cfg["run.seed"])
            if train_rep.rmse > rep.rmse:
                log.warning("%s: training-set rmse %.4g exceeds test rmse %.4g", path, train_rep.rmse, rep.rmse)
        summary.append([label, repr(rep.rmse), "" if rep.mape is None else repr(rep.mape),
                        repr(rep.coverage), ci])
        print(f"{label}: {rep.summary()}")
    with (out / "summary.csv").open("w", newline="") as fh:
        csv.writer(fh, lineterminator="\n").writerows(summary)
    return EXIT_OK


def cmd_predict(args) -> int:
    cfg = load_run_config(args)
    kind, model, norm_d = load_model_file(args.checkpoint)
    inputs = load_csv(args.data, require_outputs=False)
    m, p = model_io_dims(kind, model)
    if inputs.m != m:
        raise DimensionError(f"{args.checkpoint} expects {m} inputs, found {inputs.m} in {args.data}")
    dist = predict_raw(kind, model, Normalizer.from_dict(norm_d), inputs.X,
                       cfg["train.latent_samples_predict"], cfg["run.seed"])
    out = out_dir(cfg)
    with (out / "predictions.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"x{j}" for j in range(1, m + 1)]
                   + [f"y{j}_{s}" for j in range(1, p + 1) for s in ("mean", "std")])
        for i in range(len(inputs)):
            row = [repr(float(v)) for v in inputs.X[i]]
            for j in range(p):
                row += [repr(float(dist.mean[i, j])), repr(float(dist.std[i, j]))]
            w.writerow(row)
    print(f"wrote {len(inputs)} predictions to {out / 'predictions.csv'}")
    return EXIT_OK


def cmd_plot(args) -> int:
    cfg = load_run_config(args)
    text = Path(args.report).read_text()
    rep = EvalReport.from_csv(text)
    mode = args.mode
    if mode == "auto":
        mode = "curve" if rep.X is not None and rep.X.shape[1] == 1 else "interval"
    if mode == "curve":
        if rep.X is None or rep.X.shape[1] != 1:
            raise ContractError("curve plots need a report with exactly one input column")
        train = reference = None
        if args.train:
            t = load_csv(args.train)
            train = (t.X, t.Y)
        if args.reference:
            r = load_csv(args.reference)
            reference = (r.X, r.Y)
        svg, series = curve_chart(rep.X, rep, train, reference)
    else:
        svg, series = interval_chart(rep)
    out = out_dir(cfg)
    (out / "plot.svg").write_text(svg)
    (out / "plot_series.csv").write_text(series)
    print(f"wrote {out / 'plot.svg'} ({mode})")
    return EXIT_OK


def decoder_shapes(cfg: ModelConfig, kind: str):
    """Zero-filled decoder weights with the configured shapes (no forward pass)."""
    C, k, W = cfg.ode_channels, cfg.kernel_size, cfg.decoder_width
    if kind == "npode":
        return OdeNetParams(np.zeros((1, C, k)), np.zeros((C + 1, C, k)), np.zeros((C + 1, C, k)))
    return MlpDecoderParams([np.zeros((W, W))] * cfg.mlp_layers, [np.zeros(W)] * cfg.mlp_layers)


def cmd_params(args) -> int:
    cfg = load_run_config(args)
    mc = model_config(cfg, 1, 1)
    kinds = ["npode", "np"] if args.which == "both" else [args.which]
    reports = [count_parameters(decoder_shapes(mc, NEURAL_KINDS[k])) for k in kinds]
    text = "\n\n".join(r.to_text() for r in reports)
    if len(reports) == 2:
        ratio = reports[1].total / reports[0].total
        text += f"\n\nNPs / NP-ODE decoder parameters: {reports[1].total} / {reports[0].total} = {ratio:.2f}x"
    print(text)
    out = out_dir(cfg)
    with (out / "params.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model", "layer", "shape", "count"])
        for r in reports:
            for row in r.rows:
                w.writerow([r.model, row.layer, "x".join(map(str, row.shape)), row.count])
            w.writerow([r.model, "total", "", r.total])
    (out / "params.txt").write_text(text + "\n")
    return EXIT_OK


# ---------------------------------------------------------------- entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="npode", description=__doc__.strip().splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name, func, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="section.key = value file")
        p.add_argument("--out", help="output directory (run.out)")
        p.add_argument("--seed", type=int, help="seed for data, split and training (run.seed)")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
        p.set_defaults(func=func)
        return p

    command("generate", cmd_generate, "write a dataset CSV")
    p = command("train", cmd_train, "split, normalise and fit a model")
    p.add_argument("--model", choices=MODEL_KINDS)
    p.add_argument("--data", help="CSV file (overrides data.source)")
    p = command("evaluate", cmd_evaluate, "score checkpoints on a test CSV")
    p.add_argument("--checkpoint", nargs="+", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--ci", choices=sorted(CI_MULTIPLIERS))
    p = command("predict", cmd_predict, "predict at the inputs of a CSV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p = command("plot", cmd_plot, "draw an evaluation report as SVG")
    p.add_argument("--report", required=True)
    p.add_argument("--reference")
    p.add_argument("--train")
    p.add_argument("--mode", choices=["auto", "curve", "interval"], default="auto")
    p = command("params", cmd_params, "decoder parameter table")
    p.add_argument("--model", dest="which", choices=["npode", "np", "both"], default="both")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, UnsupportedConfigError) as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except (TrainingFailure, IllConditionedKernelError) as err:
        print(f"training failed: {err}", file=sys.stderr)
        return EXIT_TRAINING
    except (IngestionError, DegenerateColumnError, DimensionError, DomainError,
            ContractError, UndefinedMetricError) as err:
        print(f"data error: {err}", file=sys.stderr)
        return EXIT_DATA
    except OSError as err:
        print(f"i/o error: {err}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
