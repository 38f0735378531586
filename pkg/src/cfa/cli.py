"""Command-line interface.

Subcommands: train, eval, baseline-eval, gradcheck, gen-synthetic.
Configuration values resolve in a fixed order: dataclass defaults, then
key=value lines from --config, then explicit flags. Unknown config keys
are rejected. The resolved configuration is written to the output
directory as effective_config.txt, itself a valid config file.

Exit codes: 0 success, 2 configuration error (also used by argparse for
bad flags), 3 data error, 4 numeric failure, 1 anything unexpected.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import sys
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, NumericError
from .gradcheck import DEFAULT_REL_TOL, run_suite
from .harness import (
    EvalReport,
    TrainConfig,
    baseline_eval,
    evaluate,
    init_params_from_manifest,
    load_params,
    save_params,
    train,
)
from .synthetic import SyntheticSpec, generate
from .tensor_io import SPLITS, load_manifest

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

_BOOL_WORDS = {"true": True, "1": True, "yes": True, "on": True,
               "false": False, "0": False, "no": False, "off": False}


# ---------------------------------------------------------------------------
# Config resolution
# ---------------------------------------------------------------------------


def parse_config_file(path: str | Path) -> dict[str, str]:
    """key=value lines; blank lines and # comments ignored; duplicates rejected."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from None
    values: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key = key.strip()
        if key in values:
            raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
        values[key] = value.strip()
    return values


def _convert(type_name: str, key: str, raw: str):
    if type_name == "int":
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(f"{key} expects an integer, got {raw!r}") from None
    if type_name == "float":
        try:
            return float(raw)
        except ValueError:
            raise ConfigError(f"{key} expects a number, got {raw!r}") from None
    if type_name == "bool":
        word = raw.lower()
        if word not in _BOOL_WORDS:
            raise ConfigError(f"{key} expects a boolean, got {raw!r}")
        return _BOOL_WORDS[word]
    if type_name == "str":
        return raw
    raise ConfigError(f"{key} cannot be set from a config file")


def resolve_config(cls, file_values: dict[str, str], overrides: dict):
    """Defaults <- config file <- flags, with unknown keys rejected."""
    fields = {f.name: f.type for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, raw in file_values.items():
        if key not in fields:
            raise ConfigError(f"unknown config key {key!r} for {cls.__name__}")
        kwargs[key] = _convert(fields[key], key, raw)
    kwargs.update({k: v for k, v in overrides.items() if v is not None})
    return cls(**kwargs)


def write_effective_config(cfg, path: Path) -> None:
    lines = []
    for f in dataclasses.fields(cfg):
        value = getattr(cfg, f.name)
        if value is None:
            continue
        lines.append(f"{f.name}={value}")
    path.write_text("\n".join(sorted(lines)) + "\n")


# ---------------------------------------------------------------------------
# Shared pieces
# ---------------------------------------------------------------------------


def _train_overrides(args) -> dict:
    return {
        "rng_seed": args.seed, "way": args.way, "shot": args.shot,
        "n_subspaces": args.N, "n_prototypes": args.K, "alpha": args.alpha,
        "gamma": args.gamma, "learning_rate": args.lr,
        "iterations": args.iters, "batch_size": args.batch,
    }


def _resolve_train_config(args) -> TrainConfig:
    file_values = parse_config_file(args.config) if args.config else {}
    return resolve_config(TrainConfig, file_values, _train_overrides(args))


def _write_eval_csv(report: EvalReport, path: Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["episodes", "mean", "ci95"])
        writer.writerow([report.episode_count, report.mean_accuracy, report.ci95])


def _init_rng(cfg: TrainConfig) -> np.random.Generator:
    # Matches the initialization stream used by train() for the same seed.
    return np.random.default_rng(np.random.SeedSequence(cfg.rng_seed).spawn(1)[0])


# ---------------------------------------------------------------------------
# Subcommand handlers
# ---------------------------------------------------------------------------


def _cmd_train(args) -> int:
    from .figures import save_loss_curve

    cfg = _resolve_train_config(args)
    manifest = load_manifest(args.manifest)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_effective_config(cfg, out / "effective_config.txt")

    result = train(manifest, cfg)
    save_params(result.params, out / "params.npz")
    with open(out / "training_curve.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "loss", "val_accuracy"])
        for p in result.curve:
            writer.writerow([p.iteration, p.loss,
                             "" if p.val_accuracy is None else p.val_accuracy])
    save_loss_curve(result.curve, out / "training_curve.png")

    if result.best_val_accuracy is not None:
        print(f"best validation accuracy {result.best_val_accuracy:.2f}% "
              f"at iteration {result.best_iteration}")
    print(f"trained {cfg.iterations} iterations; parameters in {out / 'params.npz'}")
    return EXIT_OK


def _eval_common(args, arm_label: str, csv_name: str, png_name: str,
                 runner) -> int:
    from .figures import save_eval_comparison

    cfg = _resolve_train_config(args)
    manifest = load_manifest(args.manifest)
    report = runner(manifest, cfg)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_effective_config(cfg, out / "effective_config.txt")
    _write_eval_csv(report, out / csv_name)
    save_eval_comparison([(arm_label, report)], out / png_name)
    print(f"{arm_label}: {report}")
    return EXIT_OK


def _cmd_eval(args) -> int:
    def runner(manifest, cfg):
        if args.params:
            params = load_params(args.params)
        else:
            params = init_params_from_manifest(manifest, cfg, _init_rng(cfg))
        return evaluate(manifest, args.split, params, cfg, args.episodes)

    return _eval_common(args, f"CFA ({args.split})", "eval_report.csv",
                        "eval_report.png", runner)


def _cmd_baseline_eval(args) -> int:
    def runner(manifest, cfg):
        return baseline_eval(manifest, args.split, cfg, args.episodes)

    return _eval_common(args, f"mean-pool ({args.split})", "baseline_report.csv",
                        "baseline_report.png", runner)


def _cmd_gradcheck(args) -> int:
    report = run_suite(seed=args.seed if args.seed is not None else 0,
                       instances=args.instances)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "gradcheck_report.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["channels", "n_subspaces", "n_prototypes", "side",
                             "shots", "alpha", "way", "seed", "max_rel_error"])
            for r in report.results:
                i = r.instance
                writer.writerow([i.channels, i.n_subspaces, i.n_prototypes,
                                 i.side, i.shots, i.alpha, i.way, i.seed,
                                 r.max_rel_error])
    print(f"gradcheck: {len(report.results)} instances, "
          f"max relative error {report.max_rel_error:.3e} "
          f"({report.elapsed_seconds:.1f}s)")
    if not report.passed():
        print(f"error: max relative error exceeds {DEFAULT_REL_TOL}",
              file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def _cmd_gen_synthetic(args) -> int:
    file_values = parse_config_file(args.config) if args.config else {}
    shuffle = None if args.shuffle is None else args.shuffle == "on"
    overrides = {
        "classes": args.classes, "samples_per_class": args.samples,
        "channels": args.channels, "n_true": args.n_true,
        "height": args.height, "width": args.width,
        "attribute_vocab": args.vocab, "sigma_a": args.sigma,
        "novel_classes": args.novel, "val_classes": args.val,
        "rng_seed": args.seed, "location_shuffle": shuffle,
    }
    spec = resolve_config(SyntheticSpec, file_values, overrides)
    out = Path(args.out)
    manifest = generate(spec, out)
    write_effective_config(spec, out / "effective_config.txt")
    print(f"wrote {len(manifest.records)} tensors across "
          f"{manifest.class_count} classes to {out / 'manifest.csv'}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def _add_train_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", help="key=value config file")
    sub.add_argument("--seed", type=int, help="rng seed")
    sub.add_argument("--way", type=int, help="classes per episode")
    sub.add_argument("--shot", type=int, help="support samples per class")
    sub.add_argument("--N", type=int, help="semantic subspaces")
    sub.add_argument("--K", type=int, help="prototypes per subspace")
    sub.add_argument("--alpha", type=float, help="assignment sharpness")
    sub.add_argument("--gamma", type=float, help="orthogonality weight")
    sub.add_argument("--lr", type=float, help="Adam learning rate")
    sub.add_argument("--iters", type=int, help="training iterations")
    sub.add_argument("--batch", type=int, help="episodes per iteration")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cfa",
        description="Compositional feature aggregation for few-shot recognition.",
    )
    subs = parser.add_subparsers(dest="subcommand", required=True)

    p_train = subs.add_parser("train", help="episodic training on the base split")
    p_train.add_argument("--manifest", required=True)
    p_train.add_argument("--out", required=True, help="output directory")
    _add_train_flags(p_train)
    p_train.set_defaults(handler=_cmd_train)

    for name, handler, extra in (
        ("eval", _cmd_eval, True),
        ("baseline-eval", _cmd_baseline_eval, False),
    ):
        p = subs.add_parser(name, help=f"{name} over sampled episodes")
        p.add_argument("--manifest", required=True)
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--split", default="novel", choices=SPLITS)
        p.add_argument("--episodes", type=int, default=600)
        if extra:
            p.add_argument("--params", help="trained parameters (.npz); "
                           "defaults to k-means initialization from the base split")
        _add_train_flags(p)
        p.set_defaults(handler=handler)

    p_grad = subs.add_parser("gradcheck",
                             help="finite-difference check of the analytic gradients")
    p_grad.add_argument("--seed", type=int, default=0)
    p_grad.add_argument("--instances", type=int, default=50)
    p_grad.add_argument("--out", help="optional directory for the per-instance report")
    p_grad.set_defaults(handler=_cmd_gradcheck)

    p_gen = subs.add_parser("gen-synthetic",
                            help="generate a compositional synthetic dataset")
    p_gen.add_argument("--out", required=True, help="dataset directory")
    p_gen.add_argument("--config", help="key=value config file")
    p_gen.add_argument("--seed", type=int, help="rng seed")
    p_gen.add_argument("--classes", type=int)
    p_gen.add_argument("--samples", type=int, help="samples per class")
    p_gen.add_argument("--channels", type=int)
    p_gen.add_argument("--n-true", type=int, help="latent attribute groups")
    p_gen.add_argument("--height", type=int)
    p_gen.add_argument("--width", type=int)
    p_gen.add_argument("--vocab", type=int, help="attribute vocabulary size")
    p_gen.add_argument("--sigma", type=float, help="within-attribute noise")
    p_gen.add_argument("--novel", type=int, help="novel (test) classes")
    p_gen.add_argument("--val", type=int, help="validation classes")
    p_gen.add_argument("--shuffle", choices=("on", "off"),
                       help="per-sample location shuffling")
    p_gen.set_defaults(handler=_cmd_gen_synthetic)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.handler(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except Exception as exc:  # pragma: no cover - last-resort diagnostics
        print(f"unexpected error: {exc}", file=sys.stderr)
        return EXIT_UNEXPECTED


if __name__ == "__main__":
    sys.exit(main())
