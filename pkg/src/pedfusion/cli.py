"""Command-line entry point: generate | train | eval | ablate | gradcheck | predict.

Exit codes: 0 ok, 2 usage, 3 I/O, 4 numeric abort, 5 gradcheck failure.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import harness
from .checkpoint import CheckpointError, load_checkpoint
from .config import RunConfig, load_config
from .data import DatasetManifest, FormatError, LoadError, SampleError, load_sample
from .fusion import LADDER, ConfigurationError, VariantSpec
from .nn import ModalityError
from .optim import NumericError
from .synthgen import HeadroomError, ScenarioParams, generate

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_NUMERIC, EXIT_GRADCHECK = 0, 2, 3, 4, 5


class UsageError(Exception):
    pass


def _non_negative_int(text):
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {v}")
    return v


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _variant(text):
    try:
        return VariantSpec.from_name(text).name
    except ConfigurationError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key=value file; flags override it")
    common.add_argument("--data", help="dataset directory (manifest.jsonl)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--variant", type=_variant, help="one of " + ", ".join(LADDER))
    common.add_argument("--lr", type=float)
    common.add_argument("--epochs", type=_positive_int)
    common.add_argument("--batch", type=_positive_int)
    common.add_argument("--seed", type=_non_negative_int)
    common.add_argument("--seeds", type=_positive_int, help="number of seeds for ablate")
    common.add_argument("--n", type=_non_negative_int, help="number of samples to generate")
    common.add_argument("--noise", type=float, help="label-flip level sigma")
    common.add_argument("--dropout", type=float)
    common.add_argument("--augment", action="store_true", default=None, help="enable training augmentation")
    scale = common.add_mutually_exclusive_group()
    scale.add_argument("--desk", action="store_true", help="desk-scale dims (N=4, 32x32)")
    scale.add_argument("--full-scale", action="store_true",
                       help="full-size dims (N=16, 112x112) with lr 5e-7, 40 epochs, batch 2")

    parser = argparse.ArgumentParser(prog="pedfusion", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("generate", parents=[common], help="write a synthetic dataset")
    sub.add_parser("train", parents=[common], help="train one variant")
    p = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint on a split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default="test", choices=["train", "test"])
    p = sub.add_parser("ablate", parents=[common], help="train and evaluate the variant ladder")
    p.add_argument("--variants", help="comma-separated subset of the ladder")
    sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient suite")
    p = sub.add_parser("predict", parents=[common], help="score one sample directory")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--sample", required=True)
    return parser


def resolve_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.full_scale:
        cfg = cfg.full()
    elif args.desk:
        cfg = cfg.desk()
    cfg = cfg.with_updates(variant=args.variant, lr=args.lr, epochs=args.epochs, batch=args.batch, seed=args.seed,
                           seeds=args.seeds, n=args.n, noise=args.noise, dropout=args.dropout, augment=args.augment,
                           data=args.data, out=args.out)
    return cfg.validate()


def _need(value, flag):
    if not value:
        raise UsageError(f"{flag} is required")
    return value


def _echo(line):
    print(line, flush=True)


def _load_split(cfg, split):
    manifest = DatasetManifest.read(_need(cfg.data, "--data"))
    return manifest.load(split)


def _with_data_dims(cfg, samples):
    dims = harness.dims_of(samples)
    return replace(cfg, n_frames=dims.n_frames, local_size=dims.local_size, global_size=dims.global_size)


def cmd_generate(args, cfg):
    out = Path(_need(cfg.out, "--out"))
    if args.n is None and not args.config:
        raise UsageError("--n is required")
    params = ScenarioParams(n_samples=cfg.n, n_frames=cfg.n_frames, local_size=cfg.local_size,
                            global_size=cfg.global_size, noise=cfg.noise, seed=cfg.seed)
    manifest = generate(params, out)
    labels = [r.label for r in manifest.records]
    pos = sum(labels)
    frac = pos / len(labels) if labels else float("nan")
    _echo(f"manifest={out / 'manifest.jsonl'} n={len(labels)} positive={pos} negative={len(labels) - pos} "
          f"positive_fraction={frac:.4f}")
    return EXIT_OK


def cmd_train(args, cfg):
    out = Path(_need(cfg.out, "--out"))
    train = _load_split(cfg, "train")
    test = _load_split(cfg, "test")
    if not train:
        raise UsageError("the dataset has no training samples")
    cfg = _with_data_dims(cfg, train)
    _check_modalities(VariantSpec.from_name(cfg.variant), train[0])
    harness.train_run(cfg, train, test, out_dir=out, echo=_echo)
    return EXIT_OK


def cmd_eval(args, cfg):
    model, header = load_checkpoint(args.checkpoint)
    samples = _load_split(cfg, args.split)
    if samples:
        _check_modalities(model.variant, samples[0])
    report = harness.evaluate_model(model, samples, cfg.threshold)
    _echo(f"variant={model.variant.name} split={args.split} n={len(samples)} {report.to_record()}")
    return EXIT_OK


def cmd_ablate(args, cfg):
    train = _load_split(cfg, "train")
    test = _load_split(cfg, "test")
    if not train:
        raise UsageError("the dataset has no training samples")
    cfg = _with_data_dims(cfg, train)
    variants = [v.strip() for v in args.variants.split(",")] if args.variants else list(LADDER)
    try:
        variants = [VariantSpec.from_name(v).name for v in variants]
    except ConfigurationError as exc:
        raise UsageError(str(exc)) from None
    for v in variants:
        _check_modalities(VariantSpec.from_name(v), train[0])
    out = Path(cfg.out) if cfg.out else None
    runs = []

    def record(line):
        runs.append(line)
        _echo(line)

    rows = harness.ablate(cfg, train, test, variants=variants, echo=record)
    table = harness.format_table(rows)
    sys.stdout.write(table)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.txt").write_text(cfg.to_text())
        (out / "ablation.tsv").write_text(table)
        (out / "runs.txt").write_text("".join(r + "\n" for r in runs))
    return EXIT_OK


def cmd_gradcheck(args, cfg):
    results = harness.gradcheck_suite(seed=cfg.seed)
    for r in results:
        _echo(r.to_line())
    bad = [r for r in results if not r.ok]
    if cfg.out:
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "gradcheck.txt").write_text("".join(r.to_line() + "\n" for r in results))
    if bad:
        for r in bad:
            print(f"gradcheck failed: op={r.op} element={r.where} max_rel_err={r.error:.3e}", file=sys.stderr)
        return EXIT_GRADCHECK
    _echo(f"gradcheck passed ({len(results)} checks)")
    return EXIT_OK


def _check_modalities(variant: VariantSpec, sample):
    need = {"pose"} if variant.use_pose else set()
    need |= set(variant.modalities())
    missing = need - sample.modalities()
    if missing:
        raise ModalityError(f"variant {variant.label} needs {sorted(missing)}, which the sample does not provide")


def cmd_predict(args, cfg):
    model, _ = load_checkpoint(args.checkpoint)
    sample = load_sample(args.sample)
    _check_modalities(model.variant, sample)
    dims = harness.dims_of([sample])
    used = (dims.n_frames, dims.local_size if model.variant.use_local else None,
            dims.global_size if model.variant.use_global or model.variant.use_motion else None)
    want = (model.dims.n_frames, model.dims.local_size if model.variant.use_local else None,
            model.dims.global_size if model.variant.use_global or model.variant.use_motion else None)
    if used != want:
        raise ModalityError(f"sample dims {used} do not match checkpoint dims {want}")
    p = model.forward([sample]).data[0].astype(np.float64)
    label = "unknown" if sample.label is None else str(sample.label)
    _echo(f"p_crossing={p[0]:.6f} p_not_crossing={p[1]:.6f} label={label}")
    return EXIT_OK


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "gradcheck": cmd_gradcheck,
    "predict": cmd_predict,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](args, cfg)
    except (UsageError, ConfigurationError, ModalityError) as exc:
        parser.print_usage(sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"numeric abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (LoadError, FormatError, SampleError, CheckpointError, HeadroomError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
