"""Command-line entry point.

Subcommands: generate, train, eval, sweep, bench, gradcheck. Options come
from an INI-style config file with [model]/[train]/[corruption] sections;
command-line flags override config keys. Every run writes a
resolved-config snapshot next to its artifacts.

Exit codes: 0 success, 1 usage error, 2 numeric failure, 3 I/O error.
"""

from __future__ import annotations

import argparse
import configparser
import dataclasses
import sys
from pathlib import Path

import numpy as np

from . import bench, container, datagen, harness, training
from .autodiff import finite_difference_check
from .model import PRESETS, ModelConfig, TextFusionModel
from .training import TrainConfig


class UsageError(Exception):
    pass


_MODEL_FIELDS = {f.name: f.type for f in dataclasses.fields(ModelConfig)}
_TRAIN_FIELDS = {f.name: f.type for f in dataclasses.fields(TrainConfig)}


def _coerce(name, value, fields, section):
    if name not in fields:
        raise UsageError(
            f"unknown key {name!r} in [{section}]; valid keys: "
            f"{', '.join(sorted(fields))}")
    current = fields[name]
    if current in ("bool", bool):
        return value.lower() in ("1", "true", "yes", "on")
    if current in ("int", int):
        return int(value)
    if current in ("float", float):
        return float(value)
    return value


def load_config(path, preset="desk", overrides=()):
    """Build (ModelConfig, TrainConfig) from preset, INI file, and overrides.

    Overrides are section.key=value strings.
    """
    model_kw = {}
    train_kw = {}
    if path:
        parser = configparser.ConfigParser()
        read = parser.read(path)
        if not read:
            raise FileNotFoundError(f"config file {path} not found")
        if parser.has_option("model", "preset"):
            preset = parser.get("model", "preset")
        for section, kw, fields in (("model", model_kw, _MODEL_FIELDS),
                                    ("train", train_kw, _TRAIN_FIELDS)):
            if parser.has_section(section):
                for k, v in parser.items(section):
                    if section == "model" and k == "preset":
                        continue
                    kw[k] = _coerce(k, v, fields, section)
    for ov in overrides:
        key, _, value = ov.partition("=")
        if not value:
            raise UsageError(f"override {ov!r} is not section.key=value")
        section, _, name = key.partition(".")
        if section == "model":
            model_kw[name] = _coerce(name, value, _MODEL_FIELDS, section)
        elif section == "train":
            train_kw[name] = _coerce(name, value, _TRAIN_FIELDS, section)
        else:
            raise UsageError(f"unknown config section {section!r}")
    if preset not in PRESETS:
        raise UsageError(f"unknown preset {preset!r}; "
                         f"choose from {', '.join(sorted(PRESETS))}")
    model_cfg = dataclasses.replace(PRESETS[preset], **model_kw)
    train_cfg = TrainConfig(**train_kw)
    return model_cfg, train_cfg


def write_resolved_config(outdir, model_cfg, train_cfg, extra=()):
    parser = configparser.ConfigParser()
    parser["model"] = {k: str(v) for k, v in
                       dataclasses.asdict(model_cfg).items()}
    parser["train"] = {k: str(v) for k, v in
                       dataclasses.asdict(train_cfg).items()}
    if extra:
        parser["run"] = {k: str(v) for k, v in extra}
    with open(Path(outdir) / "resolved_config.ini", "w") as fh:
        parser.write(fh)


def save_checkpoint(model, outdir):
    extra = [(f"config_{k}", v)
             for k, v in dataclasses.asdict(model.config).items()]
    container.save_named(outdir, model.state_arrays(), extra)


def load_checkpoint(directory, seed=0):
    manifest, named = container.load_named(directory)
    kw = {}
    for name, ftype in _MODEL_FIELDS.items():
        raw = manifest.get(f"config_{name}")
        if raw is None:
            continue
        if ftype in ("bool", bool):
            kw[name] = raw == "True"
        elif ftype in ("int", int):
            kw[name] = int(raw)
        elif ftype in ("float", float):
            kw[name] = float(raw)
        else:
            kw[name] = raw
    model = TextFusionModel(ModelConfig(**kw), seed=seed)
    model.load_state_arrays(named)
    return model


def _dataset_for(args, model_cfg):
    if args.data:
        return datagen.load(args.data)
    shapes = datagen.ShapeSpec(
        model_cfg.t_text, model_cfg.d_text, model_cfg.t_visual,
        model_cfg.d_visual, model_cfg.t_audio, model_cfg.d_audio)
    return datagen.generate(args.n, shapes=shapes, seed=args.seed,
                            label_range=(model_cfg.label_low,
                                         model_cfg.label_high))


def cmd_generate(args):
    model_cfg, _ = load_config(args.config, args.preset, args.set)
    shapes = datagen.ShapeSpec(
        model_cfg.t_text, model_cfg.d_text, model_cfg.t_visual,
        model_cfg.d_visual, model_cfg.t_audio, model_cfg.d_audio)
    ds = datagen.generate(args.n, shapes=shapes, seed=args.seed,
                          label_range=(model_cfg.label_low,
                                       model_cfg.label_high))
    datagen.save(ds, args.out)
    datagen.export_labels_csv(ds, Path(args.out) / "labels.csv")
    print(f"wrote {args.n} samples to {args.out}")
    return 0


def cmd_train(args):
    model_cfg, train_cfg = load_config(args.config, args.preset, args.set)
    if args.seed is not None:
        train_cfg = dataclasses.replace(train_cfg, seed=args.seed)
    if args.epochs is not None:
        train_cfg = dataclasses.replace(train_cfg, epochs=args.epochs)
    ds = _dataset_for(args, model_cfg)
    model = TextFusionModel(model_cfg, seed=train_cfg.seed)
    history = training.train(model, ds.split("train"), train_cfg,
                             ds.unknown_text_vector,
                             valid_samples=ds.split("valid"))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(model, out / "checkpoint")
    (out / "loss.csv").write_text(training.loss_curve_csv(history))
    write_resolved_config(out, model_cfg, train_cfg,
                          [("command", "train"), ("seed", train_cfg.seed)])
    print(f"trained {train_cfg.epochs} epochs; "
          f"best val MAE {history['best_val_mae']:.4f}")
    return 0


def _scheme(model_cfg):
    return "sims" if model_cfg.label_high <= 1.0 else "mosi"


def cmd_eval(args):
    model_cfg, train_cfg = load_config(args.config, args.preset, args.set)
    model = load_checkpoint(args.checkpoint) if args.checkpoint \
        else TextFusionModel(model_cfg, seed=args.seed)
    ds = _dataset_for(args, model.config)
    row = harness.evaluate_fixed(model, ds.split("test"),
                                 ds.unknown_text_vector, args.rate,
                                 seed=args.seed, scheme=_scheme(model.config))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    import json
    (out / "metrics.json").write_text(json.dumps(row, indent=2, sort_keys=True))
    write_resolved_config(out, model.config, train_cfg,
                          [("command", "eval"), ("rate", args.rate)])
    print(f"r={args.rate}: MAE {row['mae']:.4f} Corr {row['corr']:.4f}")
    return 0


def cmd_sweep(args):
    model_cfg, train_cfg = load_config(args.config, args.preset, args.set)
    model = load_checkpoint(args.checkpoint) if args.checkpoint \
        else TextFusionModel(model_cfg, seed=args.seed)
    ds = _dataset_for(args, model.config)
    report = harness.evaluate_sweep(model, ds.split("test"),
                                    ds.unknown_text_vector, seed=args.seed,
                                    scheme=_scheme(model.config))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "sweep.csv").write_text(report.to_csv())
    (out / "sweep.json").write_text(report.to_json())
    write_resolved_config(out, model.config, train_cfg,
                          [("command", "sweep")])
    print(report.to_csv())
    return 0


def cmd_bench(args):
    model_cfg, train_cfg = load_config(args.config, args.preset, args.set)
    model = TextFusionModel(model_cfg, seed=args.seed)
    timing = None
    if args.time:
        rng = np.random.default_rng(args.seed)
        x_t = rng.standard_normal((model_cfg.t_text, model_cfg.d_text))
        x_v = rng.standard_normal((model_cfg.t_visual, model_cfg.d_visual))
        x_a = rng.standard_normal((model_cfg.t_audio, model_cfg.d_audio))
        timing = bench.wallclock(lambda: model.predict(x_t, x_v, x_a),
                                 reps=args.reps)
    report = bench.cost_report(model, length=args.length, timing=timing)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "cost_report.json").write_text(bench.report_json(report))
    write_resolved_config(out, model_cfg, train_cfg, [("command", "bench")])
    print(bench.report_table(report))
    return 0


def cmd_gradcheck(args):
    model_cfg, _ = load_config(args.config, args.preset, args.set)
    model = TextFusionModel(model_cfg, seed=args.seed)
    shapes = datagen.ShapeSpec(
        model_cfg.t_text, model_cfg.d_text, model_cfg.t_visual,
        model_cfg.d_visual, model_cfg.t_audio, model_cfg.d_audio)
    ds = datagen.generate(2, shapes=shapes, seed=args.seed,
                          label_range=(model_cfg.label_low,
                                       model_cfg.label_high))
    cfg = harness.CorruptionConfig(mode="test_fixed", rate=0.3, seed=args.seed)
    batch = harness.corrupt_batch(ds.samples, cfg, ds.unknown_text_vector)

    def loss_fn():
        loss, _ = training._batch_loss(model, batch, lambda_rec=0.7)
        return loss

    err = finite_difference_check(loss_fn, model.parameters(),
                                  per_coordinate=args.per_coordinate)
    print(f"max relative gradient error: {err:.3e} (tolerance 1e-4)")
    if err >= 1e-4:
        print("gradient check FAILED")
        return 2
    print("gradient check passed")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="mamba-fusion",
        description="Text-enhanced bidirectional-scan multimodal fusion "
                    "with a missing-modality robustness harness.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", default=None, help="INI config file")
        p.add_argument("--preset", default="desk",
                       choices=sorted(PRESETS))
        p.add_argument("--set", action="append", default=[],
                       metavar="SECTION.KEY=VALUE",
                       help="override a config key")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", default="out")

    p = sub.add_parser("generate", help="write a synthetic dataset")
    common(p)
    p.add_argument("--n", type=int, default=256)
    p.set_defaults(fn=cmd_generate)

    p = sub.add_parser("train", help="train a model")
    common(p)
    p.add_argument("--data", default=None)
    p.add_argument("--n", type=int, default=256)
    p.add_argument("--epochs", type=int, default=None)
    p.set_defaults(fn=cmd_train, seed=None)

    p = sub.add_parser("eval", help="metrics at one missing rate")
    common(p)
    p.add_argument("--data", default=None)
    p.add_argument("--n", type=int, default=64)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--rate", type=float, default=0.0)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("sweep", help="missing-rate sweep 0.0..0.9")
    common(p)
    p.add_argument("--data", default=None)
    p.add_argument("--n", type=int, default=64)
    p.add_argument("--checkpoint", default=None)
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("bench", help="parameter/FLOPs cost report")
    common(p)
    p.add_argument("--length", type=int, default=None)
    p.add_argument("--time", action="store_true")
    p.add_argument("--reps", type=int, default=30)
    p.set_defaults(fn=cmd_bench)

    p = sub.add_parser("gradcheck", help="finite-difference gradient check")
    common(p)
    p.add_argument("--per-coordinate", type=int, default=8,
                   dest="per_coordinate",
                   help="coordinates checked per parameter")
    p.set_defaults(fn=cmd_gradcheck)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "train" and args.seed is None:
            args.seed = 0
        return args.fn(args)
    except (UsageError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except FloatingPointError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return 2
    except (OSError, container.ContainerError) as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
