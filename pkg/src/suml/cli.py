"""Command-line entry point: data synthesis, mining stats, training, evaluation,
gradient checks and ablation grids, driven by a JSON config file.

Config layout (all keys optional; unknown keys are rejected):

    {
      "world": { ... WorldSpec fields ... },
      "loss":  { ... LossConfig fields ... },
      "train": { ... TrainConfig fields (loss lives under "loss") ... }
    }

Dotted overrides (``--set loss.theta=0.8``) supersede file values; the
``SUML_SEED`` environment variable overrides ``train.seed`` with lower
precedence than ``--set``.  Every command writes the effective config
alongside its outputs; outputs are written to temp files and renamed so
failures never leave partial results.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import os
import sys

from . import gradcheck
from .datagen import WorldSpec, generate_world, read_dataset, sample_dataset, write_dataset
from .exceptions import ConfigParseError, ConfigValidationError, SumlError
from .losses import LossConfig
from .mining import (
    DEFAULT_BUCKET_EDGES,
    PseudoPair,
    mine_pseudo_pairs,
    similarity_histogram,
)
from .model import load_checkpoint
from .pipeline import (
    TrainConfig,
    derive_seeds,
    evaluate_fpv,
    run_ablation_grid,
    run_experiment,
)

SEED_ENV_VAR = "SUML_SEED"


def _atomic_write_text(path: str, text: str) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _coerce(raw: str, current):
    if isinstance(current, bool):
        if raw.lower() in ("true", "1"):
            return True
        if raw.lower() in ("false", "0"):
            return False
        raise ConfigValidationError(f"cannot parse {raw!r} as bool")
    if isinstance(current, int) and not isinstance(current, bool):
        return int(raw)
    if isinstance(current, float):
        return float(raw)
    if current is None:  # optional ints (proj_dim)
        return None if raw.lower() in ("none", "null") else int(raw)
    return raw


def _build_section(cls, data: dict, path: str, defaults=None):
    fields = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        if key not in fields:
            raise ConfigParseError(f"unknown key {path}.{key}")
        kwargs[key] = value
    base = defaults or cls()
    return dataclasses.replace(base, **kwargs)


def parse_config(path=None, overrides=(), env=None):
    """Load configs (file optional), apply SUML_SEED then dotted overrides."""
    env = os.environ if env is None else env
    data = {"world": {}, "loss": {}, "train": {}}
    if path is not None:
        try:
            with open(path) as fh:
                loaded = json.load(fh)
        except OSError as exc:
            raise ConfigParseError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigParseError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(loaded, dict):
            raise ConfigParseError("config root must be a JSON object")
        for key, value in loaded.items():
            if key not in data:
                raise ConfigParseError(f"unknown key {key}")
            if not isinstance(value, dict):
                raise ConfigParseError(f"section {key} must be a JSON object")
            data[key].update(value)

    if SEED_ENV_VAR in env:
        try:
            data["train"]["seed"] = int(env[SEED_ENV_VAR])
        except ValueError as exc:
            raise ConfigValidationError(f"{SEED_ENV_VAR} must be an integer") from exc

    for item in overrides:
        if "=" not in item:
            raise ConfigParseError(f"override {item!r} must look like section.key=value")
        dotted, raw = item.split("=", 1)
        parts = dotted.split(".")
        if len(parts) != 2 or parts[0] not in data:
            raise ConfigParseError(f"override key {dotted!r} must be section.key")
        section, key = parts
        cls = {"world": WorldSpec, "loss": LossConfig, "train": TrainConfig}[section]
        fields = {f.name: f for f in dataclasses.fields(cls)}
        if key not in fields or key == "loss":
            raise ConfigParseError(f"unknown override key {dotted}")
        current = data[section].get(key, getattr(cls(), key))
        try:
            data[section][key] = _coerce(raw, current)
        except ValueError as exc:
            raise ConfigValidationError(f"bad value for {dotted}: {raw!r}") from exc

    world = _build_section(WorldSpec, data["world"], "world")
    loss = _build_section(LossConfig, data["loss"], "loss")
    if "loss" in data["train"]:
        raise ConfigParseError("train.loss belongs in the top-level loss section")
    train = _build_section(TrainConfig, data["train"], "train")
    train = dataclasses.replace(train, loss=loss)
    try:
        world.validate()
        loss.validate()
        train.validate()
    except (ValueError, SumlError) as exc:
        raise ConfigValidationError(str(exc)) from exc
    return world, loss, train


def effective_config_dict(world: WorldSpec, loss: LossConfig, train: TrainConfig) -> dict:
    train_dict = dataclasses.asdict(train)
    train_dict.pop("loss")
    return {
        "world": dataclasses.asdict(world),
        "loss": dataclasses.asdict(loss),
        "train": train_dict,
    }


def _write_effective_config(world, loss, train, target: str) -> None:
    _atomic_write_text(
        target, json.dumps(effective_config_dict(world, loss, train), indent=2) + "\n"
    )


def _cmd_synth(args) -> int:
    world_spec, loss, train = parse_config(args.config, args.set)
    world = generate_world(world_spec)
    seed = args.sample_seed
    if seed is None:
        seed = derive_seeds(train.seed)[f"{args.view}_train"]
    samples = sample_dataset(world, args.view, args.n, seed)
    write_dataset(samples, args.out)
    _write_effective_config(world_spec, loss, train, f"{args.out}.config.json")
    print(f"wrote {len(samples)} {args.view} samples to {args.out}")
    return 0


def _cmd_mine(args) -> int:
    fpv = read_dataset(args.fpv)
    tpv = read_dataset(args.tpv)
    pairs = mine_pseudo_pairs(fpv, tpv)
    tmp = f"{args.out}.tmp"
    with open(tmp, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["fpv_index", "tpv_index", "similarity"])
        for p in pairs:
            writer.writerow([p.fpv_index, p.tpv_index, repr(p.similarity)])
    os.replace(tmp, args.out)
    print(f"wrote {len(pairs)} pairs to {args.out}")
    return 0


def _read_pairs_csv(path):
    pairs = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            pairs.append(
                PseudoPair(
                    fpv_index=int(row["fpv_index"]),
                    tpv_index=int(row["tpv_index"]),
                    similarity=float(row["similarity"]),
                )
            )
    return pairs


def _cmd_stats(args) -> int:
    pairs = _read_pairs_csv(args.pairs)
    edges = DEFAULT_BUCKET_EDGES
    if args.edges:
        edges = tuple(float(e) for e in args.edges.split(","))
    hist = similarity_histogram(pairs, edges)
    tmp = f"{args.out}.tmp"
    with open(tmp, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bucket_low", "bucket_high", "count", "fraction"])
        for lo, hi, count, frac in zip(
            hist.bucket_edges, hist.bucket_edges[1:], hist.counts, hist.fractions
        ):
            writer.writerow([repr(lo), repr(hi), int(count), repr(float(frac))])
    os.replace(tmp, args.out)
    print(f"wrote histogram ({len(hist.counts)} buckets) to {args.out}")
    return 0


def _cmd_train(args) -> int:
    world, loss, train = parse_config(args.config, args.set)
    os.makedirs(args.out_dir, exist_ok=True)
    _write_effective_config(world, loss, train, os.path.join(args.out_dir, "effective_config.json"))
    result = run_experiment(train, world, out_dir=args.out_dir)
    print(
        f"method={train.method} tpv_mode={train.tpv_mode} seed={train.seed} "
        f"final_fpv_test_acc={result.final_fpv_test_acc:.4f} "
        f"final_tpv_test_acc={result.final_tpv_test_acc:.4f}"
    )
    return 0


def _cmd_eval(args) -> int:
    stack, stage = load_checkpoint(args.checkpoint)
    dataset = read_dataset(args.dataset)
    acc = evaluate_fpv(stack, dataset)
    print(json.dumps({"stage": stage, "n": len(dataset), "accuracy": acc}))
    return 0


def _cmd_gradcheck(args) -> int:
    ok, report = gradcheck.run_all(
        n_loss_instances=args.instances, n_model_instances=args.model_instances
    )
    for name, err in report["losses"].items():
        status = "ok" if err <= report["loss_tolerance"] else "FAIL"
        print(f"{name:28s} max_rel_err={err:.3e}  [{status}]")
    mstatus = "ok" if report["composed_model"] <= report["model_tolerance"] else "FAIL"
    print(f"{'composed_model':28s} max_rel_err={report['composed_model']:.3e}  [{mstatus}]")
    pstatus = "ok" if report["normalization_projector"] <= 1e-10 else "FAIL"
    print(
        f"{'normalization_projector':28s} max_abs={report['normalization_projector']:.3e}  [{pstatus}]"
    )
    print("gradcheck:", "PASS" if ok else "FAIL")
    return 0 if ok else 1


def _cmd_ablate(args) -> int:
    world, loss, train = parse_config(args.config, args.set)
    methods = args.methods.split(",")
    tpv_modes = args.tpv_modes.split(",")
    seeds = [int(s) for s in args.seeds.split(",")]
    os.makedirs(args.out_dir, exist_ok=True)
    _write_effective_config(world, loss, train, os.path.join(args.out_dir, "effective_config.json"))
    _, cells = run_ablation_grid(train, world, methods, tpv_modes, seeds, out_dir=args.out_dir)
    for cell in cells:
        print(
            f"{cell['method']:22s} {cell['tpv_mode']:15s} "
            f"mean={cell['mean_fpv_acc']:.4f} std={cell['std_fpv_acc']:.4f}"
        )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="suml",
        description="Unpaired multiview alignment experiments on synthetic data.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_config_args(p):
        p.add_argument("--config", default=None, help="JSON config file")
        p.add_argument(
            "--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
            help="override a config value (repeatable)",
        )

    p = sub.add_parser("synth", help="generate a synthetic dataset (JSONL)")
    add_config_args(p)
    p.add_argument("--view", choices=("fpv", "tpv"), required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--sample-seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_synth)

    p = sub.add_parser("mine", help="mine pseudo-pairs between two datasets (CSV)")
    p.add_argument("--fpv", required=True)
    p.add_argument("--tpv", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_mine)

    p = sub.add_parser("stats", help="similarity histogram of a mined pair file (CSV)")
    p.add_argument("--pairs", required=True)
    p.add_argument("--edges", default=None, help="comma-separated bucket edges")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_stats)

    p = sub.add_parser("train", help="full two-stage training run")
    add_config_args(p)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("eval", help="accuracy of a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.set_defaults(fn=_cmd_eval)

    p = sub.add_parser("gradcheck", help="run the gradient/invariant suite")
    p.add_argument("--instances", type=int, default=100)
    p.add_argument("--model-instances", type=int, default=20)
    p.set_defaults(fn=_cmd_gradcheck)

    p = sub.add_parser("ablate", help="run a method x tpv_mode x seed grid")
    add_config_args(p)
    p.add_argument("--methods", default="fpv_only,sum_l")
    p.add_argument("--tpv-modes", default="trainable")
    p.add_argument("--seeds", default="0,1,2,3,4")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(fn=_cmd_ablate)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except SumlError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
