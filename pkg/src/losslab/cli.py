"""Command-line front end: gen / train / eval / grid / scale.

Experiments are driven by an INI config file (flat key = value entries in
[dataset], [trainer], [loss] and [output] sections); every knob has a
default, and the few flags below override the file.  Exit codes are a
stable contract: 0 success, 2 usage or config error, 3 I/O error,
4 numeric/training failure.
"""

from __future__ import annotations

import argparse
import configparser
import json
import sys
from dataclasses import fields as dataclass_fields
from pathlib import Path

import numpy as np

from . import evaluator, synth, trainer
from .errors import (
    InsufficientSamples,
    InvalidConfig,
    InvalidEpsilon,
    InvalidMargin,
    LossLabError,
    NonFiniteLoss,
)
from .losses import LOSS_KINDS, MarginConfig, derive_unified_scale
from .synth import TEST_SET_IDS, TRAIN_SET_IDS

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NUMERIC = 4

DATASET_DEFAULTS = {
    "seed": 7,
    "n_train_ids": 74,
    "n_test_ids": 6,
    "d_in": 32,
    "noise": 0.05,
    "table2_scaling": 0.01,
    "train_budget_cap": 4000,
    "train_budget_floor_per_id": 4,
    "signal_gain": 1.2,
    "lux_gain_exponent": 0.15,
    "low_lux_extra_noise": 0.3,
    "lux_rotation_max": 0.5,
    "lux_profile_frac": 0.55,
    "lux_profile_floor": 0.2,
    "lux_profile_speed": 2.2,
    "expression_scale": 0.12,
    "accessory_mask_size": 4,
    "pose_max_angle": 0.9,
}

TRAINER_INT_KEYS = ("batch_size", "epochs", "warmup_epochs", "hidden", "embed_dim", "seed")
TRAINER_FLOAT_KEYS = ("lr0", "momentum", "weight_decay")


def _coerce(value: str, like) -> object:
    if isinstance(like, bool):
        return value.strip().lower() in ("1", "true", "yes", "on")
    if isinstance(like, int):
        return int(value)
    if isinstance(like, float):
        return float(value)
    return value


class ExperimentConfig:
    """Parsed config file plus flag overrides."""

    def __init__(self, path=None):
        self.dataset = dict(DATASET_DEFAULTS)
        self.trainer = {}
        self.loss_kind = "arcface"
        self.s1 = None
        self.s2 = None
        self.margin_m = None
        self.epsilon = None
        self.out_dir = Path("out")
        if path is not None:
            self._load(Path(path))

    def _load(self, path: Path):
        if not path.exists():
            raise FileNotFoundError(f"config file {path} does not exist")
        parser = configparser.ConfigParser()
        parser.read(path, encoding="utf-8")
        for key, value in parser.items("dataset") if parser.has_section("dataset") else []:
            if key not in DATASET_DEFAULTS:
                raise InvalidConfig(f"unknown [dataset] key {key!r}")
            self.dataset[key] = _coerce(value, DATASET_DEFAULTS[key])
        if parser.has_section("trainer"):
            for key, value in parser.items("trainer"):
                if key in TRAINER_INT_KEYS:
                    self.trainer[key] = int(value)
                elif key in TRAINER_FLOAT_KEYS:
                    self.trainer[key] = float(value)
                elif key == "sampler":
                    self.trainer["sampler_kind"] = value.strip()
                else:
                    raise InvalidConfig(f"unknown [trainer] key {key!r}")
        if parser.has_section("loss"):
            for key, value in parser.items("loss"):
                if key == "kind":
                    self.loss_kind = value.strip()
                elif key == "s1":
                    self.s1 = float(value)
                elif key == "s2":
                    self.s2 = float(value)
                elif key == "margin":
                    self.margin_m = float(value)
                elif key == "epsilon":
                    self.epsilon = float(value)
                else:
                    raise InvalidConfig(f"unknown [loss] key {key!r}")
        if parser.has_section("output") and parser.has_option("output", "dir"):
            self.out_dir = Path(parser.get("output", "dir"))

    @property
    def dataset_dir(self) -> Path:
        return self.out_dir / "dataset"

    def build_universe(self) -> synth.Universe:
        cfg = self.dataset
        return synth.generate_dataset(
            cfg["n_train_ids"],
            cfg["n_test_ids"],
            None,
            cfg["d_in"],
            cfg["seed"],
            noise=cfg["noise"],
            signal_gain=cfg["signal_gain"],
            lux_gain_exponent=cfg["lux_gain_exponent"],
            low_lux_extra_noise=cfg["low_lux_extra_noise"],
            lux_rotation_max=cfg["lux_rotation_max"],
            lux_profile_frac=cfg["lux_profile_frac"],
            lux_profile_floor=cfg["lux_profile_floor"],
            lux_profile_speed=cfg["lux_profile_speed"],
            expression_scale=cfg["expression_scale"],
            accessory_mask_size=cfg["accessory_mask_size"],
            pose_max_angle=cfg["pose_max_angle"],
        )

    def train_config(self, loss_kind: str, epsilon, s1, s2, margin_m, seed) -> trainer.TrainConfig:
        explicit_scales = any(v is not None for v in (s1, s2, self.s1, self.s2))
        explicit_eps = epsilon is not None or self.epsilon is not None
        if explicit_scales and explicit_eps:
            raise InvalidConfig(
                "specify either epsilon or explicit scale factors (s1, s2), not both"
            )
        margin = MarginConfig(
            s1=s1 if s1 is not None else (self.s1 if self.s1 is not None else 16.0),
            s2=s2 if s2 is not None else (self.s2 if self.s2 is not None else 16.0),
            m=margin_m if margin_m is not None else (self.margin_m if self.margin_m is not None else 0.25),
        )
        kwargs = dict(self.trainer)
        if seed is not None:
            kwargs["seed"] = seed
        kwargs.setdefault("seed", self.dataset["seed"])
        return trainer.TrainConfig(
            loss_kind=loss_kind,
            margin=margin,
            epsilon=epsilon if epsilon is not None else self.epsilon,
            **kwargs,
        )


def _load_split(cfg: ExperimentConfig):
    return synth.read_dataset(cfg.dataset_dir)


def cmd_gen(args) -> int:
    cfg = ExperimentConfig(args.config)
    if args.out:
        cfg.out_dir = Path(args.out)
    if args.seed is not None:
        cfg.dataset["seed"] = args.seed
    universe = cfg.build_universe()
    split = synth.build_splits(
        universe,
        cfg.dataset["table2_scaling"],
        train_budget_cap=cfg.dataset["train_budget_cap"],
        train_budget_floor_per_id=cfg.dataset["train_budget_floor_per_id"],
    )
    out = synth.write_dataset(split, universe, cfg.dataset_dir)
    for tid in TRAIN_SET_IDS:
        print(f"{tid}: {split.train_indices[tid].size} samples")
    for qid in TEST_SET_IDS:
        print(f"{qid}: {split.test_pairs[qid].shape[0]} pairs")
    print(f"dataset written to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = ExperimentConfig(args.config)
    if args.out:
        cfg.out_dir = Path(args.out)
    split, _ = _load_split(cfg)
    tcfg = cfg.train_config(args.loss, args.epsilon, args.s1, args.s2, args.margin, args.seed)
    result = trainer.train(split, args.train_id, tcfg)
    run_dir = cfg.out_dir / "runs" / f"{args.train_id}_{tcfg.loss_kind}"
    trainer.write_metrics(run_dir / "metrics.jsonl", result)
    meta = {
        "train_id": args.train_id,
        "loss": tcfg.loss_kind,
        "seed": tcfg.seed,
        "d_in": split.samples.features.shape[1],
        "s1": result.header["s1"],
        "s2": result.header["s2"],
        "m": result.header["m"],
    }
    trainer.save_checkpoint(run_dir / "checkpoint.bin", result.encoder, result.class_weights, meta)
    final = result.log[-1]
    accs = " ".join(f"{qid.lower()}={final[qid.lower()]:.4f}" for qid in TEST_SET_IDS)
    print(f"trained {tcfg.loss_kind} on {args.train_id}: loss={final['mean_loss']:.6f} {accs}")
    print(f"run written to {run_dir}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = ExperimentConfig(args.config)
    if args.out:
        cfg.out_dir = Path(args.out)
    split, _ = _load_split(cfg)
    encoder, _, _ = trainer.load_checkpoint(args.checkpoint)
    report = evaluator.verify(encoder, split.pair_collection(args.test_id))
    payload = {
        "test_id": args.test_id,
        "accuracy": report.accuracy,
        "threshold": report.threshold,
        "n_pairs": report.n_pairs,
        "roc": report.roc,
    }
    out_path = Path(args.checkpoint).parent / f"report_{args.test_id}.json"
    out_path.write_text(
        json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8", newline="\n"
    )
    print(f"{args.test_id}: accuracy={report.accuracy:.4f} threshold={report.threshold:.4f}")
    print(f"report written to {out_path}")
    return EXIT_OK


def cmd_grid(args) -> int:
    cfg = ExperimentConfig(args.config)
    if args.out:
        cfg.out_dir = Path(args.out)
    split, _ = _load_split(cfg)
    losses = [name.strip() for name in args.losses.split(",") if name.strip()]
    if not losses:
        raise InvalidConfig("--losses must name at least one loss")
    for name in losses:
        tcfg = cfg.train_config(name, args.epsilon, None, None, None, args.seed)
        grid = evaluator.heatmap(split, name, tcfg)
        under, balanced, over = evaluator.partition_means(grid)
        path = cfg.out_dir / f"heatmap_{grid.loss_kind}.csv"
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("train_id,test_id,accuracy\n")
            for i, tid in enumerate(TRAIN_SET_IDS):
                for j, qid in enumerate(TEST_SET_IDS):
                    fh.write(f"{tid},{qid},{grid.cells[i, j]:.6f}\n")
            fh.write(f"mean_under,,{under:.6f}\n")
            fh.write(f"mean_balanced,,{balanced:.6f}\n")
            fh.write(f"mean_over,,{over:.6f}\n")
        print(
            f"{grid.loss_kind}: under={under:.4f} balanced={balanced:.4f} "
            f"over={over:.4f} -> {path}"
        )
    return EXIT_OK


def cmd_scale(args) -> int:
    scale = derive_unified_scale(args.epsilon, args.classes, args.negatives, args.margin)
    print(f"{scale.derived_s1:.4f} {scale.derived_s2:.4f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="losslab",
        description="Generate synthetic condition datasets, train loss variants, "
        "and evaluate verification accuracy.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_gen = sub.add_parser("gen", help="generate and persist the dataset")
    p_gen.add_argument("--config", default=None, help="INI experiment config")
    p_gen.add_argument("--out", default=None, help="output directory root")
    p_gen.add_argument("--seed", type=int, default=None)
    p_gen.set_defaults(func=cmd_gen)

    p_train = sub.add_parser("train", help="train one loss on one T row")
    p_train.add_argument("--config", default=None)
    p_train.add_argument("--out", default=None)
    p_train.add_argument("--train-id", required=True, choices=TRAIN_SET_IDS)
    p_train.add_argument("--loss", required=True, choices=LOSS_KINDS)
    p_train.add_argument("--epsilon", type=float, default=None)
    p_train.add_argument("--s1", type=float, default=None)
    p_train.add_argument("--s2", type=float, default=None)
    p_train.add_argument("--margin", type=float, default=None)
    p_train.add_argument("--seed", type=int, default=None)
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="verification report for a checkpoint")
    p_eval.add_argument("checkpoint")
    p_eval.add_argument("--test-id", required=True, choices=TEST_SET_IDS)
    p_eval.add_argument("--config", default=None)
    p_eval.add_argument("--out", default=None)
    p_eval.set_defaults(func=cmd_eval)

    p_grid = sub.add_parser("grid", help="4x4 train/test heatmap per loss")
    p_grid.add_argument("--config", default=None)
    p_grid.add_argument("--out", default=None)
    p_grid.add_argument("--losses", required=True, help="comma-separated loss names")
    p_grid.add_argument("--epsilon", type=float, default=None)
    p_grid.add_argument("--seed", type=int, default=None)
    p_grid.set_defaults(func=cmd_grid)

    p_scale = sub.add_parser("scale", help="derive (s1, s2) from epsilon")
    p_scale.add_argument("--epsilon", type=float, required=True)
    p_scale.add_argument("--classes", type=int, required=True)
    p_scale.add_argument("--negatives", type=float, required=True)
    p_scale.add_argument("--margin", type=float, required=True)
    p_scale.set_defaults(func=cmd_scale)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (InvalidConfig, InvalidEpsilon, InvalidMargin, InsufficientSamples) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"missing file: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except NonFiniteLoss as exc:
        print(f"training failed: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except LossLabError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
