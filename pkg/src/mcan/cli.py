"""Command-line pipeline: generate, correlate, train, evaluate, predict.

One JSON config file per run plus command-line overrides; every command is
reproducible from its config and seed, writes only under the output directory,
and never mutates its inputs.  Exit codes: 0 success, 1 usage/config error,
2 runtime error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import analysis as an
from . import graphdata as gd
from . import model as md
from . import trainer as tr
from .errors import ConfigError, McanError

GENERATOR_KEYS = {
    "n_roads": int, "edge_density": float, "intervals": list, "days": int,
    "coupling": float, "noise": float, "obs_noise": float,
    "weekly_amplitude": float, "weather_impact": float,
}
TRAIN_KEYS = {
    "epochs": int, "batch_size": int, "learning_rate": float, "dropout": float,
    "alpha": float, "beta": float, "recent_steps": int, "daily_steps": int,
    "weekly_steps": int, "horizon": int, "folds": int, "fold_index": int,
    "ablations": list, "embed_len": int, "hops": int, "filters": int,
    "cpa_order": int, "gcn_order": int, "hidden_size": int, "lstm_layers": int,
    "fnn_layers": int, "max_train_samples": int, "max_test_samples": int,
    "shuffled_folds": bool,
}
PATH_KEYS = {"graph_path": str, "series_path": str, "context_path": str,
             "checkpoint_path": str, "output_dir": str}
COMMAND_KEYS = {
    "generate": {**GENERATOR_KEYS, "seed": int, "output_dir": str},
    "correlate": {
        **PATH_KEYS, "seed": int, "road_a": int, "road_b": int,
        "measurements": list, "window_days": int, "wall_start": int, "wall_end": int,
    },
    "train": {**PATH_KEYS, **TRAIN_KEYS, "seed": int},
    "evaluate": {**PATH_KEYS, "seed": int, "eval_split": str, "max_eval_samples": int},
    "predict": {**PATH_KEYS, "seed": int, "predict_count": int, "predict_road": int},
}
REQUIRED_KEYS = {
    "generate": ("n_roads", "output_dir"),
    "correlate": ("graph_path", "series_path", "context_path", "output_dir",
                  "road_a", "road_b", "window_days"),
    "train": ("graph_path", "series_path", "context_path", "output_dir"),
    "evaluate": ("graph_path", "series_path", "context_path", "checkpoint_path", "output_dir"),
    "predict": ("graph_path", "series_path", "context_path", "checkpoint_path", "output_dir"),
}


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        doc = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    return doc


def _parse_override(text: str):
    if "=" not in text:
        raise ConfigError(f"--set expects key=value, got {text!r}")
    key, raw = text.split("=", 1)
    try:
        return key, json.loads(raw)
    except json.JSONDecodeError:
        return key, raw


def _validated(command: str, config: dict) -> dict:
    allowed = COMMAND_KEYS[command]
    unknown = sorted(set(config) - set(allowed))
    if unknown:
        raise ConfigError(
            f"unknown config keys for {command!r}: {', '.join(unknown)}; "
            f"valid keys: {', '.join(sorted(allowed))}"
        )
    for key in REQUIRED_KEYS[command]:
        if key not in config:
            raise ConfigError(f"{command!r} requires config key {key!r}")
    for key, kind in allowed.items():
        if key not in config or config[key] is None:
            continue
        value = config[key]
        if kind is float and isinstance(value, (int, float)) and not isinstance(value, bool):
            config[key] = float(value)
        elif kind is int and isinstance(value, (int, float)) and not isinstance(value, bool) \
                and float(value).is_integer():
            config[key] = int(value)
        elif not isinstance(value, kind) or (kind is int and isinstance(value, bool)):
            raise ConfigError(f"config key {key!r} must be {kind.__name__}, got {value!r}")
    return config


def _out_dir(config: dict) -> Path:
    out = Path(config["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _dataset(config: dict) -> gd.TrafficDataset:
    return gd.load_dataset(config["graph_path"], config["series_path"], config["context_path"])


def cmd_generate(config: dict) -> int:
    gen = gd.GeneratorConfig(
        n_roads=config["n_roads"],
        edge_density=config.get("edge_density", 0.5),
        intervals=tuple(config.get("intervals", [5, 10, 15])),
        days=config.get("days", 7),
        coupling=config.get("coupling", 0.0),
        noise=config.get("noise", 0.0),
        obs_noise=config.get("obs_noise", 0.0),
        weekly_amplitude=config.get("weekly_amplitude", 0.0),
        weather_impact=config.get("weather_impact", 0.0),
    )
    dataset = gd.generate_synthetic(gen, seed=config.get("seed", 0))
    out = _out_dir(config)
    paths = (out / "graph.json", out / "series.csv", out / "context.csv")
    gd.write_dataset(dataset, *paths)
    for path in paths:
        print(path)
    return 0


def cmd_correlate(config: dict) -> int:
    dataset = _dataset(config)
    road_a, road_b = config["road_a"], config["road_b"]
    for road in (road_a, road_b):
        if not 0 <= road < dataset.graph.size:
            raise ConfigError(f"road {road} is not in the graph (N={dataset.graph.size})")
    wall_range = None
    if "wall_start" in config or "wall_end" in config:
        wall_range = (config.get("wall_start", 0),
                      config.get("wall_end", dataset.span_minutes))
    report = an.multifold_correlation_report(
        dataset.series[road_a],
        dataset.series[road_b],
        dataset.graph.nodes[road_a].interval_minutes,
        dataset.graph.nodes[road_b].interval_minutes,
        config.get("measurements", list(an.MEASUREMENTS)),
        config["window_days"],
        wall_range,
    )
    out = _out_dir(config) / "correlations.csv"
    an.write_correlation_table(out, report)
    print(out)
    return 0


def _train_config(config: dict) -> tr.TrainConfig:
    kwargs = {key: config[key] for key in TRAIN_KEYS if key in config}
    kwargs["seed"] = config.get("seed", 0)
    if "ablations" in kwargs:
        kwargs["ablations"] = tuple(kwargs["ablations"])
    return tr.TrainConfig(**kwargs)


def cmd_train(config: dict) -> int:
    dataset = _dataset(config)
    train_config = _train_config(config)
    md.parse_ablations(train_config.ablations)  # fail fast on unknown flags
    result = tr.train(dataset, train_config)
    out = _out_dir(config)
    checkpoint = out / "checkpoint.json"
    md.save_checkpoint(
        checkpoint, result.params, result.scaler.means, result.scaler.stds, result.ybar,
        extra_config={
            "folds": train_config.folds,
            "fold_index": result.fold.index,
            "fold_seed": train_config.seed,
            "shuffled_folds": train_config.shuffled_folds,
            "epochs": train_config.epochs,
            "batch_size": train_config.batch_size,
            "learning_rate": train_config.learning_rate,
            "dropout": train_config.dropout,
            "max_train_samples": train_config.max_train_samples,
        },
    )
    history = out / "loss_history.csv"
    lines = ["epoch,loss"] + [f"{e + 1},{repr(v)}" for e, v in enumerate(result.history)]
    history.write_text("\n".join(lines) + "\n")
    print(checkpoint)
    print(history)
    print(f"final training loss {result.history[-1]:.6g} after {result.adam_steps} steps")
    return 0


def _rebuild_fold(dataset: gd.TrafficDataset, params: md.McanParams, cfg: dict) -> tr.Fold:
    view = md.build_view(dataset)
    folds = tr.kfold_split(view, params.config, cfg["folds"], cfg["fold_seed"],
                           cfg.get("shuffled_folds", False))
    return folds[cfg["fold_index"]]


def cmd_evaluate(config: dict) -> int:
    dataset = _dataset(config)
    params, means, stds, ybar, cfg = md.load_checkpoint(config["checkpoint_path"])
    if len(means) != dataset.graph.size:
        raise ConfigError(
            f"checkpoint was trained on {len(means)} roads but the dataset has "
            f"{dataset.graph.size}"
        )
    fold = _rebuild_fold(dataset, params, cfg)
    split_name = config.get("eval_split", "test")
    if split_name not in ("test", "train"):
        raise ConfigError(f"eval_split must be 'test' or 'train', got {split_name!r}")
    samples = fold.test if split_name == "test" else fold.train
    cap = config.get("max_eval_samples")
    if cap is not None and len(samples) > cap:
        rng = np.random.default_rng(config.get("seed", 0))
        keep = rng.choice(len(samples), cap, replace=False)
        samples = [samples[i] for i in sorted(keep)]
    view = md.build_view(dataset, means=means, stds=stds, ybar=ybar)
    report = tr.evaluate(params, view, samples)
    out = _out_dir(config) / "metrics.csv"
    lines = ["metric,horizon_step,value"]
    for name, value in (("mae", report.mae), ("mape", report.mape_pct), ("rmse", report.rmse)):
        lines.append(f"{name},all,{repr(value)}")
    for step in range(params.config.horizon):
        lines.append(f"mae,{step + 1},{repr(float(report.per_step_mae[step]))}")
        lines.append(f"rmse,{step + 1},{repr(float(report.per_step_rmse[step]))}")
    out.write_text("\n".join(lines) + "\n")
    print(out)
    print(
        f"{split_name} split: {report.sample_count} samples, "
        f"MAE {report.mae:.4f} km/h, MAPE {report.mape_pct:.2f}%, RMSE {report.rmse:.4f} km/h"
    )
    return 0


def cmd_predict(config: dict) -> int:
    dataset = _dataset(config)
    params, means, stds, ybar, _ = md.load_checkpoint(config["checkpoint_path"])
    if len(means) != dataset.graph.size:
        raise ConfigError(
            f"checkpoint was trained on {len(means)} roads but the dataset has "
            f"{dataset.graph.size}"
        )
    view = md.build_view(dataset, means=means, stds=stds, ybar=ybar)
    count = config.get("predict_count", 1)
    if count < 1:
        raise ConfigError(f"predict_count must be >= 1, got {count}")
    roads = [config["predict_road"]] if "predict_road" in config else range(dataset.graph.size)
    lines = ["road_id,t,step,speed_kmh"]
    for road in roads:
        if not 0 <= road < dataset.graph.size:
            raise ConfigError(f"road {road} is not in the graph (N={dataset.graph.size})")
        times = md.eligible_times(view, params.config, road)[-count:]
        if len(times) == 0:
            raise McanError(f"road {road} has no eligible prediction times")
        truth, preds = tr.predict_samples(params, view, [(road, int(t)) for t in times])
        for row, t in enumerate(times):
            for step in range(params.config.horizon):
                lines.append(f"{road},{int(t)},{step + 1},{repr(float(preds[row, step]))}")
    out = _out_dir(config) / "predictions.csv"
    out.write_text("\n".join(lines) + "\n")
    print(out)
    return 0


COMMANDS = {
    "generate": cmd_generate,
    "correlate": cmd_correlate,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "predict": cmd_predict,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mcan",
        description="Traffic speed prediction on road graphs with heterogeneous sampling.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, help=f"run the {name} step")
        p.add_argument("--config", help="JSON config file for this run")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--ablate", action="append", default=[],
                       help=f"ablation flag ({', '.join(md.ABLATION_NAMES)}); repeatable")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a single config key; repeatable")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    try:
        config = _load_config(args.config)
        for item in args.set:
            key, value = _parse_override(item)
            config[key] = value
        if args.seed is not None:
            config["seed"] = args.seed
        if args.ablate:
            if args.command != "train":
                raise ConfigError("--ablate only applies to the train command")
            md.parse_ablations(args.ablate)
            existing = list(config.get("ablations", []))
            config["ablations"] = existing + [a for a in args.ablate if a not in existing]
        config = _validated(args.command, config)
        return COMMANDS[args.command](config)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (McanError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
