"""Command-line entry point.

Subcommands: gen-data, train, eval, sample, gradcheck, ablate,
rasterize.  Every command writes a manifest (resolved config, seed,
input hashes, timestamps) into its output directory before any long
computation; an existing non-empty output directory is refused unless
--force is given, so reruns never silently mix artifacts.

Exit codes: 0 success, 2 usage/config error, 3 data error, 4 numeric
failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, config as config_mod, objectives, rng as rng_mod
from . import data as data_mod
from . import gradcheck as gradcheck_mod
from . import report, training
from .errors import (ConfigError, ContractError, DataError, MmstError,
                     NumericError)
from .model import MMST, Batch
from .raster import LAYER_TYPES, global_chunk, local_chunk_stack, write_pgm
from .tensor import Tensor

ENV_DATA_DIR = "MMST_DATA_DIR"


def _hash_path(path: Path) -> str:
    h = hashlib.sha256()
    if path.is_file():
        h.update(path.read_bytes())
    elif path.is_dir():
        for sub in sorted(p for p in path.rglob("*") if p.is_file()):
            h.update(str(sub.relative_to(path)).encode())
            h.update(hashlib.sha256(sub.read_bytes()).digest())
    return h.hexdigest()


def _prepare_out(out: Path, force: bool) -> None:
    if out.exists() and any(out.iterdir()) and not force:
        raise ConfigError(
            f"output directory {out} is not empty; pass --force to overwrite")
    out.mkdir(parents=True, exist_ok=True)


def _write_manifest(out: Path, command: str, cfg: config_mod.Config | None,
                    seed: int | None, inputs: dict[str, Path],
                    extra: dict | None = None) -> None:
    manifest = {
        "command": command,
        "package_version": __version__,
        "seed": seed,
        "config": config_mod.to_dict(cfg) if cfg is not None else None,
        "inputs": {name: {"path": str(p), "sha256": _hash_path(Path(p))}
                   for name, p in inputs.items()},
        "created_unix": time.time(),
    }
    if extra:
        manifest.update(extra)
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2,
                                                  sort_keys=True) + "\n")


def _load_config(path: str | None, overrides: dict | None = None) -> config_mod.Config:
    cfg = config_mod.load(path) if path else config_mod.Config()
    if overrides:
        payload = config_mod.to_dict(cfg)
        for section, values in overrides.items():
            payload.setdefault(section, {}).update(values)
        cfg = config_mod.from_dict(payload)
    return cfg


def _data_dir(args) -> Path:
    if args.data:
        return Path(args.data)
    env = os.environ.get(ENV_DATA_DIR)
    if env:
        return Path(env)
    raise ConfigError(f"--data not given and {ENV_DATA_DIR} is not set")


def _load_model(checkpoint_path: Path, config_path: str | None) -> MMST:
    if config_path:
        cfg = config_mod.load(config_path)
    else:
        sibling = checkpoint_path.parent / "config.json"
        if not sibling.exists():
            raise ConfigError(
                f"no --config given and {sibling} not found next to checkpoint")
        cfg = config_mod.load(sibling)
    model = MMST(cfg, seed=cfg.train.seed)
    model.load(checkpoint_path)
    return model


def _parse_k_list(text: str) -> list[int]:
    try:
        ks = [int(part) for part in text.split(",") if part.strip() != ""]
    except ValueError:
        raise ConfigError(f"invalid k list {text!r}") from None
    if not ks or any(k < 1 for k in ks):
        raise ConfigError(f"k values must be >= 1, got {text!r}")
    return ks


# -- commands -----------------------------------------------------------------


def cmd_gen_data(args) -> int:
    cfg = _load_config(args.config)
    out = Path(args.out)
    _prepare_out(out, args.force)
    _write_manifest(out, "gen-data", cfg, args.seed, {})
    summary = data_mod.build_dataset(args.seed, cfg, out, n_scenes=args.scenes)
    print(f"scenes: {summary['scenes']}")
    for name in data_mod.SPLIT_NAMES:
        print(f"{name} examples: {summary[name]}")
    return 0


def cmd_train(args) -> int:
    overrides = {"train": {"seed": args.seed}} if args.seed is not None else {}
    if args.epochs is not None:
        overrides.setdefault("train", {})["epochs"] = args.epochs
    if args.mon_n is not None:
        overrides.setdefault("loss", {})["n_train"] = args.mon_n
    cfg = _load_config(args.config, overrides)
    data_dir = _data_dir(args)
    out = Path(args.out)
    _prepare_out(out, args.force)
    config_mod.dump(cfg, out / "config.json")
    model_probe = MMST(cfg, seed=cfg.train.seed)
    _write_manifest(out, "train", cfg, cfg.train.seed,
                    {"data": data_dir},
                    extra={"n_parameters": model_probe.n_parameters(),
                           "reference_n_parameters":
                               training.REFERENCE_PARAM_COUNT,
                           "reference_label": training.REFERENCE_LABEL})
    del model_probe
    best_path, history = training.fit(cfg, data_dir, out)
    plots = out / "plots"
    plots.mkdir(exist_ok=True)
    report.plot_history(history.epochs, plots / "history.svg")
    print(f"best checkpoint: {best_path}")
    print(f"final val minADE_{cfg.train.val_k}: "
          f"{history.epochs[-1]['val_min_ade']:.3f} m")
    return 0


def cmd_eval(args) -> int:
    ks = _parse_k_list(args.k)
    data_dir = _data_dir(args)
    out = Path(args.out)
    _prepare_out(out, args.force)
    model = _load_model(Path(args.checkpoint), args.config)
    _write_manifest(out, "eval", model.cfg, args.seed,
                    {"data": data_dir, "checkpoint": Path(args.checkpoint)})
    examples = data_mod.load_split(data_dir / "cache", args.split)
    rows = training.metric_table(model, examples, ks, args.seed, args.mode)
    metrics_dir = out / "metrics"
    metrics_dir.mkdir(exist_ok=True)
    csv_path = metrics_dir / "metrics.csv"
    report.write_csv(csv_path, rows,
                     ["k", "minADE", "minFDE", "n_examples", "distance_kind"])
    plots = out / "plots"
    plots.mkdir(exist_ok=True)
    report.plot_metric_curves(rows, plots / "metrics.svg",
                              title=f"{args.split} displacement error")
    for row in rows:
        print(f"k={row['k']}: minADE={row['minADE']:.3f} "
              f"minFDE={row['minFDE']:.3f}")
    print(f"wrote {csv_path}")
    return 0


def cmd_sample(args) -> int:
    if args.k < 1:
        raise ConfigError(f"--k must be >= 1, got {args.k}")
    data_dir = _data_dir(args)
    out = Path(args.out)
    _prepare_out(out, args.force)
    model = _load_model(Path(args.checkpoint), args.config)
    _write_manifest(out, "sample", model.cfg, args.seed,
                    {"data": data_dir, "checkpoint": Path(args.checkpoint)})
    examples = data_mod.load_split(data_dir / "cache", args.split)
    matches = [e for e in examples if e.example_id == args.example]
    if not matches:
        raise DataError(f"example {args.example!r} not found in split "
                        f"{args.split!r}")
    example = matches[0]
    batch = training.assemble_batch([example])
    preds = model.predict(batch, args.k, args.seed)[0]  # (k, T, 2)
    rows = []
    for s in range(args.k):
        for step in range(preds.shape[1]):
            rows.append({"example_id": example.example_id, "sample_id": s,
                         "step": step + 1, "x": float(preds[s, step, 0]),
                         "y": float(preds[s, step, 1])})
    csv_path = out / "predictions.csv"
    report.write_csv(csv_path, rows, ["example_id", "sample_id", "step", "x", "y"])
    report.plot_prediction_overlay(example.past, example.future, preds,
                                   out / "overlay.svg",
                                   title=example.example_id)
    print(f"wrote {csv_path} with {len(rows)} rows and overlay.svg")
    return 0


def cmd_gradcheck(args) -> int:
    ok = gradcheck_mod.run_suite(n_seeds=args.seeds)
    if not ok:
        raise NumericError("gradient check failed")
    print("gradient suite passed")
    return 0


def cmd_ablate(args) -> int:
    out = Path(args.out)
    _prepare_out(out, args.force)
    ref_rows = training.reference_rows(args.kind)
    report.write_csv(out / "reference.csv", ref_rows,
                     ["setting", "k", "minADE", "minFDE", "scale"])

    if args.kind == "mon-n":
        grid = [{"setting": f"n={n}", "parameter": n}
                for n in training.MON_N_GRID]
        eval_ks = (10, 25, 50, 100)
    elif args.kind == "distance":
        grid = [{"setting": kind, "parameter": kind}
                for kind in training.DISTANCE_GRID]
        eval_ks = (10, 25, 50, 100)
    else:
        grid = [{"setting": f"k={k}", "parameter": k}
                for k in training.K_SWEEP_GRID]
        eval_ks = training.K_SWEEP_GRID
    report.write_csv(out / "grid.csv", grid, ["setting", "parameter"])

    if args.dry_run:
        _write_manifest(out, f"ablate-{args.kind}", None, args.seed, {},
                        extra={"dry_run": True,
                               "reference_n_parameters":
                                   training.REFERENCE_PARAM_COUNT,
                               "reference_label": training.REFERENCE_LABEL})
        print(f"dry run: wrote grid.csv ({len(grid)} settings) and "
              f"reference.csv ({len(ref_rows)} reference rows)")
        return 0

    data_dir = _data_dir(args)
    overrides = {}
    if args.epochs is not None:
        overrides = {"train": {"epochs": args.epochs}}
    cfg = _load_config(args.config, overrides)
    _write_manifest(out, f"ablate-{args.kind}", cfg, args.seed,
                    {"data": data_dir},
                    extra={"reference_n_parameters":
                               training.REFERENCE_PARAM_COUNT,
                           "reference_label": training.REFERENCE_LABEL})
    test_examples = data_mod.load_split(data_dir / "cache", "test")
    desk_rows = []

    if args.kind == "k-sweep":
        if not args.checkpoint:
            raise ConfigError("--checkpoint is required for the k-sweep")
        model = _load_model(Path(args.checkpoint), args.config)
        rows = training.metric_table(model, test_examples, eval_ks, args.seed)
        for row in rows:
            desk_rows.append({"setting": "trained", "k": row["k"],
                              "minADE": row["minADE"], "minFDE": row["minFDE"],
                              "scale": training.DESK_LABEL})
    else:
        for entry in grid:
            payload = config_mod.to_dict(cfg)
            if args.kind == "mon-n":
                payload["loss"]["n_train"] = entry["parameter"]
            else:
                payload["loss"]["distance"] = entry["parameter"]
            variant = config_mod.from_dict(payload)
            run_dir = out / f"run_{entry['setting'].replace('=', '')}"
            run_dir.mkdir(exist_ok=True)
            config_mod.dump(variant, run_dir / "config.json")
            best_path, _ = training.fit(variant, data_dir, run_dir,
                                        log=lambda *_: None)
            model = MMST(variant, seed=variant.train.seed)
            model.load(best_path)
            rows = training.metric_table(model, test_examples, eval_ks,
                                         args.seed)
            for row in rows:
                desk_rows.append({"setting": entry["setting"], "k": row["k"],
                                  "minADE": row["minADE"],
                                  "minFDE": row["minFDE"],
                                  "scale": training.DESK_LABEL})
            print(f"{entry['setting']}: done")

    report.write_csv(out / "desk_results.csv", desk_rows,
                     ["setting", "k", "minADE", "minFDE", "scale"])
    report.plot_metric_curves(desk_rows, out / "desk_results.svg",
                              title=f"{args.kind} ablation ({training.DESK_LABEL})",
                              group_key="setting")
    print(f"wrote {out / 'desk_results.csv'}")
    return 0


def cmd_rasterize(args) -> int:
    out = Path(args.out)
    _prepare_out(out, args.force)
    scene = data_mod.load_scene(args.scene)
    track = next((t for t in scene.tracks if t.track_id == args.track), None)
    if track is None:
        raise DataError(f"track {args.track!r} not found in scene")
    if not 0 <= args.index < len(track.poses):
        raise DataError(f"pose index {args.index} out of range "
                        f"(track has {len(track.poses)} poses)")
    cfg = _load_config(args.config)
    _write_manifest(out, "rasterize", cfg, None, {"scene": Path(args.scene)})
    pose = track.poses[args.index]
    chunk = global_chunk(scene.semantic_map, pose, cfg.raster)
    write_pgm(out / "global_chunk.pgm", chunk)
    stack = local_chunk_stack(scene.semantic_map, [pose], cfg.raster, 1)[0]
    for i, name in enumerate(LAYER_TYPES):
        write_pgm(out / f"local_{name}.pgm", stack[i])
    report.plot_scene_overlay(scene.semantic_map, scene.tracks,
                              out / "overlay.svg",
                              title=f"{args.scene} @ {args.track}[{args.index}]")
    print(f"wrote global_chunk.pgm, {len(LAYER_TYPES)} layer PGMs, overlay.svg")
    return 0


# -- argument parsing --------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mmst",
        description="Stochastic multi-modal trajectory prediction pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate synthetic scenes + example cache")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--scenes", type=int, default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a model on a generated dataset")
    p.add_argument("--config", default=None)
    p.add_argument("--data", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--mon-n", type=int, default=None,
                   help="override the MoN training sample count")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="compute minADE/minFDE over stored samples")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", default=None)
    p.add_argument("--split", default="test", choices=data_mod.SPLIT_NAMES)
    p.add_argument("--k", default="1,5,10,20,50,100,200")
    p.add_argument("--mode", default="primary", choices=("primary", "literal"))
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", default=None)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sample", help="dump k sampled trajectories for one example")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", default=None)
    p.add_argument("--split", default="test", choices=data_mod.SPLIT_NAMES)
    p.add_argument("--example", required=True)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", default=None)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    p.add_argument("--seeds", type=int, default=20)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("ablate", help="run an experiment grid")
    p.add_argument("--kind", required=True,
                   choices=("mon-n", "distance", "k-sweep"))
    p.add_argument("--data", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--checkpoint", default=None,
                   help="trained model for the k-sweep")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dry-run", action="store_true",
                   help="write the grid and reference tables without training")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("rasterize", help="dump rasters + overlay for one pose")
    p.add_argument("--scene", required=True)
    p.add_argument("--track", required=True)
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_rasterize)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ContractError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except MmstError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
