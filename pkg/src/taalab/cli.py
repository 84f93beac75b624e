"""Command-line pipeline driver.

Subcommands: ``generate`` (synthesize a dataset), ``train`` (fit the
feed-forward DeepONet on one input variant), ``eval`` (score a predictions
file), ``plot`` (export PNG maps).  Configuration layers, later wins:
built-in defaults < --config JSON file < --set dotted overrides < dedicated
flags.  Every run writes an ``effective_config.json`` snapshot (with the
generator build hash) next to its outputs.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 I/O error.  ``TAALAB_DATA_ROOT`` provides the default dataset root.
"""

from __future__ import annotations

import argparse
import copy
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import deeponet, evaluate, generate, maps, solver, store, wall
from .grf import GrfConfig
from .params import WallParameters

DATA_ROOT_ENV = "TAALAB_DATA_ROOT"

DEFAULTS = {
    "master_seed": 20250809,
    "profiles": 100,
    "combos": 5,
    "workers": 1,
    "grf": {
        "surface_fraction": 0.23,
        "boundary_softness": 0.2,
        "length_circ": 4.5,
        "length_axial": 4.5,
        "boundary_value": 0.0,
        "n_z": 41,
        "n_theta": 40,
    },
    "wall": {},
    "generation": {
        "smoothing_sigma": solver.DEFAULT_SMOOTHING,
        "calibration_target": solver.CALIBRATION_TARGET,
        "calibration_tol": solver.CALIBRATION_TOL,
        "dilatation_range": list(maps.DILATATION_RANGE),
        "distensibility_range": list(maps.DISTENSIBILITY_RANGE),
    },
    "train": {
        "variant": "dD",
        "format": "gray",
        "budget": 20000,
        "batch_size": 64,
        "learning_rate": 1e-3,
        "seed": 0,
        "dtype": "float32",
        "latent_p": deeponet.LATENT_P,
        "branch_hidden": list(deeponet.BRANCH_HIDDEN),
        "trunk_hidden": list(deeponet.TRUNK_HIDDEN),
        "trunk_encoding": "fourier",
        "pixelwise_norm": True,
        "model_id": "",
    },
}


class ConfigError(ValueError):
    pass


def _apply_dotted(config: dict, key: str, raw: str):
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    node = config
    parts = key.split(".")
    for part in parts[:-1]:
        if part not in node or not isinstance(node, dict):
            raise ConfigError(f"unknown config section {key!r}")
        node = node[part]
    leaf = parts[-1]
    if leaf not in node and parts[0] != "wall":
        raise ConfigError(f"unknown config key {key!r}")
    node[leaf] = value


def load_config(args) -> dict:
    config = copy.deepcopy(DEFAULTS)
    if getattr(args, "config", None):
        try:
            with open(args.config, "r", encoding="utf-8") as fh:
                file_cfg = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}") from exc
        for section, value in file_cfg.items():
            if section not in config:
                raise ConfigError(f"unknown config section {section!r}")
            if isinstance(value, dict):
                for k, v in value.items():
                    _apply_dotted(config, f"{section}.{k}", json.dumps(v))
            else:
                _apply_dotted(config, section, json.dumps(value))
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, raw = item.split("=", 1)
        _apply_dotted(config, key, raw)
    return config


def data_root() -> Path:
    return Path(os.environ.get(DATA_ROOT_ENV, "."))


def resolve_dataset(args) -> Path:
    if getattr(args, "dataset", None):
        return Path(args.dataset)
    root = data_root() / "dataset"
    if not (root / "manifest.json").exists():
        raise FileNotFoundError(
            f"no dataset given and {root}/manifest.json does not exist "
            f"(set --dataset or {DATA_ROOT_ENV})")
    return root


def write_snapshot(out_dir, command: str, config: dict):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = {"command": command, "config": config,
               "generator_hash": store.generator_hash()}
    with open(out_dir / "effective_config.json", "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def cmd_generate(args) -> int:
    config = load_config(args)
    if args.profiles is not None:
        config["profiles"] = args.profiles
    if args.combos is not None:
        config["combos"] = args.combos
    if args.seed is not None:
        config["master_seed"] = args.seed
    if args.workers is not None:
        config["workers"] = args.workers

    out_dir = Path(args.out) if args.out else data_root() / "dataset"
    gen = config["generation"]
    cfg = generate.GenerationConfig(
        n_profiles=config["profiles"],
        n_combos=config["combos"],
        master_seed=config["master_seed"],
        grf=GrfConfig(seed=config["master_seed"], **config["grf"]),
        smoothing_sigma=gen["smoothing_sigma"],
        calibration_target=gen["calibration_target"],
        calibration_tol=gen["calibration_tol"],
        dilatation_range=tuple(gen["dilatation_range"]),
        distensibility_range=tuple(gen["distensibility_range"]),
        wall_overrides=config["wall"],
    )
    write_snapshot(out_dir, "generate", config)
    manifest = generate.generate_dataset(out_dir, cfg, workers=config["workers"])
    print(f"generated {manifest.sample_count} samples -> {out_dir} "
          f"(train {len(manifest.train_ids)} / test {len(manifest.test_ids)})")
    return 0


def default_model_id(variant: str, fmt: str) -> str:
    return f"fnn-deeponet-{variant}-{fmt}"


def train_deeponet(dataset_dir, train_cfg: dict):
    """Train one input variant; returns (model, predictions path, metadata)."""
    dataset_dir = Path(dataset_dir)
    manifest, records = store.load_dataset(dataset_dir)
    variant, fmt = train_cfg["variant"], train_cfg["format"]
    model_id = train_cfg["model_id"] or default_model_id(variant, fmt)

    x_train, n_channels = deeponet.assemble_inputs(
        records, manifest.train_ids, variant, fmt)
    x_test, _ = deeponet.assemble_inputs(records, manifest.test_ids, variant, fmt)
    y_train = deeponet.assemble_targets(records, manifest.train_ids)
    norm = deeponet.Normalizer.fit(x_train, n_channels, fmt,
                                   pixelwise=train_cfg.get("pixelwise_norm", True))
    x_train_n = norm.apply(x_train)
    x_test_n = norm.apply(x_test)

    model = deeponet.DeepOnetModel(deeponet.DeepOnetConfig(
        input_size=x_train.shape[1],
        branch_hidden=tuple(train_cfg["branch_hidden"]),
        trunk_hidden=tuple(train_cfg["trunk_hidden"]),
        latent_p=train_cfg["latent_p"],
        trunk_encoding=train_cfg.get("trunk_encoding", "fourier"),
        seed=train_cfg["seed"],
        dtype=train_cfg["dtype"],
    ))
    tc = deeponet.TrainConfig(
        learning_rate=train_cfg["learning_rate"],
        budget=train_cfg["budget"],
        batch_size=train_cfg["batch_size"],
        seed=train_cfg["seed"],
    )
    t0 = time.perf_counter()
    history = deeponet.train(model, x_train_n, y_train, tc)
    wall_seconds = time.perf_counter() - t0

    side = manifest.n_z * manifest.padded_cols
    pred_ce, pred_delta = [], []
    out_ce, out_d = model.forward(x_test_n, deeponet.grid_coordinates(
        manifest.n_z, manifest.padded_cols))
    for row_ce, row_d in zip(out_ce, out_d):
        pred_ce.append(np.asarray(row_ce, dtype="<f4").reshape(
            manifest.n_z, manifest.padded_cols))
        pred_delta.append(np.asarray(row_d, dtype="<f4").reshape(
            manifest.n_z, manifest.padded_cols))
    assert out_ce.shape[1] == side

    pred_dir = store.predictions_dir(dataset_dir)
    pred_dir.mkdir(exist_ok=True)
    pred_path = pred_dir / f"{model_id}.bin"
    store.write_predictions(model_id, manifest.test_ids, pred_ce, pred_delta,
                            pred_path)
    metadata = {
        "model_id": model_id, "variant": variant, "format": fmt,
        "budget": tc.budget, "batch_size": tc.batch_size,
        "learning_rate": tc.learning_rate, "seed": train_cfg["seed"],
        "dtype": train_cfg["dtype"],
        "parameter_count": model.parameter_count(),
        "normalizer": {"shift": norm.shift, "scale": norm.scale,
                       "pixelwise": norm.pixel_shift is not None},
        "final_train_loss": history[-1][1] if history else None,
        "wall_seconds": wall_seconds,
        "generator_hash": store.generator_hash(),
    }
    with open(pred_dir / f"{model_id}.json", "w", encoding="utf-8") as fh:
        json.dump(metadata, fh, indent=2, sort_keys=True)
        fh.write("\n")

    ckpt_dir = dataset_dir / "checkpoints"
    ckpt_dir.mkdir(exist_ok=True)
    extra_tensors = {}
    if norm.pixel_shift is not None:
        extra_tensors = {"norm.pixel_shift": norm.pixel_shift,
                         "norm.pixel_scale": norm.pixel_scale}
    model.save(ckpt_dir / f"{model_id}.ckpt", extra_descriptor=metadata,
               extra_tensors=extra_tensors)
    return model, pred_path, metadata


def cmd_train(args) -> int:
    config = load_config(args)
    tc = config["train"]
    for flag in ("variant", "budget", "batch_size", "seed", "model_id"):
        value = getattr(args, flag, None)
        if value is not None:
            tc[flag] = value
    if args.fmt is not None:
        tc["format"] = args.fmt
    dataset_dir = resolve_dataset(args)
    write_snapshot(dataset_dir / "checkpoints", "train", config)
    _, pred_path, metadata = train_deeponet(dataset_dir, tc)
    print(f"trained {metadata['model_id']} "
          f"({metadata['parameter_count']} parameters, "
          f"{metadata['budget']} updates, {metadata['wall_seconds']:.1f} s) "
          f"-> {pred_path}")
    return 0


def cmd_eval(args) -> int:
    dataset_dir = resolve_dataset(args)
    pred_path = Path(args.predictions) if args.predictions else \
        store.predictions_dir(dataset_dir) / f"{args.model_id}.bin"
    report = evaluate.evaluate_predictions(dataset_dir, pred_path)
    out_dir = Path(args.out) if args.out else dataset_dir / "reports"
    out_dir.mkdir(parents=True, exist_ok=True)
    write_snapshot(out_dir, "eval", load_config(args))
    report_path = out_dir / f"{report.model_id}.json"
    report.save(report_path)
    print(evaluate.render_report_table([report]))
    print(f"report -> {report_path}")
    return 0


def cmd_plot(args) -> int:
    dataset_dir = resolve_dataset(args)
    manifest = store.DatasetManifest.load(dataset_dir)
    out_dir = Path(args.out) if args.out else store.exports_dir(dataset_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_snapshot(out_dir, "plot", load_config(args))
    sid = args.sample or manifest.test_ids[0]
    rec = store.read_sample(store.sample_path(dataset_dir, sid))

    ranges = {"dilatation": manifest.dilatation_range,
              "distensibility": manifest.distensibility_range}
    for kind in ("theta_star", "theta_ce", "theta_delta", "dilatation",
                 "distensibility", "stress_tt", "stress_zz", "shear"):
        fmap = maps.FieldMap(rec.maps[kind], kind)
        maps.write_heat_png(fmap, out_dir / f"{sid}_{kind}.png",
                            vrange=ranges.get(kind))
    for kind in ("dilatation_gray", "distensibility_gray"):
        maps.write_grayscale_png(rec.maps[kind], out_dir / f"{sid}_{kind}.png")

    if args.predictions:
        model_id, preds = store.read_predictions(args.predictions)
        if sid not in preds:
            raise store.PredictionIdError(f"{sid} not in {args.predictions}")
        truth = {sid: (rec.maps["theta_ce"], rec.maps["theta_delta"])}
        err = evaluate.abs_error_maps({sid: preds[sid]}, truth)[sid]
        for fmap in err:
            maps.write_heat_png(fmap, out_dir / f"{sid}_{model_id}_{fmap.kind}.png")
    print(f"plots -> {out_dir}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="taalab",
        description="Synthetic TAA lab: generate insult-driven vessels, train "
                    "the DeepONet inverter, score predictions, export plots.")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="dotted config override, e.g. grf.surface_fraction=0.3")

    g = sub.add_parser("generate", parents=[common],
                       help="synthesize a calibrated dataset")
    g.add_argument("--out", help=f"output directory (default ${DATA_ROOT_ENV}/dataset)")
    g.add_argument("--profiles", type=int)
    g.add_argument("--combos", type=int)
    g.add_argument("--seed", type=int)
    g.add_argument("--workers", type=int)
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", parents=[common],
                       help="train the feed-forward DeepONet on one variant")
    t.add_argument("--dataset")
    t.add_argument("--variant", choices=deeponet.VARIANTS)
    t.add_argument("--format", dest="fmt", choices=deeponet.FORMATS)
    t.add_argument("--budget", type=int)
    t.add_argument("--batch-size", dest="batch_size", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--model-id", dest="model_id")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", parents=[common], help="score a predictions file")
    e.add_argument("--dataset")
    e.add_argument("--predictions", help="path to a predictions .bin file")
    e.add_argument("--model-id", dest="model_id",
                   help="model id under <dataset>/predictions/")
    e.add_argument("--out", help="report directory")
    e.set_defaults(func=cmd_eval)

    p = sub.add_parser("plot", parents=[common], help="export PNG maps")
    p.add_argument("--dataset")
    p.add_argument("--sample", help="sample id (default: first test sample)")
    p.add_argument("--predictions", help="optional predictions file for error maps")
    p.add_argument("--out")
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "eval" and not (args.predictions or args.model_id):
        parser.error("eval needs --predictions or --model-id")
    try:
        return args.func(args)
    except (OSError, store.StoreFormatError, store.PredictionIdError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 4
    except (solver.VesselSolveError, solver.CalibrationError,
            deeponet.TrainingDivergence, wall.EnergyOverflowError,
            np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except (ConfigError, ValueError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
