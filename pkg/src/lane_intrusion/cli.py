"""Command-line entry point: ``lane-intrusion <command> [options]``.

Settings come from built-in defaults, then an optional JSON config file
(``--config``), then per-field flags such as ``--train-epochs 50``.
Exit status is 0 on success, 2 for configuration errors and 3 for data errors.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import fields

import numpy as np

from . import harness
from .geometry import CameraIntrinsics
from .ingest import parse_frames
from .normalize import VARIANTS, series_from_frames
from .psrnet import PSRNet, PSRNetConfig, dumps_checkpoint
from .scenegen import DatasetConfig, InvalidConfig, SensorConfig, generate_dataset

EXIT_OK, EXIT_CONFIG, EXIT_DATA = 0, 2, 3


class ConfigError(ValueError):
    pass


# -- configuration -------------------------------------------------------------

DEFAULTS = {
    "dataset": {
        "n_per_class": 50,
        "seed": 0,
        "lane_width_m": 3.5,
        "object_range_m": [150.0, 250.0],
        "ego_speed_mps": 20.0,
        "lateral_speed_mps": [0.8, 1.3],
        "yaw_amplitude_deg": 3.0,
        "yaw_wander_deg": 0.5,
        "yaw_wander_period_s": [4.0, 10.0],
        "camera_offset_m": [-1.0, 1.0],
        "frame_count": 32,
        "frame_rate_hz": 10.0,
        "focal_px": 8000.0,
        "image_width": 1920,
        "image_height": 1080,
        "pixel_noise_sigma": 2.0,
        "miss_rate": 0.05,
        "clutter_rate": 0.5,
        "marking_points_per_frame": 8,
    },
    "preprocess": {f.name: f.default for f in fields(harness.PreprocConfig)},
    "model": {"n_orders": 4, "recon_channels": 8, "classifier_channels": [16, 32], "pool": True},
    "train": {f.name: f.default for f in fields(harness.TrainConfig)},
    "crossval": {"folds": 3},
    "ablation": {"orders": [0, 1, 2, 3, 4], "folds": [3, 5, 7], "seeds": [0]},
}


def _check_type(section, key, value, default):
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, int):
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif isinstance(default, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
    elif isinstance(default, list):
        ok = isinstance(value, list) and all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in value)
    else:
        ok = isinstance(value, type(default))
    if not ok:
        raise ConfigError(f"{section}.{key}: expected {type(default).__name__}, got {value!r}")


def merge_config(base, override):
    out = {s: dict(v) for s, v in base.items()}
    for section, values in override.items():
        if section not in out:
            raise ConfigError(f"unknown config section {section!r}")
        if not isinstance(values, dict):
            raise ConfigError(f"config section {section!r} must be an object")
        for key, value in values.items():
            if key not in out[section]:
                raise ConfigError(f"unknown config field {section}.{key}")
            _check_type(section, key, value, DEFAULTS[section][key])
            out[section][key] = value
    return out


def load_config(path=None):
    cfg = merge_config(DEFAULTS, {})
    if path:
        try:
            with open(path, encoding="utf-8") as fh:
                user = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from None
        if not isinstance(user, dict):
            raise ConfigError(f"{path}: top level must be an object")
        cfg = merge_config(cfg, user)
    return cfg


def _flag(section, key):
    return f"--{section}-{key}".replace("_", "-")


def _dest(section, key):
    return f"cfg__{section}__{key}"


def _add_config_flags(p):
    g = p.add_argument_group("config overrides")
    for section, values in DEFAULTS.items():
        for key, default in values.items():
            kw = {"dest": _dest(section, key), "default": None, "metavar": key.upper()}
            if isinstance(default, bool):
                kw["type"] = _parse_bool
                kw["metavar"] = "BOOL"
            elif isinstance(default, list):
                kw["type"] = float if any(isinstance(v, float) for v in default) else int
                kw["nargs"] = "+"
            else:
                kw["type"] = type(default)
            g.add_argument(_flag(section, key), **kw)


def _parse_bool(text):
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"not a boolean: {text!r}")


def resolve_config(args):
    cfg = load_config(args.config)
    override = {}
    for section, values in DEFAULTS.items():
        for key in values:
            v = getattr(args, _dest(section, key), None)
            if v is not None:
                override.setdefault(section, {})[key] = v
    return merge_config(cfg, override)


def dataset_settings(cfg):
    d = cfg["dataset"]
    try:
        ranges = DatasetConfig(
            lane_width_m=float(d["lane_width_m"]),
            object_range_m=tuple(map(float, d["object_range_m"])),
            ego_speed_mps=float(d["ego_speed_mps"]),
            lateral_speed_mps=tuple(map(float, d["lateral_speed_mps"])),
            yaw_amplitude_deg=float(d["yaw_amplitude_deg"]),
            yaw_wander_deg=float(d["yaw_wander_deg"]),
            yaw_wander_period_s=tuple(map(float, d["yaw_wander_period_s"])),
            camera_offset_m=tuple(map(float, d["camera_offset_m"])),
            frame_count=int(d["frame_count"]),
            frame_rate_hz=float(d["frame_rate_hz"]),
        )
        f = float(d["focal_px"])
        sensor = SensorConfig(
            intrinsics=CameraIntrinsics(f, f, d["image_width"] / 2.0, d["image_height"] / 2.0),
            pixel_noise_sigma=float(d["pixel_noise_sigma"]),
            miss_rate=float(d["miss_rate"]),
            clutter_rate=float(d["clutter_rate"]),
            marking_points_per_frame=int(d["marking_points_per_frame"]),
            image_width=int(d["image_width"]),
            image_height=int(d["image_height"]),
        ).validate()
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"dataset: {exc}") from None
    for name in ("object_range_m", "lateral_speed_mps", "yaw_wander_period_s", "camera_offset_m"):
        if len(d[name]) != 2:
            raise ConfigError(f"dataset.{name} must have two values")
    return ranges, sensor


def preproc_settings(cfg):
    p = cfg["preprocess"]
    if p["variant"] not in VARIANTS:
        raise ConfigError(f"preprocess.variant must be one of {VARIANTS}")
    try:
        pre = harness.PreprocConfig(**p)
        pre.kalman()
    except ValueError as exc:
        raise ConfigError(f"preprocess: {exc}") from None
    if pre.stride < 1:
        raise ConfigError("preprocess.stride must be >= 1")
    return pre


def model_settings(cfg):
    m = cfg["model"]
    if len(m["classifier_channels"]) != 2:
        raise ConfigError("model.classifier_channels must have two values")
    try:
        return PSRNetConfig(
            n_orders=int(m["n_orders"]),
            recon_channels=int(m["recon_channels"]),
            classifier_channels=tuple(int(c) for c in m["classifier_channels"]),
            lam=float(cfg["train"]["lam"]),
            pool=bool(m["pool"]),
        )
    except ValueError as exc:
        raise ConfigError(f"model: {exc}") from None


def train_settings(cfg):
    try:
        return harness.TrainConfig(**cfg["train"])
    except ValueError as exc:
        raise ConfigError(f"train: {exc}") from None


# -- commands ------------------------------------------------------------------


def _write(path, text):
    d = os.path.dirname(os.fspath(path))
    if d:
        os.makedirs(d, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def _log(msg):
    print(msg, file=sys.stderr, flush=True)


def cmd_generate(args, cfg):
    ranges, sensor = dataset_settings(cfg)
    d = cfg["dataset"]
    if d["n_per_class"] < 1:
        raise ConfigError("dataset.n_per_class must be >= 1")
    try:
        digest = generate_dataset(args.out, d["n_per_class"], d["seed"], ranges, sensor)
    except InvalidConfig as exc:
        raise ConfigError(str(exc)) from None
    print(f"wrote {3 * d['n_per_class']} samples to {args.out} (sha256 {digest})")


def cmd_preprocess(args, cfg):
    pre = preproc_settings(cfg)
    if args.frames:
        with open(args.frames, "rb") as fh:
            frames = parse_frames(fh)
        series = series_from_frames(frames, pre.variant, gate_px=pre.gate_px, kalman=pre.kalman(), image_width=pre.image_width)
        text = series.to_csv()
        if args.out:
            _write(args.out, text)
        else:
            sys.stdout.write(text)
        return
    if not args.data or not args.out_dir:
        raise ConfigError("preprocess needs --frames, or --data with --out-dir")
    samples = harness.load_dataset(args.data)
    series = harness.extract_series(samples, pre)
    for i, s in enumerate(series):
        _write(os.path.join(args.out_dir, f"sample_{i:04d}.csv"), s.to_csv())
    _write(os.path.join(args.out_dir, "manifest.json"), harness.dumps_json(harness.manifest("preprocess", cfg, args.data)))
    print(f"wrote {len(series)} series to {args.out_dir}")


def _series(args, cfg):
    return harness.extract_series(harness.load_dataset(args.data), preproc_settings(cfg))


def cmd_train(args, cfg):
    pre = preproc_settings(cfg)
    tcfg, mcfg = train_settings(cfg), model_settings(cfg)
    series = _series(args, cfg)
    x, y = harness.training_windows(series, pre.stride)
    res = harness.train(x, y, tcfg, mcfg)
    _write(args.out, dumps_checkpoint(res.model))
    if args.loss_csv:
        _write(args.loss_csv, harness.loss_curve_csv(res.curve))
    print(f"trained on {len(x)} windows from {len(series)} samples; final loss {res.curve[-1].total:.6f}")


def cmd_eval(args, cfg):
    try:
        model = PSRNet.load(args.model)
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise harness.DataError(f"cannot load model {args.model}: {exc}") from None
    rep = harness.evaluate(model, _series(args, cfg))
    if args.out:
        _write(args.out, rep.to_csv())
    print(rep.table())


def cmd_crossval(args, cfg):
    tcfg, mcfg = train_settings(cfg), model_settings(cfg)
    pre = preproc_settings(cfg)
    k = cfg["crossval"]["folds"]
    series = _series(args, cfg)
    rep = harness.crossval(series, k, tcfg, mcfg, pre.stride, progress=lambda f, a: _log(f"fold {f}: {a:.2f}%"))
    out = args.out_dir
    _write(os.path.join(out, "metrics.csv"), rep.to_csv())
    _write(os.path.join(out, "confusion.csv"), rep.confusion_csv())
    for f, curve in enumerate(rep.loss_curves):
        _write(os.path.join(out, f"loss_fold{f}.csv"), harness.loss_curve_csv(curve))
    _write(os.path.join(out, "manifest.json"), harness.dumps_json(harness.manifest("crossval", cfg, args.data)))
    print(rep.table())


def cmd_ablate_orders(args, cfg):
    tcfg, mcfg = train_settings(cfg), model_settings(cfg)
    pre = preproc_settings(cfg)
    ab = cfg["ablation"]
    series = _series(args, cfg)
    grid = harness.ablation_orders(
        series, ab["orders"], ab["folds"], ab["seeds"], tcfg, mcfg, pre.stride,
        progress=lambda n, k, s, r: _log(f"order {n} {k}-fold seed {s}: {r.summary()}"),
    )
    _write(os.path.join(args.out_dir, "orders.csv"), grid.to_csv())
    _write(os.path.join(args.out_dir, "manifest.json"), harness.dumps_json(harness.manifest("ablate-orders", cfg, args.data)))
    print(grid.table())


def cmd_ablate_preproc(args, cfg):
    tcfg, mcfg = train_settings(cfg), model_settings(cfg)
    pre = preproc_settings(cfg)
    ab = cfg["ablation"]
    samples = harness.load_dataset(args.data)
    grid = harness.ablation_preproc(
        samples, ab["folds"], ab["seeds"], tcfg, mcfg, pre,
        progress=lambda v, k, s, r: _log(f"{v} {k}-fold seed {s}: {r.summary()}"),
    )
    _write(os.path.join(args.out_dir, "preproc.csv"), grid.to_csv())
    _write(os.path.join(args.out_dir, "manifest.json"), harness.dumps_json(harness.manifest("ablate-preproc", cfg, args.data)))
    print(grid.table())


def _read_csv_columns(path):
    import csv

    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2:
        raise harness.DataError(f"{path}: no data rows")
    head = rows[0]
    cols = {h: [] for h in head}
    for r in rows[1:]:
        for h, v in zip(head, r):
            cols[h].append(float(v) if v not in ("",) else np.nan)
    return head, {h: np.asarray(v) for h, v in cols.items()}


def cmd_plot(args, cfg):
    head, cols = _read_csv_columns(args.input)
    if "p_r" in cols:
        x_name, ys = "frame_index", ["p_r"]
    elif "total" in cols:
        x_name, ys = "epoch", [h for h in head if h != "epoch"]
    else:
        raise harness.DataError(f"{args.input}: expected a series or loss-curve CSV")
    if args.out.endswith(".csv"):
        import csv
        import io

        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([x_name, *ys])
        for i in range(len(cols[x_name])):
            w.writerow([int(cols[x_name][i]), *(repr(float(cols[y][i])) for y in ys)])
        _write(args.out, buf.getvalue())
        return
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "lane-intrusion"
    fig, ax = plt.subplots(figsize=(6, 3.5))
    for y in ys:
        ax.plot(cols[x_name], cols[y], label=y)
    if "p_r" in cols:
        for edge in (-0.5, 0.5):
            ax.axhline(edge, color="k", linestyle="--", linewidth=0.8)
        ax.set_ylabel("relative position")
    else:
        ax.set_yscale("log")
        ax.set_ylabel("loss")
        ax.legend()
    ax.set_xlabel(x_name.replace("_", " "))
    fig.tight_layout()
    fig.savefig(args.out, format="svg", metadata={"Date": None})
    plt.close(fig)


COMMANDS = {
    "generate": cmd_generate,
    "preprocess": cmd_preprocess,
    "train": cmd_train,
    "eval": cmd_eval,
    "crossval": cmd_crossval,
    "ablate-orders": cmd_ablate_orders,
    "ablate-preproc": cmd_ablate_preproc,
    "plot": cmd_plot,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="lane-intrusion", description="Lane-intrusion recognition from detection tracks.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="JSON config file")
        _add_config_flags(p)
        return p

    p = add("generate", "synthesize a labeled detection dataset (JSONL)")
    p.add_argument("--out", required=True)
    p = add("preprocess", "turn detections into motion-series CSV")
    p.add_argument("--frames", help="one clip of detection frames (JSONL)")
    p.add_argument("--out", help="series CSV for --frames (default stdout)")
    p.add_argument("--data", help="dataset JSONL")
    p.add_argument("--out-dir")
    p = add("train", "train on a whole dataset and save a checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--loss-csv")
    p = add("eval", "score a checkpoint on a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--out")
    for name, text in (
        ("crossval", "k-fold cross-validation"),
        ("ablate-orders", "cross-validate each reconstruction order"),
        ("ablate-preproc", "cross-validate raw, normalized and filtered inputs"),
    ):
        p = add(name, text)
        p.add_argument("--data", required=True)
        p.add_argument("--out-dir", required=True)
    p = add("plot", "render a series or loss-curve CSV as SVG (or CSV)")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    try:
        cfg = resolve_config(args)
        COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        _log(f"config error: {exc}")
        return EXIT_CONFIG
    except (harness.DataError, OSError, ValueError, RuntimeError) as exc:
        _log(f"data error: {exc}")
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
