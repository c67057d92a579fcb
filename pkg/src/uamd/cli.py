"""``uamd`` command line: data generation, noise labels, training, evaluation and inference.

Settings come from an INI file (``--config``) with sections ``[model]``,
``[train]``, ``[loss]`` and ``[sgm]``; command-line flags override file values.
Exit codes: 0 success, 2 usage, 3 I/O or format, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import configparser
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .data import (
    SYNTH_CALIBRATION,
    Calibration,
    StereoSample,
    load_dataset,
    load_noise_labels,
    read_depth,
    read_image,
    save_sample,
    synth_dataset,
    write_depth,
)
from .data.depth_io import read_calibration
from .eval import FailureKind, evaluate, fallback_combo, write_report
from .losses import LossWeights, PhotometricConfig
from .network import CheckpointError, ModalCombo, NetworkConfig, forward, load_checkpoint
from .sgm import SgmConfig, generate_noise_labels
from .training import MODAL_DROPOUT, TrainConfig, TrainingDiverged, fit

log = logging.getLogger("uamd")

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4
THREADS_ENV = "UAMD_THREADS"
FAILURE_CHOICES = ("half_h", "half_v", "full", "rotation", "lidar")
COMBO_CHOICES = tuple(c.key for c in ModalCombo)


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_USAGE):
        super().__init__(message)
        self.code = code


def _int_list(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.replace(",", " ").split())


def _schedule(text: str) -> tuple[tuple[float, float], ...] | None:
    """``"10:0.5, 14:0.1"`` -> ((10, 0.5), (14, 0.1)); empty means constant, ``default`` the mode's own."""
    if text.strip().lower() == "default":
        return None
    pairs = []
    for item in text.replace(",", " ").split():
        at, _, mult = item.partition(":")
        pairs.append((float(at), float(mult)))
    return tuple(pairs)


# section -> key -> parser; defaults are those of the matching config classes
CONFIG_KEYS = {
    "model": {"max_disparity": int, "feature_scale": int, "branch_channels": _int_list,
              "aggregated_channels": int, "min_disparity_eps": float, "max_depth_m": float, "dtype": str},
    "train": {"mode": str, "combo": str, "lr0": float, "lr_schedule": _schedule, "batch_size": int,
              "steps": int, "seed": int, "checkpoint_every": int},
    "loss": {"w_l": float, "w_p": float, "w_g": float, "w_n": float, "alpha": float, "ssim_window": int},
    "sgm": {"max_disp": int, "p1": float, "p2": float, "num_paths": int, "cost_kind": str,
            "lr_check_tol": int},
}


@dataclass
class RunConfig:
    model: NetworkConfig = field(default_factory=NetworkConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    sgm: SgmConfig = field(default_factory=SgmConfig)

    def to_ini(self) -> str:
        t = self.train
        sections = {
            "model": {k: (",".join(map(str, v)) if isinstance(v, list) else v)
                      for k, v in self.model.to_dict().items()},
            "train": {"mode": t.mode, "combo": t.combo, "lr0": t.lr0,
                      "lr_schedule": "default" if t.lr_schedule is None
                      else ", ".join(f"{a:g}:{m:g}" for a, m in t.lr_schedule),
                      "batch_size": t.batch_size, "steps": t.steps, "seed": t.seed,
                      "checkpoint_every": t.checkpoint_every},
            "loss": {"w_l": t.weights.w_l, "w_p": t.weights.w_p, "w_g": t.weights.w_g, "w_n": t.weights.w_n,
                     "alpha": t.photometric.alpha, "ssim_window": t.photometric.ssim_window},
            "sgm": self.sgm.to_dict(),
        }
        lines = []
        for name, values in sections.items():
            lines.append(f"[{name}]")
            lines.extend(f"{k} = {v}" for k, v in values.items())
            lines.append("")
        return "\n".join(lines)


def read_config_file(path: str | Path | None) -> dict[str, dict[str, object]]:
    """Parsed values per section; unknown sections or keys are usage errors."""
    values: dict[str, dict[str, object]] = {name: {} for name in CONFIG_KEYS}
    if path is None:
        return values
    path = Path(path)
    parser = configparser.ConfigParser(interpolation=None)
    try:
        with open(path) as handle:
            parser.read_file(handle)
    except OSError as exc:
        raise CliError(f"cannot read config {path}: {exc}", EXIT_USAGE) from None
    except configparser.Error as exc:
        raise CliError(f"malformed config {path}: {exc}") from None
    for section in parser.sections():
        if section not in CONFIG_KEYS:
            raise CliError(f"{path}: unknown section [{section}]; expected {', '.join(CONFIG_KEYS)}")
        for key, raw in parser.items(section):
            if key not in CONFIG_KEYS[section]:
                raise CliError(f"{path}: unknown key {key!r} in [{section}]")
            try:
                values[section][key] = CONFIG_KEYS[section][key](raw)
            except ValueError:
                raise CliError(f"{path}: bad value {raw!r} for {section}.{key}") from None
    return values


def build_config(path: str | Path | None, overrides: dict[str, dict[str, object]] | None = None) -> RunConfig:
    """File values, then non-None ``overrides``, on top of the library defaults."""
    values = read_config_file(path)
    for section, items in (overrides or {}).items():
        values[section].update({k: v for k, v in items.items() if v is not None})
    model, train, loss, sgm = (values[k] for k in ("model", "train", "loss", "sgm"))
    try:
        weights = LossWeights(**{k: loss[k] for k in ("w_l", "w_p", "w_g", "w_n") if k in loss})
        photometric = PhotometricConfig(**{k: loss[k] for k in ("alpha", "ssim_window") if k in loss})
        return RunConfig(
            model=NetworkConfig(**model),
            train=TrainConfig(weights=weights, photometric=photometric, **train),
            sgm=SgmConfig(**sgm),
        )
    except ValueError as exc:
        raise CliError(str(exc)) from None


def _read(kind: str, fn, path):
    try:
        return fn(path)
    except FileNotFoundError:
        raise CliError(f"{kind} not found: {path}", EXIT_USAGE) from None
    except (OSError, ValueError) as exc:
        raise CliError(f"cannot read {kind} {path}: {exc}", EXIT_IO) from None


def _load_data(root: str, split: str) -> list[StereoSample]:
    split_dir = Path(root) / split
    if not split_dir.is_dir():
        raise CliError(f"data directory not found: {split_dir}")
    try:
        return load_dataset(root, split)
    except ValueError as exc:
        raise CliError(str(exc), EXIT_IO) from None


def _load_checkpoint(path: str):
    return _read("checkpoint", load_checkpoint, path)


def cmd_gen_data(args) -> int:
    cfg = build_config(args.config)
    fs = cfg.model.feature_scale
    if args.height % fs or args.width % fs:
        raise CliError(f"height and width must be divisible by feature_scale {fs}, "
                       f"got {args.height}x{args.width}")
    if args.count < 1:
        raise CliError("count must be >= 1")
    try:
        scenes = synth_dataset(args.count, args.height, args.width, args.planes, args.max_disp, args.seed,
                               min_disp=args.min_disp, keep_fraction=args.keep_fraction)
    except ValueError as exc:
        raise CliError(str(exc)) from None
    out = Path(args.out) / args.split
    try:
        for sample, truth in scenes:
            save_sample(sample, out, disparity=truth.disparity_left.astype(np.float64))
    except OSError as exc:
        raise CliError(f"cannot write dataset to {out}: {exc}", EXIT_IO) from None
    log.info("wrote %d samples to %s", len(scenes), out)
    return EXIT_OK


def cmd_gen_noise(args) -> int:
    cfg = build_config(args.config, {"sgm": {"max_disp": args.max_disp, "p1": args.p1, "p2": args.p2,
                                             "num_paths": args.paths, "cost_kind": args.cost,
                                             "lr_check_tol": args.lr_tol}})
    samples = _load_data(args.data, args.split)
    try:
        report = generate_noise_labels(samples, cfg.sgm, args.out)
    except OSError as exc:
        raise CliError(f"cannot write noise labels to {args.out}: {exc}", EXIT_IO) from None
    log.info("wrote %d noise maps, %d failed", len(report.written), len(report.failed))
    if not report.written:
        raise CliError("no noise labels could be generated", EXIT_NUMERIC)
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = build_config(args.config, {
        "train": {"mode": args.mode, "combo": args.combo, "steps": args.steps, "batch_size": args.batch_size,
                  "lr0": args.lr, "seed": args.seed, "checkpoint_every": args.checkpoint_every}})
    samples = _load_data(args.data, args.split)
    noise = None
    if args.noise is not None:
        if cfg.train.mode != "semi":
            raise CliError("--noise only applies to semi-supervised training")
        if not Path(args.noise).is_dir():
            raise CliError(f"noise directory not found: {args.noise}")
        noise = _read("noise labels", lambda p: load_noise_labels(p, samples), args.noise)
    out = Path(args.out)
    log_path = Path(args.log) if args.log else out.with_suffix(".csv")
    try:
        out.parent.mkdir(parents=True, exist_ok=True)
        fit(samples, cfg.train, cfg.model, noise_labels=noise, csv_path=log_path, checkpoint=out)
    except ValueError as exc:
        raise CliError(str(exc)) from None
    except OSError as exc:
        raise CliError(f"cannot write training output: {exc}", EXIT_IO) from None
    log.info("checkpoint %s, loss log %s", out, log_path)
    return EXIT_OK


def cmd_eval(args) -> int:
    params, net = _load_checkpoint(args.ckpt)
    samples = _load_data(args.data, args.split)
    failure = None if args.failure is None else FailureKind.parse(args.failure, args.angle)
    if args.combo is None and failure is None:
        raise CliError("give --combo, or --failure to evaluate its fallback combo")
    used = fallback_combo(failure) if args.combo is None else ModalCombo.parse(args.combo)
    try:
        report = evaluate(params, samples, net, used, failure)
    except ValueError as exc:
        raise CliError(str(exc), EXIT_NUMERIC) from None
    try:
        write_report(args.report, [(used, failure, report)])
    except OSError as exc:
        raise CliError(f"cannot write report {args.report}: {exc}", EXIT_IO) from None
    print(f"{used.key} {failure.name if failure else 'none'}: RMSE {report.rmse_mm:.3f} mm, "
          f"MAE {report.mae_mm:.3f} mm, iRMSE {report.irmse_per_km:.3f} /km, "
          f"iMAE {report.imae_per_km:.3f} /km over {report.n_valid} px")
    return EXIT_OK


def cmd_infer(args) -> int:
    combo = ModalCombo.parse(args.combo)
    if combo.uses_lidar and args.lidar is None:
        raise CliError(f"{combo.key} needs --lidar")
    if combo.uses_stereo and args.right is None:
        raise CliError(f"{combo.key} needs --right")
    params, net = _load_checkpoint(args.ckpt)
    left = _read("image", read_image, args.left)
    right = np.zeros_like(left) if args.right is None else _read("image", read_image, args.right)
    h, w = left.shape[1:]
    sparse = np.zeros((h, w), dtype=np.float32) if args.lidar is None else _read("depth", read_depth, args.lidar)
    if args.calib is not None:
        calib = _read("calibration", read_calibration, args.calib)
    else:
        try:
            calib = Calibration(args.focal, args.baseline)
        except ValueError as exc:
            raise CliError(str(exc)) from None
    try:
        # the ground-truth slot is never read by the network; reuse the LiDAR map to satisfy the container
        sample = StereoSample(left, right, sparse, np.zeros_like(sparse), sparse.copy(), calib, Path(args.left).stem)
        depth = forward(sample, combo, params, net, side="left").depth.values
    except ValueError as exc:
        raise CliError(str(exc)) from None
    if not np.all(np.isfinite(depth)):
        raise CliError("prediction contains non-finite depth", EXIT_NUMERIC)
    depth = np.where(depth <= net.max_depth_m, depth, 0.0)
    try:
        write_depth(args.out, depth)
    except OSError as exc:
        raise CliError(f"cannot write {args.out}: {exc}", EXIT_IO) from None
    return EXIT_OK


def cmd_config(args) -> int:
    print(build_config(args.config).to_ini(), end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="uamd", description=__doc__,
                                 formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write a synthetic stereo/LiDAR dataset")
    p.add_argument("--out", required=True, help="dataset root")
    p.add_argument("--split", default="train")
    p.add_argument("--count", type=int, default=5)
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--width", type=int, default=128)
    p.add_argument("--max-disp", type=int, default=24)
    p.add_argument("--min-disp", type=int, default=1)
    p.add_argument("--planes", type=int, default=3)
    p.add_argument("--keep-fraction", type=float, default=0.05, help="LiDAR density")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", help="INI file; only [model] feature_scale is used")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("gen-noise", help="semi-global matching noise labels")
    p.add_argument("--data", required=True, help="dataset root")
    p.add_argument("--split", default="train")
    p.add_argument("--out", required=True, help="directory for <id>_noise.png")
    p.add_argument("--config")
    p.add_argument("--max-disp", type=int)
    p.add_argument("--p1", type=float)
    p.add_argument("--p2", type=float)
    p.add_argument("--paths", type=int, choices=(4, 8))
    p.add_argument("--cost", choices=("census", "sad"))
    p.add_argument("--lr-tol", type=int)
    p.set_defaults(func=cmd_gen_noise)

    p = sub.add_parser("train", help="train and write a checkpoint plus loss CSV")
    p.add_argument("--data", required=True, help="dataset root")
    p.add_argument("--split", default="train")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--config")
    p.add_argument("--mode", choices=("supervised", "semi"))
    p.add_argument("--combo", choices=(*COMBO_CHOICES, MODAL_DROPOUT))
    p.add_argument("--steps", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float, help="initial learning rate")
    p.add_argument("--seed", type=int)
    p.add_argument("--checkpoint-every", type=int)
    p.add_argument("--noise", help="noise-label directory (semi mode)")
    p.add_argument("--log", help="loss CSV (default: checkpoint path with .csv)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="metrics report, optionally under a simulated failure")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="train")
    p.add_argument("--combo", choices=COMBO_CHOICES, help="default: fallback combo of --failure")
    p.add_argument("--failure", choices=FAILURE_CHOICES)
    p.add_argument("--angle", type=float, default=5.0, help="rotation failure angle in degrees")
    p.add_argument("--report", required=True, help="output CSV")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("infer", help="predict a 16-bit depth PNG for one frame")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--left", required=True)
    p.add_argument("--right")
    p.add_argument("--lidar", help="16-bit sparse depth PNG")
    p.add_argument("--combo", required=True, choices=COMBO_CHOICES)
    p.add_argument("--calib", help="calibration file (focal_px / baseline_m lines)")
    p.add_argument("--focal", type=float, default=SYNTH_CALIBRATION.focal_length_px)
    p.add_argument("--baseline", type=float, default=SYNTH_CALIBRATION.baseline_m)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("config", help="print the effective configuration")
    p.add_argument("--config")
    p.set_defaults(func=cmd_config)
    return ap


def _thread_limit() -> int | None:
    raw = os.environ.get(THREADS_ENV)
    if not raw:
        return None
    try:
        n = int(raw)
    except ValueError:
        n = 0
    if n < 1:
        raise CliError(f"{THREADS_ENV} must be a positive integer, got {raw!r}")
    return n


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        with threadpool_limits(limits=_thread_limit()):
            return args.func(args)
    except CliError as exc:
        log.error("%s", exc)
        return exc.code
    except CheckpointError as exc:
        log.error("bad checkpoint: %s", exc)
        return EXIT_IO
    except TrainingDiverged as exc:
        log.error("%s", exc)
        return EXIT_NUMERIC
    except FloatingPointError as exc:
        log.error("numeric failure: %s", exc)
        return EXIT_NUMERIC
    except OSError as exc:
        log.error("%s", exc)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
