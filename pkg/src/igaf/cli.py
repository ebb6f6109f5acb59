"""Command-line entry point: ``igaf {synth,train,eval,infer,gradcheck,ablate}``.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
import time
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np

from . import gradsuite
from .blocks import ModelConfig, model_forward
from .checkpoint import load_checkpoint
from .data import DatasetManifest, denormalize, normalize, synth_dataset
from .errors import CheckpointError, ConfigError, DataError, NumericalError
from .imageio import read_depth, read_rgb, write_image
from .optim import Schedule
from .resize import bicubic_resize
from .tensor import Tensor
from .train import TrainConfig, ablate, evaluate, format_ablation_table, train, write_loss_log

log = logging.getLogger("igaf")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

# run-level keys that are not part of TrainConfig
RUN_DEFAULTS = {"manifest": None, "eval_manifest": None, "output_dir": "runs"}
_PATH_KEYS = ("manifest", "eval_manifest", "output_dir")
_TRAIN_FIELDS = ("batch_size", "patch", "epochs", "seed", "eval_every")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


# --------------------------------------------------------------------------
# config resolution
# --------------------------------------------------------------------------


def default_config() -> dict[str, Any]:
    """Every accepted dotted key with its default value."""
    flat = dict(RUN_DEFAULTS)
    for k, v in ModelConfig().to_dict().items():
        flat[f"model.{k}"] = v
    for k, v in Schedule().to_dict().items():
        flat[f"schedule.{k}"] = v
    tc = TrainConfig()
    for k in _TRAIN_FIELDS:
        flat[f"train.{k}"] = getattr(tc, k)
    return flat


def _flatten(d: dict, prefix: str = "") -> dict:
    out = {}
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, key + "."))
        else:
            out[key] = v
    return out


def _coerce(key: str, value: Any, default: Any) -> Any:
    """Convert ``value`` to the type of ``default``; strings come from ``--set``."""
    try:
        if isinstance(default, bool):
            if isinstance(value, str):
                if value.lower() in ("true", "1", "yes"):
                    return True
                if value.lower() in ("false", "0", "no"):
                    return False
                raise ValueError(value)
            if not isinstance(value, bool):
                raise ValueError(value)
            return value
        if isinstance(default, int):
            if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
                raise ValueError(value)
            return int(value)
        if isinstance(default, float):
            if isinstance(value, bool):
                raise ValueError(value)
            return float(value)
        if isinstance(default, (tuple, list)):
            if isinstance(value, str):
                value = [v for v in value.replace("[", "").replace("]", "").split(",") if v.strip()]
            return tuple(int(v) for v in value)
    except (TypeError, ValueError):
        raise ConfigError(f"config key {key!r}: cannot interpret {value!r} as {type(default).__name__}") from None
    return value


def _parse_override(item: str) -> tuple[str, Any]:
    if "=" not in item:
        raise ConfigError(f"--set expects key=value, got {item!r}")
    key, raw = item.split("=", 1)
    key = key.strip()
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key, value


def resolve_config(config_path: Optional[str], overrides: Sequence[str] = ()) -> dict[str, Any]:
    """Defaults < config file < ``--set`` overrides. Unknown keys are rejected."""
    resolved = default_config()
    layers = []
    if config_path is not None:
        path = Path(config_path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            raw = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"{path}: cannot parse config ({exc})") from None
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
        layers.append((_flatten(raw), path.parent.resolve()))
    layers.append((dict(_parse_override(o) for o in overrides), Path.cwd()))

    for values, base in layers:
        for key, value in values.items():
            if key not in resolved:
                raise ConfigError(f"unknown config key {key!r}")
            if key in _PATH_KEYS:
                resolved[key] = None if value is None else str((base / str(value)).resolve())
            elif resolved[key] is None:
                resolved[key] = value
            else:
                resolved[key] = _coerce(key, value, default_config()[key])
    return resolved


def build_train_config(resolved: dict[str, Any], checkpoint_dir: Optional[str] = None) -> TrainConfig:
    section = lambda p: {k[len(p) + 1 :]: v for k, v in resolved.items() if k.startswith(p + ".")}
    model = ModelConfig.from_dict(section("model"))
    schedule = Schedule(**section("schedule"))
    return TrainConfig(model=model, schedule=schedule, checkpoint_dir=checkpoint_dir, **section("train"))


def _require_manifest(resolved: dict, key: str = "manifest") -> DatasetManifest:
    if resolved[key] is None:
        raise ConfigError(f"config key {key!r} is required (set it in the config file or with --set {key}=PATH)")
    return DatasetManifest.read(resolved[key])


def _unique_run_dir(root: Path, seed: int) -> Path:
    stamp = time.strftime("%Y%m%d-%H%M%S")
    base = root / f"{stamp}-seed{seed}"
    run, n = base, 1
    while True:
        try:
            run.mkdir(parents=True, exist_ok=False)
            return run
        except FileExistsError:
            run = base.with_name(f"{base.name}-{n}")
            n += 1


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------


def cmd_synth(args) -> int:
    manifest = synth_dataset(args.count, args.size, args.seed, args.out, scale=args.scale)
    print(Path(args.out) / "manifest.txt")
    log.info("%d scenes", len(manifest))
    return EXIT_OK


def cmd_train(args) -> int:
    resolved = resolve_config(args.config, args.set)
    cfg = build_train_config(resolved)
    manifest = _require_manifest(resolved)
    try:
        run = _unique_run_dir(Path(resolved["output_dir"]), cfg.seed)
    except OSError as exc:
        raise DataError(f"{resolved['output_dir']}: cannot create run directory ({exc})") from exc
    cfg = dataclasses.replace(cfg, checkpoint_dir=str(run / "checkpoints"))
    (run / "config.json").write_text(json.dumps(resolved, indent=2, sort_keys=True) + "\n")
    result = train(cfg, manifest, resume=args.resume)
    loss_path = run / "loss_log.csv"
    write_loss_log(loss_path, result.loss_log)
    print(f"loss_log {loss_path}")
    print(f"checkpoint {result.checkpoint}")
    return EXIT_OK


def cmd_eval(args) -> int:
    params, _, _ = load_checkpoint(args.ckpt)
    manifest = DatasetManifest.read(args.manifest)
    report = evaluate(params, manifest, params.config.scale)
    if args.out:
        with open(args.out, "w", newline="") as fh:
            report.write_csv(fh)
        print(args.out)
    else:
        report.write_csv(sys.stdout)
    if report.rows:
        log.info("mean rmse model %.6f bicubic %.6f", report.mean_model, report.mean_bicubic)
    return EXIT_OK


def cmd_infer(args) -> int:
    params, _, _ = load_checkpoint(args.ckpt)
    s = params.config.scale
    rgb8 = read_rgb(args.rgb)
    lr16 = read_depth(args.lr_depth)
    h, w = rgb8.shape[:2]
    if lr16.shape != (h // s, w // s) or h % s or w % s:
        raise DataError(
            f"{args.lr_depth}: LR depth is {lr16.shape[0]}x{lr16.shape[1]} but RGB {args.rgb} "
            f"is {h}x{w}; expected {h // s}x{w // s} at scale {s}"
        )
    # only the LR map is known at inference time, so it supplies the anchors
    try:
        lr, anchors = normalize(lr16)
    except DataError as exc:
        raise DataError(f"{args.lr_depth}: {exc}") from None
    dtype = params["stem_depth.weight"].dtype
    l_up = Tensor(bicubic_resize(lr[None, None].astype(np.float64), h, w).astype(dtype))
    g = Tensor((rgb8.astype(np.float64) / 255.0).transpose(2, 0, 1)[None].astype(dtype))
    pred = model_forward(params, g, l_up)
    if not np.all(np.isfinite(pred.data)):
        raise NumericalError(f"non-finite prediction for {args.rgb}")
    out = np.clip(np.rint(denormalize(pred.data[0, 0], anchors)), 0, 65535).astype(np.uint16)
    write_image(args.out, out)
    print(args.out)
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    blocks = args.block or None
    if blocks:
        unknown = [b for b in blocks if b not in gradsuite.CASES]
        if unknown:
            raise ConfigError(f"unknown block(s) {unknown}; choose from {', '.join(gradsuite.CASES)}")
    errors = gradsuite.run_suite(blocks)
    failed = False
    for name, err in errors.items():
        ok = err <= gradsuite.TOLERANCE
        failed |= not ok
        print(f"{name:<16} {err:.3e} {'ok' if ok else 'FAIL'}")
    if failed:
        print(f"gradcheck failed: worst error exceeds {gradsuite.TOLERANCE:g}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_ablate(args) -> int:
    resolved = resolve_config(args.config, args.set)
    cfg = build_train_config(resolved)
    manifest = _require_manifest(resolved)
    eval_manifest = _require_manifest(resolved, "eval_manifest") if resolved["eval_manifest"] else None
    variants = [v for v in args.variants.split(",") if v.strip()]
    rows = ablate(cfg, manifest, variants, eval_manifest)
    table = format_ablation_table(rows)
    if args.out:
        Path(args.out).write_text(table + "\n")
        print(args.out)
    else:
        print(table)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="igaf", description="Guided depth super-resolution engine.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="write a synthetic RGB-D dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--size", type=int, default=128)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--scale", type=int, default=4, help="scale recorded in the manifest header")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--config", required=True)
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--resume", help="checkpoint directory to resume from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="per-sample RMSE against bicubic")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("infer", help="predict one HR depth map")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--rgb", required=True)
    p.add_argument("--lr-depth", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    p.add_argument("--block", action="append", metavar="NAME", help=f"one of: {', '.join(gradsuite.CASES)}")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("ablate", help="train and compare ablation variants")
    p.add_argument("--config", required=True)
    p.add_argument("--variants", required=True, help="comma-separated variant names")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--out")
    p.set_defaults(func=cmd_ablate)
    return parser


def run_cli(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    if args.verbose:
        logging.basicConfig(level=logging.INFO, format="%(message)s")
    try:
        return args.func(args)
    except (ConfigError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, CheckpointError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, FloatingPointError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
