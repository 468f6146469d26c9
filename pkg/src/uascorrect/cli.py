"""Command-line entry point: synth, dataset, train, cv, correct, report.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 training error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import data as D
from .errors import (
    CapacityError,
    ConfigError,
    DataError,
    FormatError,
    ShapeError,
    TrainingError,
)
from .harness import CvReport, TrainConfig, correct_raster, cross_validate, train
from .losses import LossKind
from .metrics import SsimParams
from .raster import MultibandRaster, NormalizationStats, load_raster, normalize, save_raster
from .report import emit_report
from .unet import load_weights, save_weights

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_TRAINING = 0, 2, 3, 4
REPORT_JSON = "cv_report.json"
STATS_JSON = "stats.json"

log = logging.getLogger("uascorrect")


def _read_json(path: str | None) -> dict:
    if not path:
        return {}
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror or exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: expected a JSON object")
    return raw


def _parse_counts(text: str | None) -> dict[str, int] | None:
    if not text:
        return None
    counts = {}
    for item in text.split(","):
        name, _, value = item.partition("=")
        try:
            counts[name.strip()] = int(value)
        except ValueError:
            raise ConfigError(f"bad count {item!r}; use e.g. shadow=52,glint=49,both=15") from None
    return counts


def _train_config(args: argparse.Namespace) -> TrainConfig:
    """Config file first, then explicit command-line overrides."""
    raw = _read_json(getattr(args, "config", None))
    raw = raw.get("train", raw)
    overrides = {
        "loss": getattr(args, "loss", None),
        "epochs": args.epochs,
        "batch_size": args.batch,
        "learning_rate": args.lr,
        "seed": args.seed,
    }
    raw.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return TrainConfig.from_dict(raw)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def _load_pairs(args: argparse.Namespace) -> tuple[list[D.PatchPair], NormalizationStats | None]:
    """Pairs plus the statistics that normalized them, when known."""
    if args.data:
        stats_file = Path(args.data).parent / STATS_JSON
        stats = _read_stats(stats_file) if stats_file.exists() else None
        return D.read_dataset(args.data), stats
    seed = 0 if args.seed is None else args.seed
    scene = D.make_scene(seed=seed)
    stats = NormalizationStats.from_raster(scene)
    return D.build_dataset(normalize(scene, stats), seed=seed), stats


def _write_stats(stats: NormalizationStats, path: Path) -> None:
    path.write_text(json.dumps({"minimum": stats.minimum.tolist(), "maximum": stats.maximum.tolist()}, indent=1))


def _read_stats(path: str | Path) -> NormalizationStats:
    raw = _read_json(str(path))
    if "minimum" not in raw or "maximum" not in raw:
        raise ConfigError(f"{path}: needs 'minimum' and 'maximum' lists")
    return NormalizationStats(raw["minimum"], raw["maximum"])


def _ssim_params(args: argparse.Namespace) -> SsimParams:
    return SsimParams(global_stats=bool(getattr(args, "ssim_global", False)))


def _stats_sidecar(weights: str | Path) -> Path:
    return Path(f"{weights}.{STATS_JSON}")


# --------------------------------------------------------------------------- commands


def cmd_synth(args: argparse.Namespace) -> int:
    if args.input:
        clean = load_raster(args.input)
    else:
        clean = D.make_scene(args.size, args.size, seed=args.seed)
        stats = NormalizationStats.from_raster(clean)
        clean = normalize(clean, stats)
        if args.clean_out:
            save_raster(clean, args.clean_out)
    if clean.data.min() < 0 or clean.data.max() > 1:
        raise DataError("synth expects a clean raster normalized to [0, 1]")
    raw = _read_json(args.spec)
    spec = D.DegradeSpec.from_dict(raw.get("degrade", raw)) if raw else D.random_degrade_spec(
        args.category, np.random.default_rng(args.seed))
    degraded, shadow, glint = D.synth_degrade(clean, spec)
    save_raster(degraded, args.output)
    if args.masks:
        save_raster(MultibandRaster(np.stack([shadow, glint]).astype(np.float32), ("shadow", "glint")),
                    args.masks)
    print(f"wrote {args.output}: shadow {shadow.mean():.1%}, glint {glint.mean():.1%} of pixels")
    return EXIT_OK


def cmd_dataset(args: argparse.Namespace) -> int:
    if args.input:
        scene = load_raster(args.input)
    else:
        scene = D.make_scene(seed=args.seed)
    stats = NormalizationStats.from_raster(scene)
    pairs = D.build_dataset(normalize(scene, stats), counts=_parse_counts(args.counts),
                            seed=args.seed, stride=args.stride)
    folds = D.kfold_split(pairs, args.k, args.seed)
    manifest = D.write_dataset(pairs, args.out_dir, folds)
    _write_stats(stats, Path(args.out_dir) / STATS_JSON)
    print(f"wrote {len(pairs)} pairs to {manifest}")
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    config = _train_config(args)
    pairs, stats = _load_pairs(args)
    model, trace = train(pairs, replace(config, trace_validation=False))
    save_weights(model, args.out)
    if stats is not None:
        # the model only makes sense on inputs normalized the same way
        _write_stats(stats, _stats_sidecar(args.out))
    if args.trace:
        Path(args.trace).write_text(json.dumps(asdict(trace), indent=1))
    first, last = trace.epoch_loss[0], trace.epoch_loss[-1]
    print(f"{config.loss}: loss {first:.4f} -> {last:.4f} over {config.epochs} epochs; weights in {args.out}")
    return EXIT_OK


def cmd_cv(args: argparse.Namespace) -> int:
    config = _train_config(args)
    try:
        losses = [LossKind.parse(x).value for x in args.losses.split(",") if x.strip()]
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if not losses:
        raise ConfigError("--losses is empty")
    pairs, _ = _load_pairs(args)

    def progress(res):
        log.info("%s fold %d: ssim %.4f (degraded %.4f), %.0fs",
                 res.loss, res.fold, res.metrics.ssim, res.baseline.ssim, res.seconds)

    report = cross_validate(pairs, losses, args.k, config, args.workers, progress, _ssim_params(args))
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report.save(out / REPORT_JSON)
    emit_report(report, out)
    print((out / "table.csv").read_text(), end="")
    return EXIT_OK


def cmd_correct(args: argparse.Namespace) -> int:
    model = load_weights(args.weights)
    raster = load_raster(args.input)
    sidecar = _stats_sidecar(args.weights)
    if args.stats:
        stats = _read_stats(args.stats)
    elif sidecar.exists():
        stats = _read_stats(sidecar)
    else:
        log.warning("no training statistics found; normalizing by the input's own range")
        stats = NormalizationStats.from_raster(raster)
    corrected = correct_raster(model, raster, stats, stride=args.stride)
    save_raster(corrected, args.output)
    print(f"wrote {args.output} ({corrected.bands}x{corrected.height}x{corrected.width})")
    return EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    out = Path(args.out_dir)
    source = Path(args.input) if args.input else out / REPORT_JSON
    try:
        report = CvReport.load(source)
    except FileNotFoundError:
        raise DataError(f"{source} not found; run `cv` first") from None
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise DataError(f"{source}: not a cross-validation report ({exc})") from None
    for path in emit_report(report, out):
        print(path)
    return EXIT_OK


# --------------------------------------------------------------------------- parser


def _add_train_flags(p: argparse.ArgumentParser, with_loss: bool = True) -> None:
    if with_loss:
        p.add_argument("--loss", help="bce | cce | mse | mae | mape")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch", type=int, help="mini-batch size")
    p.add_argument("--lr", type=float, help="learning rate")
    p.add_argument("--seed", type=int)
    p.add_argument("--config", help="JSON file with TrainConfig fields (and an optional 'unet' object)")
    p.add_argument("--data", help="dataset manifest.csv; default builds the synthetic dataset")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="uascorrect", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="degrade a clean raster with shadow seams and glint")
    p.add_argument("--input", help="clean MBRF in [0, 1]; default generates a scene")
    p.add_argument("--spec", help="DegradeSpec JSON; default draws one for --category")
    p.add_argument("--category", choices=D.CATEGORIES, default="both")
    p.add_argument("--output", required=True)
    p.add_argument("--masks", help="write shadow/glint masks as a 2-band MBRF")
    p.add_argument("--clean-out", help="save the generated clean scene")
    p.add_argument("--size", type=int, default=400)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("dataset", help="build paired patches and a manifest")
    p.add_argument("--input", help="clean MBRF scene; default generates one")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--counts", help="e.g. shadow=52,glint=49,both=15")
    p.add_argument("--stride", type=int, default=100)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_dataset)

    p = sub.add_parser("train", help="train one model on all pairs")
    _add_train_flags(p)
    p.add_argument("--out", default="model.unw", help="weights file")
    p.add_argument("--trace", help="write the per-epoch loss trace as JSON")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("cv", help="k-fold cross-validation over loss kinds")
    _add_train_flags(p, with_loss=False)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--losses", default="bce,cce,mse,mae,mape")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out-dir", default="cv_out")
    p.add_argument("--ssim-global", action="store_true", help="SSIM from global image statistics")
    p.set_defaults(func=cmd_cv)

    p = sub.add_parser("correct", help="correct a full raster with trained weights")
    p.add_argument("--weights", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--stride", type=int, default=D.WINDOW)
    p.add_argument("--stats", help="normalization stats JSON; default is the <weights>.stats.json written by "
                   "`train`, else the input's own range")
    p.set_defaults(func=cmd_correct)

    p = sub.add_parser("report", help="re-emit table, CSV and SVG figures from a cv run")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--input", help=f"report JSON (default <out-dir>/{REPORT_JSON})")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingError as exc:
        print(f"training error: {exc}", file=sys.stderr)
        return EXIT_TRAINING
    except (DataError, FormatError, ShapeError, CapacityError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
