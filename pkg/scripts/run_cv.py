"""Run the desk-scale cross-validation experiment and write the report files.

    python scripts/run_cv.py --out-dir results/cv --workers 2
"""

import argparse
import json
import logging
import time
from pathlib import Path

from uascorrect import data as D
from uascorrect.harness import TrainConfig, cross_validate
from uascorrect.losses import LossKind
from uascorrect.raster import NormalizationStats, normalize
from uascorrect.report import emit_report

ROOT = Path(__file__).resolve().parents[1]


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default=str(ROOT / "configs" / "desk_cv.json"))
    ap.add_argument("--out-dir", default="results/cv")
    ap.add_argument("--k", type=int, default=10)
    ap.add_argument("--losses", default=",".join(k.value for k in LossKind))
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--seed", type=int, default=0, help="scene and dataset seed")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    config = TrainConfig.from_dict(json.loads(Path(args.config).read_text()))
    scene = D.make_scene(seed=args.seed)
    pairs = D.build_dataset(normalize(scene, NormalizationStats.from_raster(scene)), seed=args.seed)
    logging.info("%d pairs, config %s", len(pairs), config.to_dict())

    def progress(res):
        logging.info("%s fold %d: ssim %.4f (degraded %.4f), loss %.3f -> %.3f, %.0fs", res.loss, res.fold,
                     res.metrics.ssim, res.baseline.ssim, res.trace.epoch_loss[0], res.trace.epoch_loss[-1],
                     res.seconds)

    start = time.perf_counter()
    report = cross_validate(pairs, args.losses.split(","), args.k, config, args.workers, progress)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report.save(out / "cv_report.json")
    emit_report(report, out)
    logging.info("done in %.1f min", (time.perf_counter() - start) / 60)
    print((out / "table.csv").read_text(), end="")


if __name__ == "__main__":
    main()
