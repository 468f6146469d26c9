"""Train on the synthetic dataset, then correct a fresh shadowed and glinted scene.

Prints SSIM against the clean scene before and after correction.

    python scripts/correct_scene.py --epochs 30 --out results/scene
"""

import argparse
import json
from pathlib import Path

from uascorrect import data as D
from uascorrect.harness import TrainConfig, correct_raster, train
from uascorrect.metrics import ssim
from uascorrect.raster import MultibandRaster, NormalizationStats, band_to_grayscale, normalize, save_raster
from uascorrect.unet import save_weights

ROOT = Path(__file__).resolve().parents[1]


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default=str(ROOT / "configs" / "desk_cv.json"))
    ap.add_argument("--epochs", type=int)
    ap.add_argument("--size", type=int, default=800, help="side of the test scene in pixels")
    ap.add_argument("--scene-seed", type=int, default=11)
    ap.add_argument("--out", default="results/scene")
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    raw = json.loads(Path(args.config).read_text())
    if args.epochs:
        raw["epochs"] = args.epochs
    config = TrainConfig.from_dict({**raw, "trace_validation": False})
    train_scene = D.make_scene(seed=0)
    # the same statistics must normalize every raster the model later sees
    stats = NormalizationStats.from_raster(train_scene)
    pairs = D.build_dataset(normalize(train_scene, stats), seed=0)
    model, trace = train(pairs, config)
    save_weights(model, out / "model.unw")
    print(f"trained on {len(pairs)} pairs: loss {trace.epoch_loss[0]:.4f} -> {trace.epoch_loss[-1]:.4f}")

    clean_raw = D.make_scene(args.size, args.size, seed=args.scene_seed)
    spec = D.DegradeSpec(D.ShadowSpec(angle_deg=30, seam_width=80, attenuation=0.45, seam_count=2,
                                      seam_spacing=300),
                         D.GlintSpec(brightness=0.5, sigma=20, count=6), seed=args.scene_seed)
    degraded, _, _ = D.synth_degrade(normalize(clean_raw, stats), spec)
    degraded_raw = MultibandRaster(stats.invert(degraded.data))
    corrected = correct_raster(model, degraded_raw, stats)

    for name, r in (("clean", clean_raw), ("degraded", degraded_raw), ("corrected", corrected)):
        save_raster(r, out / f"{name}.mbrf")
        band_to_grayscale(r, 2, out / f"{name}_red.pgm")
    # SSIM constants assume unit-range data, so score in the normalized space
    target = stats.apply(clean_raw.data)
    print(f"ssim vs clean: degraded {ssim(degraded.data, target):.4f}, "
          f"corrected {ssim(stats.apply(corrected.data), target):.4f}")


if __name__ == "__main__":
    main()
