"""Training, held-out evaluation, k-fold cross-validation and full-raster correction."""

from __future__ import annotations

import json
import logging
import math
import multiprocessing
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from . import autodiff as ad
from .data import WINDOW, PatchPair, derive_seed, extract_patches, kfold_split, resize, stitch
from .errors import CapacityError, ConfigError, ShapeError, TrainingError
from .losses import LossKind, loss_value
from .metrics import MetricReport, SsimParams, accuracy, dice, full_report, mse, ssim
from .raster import MultibandRaster, NormalizationStats
from .unet import UNetConfig, UNetModel, build_unet

log = logging.getLogger(__name__)

TRACE_METRICS = ("accuracy", "dice", "mse", "ssim")


@dataclass(frozen=True)
class TrainConfig:
    loss: str = "bce"
    epochs: int = 30
    batch_size: int = 8
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    seed: int = 0
    unet: UNetConfig = field(default_factory=UNetConfig.tiny)
    trace_validation: bool = True

    def __post_init__(self) -> None:
        try:
            object.__setattr__(self, "loss", LossKind.parse(self.loss).value)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.learning_rate > 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.optimizer not in ("sgd", "adam"):
            raise ConfigError(f"optimizer must be sgd or adam, got {self.optimizer!r}")

    @classmethod
    def from_dict(cls, raw: dict) -> "TrainConfig":
        raw = dict(raw)
        unet = raw.pop("unet", None)
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown train config fields {sorted(unknown)}")
        try:
            unet_cfg = UNetConfig.tiny(**unet) if unet is not None else UNetConfig.tiny()
        except TypeError as exc:
            raise ConfigError(f"bad unet config: {exc}") from None
        return cls(unet=unet_cfg, **raw)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainingTrace:
    epoch_loss: list[float] = field(default_factory=list)
    validation: list[dict[str, float]] = field(default_factory=list)


def _stack(pairs: Sequence[PatchPair], attr: str) -> np.ndarray:
    return np.stack([getattr(p, attr) for p in pairs]).astype(np.float32)


def predict(model: UNetModel, inputs: np.ndarray, batch_size: int = 8) -> np.ndarray:
    """Forward [N, C, S, S] inputs without building a graph."""
    outs = []
    with ad.no_grad():
        for start in range(0, len(inputs), batch_size):
            outs.append(model.forward(inputs[start:start + batch_size]).data)
    return np.concatenate(outs)


def _trace_metrics(pred: np.ndarray, target: np.ndarray) -> dict[str, float]:
    fns = {"accuracy": accuracy, "dice": dice, "mse": mse, "ssim": ssim}
    return {name: float(np.mean([fns[name](p, t) for p, t in zip(pred, target)])) for name in TRACE_METRICS}


def train_arrays(
    inputs: np.ndarray,
    targets: np.ndarray,
    config: TrainConfig,
    val_inputs: np.ndarray | None = None,
    val_targets: np.ndarray | None = None,
) -> tuple[UNetModel, TrainingTrace]:
    if len(inputs) == 0:
        raise CapacityError("no training pairs")
    if inputs.shape != targets.shape:
        raise ShapeError(f"inputs {inputs.shape} vs targets {targets.shape}")
    model = build_unet(replace(config.unet, seed=derive_seed(config.seed, "init")))
    optimizer = ad.Optimizer(model.parameters(), lr=config.learning_rate, kind=config.optimizer)
    rng = np.random.default_rng(derive_seed(config.seed, "shuffle"))
    trace = TrainingTrace()
    n = len(inputs)
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        total = 0.0
        for batch_no, start in enumerate(range(0, n, config.batch_size)):
            idx = order[start:start + config.batch_size]
            out = model.forward(inputs[idx])
            loss = loss_value(config.loss, out, targets[idx])
            value = float(loss.data)
            if not math.isfinite(value):
                raise TrainingError(
                    f"{config.loss} loss became {value} at epoch {epoch + 1}, batch {batch_no + 1}",
                    epoch + 1, batch_no + 1,
                )
            loss.backward()
            optimizer.step()
            total += value * len(idx)
        trace.epoch_loss.append(total / n)
        if config.trace_validation and val_inputs is not None and len(val_inputs):
            trace.validation.append(_trace_metrics(predict(model, val_inputs, config.batch_size), val_targets))
        log.debug("epoch %d loss %.5f", epoch + 1, trace.epoch_loss[-1])
    return model, trace


def train(pairs: Sequence[PatchPair], config: TrainConfig,
          val_pairs: Sequence[PatchPair] | None = None) -> tuple[UNetModel, TrainingTrace]:
    """Train a fresh model on (degraded -> clean) pairs with seeded mini-batch shuffling."""
    if not pairs:
        raise CapacityError("no training pairs")
    val_x = _stack(val_pairs, "degraded") if val_pairs else None
    val_y = _stack(val_pairs, "clean") if val_pairs else None
    return train_arrays(_stack(pairs, "degraded"), _stack(pairs, "clean"), config, val_x, val_y)


def evaluate_arrays(pred: np.ndarray, target: np.ndarray,
                    ssim_params: SsimParams = SsimParams()) -> MetricReport:
    if len(pred) == 0:
        raise CapacityError("no evaluation pairs")
    return MetricReport.mean_of([full_report(p, t, ssim_params) for p, t in zip(pred, target)])


def evaluate(model: UNetModel, pairs: Sequence[PatchPair], batch_size: int = 8,
             ssim_params: SsimParams = SsimParams()) -> MetricReport:
    """Metrics per held-out pair, averaged over pairs."""
    if not pairs:
        raise CapacityError("no evaluation pairs")
    pred = predict(model, _stack(pairs, "degraded"), batch_size)
    return evaluate_arrays(pred, _stack(pairs, "clean"), ssim_params)


# --------------------------------------------------------------------------- cross-validation


@dataclass
class FoldResult:
    loss: str
    fold: int
    metrics: MetricReport
    baseline: MetricReport
    trace: TrainingTrace
    seconds: float = 0.0

    def to_dict(self) -> dict:
        return {
            "loss": self.loss,
            "fold": self.fold,
            "metrics": self.metrics.as_dict(),
            "baseline": self.baseline.as_dict(),
            "trace": asdict(self.trace),
            "seconds": self.seconds,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "FoldResult":
        return cls(
            loss=raw["loss"],
            fold=int(raw["fold"]),
            metrics=MetricReport(**raw["metrics"]),
            baseline=MetricReport(**raw["baseline"]),
            trace=TrainingTrace(**raw["trace"]),
            seconds=float(raw.get("seconds", 0.0)),
        )


@dataclass
class CvReport:
    k: int
    results: dict[str, list[FoldResult]]
    config: dict = field(default_factory=dict)

    @property
    def losses(self) -> list[str]:
        return list(self.results)

    def values(self, loss: str, metric: str) -> np.ndarray:
        return np.array([getattr(r.metrics, metric) for r in self.results[loss]])

    def mean(self, loss: str, metric: str) -> float:
        return float(np.mean(self.values(loss, metric)))

    def std(self, loss: str, metric: str) -> float:
        """Sample standard deviation (n - 1 denominator) across folds."""
        vals = self.values(loss, metric)
        return float(np.std(vals, ddof=1)) if len(vals) > 1 else 0.0

    def summary(self) -> dict[str, dict[str, tuple[float, float]]]:
        return {
            loss: {m: (self.mean(loss, m), self.std(loss, m)) for m in MetricReport.names()}
            for loss in self.results
        }

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "config": self.config,
            "results": {loss: [r.to_dict() for r in rs] for loss, rs in self.results.items()},
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "CvReport":
        return cls(
            k=int(raw["k"]),
            results={loss: [FoldResult.from_dict(r) for r in rs] for loss, rs in raw["results"].items()},
            config=raw.get("config", {}),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def load(cls, path: str | Path) -> "CvReport":
        return cls.from_dict(json.loads(Path(path).read_text()))


def fold_normalization(train_pairs: Sequence[PatchPair]) -> NormalizationStats:
    """Per-band range over the training pairs only (inputs and targets)."""
    return NormalizationStats.from_arrays(_stack(train_pairs, "degraded"), _stack(train_pairs, "clean"))


def run_fold(pairs: Sequence[PatchPair], train_idx: Sequence[int], test_idx: Sequence[int],
             config: TrainConfig, fold: int, ssim_params: SsimParams = SsimParams()) -> FoldResult:
    """Train on ``train_idx`` and score on ``test_idx``; nothing from the test pairs
    reaches the normalization statistics or the optimizer."""
    start = time.perf_counter()
    train_pairs = [pairs[i] for i in train_idx]
    test_pairs = [pairs[i] for i in test_idx]
    stats = fold_normalization(train_pairs)
    x_tr = stats.apply(_stack(train_pairs, "degraded"))
    y_tr = stats.apply(_stack(train_pairs, "clean"))
    x_te_raw = _stack(test_pairs, "degraded")
    y_te = _stack(test_pairs, "clean")
    x_te = stats.apply(x_te_raw)
    y_te_norm = stats.apply(y_te)
    with threadpool_limits(limits=1):
        model, trace = train_arrays(x_tr, y_tr, config, x_te, y_te_norm)
        pred = stats.invert(predict(model, x_te, config.batch_size))
        metrics = evaluate_arrays(pred, y_te, ssim_params)
        baseline = evaluate_arrays(x_te_raw, y_te, ssim_params)
    return FoldResult(config.loss, fold, metrics, baseline, trace, time.perf_counter() - start)


_SHARED_PAIRS: Sequence[PatchPair] = ()


def _pool_job(args):
    return run_fold(_SHARED_PAIRS, *args)


def job_config(base: TrainConfig, loss: str, fold: int) -> TrainConfig:
    return replace(base, loss=loss, seed=derive_seed(base.seed, loss, fold))


def cross_validate(
    pairs: Sequence[PatchPair],
    losses: Sequence[str] = tuple(k.value for k in LossKind),
    k: int = 10,
    base_config: TrainConfig = TrainConfig(),
    workers: int = 1,
    progress=None,
    ssim_params: SsimParams = SsimParams(),
) -> CvReport:
    """Train and score a fresh model for every (loss, fold); results are independent of ``workers``."""
    global _SHARED_PAIRS
    loss_names = [LossKind.parse(name).value for name in losses]
    assignment = kfold_split(pairs, k, base_config.seed)
    jobs = []
    for loss in loss_names:
        for fold in range(k):
            jobs.append((assignment.train_indices(fold), assignment.test_indices(fold),
                         job_config(base_config, loss, fold), fold, ssim_params))
    if workers <= 1:
        results = []
        for job in jobs:
            results.append(run_fold(pairs, *job))
            if progress:
                progress(results[-1])
    else:
        _SHARED_PAIRS = pairs
        try:
            ctx = multiprocessing.get_context("fork")
            with ProcessPoolExecutor(max_workers=workers, mp_context=ctx) as pool:
                results = []
                for res in pool.map(_pool_job, jobs):
                    results.append(res)
                    if progress:
                        progress(res)
        finally:
            _SHARED_PAIRS = ()
    grouped: dict[str, list[FoldResult]] = {loss: [] for loss in loss_names}
    for res in results:
        grouped[res.loss].append(res)
    meta = {"train": base_config.to_dict(), "pairs": len(pairs), "ssim": asdict(ssim_params)}
    return CvReport(k, grouped, meta)


# --------------------------------------------------------------------------- full rasters


def correct_raster(
    model: UNetModel,
    raster: MultibandRaster,
    stats: NormalizationStats,
    stride: int = WINDOW,
    window: int = WINDOW,
    batch_size: int = 8,
) -> MultibandRaster:
    """Normalize, run the model over sliding windows, stitch with overlap averaging, denormalize."""
    size = model.config.input_size
    norm = MultibandRaster(stats.apply(raster.data), raster.band_names)
    patches = extract_patches(norm, window, stride)
    inputs = np.stack([resize(p.data, size) for p in patches])
    outputs = predict(model, inputs, batch_size)
    restored = [((p.row, p.col), resize(out, window)) for p, out in zip(patches, outputs)]
    stitched = stitch(restored, norm.data.shape, original=norm)
    return MultibandRaster(stats.invert(stitched.data), raster.band_names)
