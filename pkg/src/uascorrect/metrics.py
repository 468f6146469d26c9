"""Evaluation metrics: accuracy, Dice, MPE, MSE, RMSE, SSIM and multiscale SSIM.

Metrics take numpy arrays (or Tensors) shaped [H, W], [C, H, W] or [N, C, H, W]
and accumulate in float64. SSIM-type metrics are computed per 2-D slice and
averaged over slices.
"""

from __future__ import annotations

import math
from dataclasses import astuple, dataclass, fields

import numpy as np

from .autodiff import EPS, Tensor
from .errors import DomainError, ShapeError

MS_SSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)


def _arr(x) -> np.ndarray:
    if isinstance(x, Tensor):
        x = x.data
    return np.asarray(x, dtype=np.float64)


def _pair(pred, target) -> tuple[np.ndarray, np.ndarray]:
    p, t = _arr(pred), _arr(target)
    if p.shape != t.shape:
        raise ShapeError(f"pred shape {p.shape} != target shape {t.shape}")
    if p.size == 0:
        raise ShapeError("empty input")
    return p, t


def mse(pred, target) -> float:
    p, t = _pair(pred, target)
    d = p - t
    return float(np.mean(d * d))


def rmse(pred, target) -> float:
    return math.sqrt(mse(pred, target))


def mpe(pred, target) -> float:
    """Signed mean of (y - y_hat) / y with |y| clamped to at least 1e-7; positive means under-prediction."""
    p, t = _pair(pred, target)
    denom = np.where(np.abs(t) < EPS, np.where(t < 0, -EPS, EPS), t)
    return float(np.mean((t - p) / denom))


def accuracy(pred, target, tol: float = 0.05) -> float:
    """Fraction of elements whose absolute error is within ``tol``."""
    if tol < 0:
        raise DomainError(f"tolerance must be non-negative, got {tol}")
    p, t = _pair(pred, target)
    return float(np.mean(np.abs(p - t) <= tol))


def dice(pred, target, mode: str = "thresholded", threshold: float = 0.5) -> float:
    """Overlap 2|Y n Y_hat| / (|Y| + |Y_hat|).

    ``thresholded`` binarizes both maps at ``threshold`` (value >= threshold is
    positive) and returns 2TP / (2TP + FP + FN), with two empty maps scoring 1.
    ``soft`` uses the continuous values with 1e-7 added to the denominator.
    """
    p, t = _pair(pred, target)
    if mode == "soft":
        return float(2.0 * np.sum(p * t) / (np.sum(p) + np.sum(t) + EPS))
    if mode != "thresholded":
        raise ValueError(f"unknown dice mode {mode!r}")
    pb, tb = p >= threshold, t >= threshold
    tp = np.count_nonzero(pb & tb)
    fp = np.count_nonzero(pb & ~tb)
    fn = np.count_nonzero(~pb & tb)
    if tp + fp + fn == 0:
        return 1.0
    return 2.0 * tp / (2.0 * tp + fp + fn)


@dataclass(frozen=True)
class SsimParams:
    window_size: int = 11
    sigma: float = 1.5
    dynamic_range: float = 1.0
    k1: float = 0.01
    k2: float = 0.03
    ms_weights: tuple[float, ...] = MS_SSIM_WEIGHTS
    global_stats: bool = False

    def __post_init__(self) -> None:
        if self.window_size < 1 or self.window_size % 2 == 0:
            raise ValueError("window_size must be a positive odd integer")
        if abs(sum(self.ms_weights) - 1.0) > 1e-4:
            raise ValueError(f"ms_weights must sum to 1, got {sum(self.ms_weights)}")

    @property
    def c1(self) -> float:
        return (self.k1 * self.dynamic_range) ** 2

    @property
    def c2(self) -> float:
        return (self.k2 * self.dynamic_range) ** 2

    def kernel_1d(self) -> np.ndarray:
        r = np.arange(self.window_size, dtype=np.float64) - self.window_size // 2
        g = np.exp(-(r * r) / (2.0 * self.sigma**2))
        return g / g.sum()


def _slices(x: np.ndarray) -> np.ndarray:
    if x.ndim < 2:
        raise ShapeError(f"image metrics need at least 2-D input, got {x.shape}")
    return x.reshape(-1, *x.shape[-2:])


def _filter_valid(img: np.ndarray, k: np.ndarray) -> np.ndarray:
    """Separable 'valid' weighted window sums over the last two axes."""
    n = k.size
    rows = np.lib.stride_tricks.sliding_window_view(img, n, axis=-2) @ k
    return np.lib.stride_tricks.sliding_window_view(rows, n, axis=-1) @ k


def _ssim_maps(x: np.ndarray, y: np.ndarray, params: SsimParams) -> tuple[np.ndarray, np.ndarray]:
    """Per-position luminance and contrast-structure maps for stacked 2-D slices."""
    c1, c2 = params.c1, params.c2
    if params.global_stats:
        axes = (-2, -1)
        mx, my = x.mean(axis=axes, keepdims=True), y.mean(axis=axes, keepdims=True)
        vx = ((x - mx) ** 2).mean(axis=axes, keepdims=True)
        vy = ((y - my) ** 2).mean(axis=axes, keepdims=True)
        cxy = ((x - mx) * (y - my)).mean(axis=axes, keepdims=True)
    else:
        if min(x.shape[-2:]) < params.window_size:
            raise ShapeError(
                f"image {x.shape[-2:]} smaller than the {params.window_size}x{params.window_size} window"
            )
        k = params.kernel_1d()
        mx, my = _filter_valid(x, k), _filter_valid(y, k)
        vx = _filter_valid(x * x, k) - mx * mx
        vy = _filter_valid(y * y, k) - my * my
        cxy = _filter_valid(x * y, k) - mx * my
    lum = (2.0 * mx * my + c1) / (mx * mx + my * my + c1)
    cs = (2.0 * cxy + c2) / (vx + vy + c2)
    return lum, cs


def ssim(pred, target, params: SsimParams = SsimParams()) -> float:
    p, t = _pair(pred, target)
    p, t = _slices(p), _slices(t)
    lum, cs = _ssim_maps(p, t, params)
    per_slice = (lum * cs).reshape(p.shape[0], -1).mean(axis=1)
    return float(np.clip(per_slice.mean(), 0.0, 1.0))


def ms_scale_count(height: int, width: int, params: SsimParams = SsimParams()) -> int:
    """Number of dyadic scales whose smallest side still fits one window (capped by the weights)."""
    side = min(height, width)
    if side < params.window_size:
        return 0
    count = 1
    while count < len(params.ms_weights) and side // 2**count >= params.window_size:
        count += 1
    return count


def _downsample(x: np.ndarray) -> np.ndarray:
    h, w = (x.shape[-2] // 2) * 2, (x.shape[-1] // 2) * 2
    x = x[..., :h, :w]
    return 0.25 * (x[..., 0::2, 0::2] + x[..., 1::2, 0::2] + x[..., 0::2, 1::2] + x[..., 1::2, 1::2])


def ms_ssim(pred, target, params: SsimParams = SsimParams()) -> float:
    """Multiscale SSIM: contrast-structure terms at every scale, luminance at the coarsest.

    Scales that do not fit a full window are dropped and the remaining weights
    renormalized. Negative per-scale terms are clamped to 0.
    """
    p, t = _pair(pred, target)
    p, t = _slices(p), _slices(t)
    scales = ms_scale_count(*p.shape[-2:], params)
    if scales == 0:
        raise ShapeError(f"image {p.shape[-2:]} smaller than one {params.window_size}px window")
    weights = np.asarray(params.ms_weights[:scales], dtype=np.float64)
    weights = weights / weights.sum()
    values = np.ones(p.shape[0])
    for s in range(scales):
        lum, cs = _ssim_maps(p, t, params)
        if s == scales - 1:
            term = (lum * cs).reshape(p.shape[0], -1).mean(axis=1)
        else:
            term = cs.reshape(p.shape[0], -1).mean(axis=1)
            p, t = _downsample(p), _downsample(t)
        values *= np.maximum(term, 0.0) ** weights[s]
    return float(np.clip(values.mean(), 0.0, 1.0))


@dataclass(frozen=True)
class MetricReport:
    accuracy: float
    dice: float
    mpe: float
    mse: float
    rmse: float
    ssim: float
    ms_ssim: float

    @classmethod
    def names(cls) -> tuple[str, ...]:
        return tuple(f.name for f in fields(cls))

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.names(), astuple(self)))

    def csv_row(self, loss_kind: str, fold: int) -> list[str]:
        return [loss_kind, str(fold), *(repr(float(v)) for v in astuple(self))]

    @classmethod
    def mean_of(cls, reports: list["MetricReport"]) -> "MetricReport":
        if not reports:
            raise ValueError("no reports to average")
        arr = np.array([astuple(r) for r in reports], dtype=np.float64)
        return cls(*(float(v) for v in arr.mean(axis=0)))


CSV_HEADER = ("loss_kind", "fold", *MetricReport.names())

METRIC_LABELS = {
    "accuracy": "Accuracy",
    "dice": "Dice coefficient",
    "mpe": "MPE",
    "mse": "MSE",
    "rmse": "RMSE",
    "ssim": "SSIM",
    "ms_ssim": "Multiscale SSIM",
}


def full_report(pred, target, params: SsimParams = SsimParams(), tol: float = 0.05,
                dice_mode: str = "thresholded") -> MetricReport:
    p, t = _pair(pred, target)
    m = mse(p, t)
    return MetricReport(
        accuracy=accuracy(p, t, tol),
        dice=dice(p, t, dice_mode),
        mpe=mpe(p, t),
        mse=m,
        rmse=math.sqrt(m),
        ssim=ssim(p, t, params),
        ms_ssim=ms_ssim(p, t, params),
    )
