"""Training losses: binary/categorical cross entropy, MSE, MAE, MAPE.

Every loss averages over all elements (batch x bands x pixels). ``loss_value``
builds an autodiff graph; ``loss_gradient`` is the independent closed form of
the same derivative.
"""

from __future__ import annotations

from enum import Enum

import numpy as np

from . import autodiff as ad
from .autodiff import EPS, Tensor
from .errors import DomainError, ShapeError


class LossKind(str, Enum):
    BCE = "bce"
    CCE = "cce"
    MSE = "mse"
    MAE = "mae"
    MAPE = "mape"

    @property
    def label(self) -> str:
        return _LABELS[self]

    @classmethod
    def parse(cls, value: "str | LossKind") -> "LossKind":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower()
        key = _ALIASES.get(key, key)
        try:
            return cls(key)
        except ValueError:
            raise ValueError(
                f"unknown loss {value!r}; choose from {', '.join(k.value for k in cls)}"
            ) from None


_LABELS = {
    LossKind.BCE: "Binary cross entropy",
    LossKind.CCE: "Categorical cross entropy",
    LossKind.MAE: "MAE",
    LossKind.MAPE: "MAPE",
    LossKind.MSE: "MSE",
}
_ALIASES = {
    "binary_cross_entropy": "bce",
    "categorical_cross_entropy": "cce",
}

# column order of the published comparison table
TABLE_ORDER = (LossKind.BCE, LossKind.CCE, LossKind.MAE, LossKind.MAPE, LossKind.MSE)


def _check(kind: LossKind, pred_shape, target: np.ndarray) -> None:
    if tuple(pred_shape) != target.shape:
        raise ShapeError(f"pred shape {tuple(pred_shape)} != target shape {target.shape}")
    if target.size == 0:
        raise ShapeError("empty tensors")
    if kind in (LossKind.BCE, LossKind.CCE) and (target.min() < 0 or target.max() > 1):
        raise DomainError(f"{kind.value} targets must lie in [0, 1]")


def _target_array(target, dtype) -> np.ndarray:
    arr = target.data if isinstance(target, Tensor) else np.asarray(target)
    return arr.astype(dtype, copy=False)


def loss_value(kind, pred: Tensor, target) -> Tensor:
    """Scalar loss tensor, differentiable with respect to ``pred``."""
    kind = LossKind.parse(kind)
    if not isinstance(pred, Tensor):
        pred = Tensor(pred)
    t = _target_array(target, pred.dtype)
    _check(kind, pred.shape, t)
    if kind is LossKind.MSE:
        diff = pred - t
        return ad.mean(diff * diff)
    if kind is LossKind.MAE:
        return ad.mean(ad.abs(pred - t))
    if kind is LossKind.MAPE:
        return ad.mean(ad.abs(ad.div(Tensor(t) - pred, Tensor(t))))
    p = ad.clamp(pred, EPS, 1.0 - EPS)
    if kind is LossKind.CCE:
        return ad.mean(ad.log(p) * t) * -1.0
    return ad.mean(ad.log(p) * t + ad.log(1.0 - p) * (1.0 - t)) * -1.0


def loss_gradient(kind, pred, target) -> np.ndarray:
    """Closed-form d(loss)/d(pred) matching ``loss_value``'s clamping rules."""
    kind = LossKind.parse(kind)
    p = pred.data if isinstance(pred, Tensor) else np.asarray(pred, dtype=np.float64)
    t = _target_array(target, p.dtype)
    _check(kind, p.shape, t)
    n = p.size
    if kind is LossKind.MSE:
        g = 2.0 * (p - t) / n
    elif kind is LossKind.MAE:
        g = np.sign(p - t) / n
    elif kind is LossKind.MAPE:
        denom = np.maximum(np.abs(t), EPS)
        g = np.sign(p - t) / denom / n
    else:
        upper = p.dtype.type(1.0 - EPS)
        active = (p >= EPS) & (p <= upper)
        pc = np.clip(p, EPS, upper)
        if kind is LossKind.CCE:
            g = -t / pc / n
        else:
            g = (-t / pc + (1.0 - t) / (1.0 - pc)) / n
        g = np.where(active, g, 0.0)
    return g.astype(p.dtype, copy=False)
