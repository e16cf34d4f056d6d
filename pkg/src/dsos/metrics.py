"""Per-sample noise detection scores.

The main score is the collision entropy of the label halfway between the
given one-hot label and the network prediction. A sample whose prediction
is one-hot on a different class lands exactly on ``PIVOT = -ln 0.5``; an
agreeing prediction gives 0 and an uninformative one lands above the pivot
when ``C >= 3``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InputError
from .nn import PROB_FLOOR, row_entropy, safe_log

PIVOT = -math.log(0.5)

KINDS = ("il_collision", "il_shannon", "small_loss")


def _as_label(x, name: str) -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    if a.ndim != 1:
        raise InputError(f"{name} must be a 1-D probability vector")
    return a


def interpolated_label(given, predicted) -> np.ndarray:
    g, p = np.asarray(given, dtype=np.float64), np.asarray(predicted, dtype=np.float64)
    if g.shape != p.shape:
        raise InputError(f"label shapes differ: {g.shape} vs {p.shape}")
    return 0.5 * (g + p)


def collision_entropy(label) -> float:
    p = _as_label(label, "label")
    return float(-np.log(np.dot(p, p)))


def shannon_entropy(label) -> float:
    p = _as_label(label, "label")
    nz = p[p > 0]
    return float(-(nz * np.log(nz)).sum()) + 0.0


def small_loss(predicted, given_class: int) -> float:
    p = _as_label(predicted, "predicted")
    return float(-np.log(max(p[given_class], PROB_FLOOR))) + 0.0


@dataclass(frozen=True)
class MinMaxMap:
    """Affine map ``x -> (x - lo) / (hi - lo)``; sends everything to 0 when ``hi == lo``."""

    lo: float
    hi: float

    def apply(self, x):
        a = np.asarray(x, dtype=np.float64)
        if self.hi == self.lo:
            out = np.zeros_like(a)
        else:
            out = (a - self.lo) / (self.hi - self.lo)
        return float(out) if out.ndim == 0 else out


def minmax_normalize(values) -> tuple[np.ndarray, MinMaxMap]:
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise InputError("minmax_normalize needs a nonempty 1-D vector")
    if not np.all(np.isfinite(v)):
        raise InputError("minmax_normalize needs finite values")
    m = MinMaxMap(float(v.min()), float(v.max()))
    return np.clip(m.apply(v), 0.0, 1.0), m


@dataclass
class MetricVector:
    values: np.ndarray
    kind: str


def compute_metric_vector(labels, predictions, kind: str = "il_collision", num_classes: int | None = None) -> MetricVector:
    """Score every sample against its original given label.

    ``labels`` are class indices (the pristine given labels), ``predictions``
    one probability row per sample.
    """
    if kind not in KINDS:
        raise InputError(f"unknown metric kind {kind!r}; expected one of {KINDS}")
    y = np.asarray(labels, dtype=np.int64)
    p = np.asarray(predictions, dtype=np.float64)
    if p.ndim != 2 or p.shape[0] != y.shape[0]:
        raise InputError(f"need one prediction row per sample: {p.shape[0] if p.ndim == 2 else p.shape} rows "
                         f"for {y.shape[0]} labels")
    c = p.shape[1] if num_classes is None else num_classes
    if p.shape[1] != c:
        raise InputError(f"predictions have {p.shape[1]} columns, expected {c}")
    rows = np.arange(y.shape[0])
    if kind == "small_loss":
        values = -safe_log(p[rows, y])
    else:
        y_int = 0.5 * p
        y_int[rows, y] += 0.5
        if kind == "il_collision":
            values = -np.log((y_int * y_int).sum(axis=1))
        else:
            values = row_entropy(y_int)
    # -0.0 and tiny negative rounding around exact agreement
    return MetricVector(np.maximum(values, 0.0), kind)
