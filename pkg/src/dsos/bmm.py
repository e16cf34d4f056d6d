"""Two-component Beta mixture used to split noisy samples into ID and OOD.

The fit is plain EM: posteriors in the E-step, weighted method of moments in
the M-step, started from a median split and run for a fixed number of
iterations so it is fully deterministic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateFitError, InputError
from .synthgen import CLEAN, ID_NOISE, OOD

EPS = 1e-4
SHAPE_MIN, SHAPE_MAX = 0.05, 100.0
MIN_FIT_SIZE = 20
FALLBACK_THRESHOLD = 0.5


def _log_beta_fn(a: float, b: float) -> float:
    return math.lgamma(a) + math.lgamma(b) - math.lgamma(a + b)


def beta_pdf(x, a: float, b: float):
    if not (a > 0 and b > 0):
        raise InputError(f"Beta shapes must be positive, got a={a}, b={b}")
    xs = np.clip(np.asarray(x, dtype=np.float64), EPS, 1 - EPS)
    out = np.exp((a - 1) * np.log(xs) + (b - 1) * np.log1p(-xs) - _log_beta_fn(a, b))
    return float(out) if out.ndim == 0 else out


@dataclass
class BetaMixture2:
    """Component 1 is the lower-mean (ID) component, component 2 the OOD one."""

    a1: float
    b1: float
    a2: float
    b2: float
    w1: float = 0.5
    w2: float = 0.5

    @property
    def means(self) -> tuple[float, float]:
        return self.a1 / (self.a1 + self.b1), self.a2 / (self.a2 + self.b2)

    def weighted_densities(self, x) -> tuple[np.ndarray, np.ndarray]:
        return self.w1 * beta_pdf(x, self.a1, self.b1), self.w2 * beta_pdf(x, self.a2, self.b2)

    def as_dict(self) -> dict[str, float]:
        return {k: float(getattr(self, k)) for k in ("a1", "b1", "a2", "b2", "w1", "w2")}


def _moment_shapes(x: np.ndarray, r: np.ndarray) -> tuple[float, float] | None:
    total = r.sum()
    if total <= 0:
        return None
    m = float((r * x).sum() / total)
    s2 = float((r * (x - m) ** 2).sum() / total)
    if s2 <= 1e-12:
        return None
    common = m * (1 - m) / s2 - 1
    a = min(max(m * common, SHAPE_MIN), SHAPE_MAX)
    b = min(max((1 - m) * common, SHAPE_MIN), SHAPE_MAX)
    return a, b


def _responsibilities(bmm: BetaMixture2, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    d1, d2 = bmm.weighted_densities(x)
    total = d1 + d2
    dead = total <= 0
    safe = np.where(dead, 1.0, total)
    r1 = np.where(dead, 0.5, d1 / safe)
    return r1, 1.0 - r1


def fit(values, iters: int = 10) -> BetaMixture2:
    """Fit the mixture to values in (0, 1); needs at least 20 of them.

    A component that receives no mass or has zero spread cannot be moment
    matched; it is given the minimal shapes (U-shaped, no interior mode) so
    that ``id_mode_valid`` rejects the fit downstream.
    """
    x = np.clip(np.asarray(values, dtype=np.float64).ravel(), EPS, 1 - EPS)
    if x.size < MIN_FIT_SIZE:
        raise DegenerateFitError(f"need at least {MIN_FIT_SIZE} values to fit a mixture, got {x.size}")
    if iters < 1:
        raise InputError("iters must be positive")

    r1 = (x <= np.median(x)).astype(np.float64)
    r2 = 1.0 - r1
    bmm = BetaMixture2(1.0, 1.0, 1.0, 1.0)
    for it in range(iters):
        shapes = [_moment_shapes(x, r) for r in (r1, r2)]
        (a1, b1), (a2, b2) = [s if s is not None else (SHAPE_MIN, SHAPE_MIN) for s in shapes]
        w1 = float(r1.mean())
        bmm = BetaMixture2(a1, b1, a2, b2, w1, 1.0 - w1)
        if it < iters - 1:
            r1, r2 = _responsibilities(bmm, x)

    m1, m2 = bmm.means
    if m1 > m2:
        bmm = BetaMixture2(bmm.a2, bmm.b2, bmm.a1, bmm.b1, bmm.w2, bmm.w1)
    return bmm


def posterior(bmm: BetaMixture2, x) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return ``(p_id, p_ood, underflow)``.

    Where both weighted densities underflow to zero the posterior is set to
    (0.5, 0.5) and ``underflow`` is True.
    """
    d1, d2 = bmm.weighted_densities(x)
    total = np.asarray(d1 + d2)
    underflow = total <= 0
    p_id = np.where(underflow, 0.5, d1 / np.where(underflow, 1.0, total))
    return p_id, 1.0 - p_id, underflow


def id_mode_valid(bmm: BetaMixture2) -> bool:
    """True when the ID component has an interior mode."""
    return bmm.a1 > 1 and bmm.b1 > 1


@dataclass
class Assessment:
    """Per-sample noise assessment, stored column-wise.

    ``u`` is the ID-noise posterior and ``v`` the not-OOD weight. ``bmm`` is
    None when the fallback rule was used (see ``fallback_reason``).
    """

    l_detect_raw: np.ndarray
    l_detect_norm: np.ndarray
    u: np.ndarray
    v: np.ndarray
    category: np.ndarray
    pivot_norm: float
    bmm: BetaMixture2 | None = None
    fallback_reason: str | None = None
    monotone: bool = True
    underflow_count: int = 0

    @property
    def fallback(self) -> bool:
        return self.fallback_reason is not None

    def counts(self) -> dict[str, int]:
        return {
            "clean": int(np.sum(self.category == CLEAN)),
            "id": int(np.sum(self.category == ID_NOISE)),
            "ood": int(np.sum(self.category == OOD)),
        }

    def summary(self) -> dict:
        out = dict(self.counts())
        out["bmm"] = self.bmm.as_dict() if self.bmm is not None else None
        out["fallback"] = self.fallback_reason
        return out


def _is_monotone(values: np.ndarray, u: np.ndarray, v: np.ndarray) -> bool:
    order = np.argsort(values, kind="stable")
    tol = 1e-12
    return bool(np.all(np.diff(u[order]) <= tol) and np.all(np.diff(v[order]) <= tol))


def assess(normalized, pivot_norm: float, bmm_iters: int = 10, raw=None) -> Assessment:
    """Classify samples as clean / ID / OOD from normalized metric values.

    Values at or below ``pivot_norm`` are clean. The rest are split by a Beta
    mixture, or by the fixed 0.5 threshold when the fit is rejected.
    """
    x = np.asarray(normalized, dtype=np.float64)
    n = x.shape[0]
    raw_values = x.copy() if raw is None else np.asarray(raw, dtype=np.float64)
    u = np.zeros(n)
    v = np.ones(n)
    category = np.full(n, CLEAN, dtype=np.int64)
    noisy = x > pivot_norm
    result = Assessment(raw_values, x, u, v, category, float(pivot_norm))
    if not noisy.any():
        return result

    xn = x[noisy]
    bmm = None
    try:
        bmm = fit(xn, bmm_iters)
        if not id_mode_valid(bmm):
            result.fallback_reason = "id component has no interior mode"
    except DegenerateFitError as exc:
        result.fallback_reason = str(exc)

    if result.fallback_reason is None:
        p_id, p_ood, underflow = posterior(bmm, xn)
        un, vn = np.clip(p_id, 0, 1), np.clip(1.0 - p_ood, 0, 1)
        result.bmm = bmm
        result.underflow_count = int(underflow.sum())
        result.monotone = _is_monotone(xn, un, vn)
        cat = np.where(p_id >= 0.5, ID_NOISE, OOD)
    else:
        is_id = xn < FALLBACK_THRESHOLD
        un = is_id.astype(np.float64)
        vn = is_id.astype(np.float64)
        cat = np.where(is_id, ID_NOISE, OOD)
    u[noisy], v[noisy], category[noisy] = un, vn, cat
    return result
