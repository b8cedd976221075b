"""Epsilon ladders and moderateness / negligibility fits."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy import stats

__all__ = [
    "EpsilonLadder",
    "ModeratenessReport",
    "NetsError",
    "make_ladder",
    "default_ladder",
    "fit_moderateness",
    "check_negligible",
    "write_reports",
]

FLOOR = 1e-300
LOG_CLAMP = 0.999 * math.exp(-1)
RESIDUAL_TOL = 0.5
NEGLIGIBLE_TOL = 0.25


class NetsError(ValueError):
    pass


@dataclass(frozen=True)
class EpsilonLadder:
    values: tuple
    ratio: float | None = None

    def __post_init__(self):
        v = tuple(float(e) for e in self.values)
        object.__setattr__(self, "values", v)
        if len(v) < 4:
            raise NetsError("a ladder needs at least 4 values")
        if any(not 0 < e <= 1 for e in v):
            raise NetsError("ladder values must lie in (0, 1]")
        if any(b >= a for a, b in zip(v, v[1:])):
            raise NetsError("ladder values must be strictly decreasing")

    def __iter__(self):
        return iter(self.values)

    def __len__(self):
        return len(self.values)

    def __getitem__(self, i):
        return self.values[i]

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.values)


def make_ladder(eps_max: float, ratio: float, count: int, log_scale: bool = False) -> EpsilonLadder:
    """Geometric ladder ``eps_max * ratio**k``; clamped below 1/e for log scales."""
    if not 0 < ratio < 1:
        raise NetsError(f"ratio must lie in (0, 1), got {ratio}")
    if not 0 < eps_max <= 1:
        raise NetsError(f"eps_max must lie in (0, 1], got {eps_max}")
    if count < 4:
        raise NetsError("count must be at least 4")
    if log_scale:
        eps_max = min(eps_max, LOG_CLAMP)
    return EpsilonLadder(tuple(eps_max * ratio**k for k in range(count)), ratio)


def default_ladder(log_scale: bool = False) -> EpsilonLadder:
    return make_ladder(0.3, 0.5, 8, log_scale)


@dataclass
class ModeratenessReport:
    model: str  # "power" | "logarithmic" | "negligible"
    exponent: float
    half_width: float
    residual: float
    verdict: bool
    intercept: float = 0.0
    power_exponent: float = 0.0
    power_residual: float = 0.0
    quantity: str = ""
    extra: dict = field(default_factory=dict)

    def row(self) -> tuple:
        return (self.quantity, self.model, self.exponent, self.half_width, self.residual, self.verdict)


def _prepare(ladder, samples) -> tuple[np.ndarray, np.ndarray]:
    eps = np.asarray(ladder.values if isinstance(ladder, EpsilonLadder) else ladder, dtype=float)
    y = np.asarray(samples, dtype=float)
    if eps.size < 4:
        raise NetsError("fewer than 4 ladder points")
    if y.shape != eps.shape:
        raise NetsError("samples are not aligned with the ladder")
    if not np.all(np.isfinite(y)):
        raise NetsError("non-finite samples")
    return eps, np.log(np.maximum(np.abs(y), FLOOR))


def _linfit(x, y):
    """Least squares ``y = a + b x``; returns (b, a, 95% half width of b, max |residual|)."""
    X = np.stack([np.ones_like(x), x], axis=1)
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    res = y - X @ coef
    dof = len(x) - 2
    sxx = float(np.sum((x - x.mean()) ** 2))
    if sxx == 0:
        raise NetsError("degenerate ladder")
    sigma2 = float(res @ res) / dof
    half = float(stats.t.ppf(0.975, dof) * math.sqrt(sigma2 / sxx))
    return float(coef[1]), float(coef[0]), half, float(np.max(np.abs(res)))


def fit_moderateness(ladder, samples, tol: float = RESIDUAL_TOL, quantity: str = "") -> ModeratenessReport:
    """Fit ``log sample`` against ``log(1/eps)`` (power) and ``log log(1/eps)`` (logarithmic).

    The logarithmic model wins when it cuts the max residual by at least 2x.
    """
    eps, logy = _prepare(ladder, samples)
    if np.all(logy <= math.log(FLOOR) + 1e-9):
        return ModeratenessReport("negligible", math.inf, 0.0, 0.0, True, quantity=quantity)
    lx = np.log(1 / eps)
    N, a, half, res = _linfit(lx, logy)
    report = ModeratenessReport("power", N, half, res, res < tol, a, N, res, quantity)
    if np.all(eps < 1):
        llx = np.log(lx)
        if np.all(np.isfinite(llx)) and np.ptp(llx) > 0:
            k, b, khalf, kres = _linfit(llx, logy)
            if res > 1e-12 and kres * 2 <= res:
                report = ModeratenessReport("logarithmic", k, khalf, kres, kres < tol, b, N, res, quantity)
    return report


def check_negligible(ladder, samples, q: float, tol: float = NEGLIGIBLE_TOL) -> tuple[bool, float]:
    """True iff the fitted decay order ``samples ~ eps^order`` satisfies order >= q - tol."""
    eps, logy = _prepare(ladder, samples)
    if np.all(logy <= math.log(FLOOR) + 1e-9):
        return True, math.inf
    order, *_ = _linfit(np.log(eps), logy)
    return bool(order >= q - tol), order


def write_reports(path, reports: Iterable[ModeratenessReport]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["quantity", "model", "exponent", "half_width", "residual", "verdict"])
        for r in reports:
            w.writerow(r.row())
