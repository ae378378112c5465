"""Numerically stable truncated-normal CDF over interval unions.

The selective p-value is one minus the CDF of a centered normal truncated to
the selection event's tau-set, evaluated at the observed statistic. The
events of interest routinely live many standard deviations into the tail, so
all interval masses are computed from the complementary error function in
log space and combined largest-first.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import log_ndtr, ndtr

from .errors import DegenerateEventError, TrackingBugError
from .events import INF, TruncationSet

#: outside this many standard deviations, plain-precision Phi differences
#: lose all relative accuracy; switch to the log-space tail path
_TAIL_SWITCH = 6.0


def _logdiff(la: float, lb: float) -> float:
    """log(exp(la) - exp(lb)) for la >= lb."""
    if lb == -INF:
        return la
    d = lb - la
    if d >= 0.0:  # equal up to rounding: zero mass
        return -INF
    return la + math.log1p(-math.exp(d))


def _log_interval_mass(lo: float, hi: float) -> float:
    """log P(lo <= Z <= hi) for standard normal Z, stable in both tails."""
    if hi <= lo:
        return -INF
    if lo >= _TAIL_SWITCH or hi <= -_TAIL_SWITCH:
        # one-sided deep tail: work with the smaller tail via symmetry
        if lo >= 0.0:
            return _logdiff(log_ndtr(-lo), log_ndtr(-hi))
        return _logdiff(log_ndtr(hi), log_ndtr(lo))
    if lo >= 0.0:
        return _logdiff(log_ndtr(-lo), log_ndtr(-hi))
    if hi <= 0.0:
        return _logdiff(log_ndtr(hi), log_ndtr(lo))
    mass = ndtr(hi) - ndtr(lo)
    return math.log(mass) if mass > 0.0 else -INF


def _logsum(parts: list[float]) -> float:
    """log-sum-exp accumulated in descending order of magnitude."""
    parts = [p for p in parts if p != -INF]
    if not parts:
        return -INF
    parts.sort(reverse=True)
    acc = parts[0]
    for p in parts[1:]:
        acc = np.logaddexp(acc, p)
    return float(acc)


@dataclass(frozen=True)
class TruncatedNormal:
    """Normal(mean, variance) conditioned on a union of intervals."""

    mean: float
    variance: float
    support: TruncationSet

    def __post_init__(self):
        if not self.variance > 0.0:
            raise ValueError("variance must be positive")
        if self.support.is_empty:
            raise DegenerateEventError("truncation support is empty")

    def _standardized(self) -> list[tuple[float, float]]:
        s = math.sqrt(self.variance)
        return [((lo - self.mean) / s,
                 (hi - self.mean) / s if hi != INF else INF)
                for lo, hi in self.support.intervals]

    def cdf(self, x):
        """P(X <= x | X in support), clamped to [0, 1]; maps over arrays."""
        if np.ndim(x) > 0:
            return np.array([self.cdf(float(v)) for v in np.asarray(x).ravel()])
        if not math.isfinite(x):
            raise ValueError("cdf argument must be finite")
        u = (x - self.mean) / math.sqrt(self.variance)
        ivals = self._standardized()
        log_total = _logsum([_log_interval_mass(lo, hi) for lo, hi in ivals])
        if log_total == -INF:
            raise DegenerateEventError(
                "truncation support mass underflows even in log space")
        parts = []
        for lo, hi in ivals:
            if u <= lo:
                break
            parts.append(_log_interval_mass(lo, min(hi, u)))
        log_num = _logsum(parts)
        if log_num == -INF:
            return 0.0
        value = math.exp(log_num - log_total)
        if value > 1.0 + 1e-10:
            warnings.warn(f"truncated-normal cdf clamped from {value!r}",
                          RuntimeWarning, stacklevel=2)
        return min(value, 1.0)


def selective_pvalue(delta_hat: float, eta_sigma_eta: float,
                     support: TruncationSet, eps: float = 1e-8) -> float:
    """Right-tail probability of the observed statistic under the event.

    ``delta_hat`` must lie inside ``support`` (up to ``eps``, scaled by the
    statistic's standard deviation); anything else means the event was
    recorded incorrectly.
    """
    if not eta_sigma_eta > 0.0:
        raise ValueError("eta_sigma_eta must be positive")
    scale = max(1.0, math.sqrt(eta_sigma_eta))
    if not support.contains(delta_hat, eps=eps * scale):
        raise TrackingBugError(
            f"observed statistic {delta_hat:.6g} outside truncation set "
            f"{support.intervals}", "selective_pvalue")
    tn = TruncatedNormal(0.0, eta_sigma_eta, support)
    p = 1.0 - tn.cdf(delta_hat)
    return min(max(p, 0.0), 1.0)
