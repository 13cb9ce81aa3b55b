"""Mergeable Monte Carlo summaries and heavy-tail aware means."""
from dataclasses import dataclass
import math

import numpy as np


@dataclass(frozen=True)
class RunningStats:
    """Count, mean, centred second moment and max; merges are associative.

    Chan et al. pairwise update, so path chunks may be reduced in any order
    (up to floating-point reassociation).
    """

    count: int = 0
    mean: float = 0.0
    m2: float = 0.0
    max: float = -math.inf

    @classmethod
    def of(cls, values):
        v = np.asarray(values, dtype=float).ravel()
        if v.size == 0:
            return cls()
        mu = float(v.mean())
        return cls(int(v.size), mu, float(np.sum((v - mu) ** 2)), float(v.max()))

    def merge(self, other):
        if other.count == 0:
            return self
        if self.count == 0:
            return other
        n = self.count + other.count
        delta = other.mean - self.mean
        mean = self.mean + delta * other.count / n
        m2 = self.m2 + other.m2 + delta * delta * self.count * other.count / n
        return RunningStats(n, mean, m2, max(self.max, other.max))

    __add__ = merge

    @property
    def variance(self):
        return self.m2 / (self.count - 1) if self.count > 1 else 0.0

    @property
    def std_error(self):
        return math.sqrt(self.variance / self.count) if self.count > 0 else math.inf


def mean_and_se(values):
    s = RunningStats.of(values)
    return s.mean, s.std_error


def capped_mean(log_values, n_total=None):
    """Mean of ``exp(X)`` with the top ``sqrt(n)`` log-values capped at their threshold.

    Capping happens in the log domain, so no overflow occurs.  It is the
    stabilised counterpart of the plain mean: the two disagree when a few
    extreme weights dominate the sample.  ``n_total`` counts extra paths that
    contribute zero.
    """
    x = np.asarray(log_values, dtype=float)
    x = x[np.isfinite(x)]
    n = x.size if n_total is None else n_total
    if x.size == 0:
        return 0.0 if n else math.nan
    k = int(math.isqrt(max(x.size, 1)))
    if k >= x.size:
        cap = x.max()
    else:
        cap = np.partition(x, x.size - k - 1)[x.size - k - 1]
    xc = np.minimum(x, cap)
    top = xc.max()
    return float(math.exp(top) * np.sum(np.exp(xc - top)) / n)


def log_mean_exp(log_values, n_total=None):
    """``log(sum exp(x) / n)`` without overflow."""
    x = np.asarray(log_values, dtype=float)
    n = x.size if n_total is None else n_total
    if x.size == 0:
        return -math.inf
    top = x.max()
    return float(top + math.log(np.sum(np.exp(x - top)) / n))


def effective_sample_size(log_weights):
    """Kish effective sample size ``(sum w)^2 / sum w^2``."""
    lw = np.asarray(log_weights, dtype=float)
    lw = lw - lw.max()
    w = np.exp(lw)
    return float(w.sum() ** 2 / np.sum(w * w))


def normalized_weights(log_weights):
    lw = np.asarray(log_weights, dtype=float)
    w = np.exp(lw - lw.max())
    return w / w.sum()


def loglog_slope(x, y):
    """Least-squares slope of ``log y`` against ``log x`` over positive ``y``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    keep = (x > 0) & (y > 0)
    if keep.sum() < 2:
        return math.nan
    return float(np.polyfit(np.log(x[keep]), np.log(y[keep]), 1)[0])
