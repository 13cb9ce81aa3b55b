"""Weighted least-squares projection onto polynomials of the Brownian state.

The basis is the probabilists' Hermite family in ``u = W_t / sqrt(t)``,
which spans the same space as monomials ``1, W_t, ..., W_t**degree`` but
keeps the normal equations well conditioned at every node.
"""
from dataclasses import dataclass, field
import math

import numpy as np
from numpy.polynomial import hermite_e

from .errors import InvalidArgument


@dataclass
class RegressionEngine:
    degree: int = 4
    ridge: float = 1e-8
    min_effective: float = 50.0
    extra: tuple = ()
    coefficients: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.degree < 0 or int(self.degree) != self.degree:
            raise InvalidArgument("degree must be a nonnegative integer")
        if self.ridge < 0:
            raise InvalidArgument("ridge must be nonnegative")

    @staticmethod
    def scale(t):
        return math.sqrt(t) if t > 0 else 1.0

    @property
    def dimension(self):
        return self.degree + 1 + len(self.extra)

    def features(self, x, t):
        x = np.asarray(x, dtype=float)
        X = hermite_e.hermevander(x / self.scale(t), self.degree)
        if self.extra:
            X = np.concatenate([X] + [np.asarray(f(x), dtype=float)[..., None] for f in self.extra], axis=-1)
        return X

    def fit(self, x, y, t, weights=None, previous=None):
        """Coefficients of ``E[y | x]``; ``previous`` is reused when too few samples carry weight."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        w = np.ones_like(y) if weights is None else np.asarray(weights, dtype=float)
        if w.size == 0 or w.sum() <= 0 or (w.sum() ** 2 / np.sum(w * w)) < self.min_effective:
            if previous is not None:
                return previous
            if w.size == 0 or w.sum() <= 0:
                return np.zeros(self.dimension)
        X = self.features(x, t)
        Xw = X * w[:, None]
        A = X.T @ Xw
        rhs = Xw.T @ y
        # the constant column is left unpenalised so constants are reproduced exactly
        pen = self.ridge * max(np.trace(A) / A.shape[0], 1e-300)
        idx = np.arange(1, A.shape[0])
        A[idx, idx] += pen
        try:
            return np.linalg.solve(A, rhs)
        except np.linalg.LinAlgError:
            return np.linalg.lstsq(A, rhs, rcond=None)[0]

    def predict(self, coef, x, t):
        x = np.asarray(x, dtype=float)
        d = self.degree + 1
        out = hermite_e.hermeval(x / self.scale(t), coef[:d])
        for c, f in zip(coef[d:], self.extra):
            out = out + c * np.asarray(f(x), dtype=float)
        return out

    def derivative(self, coef, x, t):
        """``d/dx`` of the fitted function; extra features by central differences."""
        x = np.asarray(x, dtype=float)
        s = self.scale(t)
        d = self.degree + 1
        out = hermite_e.hermeval(x / s, hermite_e.hermeder(coef[:d])) / s
        eps = 1e-5 * np.maximum(1.0, np.abs(x))
        for c, f in zip(coef[d:], self.extra):
            out = out + c * (np.asarray(f(x + eps)) - np.asarray(f(x - eps))) / (2 * eps)
        return out


@dataclass(frozen=True)
class QuadratureEngine:
    """Gauss-Hermite evaluation of ``E[exp(c h(w + sqrt(T - t) X))]`` for Markov endpoints."""

    n_nodes: int = 80

    def log_value_and_slope(self, h, c, w, t, horizon):
        """Return ``(log M, dM/dw / M)`` at the points ``w``."""
        w = np.asarray(w, dtype=float)
        sigma = math.sqrt(max(horizon - t, 0.0))
        if sigma == 0.0:
            eps = 1e-6
            logm = c * h(w)
            slope = c * (h(w + eps) - h(w - eps)) / (2 * eps)
            return logm, slope
        x, wts = hermite_e.hermegauss(self.n_nodes)
        expo = c * h(w[..., None] + sigma * x) + np.log(wts)
        top = expo.max(axis=-1, keepdims=True)
        e = np.exp(expo - top)
        tot = e.sum(axis=-1)
        logm = top[..., 0] + np.log(tot) - 0.5 * math.log(2 * math.pi)
        # Stein identity: d/dw E f(w + sigma X) = E[f(w + sigma X) X] / sigma
        slope = (e * x).sum(axis=-1) / tot / sigma
        return logm, slope
