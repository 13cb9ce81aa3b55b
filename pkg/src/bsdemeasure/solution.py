"""Candidate BSDE solutions sampled on a time grid."""
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class SolutionPath:
    """Per-path arrays of a candidate pair ``(Y, Z)``.

    ``Z[:, i]`` is the integrand on ``[t_i, t_{i+1})``; its last column is
    unused.  For solutions stopped at a random time, ``W`` and ``clock`` are
    frozen once the path stops (``clock = t ^ tau``), so left-point sums over
    their increments integrate exactly up to the stopping time.
    """

    times: np.ndarray
    W: np.ndarray
    Y: np.ndarray
    Z: np.ndarray
    xi: np.ndarray
    label: str
    params: dict = field(default_factory=dict)
    clock: np.ndarray | None = None
    tau: np.ndarray | None = None
    truncated: np.ndarray | None = None
    log_m: np.ndarray | None = None
    undefined_at_origin: bool = False

    @property
    def n_paths(self):
        return self.Y.shape[0]

    @property
    def running_time(self):
        if self.clock is not None:
            return self.clock
        return np.broadcast_to(self.times, self.Y.shape)

    @property
    def dW(self):
        return np.diff(self.W, axis=1)

    @property
    def dt(self):
        return np.diff(self.running_time, axis=1)

    @property
    def valid(self):
        ok = np.ones(self.n_paths, dtype=bool)
        if self.truncated is not None:
            ok &= ~self.truncated
        return ok

    def stochastic_integral(self):
        """Left-point sums ``S_t = sum Z dW`` on the grid, ``S_0 = 0``."""
        inc = np.nan_to_num(self.Z[:, :-1]) * self.dW
        return np.concatenate([np.zeros((self.n_paths, 1)), np.cumsum(inc, axis=1)], axis=1)

    def quadratic_variation(self):
        inc = np.nan_to_num(self.Z[:, :-1]) ** 2 * self.dt
        return np.concatenate([np.zeros((self.n_paths, 1)), np.cumsum(inc, axis=1)], axis=1)

    def relative_Y(self):
        """``Y - Y_0``, the normalisation used for the explicit log family."""
        return self.Y - self.Y[:, :1]

    def subset(self, rows):
        def take(a):
            return None if a is None else a[rows]
        return SolutionPath(self.times, self.W[rows], self.Y[rows], self.Z[rows], self.xi[rows], self.label,
                            dict(self.params), take(self.clock), take(self.tau), take(self.truncated),
                            take(self.log_m), self.undefined_at_origin)

    def to_rows(self, path_ids=None):
        """Yield ``(path_id, t, Y, Z)`` rows for CSV export."""
        ids = range(self.n_paths) if path_ids is None else path_ids
        for p in ids:
            for i, t in enumerate(self.times):
                yield p, float(t), float(self.Y[p, i]), float(self.Z[p, i])
