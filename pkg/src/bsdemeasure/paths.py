"""Time grids, seeded Brownian ensembles, affine-barrier hitting times and
the ``t/(1+t)`` time change that maps random horizons onto ``[0, 1]``.
"""
from dataclasses import dataclass
import csv
import gzip
import math

import numpy as np

from . import _backend
from ._fallback import hitting_on_grid
from .errors import InvalidArgument
from .solution import SolutionPath

TRUNCATED = math.nan


@dataclass(frozen=True)
class TimeGrid:
    horizon: float
    nodes: np.ndarray
    step: float | None = None

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        if nodes.ndim != 1 or nodes.size < 2:
            raise InvalidArgument("a grid needs at least two nodes")
        if nodes[0] != 0.0 or nodes[-1] != self.horizon:
            raise InvalidArgument("grid must run from 0 to the horizon")
        if np.any(np.diff(nodes) <= 0):
            raise InvalidArgument("grid nodes must be strictly increasing")
        nodes.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)

    @property
    def n_steps(self):
        return self.nodes.size - 1

    @property
    def increments(self):
        if self.step is not None:
            return np.full(self.n_steps, self.step)
        return np.diff(self.nodes)

    def index_of(self, t):
        """Index of the node closest to ``t``."""
        return int(np.argmin(np.abs(self.nodes - t)))


def build_grid(horizon, n_steps):
    """Uniform grid with spacing ``horizon / n_steps``."""
    if not horizon > 0:
        raise InvalidArgument(f"horizon must be positive, got {horizon}")
    if int(n_steps) != n_steps or n_steps < 1:
        raise InvalidArgument(f"n_steps must be a positive integer, got {n_steps}")
    n_steps = int(n_steps)
    step = horizon / n_steps
    nodes = np.arange(n_steps + 1, dtype=float) * step
    nodes[-1] = horizon
    return TimeGrid(float(horizon), nodes, step)


def geometric_grid(horizon, t_min, ratio=1.01, extra_nodes=()):
    """Grid ``0, t_min, t_min*ratio, ..., horizon`` refined towards the origin.

    ``extra_nodes`` are merged in so that probes can be evaluated exactly on a
    node.
    """
    if not 0 < t_min < horizon:
        raise InvalidArgument("need 0 < t_min < horizon")
    if ratio <= 1:
        raise InvalidArgument("ratio must exceed 1")
    n = int(math.ceil(math.log(horizon / t_min) / math.log(ratio)))
    pts = t_min * ratio ** np.arange(n)
    pts = np.concatenate([[0.0], pts[pts < horizon], np.asarray(extra_nodes, dtype=float), [horizon]])
    return TimeGrid(float(horizon), np.unique(pts))


@dataclass(frozen=True)
class BrownianEnsemble:
    """Paths ``W(t_i)`` with ``values[:, i+1] - values[:, i] = increments[:, i]``."""

    grid: TimeGrid
    n_paths: int
    seed: int
    increments: np.ndarray
    values: np.ndarray
    path_start: int = 0

    @property
    def path_ids(self):
        return np.arange(self.path_start, self.path_start + self.n_paths)

    def terminal(self):
        return self.values[:, -1]

    def coarsen(self, factor):
        """The same paths observed at every ``factor``-th node (coupled refinement studies)."""
        factor = int(factor)
        if factor < 1 or self.grid.n_steps % factor:
            raise InvalidArgument("factor must divide the number of steps")
        nodes = self.grid.nodes[::factor]
        step = None if self.grid.step is None else self.grid.step * factor
        grid = TimeGrid(self.grid.horizon, nodes, step)
        values = self.values[:, ::factor]
        return BrownianEnsemble(grid, self.n_paths, self.seed, np.diff(values, axis=1), values,
                                self.path_start)

    def subset(self, rows):
        rows = np.asarray(rows)
        return BrownianEnsemble(self.grid, int(rows.size), self.seed, self.increments[rows],
                                self.values[rows], self.path_start)


def simulate_ensemble(grid, n_paths, seed, n_threads=1, path_start=0, backend=None):
    """Brownian paths on ``grid`` from per-path counter-based substreams.

    Path ``p`` depends only on ``(seed, p)``, so any chunking or thread count
    reproduces the same arrays.
    """
    if n_paths < 1:
        raise InvalidArgument("n_paths must be positive")
    z = _backend.normal_block(seed, path_start, n_paths, 0, grid.n_steps, 0, n_threads, backend)
    if grid.step is not None:
        inc = math.sqrt(grid.step) * z
    else:
        inc = np.sqrt(np.diff(grid.nodes))[None, :] * z
    values = np.zeros((n_paths, grid.n_steps + 1))
    np.cumsum(inc, axis=1, out=values[:, 1:])
    inc.setflags(write=False)
    values.setflags(write=False)
    return BrownianEnsemble(grid, int(n_paths), int(seed), inc, values, int(path_start))


@dataclass(frozen=True)
class Barrier:
    """The line ``W <= slope * t + intercept``, approached from above."""

    slope: float
    intercept: float

    @classmethod
    def tau_b(cls, b):
        """``inf{t: W_t <= b t - 1}``."""
        return cls(float(b), -1.0)

    @classmethod
    def rho_c(cls, c):
        """``inf{t: W_t <= t - c}``."""
        return cls(1.0, -float(c))

    def level(self, t):
        return self.slope * np.asarray(t) + self.intercept


@dataclass(frozen=True)
class HittingRecord:
    """Hitting times for one barrier; ``tau`` is NaN (TRUNCATED) without a hit."""

    barrier: Barrier
    tau: np.ndarray
    crossing_index: np.ndarray
    bridge_corrected: bool
    horizon: float

    @property
    def truncated(self):
        return np.isnan(self.tau)

    @property
    def truncated_fraction(self):
        return float(np.mean(self.truncated))


def detect_hitting(times, values, barrier, bridge_correction=True, seed=0, path_ids=None):
    """First passage of stored paths below one barrier or a nested family.

    ``values`` is ``(n_paths, n_nodes)`` (a single path may be 1-D).  Without
    bridge correction the crossing time is linear interpolation inside the
    first interval whose right endpoint is on or below the line.  With it,
    an interval whose endpoints both lie above the line also fires with the
    Brownian-bridge probability ``exp(-2 d0 d1 / dt)``, and the time inside a
    firing interval is drawn from the bridge's exact passage law.  The
    uniforms come from the ``(seed, path)`` substreams.

    ``barrier`` may be a list of barriers with a common slope and decreasing
    intercepts; one record per barrier is returned in that case.
    """
    times = np.asarray(times, dtype=float)
    vals = np.atleast_2d(np.asarray(values, dtype=float))
    barriers = list(barrier) if isinstance(barrier, (list, tuple)) else [barrier]
    slope = barriers[0].slope
    if any(b.slope != slope for b in barriers):
        raise InvalidArgument("nested barriers must share a slope")
    ic = np.array([b.intercept for b in barriers])
    if np.any(np.diff(ic) > 0):
        raise InvalidArgument("nested barriers must have decreasing intercepts")
    if vals.shape[1] != times.size:
        raise InvalidArgument("values do not match the time grid")
    ids = np.arange(vals.shape[0]) if path_ids is None else np.asarray(path_ids)
    tau, index = hitting_on_grid(seed, ids, times, vals, slope, ic, bridge_correction)
    recs = [HittingRecord(b, tau[:, j], index[:, j], bool(bridge_correction), float(times[-1]))
            for j, b in enumerate(barriers)]
    return recs if isinstance(barrier, (list, tuple)) else recs[0]


def ensemble_hitting(ensemble, barrier, bridge_correction=True):
    return detect_hitting(ensemble.grid.nodes, ensemble.values, barrier, bridge_correction,
                          ensemble.seed, ensemble.path_ids)


@dataclass(frozen=True)
class PassageSample:
    """Streamed first-passage simulation; no full path arrays are kept.

    ``tau[:, j]`` is the hitting time of barrier ``j`` (NaN if beyond the
    horizon), ``w_record[:, r]`` is ``W`` at ``record_times[r]`` stopped at
    the last barrier, and ``log_lr`` is ``log dP/dP_mu`` for the drifted
    proposal used to simulate.
    """

    barriers: tuple
    tau: np.ndarray
    record_times: np.ndarray
    w_record: np.ndarray
    w_stop: np.ndarray
    t_stop: np.ndarray
    log_lr: np.ndarray
    drifts: tuple
    dt: float
    horizon: float
    bridge_corrected: bool
    seed: int

    @property
    def n_paths(self):
        return self.tau.shape[0]

    @property
    def truncated(self):
        return np.isnan(self.tau[:, -1])

    @property
    def truncated_fraction(self):
        return float(np.mean(self.truncated))

    def record(self, j):
        return HittingRecord(self.barriers[j], self.tau[:, j], np.full(self.n_paths, -1),
                             self.bridge_corrected, self.horizon)


def sample_first_passage(barriers, n_paths, seed, dt=1e-3, horizon=None, drifts=None,
                         bridge_correction=True, record_times=(), n_threads=1, chunk=50_000,
                         backend=None):
    """Simulate until each path has crossed every barrier, or up to ``horizon``.

    The default horizon for a single slope-``b`` barrier is ``30 / b``.
    ``drifts`` (one per barrier segment) switch on Girsanov importance
    sampling: the path is simulated with that drift and ``log_lr`` carries
    the exact discrete likelihood ratio back to driftless Brownian motion.
    """
    barriers = tuple(barriers) if isinstance(barriers, (list, tuple)) else (barriers,)
    slope = barriers[0].slope
    if any(b.slope != slope for b in barriers):
        raise InvalidArgument("nested barriers must share a slope")
    if horizon is None:
        if slope <= 0:
            raise InvalidArgument("a horizon is required for non-rising barriers")
        horizon = 30.0 / slope
    if not dt > 0 or not horizon > 0:
        raise InvalidArgument("dt and horizon must be positive")
    ic = np.array([b.intercept for b in barriers])
    if np.any(np.diff(ic) > 0):
        raise InvalidArgument("nested barriers must have decreasing intercepts")
    drifts = np.zeros(len(barriers)) if drifts is None else np.broadcast_to(np.asarray(drifts, float), (len(barriers),))
    max_steps = int(round(horizon / dt))
    record_times = np.asarray(record_times, dtype=float)
    order = np.argsort(record_times)
    rec_steps = np.rint(record_times[order] / dt).astype(np.int64)
    parts = []
    for start in range(0, n_paths, chunk):
        n = min(chunk, n_paths - start)
        parts.append(_backend.first_passage(seed, start, n, dt, max_steps, slope, ic, drifts,
                                            bridge_correction, rec_steps, n_threads, backend))
    tau, wrec, ws, ts, ll = (np.concatenate(x, axis=0) for x in zip(*parts))
    unsorted = np.empty_like(wrec)
    unsorted[:, order] = wrec
    return PassageSample(barriers, tau, rec_steps[np.argsort(order)] * dt, unsorted, ws, ts, ll,
                         tuple(float(d) for d in drifts), float(dt), float(max_steps * dt),
                         bool(bridge_correction), int(seed))


def rho(t):
    """``t / (1 + t)``, mapping ``[0, inf]`` onto ``[0, 1]``."""
    t = np.asarray(t, dtype=float)
    with np.errstate(invalid="ignore"):
        return np.where(np.isinf(t), 1.0, t / (1.0 + t))


def rho_inverse(s):
    s = np.asarray(s, dtype=float)
    if np.any((s < 0) | (s > 1)):
        raise InvalidArgument("rho_inverse is defined on [0, 1]")
    with np.errstate(divide="ignore"):
        return np.where(s == 1.0, np.inf, s / (1.0 - s))


def h(s):
    """Integrand scale ``1 / (1 - s)`` of the time change."""
    return 1.0 / (1.0 - np.asarray(s, dtype=float))


def time_change_solution(solution, xi_hat=None):
    """Map a solution on a random horizon to the horizon-1 BSDE.

    ``y_s = Y(rho^{-1}(s))``, ``z_s = h(s) Z(rho^{-1}(s))`` and the driving
    Brownian motion has increments ``dW~ = h(s)^{-1} dW(rho^{-1}(s))``
    (left point).  The output grid is the image of the input nodes plus a
    final node at 1; paths are constant after ``rho(tau)``.
    """
    if solution.tau is None:
        raise InvalidArgument("time change needs stopped solutions")
    if solution.truncated is not None and np.any(solution.truncated):
        raise InvalidArgument("evaluation at t = 1 needs a finite stopping time on every path")
    u = solution.times
    s = rho(u)
    clock = solution.running_time
    s_clock = rho(clock)
    hs = h(s_clock[:, :-1])
    dWt = np.diff(solution.W, axis=1) / hs
    Wt = np.concatenate([np.zeros((solution.n_paths, 1)), np.cumsum(dWt, axis=1)], axis=1)
    z = h(s_clock) * np.nan_to_num(solution.Z)
    add_end = s[-1] < 1.0
    if add_end:
        s = np.append(s, 1.0)
        Wt = np.concatenate([Wt, Wt[:, -1:]], axis=1)
        y = np.concatenate([solution.Y, solution.Y[:, -1:]], axis=1)
        z = np.concatenate([z, np.zeros((solution.n_paths, 1))], axis=1)
        s_clock = np.concatenate([s_clock, s_clock[:, -1:]], axis=1)
    else:
        y = solution.Y
    tau_hat = rho(solution.tau)
    if xi_hat is None:
        xi_hat = solution.xi
    return SolutionPath(s, Wt, y, z, np.asarray(xi_hat, dtype=float), solution.label + ":time-changed",
                        dict(solution.params), s_clock, tau_hat, solution.truncated)


def write_paths_csv(ensemble, path, compress=None):
    """Export ``path_id, t, W`` rows; gzip when ``compress`` or a ``.gz`` name."""
    compress = str(path).endswith(".gz") if compress is None else compress
    opener = gzip.open if compress else open
    with opener(path, "wt", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["path_id", "t", "W"])
        for p, pid in enumerate(ensemble.path_ids):
            for t, x in zip(ensemble.grid.nodes, ensemble.values[p]):
                w.writerow([int(pid), repr(float(t)), repr(float(x))])
