"""Constructing a measure solution by iterated Girsanov re-weighting.

Each sweep projects ``xi`` onto the Brownian state under the current
measure ``Q^n = R^n_T P``, reads off the control ``Z^{n+1}`` from the
martingale increments against ``dW^n = dW - g(Z^n) dt``, and re-weights the
fixed base sample with ``R^{n+1} = exp(sum g(Z^{n+1}) dW - 1/2 sum g^2 dt)``.
All measures live on one simulated ensemble, so no path is ever redrawn.
"""
import csv
from dataclasses import dataclass, field, replace
import math

import numpy as np

from . import closedform
from .errors import ImportanceDegeneracyError, InvalidArgument, NonConvergenceError
from .generators import eval_g, phi_integral, zero_normalize
from .paths import detect_hitting
from .regression import RegressionEngine
from .solution import SolutionPath
from .stats import effective_sample_size, loglog_slope, normalized_weights
from . import verify

__all__ = ["RegressionEngine", "DiagnosticsConfig", "IterationState", "iterate_measure_solution",
           "convergence_trace", "boundedness_monitor", "tightness_statistic", "write_trace_csv"]


@dataclass(frozen=True)
class DiagnosticsConfig:
    """Exponents of the weighted norms ``E sup e^{beta Phi} |Y|^p`` and ``E (int e^{beta Phi} Z^2)^{p/2}``."""

    beta: float = 1.0
    p: float = 2.0
    track_every: int = 1

    def __post_init__(self):
        if not self.beta > 0:
            raise InvalidArgument("beta must be positive")
        if not self.p > 1:
            raise InvalidArgument("p must exceed 1")
        if self.track_every < 1:
            raise InvalidArgument("track_every must be at least 1")


@dataclass(frozen=True)
class IterationState:
    n: int
    log_weights: np.ndarray
    Y_field: list
    Z_field: list
    Y0: float
    Y0_se: float
    dist_L2: float
    dist_L2_base: float
    ess: float
    weight_mean: float
    weight_se: float
    diagnostics: dict = field(default_factory=dict)

    def row(self):
        return {"n": self.n, "dist_L2": self.dist_L2, "ess": self.ess, "Y0": self.Y0,
                "sup_weighted_Y": self.diagnostics.get("sup_weighted_Y", math.nan),
                "weighted_Z_L2": self.diagnostics.get("weighted_Z_L2", math.nan)}


@dataclass(frozen=True)
class IterationResult:
    state: IterationState
    solution: SolutionPath
    report: verify.MeasureReport
    history: list
    converged: bool
    engine: RegressionEngine
    shift: np.ndarray

    def value(self, i, w):
        """Fitted ``Y`` at node ``i`` as a function of the state ``w`` (before any stopping)."""
        w = np.asarray(w, dtype=float)
        coef = self.state.Y_field[i]
        if i == 0:
            return np.full(w.shape, self.state.Y0 - self.shift[0])
        if coef is None:
            return np.full(w.shape, np.nan)
        return self.engine.predict(coef, w, self.solution.times[i]) - self.shift[i]


def _terminal_setup(terminal, ensemble, bridge_correction):
    times = np.asarray(ensemble.grid.nodes, dtype=float)
    values = np.asarray(ensemble.values, dtype=float)
    W, clock, active, tau = values, None, np.ones_like(values, dtype=bool), None
    if isinstance(terminal, closedform.HittingAffine):
        rec = detect_hitting(times, values, terminal.barrier, bridge_correction, ensemble.seed,
                             ensemble.path_ids)
        tau = np.asarray(rec.tau, dtype=float)
        W, clock, active = closedform._stop(times, values, tau, terminal.barrier)
    xi = terminal.evaluate(times, values, tau)
    return times, W, clock, active, tau, xi


def _weighted_mean_se(x, w):
    mean = float(np.sum(w * x))
    se = float(math.sqrt(np.sum(w * w * (x - mean) ** 2)))
    return mean, se


def iterate_measure_solution(terminal, spec, ensemble, engine=None, max_iter=20, tol=1e-3,
                             config=None, min_ess_fraction=0.05, patience=5, endpoint_feature=False,
                             bridge_correction=True, raise_on_failure=True):
    """Run the re-weighting iteration until ``dist_L2 < tol`` or ``max_iter`` sweeps.

    ``dist_L2`` is the ``L^2(dt x Q^{n+1})`` distance between consecutive
    controls under the newest weights.  The run also stops when the new
    weights equal the old ones exactly, since the next sweep would then
    repeat itself.  Generators with ``f(t, 0) != 0`` are normalised first and
    the returned ``Y`` is mapped back.

    Raises :class:`ImportanceDegeneracyError` if the effective sample size
    drops below ``min_ess_fraction`` of the paths, and
    :class:`NonConvergenceError` after ``patience`` consecutive sweeps
    without a decrease in ``dist_L2``; both carry the trace so far.
    """
    engine = RegressionEngine() if engine is None else engine
    config = DiagnosticsConfig() if config is None else config
    times, W, clock, active, tau, xi = _terminal_setup(terminal, ensemble, bridge_correction)
    spec0, shift = zero_normalize(spec, ensemble.grid)
    ok = np.isfinite(xi)
    if not np.all(ok):
        keep = np.nonzero(ok)[0]
        W, xi, active = W[keep], xi[keep], active[keep]
        clock = None if clock is None else clock[keep]
        tau = None if tau is None else tau[keep]
    xi_t = xi + shift
    if endpoint_feature and hasattr(terminal, "endpoint"):
        engine = replace(engine, extra=tuple(engine.extra) + (terminal.endpoint,))
    n_paths, m = W.shape
    dW = np.diff(W, axis=1)
    dt = np.diff(clock, axis=1) if clock is not None else np.broadcast_to(np.diff(times), dW.shape)
    phi = np.nan_to_num(phi_integral(spec0, ensemble.grid).values)
    e_phi = np.exp(config.beta * phi)

    log_w = np.zeros(n_paths)
    Z_prev = np.zeros((n_paths, m))
    history = []
    converged = False
    Y = np.zeros((n_paths, m))
    Z = np.zeros((n_paths, m))
    for it in range(1, max_iter + 1):
        w = normalized_weights(log_w)
        g_prev = eval_g(spec0, times[None, :-1], Z_prev[:, :-1])
        dWn = dW - g_prev * dt
        Y, y_coef = _project(engine, times, W, active, xi_t, w)
        Z, z_coef = _control(engine, times, W, active, Y, dWn, dt, w)
        g = eval_g(spec0, times[None, :-1], Z[:, :-1])
        new_log_w = np.sum(g * dW - 0.5 * g * g * dt, axis=1)
        w_new = normalized_weights(new_log_w)
        diff2 = np.sum((Z[:, :-1] - Z_prev[:, :-1]) ** 2 * dt, axis=1)
        dist = math.sqrt(float(np.sum(w_new * diff2)))
        dist_base = math.sqrt(float(np.mean(np.sum(e_phi[None, :-1] * (Z[:, :-1] - Z_prev[:, :-1]) ** 2 * dt, axis=1))))
        ess = effective_sample_size(new_log_w)
        y0, y0_se = _weighted_mean_se(xi_t, w)
        raw = np.exp(new_log_w)
        diag = {}
        if (it - 1) % config.track_every == 0:
            diag = boundedness_values(Y, Z, dt, phi, config)
        state = IterationState(it, new_log_w, y_coef, z_coef, y0, y0_se, dist, dist_base, ess,
                               float(raw.mean()), float(raw.std(ddof=1) / math.sqrt(n_paths)), diag)
        history.append(state)
        if ess < min_ess_fraction * n_paths:
            if raise_on_failure:
                raise ImportanceDegeneracyError(
                    f"effective sample size {ess:.1f} below {min_ess_fraction:.0%} of {n_paths}", history)
            break
        unchanged = np.array_equal(new_log_w, log_w)
        if dist < tol or unchanged:
            converged = True
            break
        if _stalled(history, patience):
            if raise_on_failure:
                raise NonConvergenceError(f"dist_L2 did not decrease for {patience} sweeps", history)
            break
        log_w = new_log_w
        Z_prev = Z

    # undo the f(t, 0) normalisation: Y = Y~ - int_0^t f(s, 0) ds
    f0 = np.asarray(spec.f(times[:-1], np.zeros(m - 1)), dtype=float)
    drift0 = np.concatenate([[0.0], np.cumsum(f0 * np.diff(times))])
    Y_out = Y - drift0[None, :]
    sol = SolutionPath(times, W, Y_out, Z, xi, "iterate", {"iterations": len(history)}, clock, tau,
                       None if tau is None else np.isnan(tau))
    report = verify.martingale_expectation(verify.girsanov_weight(sol, spec0))
    return IterationResult(history[-1], sol, report, history, converged, engine, drift0)


def _stalled(history, patience):
    if len(history) <= patience:
        return False
    d = [h.dist_L2 for h in history[-(patience + 1):]]
    return all(d[i + 1] >= d[i] for i in range(patience))


def _project(engine, times, W, active, xi, w):
    """``Y_t = E^n[xi | F_t]`` node by node; stopped paths keep ``xi``."""
    n, m = W.shape
    Y = np.empty((n, m))
    coefs = [None] * m
    prev = None
    Y[:, -1] = xi
    for i in range(m - 2, 0, -1):
        run = active[:, i]
        if not np.any(run):
            Y[:, i] = xi
            continue
        coef = engine.fit(W[run, i], xi[run], times[i], weights=w[run], previous=prev)
        prev = coef
        coefs[i] = coef
        Y[:, i] = np.where(run, engine.predict(coef, W[:, i], times[i]), xi)
    Y[:, 0] = float(np.sum(w * xi)) if np.any(active[:, 0]) else xi
    return Y, coefs


def _control(engine, times, W, active, Y, dWn, dt, w):
    """Regression of ``(Y_{t+dt} - Y_t) dW^n / dt`` on the state; zero once stopped."""
    n, m = W.shape
    Z = np.zeros((n, m))
    coefs = [None] * m
    prev = None
    for i in range(m - 1):
        run = active[:, i] & (dt[:, i] > 0)
        if not np.any(run):
            continue
        target = (Y[run, i + 1] - Y[run, i]) * dWn[run, i] / dt[run, i]
        if i == 0:
            ww = w[run] / w[run].sum()
            Z[run, 0] = float(np.sum(ww * target))
            continue
        coef = engine.fit(W[run, i], target, times[i], weights=w[run], previous=prev)
        prev = coef
        coefs[i] = coef
        Z[:, i] = np.where(run, engine.predict(coef, W[:, i], times[i]), 0.0)
    Z[:, -1] = Z[:, -2] if m > 1 else 0.0
    return Z, coefs


def boundedness_values(Y, Z, dt, phi, config):
    """``E sup_t e^{beta Phi_t} |Y_t|^p`` and ``E (int e^{beta Phi} Z^2 ds)^{p/2}`` under the base measure."""
    e = np.exp(config.beta * phi)
    sup_y = float(np.mean(np.max(e[None, :] * np.abs(Y) ** config.p, axis=1)))
    zint = np.sum(e[None, :-1] * Z[:, :-1] ** 2 * dt, axis=1)
    return {"sup_weighted_Y": sup_y, "weighted_Z_L2": float(np.mean(zint ** (config.p / 2)))}


@dataclass(frozen=True)
class BoundednessReport:
    sup_weighted_Y: list
    weighted_Z_L2: list
    bounded: bool


def boundedness_monitor(history, config=None):
    """Collect both weighted norms per sweep; flag growth if the last exceeds twice the median."""
    ys = [h.diagnostics["sup_weighted_Y"] for h in history if h.diagnostics]
    zs = [h.diagnostics["weighted_Z_L2"] for h in history if h.diagnostics]

    def ok(seq):
        return not seq or seq[-1] <= 2.0 * float(np.median(seq)) or seq[-1] == 0.0
    return BoundednessReport(ys, zs, bool(ok(ys) and ok(zs)))


@dataclass(frozen=True)
class Trace:
    rows: list
    ratio: float

    def columns(self):
        return ["n", "dist_L2", "ess", "Y0", "sup_weighted_Y", "weighted_Z_L2"]


def convergence_trace(history):
    """Table of sweeps with the fitted geometric ratio of ``dist_L2`` (NaN if fewer than two positive values)."""
    if len(history) < 2:
        raise InvalidArgument("a trace needs at least two sweeps")
    rows = [h.row() for h in history]
    d = np.array([r["dist_L2"] for r in rows])
    n = np.array([r["n"] for r in rows], dtype=float)
    keep = d > 0
    ratio = math.nan
    if keep.sum() >= 2:
        ratio = float(math.exp(np.polyfit(n[keep], np.log(d[keep]), 1)[0]))
    return Trace(rows, ratio)


def write_trace_csv(history, path):
    rows = [h.row() for h in history]
    cols = ["n", "dist_L2", "ess", "Y0", "sup_weighted_Y", "weighted_Z_L2"]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols)
        w.writeheader()
        for r in rows:
            w.writerow({k: (r[k] if isinstance(r[k], int) else repr(float(r[k]))) for k in cols})


def tightness_statistic(ensemble, log_weights=None, lags=(1, 2, 4, 8)):
    """``E^n |W_t - W_s|^4 / |t - s|^2`` over node pairs at the given lags.

    For a Brownian motion under a measure with bounded drift this stays
    near 3 for small lags; returns ``{lag: value}``.
    """
    values = np.asarray(ensemble.values)
    times = np.asarray(ensemble.grid.nodes)
    w = np.full(values.shape[0], 1.0 / values.shape[0]) if log_weights is None else normalized_weights(log_weights)
    out = {}
    for lag in lags:
        if lag >= len(times):
            continue
        d = values[:, lag:] - values[:, :-lag]
        h = times[lag:] - times[:-lag]
        out[int(lag)] = float(np.mean(w @ (d ** 4 / h[None, :] ** 2)))
    return out


def explosion_slope(curve, q_start=0.5, min_paths=20, n_paths=None):
    """Log-log slope of an explosion curve over its decaying tail."""
    lev = np.array([c[0] for c in curve])
    q = np.array([c[1] for c in curve])
    start = int(np.argmax(q < q_start)) if np.any(q < q_start) else len(q)
    stop = len(q)
    if n_paths is not None:
        enough = q * n_paths >= min_paths
        stop = int(np.nonzero(enough)[0].max()) + 1 if enough.any() else 0
    return loglog_slope(lev[start:stop], q[start:stop])
