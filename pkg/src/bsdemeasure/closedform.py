"""Explicit solution families of the quadratic BSDE ``dY = Z dW - alpha Z^2 dt``.

Covers the log-transform solution ``Y = ln(M) / (2 alpha)``, the two
solutions of the hitting-time equation with terminal value
``2a(b - a) tau_b - 2a``, the continuum obtained by switching between them
at an intermediate barrier, and the square-endpoint family whose limit
has no square-integrable control.

Only one-dimensional Brownian motion is handled.  With two or more driving
Brownian motions a generator such as ``(a z1, z2 / a)`` admits several
measure solutions; that situation is not modelled here.
"""
import csv
from dataclasses import dataclass, replace
import math
from typing import Callable

import numpy as np

from .errors import DivergingMomentError, DomainError, InvalidArgument
from .paths import Barrier, detect_hitting
from .regression import QuadratureEngine, RegressionEngine
from .solution import SolutionPath
from .stats import log_mean_exp


# ---------------------------------------------------------------- terminals

@dataclass(frozen=True)
class HittingAffine:
    """``xi = 2a(b - a) tau - 2a + shift_d`` where ``tau`` hits ``W <= b t - 1``."""

    a: float
    b: float
    shift_d: float = 0.0

    def __post_init__(self):
        if self.a == 0:
            raise InvalidArgument("a must be nonzero")
        if not self.b > 0:
            raise InvalidArgument("b must be positive")

    @classmethod
    def continuum(cls, a, d):
        """Terminal ``2a(1 - a) rho_1 + d`` of the switched family."""
        return cls(a, 1.0, d + 2.0 * a)

    @property
    def barrier(self):
        return Barrier.tau_b(self.b)

    def of_tau(self, tau):
        tau = np.asarray(tau, dtype=float)
        return 2.0 * self.a * (self.b - self.a) * tau - 2.0 * self.a + self.shift_d

    def evaluate(self, times, W, tau=None):
        if tau is None:
            raise InvalidArgument("a hitting terminal needs hitting times")
        return self.of_tau(tau)


@dataclass(frozen=True)
class SquareEndpoint:
    """``xi_k = W_1^2 / (2 (1 + 1/k))``; ``k = math.inf`` gives ``W_1^2 / 2``."""

    k: float

    def __post_init__(self):
        if not (self.k == math.inf or (self.k > 0 and int(self.k) == self.k)):
            raise InvalidArgument("k must be a positive integer or math.inf")

    def endpoint(self, w):
        w = np.asarray(w, dtype=float)
        return w * w / (2.0 * (1.0 + 1.0 / self.k))

    def evaluate(self, times, W, tau=None):
        if not math.isclose(float(times[-1]), 1.0):
            raise InvalidArgument("the square endpoint lives on horizon 1")
        return self.endpoint(np.asarray(W)[:, -1])


@dataclass(frozen=True)
class EndpointFunctional:
    """``xi = h(W_T)`` for a vectorised ``h``."""

    h: Callable

    def endpoint(self, w):
        return np.asarray(self.h(np.asarray(w, dtype=float)), dtype=float)

    def evaluate(self, times, W, tau=None):
        return self.endpoint(np.asarray(W)[:, -1])


@dataclass(frozen=True)
class CustomFunctional:
    """``xi = func(times, W)`` for any path functional returning one value per path."""

    func: Callable

    def evaluate(self, times, W, tau=None):
        return np.asarray(self.func(np.asarray(times), np.asarray(W)), dtype=float)


TerminalSpec = HittingAffine | SquareEndpoint | EndpointFunctional | CustomFunctional


# ---------------------------------------------------------------- laplace and measure values

def laplace_tau(b, lam, level=1.0):
    """``E exp(-lam tau)`` for ``tau = inf{t: W_t <= b t - level}``, valid for ``lam >= -b^2/2``."""
    if not b > 0:
        raise InvalidArgument("b must be positive")
    if lam < -0.5 * b * b:
        raise DomainError(f"lambda={lam} is below -b^2/2={-0.5 * b * b}")
    return math.exp(-level * b * (math.sqrt(max(1.0 + 2.0 * lam / (b * b), 0.0)) - 1.0))


def constant_drift_measure_value(g, b, level=1.0):
    """``E exp(g W_tau - g^2 tau / 2)`` with ``W_tau = b tau - level``.

    Equals 1 when ``g <= b`` and ``exp(-2 level (g - b))`` otherwise.
    """
    if g <= b:
        return 1.0
    return math.exp(-2.0 * level * (g - b))


def first_solution_measure_value(a, b):
    """Mean of the stochastic exponential of ``Z/2`` for the first solution."""
    _check_ab(a, b)
    return constant_drift_measure_value(a, b)


def second_solution_measure_value(a, b):
    """Same for the second solution; always 1."""
    _check_ab(a, b)
    g = (b - a) if 2 * a > b else a
    return constant_drift_measure_value(g, b)


def mixed_measure_values(a, c):
    """Segment means ``(up to rho_c, from rho_c to rho_1)`` for the switched family."""
    if not 0 < c < 1:
        raise InvalidArgument("c must lie in (0, 1)")
    return (constant_drift_measure_value(a, 1.0, c),
            constant_drift_measure_value(1.0 - a, 1.0, 1.0 - c))


def _check_ab(a, b):
    if not (a > 0 and b > 0):
        raise InvalidArgument("a and b must be positive")


# ---------------------------------------------------------------- scenarios

@dataclass(frozen=True)
class ScenarioReport:
    a: float
    b: float
    scenario: str
    n_solutions: int
    measure_flags: list

    def to_dict(self):
        return {"a": self.a, "b": self.b, "scenario": self.scenario,
                "n_solutions": self.n_solutions, "measure_flags": list(self.measure_flags)}


def classify_scenario(a, b):
    """A: ``b >= 2a``, one solution.  B: ``2a > b >= a``, two measure solutions.
    C: ``a > b``, two solutions of which only the second is a measure solution.
    """
    _check_ab(a, b)
    if b >= 2 * a:
        return "A"
    if b >= a:
        return "B"
    return "C"


def scenario_report(a, b):
    s = classify_scenario(a, b)
    if s == "A":
        return ScenarioReport(a, b, s, 1, [True])
    return ScenarioReport(a, b, s, 2, [first_solution_measure_value(a, b) == 1.0,
                                       second_solution_measure_value(a, b) == 1.0])


# ---------------------------------------------------------------- stopped paths

def _nodes(ensemble):
    return np.asarray(ensemble.grid.nodes, dtype=float), np.asarray(ensemble.values, dtype=float)


def _stop(times, values, tau, barrier):
    """``W_{t ^ tau}`` and ``t ^ tau`` per node; truncated paths run to the horizon."""
    tau_c = np.where(np.isnan(tau), np.inf, tau)[:, None]
    after = times[None, :] >= tau_c
    w_hit = barrier.level(np.where(np.isinf(tau_c), 0.0, tau_c))
    W = np.where(after, w_hit, values)
    clock = np.minimum(times[None, :], tau_c)
    return W, clock, ~after


def _record(ensemble, barrier, hitting, bridge_correction):
    if hitting is None:
        times, values = _nodes(ensemble)
        ids = getattr(ensemble, "path_ids", None)
        hitting = detect_hitting(times, values, barrier, bridge_correction,
                                 getattr(ensemble, "seed", 0), ids)
    return hitting


def _affine_solution(label, a, b, y0, gain, ensemble, hitting, bridge_correction):
    barrier = Barrier.tau_b(b)
    rec = _record(ensemble, barrier, hitting, bridge_correction)
    times, values = _nodes(ensemble)
    tau = np.asarray(rec.tau, dtype=float)
    W, clock, active = _stop(times, values, tau, barrier)
    Y = y0 + gain * W - 0.5 * gain * gain * clock
    Z = np.where(active, gain, 0.0)
    xi = HittingAffine(a, b).of_tau(tau)
    # generator z^2 / 2, so ln M = Y
    return SolutionPath(times, W, Y, Z, xi, label, {"a": a, "b": b}, clock, tau, np.isnan(tau), Y)


def first_solution(a, b, ensemble, hitting=None, bridge_correction=True):
    """``Y = 2a W_{t^tau} - 2a^2 (t^tau)``, ``Z = 2a`` until ``tau_b``.

    ``hitting`` is a :class:`HittingRecord` for ``W <= b t - 1``; it is
    detected on the ensemble when omitted.
    """
    if a == 0:
        times, values = _nodes(ensemble)
        zero = np.zeros_like(values)
        return SolutionPath(times, values, zero, zero.copy(), np.zeros(values.shape[0]), "first",
                            {"a": a, "b": b})
    return _affine_solution("first", a, b, 0.0, 2.0 * a, ensemble, hitting, bridge_correction)


def second_solution(a, b, ensemble, hitting=None, bridge_correction=True):
    """``Y = ln M`` with ``Z = 2(b - a)`` when ``2a > b``; the first solution otherwise.

    ``Y_0 = 2b - 4a`` is the raw log value; ``relative_Y`` starts at zero.
    """
    if 2 * a <= b:
        sol = first_solution(a, b, ensemble, hitting, bridge_correction)
        return SolutionPath(sol.times, sol.W, sol.Y, sol.Z, sol.xi, "second", sol.params, sol.clock,
                            sol.tau, sol.truncated)
    return _affine_solution("second", a, b, 2.0 * b - 4.0 * a, 2.0 * (b - a), ensemble, hitting,
                            bridge_correction)


def mixed_solution(a, c, d, ensemble, hitting=None, bridge_correction=True):
    """Control ``2a`` until ``rho_c``, then ``2(1 - a)`` until ``rho_1``.

    ``Y_0 = l = d + 2ac + 2(1 - a)(1 - c)`` makes ``Y_{rho_1} = 2a(1 - a) rho_1 + d``.
    ``hitting`` is the pair of records for ``W <= t - c`` and ``W <= t - 1``.
    """
    if a == 0:
        raise InvalidArgument("a must be nonzero")
    if not 0 <= c <= 1:
        raise InvalidArgument("c must lie in [0, 1]")
    bars = [Barrier.rho_c(c), Barrier.rho_c(1.0)]
    if hitting is None:
        times, values = _nodes(ensemble)
        hitting = detect_hitting(times, values, bars, bridge_correction,
                                 getattr(ensemble, "seed", 0), getattr(ensemble, "path_ids", None))
    times, values = _nodes(ensemble)
    rc = np.asarray(hitting[0].tau, dtype=float)
    r1 = np.asarray(hitting[1].tau, dtype=float)
    both = ~np.isnan(r1)
    if np.any(rc[both] > r1[both]) or np.any(np.isnan(rc) & both):
        raise RuntimeError("intermediate barrier hit after the final one")
    Wc, clock_c, act_c = _stop(times, values, rc, bars[0])
    W1, clock_1, act_1 = _stop(times, values, r1, bars[1])
    l = d + 2 * a * c + 2 * (1 - a) * (1 - c)
    Y = (l + 2 * a * Wc - 2 * a * a * clock_c
         + 2 * (1 - a) * (W1 - Wc) - 2 * (1 - a) ** 2 * (clock_1 - clock_c))
    Z = np.where(act_c, 2 * a, np.where(act_1, 2 * (1 - a), 0.0))
    xi = HittingAffine.continuum(a, d).of_tau(r1)
    return SolutionPath(times, W1, Y, Z, xi, "mixed", {"a": a, "c": c, "d": d, "l": l, "rho_c": rc},
                        clock_1, r1, np.isnan(r1), Y)


# ---------------------------------------------------------------- explicit log solution

@dataclass(frozen=True)
class MomentCheck:
    stable: bool
    log_estimates: tuple
    tail_index: float


def exponential_moment_check(log_values, growth=0.1, min_tail_index=1.2):
    """Is ``E exp(X)`` finite as far as a sample can tell?

    Unstable when the log-mean rises by more than ``log(1 + growth)`` at both
    doublings ``n/4 -> n/2 -> n``, or when the Hill estimate of the tail index
    of ``exp(X)`` over the top ``sqrt(n)`` values is below ``min_tail_index``.
    """
    x = np.asarray(log_values, dtype=float)
    x = x[np.isfinite(x)]
    n = x.size
    if n < 16:
        return MomentCheck(True, (), math.inf)
    est = tuple(log_mean_exp(x[: n // m]) for m in (4, 2, 1))
    lg = math.log1p(growth)
    rising = est[1] - est[0] > lg and est[2] - est[1] > lg
    k = max(int(math.isqrt(n)), 8)
    top = np.sort(x)[-k - 1:]
    spread = np.mean(top[1:] - top[0])
    tail = math.inf if spread <= 0 else 1.0 / spread
    return MomentCheck(not rising and tail >= min_tail_index, est, tail)


def explicit_log_solution(alpha, terminal, ensemble, engine=None, hitting=None,
                          bridge_correction=True, check_moment=True, endpoint_feature=False):
    """``Y = ln(M_t) / (2 alpha)``, ``Z = H_t / (2 alpha M_t)`` with ``M_t = E[exp(2 alpha xi) | F_t]``.

    ``Y`` ends at ``xi``; :meth:`SolutionPath.relative_Y` gives the version
    started at zero.  ``engine`` is a :class:`RegressionEngine` (default,
    degree 4) or a :class:`QuadratureEngine` for endpoint terminals.  ``Z``
    is the state derivative of the fitted ``ln M``, which is the
    martingale-representation integrand for a Markov ``M``.  For hitting
    terminals the projection uses only paths still running at each node.
    ``endpoint_feature`` adds ``exp(2 alpha h(W_t))`` to the regression
    basis for endpoint terminals, which removes most of the basis bias near
    the horizon.

    Raises :class:`DivergingMomentError` if ``exp(2 alpha xi)`` looks
    non-integrable on the sample.
    """
    if not alpha > 0:
        raise InvalidArgument("alpha must be positive")
    engine = RegressionEngine() if engine is None else engine
    times, values = _nodes(ensemble)
    n, m = values.shape
    horizon = float(times[-1])
    tau = None
    W = values
    clock = None
    active = np.ones_like(values, dtype=bool)
    if isinstance(terminal, HittingAffine):
        rec = _record(ensemble, terminal.barrier, hitting, bridge_correction)
        tau = np.asarray(rec.tau, dtype=float)
        W, clock, active = _stop(times, values, tau, terminal.barrier)
    xi = terminal.evaluate(times, values, tau)
    ok = np.isfinite(xi)
    x = 2.0 * alpha * xi
    if check_moment:
        mc = exponential_moment_check(x[ok])
        if not mc.stable:
            raise DivergingMomentError(
                f"E exp(2 alpha xi) looks infinite (log-means {mc.log_estimates}, tail index {mc.tail_index:.3g})")
    logm = np.empty((n, m))
    slope = np.zeros((n, m))

    if isinstance(engine, QuadratureEngine):
        if not hasattr(terminal, "endpoint"):
            raise InvalidArgument("quadrature needs a terminal of the form h(W_T)")
        for i, t in enumerate(times):
            logm[:, i], slope[:, i] = engine.log_value_and_slope(terminal.endpoint, 2 * alpha, values[:, i], t, horizon)
        logm[:, -1] = x
    elif np.ptp(x[ok]) == 0.0:
        logm[:] = x[ok][0]
    else:
        shift = float(np.max(x[ok]))
        if endpoint_feature and hasattr(terminal, "endpoint"):
            engine = replace(engine, extra=tuple(engine.extra) + (
                lambda w: np.exp(2.0 * alpha * terminal.endpoint(w) - shift),))
        target = np.where(ok, np.exp(x - shift), 0.0)
        floor = float(np.min(target[ok])) * 1e-3
        prev = None
        for i in range(m - 1, -1, -1):
            t = float(times[i])
            run = active[:, i] & ok
            if i == m - 1 or not np.any(run):
                logm[:, i] = np.where(ok, x, np.nan)
                continue
            if i == 0:
                mean0 = float(np.mean(target[ok]))
                logm[:, 0] = math.log(mean0) + shift
                # continuity at the origin: slope of the first interior fit at w = 0
                slope[:, 0] = engine.derivative(prev, 0.0, float(times[1])) / mean0 if prev is not None else 0.0
                continue
            coef = engine.fit(W[run, i], target[run], t, previous=prev)
            prev = coef
            mhat = np.maximum(engine.predict(coef, W[:, i], t), floor)
            lm = np.log(mhat) + shift
            logm[:, i] = np.where(active[:, i], lm, x)
            slope[:, i] = np.where(active[:, i], engine.derivative(coef, W[:, i], t) / mhat, 0.0)
        slope[:, 0] = np.where(active[:, 0], slope[:, 0], 0.0)
    Y = logm / (2.0 * alpha)
    Z = np.where(active, slope / (2.0 * alpha), 0.0)
    trunc = None if tau is None else np.isnan(tau)
    return SolutionPath(times, W, Y, Z, xi, "explicit_log", {"alpha": alpha}, clock, tau, trunc, logm)


# ---------------------------------------------------------------- square endpoint family

def square_endpoint_solution(k, ensemble):
    """``Y = W^2 / (2 f) + ln(f(1) / f) / 2`` and ``Z = W / f`` with ``f(t) = 1/k + t``.

    Solves ``dY = Z dW - Z^2/2 dt`` with ``Y_1 = W_1^2 / (2 f(1))``; the
    logarithmic term is the Ito correction of ``W^2 / (2 f)``.  For
    ``k = math.inf`` the pair lives on ``(0, 1]`` only: values at ``t = 0``
    are NaN and ``undefined_at_origin`` is set.
    """
    terminal = SquareEndpoint(k)
    times, values = _nodes(ensemble)
    if not math.isclose(float(times[-1]), 1.0):
        raise InvalidArgument("the square endpoint family lives on horizon 1")
    f = (1.0 / k if k != math.inf else 0.0) + times
    with np.errstate(divide="ignore", invalid="ignore"):
        Y = 0.5 * values ** 2 / f + 0.5 * np.log((f[-1]) / f)
        Z = values / f
    undefined = k == math.inf
    if undefined:
        Y[:, 0] = np.nan
        Z[:, 0] = np.nan
    xi = terminal.evaluate(times, values)
    return SolutionPath(times, values, Y, Z, xi, f"square_endpoint(k={k})", {"k": k, "alpha": 0.5},
                        log_m=Y.copy(), undefined_at_origin=undefined)


# ---------------------------------------------------------------- export

def write_solution_csv(solution, path, path_ids=None):
    """Rows ``path_id, t, Y, Z``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["path_id", "t", "Y", "Z"])
        for row in solution.to_rows(path_ids):
            w.writerow([row[0], repr(row[1]), repr(row[2]), repr(row[3])])
