"""Does a candidate ``(Y, Z)`` solve the BSDE, and is its Girsanov density a
true martingale?

The density is ``V = exp(M - <M>/2)`` with ``M = int g(s, Z_s) dW``.  A
candidate extends to a measure solution exactly when ``E V_T = 1``; Monte
Carlo can only fail to reject that, so :class:`MeasureReport` has an
explicit ``Inconclusive`` verdict.
"""
from dataclasses import dataclass, field
import math

import numpy as np

from .errors import InvalidArgument
from .generators import eval_f, eval_g
from .paths import sample_first_passage
from .stats import RunningStats, capped_mean, effective_sample_size, normalized_weights

MEASURE = "MeasureSolution"
NOT_MEASURE = "NotMeasureSolution"
INCONCLUSIVE = "Inconclusive"

SE_FLOOR = 1e-12


# ---------------------------------------------------------------- weights

@dataclass(frozen=True)
class GirsanovWeight:
    """Per-path ``ln V`` at the terminal time, with optional node-wise paths.

    ``log_lr`` is ``ln dP/dP_proposal`` when paths were drawn under a
    drifted proposal (zero otherwise).  ``excluded`` marks truncated paths;
    they contribute zero to estimates and ``log_tail`` bounds what they
    would have added.  ``levels`` / ``crossed`` / ``log_v_at`` carry
    precomputed explosion data for streamed samples.
    """

    log_v: np.ndarray
    log_lr: np.ndarray
    excluded: np.ndarray
    times: np.ndarray | None = None
    clock: np.ndarray | None = None
    log_v_path: np.ndarray | None = None
    qv_path: np.ndarray | None = None
    log_tail: np.ndarray | None = None
    levels: np.ndarray | None = None
    crossed: np.ndarray | None = None
    log_v_at: np.ndarray | None = None

    @property
    def n_paths(self):
        return self.log_v.shape[0]

    @property
    def qv_terminal(self):
        return None if self.qv_path is None else self.qv_path[:, -1]


def _cumulate(inc):
    return np.concatenate([np.zeros((inc.shape[0], 1)), np.cumsum(inc, axis=1)], axis=1)


def girsanov_weight(solution, spec=None, integrand=None):
    """``ln V_t = sum g dW - 1/2 sum g^2 dt`` with ``g = g(t, Z)`` (left-point).

    Pass ``integrand`` (same shape as ``Z``) instead of ``spec`` for
    densities such as ``exp(2 alpha S - 2 alpha^2 <S>)``.
    """
    Z = np.nan_to_num(solution.Z)
    if integrand is not None:
        g = np.nan_to_num(np.asarray(integrand, dtype=float))
    elif spec is not None:
        g = eval_g(spec, solution.times[None, :], Z)
    else:
        raise InvalidArgument("need a generator or an integrand")
    g = g[:, :-1]
    dW = solution.dW
    dt = solution.dt
    log_v = _cumulate(g * dW - 0.5 * g * g * dt)
    qv = _cumulate(g * g * dt)
    n = solution.n_paths
    return GirsanovWeight(log_v[:, -1].copy(), np.zeros(n), ~solution.valid, solution.times,
                          np.asarray(solution.running_time), log_v, qv)


def exponential_weight(solution, scale):
    """Density ``exp(scale S - scale^2 <S> / 2)`` of ``S = int Z dW``."""
    return girsanov_weight(solution, integrand=scale * np.nan_to_num(solution.Z))


def passage_weight(sample, gains):
    """Weight of a piecewise-constant integrand on a streamed first-passage sample.

    ``gains[k]`` is ``g`` between barrier ``k-1`` and barrier ``k``.  The
    stochastic exponential is exact in ``tau`` and the barrier levels.  For a
    single segment, explosion data are filled in at ``sample.record_times``.
    """
    gains = np.broadcast_to(np.asarray(gains, dtype=float), (len(sample.barriers),))
    n = sample.n_paths
    slope = sample.barriers[0].slope
    prev_t = np.zeros(n)
    prev_w = np.zeros(n)
    log_v = np.zeros(n)
    log_tail = np.full(n, -np.inf)
    reached = np.ones(n, dtype=bool)
    for k, (bar, g) in enumerate(zip(sample.barriers, gains)):
        tk = sample.tau[:, k]
        hit = ~np.isnan(tk)
        stuck = reached & ~hit
        end_t = np.where(hit, tk, np.where(stuck, sample.t_stop, prev_t))
        end_w = np.where(hit, bar.level(np.nan_to_num(tk)), np.where(stuck, sample.w_stop, prev_w))
        log_v += g * (end_w - prev_w) - 0.5 * g * g * (end_t - prev_t)
        # given the state at the horizon, the rest of this segment has mean Q_g(hit) <= 1
        dist = np.maximum(sample.w_stop - bar.level(sample.t_stop), 0.0)
        log_p = 0.0 if g <= slope else -2.0 * dist * (g - slope)
        log_tail = np.where(stuck, log_v + sample.log_lr + log_p, log_tail)
        prev_t, prev_w, reached = end_t, end_w, hit
    excluded = sample.truncated
    levels = crossed = log_v_at = None
    if len(sample.barriers) == 1 and sample.record_times.size:
        g = float(gains[0])
        mu = float(sample.drifts[0])
        t_r = sample.record_times[None, :]
        w_r = sample.w_record
        tau = np.where(np.isnan(sample.tau[:, 0]), np.inf, sample.tau[:, 0])[:, None]
        crossed = tau > t_r
        log_v_at = g * w_r - 0.5 * g * g * t_r + (-mu * w_r + 0.5 * mu * mu * t_r)
        levels = g * g * sample.record_times
    return GirsanovWeight(log_v, sample.log_lr.copy(), excluded, log_tail=log_tail,
                          levels=levels, crossed=crossed, log_v_at=log_v_at)


def auto_drift(g, slope, margin=0.05):
    """Proposal drift for a constant-``g`` segment ending at a slope-``slope`` line.

    Plain sampling (drift 0) when ``V^2`` has a comfortably finite mean,
    i.e. ``slope^2/2 - 2 g slope + g^2 > margin slope^2``; otherwise the
    drift ``g`` under which ``V`` times the likelihood ratio is nearly 1.
    """
    if slope ** 2 / 2 - 2 * g * slope + g * g > margin * slope ** 2:
        return 0.0
    return float(g)


def passage_horizon(slope, drift, levels=(1.0,)):
    """Window after which a path still above the last line is an ``exp(-12)``-rare event.

    Drift below the slope: solve ``delta t - L = sqrt(24 t)`` for the gap
    ``delta = slope - drift`` and the largest level ``L``.  Drift above the
    slope: a path that has not hit by ``t`` hits later with probability
    about ``exp(-2 delta (delta t + L))``.
    """
    delta = slope - drift
    L = max(levels)
    if delta > 0:
        root = (math.sqrt(24.0) + math.sqrt(24.0 + 4.0 * delta * L)) / (2.0 * delta)
        return min(max(30.0 / slope, root * root), 400.0)
    if delta < 0:
        return min(max(12.0 / delta ** 2 - L / abs(delta), 1.0), 400.0)
    return 400.0


# ---------------------------------------------------------------- reports

@dataclass(frozen=True)
class MeasureReport:
    estimate: float
    std_error: float
    n_paths: int
    truncated_fraction: float
    verdict: str
    explosion_curve: list = field(default_factory=list)
    closed_form_reference: float | None = None
    stabilized_estimate: float | None = None
    tail_mass: float = 0.0
    n_nonfinite: int = 0
    half_sample_estimate: float | None = None

    def within(self, value, k=3.0):
        return abs(self.estimate - value) <= k * self.std_error

    def to_dict(self):
        return {
            "estimate": self.estimate,
            "std_error": self.std_error,
            "n_paths": self.n_paths,
            "truncated_fraction": self.truncated_fraction,
            "verdict": self.verdict,
            "explosion_curve": [[float(n), float(q)] for n, q, *_ in self.explosion_curve],
            "closed_form_reference": self.closed_form_reference,
            "diagnostics": {
                "stabilized_estimate": self.stabilized_estimate,
                "tail_mass": self.tail_mass,
                "n_nonfinite": self.n_nonfinite,
                "half_sample_estimate": self.half_sample_estimate,
                "explosion_std_errors": [float(s) for _, _, s in self.explosion_curve],
            },
        }


def _contributions(weight):
    lw = weight.log_v + weight.log_lr
    finite = np.isfinite(lw) | weight.excluded
    used = finite
    contrib = np.where(weight.excluded | ~np.isfinite(lw), 0.0, np.exp(np.where(np.isfinite(lw), lw, 0.0)))
    return contrib[used], lw[used & ~weight.excluded], int(np.sum(~finite)), used


def martingale_expectation(weight, closed_form_reference=None, levels=None,
                           explosion_threshold=0.05, stability=0.1):
    """Estimate ``E V_T`` and classify.

    NotMeasureSolution needs ``estimate + 3 SE + tail < 1``.
    MeasureSolution needs ``|estimate - 1| <= 3 SE``, a stable half-sample
    estimate, agreement within ``stability`` between the plain and the
    capped mean, and (if ``levels`` are given) an explosion-curve tail below
    ``explosion_threshold``.  Anything else is Inconclusive.
    """
    contrib, lw, n_bad, used = _contributions(weight)
    n = contrib.size
    if n == 0:
        raise InvalidArgument("no usable paths")
    stats = RunningStats.of(contrib)
    est = stats.mean
    se = max(stats.std_error, SE_FLOOR * max(1.0, abs(est)))
    half = RunningStats.of(contrib[: n // 2]) if n >= 4 else stats
    half_se = max(half.std_error, SE_FLOOR * max(1.0, abs(half.mean)))
    stable_half = abs(half.mean - est) <= 3.0 * half_se
    stabilized = capped_mean(lw, n)
    agree = abs(stabilized - est) <= stability * max(abs(est), 1e-300)
    tail = 0.0
    if weight.log_tail is not None:
        lt = weight.log_tail[used]
        lt = lt[np.isfinite(lt)]
        tail = float(np.sum(np.exp(lt)) / n) if lt.size else 0.0
    curve = explosion_criterion(weight, levels) if levels is not None else []
    trunc = float(np.mean(weight.excluded))

    if est + 3.0 * se + tail < 1.0:
        verdict = NOT_MEASURE
    elif abs(est - 1.0) <= 3.0 * se and stable_half and agree and (
            not curve or curve[-1][1] <= max(explosion_threshold, 3.0 * curve[-1][2])):
        verdict = MEASURE
    else:
        verdict = INCONCLUSIVE
    return MeasureReport(float(est), float(se), int(n), trunc, verdict, curve,
                         closed_form_reference, float(stabilized), tail, n_bad, float(half.mean))


def explosion_criterion(weight, levels):
    """``[(n, Q^n(tau_n < T), se), ...]`` with ``Q^n(tau_n < T) = E[V_{tau_n}; tau_n < T]``.

    ``tau_n`` is the first node where ``<M>`` reaches ``n``; a crossing at
    the terminal time does not count.
    """
    levels = np.asarray(levels, dtype=float)
    if levels.ndim != 1 or np.any(np.diff(levels) <= 0):
        raise InvalidArgument("levels must be increasing")
    out = []
    if weight.qv_path is not None:
        qv = weight.qv_path
        clock = weight.clock
        keep = ~weight.excluded
        for lev in levels:
            reach = qv >= lev
            any_ = reach.any(axis=1)
            idx = np.where(any_, reach.argmax(axis=1), qv.shape[1] - 1)
            rows = np.arange(qv.shape[0])
            before = any_ & (clock[rows, idx] < clock[:, -1])
            val = np.where(before, np.exp(np.where(before, weight.log_v_path[rows, idx], 0.0)), 0.0)[keep]
            s = RunningStats.of(val)
            out.append((float(lev), s.mean, s.std_error if s.count > 1 else 0.0))
        return out
    if weight.levels is None:
        raise InvalidArgument("this weight carries no explosion data")
    for lev in levels:
        j = np.nonzero(np.isclose(weight.levels, lev, rtol=1e-9, atol=1e-12))[0]
        if j.size == 0:
            raise InvalidArgument(f"level {lev} was not recorded")
        j = j[0]
        c = weight.crossed[:, j]
        val = np.where(c, np.exp(np.where(c, weight.log_v_at[:, j], 0.0)), 0.0)
        s = RunningStats.of(val)
        out.append((float(lev), s.mean, s.std_error))
    return out


def hitting_measure_report(barriers, gains, n_paths, seed, dt=1e-2, horizon=None, drifts="auto",
                           closed_form_reference=None, levels=None, n_threads=1, backend=None):
    """Streamed Monte Carlo estimate of ``E V`` for piecewise-constant ``g`` up to nested barriers.

    ``drifts="auto"`` picks a proposal per segment with :func:`auto_drift`.
    ``levels`` (single segment only) adds the explosion curve.  Hitting
    times are exact in law for every ``dt``, so a coarse step is unbiased.
    """
    barriers = list(barriers) if isinstance(barriers, (list, tuple)) else [barriers]
    gains = np.broadcast_to(np.asarray(gains, dtype=float), (len(barriers),))
    slope = barriers[0].slope
    if drifts == "auto":
        drifts = [auto_drift(g, slope) for g in gains]
    drifts = np.broadcast_to(np.asarray(drifts, dtype=float), (len(barriers),))
    record_times = ()
    if levels is not None:
        if len(barriers) != 1 or gains[0] == 0:
            raise InvalidArgument("explosion levels need one segment with nonzero g")
        record_times = np.asarray(levels, dtype=float) / gains[0] ** 2
    if horizon is None:
        horizon = max(passage_horizon(slope, d, [-b.intercept for b in barriers]) for d in drifts)
        if len(record_times):
            horizon = max(horizon, float(np.max(record_times)) + dt)
    sample = sample_first_passage(barriers, n_paths, seed, dt, horizon, drifts, True, record_times,
                                  n_threads, backend=backend)
    weight = passage_weight(sample, gains)
    if levels is not None:
        weight = GirsanovWeight(weight.log_v, weight.log_lr, weight.excluded, log_tail=weight.log_tail,
                                levels=np.asarray(levels, dtype=float), crossed=weight.crossed,
                                log_v_at=weight.log_v_at)
    return martingale_expectation(weight, closed_form_reference, levels), sample, weight


# ---------------------------------------------------------------- residuals

@dataclass(frozen=True)
class ResidualSummary:
    """Global residual ``Y_t - (xi - sum_{s>=t} Z dW + sum_{s>=t} f dt)`` and one-step residual."""

    residual: np.ndarray
    max_abs: float
    rms: float
    mean_rms: float
    local_rms: float
    n_paths: int


def _check_shapes(solution, grid=None):
    m = len(solution.times)
    for name in ("W", "Y", "Z"):
        a = getattr(solution, name)
        if a.ndim != 2 or a.shape[1] != m:
            raise InvalidArgument(f"{name} does not match the time grid")
    if grid is not None:
        nodes = np.asarray(getattr(grid, "nodes", grid), dtype=float)
        if nodes.shape != solution.times.shape or not np.allclose(nodes, solution.times, rtol=0, atol=1e-12):
            raise InvalidArgument("solution and grid differ")


def bsde_residual(solution, spec, terminal=None, grid=None, weights=None):
    """Residual of ``Y_t = xi - int_t^T Z dW + int_t^T f(s, Z) ds`` with left-point sums.

    Paths flagged as truncated are skipped; for solutions undefined at the
    origin the first node is dropped.  ``weights`` (per path) turn the RMS
    figures into weighted averages.
    """
    _check_shapes(solution, grid)
    xi = solution.xi if terminal is None else terminal.evaluate(solution.times, solution.W, solution.tau)
    keep = solution.valid & np.isfinite(xi)
    start = 1 if solution.undefined_at_origin else 0
    t = solution.times[start:]
    W = solution.W[keep, start:]
    Y = solution.Y[keep, start:]
    Z = solution.Z[keep, start:]
    clock = np.asarray(solution.running_time)[keep, start:]
    xi = np.asarray(xi)[keep]
    dW = np.diff(W, axis=1)
    dt = np.diff(clock, axis=1)
    Zl = Z[:, :-1]
    fz = np.asarray(eval_f(spec, t[None, :-1], Zl), dtype=float)
    zdw = Zl * dW
    fdt = fz * dt
    A = np.concatenate([np.cumsum(zdw[:, ::-1], axis=1)[:, ::-1], np.zeros((Y.shape[0], 1))], axis=1)
    B = np.concatenate([np.cumsum(fdt[:, ::-1], axis=1)[:, ::-1], np.zeros((Y.shape[0], 1))], axis=1)
    res = Y - (xi[:, None] - A + B)
    local = np.diff(Y, axis=1) - zdw + fdt
    if weights is None:
        w = np.full(Y.shape[0], 1.0 / max(Y.shape[0], 1))
    else:
        w = normalized_weights(np.log(np.asarray(weights, dtype=float)[keep]))
    rms = math.sqrt(float(np.sum(w[:, None] * res ** 2) / res.shape[1]))
    mean_rms = math.sqrt(float(np.mean((w @ res) ** 2)))
    local_rms = math.sqrt(float(np.sum(w[:, None] * local ** 2) / max(local.shape[1], 1)))
    return ResidualSummary(res, float(np.max(np.abs(res))) if res.size else 0.0, rms, mean_rms,
                           local_rms, int(Y.shape[0]))


# ---------------------------------------------------------------- probes

@dataclass(frozen=True)
class KazamakiReport:
    sizes: tuple
    estimates: tuple
    stable: bool
    stochastic_exponential_mean: float
    stochastic_exponential_se: float


def kazamaki_probe(solution, alpha, base_size=None, tolerance=0.1):
    """``E exp(alpha S_T / 2)`` on nested samples ``n, 2n, 4n``; stable if each doubling moves it by < 10%.

    Also reports the mean of ``exp(alpha S_T - alpha^2 <S>_T / 2)``.
    """
    keep = solution.valid
    S = solution.stochastic_integral()[keep, -1]
    Q = solution.quadratic_variation()[keep, -1]
    N = S.size
    n0 = N // 4 if base_size is None else int(base_size)
    if n0 < 1 or 4 * n0 > N:
        raise InvalidArgument("need at least four paths per base sample")
    x = 0.5 * alpha * S
    sizes = (n0, 2 * n0, 4 * n0)
    ests = tuple(float(np.mean(np.exp(x[:m]))) for m in sizes)
    stable = all(abs(ests[i + 1] - ests[i]) < tolerance * abs(ests[i]) for i in range(2))
    se_stats = RunningStats.of(np.exp(alpha * S - 0.5 * alpha * alpha * Q))
    return KazamakiReport(sizes, ests, bool(stable), se_stats.mean, se_stats.std_error)


@dataclass(frozen=True)
class ItoReport:
    max_deviation: float
    rms_deviation: float
    max_deviation_exponential: float


def ito_identity_check(solution, alpha):
    """Largest gap in ``alpha int Z^2 = -(ln M_t - ln M_0)/(2 alpha) + int Z dW``.

    Also checks ``alpha S - alpha^2 <S>/2 = alpha (Y - Y_0) + alpha^2 int Z^2 / 2``.
    """
    if solution.log_m is None:
        raise InvalidArgument("the solution carries no ln M")
    keep = solution.valid
    start = 1 if solution.undefined_at_origin else 0
    sub = solution.subset(np.nonzero(keep)[0])
    Z = sub.Z[:, start:]
    W = sub.W[:, start:]
    clock = np.asarray(sub.running_time)[:, start:]
    lm = sub.log_m[:, start:]
    Y = sub.Y[:, start:]
    S = _cumulate(Z[:, :-1] * np.diff(W, axis=1))
    Q = _cumulate(Z[:, :-1] ** 2 * np.diff(clock, axis=1))
    lhs = alpha * Q
    rhs = -(lm - lm[:, :1]) / (2 * alpha) + S
    dev = np.abs(lhs - rhs)
    dev2 = np.abs(alpha * S - 0.5 * alpha ** 2 * Q - alpha * (Y - Y[:, :1]) - 0.5 * alpha ** 2 * Q)
    return ItoReport(float(np.max(dev)), float(np.sqrt(np.mean(dev ** 2))), float(np.max(dev2)))


@dataclass(frozen=True)
class SignFlipReport:
    estimate: float
    std_error: float
    ess: float
    verdict: str
    residual_rms: float
    tau_n_equal: bool


def sign_flip_check(solution, alpha, spec=None, levels=(0.5, 1.0, 2.0)):
    """Reweight by ``V_T = exp(2 alpha S_T - 2 alpha^2 <S>_T)`` and test ``(-Y, -Z)``.

    Under the reweighted sample, ``-Y`` should solve the equation with
    terminal ``-xi`` and generator ``alpha z^2`` driven by
    ``dW^R = dW - 2 alpha Z dt``.  Effective sample size below 5% of the
    paths gives Inconclusive.
    """
    from .generators import Quadratic
    spec = Quadratic(alpha) if spec is None else spec
    keep = solution.valid
    sub = solution.subset(np.nonzero(keep)[0])
    Z = np.nan_to_num(sub.Z)
    weight = exponential_weight(sub, 2.0 * alpha)
    report = martingale_expectation(weight, closed_form_reference=1.0)
    ess = effective_sample_size(weight.log_v)
    dt = sub.dt
    dWr = np.diff(sub.W, axis=1) - 2.0 * alpha * Z[:, :-1] * dt
    Wr = _cumulate(dWr)
    from .solution import SolutionPath
    flipped = SolutionPath(sub.times, Wr, -sub.Y, -sub.Z, -sub.xi, sub.label + ":flipped", dict(sub.params),
                           sub.clock, sub.tau, sub.truncated, None, sub.undefined_at_origin)
    res = bsde_residual(flipped, spec, weights=np.exp(weight.log_v - weight.log_v.max()))
    qv_s = sub.quadratic_variation()
    qv_r = flipped.quadratic_variation()
    same = all(np.array_equal(qv_s >= lev, qv_r >= lev) for lev in levels)
    verdict = report.verdict
    if ess < 0.05 * sub.n_paths:
        verdict = INCONCLUSIVE
    return SignFlipReport(report.estimate, report.std_error, ess, verdict, res.rms, bool(same))


@dataclass(frozen=True)
class IntegrabilityTable:
    t: tuple
    mean: tuple
    std_error: tuple
    increasing: bool


def square_integrability_probe(solution, t_list):
    """``E int_t^T Z^2 ds`` (left-point over nodes at or after ``t``) for each ``t``."""
    times = solution.times
    Z = solution.Z
    dt = np.diff(times)
    keep = solution.valid
    means, ses = [], []
    for t in t_list:
        j = int(np.searchsorted(times, t * (1 - 1e-12)))
        if j >= len(times) - 1:
            means.append(0.0)
            ses.append(0.0)
            continue
        vals = np.sum(np.nan_to_num(Z[keep, j:-1]) ** 2 * dt[j:], axis=1)
        s = RunningStats.of(vals)
        means.append(s.mean)
        ses.append(s.std_error)
    order = np.argsort(-np.asarray(t_list, dtype=float))
    m_sorted = np.asarray(means)[order]
    increasing = bool(np.all(np.diff(m_sorted) > 0))
    return IntegrabilityTable(tuple(float(x) for x in t_list), tuple(means), tuple(ses), increasing)
