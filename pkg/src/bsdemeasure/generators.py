"""BSDE generators ``f(t, z)``, their ratio ``g = f / z`` and the constants
that control the iterated change-of-measure construction.
"""
from dataclasses import asdict, dataclass
import math
from typing import Callable

import numpy as np

from .errors import InvalidArgument
from .paths import TimeGrid


@dataclass(frozen=True)
class Quadratic:
    """``f(t, z) = alpha z**2``."""

    alpha: float

    @property
    def growth(self):
        return abs(self.alpha)

    def f(self, t, z):
        z = np.asarray(z, dtype=float)
        return self.alpha * z * z

    def g(self, t, z):
        return self.alpha * np.asarray(z, dtype=float)

    def phi(self, t):
        # not globally Lipschitz: no finite phi
        return np.full(np.shape(t), np.nan)


@dataclass(frozen=True)
class LinearBounded:
    """``f(t, z) = b(t) z`` with ``|b| <= bound``; ``b`` is a number or callable."""

    b: float | Callable
    bound: float

    def _b(self, t):
        if callable(self.b):
            return np.asarray(self.b(t), dtype=float)
        return np.full(np.shape(t), float(self.b))

    @property
    def growth(self):
        return self.bound

    def f(self, t, z):
        z = np.asarray(z, dtype=float)
        return self._b(np.broadcast_to(t, z.shape) if np.ndim(t) else t) * z

    def g(self, t, z):
        z = np.asarray(z, dtype=float)
        return np.broadcast_to(self._b(t), np.broadcast_shapes(np.shape(t), z.shape)).astype(float)

    def phi(self, t):
        return np.full(np.shape(t), float(self.bound))


@dataclass(frozen=True)
class LipschitzCustom:
    """User generator with a Lipschitz bound ``phi(t)`` and growth constant ``c``.

    ``f`` must be a pure function of ``(t, z)`` accepting numpy arrays.
    """

    func: Callable
    phi_bound: Callable
    c: float

    @property
    def growth(self):
        return self.c

    def f(self, t, z):
        return np.asarray(self.func(t, np.asarray(z, dtype=float)), dtype=float)

    def g(self, t, z):
        z = np.asarray(z, dtype=float)
        fz = self.f(t, z)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(z != 0.0, fz / np.where(z != 0.0, z, 1.0), 0.0)

    def phi(self, t):
        return np.asarray(self.phi_bound(t), dtype=float) * np.ones(np.shape(t))


@dataclass(frozen=True)
class ZeroShifted:
    """``f(t, z) - f(t, 0)`` for a generator with ``f(t, 0) != 0``."""

    base: object

    @property
    def growth(self):
        return self.base.growth

    def f(self, t, z):
        z = np.asarray(z, dtype=float)
        return self.base.f(t, z) - self.base.f(t, np.zeros_like(z))

    def g(self, t, z):
        z = np.asarray(z, dtype=float)
        fz = self.f(t, z)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(z != 0.0, fz / np.where(z != 0.0, z, 1.0), 0.0)

    def phi(self, t):
        return self.base.phi(t)


GeneratorSpec = Quadratic | LinearBounded | LipschitzCustom | ZeroShifted


def eval_f(spec, t, z):
    return spec.f(t, z)


def eval_g(spec, t, z):
    """``f(t, z) / z`` with the convention ``g(t, 0) = 0``."""
    z = np.asarray(z, dtype=float)
    g = np.asarray(spec.g(t, z), dtype=float)
    return np.where(z == 0.0, 0.0, g)


def zero_normalize(spec, grid):
    """Return ``(spec0, shift)`` with ``spec0(t, 0) = 0``.

    ``shift = int_0^T f(s, 0) ds`` (left-point on ``grid``) is added to the
    terminal value; ``Y`` of the original equation is recovered by
    subtracting ``int_0^t f(s, 0) ds``.
    """
    nodes = grid.nodes
    f0 = np.asarray(spec.f(nodes[:-1], np.zeros(nodes.size - 1)), dtype=float)
    if np.all(f0 == 0.0):
        return spec, 0.0
    return ZeroShifted(spec), float(np.sum(f0 * np.diff(nodes)))


@dataclass(frozen=True)
class CheckResult:
    ok: bool
    violations: list

    def __bool__(self):
        return self.ok


def check_H1(spec, c=None, horizon=1.0, sample_budget=2000, z_max=50.0, seed=0):
    """Search for violations of ``|f(t,z)| <= c (1 + z^2)`` and of continuity of ``g`` in ``z``.

    A lattice in ``(t, z)`` plus uniform draws; the result certifies only
    that nothing was found on this budget.
    """
    c = spec.growth if c is None else c
    rng = np.random.default_rng(seed)
    n_lat = max(int(math.sqrt(sample_budget / 2)), 2)
    tl, zl = np.meshgrid(np.linspace(0.0, horizon, n_lat), np.linspace(-z_max, z_max, n_lat))
    zl = np.round(zl, 12)
    t = np.concatenate([tl.ravel(), rng.uniform(0.0, horizon, sample_budget - tl.size)])
    z = np.concatenate([zl.ravel(), rng.uniform(-z_max, z_max, sample_budget - zl.size)])
    z = np.concatenate([z, np.arange(-5.0, 6.0)])
    t = np.concatenate([t, np.zeros(11)])
    fz = np.abs(spec.f(t, z))
    bound = c * (1.0 + z * z)
    violations = [("growth", float(ti), float(zi), float(fi), float(bi))
                  for ti, zi, fi, bi in zip(t, z, fz, bound) if fi > bi * (1 + 1e-12)]
    # jump detector on g away from z = 0; Lipschitz-type scale from the growth constant
    h = 1e-6
    zz = z[np.abs(z) > 10 * h]
    tt = t[np.abs(z) > 10 * h]
    jump = np.abs(eval_g(spec, tt, zz + h) - eval_g(spec, tt, zz - h))
    scale = 2 * h * (c + 1.0) * 10.0
    violations += [("g-discontinuity", float(ti), float(zi), float(j), scale)
                   for ti, zi, j in zip(tt, zz, jump) if j > max(scale, 1e-3)]
    return CheckResult(not violations, violations)


def phi_integral(spec, grid):
    """``Phi_t = int_0^t phi_s^2 ds`` on the grid nodes (left-point sums)."""
    phi = np.nan_to_num(spec.phi(grid.nodes[:-1]), nan=0.0)
    vals = np.concatenate([[0.0], np.cumsum(phi ** 2 * np.diff(grid.nodes))])
    return PhiIntegral(grid, vals)


@dataclass(frozen=True)
class PhiIntegral:
    grid: TimeGrid
    values: np.ndarray


def psi_of_kappa(kappa):
    """``1 + 4 sqrt(kappa) / (sqrt(kappa) - 1)**2``."""
    if not kappa > 1:
        raise InvalidArgument(f"kappa must exceed 1, got {kappa}")
    r = math.sqrt(kappa)
    return 1.0 + 4.0 * r / (r - 1.0) ** 2


def psi_of_kappa_factored(kappa):
    """The product form ``(1 + (2 sqrt(kappa) + 1) / kappa) kappa / (sqrt(kappa) - 1)**2``."""
    if not kappa > 1:
        raise InvalidArgument(f"kappa must exceed 1, got {kappa}")
    r = math.sqrt(kappa)
    return (1.0 + (2.0 * r + 1.0) / kappa) * kappa / (r - 1.0) ** 2


def theta(q):
    """``sqrt(1 + q**-2 ln((2q - 1) / (2(q - 1)))) - 1`` for ``q > 1``; decreasing."""
    q = np.asarray(q, dtype=float)
    if np.any(~(q > 1)):
        raise InvalidArgument("theta is defined for q > 1")
    # sqrt(1 + e) - 1 = e / (sqrt(1 + e) + 1) avoids cancellation for large q
    e = np.log1p(1.0 / (2.0 * (q - 1.0))) / (q * q)
    val = e / (np.sqrt(1.0 + e) + 1.0)
    return float(val) if val.ndim == 0 else val


def _theta_of_log(x):
    # theta at q = 1 + e^x, stable for very negative x
    q = 1.0 + math.exp(x)
    # ln((2q - 1) / (2(q - 1))) = ln(1 + 2 e^x) - ln 2 - x, or log1p(e^{-x} / 2) once e^x is large
    log_ratio = math.log1p(0.5 * math.exp(-x)) if x > 0 else math.log1p(2.0 * math.exp(x)) - math.log(2.0) - x
    e = log_ratio / (q * q)
    return e / (math.sqrt(1.0 + e) + 1.0)


def theta_inverse(x, tol=1e-12):
    """Solve ``theta(q) = x`` by bisection in ``log(q - 1)``."""
    if not x > 0:
        raise InvalidArgument("theta_inverse needs x > 0")
    lo, hi = -700.0, 1.0
    if _theta_of_log(lo) < x:
        raise InvalidArgument(f"{x} is outside the range of theta")
    while _theta_of_log(hi) > x:
        hi *= 2.0
        if hi > 700:
            raise InvalidArgument(f"{x} is outside the range of theta")
    for _ in range(400):
        mid = 0.5 * (lo + hi)
        if _theta_of_log(mid) > x:
            lo = mid
        else:
            hi = mid
        if hi - lo < tol * 1e-3:
            break
    return 1.0 + math.exp(0.5 * (lo + hi))


def psi_of_bmo(bmo_norm):
    """``(1 + ||L|| / 2) q / (q - 1)`` with ``q = theta^{-1}(||L||)``; increasing."""
    q = theta_inverse(bmo_norm)
    return (1.0 + bmo_norm / 2.0) * q / (q - 1.0)


def exp_integrability_bound(a, b):
    """Largest ``gamma`` with ``E exp(gamma |xi|) < inf`` for ``xi = 2a(b-a) tau_b - 2a``."""
    if not (a > 0 and b > 0):
        raise InvalidArgument("a and b must be positive")
    if a == b:
        return math.inf
    return b * b / (4.0 * a * abs(b - a))


@dataclass(frozen=True)
class ConstantsReport:
    kappa: float | None
    psi_kappa: float | None
    bmo_norm: float | None
    theta_inverse: float | None
    psi_bmo: float | None
    gamma: float | None
    alpha_H3: float | None
    delta_H3: float | None

    @property
    def psi(self):
        vals = [v for v in (self.psi_kappa, self.psi_bmo) if v is not None]
        return min(vals) if vals else None

    def h3_exponents_ok(self):
        """Whether both integrability exponents exceed ``Psi``; None if unknown."""
        if self.psi is None or self.alpha_H3 is None or self.delta_H3 is None:
            return None
        return self.alpha_H3 > self.psi and self.delta_H3 > self.psi

    def to_dict(self):
        return asdict(self)


def constants_report(kappa=None, bmo_norm=None, gamma=None, alpha_H3=None, delta_H3=None):
    """Collect the constants; a BMO norm alone also fixes ``kappa = 1 / (2 ||L||^2)``."""
    if kappa is None and bmo_norm is None:
        raise InvalidArgument("need kappa or a BMO norm")
    q = psi_b = None
    if bmo_norm is not None:
        q = theta_inverse(bmo_norm)
        psi_b = (1.0 + bmo_norm / 2.0) * q / (q - 1.0)
        if kappa is None and 1.0 / (2.0 * bmo_norm ** 2) > 1.0:
            kappa = 1.0 / (2.0 * bmo_norm ** 2)
    psi_k = psi_of_kappa(kappa) if kappa is not None else None
    return ConstantsReport(kappa, psi_k, bmo_norm, q, psi_b, gamma, alpha_H3, delta_H3)
