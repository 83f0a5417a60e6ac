r"""Closed-form ground truth for centered 1D Gaussian data.

With score error :math:`\varepsilon \alpha_t x` the generative SDE stays
linear, so :math:`\tilde Y_T` is Gaussian with mean 0 and

.. math::

    \log G_t = -\int_0^t \tfrac12 g^2 + \tfrac{g^2 + h^2}{2}
               \bigl(-1/\sigma^2_{T-s} + \varepsilon\alpha_s\bigr)\,ds,
    \qquad
    \mathrm{var}(\tilde Y_T) = G_T^{-2}\,\mathrm{var}(\tilde Y_0)
        + \int_0^T G_T^{-2} G_t^2 h_t^2\,dt,

where ``g`` and ``h`` are read at forward time ``T - s``.  For the unit
schedule the ``g`` factors are 1 and ``h`` is the constant ``hsq ** 0.5``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import integrate

from . import schedule as sch
from .errors import QuadratureError
from .schedule import HProfile, ScheduleParams
from .scores import Gaussian1D, Perturbation, TimeMask

# the grid the table values are regressed on; see leading_L
TABLE_EPS_GRID = tuple(np.round(np.arange(1, 14) * 0.01, 2))
DEFAULT_EPS_GRID = (0.005, 0.01, 0.02, 0.04)
MAX_EPS = 0.2

_INNER_TOL = 1e-10
_OUTER_TOL = 1e-8


@dataclass(frozen=True)
class OracleSpec:
    """One linear-error Gaussian problem.

    ``h`` multiplies ``g`` on the original clock; for the unit schedule that
    is the constant ``h``.  ``init`` is ``exact_pT`` (``var Y_0 = sigma_T^2``)
    or ``standard_normal``.
    """

    sigma0: float
    pert: Perturbation = field(default_factory=Perturbation)
    h: HProfile = field(default_factory=HProfile)
    params: ScheduleParams = ScheduleParams.unit(2.0)
    init: str = "exact_pT"

    def __post_init__(self):
        if not self.sigma0 > 0:
            raise ValueError("sigma0 must be > 0")
        if self.init not in ("exact_pT", "standard_normal"):
            raise ValueError("init must be exact_pT or standard_normal")

    @classmethod
    def unit(cls, sigma0, hsq, mask: TimeMask, epsilon=0.0, T=2.0, init="exact_pT"):
        """Unit-``g`` problem with constant ``h^2 = hsq``."""
        return cls(sigma0, Perturbation(epsilon, mask), HProfile("const_unit_time", float(np.sqrt(hsq))), ScheduleParams.unit(T), init)

    @property
    def epsilon(self) -> float:
        return self.pert.epsilon

    @property
    def model(self) -> Gaussian1D:
        return Gaussian1D(self.sigma0, self.params)

    def with_epsilon(self, epsilon) -> "OracleSpec":
        return OracleSpec(self.sigma0, self.pert.with_epsilon(epsilon), self.h, self.params, self.init)

    def breakpoints(self) -> list:
        T = self.params.T
        return sorted(p for p in self.pert.mask.breakpoints(T) if 0 < p < T)

    def var_init(self) -> float:
        if self.init == "standard_normal":
            return 1.0
        return float(self.model.marginal_var(self.params.T))

    # pieces of the log G integrand on the generative clock, as plain scalar
    # functions because nested quadrature calls them many thousands of times
    def _parts(self):
        b0, b1, T = self.params.beta0, self.params.beta1, self.params.T
        slope = b1 - b0
        s02 = self.sigma0**2
        hh = self.h.value**2
        mask = self.pert.mask
        kind = mask.kind
        linear = self.pert.mode == "linear"
        lin = self.pert.linear_coef

        def g2(s):
            return b0 + slope * (T - s)

        def var(s):
            u = T - s
            ib = b0 * u + 0.5 * slope * u * u
            return s02 * math.exp(-ib) - math.expm1(-ib)

        def m(s):
            if kind == "one":
                return 1.0
            if kind == "minus_one":
                return -1.0
            if kind == "zero":
                return 0.0
            return float(mask(s, T))

        def base(s):
            gg = g2(s)
            return 0.5 * gg - 0.5 * gg * (1 + hh) / var(s)

        def err(s):
            c = m(s) * lin(s) if linear else -m(s) / var(s)
            return 0.5 * g2(s) * (1 + hh) * c

        def h2(s):
            return hh * g2(s)

        return base, err, h2


def _quad(f, a, b, points, tol):
    if b <= a:
        return 0.0
    pts = [q for q in points if a < q < b]
    edges = [a] + pts + [b]
    total = 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        val, est = integrate.quad(f, lo, hi, epsabs=tol, epsrel=tol, limit=400)
        if not np.isfinite(val) or est > max(tol, tol * abs(val)) * 10:
            raise QuadratureError(f"quadrature on [{lo}, {hi}] reached {est:.3g}", achieved=est)
        total += val
    return total


def log_G(spec: OracleSpec, t: float) -> float:
    """``log G_t`` by adaptive quadrature split at mask discontinuities."""
    sch._check_time(spec.params, t)
    base, err, _ = spec._parts()
    eps = spec.epsilon

    def f(s):
        return base(s) + eps * err(s)

    return -_quad(f, 0.0, float(t), spec.breakpoints(), _INNER_TOL)


def var_YT(spec: OracleSpec) -> float:
    """Terminal variance of the generated sample (nested quadrature)."""
    T = spec.params.T
    _, _, h2 = spec._parts()
    lgT = log_G(spec, T)
    out = np.exp(-2 * lgT) * spec.var_init()
    if spec.h.value > 0:
        out += _quad(lambda t: np.exp(2 * (log_G(spec, t) - lgT)) * h2(t), 0.0, T, spec.breakpoints(), _OUTER_TOL)
    return float(out)


def kl_from_ratio(r):
    """``KL(N(0, s^2) || N(0, r s^2))``, written to avoid cancellation near ``r = 1``."""
    x = np.asarray(r, dtype=float) - 1.0
    out = 0.5 * (np.log1p(x) - x / (1.0 + x))
    return float(out) if out.ndim == 0 else out


def kl_exact(spec: OracleSpec) -> float:
    """``KL(p_0 || law of Y_T)`` for the Gaussian problem."""
    v = var_YT(spec)
    if not v > 0:
        raise QuadratureError("non-positive terminal variance", achieved=v)
    return kl_from_ratio(v / spec.sigma0**2)


@dataclass
class LeadingLResult:
    L: float
    r2: float
    eps: np.ndarray
    kl: np.ndarray
    residuals: np.ndarray
    warning: Optional[str] = None


def leading_L(spec: OracleSpec, eps_grid: Sequence[float] = DEFAULT_EPS_GRID) -> LeadingLResult:
    """Slope of KL on ``eps^2`` through the origin.

    ``r2`` is the uncentered coefficient ``1 - sum(res^2) / sum(kl^2)``.
    """
    eps = np.asarray(eps_grid, dtype=float)
    if eps.size < 3 or np.any(eps <= 0) or np.any(eps > MAX_EPS):
        raise ValueError(f"eps_grid needs >= 3 values in (0, {MAX_EPS}]")
    kl = np.array([kl_exact(spec.with_epsilon(e)) for e in eps])
    x = eps**2
    L = float(x @ kl / (x @ x))
    res = kl - L * x
    denom = kl @ kl
    r2 = float(1 - res @ res / denom) if denom > 0 else float("nan")
    warn = None
    if not r2 >= 0.999:
        warn = f"poor quadratic fit, R^2 = {r2:.6f}"
        warnings.warn(warn, RuntimeWarning, stacklevel=2)
    return LeadingLResult(L, r2, eps, kl, res, warn)


def _segments(spec):
    T = spec.params.T
    return [0.0] + spec.breakpoints() + [T]


def variance_derivative(spec: OracleSpec) -> float:
    """``d var(Y_T) / d eps`` at ``eps = 0``.

    With ``B_t = int_0^t err`` it equals
    ``2 G_T^{-2} [B_T var_0 + int (B_T - B_t) G_t^2 h_t^2 dt]``.
    """
    base, err, h2 = spec._parts()
    edges = _segments(spec)

    # log G (at eps = 0) and B on each piece, carried across breakpoints
    sols = []
    y0 = [0.0, 0.0]
    for lo, hi in zip(edges[:-1], edges[1:]):
        sol = integrate.solve_ivp(
            lambda s, y: [-base(s), err(s)], (lo, hi), y0, method="DOP853", rtol=1e-12, atol=1e-14, dense_output=True
        )
        if not sol.success:
            raise QuadratureError(sol.message)
        sols.append(sol)
        y0 = list(sol.y[:, -1])
    lgT, BT = y0

    acc = BT * spec.var_init() * np.exp(-2 * lgT)
    if spec.h.value > 0:
        for (lo, hi), sol in zip(zip(edges[:-1], edges[1:]), sols):

            def f(t, sol=sol):
                lg, B = sol.sol(t)
                return (BT - B) * np.exp(2 * (lg - lgT)) * h2(t)

            val, _ = integrate.quad(f, lo, hi, epsabs=0.0, epsrel=1e-11, limit=400)
            acc += val
    return float(2 * acc)


def leading_L_limit(spec: OracleSpec) -> float:
    """Exact ``lim KL / eps^2 = (v1 / sigma0^2)^2 / 4`` with ``v1`` from :func:`variance_derivative`."""
    v1 = variance_derivative(spec)
    return float(0.25 * (v1 / spec.sigma0**2) ** 2)
