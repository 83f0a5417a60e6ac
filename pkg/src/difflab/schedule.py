r"""Variance-preserving noise schedule and the reverse-time drift.

The forward process is

.. math:: dX_t = -\tfrac12 g_t^2 X_t\,dt + g_t\,dW_t,\qquad g_t = \sqrt{\beta_0 + (\beta_1-\beta_0)t}.

Public APIs that simulate the generative process take the *generative* clock
``t_gen`` in ``[0, T]``; forward quantities are reached through
``t_fwd = T - t_gen`` (:func:`to_forward`).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np
from scipy import integrate

from .errors import DomainError, SingularScheduleError

_TOL = 1e-12

H_MODES = ("alpha_of_g", "const_unit_time")


@dataclass(frozen=True)
class ScheduleParams:
    """Affine-beta VP schedule on ``[0, T]``."""

    beta0: float = 1.0
    beta1: float = 1.0
    T: float = 1.0

    def __post_init__(self):
        if not (self.beta0 > 0):
            raise ValueError(f"beta0 must be > 0, got {self.beta0}")
        if not (self.beta1 >= self.beta0):
            raise ValueError(f"beta1 must be >= beta0, got {self.beta1} < {self.beta0}")
        if not (self.T > 0):
            raise ValueError(f"T must be > 0, got {self.T}")

    @classmethod
    def unit(cls, T: float) -> "ScheduleParams":
        """Constant schedule ``g = 1`` on ``[0, T]``."""
        return cls(1.0, 1.0, T)

    @property
    def is_unit(self) -> bool:
        return self.beta0 == 1.0 and self.beta1 == 1.0

    def to_dict(self) -> dict:
        return {"beta0": self.beta0, "beta1": self.beta1, "T": self.T}


@dataclass(frozen=True)
class HProfile:
    """Generative diffusion coefficient.

    ``alpha_of_g`` means ``h_t = value * g_t`` on the original clock.
    ``const_unit_time`` means ``h = value`` constant on the unit-``g`` clock
    obtained by :func:`rescale_to_unit_g`.  The two describe the same
    continuous-time process; they differ in which clock a uniform step grid
    lives on, so the mode is kept explicitly.
    """

    mode: str = "alpha_of_g"
    value: float = 1.0

    def __post_init__(self):
        if self.mode not in H_MODES:
            raise ValueError(f"h_mode must be one of {H_MODES}, got {self.mode!r}")
        if self.value < 0:
            raise ValueError(f"h_value must be >= 0, got {self.value}")

    def h(self, params: ScheduleParams, t_gen):
        return self.value * g(params, to_forward(params, t_gen))


def _check_time(params: ScheduleParams, t):
    if isinstance(t, (float, int)):
        if not (-_TOL * params.T <= t <= params.T * (1 + _TOL)):
            raise DomainError(f"time outside [0, {params.T}]: {t}")
        return min(max(float(t), 0.0), params.T)
    t = np.asarray(t, dtype=float)
    lo, hi = -_TOL * params.T, params.T * (1 + _TOL)
    if np.any(t < lo) or np.any(t > hi) or np.any(~np.isfinite(t)):
        raise DomainError(f"time outside [0, {params.T}]: {t}")
    return np.clip(t, 0.0, params.T)


def _scalar(x):
    if isinstance(x, float):
        return x
    return float(x) if np.ndim(x) == 0 else x


def to_forward(params: ScheduleParams, t_gen):
    """Map generative time to forward time (an involution)."""
    return _scalar(params.T - _check_time(params, t_gen))


def integrated_beta(params: ScheduleParams, t):
    """Closed form of ``int_0^t g_s^2 ds``; no domain check."""
    if not isinstance(t, float):
        t = np.asarray(t, dtype=float)
    return _scalar(params.beta0 * t + 0.5 * (params.beta1 - params.beta0) * t * t)


def g(params: ScheduleParams, t):
    """Forward diffusion coefficient ``sqrt(beta0 + (beta1 - beta0) t)``."""
    t = _check_time(params, t)
    return _scalar(np.sqrt(params.beta0 + (params.beta1 - params.beta0) * t))


def mean_scale(params: ScheduleParams, t):
    """``mu_t = exp(-1/2 int_0^t g^2)``, the factor multiplying ``X_0``."""
    t = _check_time(params, t)
    return _scalar(np.exp(-0.5 * integrated_beta(params, t)))


def varpi(params: ScheduleParams, t):
    """Conditional standard deviation of ``X_t`` given ``X_0``."""
    t = _check_time(params, t)
    return _scalar(np.sqrt(-np.expm1(-integrated_beta(params, t))))


def reverse_drift(params: ScheduleParams, score_value, x, t_gen, h):
    """Drift of the generative SDE at generative time ``t_gen``.

    ``-f(x) + (g^2 + h^2)/2 * score`` with ``f(x) = -g^2 x / 2`` taken at the
    forward time ``T - t_gen``.
    """
    g2 = g(params, to_forward(params, t_gen)) ** 2
    x = np.asarray(x, dtype=float)
    return 0.5 * g2 * x + 0.5 * (g2 + h * h) * np.asarray(score_value, dtype=float)


@dataclass(frozen=True)
class UnitClock:
    """Change of clock that turns a general-``g`` VP-SDE into a unit one.

    ``tau`` maps unit forward time ``u`` in ``[0, theta]`` to original forward
    time by integrating ``tau'(u) = g_{tau(u)}^{-2}``; ``tau_inv(s)`` is
    ``int_0^s g^2``.
    """

    params: ScheduleParams
    theta: float
    _tau_sol: object = field(repr=False, compare=False, default=None)

    @property
    def unit_params(self) -> ScheduleParams:
        return ScheduleParams.unit(self.theta)

    def tau_inv(self, s):
        s = np.asarray(s, dtype=float)
        if s.ndim == 0:
            return _tau_inv(self.params, float(s))
        return np.array([_tau_inv(self.params, float(v)) for v in s.ravel()]).reshape(s.shape)

    def tau(self, u):
        u = np.clip(np.asarray(u, dtype=float), 0.0, self.theta)
        out = np.clip(self._tau_sol.sol(u)[0], 0.0, self.params.T)
        return _scalar(out)

    def h_original(self, h_hat: Union[float, Callable[[float], float]]):
        """Original-clock ``h`` (as a function of generative time) induced by ``h_hat``.

        ``h_hat`` is a constant or a function of unit forward time.
        """
        p = self.params
        if not callable(h_hat):
            c = float(h_hat)
            return lambda s_gen: c * g(p, to_forward(p, s_gen))

        def h_of_gen(s_gen):
            s_fwd = to_forward(p, s_gen)
            return g(p, s_fwd) * h_hat(self.tau_inv(s_fwd))

        return h_of_gen


def _tau_inv(params: ScheduleParams, s: float) -> float:
    val, _ = integrate.quad(lambda r: g(params, r) ** 2, 0.0, s, epsabs=1e-13, epsrel=1e-13)
    return val


def rescale_to_unit_g(params: ScheduleParams) -> UnitClock:
    """Build the unit-``g`` clock; ``theta = tau^{-1}(T)`` is found by quadrature."""
    g_lo = np.sqrt(params.beta0)
    if not g_lo > 0:
        raise SingularScheduleError("g vanishes at t = 0")
    theta = _tau_inv(params, params.T)
    slope = params.beta1 - params.beta0

    def rhs(_u, s):
        return 1.0 / (params.beta0 + slope * np.minimum(s, params.T))

    sol = integrate.solve_ivp(rhs, (0.0, theta), [0.0], method="DOP853", rtol=1e-12, atol=1e-14, dense_output=True)
    return UnitClock(params, theta, sol)
