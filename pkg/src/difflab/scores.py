"""Analytic score families and the injected score error.

Score models are evaluated on the *forward* clock: ``model.score(t_fwd, x)``
with ``x`` of shape ``(n, dim)``.  The generative-clock wrapper
:class:`PerturbedScore` is what the samplers consume.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Protocol, Sequence

import numpy as np
from scipy.special import logsumexp

from . import schedule as sch
from .schedule import ScheduleParams


class ScoreModel(Protocol):
    dim: int
    params: ScheduleParams

    def score(self, t_fwd: float, x: np.ndarray) -> np.ndarray: ...


def _as_points(x, dim):
    x = np.asarray(x, dtype=float)
    if dim == 1 and x.ndim <= 1:
        return x.reshape(-1, 1)
    return x.reshape(-1, dim)


@dataclass(frozen=True)
class Gaussian1D:
    """Centered Gaussian data ``N(0, sigma0^2)`` pushed through the VP-SDE."""

    sigma0: float
    params: ScheduleParams = ScheduleParams.unit(2.0)
    dim: int = 1

    def __post_init__(self):
        if not self.sigma0 > 0:
            raise ValueError("sigma0 must be > 0")

    def marginal_var(self, t_fwd):
        mu = sch.mean_scale(self.params, t_fwd)
        w = sch.varpi(self.params, t_fwd)
        return mu * mu * self.sigma0**2 + w * w

    def score(self, t_fwd, x):
        return -np.asarray(x, dtype=float) / self.marginal_var(t_fwd)

    def log_density(self, t_fwd, x):
        x = np.asarray(x, dtype=float)
        v = self.marginal_var(t_fwd)
        out = -0.5 * x * x / v - 0.5 * np.log(2 * np.pi * v)
        return out.sum(axis=-1) if out.ndim == 2 else out

    def density(self, t_fwd, x):
        return np.exp(self.log_density(t_fwd, x))

    def sample(self, t_fwd, normals, uniforms=None):
        """Exact draw from the time-``t_fwd`` marginal given standard normals."""
        return np.sqrt(self.marginal_var(t_fwd)) * np.asarray(normals, dtype=float)

    def bin_probabilities(self, edges):
        """Exact mass of ``p_0`` in each bin of a 1D histogram."""
        from scipy.stats import norm

        return np.diff(norm.cdf(np.asarray(edges) / self.sigma0))


def gauss1d_score(model: Gaussian1D, t_fwd, x):
    """``-x / sigma_t^2`` for the Gaussian family."""
    return model.score(t_fwd, x)


@dataclass(frozen=True)
class GaussianMixture:
    """Axis-aligned Gaussian mixture data pushed through the VP-SDE.

    Component ``i`` at forward time ``t`` has mean ``mu_t m_i`` and per-axis
    variance ``mu_t^2 s_i^2 + varpi_t^2``.
    """

    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    params: ScheduleParams = ScheduleParams.unit(4.0)

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float).ravel()
        m = np.atleast_2d(np.asarray(self.means, dtype=float))
        if m.shape[0] != w.size and m.shape[1] == w.size and m.shape[0] == 1:
            m = m.T
        v = np.asarray(self.variances, dtype=float)
        v = np.broadcast_to(v.reshape(m.shape[0], -1), m.shape).copy()
        if np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-10:
            raise ValueError("mixture weights must be positive and sum to 1")
        if np.any(v <= 0):
            raise ValueError("mixture variances must be positive")
        if m.shape[0] != w.size:
            raise ValueError("one mean per weight required")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", m)
        object.__setattr__(self, "variances", v)

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def _components(self, t_fwd):
        mu = sch.mean_scale(self.params, t_fwd)
        w = sch.varpi(self.params, t_fwd)
        return mu * self.means, mu * mu * self.variances + w * w

    def _log_joint(self, t_fwd, x):
        m, v = self._components(t_fwd)
        d = x[:, None, :] - m[None, :, :]
        lp = -0.5 * np.sum(d * d / v + np.log(2 * np.pi * v), axis=-1)
        return lp + np.log(self.weights), d, v

    def score(self, t_fwd, x):
        pts = _as_points(x, self.dim)
        lj, d, v = self._log_joint(t_fwd, pts)
        r = np.exp(lj - logsumexp(lj, axis=1, keepdims=True))
        out = -np.einsum("nk,nkd->nd", r, d / v)
        return out.reshape(np.shape(x)) if np.ndim(x) >= 1 else out[0, 0]

    def log_density(self, t_fwd, x):
        pts = _as_points(x, self.dim)
        lj, _, _ = self._log_joint(t_fwd, pts)
        out = logsumexp(lj, axis=1)
        return out if np.ndim(x) >= 1 and not (self.dim == 1 and np.ndim(x) == 0) else out[0]

    def density(self, t_fwd, x):
        return np.exp(self.log_density(t_fwd, x))

    def sample(self, t_fwd, normals, uniforms):
        """Exact draw from the time-``t_fwd`` marginal.

        ``uniforms`` (one per sample) pick the component by inverse CDF.
        """
        m, v = self._components(t_fwd)
        cdf = np.cumsum(self.weights)
        k = np.minimum(np.searchsorted(cdf, np.asarray(uniforms), side="right"), len(cdf) - 1)
        z = np.asarray(normals, dtype=float).reshape(-1, self.dim)
        return m[k] + np.sqrt(v[k]) * z

    def marginal(self, axis: int) -> "GaussianMixture":
        return GaussianMixture(self.weights, self.means[:, [axis]], self.variances[:, [axis]], self.params)

    def bin_probabilities(self, edges):
        """Exact mass of the 1D ``p_0`` per bin (mixture must be 1D)."""
        from scipy.stats import norm

        if self.dim != 1:
            raise ValueError("bin_probabilities needs a 1D mixture; use marginal()")
        e = np.asarray(edges, dtype=float)[:, None]
        cdf = norm.cdf((e - self.means[:, 0]) / np.sqrt(self.variances[:, 0])) @ self.weights
        return np.diff(cdf)


def gmm_score(model: GaussianMixture, params: ScheduleParams, t_fwd, x):
    """Mixture score with responsibilities computed by log-sum-exp."""
    if params != model.params:
        model = GaussianMixture(model.weights, model.means, model.variances, params)
    return model.score(t_fwd, x)


def gmm1d_two_mode(params: ScheduleParams = ScheduleParams.unit(4.0)) -> GaussianMixture:
    """Two modes at -1 and +1 with variance 0.01, equal weight."""
    return GaussianMixture([0.5, 0.5], [[-1.0], [1.0]], [[0.01], [0.01]], params)


def gmm2d_four_mode(params: ScheduleParams = ScheduleParams.unit(4.0)) -> GaussianMixture:
    """Four modes at (+-1, +-1) with isotropic std 0.05, equal weight."""
    means = [[-1.0, -1.0], [-1.0, 1.0], [1.0, -1.0], [1.0, 1.0]]
    return GaussianMixture([0.25] * 4, means, [[0.05**2] * 2] * 4, params)


# --- time masks -------------------------------------------------------------

MASK_KINDS = ("zero", "one", "minus_one", "sinusoid", "before", "after", "pulse")


@dataclass(frozen=True)
class TimeMask:
    """Scalar time profile of the score error on the generative clock.

    ``before``: 1 for ``t < c T``.  ``after``: 1 for ``t > c T``.
    ``pulse``: ``1/(a T)`` on ``[s T, (s + a) T]``, a box approximating a
    Dirac pulse at ``s T`` (``s`` and ``a`` are fractions of ``T``).
    """

    kind: str = "one"
    c: float = 0.95
    s: float = 0.2
    a: float = 0.01

    def __post_init__(self):
        if self.kind not in MASK_KINDS:
            raise ValueError(f"unknown mask {self.kind!r}; expected one of {MASK_KINDS}")
        if self.kind == "pulse" and not (self.a > 0 and 0 <= self.s and self.s + self.a <= 1):
            raise ValueError("pulse needs a > 0 and [s, s + a] inside [0, 1]")

    def __call__(self, t_gen, T):
        t = np.asarray(t_gen, dtype=float)
        k = self.kind
        if k == "zero":
            out = np.zeros_like(t)
        elif k == "one":
            out = np.ones_like(t)
        elif k == "minus_one":
            out = -np.ones_like(t)
        elif k == "sinusoid":
            out = 0.5 * (1.0 + np.sin(2 * np.pi * t / T))
        elif k == "before":
            out = (t < self.c * T).astype(float)
        elif k == "after":
            out = (t > self.c * T).astype(float)
        else:
            lo, hi = self.s * T, (self.s + self.a) * T
            out = ((t >= lo) & (t <= hi)).astype(float) / (self.a * T)
        return float(out) if out.ndim == 0 else out

    def breakpoints(self, T) -> list:
        if self.kind in ("before", "after"):
            return [self.c * T]
        if self.kind == "pulse":
            return [self.s * T, (self.s + self.a) * T]
        return []

    def integral(self, t0, t1, T) -> float:
        """Exact ``int_{t0}^{t1} mask``."""
        k = self.kind
        if k == "zero":
            return 0.0
        if k == "one":
            return t1 - t0
        if k == "minus_one":
            return t0 - t1
        if k == "sinusoid":
            w = 2 * np.pi / T
            return 0.5 * (t1 - t0) + 0.5 * (np.cos(w * t0) - np.cos(w * t1)) / w
        if k == "before":
            cut = self.c * T
            return max(0.0, min(t1, cut) - t0)
        if k == "after":
            cut = self.c * T
            return max(0.0, t1 - max(t0, cut))
        lo, hi = self.s * T, (self.s + self.a) * T
        return max(0.0, min(t1, hi) - max(t0, lo)) / (self.a * T)

    def average(self, t0, t1, T) -> float:
        if t1 <= t0:
            return float(self(t0, T))
        return self.integral(t0, t1, T) / (t1 - t0)


def case_mask(case: int, c: Optional[float] = None) -> TimeMask:
    """Named error profiles 1-5 (constant, negated, sinusoid, early, late)."""
    if case == 1:
        return TimeMask("one")
    if case == 2:
        return TimeMask("minus_one")
    if case == 3:
        return TimeMask("sinusoid")
    if case == 4:
        return TimeMask("before", c=0.95 if c is None else c)
    if case == 5:
        return TimeMask("after", c=0.99 if c is None else c)
    raise ValueError(f"case must be in 1..5, got {case}")


SPATIAL_MODES = ("score_proportional", "linear")


@dataclass(frozen=True)
class Perturbation:
    """Score error ``epsilon * mask(t) * field(t, x)``.

    ``linear`` mode uses ``field(t, x) = linear_coef(t) * x``.
    """

    epsilon: float = 0.0
    mask: TimeMask = field(default_factory=TimeMask)
    mode: str = "score_proportional"
    linear_coef: Optional[Callable[[float], float]] = None

    def __post_init__(self):
        if self.mode not in SPATIAL_MODES:
            raise ValueError(f"unknown spatial mode {self.mode!r}")
        if self.mode == "linear" and self.linear_coef is None:
            raise ValueError("linear mode needs linear_coef")

    def with_epsilon(self, epsilon: float) -> "Perturbation":
        return Perturbation(epsilon, self.mask, self.mode, self.linear_coef)

    def field(self, base: ScoreModel, t_gen, x, exact=None):
        """Unscaled spatial field (mask not applied)."""
        if self.mode == "score_proportional":
            if exact is not None:
                return exact
            return base.score(sch.to_forward(base.params, t_gen), x)
        return self.linear_coef(t_gen) * np.asarray(x, dtype=float)


def perturbed_score(base: ScoreModel, pert: Perturbation, t_gen, x):
    """``score(T - t_gen, x) + eps * mask(t_gen) * field(t_gen, x)``."""
    s = base.score(sch.to_forward(base.params, t_gen), x)
    if pert.epsilon == 0.0:
        return s
    m = pert.mask(t_gen, base.params.T)
    if m == 0.0:
        return s
    return s + pert.epsilon * m * pert.field(base, t_gen, x, exact=s)


@dataclass(frozen=True)
class PerturbedScore:
    """Generative-clock score callable ``(t_gen, x) -> vector`` for samplers."""

    base: ScoreModel
    pert: Perturbation = field(default_factory=Perturbation)

    @property
    def params(self) -> ScheduleParams:
        return self.base.params

    @property
    def dim(self) -> int:
        return self.base.dim

    def __call__(self, t_gen, x):
        return perturbed_score(self.base, self.pert, t_gen, x)


def linear_error_coefficient(model: Gaussian1D, pert: Perturbation) -> Callable[[float], float]:
    """Coefficient ``a_t`` with ``mask(t) field(t, x) = a_t x`` for the Gaussian family."""
    T = model.params.T
    if pert.mode == "linear":
        return lambda t: pert.mask(t, T) * pert.linear_coef(t)

    def coef(t):
        return -pert.mask(t, T) / model.marginal_var(sch.to_forward(model.params, t))

    return coef


@dataclass(frozen=True)
class UnitClockModel:
    """View of a score model on the unit-``g`` clock of :func:`schedule.rescale_to_unit_g`."""

    model: ScoreModel
    clock: sch.UnitClock

    @property
    def params(self) -> ScheduleParams:
        return self.clock.unit_params

    @property
    def dim(self) -> int:
        return self.model.dim

    def score(self, u_fwd, x):
        return self.model.score(self.clock.tau(u_fwd), x)

    def sample(self, u_fwd, normals, uniforms=None):
        return self.model.sample(self.clock.tau(u_fwd), normals, uniforms)


def model_from_config(cfg: dict, params: ScheduleParams):
    """Build a score family from config keys ``family, weights, means, vars``."""
    fam = cfg.get("family", "gauss1d")
    if fam == "gauss1d":
        return Gaussian1D(float(cfg.get("sigma0", 1.0)), params)
    if fam == "gmm1d":
        return gmm1d_two_mode(params)
    if fam == "gmm2d":
        return gmm2d_four_mode(params)
    if fam == "gmm":
        return GaussianMixture(cfg["weights"], cfg["means"], cfg["vars"], params)
    raise ValueError(f"unknown family {fam!r}")


def perturbation_from_config(cfg: dict) -> Perturbation:
    """Keys ``epsilon, mask, mask_c, mode`` (nested under ``pert``)."""
    mask_key = cfg.get("mask", "one")
    c = cfg.get("mask_c")
    if isinstance(mask_key, int) or str(mask_key).isdigit():
        mask = case_mask(int(mask_key), c)
    else:
        kw = {"c": c} if c is not None else {}
        if mask_key == "pulse":
            kw.update(s=float(cfg.get("pulse_s", 0.2)), a=float(cfg.get("pulse_a", 0.01)))
        mask = TimeMask(mask_key, **kw)
    mode = cfg.get("mode", "score_proportional")
    if mode == "linear":
        coef = float(cfg.get("linear_coef", 1.0))
        return Perturbation(float(cfg.get("epsilon", 0.0)), mask, mode, lambda _t, c=coef: c)
    return Perturbation(float(cfg.get("epsilon", 0.0)), mask, mode)


__all__: Sequence[str] = [
    "ScoreModel",
    "Gaussian1D",
    "GaussianMixture",
    "gauss1d_score",
    "gmm_score",
    "gmm1d_two_mode",
    "gmm2d_four_mode",
    "TimeMask",
    "case_mask",
    "Perturbation",
    "perturbed_score",
    "PerturbedScore",
    "linear_error_coefficient",
    "UnitClockModel",
    "model_from_config",
    "perturbation_from_config",
]
