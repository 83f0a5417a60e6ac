"""Sweeps of the leading-order coefficient over ``h^2`` and the fits on them.

``L(h)`` is the coefficient of ``eps^2`` in ``KL(p_0 || generated)``.  It can
come from the Gaussian oracle (regression on an ``eps`` grid, or the exact
limit), from the Fokker-Planck solve, or from Euler-Maruyama samples.
"""

from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence

import numpy as np
from scipy.integrate import trapezoid

from . import fokker_planck as fp
from . import metrics
from . import oracle
from . import schedule as sch
from .schedule import ScheduleParams
from .scores import Gaussian1D, Perturbation, PerturbedScore, TimeMask

DEFAULT_HSQ_GRID = (0.0, 0.5, 1.0, 2.0, 4.0, 7.0, 10.0, 14.0, 20.0)
SOURCES = ("oracle", "oracle_limit", "pde", "mc")


@dataclass(frozen=True)
class GaussProblem:
    """1D Gaussian data with a score-proportional error on the unit clock."""

    sigma0: float
    mask: TimeMask
    T: float = 2.0
    eps_grid: tuple = oracle.DEFAULT_EPS_GRID
    grid_n: int = 2000
    richardson: bool = True
    mc_steps: int = 40000
    mc_batch: int = 100000
    mc_seed: int = 0
    mc_eps: tuple = (0.02,)

    @property
    def params(self) -> ScheduleParams:
        return ScheduleParams.unit(self.T)

    @property
    def model(self) -> Gaussian1D:
        return Gaussian1D(self.sigma0, self.params)

    def oracle_spec(self, hsq, epsilon=0.0) -> oracle.OracleSpec:
        return oracle.OracleSpec.unit(self.sigma0, hsq, self.mask, epsilon, self.T)


@dataclass
class SweepRow:
    hsq: float
    epsilon: float
    metric: str
    value: float
    source: str
    r2: float = float("nan")
    error: str = ""

    def key(self):
        return (self.hsq, self.epsilon, self.metric, self.source)


@dataclass
class SweepResult:
    rows: List[SweepRow] = field(default_factory=list)

    def series(self, metric="L", source=None):
        """``(hsq, value)`` arrays for successful rows of one metric/source."""
        rows = [r for r in self.rows if r.metric == metric and not r.error and (source is None or r.source == source)]
        rows.sort(key=lambda r: r.hsq)
        return np.array([r.hsq for r in rows]), np.array([r.value for r in rows])

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["hsq", "epsilon", "metric", "value", "source", "r2", "error"])
            for r in self.rows:
                w.writerow([_fmt(r.hsq), _fmt(r.epsilon), r.metric, _fmt(r.value), r.source, _fmt(r.r2), r.error])


def _fmt(v):
    return format(v, ".17g") if isinstance(v, float) else v


def _pool_size():
    try:
        return max(1, int(os.environ.get("LAB_THREADS", "1")))
    except ValueError:
        return 1


def mc_kl(problem: GaussProblem, hsq: float, epsilon: float) -> float:
    """Histogram KL between ``p_0`` (exact bin masses) and EM samples."""
    from .samplers import SamplerConfig, simulate_reverse_em

    model = problem.model
    pert = Perturbation(epsilon, problem.mask)
    cfg = SamplerConfig(steps=problem.mc_steps, batch=problem.mc_batch, seed=problem.mc_seed, alpha=math.sqrt(hsq), init="exact_pT")
    y = simulate_reverse_em(PerturbedScore(model, pert), problem.params, cfg).terminal_samples[:, 0]
    edges = reference_edges(problem.sigma0, problem.mc_batch, problem.mc_seed)
    return metrics.hist_kl(None, y, edges=edges, p_bins=model.bin_probabilities(edges[0]))


def reference_edges(sigma0, n, seed):
    """Histogram edges from a fixed ``p_0`` reference draw."""
    from . import noise

    ref = sigma0 * noise.normals(seed, noise.INIT_WEIGHTS + 3, 0, n)[:, 0]
    return metrics.histogram_edges(ref)


def _cell(problem: GaussProblem, hsq: float, source: str) -> List[SweepRow]:
    if source == "oracle":
        res = oracle.leading_L(problem.oracle_spec(hsq), problem.eps_grid)
        rows = [SweepRow(hsq, float(e), "kl", float(k), source) for e, k in zip(res.eps, res.kl)]
        return rows + [SweepRow(hsq, 0.0, "L", res.L, source, res.r2, res.warning or "")]
    if source == "oracle_limit":
        return [SweepRow(hsq, 0.0, "L", oracle.leading_L_limit(problem.oracle_spec(hsq)), source)]
    if source == "pde":
        grid = fp.default_grid(problem.sigma0, hsq, problem.T, n=problem.grid_n)
        res = fp.leading_L_fp(problem.model, Perturbation(0.0, problem.mask), hsq, grid, richardson=problem.richardson)
        return [SweepRow(hsq, 0.0, "L", res.L, source), SweepRow(hsq, 0.0, "tail_mass", res.tail_mass, source)]
    if source == "mc":
        eps = np.asarray(problem.mc_eps, dtype=float)
        kls = np.array([mc_kl(problem, hsq, e) for e in eps])
        x = eps**2
        L = float(x @ kls / (x @ x))
        return [SweepRow(hsq, float(e), "kl", float(k), source) for e, k in zip(eps, kls)] + [SweepRow(hsq, 0.0, "L", L, source)]
    raise ValueError(f"source must be one of {SOURCES}")


def sweep_h(problem: GaussProblem, hsq_grid: Sequence[float] = DEFAULT_HSQ_GRID, source: str = "oracle", workers: Optional[int] = None) -> SweepResult:
    """Evaluate ``L`` at every ``h^2`` in the grid.

    A failing cell becomes a row with ``error`` set; the sweep carries on.
    """
    grid = [float(h) for h in hsq_grid]
    if not grid or any(b <= a for a, b in zip(grid[:-1], grid[1:])):
        raise ValueError("hsq_grid must be nonempty and strictly ascending")
    if source not in SOURCES:
        raise ValueError(f"source must be one of {SOURCES}")

    def run(h):
        try:
            return _cell(problem, h, source)
        except Exception as exc:  # recorded per row
            return [SweepRow(h, 0.0, "L", float("nan"), source, error=f"{type(exc).__name__}: {exc}")]

    n = workers or _pool_size()
    if n > 1:
        with ThreadPoolExecutor(n) as ex:
            parts = list(ex.map(run, grid))
    else:
        parts = [run(h) for h in grid]
    rows = {}
    for part in parts:
        for r in part:
            rows[r.key()] = r
    return SweepResult(sorted(rows.values(), key=lambda r: (r.hsq, r.metric, r.epsilon, r.source)))


@dataclass
class DecayFit:
    slope: float
    intercept: float
    r2: float
    n_used: int
    n_excluded: int
    flag: str = ""


def fit_decay(hsq, L) -> DecayFit:
    """Least squares of ``ln L`` on ``h^2``; nonpositive ``L`` values are dropped."""
    hsq = np.asarray(hsq, dtype=float)
    L = np.asarray(L, dtype=float)
    ok = np.isfinite(L) & (L > 0)
    x, y = hsq[ok], np.log(L[ok])
    excluded = int((~ok).sum())
    if x.size < 4:
        raise ValueError(f"fit_decay needs >= 4 positive values, got {x.size}")
    A = np.column_stack([x, np.ones_like(x)])
    (slope, icpt), *_ = np.linalg.lstsq(A, y, rcond=None)
    res = y - (slope * x + icpt)
    ss = np.sum((y - y.mean()) ** 2)
    flag = ""
    if ss <= 1e-24 * max(1.0, y @ y):
        r2 = float("nan")
        flag = "r2_undefined"
    else:
        r2 = float(1 - res @ res / ss)
    return DecayFit(float(slope), float(icpt), r2, int(x.size), excluded, flag)


@dataclass
class Plateau:
    value: float
    rate: Optional[DecayFit]
    unreliable: bool
    note: str = ""


def plateau_estimate(hsq, L, rel_noise: float = 1e-3, min_hsq: float = 20.0) -> Plateau:
    """Mean of ``L`` at the three largest ``h^2`` and a decay fit of ``|L - T|``.

    The estimate is flagged unreliable when the grid stops short of
    ``min_hsq`` or the last three values are not monotone beyond
    ``rel_noise``.
    """
    hsq = np.asarray(hsq, dtype=float)
    L = np.asarray(L, dtype=float)
    order = np.argsort(hsq)
    hsq, L = hsq[order], L[order]
    top = L[-3:]
    That = float(top.mean())
    notes = []
    if hsq[-1] < min_hsq:
        notes.append(f"grid stops at h^2 = {hsq[-1]:g}")
    d = np.diff(top)
    tol = rel_noise * abs(That)
    if np.any(d > tol) and np.any(d < -tol):
        notes.append("tail is not monotone")
    unreliable = bool(notes)
    rate = None
    try:
        rate = fit_decay(hsq, np.abs(L - That))
    except ValueError as exc:
        notes.append(f"no rate fit: {exc}")
    return Plateau(That, rate, unreliable, "; ".join(notes))


def t_bound(density: Callable, field_fn: Callable, m0: float, R: float, n: int = 20001, dim: int = 1, rel_floor: float = 1e-12) -> float:
    """``1/(2 m0^2) int (div(p_0 E_T))^2 / p_0``.

    For ``dim > 1`` both ``density`` and ``field_fn`` are taken radial:
    ``p_0(x) = density(|x|)`` and ``E_T(x) = field_fn(|x|) x / |x|``, and the
    integral runs over ``r`` in ``(0, R]`` with the sphere-area factor.
    """
    if dim == 1:
        x = np.linspace(-R, R, n)
        p = np.asarray(density(x), dtype=float)
        flux = p * np.asarray(field_fn(x), dtype=float)
        div = np.gradient(flux, x, edge_order=2)
        keep = p > rel_floor * p.max()
        f = np.where(keep, div**2 / np.where(keep, p, 1.0), 0.0)
        return float(trapezoid(f, x) / (2 * m0**2))
    r = np.linspace(R / n, R, n)
    p = np.asarray(density(r), dtype=float)
    flux = r ** (dim - 1) * p * np.asarray(field_fn(r), dtype=float)
    div = np.gradient(flux, r, edge_order=2) / r ** (dim - 1)
    keep = p > rel_floor * p.max()
    area = 2 * np.pi ** (dim / 2) / math.gamma(dim / 2)
    f = np.where(keep, area * r ** (dim - 1) * div**2 / np.where(keep, p, 1.0), 0.0)
    return float(trapezoid(f, r) / (2 * m0**2))


def t_bound_gaussian(sigma0: float, dim: int = 1, R: Optional[float] = None) -> float:
    """Bound for ``p_0 = N(0, sigma0^2 I)`` with ``E_T`` its own score, ``m0 = 1/sigma0^2``."""
    R = 12 * sigma0 if R is None else R
    c = (2 * np.pi * sigma0**2) ** (-dim / 2)

    def dens(r):
        return c * np.exp(-0.5 * np.asarray(r) ** 2 / sigma0**2)

    def fld(r):
        return -np.asarray(r) / sigma0**2

    return t_bound(dens, fld, 1.0 / sigma0**2, R, dim=dim)


@dataclass
class KLRateBound:
    t: Optional[np.ndarray]
    integrand: Optional[np.ndarray]
    total: float
    uninformative: bool = False
    note: str = ""


def kl_rate_prefactor(g2, h2):
    """``(h^2 + g^2)^2 / (8 h^2)``."""
    return (h2 + g2) ** 2 / (8 * h2)


def kl_rate_bound(params: ScheduleParams, alpha: float, epsilon: float, err_sq: Callable, n: int = 2001) -> KLRateBound:
    """Per-time bound ``(h^2 + g^2)^2 / (8 h^2) eps^2 E|E_t|^2`` with ``h = alpha g``.

    ``err_sq(t_gen)`` is the mean squared error field under the exact law.
    """
    if alpha == 0:
        return KLRateBound(None, None, float("inf"), True, "uninformative at h = 0")
    t = np.linspace(0.0, params.T, n)
    g2 = np.array([sch.g(params, sch.to_forward(params, s)) ** 2 for s in t])
    e2 = np.array([err_sq(s) for s in t], dtype=float)
    curve = kl_rate_prefactor(g2, alpha**2 * g2) * epsilon**2 * e2
    return KLRateBound(t, curve, float(trapezoid(curve, t)))


def gaussian_err_sq(problem: GaussProblem) -> Callable:
    """``E|mask(t) grad log p|^2 = mask^2 / sigma_{T-t}^2`` for the Gaussian family."""
    m = problem.model
    T = problem.T

    def f(t):
        return problem.mask(t, T) ** 2 / m.marginal_var(T - t)

    return f
