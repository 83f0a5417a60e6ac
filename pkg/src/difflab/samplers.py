"""Reverse-time samplers on a uniform generative grid, plus exact forward draws.

Both schemes step ``t_gen`` from 0 to ``T`` with ``delta = T / steps``.
Step ``k`` uses noise stream ``k`` of the counter-based generator, and
trajectory ``i`` always reads the same words, so the batch may be cut into
chunks of any size.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import noise
from . import schedule as sch
from .errors import DivergenceError
from .schedule import ScheduleParams

SCHEMES = ("euler_maruyama", "exponential_integrator")
INITS = ("standard_normal", "exact_pT")


@dataclass(frozen=True)
class SamplerConfig:
    scheme: str = "euler_maruyama"
    steps: int = 1000
    batch: int = 10000
    seed: int = 0
    alpha: float = 1.0
    init: str = "exact_pT"
    keep_paths: bool = False
    workers: Optional[int] = None
    chunk: int = 50000

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}")
        if self.init not in INITS:
            raise ValueError(f"init must be one of {INITS}")
        if self.steps < 1 or self.batch < 1:
            raise ValueError("steps and batch must be >= 1")
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")


@dataclass
class TrajectoryBatch:
    terminal_samples: np.ndarray
    paths: Optional[np.ndarray] = None
    config: Optional[SamplerConfig] = field(default=None, repr=False)


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get("LAB_THREADS", "1")))
    except ValueError:
        return 1


def simulate_forward_exact(model, params: ScheduleParams, t, n, seed, x0: Optional[np.ndarray] = None):
    """Draw ``mu_t X_0 + varpi_t Z`` without time stepping.

    ``model`` must expose ``sample(0, normals, uniforms)`` for ``p_0`` unless
    ``x0`` is given.
    """
    mu = sch.mean_scale(params, t)
    w = sch.varpi(params, t)
    if x0 is None:
        dim = model.dim
        x0 = model.sample(0.0, noise.normals(seed, noise.INIT_NORMAL, 0, n, dim), noise.uniforms(seed, noise.INIT_UNIFORM, 0, n)[:, 0])
        x0 = np.asarray(x0, dtype=float).reshape(n, dim)
    else:
        x0 = np.asarray(x0, dtype=float)
        x0 = x0.reshape(len(x0), -1)
        n, dim = x0.shape
    if t == 0:
        return x0.copy()
    z = noise.normals(seed, noise.INIT_NORMAL + 16, 0, n, dim)
    return mu * x0 + w * z


def _initial(score, cfg: SamplerConfig, start, count):
    dim = getattr(score, "dim", 1)
    z = noise.normals(cfg.seed, noise.INIT_NORMAL, start, count, dim)
    if cfg.init == "standard_normal":
        return z
    base = getattr(score, "base", score)
    u = noise.uniforms(cfg.seed, noise.INIT_UNIFORM, start, count)[:, 0]
    y = base.sample(score.params.T, z, u)
    return np.asarray(y, dtype=float).reshape(count, dim)


def _grid(params: ScheduleParams, steps):
    delta = params.T / steps
    t = np.arange(steps) * delta
    g2 = np.array([sch.g(params, params.T - tk) ** 2 for tk in t])
    return delta, t, g2


def _run_chunk(step_fn, score, cfg, start, count, noisy=True):
    y = _initial(score, cfg, start, count)
    path = None
    if cfg.keep_paths:
        path = np.empty((cfg.steps + 1,) + y.shape)
        path[0] = y
    for k in range(cfg.steps):
        z = noise.normals(cfg.seed, k, start, count, y.shape[1]) if noisy else None
        y = step_fn(k, y, z)
        if not np.isfinite(y).all():
            raise DivergenceError(k)
        if path is not None:
            path[k + 1] = y
    return y, path


def _run(step_fn, score, cfg: SamplerConfig, noisy=True) -> TrajectoryBatch:
    chunks = [(s, min(cfg.chunk, cfg.batch - s)) for s in range(0, cfg.batch, cfg.chunk)]
    workers = cfg.workers or default_workers()
    if workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(workers) as ex:
            out = list(ex.map(lambda c: _run_chunk(step_fn, score, cfg, *c, noisy), chunks))
    else:
        out = [_run_chunk(step_fn, score, cfg, *c, noisy) for c in chunks]
    y = np.concatenate([o[0] for o in out])
    paths = np.concatenate([o[1] for o in out], axis=1) if cfg.keep_paths else None
    return TrajectoryBatch(y, paths, cfg)


def simulate_reverse_em(score: Callable, params: ScheduleParams, cfg: SamplerConfig, h: Optional[Callable] = None) -> TrajectoryBatch:
    """Euler-Maruyama for the generative SDE with ``h = alpha g``.

    ``score(t_gen, x)`` is the (perturbed) generative-clock score.  A custom
    ``h(t_gen)`` overrides the ``alpha`` form.
    """
    delta, t, g2 = _grid(params, cfg.steps)
    if h is None:
        h2 = cfg.alpha**2 * g2
    else:
        h2 = np.array([float(h(tk)) ** 2 for tk in t])
    sq = np.sqrt(h2 * delta)

    def step(k, y, z):
        s = score(t[k], y)
        drift = 0.5 * g2[k] * y + 0.5 * (g2[k] + h2[k]) * s
        if z is None:
            return y + drift * delta
        return y + drift * delta + sq[k] * z

    return _run(step, score, cfg, noisy=bool(np.any(h2 > 0)))


def ei_gamma(params: ScheduleParams, t_k, delta):
    """Growth factor ``exp(1/2 int g^2)`` over one generative step."""
    b0, b1, T = params.beta0, params.beta1, params.T
    return np.exp(delta * (2 * b0 + (2 * t_k - 2 * T + delta) * (b0 - b1)) / 4)


def simulate_reverse_ei(score: Callable, params: ScheduleParams, cfg: SamplerConfig) -> TrajectoryBatch:
    """Exponential integrator with the score frozen over each step.

    The linear part of the drift is integrated exactly, giving
    ``y' = gamma y + (1 + a^2)(gamma - 1) S + sqrt(a^2 (gamma^2 - 1)) Z``.
    """
    delta = params.T / cfg.steps
    t = np.arange(cfg.steps) * delta
    gam = ei_gamma(params, t, delta)
    a2 = cfg.alpha**2
    drift_c = (1 + a2) * (gam - 1)
    noise_c = np.sqrt(a2 * (gam * gam - 1))

    def step(k, y, z):
        s = score(t[k], y)
        out = gam[k] * y + drift_c[k] * s
        if z is not None:
            out = out + noise_c[k] * z
        return out

    return _run(step, score, cfg, noisy=a2 > 0)


def simulate(score, params, cfg: SamplerConfig) -> TrajectoryBatch:
    if cfg.scheme == "euler_maruyama":
        return simulate_reverse_em(score, params, cfg)
    return simulate_reverse_ei(score, params, cfg)


def write_samples_csv(path, samples):
    """One row per sample, header ``x0,x1,...``, 17 significant digits."""
    samples = np.asarray(samples, dtype=float)
    samples = samples.reshape(len(samples), -1)
    header = ",".join(f"x{i}" for i in range(samples.shape[1]))
    np.savetxt(path, samples, delimiter=",", header=header, comments="", fmt="%.17g")


def read_samples_csv(path):
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return data
