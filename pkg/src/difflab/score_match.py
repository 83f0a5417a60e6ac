"""Denoising score matching for a small ReLU network, with time weights.

The network maps ``[x, t / T]`` through two hidden ReLU layers of width 50
to a ``d``-vector.  Gradients are accumulated by hand for this fixed shape.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np

from . import noise
from . import schedule as sch
from .errors import ConfigError, TrainingDivergedError
from .schedule import ScheduleParams

WEIGHT_SCHEMES = ("default", "noise", "data")

_MAGIC = b"DLMP"
_VERSION = 1


def weight(scheme: str, params: ScheduleParams, t):
    """Loss weight ``omega_t``: ``varpi^2``, ``varpi^3`` or ``varpi^2 / (0.25 + varpi)``."""
    w = sch.varpi(params, t)
    if scheme == "default":
        return w * w
    if scheme == "noise":
        return w**3
    if scheme == "data":
        return w * w / (0.25 + w)
    raise ValueError(f"weight scheme must be one of {WEIGHT_SCHEMES}")


def dsm_target(params: ScheduleParams, x0, x_t, t):
    """Score of the forward kernel ``N(mu_t x0, varpi_t^2 I)`` at ``x_t``."""
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr <= 0):
        raise ValueError("dsm_target needs t > 0: the kernel is singular at t = 0")
    mu = np.asarray(sch.mean_scale(params, t_arr))
    w2 = np.asarray(sch.varpi(params, t_arr)) ** 2
    x0 = np.asarray(x0, dtype=float)
    x_t = np.asarray(x_t, dtype=float)
    if mu.ndim == 1 and x_t.ndim == 2:
        mu, w2 = mu[:, None], w2[:, None]
    return -(x_t - mu * x0) / w2


@dataclass
class MLP:
    """Weights ``W[i]`` of shape ``(in, out)`` and biases ``b[i]``."""

    W: List[np.ndarray]
    b: List[np.ndarray]
    T: float = 1.0

    @classmethod
    def init(cls, dim: int, seed: int, hidden=(50, 50), T: float = 1.0) -> "MLP":
        """He-uniform weights, zero biases."""
        rng = noise.rng(seed)
        sizes = [dim + 1, *hidden, dim]
        W, b = [], []
        for i, o in zip(sizes[:-1], sizes[1:]):
            lim = np.sqrt(6.0 / i)
            W.append(rng.uniform(-lim, lim, size=(i, o)))
            b.append(np.zeros(o))
        return cls(W, b, T)

    @property
    def dim(self) -> int:
        return self.W[-1].shape[1]

    def copy(self) -> "MLP":
        return MLP([w.copy() for w in self.W], [c.copy() for c in self.b], self.T)

    def _input(self, t, x):
        x = np.asarray(x, dtype=float).reshape(-1, self.dim)
        t = np.broadcast_to(np.asarray(t, dtype=float) / self.T, (len(x),))
        return np.column_stack([x, t])

    def forward(self, t, x):
        a = self._input(t, x)
        for i in range(len(self.W) - 1):
            a = np.maximum(a @ self.W[i] + self.b[i], 0.0)
        return a @ self.W[-1] + self.b[-1]

    def loss_and_grad(self, t, x, target, wts):
        """``mean(w * |f(t, x) - target|^2)`` and its parameter gradients."""
        acts = [self._input(t, x)]
        pre = []
        for i in range(len(self.W) - 1):
            z = acts[-1] @ self.W[i] + self.b[i]
            pre.append(z)
            acts.append(np.maximum(z, 0.0))
        out = acts[-1] @ self.W[-1] + self.b[-1]
        r = out - target
        n = len(r)
        loss = float(np.sum(wts[:, None] * r * r) / n)
        d = 2.0 * wts[:, None] * r / n
        gW = [None] * len(self.W)
        gb = [None] * len(self.b)
        for i in range(len(self.W) - 1, -1, -1):
            gW[i] = acts[i].T @ d
            gb[i] = d.sum(axis=0)
            if i > 0:
                d = (d @ self.W[i].T) * (pre[i - 1] > 0)
        return loss, gW, gb

    def save(self, path):
        """Write a 16-byte header then little-endian float64 arrays.

        Header: magic, version, and the four layer widths as uint16, then
        two pad bytes.  Each layer follows as its row-major weight matrix and
        then its bias.  The time scale ``T`` is not stored.
        """
        if len(self.W) != 3:
            raise ValueError("the file format covers two hidden layers only")
        sizes = [self.W[0].shape[0]] + [w.shape[1] for w in self.W]
        with open(path, "wb") as fh:
            fh.write(struct.pack("<4sH4HH", _MAGIC, _VERSION, *sizes, 0))
            for w, c in zip(self.W, self.b):
                fh.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
                fh.write(np.ascontiguousarray(c, dtype="<f8").tobytes())

    @classmethod
    def load(cls, path, T: float = 1.0) -> "MLP":
        with open(path, "rb") as fh:
            magic, ver, *sizes, _ = struct.unpack("<4sH4HH", fh.read(16))
            if magic != _MAGIC or ver != _VERSION:
                raise ValueError("not a model file of a supported version")
            W, b = [], []
            for i, o in zip(sizes[:-1], sizes[1:]):
                W.append(np.frombuffer(fh.read(8 * i * o), dtype="<f8").reshape(i, o).copy())
                b.append(np.frombuffer(fh.read(8 * o), dtype="<f8").copy())
            if fh.read(1):
                raise ValueError("trailing bytes after the last layer")
        return cls(W, b, T)


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 20000
    batch: int = 400
    lr: float = 0.01
    decay_every: int = 8000
    decay: float = 0.5
    t_min_frac: float = 0.01
    seed: int = 0
    optimizer: str = "adam"
    init_seed: Optional[int] = None

    def __post_init__(self):
        if self.steps < 1 or self.batch < 1:
            raise ConfigError("steps and batch must be >= 1")
        if not 0 < self.t_min_frac < 1:
            raise ConfigError("t_min_frac must lie in (0, 1)")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError("optimizer must be adam or sgd")


@dataclass(frozen=True)
class TrainedScore:
    """Immutable score model backed by a trained network (forward clock)."""

    net: MLP
    params: ScheduleParams

    @property
    def dim(self) -> int:
        return self.net.dim

    def score(self, t_fwd, x):
        x = np.asarray(x, dtype=float)
        out = self.net.forward(t_fwd, x)
        return out.reshape(x.shape)


@dataclass
class TrainResult:
    model: TrainedScore
    losses: np.ndarray = field(repr=False)


def train_dsm(data_sampler: Callable, params: ScheduleParams, scheme: str, cfg: TrainConfig, dim: int, net: Optional[MLP] = None) -> TrainResult:
    """Fit the network to the kernel score under weight ``scheme``.

    ``data_sampler(rng, n)`` returns ``n`` draws of ``p_0``.  Times are
    uniform on ``[t_min_frac * T, T]``.  ``net`` overrides the initial
    weights (seeded by ``init_seed``, else ``seed``).
    """
    if scheme not in WEIGHT_SCHEMES:
        raise ValueError(f"weight scheme must be one of {WEIGHT_SCHEMES}")
    T = params.T
    if net is None:
        net = MLP.init(dim, cfg.seed if cfg.init_seed is None else cfg.init_seed, T=T)
    net = net.copy()
    rng = noise.rng(cfg.seed, noise.INIT_WEIGHTS + 1)
    m = [np.zeros_like(p) for p in net.W + net.b]
    v = [np.zeros_like(p) for p in net.W + net.b]
    b1, b2, eps_adam = 0.9, 0.999, 1e-8
    losses = np.empty(cfg.steps)
    t_lo = cfg.t_min_frac * T
    for k in range(cfg.steps):
        x0 = np.asarray(data_sampler(rng, cfg.batch), dtype=float).reshape(cfg.batch, dim)
        t = rng.uniform(t_lo, T, size=cfg.batch)
        z = rng.standard_normal((cfg.batch, dim))
        mu = sch.mean_scale(params, t)[:, None]
        w = sch.varpi(params, t)[:, None]
        xt = mu * x0 + w * z
        target = -z / w
        wts = weight(scheme, params, t)
        loss, gW, gb = net.loss_and_grad(t, xt, target, wts)
        if not np.isfinite(loss):
            raise TrainingDivergedError(k)
        losses[k] = loss
        lr = cfg.lr * cfg.decay ** (k // cfg.decay_every)
        grads = gW + gb
        ps = net.W + net.b
        if cfg.optimizer == "sgd":
            for p, g in zip(ps, grads):
                p -= lr * g
            continue
        c1 = 1 - b1 ** (k + 1)
        c2 = 1 - b2 ** (k + 1)
        for j, (p, g) in enumerate(zip(ps, grads)):
            m[j] = b1 * m[j] + (1 - b1) * g
            v[j] = b2 * v[j] + (1 - b2) * g * g
            p -= lr * (m[j] / c1) / (np.sqrt(v[j] / c2) + eps_adam)
    return TrainResult(TrainedScore(net, params), losses)


def swiss_roll(rng, n, standardize=True):
    """``(s sin s, s cos s)`` with ``s ~ U(3pi/2, 9pi/2)``, optionally standardised."""
    s = rng.uniform(1.5 * np.pi, 4.5 * np.pi, size=n)
    x = np.column_stack([s * np.sin(s), s * np.cos(s)])
    if standardize:
        x = (x - SWISS_MEAN) / SWISS_STD
    return x


def _swiss_moments():
    # moments of the unstandardised roll by quadrature over s
    s = np.linspace(1.5 * np.pi, 4.5 * np.pi, 200001)
    pts = np.column_stack([s * np.sin(s), s * np.cos(s)])
    wq = np.full(len(s), 1.0)
    wq[0] = wq[-1] = 0.5
    wq /= wq.sum()
    mean = wq @ pts
    std = np.sqrt(wq @ (pts - mean) ** 2)
    return mean, std


SWISS_MEAN, SWISS_STD = _swiss_moments()


def dataset_sampler(name: str):
    """``(sampler, dim)`` for ``swissroll``, ``gmm1d`` or ``gmm2d``."""
    from .scores import gmm1d_two_mode, gmm2d_four_mode

    if name == "swissroll":
        return swiss_roll, 2
    if name in ("gmm1d", "gmm2d"):
        mix = gmm1d_two_mode() if name == "gmm1d" else gmm2d_four_mode()

        def sample(rng, n):
            return mix.sample(0.0, rng.standard_normal((n, mix.dim)), rng.uniform(size=n))

        return sample, mix.dim
    raise ValueError(f"unknown dataset {name!r}")


def relative_sml(model_a, model_b, params: ScheduleParams, t_grid, eval_x0, seed: int = 0):
    """Per-``t`` ratio of unweighted DSM losses, with shared noise across models.

    Entries whose denominator is below ``1e-12`` are NaN.
    """
    x0 = np.asarray(eval_x0, dtype=float)
    x0 = x0.reshape(len(x0), -1)
    n, d = x0.shape
    out = np.empty(len(t_grid))
    for j, t in enumerate(t_grid):
        z = noise.normals(seed, j, 0, n, d)
        mu = sch.mean_scale(params, float(t))
        w = sch.varpi(params, float(t))
        xt = mu * x0 + w * z
        target = -z / w
        la = np.mean(np.sum((model_a.score(float(t), xt) - target) ** 2, axis=1))
        lb = np.mean(np.sum((model_b.score(float(t), xt) - target) ** 2, axis=1))
        out[j] = la / lb if lb >= 1e-12 else np.nan
    return out
