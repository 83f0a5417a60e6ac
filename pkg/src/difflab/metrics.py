"""Binned divergences and Wasserstein distances between sample sets."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import stats

from . import noise


@dataclass(frozen=True)
class Histogram:
    """Per-axis bin edges plus counts; ``pmf`` sums to 1."""

    edges: tuple
    counts: np.ndarray

    @property
    def pmf(self) -> np.ndarray:
        return self.counts / self.counts.sum()


def histogram_edges(reference, bins: int = 100) -> tuple:
    """Edges over ``[min - 5% span, max + 5% span]`` of ``reference``, per axis."""
    ref = np.asarray(reference, dtype=float)
    ref = ref.reshape(len(ref), -1)
    out = []
    for k in range(ref.shape[1]):
        lo, hi = ref[:, k].min(), ref[:, k].max()
        pad = 0.05 * (hi - lo) if hi > lo else 0.5
        out.append(np.linspace(lo - pad, hi + pad, bins + 1))
    return tuple(out)


def histogram(samples, edges: Sequence[np.ndarray]) -> Histogram:
    """Counts on fixed edges; samples outside the range go to the outer bins."""
    x = np.asarray(samples, dtype=float)
    x = x.reshape(len(x), -1)
    if x.shape[1] != len(edges):
        raise ValueError("sample dimension does not match the number of edge arrays")
    idx = []
    for k, e in enumerate(edges):
        i = np.searchsorted(e, x[:, k], side="right") - 1
        idx.append(np.clip(i, 0, len(e) - 2))
    shape = tuple(len(e) - 1 for e in edges)
    flat = np.ravel_multi_index(idx, shape)
    counts = np.bincount(flat, minlength=int(np.prod(shape))).reshape(shape).astype(float)
    return Histogram(tuple(edges), counts)


def _reference_pmf(samples_p, edges, p_bins: Optional[np.ndarray]):
    if p_bins is not None:
        p = np.asarray(p_bins, dtype=float)
        return p / p.sum()
    return histogram(samples_p, edges).pmf


def hist_kl(samples_p, samples_q, edges=None, bins: int = 100, p_bins: Optional[np.ndarray] = None) -> float:
    """``sum p log(p / q)`` over bins with ``p > 0``.

    An empty ``q`` bin under positive ``p`` is given half a count, so ``q``
    never vanishes where it is needed and identical inputs give exactly 0.
    Pass ``p_bins`` (exact bin masses of the reference law) to replace the
    reference histogram.
    """
    if edges is None:
        edges = histogram_edges(samples_p, bins)
    p = _reference_pmf(samples_p, edges, p_bins)
    cq = histogram(samples_q, edges).counts
    cq = np.where((cq == 0) & (p > 0), 0.5, cq)
    q = cq / cq.sum()
    m = p > 0
    return float(max(0.0, np.sum(p[m] * np.log(p[m] / q[m]))))


def hist_js(samples_p, samples_q, edges=None, bins: int = 100, p_bins: Optional[np.ndarray] = None) -> float:
    """Jensen-Shannon divergence of the two histograms (natural log, <= ln 2)."""
    if edges is None:
        edges = histogram_edges(samples_p, bins)
    p = _reference_pmf(samples_p, edges, p_bins)
    q = histogram(samples_q, edges).pmf
    mid = 0.5 * (p + q)

    def part(a):
        m = a > 0
        return np.sum(a[m] * np.log(a[m] / mid[m]))

    return float(min(np.log(2.0), max(0.0, 0.5 * part(p) + 0.5 * part(q))))


def w1_1d(a, b) -> float:
    """Exact ``W_1`` between two empirical 1D laws.

    Equal sizes reduce to the mean gap of sorted samples; otherwise both
    quantile functions are stepped over the union of their jump levels.
    """
    a = np.sort(np.asarray(a, dtype=float).ravel())
    b = np.sort(np.asarray(b, dtype=float).ravel())
    if a.size == 0 or b.size == 0:
        raise ValueError("empty sample")
    if a.size == b.size:
        return float(np.mean(np.abs(a - b)))
    levels = np.union1d(np.arange(1, a.size + 1) / a.size, np.arange(1, b.size + 1) / b.size)
    widths = np.diff(np.concatenate([[0.0], levels]))
    # quantile on (levels[j-1], levels[j]] is the sample with rank ceil(level * n)
    ia = np.minimum(np.ceil(levels * a.size - 1e-9).astype(int) - 1, a.size - 1)
    ib = np.minimum(np.ceil(levels * b.size - 1e-9).astype(int) - 1, b.size - 1)
    return float(np.sum(widths * np.abs(a[ia] - b[ib])))


def projection_directions(n_proj: int, seed: int) -> np.ndarray:
    """Fixed unit vectors in the plane, deterministic given ``seed``."""
    theta = 2 * np.pi * noise.uniforms(seed, noise.INIT_WEIGHTS + 7, 0, n_proj)[:, 0]
    return np.stack([np.cos(theta), np.sin(theta)], axis=1)


def w1_sliced_2d(a, b, n_proj: int = 64, seed: int = 0) -> float:
    """Average 1D ``W_1`` over ``n_proj`` random projection directions."""
    if n_proj < 32:
        raise ValueError("n_proj must be >= 32")
    a = np.asarray(a, dtype=float).reshape(-1, 2)
    b = np.asarray(b, dtype=float).reshape(-1, 2)
    u = projection_directions(n_proj, seed)
    pa = a @ u.T
    pb = b @ u.T
    return float(np.mean([w1_1d(pa[:, k], pb[:, k]) for k in range(n_proj)]))


def spearman(x, y) -> float:
    return float(stats.spearmanr(x, y).statistic)


def exact_bin_masses(cdf: Callable, edges) -> np.ndarray:
    """Masses of a 1D law on the histogram bins, from its CDF."""
    return np.diff(cdf(np.asarray(edges, dtype=float)))


def compare(samples_p, samples_q, bins: int = 100, n_proj: int = 64, seed: int = 0) -> dict:
    """``kl``, ``js``, ``w1`` and, in 2D, the same per marginal."""
    p = np.asarray(samples_p, dtype=float)
    q = np.asarray(samples_q, dtype=float)
    p = p.reshape(len(p), -1)
    q = q.reshape(len(q), -1)
    out = {}
    if p.shape[1] == 1:
        out["kl"] = hist_kl(p, q, bins=bins)
        out["js"] = hist_js(p, q, bins=bins)
        out["w1"] = w1_1d(p, q)
        return out
    out["kl"] = hist_kl(p, q, bins=bins)
    out["js"] = hist_js(p, q, bins=bins)
    out["w1"] = w1_sliced_2d(p, q, n_proj, seed)
    for k in range(p.shape[1]):
        out[f"kl_x{k}"] = hist_kl(p[:, k], q[:, k], bins=bins)
        out[f"js_x{k}"] = hist_js(p[:, k], q[:, k], bins=bins)
        out[f"w1_x{k}"] = w1_1d(p[:, k], q[:, k])
    return out
