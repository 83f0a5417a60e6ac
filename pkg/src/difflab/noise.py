"""Counter-based Gaussian and uniform noise.

Every variate is a pure function of ``(seed, stream, trajectory)``: the
Philox key is ``(seed, stream)`` and trajectory ``i`` owns a fixed block of
counters.  A batch can therefore be split across workers in any way and
still see the same numbers.
"""

import numpy as np
from scipy.special import ndtri

# each counter value yields four 64-bit words
_WORDS = 4
_MASK64 = (1 << 64) - 1

# streams >= 2**63 are reserved for things that are not time steps
INIT_NORMAL = 1 << 63
INIT_UNIFORM = INIT_NORMAL + 1
INIT_WEIGHTS = INIT_NORMAL + 2


def _key(seed, stream):
    # an explicit uint64 array: a python list is cast through float64, which
    # would merge streams near 2**63
    return np.array([seed & _MASK64, stream & _MASK64], dtype=np.uint64)


def _words(seed, stream, first, n):
    """Words ``first .. first+n-1`` of the ``(seed, stream)`` sequence."""
    c0 = first // _WORDS
    skip = first - c0 * _WORDS
    bg = np.random.Philox(key=_key(seed, stream), counter=[c0, 0, 0, 0])
    n_raw = -(-(skip + n) // _WORDS) * _WORDS
    return bg.random_raw(n_raw)[skip : skip + n]


def _to_unit(raw):
    # 53 random bits onto [0, 1)
    return (raw >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)


def uniforms(seed, stream, start, count, dim=1):
    """Uniforms in ``[0, 1)`` of shape ``(count, dim)`` for trajectories ``start ..``.

    Flat index ``i * dim + k`` owns word ``i * dim + k``.
    """
    return _to_unit(_words(seed, stream, start * dim, count * dim)).reshape(count, dim)


def normals(seed, stream, start, count, dim=1):
    """Standard normals of shape ``(count, dim)`` by inverse-CDF transform.

    Flat index ``i * dim + k`` owns one word, mapped to the open interval
    ``(0, 1)`` before the Gaussian quantile is applied.
    """
    raw = _words(seed, stream, start * dim, count * dim)
    u = ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * (1.0 / 9007199254740992.0)
    return ndtri(u).reshape(count, dim)


def rng(seed, stream=INIT_WEIGHTS):
    """Ordinary sequential generator for work with no trajectory structure."""
    return np.random.Generator(np.random.Philox(key=_key(seed, stream)))
