"""Counter-based random numbers (Philox4x32-10).

A random value is a pure function of ``(seed, replicate, stream, index)``:
the 64-bit seed is the Philox key and the remaining three coordinates form
the 128-bit counter.  Any schedule of replicates over workers therefore
reproduces the serial output exactly.

Gaussian variates use Box-Muller on one counter block: step ``k`` reads
block ``k // 2`` and takes the cosine branch for even ``k`` and the sine
branch for odd ``k``.
"""

import math

import numpy as np
from numba import njit

STREAM_NORMAL = 0
STREAM_BRIDGE = 1
STREAM_AUX = 2

_MASK = np.uint64(0xFFFFFFFF)
_S32 = np.uint64(32)
_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = np.uint64(0x9E3779B9)
_W1 = np.uint64(0xBB67AE85)
_TWO_PI = 2.0 * math.pi


@njit(cache=True)
def philox4x32(c0, c1, c2, c3, k0, k1):
    """Ten Philox rounds on 32-bit words held in uint64 values."""
    for r in range(10):
        p0 = _M0 * c0
        p1 = _M1 * c2
        n0 = (p1 >> _S32) ^ c1 ^ k0
        n1 = p1 & _MASK
        n2 = (p0 >> _S32) ^ c3 ^ k1
        n3 = p0 & _MASK
        c0, c1, c2, c3 = n0, n1, n2, n3
        k0 = (k0 + _W0) & _MASK
        k1 = (k1 + _W1) & _MASK
    return c0, c1, c2, c3


@njit(cache=True)
def _to_unit(wa, wb):
    """53-bit uniform in (0, 1) from two 32-bit words."""
    hi = np.float64(wa >> np.uint64(5))
    lo = np.float64(wb >> np.uint64(6))
    return (hi * 67108864.0 + lo + 0.5) * (1.0 / 9007199254740992.0)


@njit(cache=True)
def split_seed(seed):
    s = np.uint64(seed)
    return s & _MASK, (s >> _S32) & _MASK


@njit(cache=True)
def block(k0, k1, replicate, stream, index):
    """Two uniforms from counter block ``index``."""
    i = np.uint64(index)
    w0, w1, w2, w3 = philox4x32(
        i & _MASK, (i >> _S32) & _MASK, np.uint64(replicate), np.uint64(stream), k0, k1
    )
    return _to_unit(w0, w1), _to_unit(w2, w3)


@njit(cache=True)
def normal_pair(k0, k1, replicate, index):
    """Both Box-Muller outputs of block ``index`` of the Gaussian stream."""
    u1, u2 = block(k0, k1, replicate, STREAM_NORMAL, index)
    r = math.sqrt(-2.0 * math.log(u1))
    return r * math.cos(_TWO_PI * u2), r * math.sin(_TWO_PI * u2)


@njit(cache=True)
def _fill_normals(k0, k1, replicate, start, out):
    for i in range(out.shape[0]):
        k = start + i
        g0, g1 = normal_pair(k0, k1, replicate, k >> 1)
        out[i] = g0 if (k & 1) == 0 else g1


@njit(cache=True)
def _fill_uniforms(k0, k1, replicate, stream, start, out):
    for i in range(out.shape[0]):
        k = start + i
        u0, u1 = block(k0, k1, replicate, stream, k >> 1)
        out[i] = u0 if (k & 1) == 0 else u1


def _key(seed: int):
    seed = int(seed)
    if not 0 <= seed < 2**64:
        raise ValueError("seed must be an integer in [0, 2**64)")
    return np.uint64(seed & 0xFFFFFFFF), np.uint64(seed >> 32)


def normals(seed: int, replicate: int, start: int, count: int) -> np.ndarray:
    """Standard normals for steps ``start .. start + count - 1`` of one replicate."""
    k0, k1 = _key(seed)
    out = np.empty(count)
    _fill_normals(k0, k1, np.int64(replicate), np.int64(start), out)
    return out


def uniforms(seed: int, replicate: int, start: int, count: int, stream: int = STREAM_BRIDGE) -> np.ndarray:
    k0, k1 = _key(seed)
    out = np.empty(count)
    _fill_uniforms(k0, k1, np.int64(replicate), np.int64(stream), np.int64(start), out)
    return out


def raw_block(counter, key):
    """Philox4x32-10 on explicit 32-bit words (for known-answer checks)."""
    c = [np.uint64(v) for v in counter]
    k = [np.uint64(v) for v in key]
    return tuple(int(v) for v in philox4x32(c[0], c[1], c[2], c[3], k[0], k[1]))
