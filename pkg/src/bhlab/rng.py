"""Philox4x32-10 counter-based generator, compiled with numba.

A stream is the pair (seed, replicate): the 64-bit seed is the key and the
replicate index fills the upper half of the 128-bit counter, so streams never
overlap and can be generated in any order.
"""
import numba as nb
import numpy as np

MASK32 = np.uint64(0xFFFFFFFF)
_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = np.uint64(0x9E3779B9)
_W1 = np.uint64(0xBB67AE85)
_SHIFT32 = np.uint64(32)


@nb.njit(cache=True)
def philox4x32(c0, c1, c2, c3, k0, k1):
    """Ten Philox rounds on a 4x32 counter under a 2x32 key (all uint64 holding 32 bits)."""
    for r in range(10):
        if r > 0:
            k0 = (k0 + _W0) & MASK32
            k1 = (k1 + _W1) & MASK32
        p0 = _M0 * c0
        p1 = _M1 * c2
        hi0 = p0 >> _SHIFT32
        lo0 = p0 & MASK32
        hi1 = p1 >> _SHIFT32
        lo1 = p1 & MASK32
        c0, c1, c2, c3 = (hi1 ^ c1 ^ k0) & MASK32, lo1, (hi0 ^ c3 ^ k1) & MASK32, lo0
    return c0, c1, c2, c3


@nb.njit(cache=True)
def _to_unit(a, b):
    # 53 random bits mapped to the open interval (0, 1)
    x = (a >> np.uint64(5)) * np.uint64(67108864) + (b >> np.uint64(6))
    return (np.float64(x) + 0.5) * (1.0 / 9007199254740992.0)


@nb.njit(cache=True)
def stream_init(seed, replicate):
    """State layout: [k0, k1, rep_lo, rep_hi, block, cursor, w0, w1, w2, w3]."""
    st = np.zeros(10, dtype=np.uint64)
    s = np.uint64(seed)
    r = np.uint64(replicate)
    st[0] = s & MASK32
    st[1] = s >> _SHIFT32
    st[2] = r & MASK32
    st[3] = r >> _SHIFT32
    st[4] = np.uint64(0)
    st[5] = np.uint64(2)  # buffer empty
    return st


@nb.njit(cache=True)
def next_uniform(st):
    if st[5] >= np.uint64(2):
        blk = st[4]
        w0, w1, w2, w3 = philox4x32(blk & MASK32, blk >> _SHIFT32, st[2], st[3], st[0], st[1])
        st[6] = w0
        st[7] = w1
        st[8] = w2
        st[9] = w3
        st[4] = blk + np.uint64(1)
        st[5] = np.uint64(0)
    if st[5] == np.uint64(0):
        st[5] = np.uint64(1)
        return _to_unit(st[6], st[7])
    st[5] = np.uint64(2)
    return _to_unit(st[8], st[9])


@nb.njit(cache=True)
def next_pair(st):
    """Two uniforms from one fresh block (buffer is bypassed, not consumed)."""
    blk = st[4]
    w0, w1, w2, w3 = philox4x32(blk & MASK32, blk >> _SHIFT32, st[2], st[3], st[0], st[1])
    st[4] = blk + np.uint64(1)
    st[5] = np.uint64(2)
    return _to_unit(w0, w1), _to_unit(w2, w3)


def uniforms(seed: int, replicate: int, n: int) -> np.ndarray:
    """First n uniforms of stream (seed, replicate); convenience for tests."""
    return _uniforms(np.uint64(seed), np.uint64(replicate), n)


@nb.njit(cache=True)
def _uniforms(seed, replicate, n):
    st = stream_init(seed, replicate)
    out = np.empty(n)
    for i in range(n):
        out[i] = next_uniform(st)
    return out
