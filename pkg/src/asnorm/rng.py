"""Counter-based random streams for deterministic per-pixel sampling.

Every pixel draws from its own stream keyed by ``(seed, row, col)``, so
results are bit-identical no matter how pixels are batched, chunked or
parallelised.  The generator is a vectorised splitmix64: cheap enough to
evaluate for every pixel of a frame at once, with no sequential state.
"""

from __future__ import annotations

import numpy as np

_U64 = np.uint64
_GOLDEN = _U64(0x9E3779B97F4A7C15)
_MIX1 = _U64(0xBF58476D1CE4E5B9)
_MIX2 = _U64(0x94D049BB133111EB)

# Domain-separation tags so different consumers of the same user seed do not
# share streams.
PIXEL_TAG = _U64(0x41534E5F50495845)
GLOBAL_TAG = _U64(0x41534E5F474C4F42)

_INV_2_53 = float(2.0 ** -53)


def _as_u64(x) -> np.ndarray:
    if isinstance(x, int):
        return np.uint64(x & 0xFFFFFFFFFFFFFFFF)
    arr = np.asarray(x)
    if arr.dtype == np.uint64:
        return arr
    if arr.dtype.kind in "iu":
        return arr.astype(np.int64, copy=False).view(np.uint64)
    raise TypeError(f"seed material must be integral, got {arr.dtype}")


def mix64(z) -> np.ndarray:
    """SplitMix64 finaliser, elementwise over uint64 input."""
    with np.errstate(over="ignore"):   # uint64 wraparound is the point
        z = _as_u64(z) + _GOLDEN
        z = (z ^ (z >> _U64(30))) * _MIX1
        z = (z ^ (z >> _U64(27))) * _MIX2
        return z ^ (z >> _U64(31))


def global_key(seed: int) -> np.ndarray:
    """Stream key for frame-global (pixel-independent) sampling."""
    return mix64(_as_u64(seed) ^ GLOBAL_TAG)


def pixel_seeds(seed: int, rows, cols) -> np.ndarray:
    """Per-pixel stream keys from the global seed and pixel coordinates.

    ``rows`` and ``cols`` broadcast; a full frame's keys come from passing
    a column vector of rows against a row vector of columns.
    """
    s = mix64(_as_u64(seed) ^ PIXEL_TAG)
    return mix64(mix64(s ^ _as_u64(rows)) ^ _as_u64(cols))


def stream_uniform(keys, count: int) -> np.ndarray:
    """``count`` float64 uniforms in [0, 1) for each stream key.

    Output has shape ``keys.shape + (count,)``.  Draw ``i`` of a given key is
    a pure function of ``(key, i)``, so a longer draw sequence extends a
    shorter one without changing its prefix.
    """
    keys = np.asarray(_as_u64(keys))
    ctr = mix64(np.arange(1, count + 1, dtype=np.uint64))
    bits = mix64(keys[..., None] ^ ctr) >> _U64(11)
    # uint64 -> float64 via int64 view: values are < 2**53, and the int64
    # conversion path is several times faster than the unsigned one.
    return bits.view(np.int64).astype(np.float64) * _INV_2_53


def uniform_index(u: np.ndarray, n) -> np.ndarray:
    """Map uniforms in [0, 1) to integer indices in [0, n)."""
    idx = (u * n).astype(np.int64)
    return np.minimum(idx, np.asarray(n, dtype=np.int64) - 1)


def draw_triples(keys, n, count: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Draw ``count`` index triples with distinct members per stream key.

    Each triple is uniform over ordered triples of distinct indices in
    ``[0, n)``: the second index is drawn from the ``n - 1`` values left by
    the first, the third from the remaining ``n - 2``, then both are shifted
    past the already-taken values.  ``n`` may be a scalar or an array
    broadcasting against ``keys``.

    Returns three arrays of shape ``keys.shape + (count,)``.
    """
    n = np.asarray(n, dtype=np.int64)
    if np.any(n < 3):
        raise ValueError("need at least 3 entries to draw distinct triples")
    u = stream_uniform(keys, 3 * count)
    nb = n[..., None] if n.ndim else n
    a = uniform_index(u[..., 0::3], nb)
    b = uniform_index(u[..., 1::3], nb - 1)
    b += b >= a
    c = uniform_index(u[..., 2::3], nb - 2)
    lo = np.minimum(a, b)
    hi = np.maximum(a, b)
    c += c >= lo
    c += c >= hi
    return a, b, c
