"""Geometric-context features: similarity weighting, guidance maps, sampling.

A context map is a per-pixel latent feature grid.  Feature similarity gates
the confidence of sampled triplets (``similarity`` / ``triplet_confidence``);
derivative magnitudes of its channel-absolute intensity highlight pixels
with strong geometric variation and drive top-fraction sampling for loss
weighting.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .camera import DepthMap, Intrinsics, NormalMap
from .errors import ConfigError, GradientError

__all__ = [
    "ContextMap", "GuidanceMap", "SampleSet", "similarity",
    "normalized_similarities", "triplet_confidence", "intensity_map",
    "guidance_weights", "top_v_sample", "fit_context_demo", "ContextFit",
]


class ContextMap:
    """Per-pixel C-channel feature grid; all entries finite."""

    def __init__(self, features):
        arr = np.asarray(features, dtype=np.float64)
        if arr.ndim == 2:
            arr = arr[..., None]
        if arr.ndim != 3 or arr.shape[-1] < 1:
            raise ConfigError(
                f"context features must be (H, W, C) with C >= 1, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ConfigError("context features must be finite")
        self.features = arr

    @classmethod
    def zeros(cls, height: int, width: int, channels: int = 3) -> "ContextMap":
        return cls(np.zeros((height, width, channels), dtype=np.float64))

    @property
    def height(self) -> int:
        return self.features.shape[0]

    @property
    def width(self) -> int:
        return self.features.shape[1]

    @property
    def channels(self) -> int:
        return self.features.shape[2]

    @property
    def shape(self) -> tuple[int, int]:
        return self.features.shape[:2]


class GuidanceMap:
    """Per-pixel non-negative sampling weights."""

    def __init__(self, weights, valid=None):
        self.weights = np.asarray(weights, dtype=np.float64)
        if self.weights.ndim != 2:
            raise ConfigError(f"guidance weights must be 2D, got {self.weights.shape}")
        if not np.all(np.isfinite(self.weights)) or np.any(self.weights < 0):
            raise ConfigError("guidance weights must be finite and non-negative")
        if valid is None:
            self.valid = np.ones(self.weights.shape, dtype=bool)
        else:
            self.valid = np.asarray(valid, dtype=bool)
            if self.valid.shape != self.weights.shape:
                raise ConfigError("guidance valid mask shape mismatch")

    @property
    def shape(self) -> tuple[int, int]:
        return self.weights.shape


@dataclass
class SampleSet:
    """Pixels chosen by top-fraction sampling, plus the target count."""

    pixels: np.ndarray    # (v, 2) int (u, v), unique
    v: int

    def mask(self, height: int, width: int) -> np.ndarray:
        m = np.zeros((height, width), dtype=bool)
        if self.pixels.size:
            m[self.pixels[:, 1], self.pixels[:, 0]] = True
        return m


def similarity(fi, fj) -> float:
    """Feature similarity exp(-0.5 * ||fi - fj||_2), in (0, 1]."""
    fi = np.asarray(fi, dtype=np.float64)
    fj = np.asarray(fj, dtype=np.float64)
    if fi.shape != fj.shape:
        raise ConfigError("feature vectors must share a channel count")
    return float(np.exp(-0.5 * np.sqrt(np.sum((fi - fj) ** 2))))


def normalized_similarities(ctx: ContextMap, center, patch_pixels) -> np.ndarray:
    """Similarities of patch pixels to the center, normalised to sum to 1."""
    patch_pixels = np.asarray(patch_pixels, dtype=np.int64)
    if patch_pixels.ndim != 2 or patch_pixels.shape[0] < 1:
        raise ConfigError("patch_pixels must be a non-empty (n, 2) array")
    fc = ctx.features[int(center[1]), int(center[0])]
    fe = ctx.features[patch_pixels[:, 1], patch_pixels[:, 0]]
    d = np.sqrt(np.sum((fc[None, :] - fe) ** 2, axis=-1))
    sim = np.exp(-0.5 * d)
    return sim / np.sum(sim)


def triplet_confidence(lbar, triple) -> float:
    """Product of the three normalised similarities of a triple's members."""
    lbar = np.asarray(lbar, dtype=np.float64)
    a, b, c = (int(t) for t in triple)
    return float((lbar[a] * lbar[b]) * lbar[c])


def intensity_map(ctx: ContextMap) -> np.ndarray:
    """Channelwise absolute sum of the context features, shape (H, W)."""
    return np.sum(np.abs(ctx.features), axis=-1)


def _first_derivative(grid: np.ndarray, axis: int) -> np.ndarray:
    # central differences inside, one-sided at the borders (np.gradient's rule)
    return np.gradient(grid, axis=axis)


def _second_derivative(grid: np.ndarray, axis: int) -> np.ndarray:
    g = np.moveaxis(grid, axis, 0)
    out = np.empty_like(g)
    out[1:-1] = g[2:] - 2.0 * g[1:-1] + g[:-2]
    # shifted 3-point stencil at the borders
    out[0] = g[2] - 2.0 * g[1] + g[0]
    out[-1] = g[-1] - 2.0 * g[-2] + g[-3]
    return np.moveaxis(out, 0, axis)


def guidance_weights(intensity: np.ndarray, order: str = "first") -> GuidanceMap:
    """Derivative-magnitude guidance from an intensity grid, normalised to [0, 1].

    ``order="first"`` uses central differences (one-sided at borders);
    ``order="second"`` the 3-point second-difference stencil (shifted at
    borders).  A constant image maps to all-zero weights.
    """
    grid = np.asarray(intensity, dtype=np.float64)
    if grid.ndim != 2 or min(grid.shape) < 3:
        raise ConfigError("intensity grid must be 2D with width, height >= 3")
    if order in ("first", "1", 1):
        gx = _first_derivative(grid, axis=1)
        gy = _first_derivative(grid, axis=0)
    elif order in ("second", "2", 2):
        gx = _second_derivative(grid, axis=1)
        gy = _second_derivative(grid, axis=0)
    else:
        raise ConfigError(f"order must be 'first' or 'second', got {order!r}")
    mag = np.sqrt(gx ** 2 + gy ** 2)
    peak = mag.max()
    if peak > 0:
        mag = mag / peak
    return GuidanceMap(mag)


def top_v_sample(gm: GuidanceMap, ratio: float) -> SampleSet:
    """The ``round(ratio * valid_count)`` largest-weight pixels.

    Ties break toward smaller row-major index, which makes the selection a
    superset-monotone function of ``ratio``.
    """
    if not 0 < ratio <= 1:
        raise ConfigError(f"ratio must lie in (0, 1], got {ratio}")
    h, w = gm.shape
    flat_idx = np.flatnonzero(gm.valid.ravel())
    weights = gm.weights.ravel()[flat_idx]
    v = int(np.floor(ratio * flat_idx.size + 0.5))
    v = min(v, flat_idx.size)
    order = np.lexsort((flat_idx, -weights))[:v]
    chosen = np.sort(flat_idx[order])
    pixels = np.stack([chosen % w, chosen // w], axis=1)
    return SampleSet(pixels=pixels, v=v)


@dataclass
class ContextFit:
    """Outcome of the context-learning demo."""

    context: ContextMap
    loss_trace: np.ndarray     # (steps + 1,) loss before each update, then final
    kick_applied: bool


def fit_context_demo(depth_gt: DepthMap, normals_gt: NormalMap, k: Intrinsics,
                     cfg, steps: int, lr: float, channels: int = 3,
                     kick_scale: float = 1e-4) -> ContextFit:
    """Optimise a free context map by gradient descent on the recovered-normal loss.

    The map starts at zeros, so the first trace entry equals the
    uniform-context baseline.  The all-equal start sits on a non-smooth
    ridge of the loss where every pairwise feature distance is zero and the
    subgradient convention yields an exactly zero gradient; when that
    happens a tiny seeded perturbation is applied once so descent can leave
    the ridge.
    """
    from .losses import _asn_loss_and_grads   # local import avoids a module cycle

    if steps < 0:
        raise ConfigError("steps must be >= 0")
    ctx = ContextMap.zeros(depth_gt.height, depth_gt.width, channels)
    if steps == 0:
        return ContextFit(context=ctx, loss_trace=np.empty(0), kick_applied=False)

    feats = ctx.features.copy()
    trace = []
    kicked = False
    for _ in range(steps):
        loss, _, grad, _ = _asn_loss_and_grads(
            depth_gt, normals_gt, k, ContextMap(feats), cfg,
            want_depth=False, want_context=True)
        if loss is None:
            raise GradientError("no valid pixels overlap; cannot fit context")
        if not np.all(np.isfinite(grad)):
            raise GradientError("context gradient is non-finite")
        trace.append(loss)
        if not kicked and not np.any(grad):
            nudge = np.random.default_rng(cfg.seed).standard_normal(feats.shape)
            feats = feats + kick_scale * nudge
            kicked = True
            continue
        feats = feats - lr * grad
    final_loss, _, _, _ = _asn_loss_and_grads(
        depth_gt, normals_gt, k, ContextMap(feats), cfg,
        want_depth=False, want_context=False)
    trace.append(final_loss)
    return ContextFit(context=ContextMap(feats), loss_trace=np.array(trace),
                      kick_applied=kicked)
