"""Training losses and their analytic gradients.

Depth is supervised by a logarithmic loss over a four-scale pyramid with
per-scale weights ``lambda ** (s - 3)``.  The printed form of that loss adds
the squared-mean term (variant ``paper_plus``); the canonical
scale-invariant form subtracts it (variant ``eigen_minus``).  Both ship;
``paper_plus`` is the default.

Normals recovered from depth are supervised by a cosine loss, predicted
normals by a guidance-weighted cosine loss.  Analytic gradients of the
recovered-normal loss flow through unprojection, cross products,
normalisations and the similarity weights; the triplet sample set and all
orientation signs are treated as frozen (same seed, same draws) during
differentiation.  A central finite-difference oracle cross-checks every
gradient.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import rng
from ._kernels import CROSS_EPS, _cross, _dot3, _norm3, build_frame, loss_and_grads
from .camera import DepthMap, Intrinsics, NormalMap, unproject
from .context import ContextMap, GuidanceMap, SampleSet
from .errors import (ConfigError, DomainError, GradientError, NoOverlapError,
                     UnrecoverablePixelError)

SILOG_VARIANTS = ("paper_plus", "eigen_minus")


@dataclass(frozen=True)
class LossConfig:
    """Loss hyperparameters: scale-balance factors and trade-off weights."""

    lambda_d: float = 0.8
    lambda_n: float = 0.8
    alpha: float = 5.0
    beta: float = 5.0
    silog_variant: str = "paper_plus"

    def __post_init__(self):
        for name in ("lambda_d", "lambda_n"):
            val = getattr(self, name)
            if not 0 < val <= 1:
                raise ConfigError(f"{name} must lie in (0, 1], got {val}")
        for name in ("alpha", "beta"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if self.silog_variant not in SILOG_VARIANTS:
            raise ConfigError(
                f"silog_variant must be one of {SILOG_VARIANTS}")


@dataclass
class ScaleStack:
    """Depth maps over pyramid scales 0..3 with strictly increasing indices."""

    maps: list
    scales: list

    def __post_init__(self):
        if len(self.maps) != len(self.scales):
            raise ConfigError("maps and scales must align")
        if any(s not in (0, 1, 2, 3) for s in self.scales):
            raise ConfigError("scale indices must lie in 0..3")
        if any(b <= a for a, b in zip(self.scales, self.scales[1:])):
            raise ConfigError("scale indices must be strictly increasing")


def _shared_mask(pred_valid, gt_valid):
    shared = pred_valid & gt_valid
    m = int(np.count_nonzero(shared))
    if m == 0:
        raise NoOverlapError("prediction and ground truth share no valid pixels")
    return shared, m


def _silog_residuals(pred: DepthMap, gt: DepthMap):
    if pred.shape != gt.shape:
        raise ConfigError(f"shape mismatch {pred.shape} vs {gt.shape}")
    shared, m = _shared_mask(pred.valid, gt.valid)
    p = pred.values[shared]
    g = gt.values[shared]
    if np.any(p <= 0) or np.any(g <= 0):
        raise DomainError("depth must be positive on the shared mask")
    return shared, m, p, np.log(p) - np.log(g)


def silog_loss(pred: DepthMap, gt: DepthMap, variant: str = "paper_plus") -> float:
    """Logarithmic depth loss: mean residual square +/- squared residual mean."""
    if variant not in SILOG_VARIANTS:
        raise ConfigError(f"variant must be one of {SILOG_VARIANTS}")
    _, _, _, e = _silog_residuals(pred, gt)
    sq = float(np.mean(e ** 2))
    mn = float(np.mean(e)) ** 2
    return sq + mn if variant == "paper_plus" else sq - mn


def grad_silog_wrt_depth(pred: DepthMap, gt: DepthMap,
                         variant: str = "paper_plus") -> np.ndarray:
    """Analytic d(loss)/d(pred) grid; zero at pixels outside the shared mask."""
    if variant not in SILOG_VARIANTS:
        raise ConfigError(f"variant must be one of {SILOG_VARIANTS}")
    shared, m, p, e = _silog_residuals(pred, gt)
    sign = 1.0 if variant == "paper_plus" else -1.0
    vals = ((2.0 / m) * e + sign * (2.0 / m ** 2) * np.sum(e)) / p
    grid = np.zeros(pred.shape, dtype=np.float64)
    grid[shared] = vals
    return grid


def multiscale_depth_loss(pred_stack: ScaleStack, gt_stack: ScaleStack,
                          cfg: LossConfig) -> float:
    """Sum of per-scale losses weighted by lambda_d ** (s - 3).

    As printed the weight is largest at the coarsest scale for lambda_d < 1.
    All four scales must be present.
    """
    if pred_stack.scales != [0, 1, 2, 3] or gt_stack.scales != [0, 1, 2, 3]:
        raise ConfigError("all four scales 0..3 are required")
    total = 0.0
    for s, pred, gt in zip(pred_stack.scales, pred_stack.maps, gt_stack.maps):
        total += cfg.lambda_d ** (s - 3) * silog_loss(pred, gt, cfg.silog_variant)
    return total


def asn_loss(recovered: NormalMap, gt: NormalMap) -> float:
    """Cosine dissimilarity (1/m) sum(1 - n_rec . n_gt) over shared valid pixels."""
    if recovered.shape != gt.shape:
        raise ConfigError(f"shape mismatch {recovered.shape} vs {gt.shape}")
    shared, m = _shared_mask(recovered.valid, gt.valid)
    dots = np.sum(recovered.normals[shared] * gt.normals[shared], axis=-1)
    return float(np.sum(1.0 - dots)) / m


def weighted_normal_loss(pred: NormalMap, gt: NormalMap, gm: GuidanceMap | None,
                         sampled: SampleSet | None, cfg: LossConfig, scale: int,
                         apply_weights_globally: bool = False) -> float:
    """Guidance-weighted cosine loss lambda_n**(s-3) * (1/m) sum (1+w)(1 - dot).

    ``w`` is the guidance weight at sampled pixels and 0 elsewhere; with
    ``apply_weights_globally`` it applies at every pixel.  Passing no
    guidance map makes ``w`` identically zero.
    """
    if pred.shape != gt.shape:
        raise ConfigError(f"shape mismatch {pred.shape} vs {gt.shape}")
    if scale not in (0, 1, 2, 3):
        raise ConfigError("scale must lie in 0..3")
    shared, m = _shared_mask(pred.valid, gt.valid)
    w = np.zeros(pred.shape, dtype=np.float64)
    if gm is not None:
        if gm.shape != pred.shape:
            raise ConfigError("guidance map shape mismatch")
        if apply_weights_globally:
            w = gm.weights
        elif sampled is not None:
            sel = sampled.mask(*pred.shape)
            w = np.where(sel, gm.weights, 0.0)
    dots = np.sum(pred.normals[shared] * gt.normals[shared], axis=-1)
    core = float(np.sum((1.0 + w[shared]) * (1.0 - dots))) / m
    return cfg.lambda_n ** (scale - 3) * core


def total_loss(ld: float, lasn: float, ln: float, cfg: LossConfig) -> float:
    """Combined objective ld + alpha * lasn + beta * ln."""
    parts = np.array([ld, lasn, ln], dtype=np.float64)
    if not np.all(np.isfinite(parts)):
        raise ConfigError("loss terms must be finite")
    return float(ld + cfg.alpha * lasn + cfg.beta * ln)


def virtual_normal_loss(pred: DepthMap, gt: DepthMap, k: Intrinsics,
                        m_triplets: int, seed: int,
                        min_area: float = 1e-6) -> float:
    """Global triplet-normal consistency between two depth maps.

    Pixel triples are drawn from the shared valid mask; triples degenerate in
    either unprojection (projected area below ``min_area`` or cross-product
    norm at or below 1e-12) are skipped with the same 3x resample budget as
    the local sampler.  Both normals of a triple use the same vertex order,
    so no camera orientation is involved and the loss is invariant to uniform
    rescaling of either map.
    """
    if m_triplets < 1:
        raise ConfigError("m_triplets must be >= 1")
    if pred.shape != gt.shape:
        raise ConfigError(f"shape mismatch {pred.shape} vs {gt.shape}")
    shared = pred.valid & gt.valid
    pool = np.flatnonzero(shared.ravel())
    if pool.size < 3:
        raise NoOverlapError("need at least 3 shared valid pixels")

    key = rng.global_key(seed)
    a, b, c = rng.draw_triples(key, pool.size, 3 * m_triplets)
    ia, ib, ic = pool[a], pool[b], pool[c]

    w = pred.width
    pix = np.stack([np.arange(w * pred.height) % w,
                    np.arange(w * pred.height) // w], axis=1).astype(np.float64)
    qa, qb, qc = pix[ia], pix[ib], pix[ic]
    area = 0.5 * np.abs((qb[:, 0] - qa[:, 0]) * (qc[:, 1] - qa[:, 1])
                        - (qb[:, 1] - qa[:, 1]) * (qc[:, 0] - qa[:, 0]))

    pp = unproject(pred, k).points.reshape(-1, 3)
    gp = unproject(gt, k).points.reshape(-1, 3)
    cr_p = _cross(pp[ib] - pp[ia], pp[ic] - pp[ia])
    cr_g = _cross(gp[ib] - gp[ia], gp[ic] - gp[ia])
    n_p = _norm3(cr_p)
    n_g = _norm3(cr_g)
    usable = (area >= min_area) & (n_p > CROSS_EPS) & (n_g > CROSS_EPS)
    keep = np.flatnonzero(usable)[:m_triplets]
    if keep.size == 0:
        raise UnrecoverablePixelError("no usable global triplet")
    dots = _dot3(cr_p[keep] / n_p[keep, None], cr_g[keep] / n_g[keep, None])
    return float(np.mean(1.0 - dots))


def _asn_loss_and_grads(depth: DepthMap, gt_normals: NormalMap, k: Intrinsics,
                        ctx: ContextMap | None, cfg,
                        want_depth: bool, want_context: bool):
    if gt_normals.shape != depth.shape:
        raise ConfigError("ground-truth normal map shape mismatch")
    if want_context and ctx is None:
        raise ConfigError("context gradient needs a context map")
    if ctx is not None and ctx.shape != depth.shape:
        raise ConfigError("context map shape mismatch")
    pm = unproject(depth, k)
    feats = None if ctx is None else ctx.features
    frame = build_frame(pm, k, feats, cfg.r)
    loss, g_depth, g_ctx, m = loss_and_grads(
        frame, gt_normals.normals.reshape(-1, 3), gt_normals.valid.ravel(),
        cfg.k, cfg.min_area, cfg.seed,
        want_depth=want_depth, want_context=want_context)
    h, w = depth.shape
    if g_depth is not None:
        g_depth = g_depth.reshape(h, w)
    if g_ctx is not None:
        g_ctx = g_ctx.reshape(h, w, -1)
    return loss, g_depth, g_ctx, m


def asn_loss_from_depth(depth: DepthMap, gt_normals: NormalMap, k: Intrinsics,
                        ctx: ContextMap | None, cfg) -> float:
    """Cosine loss of the adaptively recovered normals against ground truth."""
    loss, _, _, m = _asn_loss_and_grads(depth, gt_normals, k, ctx, cfg,
                                        want_depth=False, want_context=False)
    if m == 0:
        raise NoOverlapError("no pixel recovered a normal under the gt mask")
    return loss


def grad_asn_wrt_depth(depth: DepthMap, gt_normals: NormalMap, k: Intrinsics,
                       ctx: ContextMap | None, cfg) -> np.ndarray:
    """Analytic gradient of :func:`asn_loss_from_depth` w.r.t. every depth value.

    Triplet draws are frozen by the seed; area and similarity weights are
    constants w.r.t. depth.  Pixels contributing to no sampled patch get a
    zero gradient.
    """
    _, g_depth, _, m = _asn_loss_and_grads(depth, gt_normals, k, ctx, cfg,
                                           want_depth=True, want_context=False)
    if m == 0:
        raise NoOverlapError("no pixel recovered a normal under the gt mask")
    if not np.all(np.isfinite(g_depth)):
        raise GradientError("depth gradient is non-finite")
    return g_depth


def grad_asn_wrt_context(depth: DepthMap, gt_normals: NormalMap, k: Intrinsics,
                         ctx: ContextMap, cfg) -> np.ndarray:
    """Analytic gradient of :func:`asn_loss_from_depth` w.r.t. context features.

    Candidate normals and areas are constants w.r.t. context; the chain runs
    through the similarity kernel, its patch normalisation and the
    confidence product.  Exactly coincident features use subgradient zero.
    """
    _, _, g_ctx, m = _asn_loss_and_grads(depth, gt_normals, k, ctx, cfg,
                                         want_depth=False, want_context=True)
    if m == 0:
        raise NoOverlapError("no pixel recovered a normal under the gt mask")
    if not np.all(np.isfinite(g_ctx)):
        raise GradientError("context gradient is non-finite")
    return g_ctx


def finite_difference_oracle(loss_fn, grid, h) -> np.ndarray:
    """Central-difference gradient of ``loss_fn`` over every entry of ``grid``.

    ``h`` may be a scalar step or an array of per-entry steps.  The loss
    function must be deterministic (hold its seeds fixed); a non-finite loss
    raises.
    """
    base = np.asarray(grid, dtype=np.float64)
    steps = np.broadcast_to(np.asarray(h, dtype=np.float64), base.shape)
    if np.any(steps <= 0):
        raise ConfigError("finite-difference step must be positive")
    out = np.empty_like(base)
    flat = base.ravel()
    step_flat = steps.ravel()
    out_flat = out.ravel()
    work = flat.copy()
    for i in range(flat.size):
        x = flat[i]
        dx = step_flat[i]
        work[i] = x + dx
        hi = loss_fn(work.reshape(base.shape))
        work[i] = x - dx
        lo = loss_fn(work.reshape(base.shape))
        work[i] = x
        if not (np.isfinite(hi) and np.isfinite(lo)):
            raise GradientError(f"loss non-finite at probe entry {i}")
        out_flat[i] = (hi - lo) / (2.0 * dx)
    return out
