"""Surface-normal recovery from depth: four estimators plus the sampler.

The adaptive estimator samples point triplets in a local patch, weighs each
triplet's plane normal by its projected image area and by the similarity of
the sampled pixels' context features to the center pixel, and renormalises
the weighted sum to unit length.  Baselines: a two-tap derivative operator,
a total-least-squares plane fit, and the unweighted triplet average.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np

from . import rng
from ._kernels import (CROSS_EPS, WEIGHT_EPS, asn_block, build_frame,
                       run_normal_map)
from .camera import (DepthMap, Intrinsics, NormalMap, PointMap,
                     extract_patch, orient_to_camera, unproject)
from .context import ContextMap, normalized_similarities
from .errors import (ConfigError, DegeneratePatchError, DegenerateTripletError,
                     InsufficientSupportError, UnrecoverablePixelError,
                     ZeroMeanError, ZeroWeightError)

METHODS = ("asn", "sobel", "lsq", "average")


@dataclass(frozen=True)
class AsnConfig:
    """Sampling configuration: patch size, triplet count, degeneracy floor, seed."""

    r: int = 5
    k: int = 40
    min_area: float = 1e-6
    seed: int = 42

    def __post_init__(self):
        if self.r < 3 or self.r % 2 == 0:
            raise ConfigError(f"patch size r must be odd and >= 3, got {self.r}")
        if self.k < 1:
            raise ConfigError(f"triplet count k must be >= 1, got {self.k}")
        if not self.min_area > 0:
            raise ConfigError(f"min_area must be positive, got {self.min_area}")


@dataclass
class TripletSet:
    """K index triples into a patch-entry list, for one center pixel."""

    center: tuple[int, int]
    triplets: np.ndarray      # (K, 3) int
    k: int


@dataclass
class WeightedCandidate:
    """One sampled triplet: oriented unit normal, projected area, confidence."""

    normal: np.ndarray
    area: float
    confidence: float


def sample_triplets(patch_size: int, k: int, center_pixel: tuple[int, int],
                    seed: int) -> TripletSet:
    """Draw ``k`` triples of distinct indices into a patch of ``patch_size`` entries.

    The stream is keyed by ``(seed, row, col)`` of the center pixel, so the
    same arguments always reproduce the same triples and different pixels get
    independent streams.
    """
    if patch_size < 3:
        raise DegeneratePatchError(
            f"patch with {patch_size} entries cannot form a triplet")
    key = rng.pixel_seeds(seed, int(center_pixel[1]), int(center_pixel[0]))
    a, b, c = rng.draw_triples(key, patch_size, k)
    return TripletSet(center=(int(center_pixel[0]), int(center_pixel[1])),
                      triplets=np.stack([a, b, c], axis=-1).reshape(k, 3),
                      k=k)


def enumerate_patch_triplets(patch_size: int) -> np.ndarray:
    """All index triples of a patch in lexicographic order, shape (C(n,3), 3)."""
    if patch_size < 3:
        raise DegeneratePatchError(
            f"patch with {patch_size} entries cannot form a triplet")
    return np.array(list(combinations(range(patch_size), 3)), dtype=np.int64)


def triplet_normal(pa, pb, pc, center) -> np.ndarray:
    """Unit plane normal of three points, oriented toward the camera at ``center``."""
    pa = np.asarray(pa, dtype=np.float64)
    pb = np.asarray(pb, dtype=np.float64)
    pc = np.asarray(pc, dtype=np.float64)
    cr = np.cross(pb - pa, pc - pa)
    nrm = np.sqrt(cr[0] ** 2 + cr[1] ** 2 + cr[2] ** 2)
    if nrm <= CROSS_EPS:
        raise DegenerateTripletError("triplet points are colinear")
    return orient_to_camera(cr / nrm, center)


def projected_area(qa, qb, qc) -> float:
    """Triangle area in pixels^2 from three 2D pixel coordinates."""
    qa = np.asarray(qa, dtype=np.float64)
    qb = np.asarray(qb, dtype=np.float64)
    qc = np.asarray(qc, dtype=np.float64)
    return 0.5 * abs((qb[0] - qa[0]) * (qc[1] - qa[1])
                     - (qb[1] - qa[1]) * (qc[0] - qa[0]))


def _patch_block(pm: PointMap, ctx: ContextMap | None, center, cfg: AsnConfig,
                 triplets, combine: str):
    """Single-pixel kernel invocation shared by the scalar estimators."""
    pixels, points = extract_patch(pm, center, cfg.r)
    n = pixels.shape[0]
    if n < 3:
        raise UnrecoverablePixelError(
            f"pixel {tuple(center)} has only {n} valid patch entries")
    if ctx is None:
        lbar = np.full((1, n), 1.0 / n)
    else:
        lbar = normalized_similarities(ctx, center, pixels)[None, :]
    seeds = rng.pixel_seeds(cfg.seed, np.array([int(center[1])]),
                            np.array([int(center[0])]))
    if triplets is not None:
        triplets = np.asarray(triplets, dtype=np.int64)
        if triplets.ndim != 2 or triplets.shape[1] != 3:
            raise ConfigError("triplets must be an (M, 3) index array")
        if triplets.min() < 0 or triplets.max() >= n:
            raise ConfigError(f"triplet indices must lie in [0, {n})")
    return asn_block(
        points[None], pixels[None].astype(np.float64), lbar,
        pm.points[int(center[1]), int(center[0])][None],
        seeds, cfg.k, cfg.min_area, triples=triplets, combine=combine,
        keep_internals=True)


def asn_normal(pm: PointMap, ctx: ContextMap | None, center, cfg: AsnConfig,
               triplets=None) -> np.ndarray:
    """Adaptive normal at one pixel: area- and context-weighted triplet blend.

    With ``triplets`` given, sampling is replaced by that explicit index list
    (e.g. :func:`enumerate_patch_triplets` for exhaustive evaluation).
    """
    res = _patch_block(pm, ctx, center, cfg, triplets, "asn")
    if res.count[0] < 1:
        raise UnrecoverablePixelError(
            f"no usable triplet candidate at pixel {tuple(center)}")
    if not res.ok[0]:
        raise ZeroWeightError(
            f"combination weights vanish at pixel {tuple(center)}")
    return res.normal[0]


def asn_candidates(pm: PointMap, ctx: ContextMap | None, center,
                   cfg: AsnConfig, triplets=None) -> list[WeightedCandidate]:
    """The kept candidates behind :func:`asn_normal`, in draw order."""
    res = _patch_block(pm, ctx, center, cfg, triplets, "asn")
    keep = np.flatnonzero(res.sel_ok[0])
    return [WeightedCandidate(normal=res.m[0, i].copy(),
                              area=float(res.area[0, i]),
                              confidence=float(res.conf[0, i]))
            for i in keep]


def combine_candidates(normals, areas, confidences, center_point) -> np.ndarray:
    """Area x confidence weighted blend of candidate normals (unit, oriented)."""
    normals = np.asarray(normals, dtype=np.float64)
    w = np.asarray(areas, dtype=np.float64) * np.asarray(confidences, dtype=np.float64)
    u = np.sum(w[:, None] * normals, axis=0)
    if np.sum(w) < WEIGHT_EPS:
        raise ZeroWeightError("combination weights sum below 1e-12")
    nrm = np.sqrt(u[0] ** 2 + u[1] ** 2 + u[2] ** 2)
    if nrm < WEIGHT_EPS:
        raise ZeroWeightError("weighted candidates cancel to zero direction")
    return orient_to_camera(u / nrm, center_point)


def average_normal(candidates, center_point) -> np.ndarray:
    """Unweighted mean of candidate normals, normalised and oriented."""
    if len(candidates) < 1:
        raise ZeroMeanError("no candidates to average")
    arr = np.array([c.normal for c in candidates], dtype=np.float64)
    mean = arr.mean(axis=0)
    nrm = np.sqrt(mean[0] ** 2 + mean[1] ** 2 + mean[2] ** 2)
    if nrm < WEIGHT_EPS:
        raise ZeroMeanError("candidate normals cancel; mean has no direction")
    return orient_to_camera(mean / nrm, center_point)


def sobel_normal(pm: PointMap, center) -> np.ndarray:
    """Two-tap derivative normal: cross of the horizontal and vertical chords."""
    u, v = int(center[0]), int(center[1])
    if not (1 <= u < pm.width - 1 and 1 <= v < pm.height - 1):
        raise InsufficientSupportError(
            f"pixel ({u}, {v}) lacks a full 4-neighbourhood")
    if not (pm.valid[v, u - 1] and pm.valid[v, u + 1]
            and pm.valid[v - 1, u] and pm.valid[v + 1, u]):
        raise InsufficientSupportError(
            f"pixel ({u}, {v}) has invalid 4-neighbours")
    vx = pm.points[v, u + 1] - pm.points[v, u - 1]
    vy = pm.points[v + 1, u] - pm.points[v - 1, u]
    cr = np.cross(vx, vy)
    nrm = np.sqrt(cr[0] ** 2 + cr[1] ** 2 + cr[2] ** 2)
    if nrm <= CROSS_EPS:
        raise DegenerateTripletError("derivative chords are parallel")
    ref = pm.points[v, u] if pm.valid[v, u] else np.array([0.0, 0.0, 1.0])
    return orient_to_camera(cr / nrm, ref)


def least_squares_normal(points) -> np.ndarray:
    """Total-least-squares plane normal, oriented to camera via the centroid.

    The normal is the eigenvector of the smallest eigenvalue of the centered
    covariance; if the two smallest eigenvalues both vanish the points are
    colinear and no plane is determined.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3 or pts.shape[0] < 3:
        raise DegeneratePatchError("need at least 3 points to fit a plane")
    centroid = pts.mean(axis=0)
    centered = pts - centroid
    cov = centered.T @ centered / pts.shape[0]
    evals, evecs = np.linalg.eigh(cov)
    if evals[0] < 1e-12 and evals[1] < 1e-12:
        raise DegenerateTripletError("points are colinear; plane fit is rank-deficient")
    return orient_to_camera(evecs[:, 0], centroid)


def _sobel_map(pm: PointMap) -> tuple[np.ndarray, np.ndarray]:
    p = pm.points
    ok = np.zeros(pm.shape, dtype=bool)
    ok[1:-1, 1:-1] = (pm.valid[1:-1, :-2] & pm.valid[1:-1, 2:]
                      & pm.valid[:-2, 1:-1] & pm.valid[2:, 1:-1]
                      & pm.valid[1:-1, 1:-1])
    vx = np.zeros_like(p)
    vy = np.zeros_like(p)
    vx[1:-1, 1:-1] = p[1:-1, 2:] - p[1:-1, :-2]
    vy[1:-1, 1:-1] = p[2:, 1:-1] - p[:-2, 1:-1]
    cr = np.cross(vx, vy)
    nrm = np.sqrt(np.sum(cr ** 2, axis=-1))
    ok &= nrm > CROSS_EPS
    nrm_safe = np.where(ok, nrm, 1.0)
    normals = cr / nrm_safe[..., None]
    flip = np.sum(normals * p, axis=-1) > 0
    normals = np.where(flip[..., None], -normals, normals)
    normals[~ok] = 0.0
    return normals, ok


def _lsq_map(frame) -> tuple[np.ndarray, np.ndarray]:
    n_pix = frame.width * frame.height
    normals = np.zeros((n_pix, 3), dtype=np.float64)
    ok = np.zeros(n_pix, dtype=bool)
    for group in frame.groups:
        pts = frame.points[group.entries]                  # (P, n, 3)
        centroid = pts.mean(axis=1)
        centered = pts - centroid[:, None, :]
        cov = np.einsum("pni,pnj->pij", centered, centered) / group.n
        evals, evecs = np.linalg.eigh(cov)
        good = ~((evals[:, 0] < 1e-12) & (evals[:, 1] < 1e-12))
        vec = evecs[:, :, 0]
        flip = np.sum(vec * centroid, axis=-1) > 0
        vec = np.where(flip[:, None], -vec, vec)
        vec[~good] = 0.0
        normals[group.centers] = vec
        ok[group.centers] = good
    return normals, ok


def recover_normal_map(depth: DepthMap, k: Intrinsics, ctx: ContextMap | None,
                       cfg: AsnConfig, method: str = "asn") -> NormalMap:
    """Apply one estimator per pixel; pixels whose estimator fails become invalid."""
    if method not in METHODS:
        raise ConfigError(f"unknown method {method!r}, expected one of {METHODS}")
    if ctx is not None and ctx.shape != depth.shape:
        raise ConfigError(
            f"context shape {ctx.shape} does not match depth shape {depth.shape}")
    pm = unproject(depth, k)

    if method == "sobel":
        normals, ok = _sobel_map(pm)
        return NormalMap(normals, ok, check_unit=False)

    feats = None if ctx is None else ctx.features
    frame = build_frame(pm, k, feats if method == "asn" else None, cfg.r)
    if method == "lsq":
        normals, ok = _lsq_map(frame)
    else:
        combine = "asn" if method == "asn" else "average"
        normals, ok = run_normal_map(frame, cfg.k, cfg.min_area, cfg.seed, combine)
    return NormalMap(normals.reshape(depth.height, depth.width, 3),
                     ok.reshape(depth.shape), check_unit=False)
