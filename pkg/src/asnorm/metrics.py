"""Evaluation metrics for depth maps, normal maps and point clouds.

All reductions run over the shared valid mask and are permutation
invariant.  Threshold accuracies use strict ``<`` comparisons; the depth
ratio test uses the symmetric ``max(p/g, g/p)`` form.  Medians are the lower
median so even-sized inputs stay deterministic.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .camera import DepthMap, NormalMap, PointMap
from .errors import ConfigError, DomainError, NoOverlapError

DELTA_BASE = 1.25
ANGLE_THRESHOLDS_DEG = (11.25, 22.5, 30.0)
DISTANCE_THRESHOLDS_M = (0.1, 0.3, 0.5)


@dataclass(frozen=True)
class DepthMetrics:
    rel: float
    log10: float
    rmse: float
    delta1: float
    delta2: float
    delta3: float
    count: int


@dataclass(frozen=True)
class NormalMetrics:
    mean_deg: float
    median_deg: float
    pct_11_25: float
    pct_22_5: float
    pct_30: float
    count: int


@dataclass(frozen=True)
class PointcloudMetrics:
    dist_m: float
    rms_m: float
    pct_0_1: float
    pct_0_3: float
    pct_0_5: float
    count: int


@dataclass(frozen=True)
class MetricsReport:
    """Full evaluation table; sections are None when inputs were absent."""

    depth: DepthMetrics | None = None
    normal: NormalMetrics | None = None
    pointcloud: PointcloudMetrics | None = None

    def to_dict(self) -> dict:
        return {
            "depth": None if self.depth is None else asdict(self.depth),
            "normal": None if self.normal is None else asdict(self.normal),
            "pointcloud": None if self.pointcloud is None else asdict(self.pointcloud),
        }


def _shared(pred_valid, gt_valid):
    shared = pred_valid & gt_valid
    m = int(np.count_nonzero(shared))
    if m == 0:
        raise NoOverlapError("no shared valid pixels to evaluate")
    return shared, m


def lower_median(values: np.ndarray) -> float:
    """The lower of the two central order statistics for even counts."""
    v = np.sort(np.asarray(values, dtype=np.float64).ravel())
    return float(v[(v.size - 1) // 2])


def depth_metrics(pred: DepthMap, gt: DepthMap) -> DepthMetrics:
    """Relative/log/RMS errors and threshold accuracies of a depth prediction."""
    if pred.shape != gt.shape:
        raise ConfigError(f"shape mismatch {pred.shape} vs {gt.shape}")
    shared, m = _shared(pred.valid, gt.valid)
    p = pred.values[shared]
    g = gt.values[shared]
    if np.any(p <= 0) or np.any(g <= 0):
        raise DomainError("depth metrics need positive values on the mask")
    ratio = np.maximum(p / g, g / p)
    return DepthMetrics(
        rel=float(np.mean(np.abs(p - g) / g)),
        log10=float(np.mean(np.abs(np.log10(p) - np.log10(g)))),
        rmse=float(np.sqrt(np.mean((p - g) ** 2))),
        delta1=float(np.mean(ratio < DELTA_BASE)),
        delta2=float(np.mean(ratio < DELTA_BASE ** 2)),
        delta3=float(np.mean(ratio < DELTA_BASE ** 3)),
        count=m,
    )


def angle_errors_deg(pred: NormalMap, gt: NormalMap,
                     mask: np.ndarray | None = None) -> np.ndarray:
    """Per-pixel angle errors in degrees over the shared (optionally restricted) mask."""
    if pred.shape != gt.shape:
        raise ConfigError(f"shape mismatch {pred.shape} vs {gt.shape}")
    shared = pred.valid & gt.valid
    if mask is not None:
        shared = shared & mask
    if not np.any(shared):
        raise NoOverlapError("no shared valid pixels to evaluate")
    dots = np.sum(pred.normals[shared] * gt.normals[shared], axis=-1)
    return np.degrees(np.arccos(np.clip(dots, -1.0, 1.0)))


def normal_metrics(pred: NormalMap, gt: NormalMap) -> NormalMetrics:
    """Mean/median angle error and sub-threshold accuracies of a normal map."""
    ang = angle_errors_deg(pred, gt)
    return NormalMetrics(
        mean_deg=float(np.mean(ang)),
        median_deg=lower_median(ang),
        pct_11_25=float(np.mean(ang < ANGLE_THRESHOLDS_DEG[0])),
        pct_22_5=float(np.mean(ang < ANGLE_THRESHOLDS_DEG[1])),
        pct_30=float(np.mean(ang < ANGLE_THRESHOLDS_DEG[2])),
        count=int(ang.size),
    )


def pointcloud_metrics(pred_pm: PointMap, gt_pm: PointMap) -> PointcloudMetrics:
    """Pixel-aligned Euclidean distances between two point maps."""
    if pred_pm.shape != gt_pm.shape:
        raise ConfigError(f"shape mismatch {pred_pm.shape} vs {gt_pm.shape}")
    shared, m = _shared(pred_pm.valid, gt_pm.valid)
    diff = pred_pm.points[shared] - gt_pm.points[shared]
    d = np.sqrt(np.sum(diff ** 2, axis=-1))
    return PointcloudMetrics(
        dist_m=float(np.mean(d)),
        rms_m=float(np.sqrt(np.mean(d ** 2))),
        pct_0_1=float(np.mean(d < DISTANCE_THRESHOLDS_M[0])),
        pct_0_3=float(np.mean(d < DISTANCE_THRESHOLDS_M[1])),
        pct_0_5=float(np.mean(d < DISTANCE_THRESHOLDS_M[2])),
        count=m,
    )
