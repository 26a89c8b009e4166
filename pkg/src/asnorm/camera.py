"""Pinhole camera model and per-pixel geometric grids.

Conventions used throughout the package:

* Camera frame: +x right, +y down, +z forward (into the scene).  All 3D
  points have z > 0 where valid.
* Pixels are addressed as ``(u, v)`` = (column, row); arrays are indexed
  ``[v, u]``.
* Stored normals are unit length and camera-facing: ``n . P < 0`` for the
  point ``P`` they belong to.  A normal exactly tangent to the view ray
  (``n . P == 0``) is kept unflipped so the operation is deterministic.
* All computation is float64; file I/O narrows to float32 (see ``pfm``).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DegeneratePatchError, InvalidCenterError

_UNIT_TOL = 1e-6


@dataclass(frozen=True)
class Intrinsics:
    """Pinhole parameters, in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        for name in ("fx", "fy"):
            if not np.isfinite(getattr(self, name)) or getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        for name in ("cx", "cy"):
            if not np.isfinite(getattr(self, name)):
                raise ConfigError(f"{name} must be finite")

    def rays(self, width: int, height: int) -> np.ndarray:
        """Per-pixel ray directions ((u-cx)/fx, (v-cy)/fy, 1), shape (H, W, 3)."""
        u = np.arange(width, dtype=np.float64)
        v = np.arange(height, dtype=np.float64)
        r = np.empty((height, width, 3), dtype=np.float64)
        r[..., 0] = (u[None, :] - self.cx) / self.fx
        r[..., 1] = (v[:, None] - self.cy) / self.fy
        r[..., 2] = 1.0
        return r


def _as_grid(values, name: str, depth3: bool = False) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    want = 3 if depth3 else 2
    if arr.ndim != want:
        raise ConfigError(f"{name} must be {want}-dimensional, got shape {arr.shape}")
    return arr


def _as_mask(valid, shape) -> np.ndarray:
    if valid is None:
        return np.ones(shape, dtype=bool)
    mask = np.asarray(valid, dtype=bool)
    if mask.shape != shape:
        raise ConfigError(f"valid mask shape {mask.shape} != grid shape {shape}")
    return mask


class DepthMap:
    """Per-pixel depth in meters with a validity mask.

    Depth must be positive wherever valid.  When no mask is given, finite
    positive entries are taken as valid.
    """

    def __init__(self, values, valid=None):
        self.values = _as_grid(values, "depth")
        if valid is None:
            with np.errstate(invalid="ignore"):
                self.valid = np.isfinite(self.values) & (self.values > 0)
        else:
            self.valid = _as_mask(valid, self.values.shape)
            bad = self.valid & ~(np.isfinite(self.values) & (self.values > 0))
            if np.any(bad):
                v, u = np.argwhere(bad)[0]
                raise ConfigError(
                    f"depth at pixel ({u}, {v}) marked valid but not positive/finite"
                )

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


class PointMap:
    """Per-pixel 3D points in the camera frame, z > 0 where valid."""

    def __init__(self, points, valid=None):
        self.points = _as_grid(points, "points", depth3=True)
        if self.points.shape[-1] != 3:
            raise ConfigError("points must have 3 components per pixel")
        self.valid = _as_mask(valid, self.points.shape[:2])
        z = self.points[..., 2]
        if np.any(self.valid & ~(np.isfinite(z) & (z > 0))):
            raise ConfigError("valid points must have finite z > 0")

    @property
    def height(self) -> int:
        return self.points.shape[0]

    @property
    def width(self) -> int:
        return self.points.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.points.shape[:2]


class NormalMap:
    """Per-pixel unit normals, camera frame, camera-facing where valid."""

    def __init__(self, normals, valid=None, check_unit: bool = True):
        self.normals = _as_grid(normals, "normals", depth3=True)
        if self.normals.shape[-1] != 3:
            raise ConfigError("normals must have 3 components per pixel")
        self.valid = _as_mask(valid, self.normals.shape[:2])
        if check_unit and np.any(self.valid):
            norms = np.linalg.norm(self.normals[self.valid], axis=-1)
            if np.any(np.abs(norms - 1.0) > _UNIT_TOL):
                raise ConfigError("valid normals must be unit length within 1e-6")

    @property
    def height(self) -> int:
        return self.normals.shape[0]

    @property
    def width(self) -> int:
        return self.normals.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.normals.shape[:2]


def unproject(depth: DepthMap, k: Intrinsics) -> PointMap:
    """Lift a depth map to 3D points, propagating the validity mask.

    Valid pixel (u, v) with depth d maps to
    ``((u - cx)/fx * d, (v - cy)/fy * d, d)``.  Invalid pixels carry zeros.
    """
    rays = k.rays(depth.width, depth.height)
    pts = rays * depth.values[..., None]
    pts[~depth.valid] = 0.0
    return PointMap(pts, depth.valid.copy())


def project(points: np.ndarray, k: Intrinsics) -> np.ndarray:
    """Project camera-frame points (..., 3) back to pixel coordinates (..., 2)."""
    pts = np.asarray(points, dtype=np.float64)
    z = pts[..., 2]
    out = np.empty(pts.shape[:-1] + (2,), dtype=np.float64)
    out[..., 0] = k.fx * pts[..., 0] / z + k.cx
    out[..., 1] = k.fy * pts[..., 1] / z + k.cy
    return out


def orient_to_camera(n: np.ndarray, p: np.ndarray) -> np.ndarray:
    """Flip ``n`` so it faces the camera at point ``p``: returns n if n.p < 0 else -n.

    The tangent case ``n . p == 0`` is returned unchanged.
    """
    n = np.asarray(n, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    d = n[..., 0] * p[..., 0] + n[..., 1] * p[..., 1] + n[..., 2] * p[..., 2]
    if n.ndim == 1:
        return -n if d > 0 else n
    return np.where((d > 0)[..., None], -n, n)


def is_camera_facing(nm: NormalMap, pm: PointMap) -> np.ndarray:
    """Mask of valid pixels whose normal does not face the camera (n . P > 0)."""
    d = np.sum(nm.normals * pm.points, axis=-1)
    return nm.valid & pm.valid & (d > 0)


def patch_offsets(r: int) -> np.ndarray:
    """Row-major (du, dv) offsets of an r x r window, shape (r*r, 2)."""
    if r < 3 or r % 2 == 0:
        raise DegeneratePatchError(f"patch size must be odd and >= 3, got {r}")
    h = r // 2
    dv, du = np.mgrid[-h : h + 1, -h : h + 1]
    return np.stack([du.ravel(), dv.ravel()], axis=1)


def extract_patch(pm: PointMap, center: tuple[int, int], r: int):
    """Valid in-bounds pixels of the r x r window around ``center``.

    Returns ``(pixels, points)``: an (n, 2) int array of (u, v) coordinates in
    row-major window order (center included) and the matching (n, 3) points.
    Windows are clipped at the image border; padding would fabricate geometry.

    Raises :class:`InvalidCenterError` if the center pixel itself is invalid.
    """
    u0, v0 = int(center[0]), int(center[1])
    if not (0 <= u0 < pm.width and 0 <= v0 < pm.height) or not pm.valid[v0, u0]:
        raise InvalidCenterError(f"center pixel ({u0}, {v0}) is not a valid point")
    off = patch_offsets(r)
    uu = off[:, 0] + u0
    vv = off[:, 1] + v0
    keep = (uu >= 0) & (uu < pm.width) & (vv >= 0) & (vv < pm.height)
    uu, vv = uu[keep], vv[keep]
    keep_valid = pm.valid[vv, uu]
    uu, vv = uu[keep_valid], vv[keep_valid]
    pixels = np.stack([uu, vv], axis=1)
    return pixels, pm.points[vv, uu]
