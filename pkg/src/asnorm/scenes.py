"""Synthetic scenes with analytic ground truth, and the experiment drivers.

Scenes are rendered by casting the per-pixel camera ray against an analytic
surface (plane, two-plane corner, semi-sphere cap, depth step).  Ground-truth
normals come from the surface equations; Gaussian depth noise is added after
the normals are computed.  Rays that miss the surface, or hit it closer to
grazing than ``min_incidence_cos`` allows (depth sensors drop grazing
returns), are invalid.

Drivers reproduce the library's headline behaviours at desk scale: noise
robustness of area weighting versus plain averaging, accuracy/time versus
triplet count, patch-size robustness, and the window-from-ratio sizing rule.
Wall-clock times live only in the in-memory result (never in CSV output) so
re-runs stay byte-identical.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .camera import DepthMap, Intrinsics, NormalMap
from .context import ContextMap
from .errors import ConfigError, OutOfRangeError
from .estimators import AsnConfig, recover_normal_map
from .metrics import angle_errors_deg, lower_median

SCENE_KINDS = ("plane", "corner", "semisphere", "step")


@dataclass(frozen=True)
class SceneSpec:
    """Parameters of one synthetic scene."""

    kind: str = "plane"
    width: int = 160
    height: int = 120
    intrinsics: Intrinsics | None = None
    # plane
    plane_normal: tuple = (-0.1, 0.0, 1.0)
    plane_offset: float = 2.0
    # corner: two planes meeting in a vertical 3D line, seen as a convex ridge
    dihedral_deg: float = 90.0
    corner_depth: float = 2.0
    # semisphere
    sphere_radius: float = 1.0
    sphere_center_z: float = 2.5
    # step
    step_depth: float = 2.0
    step_height: float = 0.5
    noise_sigma: float = 0.0
    seed: int = 0
    min_incidence_cos: float = 0.25
    context_amplitude: float = 1.0

    def __post_init__(self):
        if self.kind not in SCENE_KINDS:
            raise ConfigError(f"unknown scene kind {self.kind!r}")
        if self.width < 16 or self.height < 16:
            raise ConfigError("scene resolution must be at least 16 x 16")
        if self.sphere_radius <= 0:
            raise ConfigError("sphere radius must be positive")
        if self.noise_sigma < 0:
            raise ConfigError("noise sigma must be >= 0")

    def camera(self) -> Intrinsics:
        if self.intrinsics is not None:
            return self.intrinsics
        f = 0.8 * max(self.width, self.height)
        return Intrinsics(fx=f, fy=f, cx=(self.width - 1) / 2.0,
                          cy=(self.height - 1) / 2.0)


@dataclass
class Scene:
    depth: DepthMap
    normals: NormalMap
    context: ContextMap | None
    spec: SceneSpec


def _orient_rows(normals, points):
    dots = np.sum(normals * points, axis=-1)
    return np.where((dots > 0)[..., None], -normals, normals)


def gen_scene(spec: SceneSpec) -> Scene:
    """Render depth, analytic normals and (for corners) a one-hot plane context."""
    k = spec.camera()
    rays = k.rays(spec.width, spec.height)
    context = None

    if spec.kind == "plane":
        n = np.asarray(spec.plane_normal, dtype=np.float64)
        n = n / np.linalg.norm(n)
        denom = np.sum(rays * n, axis=-1)
        with np.errstate(divide="ignore"):
            t = spec.plane_offset / denom
        valid = np.isfinite(t) & (t > 0)
        depth = np.where(valid, t, 0.0)
        normals = np.broadcast_to(n, rays.shape).copy()

    elif spec.kind == "corner":
        a = np.tan(np.radians((180.0 - spec.dihedral_deg) / 2.0))
        # crease midway between two pixel columns so no pixel sits on it
        u_star = np.floor(k.cx) + 0.5
        rx_star = (u_star - k.cx) / k.fx
        z0 = spec.corner_depth
        x0 = rx_star * z0
        rx = rays[..., 0]
        plane_ids = None
        ts = []
        for slope in (a, -a):
            denom = 1.0 - slope * rx
            d0 = z0 - slope * x0
            with np.errstate(divide="ignore"):
                t = d0 / denom
            t = np.where(np.isfinite(t) & (t > 0), t, np.inf)
            ts.append(t)
        ts = np.stack(ts)                      # (2, H, W)
        plane_ids = np.argmin(ts, axis=0)
        t = np.min(ts, axis=0)
        valid = np.isfinite(t)
        depth = np.where(valid, t, 0.0)
        slopes = np.where(plane_ids == 0, a, -a)
        normals = np.stack([slopes, np.zeros_like(slopes),
                            -np.ones_like(slopes)], axis=-1)
        normals /= np.sqrt(1.0 + slopes ** 2)[..., None]
        one_hot = np.zeros(rays.shape[:2] + (2,), dtype=np.float64)
        one_hot[plane_ids == 0, 0] = spec.context_amplitude
        one_hot[plane_ids == 1, 1] = spec.context_amplitude
        context = ContextMap(one_hot)

    elif spec.kind == "semisphere":
        zc = spec.sphere_center_z
        rr = spec.sphere_radius
        d2 = np.sum(rays ** 2, axis=-1)
        dc = rays[..., 2] * zc
        disc = dc ** 2 - d2 * (zc ** 2 - rr ** 2)
        hit = disc >= 0
        t = np.where(hit, (dc - np.sqrt(np.where(hit, disc, 0.0))) / d2, 0.0)
        valid = hit & (t > 0)
        depth = np.where(valid, t, 0.0)
        pts = rays * t[..., None]
        normals = (pts - np.array([0.0, 0.0, zc])) / rr
        normals = np.where(valid[..., None], normals, 0.0)

    elif spec.kind == "step":
        u_star = np.floor(k.cx) + 0.5
        uu = np.arange(spec.width)[None, :] * np.ones((spec.height, 1))
        z = np.where(uu < u_star, spec.step_depth,
                     spec.step_depth + spec.step_height)
        depth = z
        valid = np.ones(z.shape, dtype=bool)
        normals = np.broadcast_to(
            np.array([0.0, 0.0, -1.0]), rays.shape).copy()

    pts = rays * depth[..., None]
    normals = _orient_rows(normals, np.where(valid[..., None], pts, 1.0))

    # grazing cutoff: drop returns whose surface faces the ray too obliquely
    ray_unit = rays / np.sqrt(np.sum(rays ** 2, axis=-1))[..., None]
    incidence = -np.sum(normals * ray_unit, axis=-1)
    valid = valid & (incidence >= spec.min_incidence_cos)
    depth = np.where(valid, depth, 0.0)

    if spec.noise_sigma > 0:
        noise = np.random.default_rng(spec.seed).standard_normal(depth.shape)
        noisy = depth + spec.noise_sigma * noise
        valid = valid & (noisy > 0)
        depth = np.where(valid, noisy, 0.0)

    nm = NormalMap(np.where(valid[..., None], normals, 0.0), valid,
                   check_unit=False)
    return Scene(depth=DepthMap(depth, valid), normals=nm,
                 context=context, spec=spec)


def crease_adjacent_mask(spec: SceneSpec, max_dist: int = 2) -> np.ndarray:
    """Pixels within ``1..max_dist`` columns of a corner scene's crease."""
    if spec.kind != "corner":
        raise ConfigError("crease mask only exists for corner scenes")
    k = spec.camera()
    u_star = np.floor(k.cx) + 0.5
    uu = np.arange(spec.width, dtype=np.float64)
    dist = np.abs(uu - u_star)                 # half-integers: 0.5, 1.5, ...
    cols = (dist > 0.5) & (dist < max_dist + 0.5)
    return np.broadcast_to(cols[None, :], (spec.height, spec.width)).copy()


@dataclass
class SweepRow:
    """One parameter x method outcome of a sweep."""

    parameter: str
    value: float
    method: str
    mean_deg: float
    median_deg: float
    pct_11_25: float
    pct_22_5: float
    pct_30: float
    pixels: int
    time_ms: float = 0.0       # excluded from CSV output


@dataclass
class SweepResult:
    parameter: str
    values: list
    rows: list = field(default_factory=list)
    seeds: list = field(default_factory=list)


def _normal_row(parameter, value, method, pred: NormalMap, gt: NormalMap,
                elapsed_s: float, mask=None) -> SweepRow:
    ang = angle_errors_deg(pred, gt, mask)
    return SweepRow(
        parameter=parameter, value=value, method=method,
        mean_deg=float(np.mean(ang)), median_deg=lower_median(ang),
        pct_11_25=float(np.mean(ang < 11.25)),
        pct_22_5=float(np.mean(ang < 22.5)),
        pct_30=float(np.mean(ang < 30.0)),
        pixels=int(ang.size), time_ms=elapsed_s * 1000.0)


def run_noise_experiment(spec: SceneSpec, sigmas, seeds, cfg: AsnConfig) -> SweepResult:
    """Area-weighted versus plain-average recovery across noise levels.

    Both methods see identical scenes and identical triplet draws, so the
    comparison is paired.  Per (sigma, method) the reported metrics average
    the per-seed means; each seed's unit noise field is scaled by sigma,
    which keeps error curves comparable across the sigma grid.
    """
    sigmas = list(sigmas)
    seeds = list(seeds)
    if len(sigmas) < 2:
        raise ConfigError("need at least 2 sigma levels")
    if len(seeds) < 3:
        raise ConfigError("need at least 3 seeds")
    result = SweepResult(parameter="sigma", values=sigmas, seeds=seeds)
    k = spec.camera()
    for sigma in sigmas:
        per_method = {"area": [], "average": []}
        times = {"area": 0.0, "average": 0.0}
        pixels = 0
        for seed in seeds:
            scene = gen_scene(SceneSpec(**{**spec.__dict__,
                                           "noise_sigma": float(sigma),
                                           "seed": int(seed)}))
            for method, label in (("asn", "area"), ("average", "average")):
                t0 = time.perf_counter()
                rec = recover_normal_map(scene.depth, k, None, cfg, method)
                times[label] += time.perf_counter() - t0
                ang = angle_errors_deg(rec, scene.normals)
                per_method[label].append(float(np.mean(ang)))
                pixels = int(ang.size)
        for label in ("area", "average"):
            vals = per_method[label]
            result.rows.append(SweepRow(
                parameter="sigma", value=float(sigma), method=label,
                mean_deg=float(np.mean(vals)), median_deg=lower_median(vals),
                pct_11_25=0.0, pct_22_5=0.0, pct_30=0.0,
                pixels=pixels, time_ms=times[label] * 1000.0 / len(seeds)))
    return result


def run_triplet_sweep(spec: SceneSpec, ks, cfg: AsnConfig) -> SweepResult:
    """Recovered-normal accuracy and wall-clock versus triplet count."""
    ks = list(ks)
    if ks != sorted(ks):
        raise ConfigError("triplet counts must be ascending")
    if 10 not in ks or 40 not in ks:
        raise ConfigError("sweep must include K=10 and K=40")
    result = SweepResult(parameter="k", values=ks, seeds=[spec.seed, cfg.seed])
    scene = gen_scene(spec)
    k = spec.camera()
    for kk in ks:
        cfg_k = AsnConfig(r=cfg.r, k=int(kk), min_area=cfg.min_area, seed=cfg.seed)
        t0 = time.perf_counter()
        rec = recover_normal_map(scene.depth, k, None, cfg_k, "asn")
        elapsed = time.perf_counter() - t0
        result.rows.append(_normal_row("k", float(kk), "asn", rec,
                                       scene.normals, elapsed))
    return result


def run_patch_sweep(spec: SceneSpec, sizes, cfg: AsnConfig) -> SweepResult:
    """Recovered-normal accuracy versus local patch size."""
    sizes = list(sizes)
    if any(s % 2 == 0 or s < 3 for s in sizes):
        raise ConfigError("patch sizes must be odd and >= 3")
    result = SweepResult(parameter="r", values=sizes, seeds=[spec.seed, cfg.seed])
    scene = gen_scene(spec)
    k = spec.camera()
    mask = crease_adjacent_mask(spec) if spec.kind == "corner" else None
    ctx = scene.context
    for r in sizes:
        cfg_r = AsnConfig(r=int(r), k=cfg.k, min_area=cfg.min_area, seed=cfg.seed)
        t0 = time.perf_counter()
        rec = recover_normal_map(scene.depth, k, ctx, cfg_r, "asn")
        elapsed = time.perf_counter() - t0
        result.rows.append(_normal_row("r", float(r), "asn", rec,
                                       scene.normals, elapsed, mask))
    return result


def window_from_ratio(width: int, height: int, ratio: float) -> int:
    """Window size from the area rule: sqrt(W * H * ratio), floored to odd, >= 3.

    Raises if the resulting window would not fit in the image.
    """
    if ratio <= 0:
        raise ConfigError("ratio must be positive")
    if width < 1 or height < 1:
        raise ConfigError("image dimensions must be positive")
    w = np.sqrt(width * height * ratio)
    size = int(np.floor(w))
    if size % 2 == 0:
        size -= 1
    size = max(size, 3)
    if size > min(width, height):
        raise OutOfRangeError(
            f"window {size} exceeds image side {min(width, height)}")
    return size


def fit_line_r2(x, y) -> tuple[float, float, float]:
    """Least-squares line fit returning (slope, intercept, R^2)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    slope, intercept = np.polyfit(x, y, 1)
    pred = slope * x + intercept
    ss_res = float(np.sum((y - pred) ** 2))
    ss_tot = float(np.sum((y - np.mean(y)) ** 2))
    r2 = 1.0 if ss_tot == 0 else 1.0 - ss_res / ss_tot
    return float(slope), float(intercept), r2
