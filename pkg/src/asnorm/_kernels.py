"""Vectorised kernels shared by the normal estimators and loss gradients.

Pixels are processed in groups that share a patch-entry count ``n`` so each
group runs as pure array code.  Per-pixel draws come from counter-based
streams (see ``rng``), which makes results bit-identical regardless of
grouping, chunking or thread count.

Candidate selection follows a fixed budget: ``3 * K`` triples are drawn per
pixel, degenerate ones (projected area below ``min_area`` or a 3D
cross-product norm at or below 1e-12) are skipped, and the first ``K``
usable triples in draw order are kept.  Pixels may end up with fewer than
``K`` candidates; with none they are unrecoverable.

The candidate sum runs over the kept candidates in draw order, zero-padded
to a fixed width, so the reduction order is reproducible.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import rng
from .camera import Intrinsics, PointMap, patch_offsets

CROSS_EPS = 1e-12
WEIGHT_EPS = 1e-12
_CHUNK_SLOTS = 400_000   # pixels x draws per chunk, sized to stay cache-resident


def _chunk_pixels(k_samples: int) -> int:
    return max(256, _CHUNK_SLOTS // max(3 * k_samples, 1))


def worker_count() -> int:
    """Thread cap from ASN_THREADS (0 or unset = auto)."""
    raw = os.environ.get("ASN_THREADS", "0")
    try:
        n = int(raw)
    except ValueError:
        n = 0
    if n <= 0:
        return os.cpu_count() or 1
    return n


@dataclass
class PatchGroup:
    n: int                  # entries per patch
    centers: np.ndarray     # (P,) flat center indices
    entries: np.ndarray     # (P, n) flat entry indices, row-major valid order


@dataclass
class Frame:
    """Flat per-pixel arrays for one image."""

    width: int
    height: int
    points: np.ndarray          # (N, 3)
    rays: np.ndarray            # (N, 3)
    pix: np.ndarray             # (N, 2) float64 (u, v)
    valid: np.ndarray           # (N,) bool
    feats: np.ndarray | None    # (N, C) or None for uniform context
    groups: list[PatchGroup] = field(default_factory=list)


def build_frame(pm: PointMap, k: Intrinsics, feats: np.ndarray | None, r: int,
                min_entries: int = 3) -> Frame:
    """Flatten a point map and group valid centers by patch-entry count."""
    h, w = pm.shape
    uu, vv = np.meshgrid(np.arange(w, dtype=np.float64),
                         np.arange(h, dtype=np.float64))
    frame = Frame(
        width=w,
        height=h,
        points=pm.points.reshape(-1, 3),
        rays=k.rays(w, h).reshape(-1, 3),
        pix=np.stack([uu.ravel(), vv.ravel()], axis=1),
        valid=pm.valid.ravel(),
        feats=None if feats is None else feats.reshape(h * w, -1),
    )

    off = patch_offsets(r)                       # (r*r, 2) as (du, dv)
    n_off = off.shape[0]
    ui = np.arange(w)[None, :] + off[:, 0][:, None, None]   # (r*r, 1, W) -> broadcast
    vi = np.arange(h)[:, None] + off[:, 1][:, None, None]   # (r*r, H, 1)
    inb = (ui >= 0) & (ui < w) & (vi >= 0) & (vi < h)       # (r*r, H, W)
    uc = np.clip(ui, 0, w - 1)
    vc = np.clip(vi, 0, h - 1)
    flat = (vc * w + uc).astype(np.int64)
    ok = inb & pm.valid.ravel()[flat.reshape(n_off, -1)].reshape(inb.shape)

    ent_idx = flat.reshape(n_off, -1).T          # (N, r*r) in row-major offset order
    ent_ok = ok.reshape(n_off, -1).T
    counts = ent_ok.sum(axis=1)

    # Compact valid entries to the front, preserving row-major window order.
    order = np.argsort(~ent_ok, axis=1, kind="stable")
    ent_sorted = np.take_along_axis(ent_idx, order, axis=1)

    centers_all = np.flatnonzero(frame.valid & (counts >= min_entries))
    counts_c = counts[centers_all]
    for n in np.unique(counts_c):
        sel = centers_all[counts_c == n]
        frame.groups.append(PatchGroup(
            n=int(n),
            centers=sel,
            entries=ent_sorted[sel, : int(n)],
        ))
    return frame


def _cross(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    out = np.empty(np.broadcast_shapes(a.shape, b.shape), dtype=np.float64)
    out[..., 0] = a[..., 1] * b[..., 2] - a[..., 2] * b[..., 1]
    out[..., 1] = a[..., 2] * b[..., 0] - a[..., 0] * b[..., 2]
    out[..., 2] = a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]
    return out


def _norm3(v: np.ndarray) -> np.ndarray:
    return np.sqrt(v[..., 0] ** 2 + v[..., 1] ** 2 + v[..., 2] ** 2)


def _dot3(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return a[..., 0] * b[..., 0] + a[..., 1] * b[..., 1] + a[..., 2] * b[..., 2]


def patch_lbar(f_center: np.ndarray, f_entries: np.ndarray) -> np.ndarray:
    """Patch-normalised similarity weights, shape (P, n).

    Similarity of two feature vectors is ``exp(-0.5 * ||fi - fj||_2)``
    (unsquared distance); the weights are normalised to sum to 1 over the
    patch, center entry included.
    """
    d = np.sqrt(np.sum((f_center[:, None, :] - f_entries) ** 2, axis=-1))
    sim = np.exp(-0.5 * d)
    return sim / np.sum(sim, axis=1)[:, None]


@dataclass
class BlockResult:
    normal: np.ndarray          # (P, 3) combined unit normal (zeros where not ok)
    ok: np.ndarray              # (P,) bool
    count: np.ndarray           # (P,) usable candidates kept
    flip: np.ndarray            # (P,) +-1 final orientation sign
    # internals for gradients / inspection
    a: np.ndarray = None
    b: np.ndarray = None
    c: np.ndarray = None
    sel_ok: np.ndarray = None
    area: np.ndarray = None
    conf: np.ndarray = None
    m: np.ndarray = None        # (P, K, 3) oriented unit candidate normals
    nt: np.ndarray = None       # (P, K, 3) unoriented unit cross products
    sigma: np.ndarray = None
    crn: np.ndarray = None
    e1: np.ndarray = None
    e2: np.ndarray = None
    u_vec: np.ndarray = None
    u_norm: np.ndarray = None
    lbar: np.ndarray = None
    sim_d: np.ndarray = None    # (P, n) feature distances


def asn_block(pts: np.ndarray, pix: np.ndarray, lbar: np.ndarray,
              center_pt: np.ndarray, seeds: np.ndarray, k_samples: int,
              min_area: float, triples=None, combine: str = "asn",
              keep_internals: bool = False) -> BlockResult:
    """Run the adaptive-normal forward pass on one block of pixels.

    ``pts``/``pix`` are (P, n, 3)/(P, n, 2) patch entries, ``lbar`` the
    (P, n) similarity weights, ``center_pt`` the (P, 3) center points.  With
    ``triples`` given (an (M, 3) index array) sampling is skipped and every
    listed triple participates, degenerate ones contributing zero weight.
    ``combine`` is ``"asn"`` (area x confidence weights) or ``"average"``
    (unweighted mean over the kept candidates).
    """
    p_count, n = pts.shape[:2]
    if triples is None:
        a, b, c = rng.draw_triples(seeds, n, 3 * k_samples)
    else:
        t = np.asarray(triples, dtype=np.int64)
        a = np.broadcast_to(t[:, 0], (p_count, t.shape[0]))
        b = np.broadcast_to(t[:, 1], (p_count, t.shape[0]))
        c = np.broadcast_to(t[:, 2], (p_count, t.shape[0]))

    rows = np.arange(p_count)[:, None]
    pa, pb, pc = pts[rows, a], pts[rows, b], pts[rows, c]
    qa, qb, qc = pix[rows, a], pix[rows, b], pix[rows, c]

    e1 = pb - pa
    e2 = pc - pa
    cr = _cross(e1, e2)
    crn = _norm3(cr)
    area = 0.5 * np.abs((qb[..., 0] - qa[..., 0]) * (qc[..., 1] - qa[..., 1])
                        - (qb[..., 1] - qa[..., 1]) * (qc[..., 0] - qa[..., 0]))
    usable = (area >= min_area) & (crn > CROSS_EPS)

    if triples is None:
        # first K usable draws, in draw order
        order = np.argsort(~usable, axis=1, kind="stable")[:, :k_samples]
        sel_ok = np.take_along_axis(usable, order, axis=1)
        gather = lambda arr: np.take_along_axis(arr, order, axis=1)
        gather3 = lambda arr: np.take_along_axis(arr, order[..., None], axis=1)
        a, b, c = gather(a), gather(b), gather(c)
        area, crn = gather(area), gather(crn)
        cr, e1, e2 = gather3(cr), gather3(e1), gather3(e2)
    else:
        sel_ok = usable

    count = sel_ok.sum(axis=1)
    crn_safe = np.where(sel_ok, crn, 1.0)
    nt = cr / crn_safe[..., None]
    dot_c = _dot3(nt, center_pt[:, None, :])
    sigma = np.where(dot_c > 0, -1.0, 1.0)
    m = np.where(sel_ok[..., None], sigma[..., None] * nt, 0.0)

    la = np.take_along_axis(lbar, a, axis=1)
    lb = np.take_along_axis(lbar, b, axis=1)
    lc = np.take_along_axis(lbar, c, axis=1)
    conf = (la * lb) * lc

    ok = count >= 1
    if combine == "asn":
        w = np.where(sel_ok, area * conf, 0.0)
        u_vec = np.sum(w[..., None] * m, axis=1)
        w_sum = np.sum(w, axis=1)
        ok &= w_sum >= WEIGHT_EPS
    elif combine == "average":
        u_vec = np.sum(m, axis=1) / np.maximum(count, 1)[:, None]
    else:
        raise ValueError(f"unknown combine mode {combine!r}")

    u_norm = _norm3(u_vec)
    ok &= u_norm >= WEIGHT_EPS
    un_safe = np.where(ok, u_norm, 1.0)
    normal = u_vec / un_safe[:, None]
    flip = np.where(_dot3(normal, center_pt) > 0, -1.0, 1.0)
    normal = normal * flip[:, None]
    normal[~ok] = 0.0

    res = BlockResult(normal=normal, ok=ok, count=count, flip=flip)
    if keep_internals:
        res.a, res.b, res.c = a, b, c
        res.sel_ok = sel_ok
        res.area = np.where(sel_ok, area, 0.0)
        res.conf = np.where(sel_ok, conf, 0.0)
        res.m, res.nt, res.sigma, res.crn = m, nt, sigma, crn_safe
        res.e1, res.e2 = e1, e2
        res.u_vec, res.u_norm = u_vec, un_safe
        res.lbar = lbar
    return res


def group_inputs(frame: Frame, group: PatchGroup, sl: slice, seed: int):
    """Gather kernel inputs for a chunk of one patch group."""
    centers = group.centers[sl]
    entries = group.entries[sl]
    pts = frame.points[entries]
    pix = frame.pix[entries]
    center_pt = frame.points[centers]
    if frame.feats is None:
        lbar = np.full((centers.shape[0], group.n), 1.0 / group.n)
        sim_d = None
    else:
        f_c = frame.feats[centers]
        f_e = frame.feats[entries]
        sim_d = np.sqrt(np.sum((f_c[:, None, :] - f_e) ** 2, axis=-1))
        sim = np.exp(-0.5 * sim_d)
        lbar = sim / np.sum(sim, axis=1)[:, None]
    seeds = rng.pixel_seeds(seed, centers // frame.width, centers % frame.width)
    return centers, entries, pts, pix, lbar, sim_d, center_pt, seeds


def run_normal_map(frame: Frame, k_samples: int, min_area: float, seed: int,
                   combine: str) -> tuple[np.ndarray, np.ndarray]:
    """Full-frame forward pass; returns flat (N, 3) normals and (N,) validity."""
    n_pix = frame.width * frame.height
    normals = np.zeros((n_pix, 3), dtype=np.float64)
    ok = np.zeros(n_pix, dtype=bool)

    chunk = _chunk_pixels(k_samples)
    tasks = []
    for group in frame.groups:
        for start in range(0, group.centers.shape[0], chunk):
            tasks.append((group, slice(start, start + chunk)))

    def run(task):
        group, sl = task
        centers, _, pts, pix, lbar, _, center_pt, seeds = group_inputs(
            frame, group, sl, seed)
        res = asn_block(pts, pix, lbar, center_pt, seeds, k_samples,
                        min_area, combine=combine)
        normals[centers] = res.normal
        ok[centers] = res.ok

    threads = min(worker_count(), len(tasks)) if tasks else 1
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(run, tasks))
    else:
        for task in tasks:
            run(task)
    return normals, ok


def loss_and_grads(frame: Frame, gt_normals: np.ndarray, gt_valid: np.ndarray,
                   k_samples: int, min_area: float, seed: int,
                   want_depth: bool = False, want_context: bool = False):
    """Cosine loss of recovered vs ground-truth normals, plus gradients.

    Returns ``(loss, grad_depth or None, grad_context or None, m_count)``
    where gradients are flat (N,) / (N, C) arrays of the *summed* per-pixel
    contributions already divided by the valid-pixel count.  The triplet
    draws are a pure function of the seed, so repeated evaluations (e.g. by
    a finite-difference probe) see identical samples.
    """
    n_pix = frame.width * frame.height
    loss_sum = 0.0
    m_count = 0
    g_depth = np.zeros(n_pix, dtype=np.float64) if want_depth else None
    c_dim = frame.feats.shape[1] if (want_context and frame.feats is not None) else 0
    g_ctx = np.zeros((n_pix, c_dim), dtype=np.float64) if want_context else None

    chunk = _chunk_pixels(k_samples)
    for group in frame.groups:
        for start in range(0, group.centers.shape[0], chunk):
            sl = slice(start, start + chunk)
            centers, entries, pts, pix, lbar, sim_d, center_pt, seeds = \
                group_inputs(frame, group, sl, seed)
            res = asn_block(pts, pix, lbar, center_pt, seeds, k_samples,
                            min_area, combine="asn", keep_internals=True)
            live = res.ok & gt_valid[centers]
            if not np.any(live):
                continue
            gt = gt_normals[centers]
            ell = 1.0 - _dot3(res.normal, gt)
            loss_sum += float(np.sum(ell[live]))
            m_count += int(np.count_nonzero(live))
            if not (want_depth or want_context):
                continue

            # dl/du through the normalisation, with the frozen final flip
            # folded into the target vector.
            tgt = res.flip[:, None] * gt
            nhat = res.u_vec / res.u_norm[:, None]
            h = (tgt - nhat * _dot3(nhat, tgt)[:, None]) / res.u_norm[:, None]
            h[~live] = 0.0

            if want_depth:
                _accum_depth(g_depth, frame, entries, res, h)
            if want_context:
                _accum_context(g_ctx, frame, centers, entries, res, h,
                               lbar, sim_d)

    if m_count == 0:
        return None, None, None, 0
    loss = loss_sum / m_count
    if g_depth is not None:
        g_depth /= m_count
    if g_ctx is not None:
        g_ctx /= m_count
    return loss, g_depth, g_ctx, m_count


def _accum_depth(g_depth, frame, entries, res, h):
    """Backpropagate dl/du into depth values via the cross products."""
    hk = h[:, None, :]
    coef = np.where(res.sel_ok, -res.sigma * res.area * res.conf / res.crn, 0.0)
    gc = coef[..., None] * (hk - res.nt * _dot3(res.nt, hk)[..., None])
    g_e1 = _cross(res.e2, gc)
    g_e2 = _cross(gc, res.e1)
    g_pa = -(g_e1 + g_e2)

    rows = np.arange(entries.shape[0])[:, None]
    for slot, g_pt in ((res.a, g_pa), (res.b, g_e1), (res.c, g_e2)):
        idx = entries[rows, slot]
        contrib = _dot3(frame.rays[idx], g_pt)
        np.add.at(g_depth, idx.ravel(), contrib.ravel())


def _accum_context(g_ctx, frame, centers, entries, res, h, lbar, sim_d):
    """Backpropagate dl/du into context features via the similarity weights."""
    p_count, n = lbar.shape
    phi = np.where(res.sel_ok, -res.area * _dot3(res.m, h[:, None, :]), 0.0)

    la = np.take_along_axis(lbar, res.a, axis=1)
    lb = np.take_along_axis(lbar, res.b, axis=1)
    lc = np.take_along_axis(lbar, res.c, axis=1)
    gamma = np.zeros(p_count * n, dtype=np.float64)
    offs = np.arange(p_count)[:, None] * n
    np.add.at(gamma, (offs + res.a).ravel(), (phi * lb * lc).ravel())
    np.add.at(gamma, (offs + res.b).ravel(), (phi * la * lc).ravel())
    np.add.at(gamma, (offs + res.c).ravel(), (phi * la * lb).ravel())
    gamma = gamma.reshape(p_count, n)

    dot_g = np.sum(gamma * lbar, axis=1)
    d_sim = -0.5 * lbar * (gamma - dot_g[:, None])          # dl/d(distance)
    diff = frame.feats[centers][:, None, :] - frame.feats[entries]
    with np.errstate(invalid="ignore", divide="ignore"):
        coef = np.where(sim_d > 0, d_sim / sim_d, 0.0)      # subgradient 0 at d == 0
    g_center = np.sum(coef[..., None] * diff, axis=1)
    g_entries = -coef[..., None] * diff
    np.add.at(g_ctx, centers, g_center)
    np.add.at(g_ctx, entries.ravel(), g_entries.reshape(-1, g_ctx.shape[1]))
