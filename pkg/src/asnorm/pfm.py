"""Portable float map I/O, bit-exact for all finite float32 payloads.

Layout written by this module:

* magic line ``Pf`` (1 channel) or ``PF`` (3 channels, interleaved), then
  ``<width> <height>``, then the scale line.  A negative scale marks a
  little-endian payload; this writer always emits ``-1.0``.
* sample rows follow bottom-to-top, 32-bit IEEE floats.

Readers accept both endiannesses (positive scale = big-endian) and preserve
payload bits exactly, including denormals and signed zeros; the scale
magnitude is kept as metadata, never applied to samples.

Feature grids with a channel count outside {1, 3} use a stacked layout in
one file: a leading comment line ``# planes <C>`` followed by C complete
single-channel images back to back.

Grid conventions for the maps of this package: invalid depth pixels are
stored as 0.0, invalid normals as the zero vector.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .camera import DepthMap, NormalMap
from .context import ContextMap, GuidanceMap
from .errors import PfmError


@dataclass
class PfmImage:
    """Decoded PFM payload: float32 samples plus header metadata."""

    samples: np.ndarray     # (H, W) or (H, W, 3) float32, top-to-bottom rows
    scale: float
    little_endian: bool

    @property
    def width(self) -> int:
        return self.samples.shape[1]

    @property
    def height(self) -> int:
        return self.samples.shape[0]

    @property
    def channels(self) -> int:
        return 1 if self.samples.ndim == 2 else self.samples.shape[2]


def _read_line(data: bytes, pos: int) -> tuple[str, int]:
    end = data.find(b"\n", pos)
    if end < 0:
        raise PfmError("truncated header: missing newline")
    return data[pos:end].decode("ascii", errors="replace"), end + 1


def _parse_one(data: bytes, pos: int) -> tuple[PfmImage, int]:
    magic, pos = _read_line(data, pos)
    if magic == "PF":
        channels = 3
    elif magic == "Pf":
        channels = 1
    else:
        raise PfmError(f"bad magic {magic!r}: expected 'Pf' or 'PF'")

    dims, pos = _read_line(data, pos)
    parts = dims.split()
    if len(parts) != 2:
        raise PfmError(f"bad dimensions line {dims!r}")
    try:
        width, height = int(parts[0]), int(parts[1])
    except ValueError as exc:
        raise PfmError(f"bad dimensions line {dims!r}") from exc
    if width <= 0 or height <= 0:
        raise PfmError(f"non-positive dimensions {width} x {height}")

    scale_line, pos = _read_line(data, pos)
    try:
        scale = float(scale_line)
    except ValueError as exc:
        raise PfmError(f"bad scale line {scale_line!r}") from exc
    if scale == 0:
        raise PfmError("scale must be non-zero")

    little = scale < 0
    count = width * height * channels
    nbytes = count * 4
    if len(data) - pos < nbytes:
        raise PfmError(
            f"truncated payload: need {nbytes} bytes, have {len(data) - pos}")
    flat = np.frombuffer(data, dtype="<f4" if little else ">f4",
                         count=count, offset=pos)
    if not little:
        flat = flat.byteswap().view("<f4")   # pure byte swap; bits preserved
    shape = (height, width) if channels == 1 else (height, width, channels)
    samples = flat.reshape(shape)[::-1].copy()   # rows stored bottom-to-top
    return PfmImage(samples=samples, scale=scale, little_endian=little), pos + nbytes


def read_pfm(data: bytes) -> PfmImage:
    """Decode one PFM image from bytes."""
    img, _ = _parse_one(data, 0)
    return img


def write_pfm(samples, scale: float = -1.0) -> bytes:
    """Encode a (H, W) or (H, W, 3) array as PFM bytes (little-endian payload)."""
    arr = np.asarray(samples)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[..., 0]
    if arr.ndim == 2:
        magic = b"Pf"
    elif arr.ndim == 3 and arr.shape[2] == 3:
        magic = b"PF"
    else:
        raise PfmError(f"samples must be (H, W) or (H, W, 3), got {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise PfmError("non-positive dimensions")
    arr32 = arr.astype("<f4", copy=False)
    if not np.all(np.isfinite(arr32)):
        raise PfmError("samples must be finite")
    if scale >= 0:
        raise PfmError("this writer emits little-endian files; scale must be negative")
    header = magic + b"\n" + f"{arr.shape[1]} {arr.shape[0]}\n".encode("ascii") \
        + f"{scale}\n".encode("ascii")
    return header + arr32[::-1].tobytes()


def read_planes(data: bytes) -> np.ndarray:
    """Decode the stacked multi-plane layout into an (H, W, C) float32 array."""
    pos = 0
    if data[:1] == b"#":
        line, pos = _read_line(data, 0)
        parts = line.split()
        if len(parts) != 3 or parts[0] != "#" or parts[1] != "planes":
            raise PfmError(f"bad plane-count comment {line!r}")
        expected = int(parts[2])
    else:
        expected = None
    planes = []
    while pos < len(data):
        img, pos = _parse_one(data, pos)
        if img.channels != 1:
            raise PfmError("stacked layout requires single-channel planes")
        planes.append(img.samples)
    if not planes:
        raise PfmError("no planes found")
    if expected is not None and len(planes) != expected:
        raise PfmError(f"expected {expected} planes, found {len(planes)}")
    if any(p.shape != planes[0].shape for p in planes):
        raise PfmError("planes disagree in shape")
    return np.stack(planes, axis=-1)


def write_planes(features) -> bytes:
    """Encode an (H, W, C) array in the stacked multi-plane layout."""
    arr = np.asarray(features)
    if arr.ndim != 3:
        raise PfmError(f"features must be (H, W, C), got {arr.shape}")
    chunks = [f"# planes {arr.shape[2]}\n".encode("ascii")]
    for ch in range(arr.shape[2]):
        chunks.append(write_pfm(arr[..., ch]))
    return b"".join(chunks)


def depth_to_pfm(depth: DepthMap) -> bytes:
    return write_pfm(np.where(depth.valid, depth.values, 0.0).astype("<f4"))


def pfm_to_depth(data: bytes) -> DepthMap:
    img = read_pfm(data)
    if img.channels != 1:
        raise PfmError("depth maps are single-channel")
    values = img.samples.astype(np.float64)
    return DepthMap(np.where(values > 0, values, 0.0), values > 0)


def normals_to_pfm(nm: NormalMap) -> bytes:
    return write_pfm(np.where(nm.valid[..., None], nm.normals, 0.0).astype("<f4"))


def pfm_to_normals(data: bytes) -> NormalMap:
    img = read_pfm(data)
    if img.channels != 3:
        raise PfmError("normal maps are three-channel")
    vecs = img.samples.astype(np.float64)
    valid = np.sum(vecs ** 2, axis=-1) > 0.25
    return NormalMap(np.where(valid[..., None], vecs, 0.0), valid)


def context_to_pfm(ctx: ContextMap) -> bytes:
    if ctx.channels == 1:
        return write_pfm(ctx.features[..., 0].astype("<f4"))
    if ctx.channels == 3:
        return write_pfm(ctx.features.astype("<f4"))
    return write_planes(ctx.features.astype("<f4"))


def pfm_to_context(data: bytes) -> ContextMap:
    if data[:1] == b"#":
        return ContextMap(read_planes(data).astype(np.float64))
    img = read_pfm(data)
    feats = img.samples.astype(np.float64)
    return ContextMap(feats if feats.ndim == 3 else feats[..., None])


def guidance_to_pfm(gm: GuidanceMap) -> bytes:
    return write_pfm(np.where(gm.valid, gm.weights, 0.0).astype("<f4"))


def pfm_to_guidance(data: bytes) -> GuidanceMap:
    img = read_pfm(data)
    if img.channels != 1:
        raise PfmError("guidance maps are single-channel")
    return GuidanceMap(img.samples.astype(np.float64))
