"""Optical-flow based depth initialization and edge-aware depth refinement.

A classical coarse-to-fine Horn-Schunck estimator produces the dense flow
used to seed inverse depth (inverse of the flow magnitude); externally
computed flow can be imported from Middlebury-style ``.flo`` files instead.
An iterated joint bilateral filter snaps the seeded depth to intensity edges
before optimization.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .core import DepthMap, IntensityFrame

FLO_MAGIC = 202021.25


class FlowFormatError(ValueError):
    """Raised for malformed .flo files; the message names the byte offset."""


class DegenerateFlowError(ValueError):
    """Raised when a flow field cannot seed depth; skip this frame pair."""


@dataclass
class FlowField:
    """Per-pixel flow (du, dv) in pixels with a validity mask."""

    du: np.ndarray
    dv: np.ndarray
    valid: np.ndarray = field(default=None)
    low_confidence: bool = False

    def __post_init__(self):
        self.du = np.asarray(self.du, dtype=np.float32)
        self.dv = np.asarray(self.dv, dtype=np.float32)
        if self.du.shape != self.dv.shape:
            raise ValueError("du and dv must have the same shape")
        if self.valid is None:
            self.valid = np.ones(self.du.shape, dtype=bool)
        else:
            self.valid = np.asarray(self.valid, dtype=bool)

    def magnitude(self) -> np.ndarray:
        return np.hypot(self.du.astype(np.float64), self.dv.astype(np.float64))


# ---------------------------------------------------------------------------
# Horn-Schunck
# ---------------------------------------------------------------------------


def _downsample(img: np.ndarray) -> np.ndarray:
    blurred = ndimage.gaussian_filter(img, sigma=1.0, mode="nearest")
    return blurred[::2, ::2]


def _upsample_flow(f: np.ndarray, shape) -> np.ndarray:
    zy = shape[0] / f.shape[0]
    zx = shape[1] / f.shape[1]
    up = ndimage.zoom(f, (zy, zx), order=1, mode="nearest", grid_mode=True)
    return up[: shape[0], : shape[1]]


def _warp_by_flow(img: np.ndarray, du: np.ndarray, dv: np.ndarray) -> np.ndarray:
    h, w = img.shape
    ys, xs = np.mgrid[0:h, 0:w]
    coords = np.stack([np.clip(ys + dv, 0, h - 1), np.clip(xs + du, 0, w - 1)])
    return ndimage.map_coordinates(img, coords, order=1, mode="nearest")


def _hs_level(i1, i2, du, dv, alpha2, iterations):
    """Jacobi iterations of the Horn-Schunck update for the residual flow."""
    i2w = _warp_by_flow(i2, du, dv)
    ix = 0.5 * (np.gradient(i1, axis=1) + np.gradient(i2w, axis=1))
    iy = 0.5 * (np.gradient(i1, axis=0) + np.gradient(i2w, axis=0))
    it = i2w - i1
    kernel = np.array([[0, 0.25, 0], [0.25, 0, 0.25], [0, 0.25, 0]])
    u = np.zeros_like(i1)
    v = np.zeros_like(i1)
    denom = alpha2 + ix * ix + iy * iy
    for _ in range(iterations):
        u_avg = ndimage.convolve(u, kernel, mode="nearest")
        v_avg = ndimage.convolve(v, kernel, mode="nearest")
        shared = (ix * u_avg + iy * v_avg + it) / denom
        u = u_avg - ix * shared
        v = v_avg - iy * shared
    return du + u, dv + v


def estimate_flow(
    I1: IntensityFrame,
    I2: IntensityFrame,
    levels: int = 4,
    iterations: int = 100,
    smoothness: float = 0.02,
) -> FlowField:
    """Coarse-to-fine Horn-Schunck flow from I1 to I2.

    The smoothness weight is relative to the RMS intensity gradient of the
    inputs, which makes the estimate equivariant to a common rescaling of
    both images. Constant (gradient-free) inputs yield zero flow flagged
    ``low_confidence``.
    """
    if I1.pixels.shape != I2.pixels.shape:
        raise ValueError("frames must have matching shapes")
    if levels < 1:
        raise ValueError("levels must be >= 1")
    a = I1.pixels
    b = I2.pixels
    # regularizer weight relative to the mean squared intensity gradient, so
    # the estimate is invariant to a common rescaling of both images
    grad_sq = np.mean(np.gradient(a, axis=1) ** 2 + np.gradient(a, axis=0) ** 2) + np.mean(
        np.gradient(b, axis=1) ** 2 + np.gradient(b, axis=0) ** 2
    )
    if grad_sq < 1e-24:
        zeros = np.zeros(a.shape, dtype=np.float32)
        return FlowField(du=zeros, dv=zeros.copy(), low_confidence=True)
    alpha2 = smoothness * grad_sq

    pyramid = [(a, b)]
    for _ in range(levels - 1):
        if min(pyramid[-1][0].shape) < 8:
            break
        pyramid.append((_downsample(pyramid[-1][0]), _downsample(pyramid[-1][1])))

    du = np.zeros_like(pyramid[-1][0])
    dv = np.zeros_like(pyramid[-1][0])
    for lvl in range(len(pyramid) - 1, -1, -1):
        l1, l2 = pyramid[lvl]
        if du.shape != l1.shape:
            du = _upsample_flow(du, l1.shape) * 2.0
            dv = _upsample_flow(dv, l1.shape) * 2.0
        du, dv = _hs_level(l1, l2, du, dv, alpha2, iterations)
    return FlowField(du=du.astype(np.float32), dv=dv.astype(np.float32))


# ---------------------------------------------------------------------------
# Middlebury .flo I/O
# ---------------------------------------------------------------------------


def export_flow(path, flow: FlowField) -> None:
    """Write a Middlebury-style .flo file (magic, width, height, interleaved f32)."""
    h, w = flow.du.shape
    data = np.empty((h, w, 2), dtype="<f4")
    data[..., 0] = flow.du
    data[..., 1] = flow.dv
    with open(path, "wb") as f:
        f.write(struct.pack("<f", FLO_MAGIC))
        f.write(struct.pack("<ii", w, h))
        f.write(data.tobytes())


def import_flow(path) -> FlowField:
    """Parse a Middlebury-style .flo file; raises FlowFormatError on damage."""
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 4:
        raise FlowFormatError(f"{path}: truncated header at byte 0")
    (magic,) = struct.unpack_from("<f", raw, 0)
    if abs(magic - FLO_MAGIC) > 1e-3:
        raise FlowFormatError(f"{path}: bad magic {magic!r} at byte 0")
    if len(raw) < 12:
        raise FlowFormatError(f"{path}: truncated dimensions at byte {len(raw)}")
    w, h = struct.unpack_from("<ii", raw, 4)
    if w <= 0 or h <= 0:
        raise FlowFormatError(f"{path}: invalid dimensions {w}x{h} at byte 4")
    expected = 12 + 8 * w * h
    if len(raw) != expected:
        raise FlowFormatError(
            f"{path}: truncated payload at byte {len(raw)} (expected {expected} bytes)"
        )
    data = np.frombuffer(raw, dtype="<f4", offset=12).reshape(h, w, 2)
    return FlowField(du=data[..., 0].copy(), dv=data[..., 1].copy())


# ---------------------------------------------------------------------------
# Depth seeding and refinement
# ---------------------------------------------------------------------------


def depth_from_flow(flow: FlowField, epsilon: float = 0.1) -> DepthMap:
    """Seed inverse depth as the flow magnitude, floored and gauge-normalized.

    The magnitude floor ``epsilon`` keeps motionless pixels at a finite
    depth; afterwards the map is rescaled so the mean valid inverse depth
    equals 1 (the reconstruction is monocular, so scale is a gauge choice).
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if not flow.valid.any():
        raise DegenerateFlowError("flow field has no valid pixels; skip this frame pair")
    inv = np.maximum(flow.magnitude(), epsilon)
    return DepthMap(inv, flow.valid.copy()).normalized()


def edge_aware_refine(
    depth: DepthMap,
    guide: IntensityFrame,
    spatial_sigma: float = 4.0,
    range_sigma: float = 0.05,
    iterations: int = 3,
) -> DepthMap:
    """Iterated joint bilateral filtering of inverse depth, guided by intensity.

    Each iteration replaces every valid pixel with a weighted average of the
    valid pixels in its neighborhood, weighted by spatial distance and by
    similarity of the guide image. Invalid pixels neither contribute nor
    change. Output values stay inside the input's valid range (convex
    averaging).
    """
    if depth.inv_depth.shape != guide.pixels.shape:
        raise ValueError("depth and guide must have the same shape")
    if spatial_sigma <= 0 or range_sigma <= 0:
        raise ValueError("sigmas must be positive")
    radius = max(1, int(np.ceil(2.0 * spatial_sigma)))
    offsets = []
    for dy in range(-radius, radius + 1):
        for dx in range(-radius, radius + 1):
            s = np.exp(-(dx * dx + dy * dy) / (2.0 * spatial_sigma**2))
            if s > 1e-4:
                offsets.append((dy, dx, s))

    g = guide.pixels
    inv = depth.inv_depth.copy()
    valid = depth.valid
    vf = valid.astype(np.float64)
    h, w = inv.shape

    def shifted(arr, dy, dx):
        out = np.zeros_like(arr)
        ys0, ys1 = max(0, -dy), min(h, h - dy)
        xs0, xs1 = max(0, -dx), min(w, w - dx)
        out[ys0:ys1, xs0:xs1] = arr[ys0 + dy : ys1 + dy, xs0 + dx : xs1 + dx]
        return out

    for _ in range(iterations):
        num = np.zeros_like(inv)
        den = np.zeros_like(inv)
        for dy, dx, s in offsets:
            gn = shifted(g, dy, dx)
            dn = shifted(inv, dy, dx)
            vn = shifted(vf, dy, dx)
            wgt = s * np.exp(-((g - gn) ** 2) / (2.0 * range_sigma**2)) * vn
            num += wgt * dn
            den += wgt
        upd = den > 0
        inv = np.where(valid & upd, num / np.where(upd, den, 1.0), inv)
    return DepthMap(np.where(valid, inv, 0.0), valid.copy())
