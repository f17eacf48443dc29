"""Differentiable inverse warping, forward splatting, and blending.

Inverse warping gathers: every target pixel is backprojected with its inverse
depth, moved by a pose, projected into the source image and sampled
bilinearly. Forward splatting scatters: every source pixel projects into the
target view and distributes its intensity over the four enclosing target
pixels, weighted by bilinear overlap times an occlusion factor
``exp(gamma * inverse_depth)`` that favors nearer surfaces.

All functions are pure; gradients, where provided, are exact (analytic chain
rule through sampling and projection).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import CameraIntrinsics, DepthMap, IntensityFrame, Pose, transform_with_jacobian

# exponent clip keeps exp(gamma * inv_depth) finite for extreme depths
_MAX_EXPONENT = 500.0
# boundary slack absorbs projection roundoff at the image edges
_EDGE_TOL = 1e-9


@dataclass(frozen=True)
class WarpResult:
    """Warped image grid plus the per-pixel validity of the sample."""

    image: np.ndarray
    valid: np.ndarray


@dataclass
class SplatBuffer:
    """Scatter accumulators: intensity*weight and total splat weight per pixel."""

    accum: np.ndarray
    weight: np.ndarray

    def normalized(self) -> np.ndarray:
        """accum / weight where weight > 0, zero elsewhere."""
        out = np.zeros_like(self.accum)
        pos = self.weight > 0
        out[pos] = self.accum[pos] / self.weight[pos]
        return out


def bilinear_sample(image: np.ndarray, u, v):
    """Sample ``image`` at subpixel coordinates with analytic derivatives.

    ``u``/``v`` may be scalars or arrays. Returns
    ``(value, valid, dvalue_du, dvalue_dv)``. Samples are valid for
    ``0 <= u <= width-1`` and ``0 <= v <= height-1``; on the far edge the
    interpolation cell is clamped so integer boundary coordinates still
    reproduce the node value exactly. Out-of-bounds samples return zeros with
    ``valid=False``.
    """
    img = np.asarray(image, dtype=np.float64)
    h, w = img.shape
    u_arr = np.atleast_1d(np.asarray(u, dtype=np.float64))
    v_arr = np.atleast_1d(np.asarray(v, dtype=np.float64))
    valid = np.isfinite(u_arr) & np.isfinite(v_arr)
    valid &= (
        (u_arr >= -_EDGE_TOL)
        & (u_arr <= w - 1 + _EDGE_TOL)
        & (v_arr >= -_EDGE_TOL)
        & (v_arr <= h - 1 + _EDGE_TOL)
    )

    x0 = np.clip(np.floor(u_arr), 0, w - 2).astype(np.intp)
    y0 = np.clip(np.floor(v_arr), 0, h - 2).astype(np.intp)
    wx = np.clip(u_arr, 0, w - 1) - x0
    wy = np.clip(v_arr, 0, h - 1) - y0

    i00 = img[y0, x0]
    i01 = img[y0, x0 + 1]
    i10 = img[y0 + 1, x0]
    i11 = img[y0 + 1, x0 + 1]

    top = i00 * (1 - wx) + i01 * wx
    bot = i10 * (1 - wx) + i11 * wx
    value = top * (1 - wy) + bot * wy
    du = (i01 - i00) * (1 - wy) + (i11 - i10) * wy
    dv = bot - top

    value = np.where(valid, value, 0.0)
    du = np.where(valid, du, 0.0)
    dv = np.where(valid, dv, 0.0)
    if np.isscalar(u) and np.isscalar(v):
        return float(value[0]), bool(valid[0]), float(du[0]), float(dv[0])
    return value, valid, du, dv


def _target_grid(K: CameraIntrinsics):
    ys, xs = np.mgrid[0 : K.height, 0 : K.width]
    return xs.astype(np.float64).ravel(), ys.astype(np.float64).ravel()


def inverse_warp_detailed(
    source: np.ndarray,
    depth_at_target: DepthMap,
    twist: np.ndarray,
    K: CameraIntrinsics,
    with_grad: bool = False,
):
    """Core inverse warp on raw arrays, optionally with analytic gradients.

    Returns a dict with keys ``image`` (H, W), ``valid`` (H, W), and when
    ``with_grad`` also ``d_twist`` (H, W, 6) and ``d_inv_depth`` (H, W): the
    derivatives of each warped sample w.r.t. the 6 twist components and
    w.r.t. that pixel's own inverse depth.
    """
    img = np.asarray(source, dtype=np.float64)
    h, w = img.shape
    if (h, w) != (K.height, K.width):
        raise ValueError("source shape must match the camera intrinsics")
    xs, ys = _target_grid(K)
    q = depth_at_target.inv_depth.ravel()
    dvalid = depth_at_target.valid.ravel()

    safe_q = np.where(dvalid, q, 1.0)
    z = 1.0 / safe_q
    dirs = np.stack([(xs - K.cx) / K.fx, (ys - K.cy) / K.fy, np.ones_like(xs)], axis=-1)
    X = dirs * z[:, None]

    if with_grad:
        Xp, J_point = transform_with_jacobian(twist, X)
    else:
        from .core import se3_exp

        pose = se3_exp(twist)
        Xp = pose.apply(X)
        J_point = None

    zp = Xp[:, 2]
    front = zp > 1e-9
    safe_zp = np.where(front, zp, 1.0)
    up = K.fx * Xp[:, 0] / safe_zp + K.cx
    vp = K.fy * Xp[:, 1] / safe_zp + K.cy

    val, svalid, gdu, gdv = bilinear_sample(img, up, vp)
    valid = dvalid & front & svalid
    val = np.where(valid, val, 0.0)

    out = {
        "image": val.reshape(h, w),
        "valid": valid.reshape(h, w),
    }
    if with_grad:
        # projection Jacobian rows: du/dX' and dv/dX'
        inv_z = 1.0 / safe_zp
        du_dX = np.stack(
            [K.fx * inv_z, np.zeros_like(inv_z), -K.fx * Xp[:, 0] * inv_z * inv_z], axis=-1
        )
        dv_dX = np.stack(
            [np.zeros_like(inv_z), K.fy * inv_z, -K.fy * Xp[:, 1] * inv_z * inv_z], axis=-1
        )
        # chain gradient image -> pixel coords -> 3D point
        g_X = gdu[:, None] * du_dX + gdv[:, None] * dv_dX  # (n, 3)
        d_twist = np.einsum("ni,nij->nj", g_X, J_point)
        # X depends on inverse depth: dX/dq = -dirs / q^2, then rotate
        from .core import se3_exp

        R = se3_exp(twist).R
        dX_dq = -dirs / (safe_q * safe_q)[:, None]
        dXp_dq = dX_dq @ R.T
        d_q = np.einsum("ni,ni->n", g_X, dXp_dq)
        d_twist[~valid] = 0.0
        d_q[~valid] = 0.0
        out["d_twist"] = d_twist.reshape(h, w, 6)
        out["d_inv_depth"] = d_q.reshape(h, w)
    return out


def inverse_warp(
    source: IntensityFrame,
    depth_at_target: DepthMap,
    pose_target_to_source: Pose,
    K: CameraIntrinsics,
) -> WarpResult:
    """Warp ``source`` into the target view defined by its depth map.

    Invalid pixels (invalid depth, point behind the camera, or sample out of
    bounds) carry a zero sentinel and must be excluded downstream. An
    all-invalid result is legal.
    """
    res = inverse_warp_detailed(source.pixels, depth_at_target, pose_target_to_source.twist, K)
    return WarpResult(image=res["image"], valid=res["valid"])


def forward_splat(
    source: IntensityFrame,
    depth_at_source: DepthMap,
    pose_source_to_target: Pose,
    K: CameraIntrinsics,
    gamma: float = 10.0,
) -> SplatBuffer:
    """Scatter source intensities into the target view.

    Each valid source pixel projects through its depth and the pose; its
    intensity lands on the 4 enclosing target pixels with bilinear weights
    multiplied by ``exp(gamma * inv_depth_in_target)`` so nearer surfaces
    dominate where splats overlap (soft, differentiable occlusion handling).
    """
    img = source.pixels
    h, w = img.shape
    if (h, w) != (K.height, K.width):
        raise ValueError("source shape must match the camera intrinsics")
    xs, ys = _target_grid(K)
    q = depth_at_source.inv_depth.ravel()
    dvalid = depth_at_source.valid.ravel()

    safe_q = np.where(dvalid, q, 1.0)
    z = 1.0 / safe_q
    dirs = np.stack([(xs - K.cx) / K.fx, (ys - K.cy) / K.fy, np.ones_like(xs)], axis=-1)
    Xp = pose_source_to_target.apply(dirs * z[:, None])
    zp = Xp[:, 2]
    front = zp > 1e-9
    safe_zp = np.where(front, zp, 1.0)
    up = K.fx * Xp[:, 0] / safe_zp + K.cx
    vp = K.fy * Xp[:, 1] / safe_zp + K.cy
    ok = (
        dvalid
        & front
        & (up >= -_EDGE_TOL)
        & (up <= w - 1 + _EDGE_TOL)
        & (vp >= -_EDGE_TOL)
        & (vp <= h - 1 + _EDGE_TOL)
    )

    up = np.clip(up[ok], 0, w - 1)
    vp = np.clip(vp[ok], 0, h - 1)
    vals = img.ravel()[ok]
    occ = np.exp(np.minimum(gamma / safe_zp[ok], _MAX_EXPONENT))

    x0 = np.clip(np.floor(up), 0, w - 2).astype(np.intp)
    y0 = np.clip(np.floor(vp), 0, h - 2).astype(np.intp)
    wx = up - x0
    wy = vp - y0

    accum = np.zeros((h, w))
    weight = np.zeros((h, w))
    for dx, dy, bw in (
        (0, 0, (1 - wx) * (1 - wy)),
        (1, 0, wx * (1 - wy)),
        (0, 1, (1 - wx) * wy),
        (1, 1, wx * wy),
    ):
        wgt = bw * occ
        np.add.at(weight, (y0 + dy, x0 + dx), wgt)
        np.add.at(accum, (y0 + dy, x0 + dx), wgt * vals)
    return SplatBuffer(accum=accum, weight=weight)


def fill_holes(image: np.ndarray, known: np.ndarray) -> np.ndarray:
    """Fill unknown pixels by iterated 3x3 averaging of known neighbors."""
    out = image.copy()
    known = known.copy()
    while not known.all():
        kf = known.astype(np.float64)
        padded_v = np.pad(out * kf, 1)
        padded_k = np.pad(kf, 1)
        sum_v = np.zeros_like(out)
        sum_k = np.zeros_like(out)
        for dy in (0, 1, 2):
            for dx in (0, 1, 2):
                sum_v += padded_v[dy : dy + out.shape[0], dx : dx + out.shape[1]]
                sum_k += padded_k[dy : dy + out.shape[0], dx : dx + out.shape[1]]
        frontier = (~known) & (sum_k > 0)
        if not frontier.any():
            break  # fully disconnected holes (e.g. empty image): leave zeros
        out[frontier] = sum_v[frontier] / sum_k[frontier]
        known |= frontier
    return out


def blend(a: SplatBuffer, b: SplatBuffer, alpha: float) -> np.ndarray:
    """Alpha-blend two splat buffers into a single image grid.

    Pixels covered by both buffers mix their normalized values with weights
    ``alpha * w_a`` and ``(1 - alpha) * w_b``; pixels covered by exactly one
    buffer take that buffer's value regardless of alpha; pixels covered by
    neither are hole-filled by iterated 3x3 averaging.
    """
    if a.accum.shape != b.accum.shape:
        raise ValueError("splat buffers must have matching shapes")
    if not (0.0 <= alpha <= 1.0):
        raise ValueError("alpha must lie in [0, 1]")
    va = a.normalized()
    vb = b.normalized()
    has_a = a.weight > 0
    has_b = b.weight > 0
    wa = alpha * a.weight
    wb = (1.0 - alpha) * b.weight

    out = np.zeros_like(va)
    both = has_a & has_b
    denom = wa + wb
    # alpha at an endpoint can zero the combined weight even where both
    # buffers contribute; fall back to the surviving side there
    safe = both & (denom > 0)
    out[safe] = (wa[safe] * va[safe] + wb[safe] * vb[safe]) / denom[safe]
    endpoint = both & ~safe
    out[endpoint] = np.where(wa[endpoint] > 0, va[endpoint], vb[endpoint])
    only_a = has_a & ~has_b
    only_b = has_b & ~has_a
    out[only_a] = va[only_a]
    out[only_b] = vb[only_b]
    return fill_holes(out, has_a | has_b)
