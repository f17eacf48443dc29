"""Temporally dense 6-dof pose estimation by direct photometric matching.

For every intermediate pseudo-intensity frame E_j between two intensity
frames, two twists are refined jointly: ``xi_k_j`` (points in frame k's
camera to frame j's camera) and ``xi_k1_j`` (frame k1's camera to frame j's
camera). The objective is the photometric mismatch of E_j warped onto the
two reference pseudo-frames, plus a regularizer that chains the two twists
into the frame-k-to-frame-k1 transform and scores it on the real intensity
frames through d_k. Optimization is Adam over a 3-level image pyramid.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .core import CameraIntrinsics, DepthMap, IntensityFrame, Pose, se3_compose, se3_exp, se3_invert
from .depth_opt import CHARBONNIER_DELTA, MIN_VALID_FRACTION, DivergenceError, charbonnier
from .events import PseudoIntensityFrame
from .optim import Adam, OptimizerSettings, converged
from .warp import bilinear_sample, inverse_warp_detailed
from .core import transform_with_jacobian

PYRAMID_LEVELS = 3


@dataclass
class IntermediatePoseEstimate:
    """Pose pair for one event block with the three final loss terms."""

    xi_k_j: Pose
    xi_k1_j: Pose
    losses: tuple
    converged: bool
    initial_loss: float = np.nan
    final_loss: float = np.nan


def composed_frame_pose(xi_k_j: Pose, xi_k1_j: Pose) -> Pose:
    """Chain the block poses into the frame-k to frame-k1 transform.

    Applies ``xi_k_j`` (k -> j) first, then the inverse of ``xi_k1_j``
    (j -> k1); comparable with the pose from the two-frame depth stage.
    """
    return se3_compose(se3_invert(xi_k1_j), xi_k_j)


def pose_photometric_loss(
    E_ref: PseudoIntensityFrame,
    E_j: PseudoIntensityFrame,
    d_ref: DepthMap,
    xi: Pose,
    K: CameraIntrinsics,
):
    """Mean Charbonnier residual of E_j inverse-warped onto E_ref.

    Returns ``(loss, grad_twist)`` with the exact 6-vector gradient. Raises
    :class:`DivergenceError` if fewer than 1% of the pixels stay valid.
    """
    loss, grad, n = _masked_warp_term(E_ref.pixels, E_j.pixels, d_ref, xi.twist, K)
    if n < MIN_VALID_FRACTION * E_ref.pixels.size:
        raise DivergenceError(f"pose warp overlap collapsed ({n} valid pixels)")
    return loss, grad


def _masked_warp_term(target, source, depth, twist, K, interior_only=True):
    res = inverse_warp_detailed(source, depth, twist, K, with_grad=True)
    valid = res["valid"]
    if interior_only:
        inner = np.zeros_like(valid)
        inner[1:-1, 1:-1] = True
        valid = valid & inner
    n = int(valid.sum())
    if n == 0:
        return 0.0, np.zeros(6), 0
    r = np.where(valid, res["image"] - target, 0.0)
    rho, drho = charbonnier(r)
    loss = float(rho[valid].sum() / n)
    scale = np.where(valid, drho / n, 0.0)
    grad = np.einsum("yx,yxj->j", scale, res["d_twist"])
    return loss, grad, n


def _composed_warp_term(I_k, I_k1, d_k, twist_kj, twist_k1j, K):
    """Regularizer: warp I_k1 onto I_k through exp(-t2) o exp(t1) with d_k.

    Returns ``(loss, grad_t1, grad_t2)``; both twist gradients are exact
    (chain rule through the two stacked transforms).
    """
    h, w = I_k.shape
    ys, xs = np.mgrid[0:h, 0:w]
    q = d_k.inv_depth.ravel()
    dvalid = d_k.valid.ravel()
    safe_q = np.where(dvalid, q, 1.0)
    dirs = np.stack(
        [
            (xs.ravel() - K.cx) / K.fx,
            (ys.ravel() - K.cy) / K.fy,
            np.ones(h * w),
        ],
        axis=-1,
    )
    X = dirs / safe_q[:, None]
    Y, J1 = transform_with_jacobian(twist_kj, X)          # k -> j
    Z, J2neg = transform_with_jacobian(-twist_k1j, Y)     # j -> k1
    R2 = se3_exp(-twist_k1j).R
    zp = Z[:, 2]
    front = zp > 1e-9
    safe_zp = np.where(front, zp, 1.0)
    up = K.fx * Z[:, 0] / safe_zp + K.cx
    vp = K.fy * Z[:, 1] / safe_zp + K.cy
    val, svalid, gdu, gdv = bilinear_sample(I_k1, up, vp)

    inner = np.zeros((h, w), dtype=bool)
    inner[1:-1, 1:-1] = True
    valid = dvalid & front & svalid & inner.ravel()
    n = int(valid.sum())
    if n == 0:
        return 0.0, np.zeros(6), np.zeros(6), 0
    r = np.where(valid, val - I_k.ravel(), 0.0)
    rho, drho = charbonnier(r)
    loss = float(rho[valid].sum() / n)
    scale = np.where(valid, drho / n, 0.0)

    inv_z = 1.0 / safe_zp
    du_dZ = np.stack([K.fx * inv_z, np.zeros_like(inv_z), -K.fx * Z[:, 0] * inv_z**2], axis=-1)
    dv_dZ = np.stack([np.zeros_like(inv_z), K.fy * inv_z, -K.fy * Z[:, 1] * inv_z**2], axis=-1)
    g_Z = (scale * gdu)[:, None] * du_dZ + (scale * gdv)[:, None] * dv_dZ
    # Z = exp(-t2) @ Y: dZ/dt1 = R(-t2) @ dY/dt1, dZ/dt2 = -(d exp(s) Y / ds at s=-t2)
    dZ_dt1 = np.einsum("ij,njk->nik", R2, J1)
    g_t1 = np.einsum("ni,nij->j", g_Z, dZ_dt1)
    g_t2 = -np.einsum("ni,nij->j", g_Z, J2neg)
    return loss, g_t1, g_t2, n


def _downsample_image(img: np.ndarray) -> np.ndarray:
    return ndimage.gaussian_filter(img, sigma=1.0, mode="nearest")[::2, ::2]


def _downsample_depth(d: DepthMap) -> DepthMap:
    h2, w2 = d.inv_depth.shape[0] // 2, d.inv_depth.shape[1] // 2
    inv = d.inv_depth[: 2 * h2, : 2 * w2].reshape(h2, 2, w2, 2)
    val = d.valid[: 2 * h2, : 2 * w2].reshape(h2, 2, w2, 2)
    counts = val.sum(axis=(1, 3))
    sums = (inv * val).sum(axis=(1, 3))
    out_valid = counts > 0
    out = np.zeros((h2, w2))
    out[out_valid] = sums[out_valid] / counts[out_valid]
    return DepthMap(out, out_valid)


def _total_objective(arrs, t1, t2, lambda_r):
    E_k0, E_k1_0, E_kj, d_k, d_k1, I_k, I_k1, K = arrs
    l1, g1, n1 = _masked_warp_term(E_k0, E_kj, d_k, t1, K)
    l2, g2, n2 = _masked_warp_term(E_k1_0, E_kj, d_k1, t2, K)
    min_n = MIN_VALID_FRACTION * E_k0.size
    if n1 < min_n or n2 < min_n:
        raise DivergenceError(f"pose warp overlap collapsed ({n1} / {n2} valid pixels)")
    lr, gr1, gr2, _ = _composed_warp_term(I_k, I_k1, d_k, t1, t2, K)
    total = l1 + l2 + lambda_r * lr
    grad1 = g1 + lambda_r * gr1
    grad2 = g2 + lambda_r * gr2
    return total, grad1, grad2, (l1, l2, lr)


def estimate_intermediate_pose(
    E_k0: PseudoIntensityFrame,
    E_k1_0: PseudoIntensityFrame,
    E_kj: PseudoIntensityFrame,
    d_k: DepthMap,
    d_k1: DepthMap,
    I_k: IntensityFrame,
    I_k1: IntensityFrame,
    K: CameraIntrinsics,
    lambda_r: float = 0.01,
    settings: OptimizerSettings | None = None,
    init: tuple[Pose, Pose] | None = None,
) -> IntermediatePoseEstimate:
    """Estimate (xi_k_j, xi_k1_j) for one intermediate pseudo-frame.

    ``init`` should be the previous block's solution (warm start), or
    ``(identity, inverse of the two-frame pose)`` for the first block.
    Coarse-to-fine over a 3-level pyramid; the returned estimate is the best
    iterate seen at the finest level, so its total loss never exceeds the
    loss at ``init``.
    """
    settings = settings or OptimizerSettings(step_size=2e-3, max_iterations=300)
    if init is None:
        from .core import identity_pose

        init = (identity_pose(), identity_pose())
    t1 = init[0].twist.copy()
    t2 = init[1].twist.copy()

    levels = [(E_k0.pixels, E_k1_0.pixels, E_kj.pixels, d_k, d_k1, I_k.pixels, I_k1.pixels, K)]
    for _ in range(PYRAMID_LEVELS - 1):
        e0, e10, ej, dk, dk1, ik, ik1, kk = levels[-1]
        if min(e0.shape) < 16:
            break
        levels.append(
            (
                _downsample_image(e0),
                _downsample_image(e10),
                _downsample_image(ej),
                _downsample_depth(dk),
                _downsample_depth(dk1),
                _downsample_image(ik),
                _downsample_image(ik1),
                kk.scaled(0.5),
            )
        )

    ok = True
    for arrs in reversed(levels):
        finest = arrs is levels[0]
        try:
            t1, t2, level_best = _descend(arrs, t1, t2, lambda_r, settings)
        except DivergenceError:
            ok = False
            break

    # the pyramid is a heuristic: never return worse than the caller's init
    initial_loss, _, _, init_terms = _total_objective(levels[0], init[0].twist, init[1].twist, lambda_r)
    try:
        final_loss, _, _, terms = _total_objective(levels[0], t1, t2, lambda_r)
    except DivergenceError:
        ok = False
        final_loss, terms = np.inf, init_terms
    if final_loss > initial_loss:
        t1, t2 = init[0].twist.copy(), init[1].twist.copy()
        final_loss, terms = initial_loss, init_terms
        ok = False
    return IntermediatePoseEstimate(
        xi_k_j=se3_exp(t1),
        xi_k1_j=se3_exp(t2),
        losses=terms,
        converged=ok,
        initial_loss=initial_loss,
        final_loss=final_loss,
    )


def _descend(arrs, t1, t2, lambda_r, settings):
    opt = Adam(
        params={"t1": t1, "t2": t2},
        step_sizes={"t1": settings.step_size, "t2": settings.step_size},
        beta1=settings.beta1,
        beta2=settings.beta2,
        eps=settings.eps,
    )
    loss, g1, g2, _ = _total_objective(arrs, opt.params["t1"], opt.params["t2"], lambda_r)
    best = (loss, opt.params["t1"].copy(), opt.params["t2"].copy())
    history = [loss]
    for _ in range(settings.max_iterations):
        opt.step({"t1": g1, "t2": g2})
        loss, g1, g2, _ = _total_objective(arrs, opt.params["t1"], opt.params["t2"], lambda_r)
        history.append(loss)
        if loss < best[0]:
            best = (loss, opt.params["t1"].copy(), opt.params["t2"].copy())
        if converged(history, settings.convergence_tol):
            break
    return best[1], best[2], best[0]


# ---------------------------------------------------------------------------
# Trajectory text I/O: one line per block, `t_mid tx ty tz wx wy wz`
# ---------------------------------------------------------------------------


def save_trajectory(path, times, poses: list[Pose]) -> None:
    with open(path, "w") as f:
        for t, p in zip(times, poses):
            w = [float(x) for x in p.twist[:3]]
            v = [float(x) for x in p.twist[3:]]
            f.write(
                f"{float(t)!r} {v[0]!r} {v[1]!r} {v[2]!r} {w[0]!r} {w[1]!r} {w[2]!r}\n"
            )


def load_trajectory(path):
    times = []
    poses = []
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 7:
                raise ValueError(f"{path} line {lineno}: expected 7 values")
            vals = [float(x) for x in parts]
            times.append(vals[0])
            twist = np.array([vals[4], vals[5], vals[6], vals[1], vals[2], vals[3]])
            poses.append(se3_exp(twist))
    return times, poses
