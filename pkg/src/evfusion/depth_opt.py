"""Joint dense-depth and relative-pose estimation from two intensity frames.

Given successive frames I_k and I_k1, both inverse-depth grids and the
6-dof relative pose are refined together by Adam descent on a symmetric
photometric reconstruction loss plus an edge-aware smoothness prior on each
depth map. The pose twist parameterizes the transform taking points from
frame k's camera into frame k1's camera, so I_k1 warped with (d_k, xi)
reconstructs I_k and I_k warped with (d_k1, xi^-1) reconstructs I_k1.

Absolute values inside the losses are Charbonnier-smoothed,
``sqrt(x^2 + delta^2)`` with delta = 1e-3 (below one 8-bit quantization
step), so all gradients exist everywhere and are computed analytically.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import CameraIntrinsics, DepthMap, IntensityFrame, Pose, se3_exp
from .optim import Adam, OptimizerSettings, converged
from .warp import inverse_warp_detailed

CHARBONNIER_DELTA = 1e-3
# fraction of pixels that must survive a warp for the loss to be meaningful
MIN_VALID_FRACTION = 0.01
# inverse depth is kept strictly positive during optimization
INV_DEPTH_FLOOR = 1e-4


class DivergenceError(RuntimeError):
    """Optimization lost the plate; carries the best estimate found so far."""

    def __init__(self, message, estimate=None):
        super().__init__(message)
        self.estimate = estimate


@dataclass
class DepthPoseEstimate:
    """Result of the joint optimization; final_loss <= initial_loss holds."""

    d_k: DepthMap
    d_k1: DepthMap
    xi: Pose
    final_loss: float
    initial_loss: float
    iterations_run: int


def charbonnier(x: np.ndarray, delta: float = CHARBONNIER_DELTA):
    """Smoothed |x| and its derivative."""
    r = np.sqrt(x * x + delta * delta)
    return r, x / r


def _interior_mask(h: int, w: int) -> np.ndarray:
    m = np.zeros((h, w), dtype=bool)
    m[1:-1, 1:-1] = True
    return m


def _photometric_term(target, source, depth, twist, K, interior):
    """One directional warp residual: mean Charbonnier(source->target residual).

    Returns (loss, d_twist (6,), d_inv_depth (H, W), n_valid).
    """
    res = inverse_warp_detailed(source, depth, twist, K, with_grad=True)
    valid = res["valid"] & interior
    n = int(valid.sum())
    if n == 0:
        return 0.0, np.zeros(6), np.zeros_like(target), 0
    r = np.where(valid, res["image"] - target, 0.0)
    rho, drho = charbonnier(r)
    loss = float(rho[valid].sum() / n)
    scale = np.where(valid, drho / n, 0.0)
    g_twist = np.einsum("yx,yxj->j", scale, res["d_twist"])
    g_q = scale * res["d_inv_depth"]
    return loss, g_twist, g_q, n


def photometric_loss(
    I_k: IntensityFrame,
    I_k1: IntensityFrame,
    d_k: DepthMap,
    d_k1: DepthMap,
    xi: Pose,
    K: CameraIntrinsics,
):
    """Symmetric photometric reconstruction loss with analytic gradients.

    Returns ``(loss, grad_d_k, grad_d_k1, grad_twist)``. Border pixels
    (1-pixel frame) are excluded: bilinear gradients are undefined there.
    Raises :class:`DivergenceError` when either warp keeps less than 1% of
    the pixels valid (re-initialize before continuing).
    """
    h, w = I_k.pixels.shape
    interior = _interior_mask(h, w)
    twist = xi.twist
    l1, gt1, gq_k, n1 = _photometric_term(I_k.pixels, I_k1.pixels, d_k, twist, K, interior)
    l2, gt2, gq_k1, n2 = _photometric_term(I_k1.pixels, I_k.pixels, d_k1, -twist, K, interior)
    min_n = MIN_VALID_FRACTION * h * w
    if n1 < min_n or n2 < min_n:
        raise DivergenceError(
            f"photometric overlap collapsed ({n1} / {n2} valid pixels); "
            "re-initialize depth and pose"
        )
    # the second warp uses the inverted pose exp(-twist); chain rule flips sign
    grad_twist = gt1 - gt2
    return l1 + l2, gq_k, gq_k1, grad_twist


def smoothness_loss(d: DepthMap, I: IntensityFrame, beta: float):
    """Edge-aware first-order smoothness of inverse depth.

    Forward differences of the depth, Charbonnier-smoothed, each damped by
    ``exp(-beta * |forward difference of I|)``; averaged over every valid
    difference site (both pixels valid and inside the image). Returns
    ``(loss, grad_d)``.
    """
    if d.inv_depth.shape != I.pixels.shape:
        raise ValueError("depth and intensity shapes must match")
    if beta < 0:
        raise ValueError("beta must be non-negative")
    q = d.inv_depth
    img = I.pixels
    vx = d.valid[:, :-1] & d.valid[:, 1:]
    vy = d.valid[:-1, :] & d.valid[1:, :]
    n = int(vx.sum() + vy.sum())
    grad = np.zeros_like(q)
    if n == 0:
        return 0.0, grad
    dx = q[:, 1:] - q[:, :-1]
    dy = q[1:, :] - q[:-1, :]
    wx = np.exp(-beta * np.abs(img[:, 1:] - img[:, :-1]))
    wy = np.exp(-beta * np.abs(img[1:, :] - img[:-1, :]))
    rx, drx = charbonnier(dx)
    ry, dry = charbonnier(dy)
    loss = float((rx * wx)[vx].sum() + (ry * wy)[vy].sum()) / n
    gx = np.where(vx, drx * wx / n, 0.0)
    gy = np.where(vy, dry * wy / n, 0.0)
    grad[:, 1:] += gx
    grad[:, :-1] -= gx
    grad[1:, :] += gy
    grad[:-1, :] -= gy
    return loss, grad


def _objective(I_k, I_k1, q_k, q_k1, valid_k, valid_k1, twist, K, lambda_sm, beta):
    d_k = DepthMap(q_k, valid_k)
    d_k1 = DepthMap(q_k1, valid_k1)
    ph, g_qk, g_qk1, g_tw = photometric_loss(I_k, I_k1, d_k, d_k1, se3_exp(twist), K)
    s_k, gs_k = smoothness_loss(d_k, I_k, beta)
    s_k1, gs_k1 = smoothness_loss(d_k1, I_k1, beta)
    loss = ph + lambda_sm * (s_k + s_k1)
    return loss, g_qk + lambda_sm * gs_k, g_qk1 + lambda_sm * gs_k1, g_tw


def estimate_depth_and_pose(
    I_k: IntensityFrame,
    I_k1: IntensityFrame,
    init_d_k: DepthMap,
    init_d_k1: DepthMap,
    K: CameraIntrinsics,
    settings: OptimizerSettings | None = None,
    lambda_sm: float = 1.0,
    beta: float = 10.0,
    init_xi: Pose | None = None,
) -> DepthPoseEstimate:
    """Adam descent on the joint photometric + smoothness objective.

    Depths come from the flow-based seeding (already gauge-normalized); the
    pose starts at zero twist unless ``init_xi`` is given. Every 50
    iterations the gauge is re-fixed (mean valid inverse depth of d_k back
    to 1) with the translation part of the twist compensated. The best
    iterate is returned, so ``final_loss <= initial_loss`` by construction.
    """
    settings = settings or OptimizerSettings()
    valid_k = init_d_k.valid.copy()
    valid_k1 = init_d_k1.valid.copy()
    twist_step = settings.twist_step_size or settings.step_size
    opt = Adam(
        params={
            "q_k": init_d_k.inv_depth,
            "q_k1": init_d_k1.inv_depth,
            "twist": np.zeros(6) if init_xi is None else init_xi.twist.copy(),
        },
        step_sizes={"q_k": settings.step_size, "q_k1": settings.step_size, "twist": twist_step},
        beta1=settings.beta1,
        beta2=settings.beta2,
        eps=settings.eps,
    )

    def evaluate():
        return _objective(
            I_k,
            I_k1,
            opt.params["q_k"],
            opt.params["q_k1"],
            valid_k,
            valid_k1,
            opt.params["twist"],
            K,
            lambda_sm,
            beta,
        )

    loss, g_qk, g_qk1, g_tw = evaluate()
    initial_loss = loss
    best_loss = loss
    best = {k: v.copy() for k, v in opt.params.items()}
    history = [loss]
    bad_streak = 0
    iterations = 0
    for iterations in range(1, settings.max_iterations + 1):
        opt.step({"q_k": g_qk, "q_k1": g_qk1, "twist": g_tw})
        np.maximum(opt.params["q_k"], INV_DEPTH_FLOOR, out=opt.params["q_k"])
        np.maximum(opt.params["q_k1"], INV_DEPTH_FLOOR, out=opt.params["q_k1"])
        if iterations % 50 == 0:
            mean_q = opt.params["q_k"][valid_k].mean()
            if mean_q > 0:
                opt.rescale("q_k", 1.0 / mean_q)
                opt.rescale("q_k1", 1.0 / mean_q)
                # inv_depth -> s * inv_depth pairs with translation -> t / s
                tw = opt.params["twist"]
                tw[3:] *= mean_q
        loss, g_qk, g_qk1, g_tw = evaluate()
        history.append(loss)
        if loss < best_loss:
            best_loss = loss
            best = {k: v.copy() for k, v in opt.params.items()}
        bad_streak = bad_streak + 1 if loss > 2.0 * initial_loss else 0
        if bad_streak >= 20:
            raise DivergenceError(
                f"loss exceeded twice its initial value for {bad_streak} iterations",
                estimate=_estimate_from(best, valid_k, valid_k1, best_loss, initial_loss, iterations),
            )
        if converged(history, settings.convergence_tol):
            break
    return _estimate_from(best, valid_k, valid_k1, best_loss, initial_loss, iterations)


def _estimate_from(params, valid_k, valid_k1, final_loss, initial_loss, iterations):
    return DepthPoseEstimate(
        d_k=DepthMap(params["q_k"], valid_k),
        d_k1=DepthMap(params["q_k1"], valid_k1),
        xi=se3_exp(params["twist"]),
        final_loss=final_loss,
        initial_loss=initial_loss,
        iterations_run=iterations,
    )


# ---------------------------------------------------------------------------
# PFM depth I/O (metric depth = 1 / inverse depth, invalid pixels stored as 0)
# ---------------------------------------------------------------------------


def export_pfm(path, depth: DepthMap) -> None:
    """Write metric depth as grayscale PFM (little-endian, bottom-up rows)."""
    metric = np.zeros(depth.inv_depth.shape, dtype="<f4")
    metric[depth.valid] = (1.0 / depth.inv_depth[depth.valid]).astype("<f4")
    h, w = metric.shape
    with open(path, "wb") as f:
        f.write(b"Pf\n")
        f.write(f"{w} {h}\n".encode())
        f.write(b"-1.0\n")
        f.write(metric[::-1].tobytes())


def import_pfm(path) -> DepthMap:
    """Read a grayscale PFM written by :func:`export_pfm`; zeros are invalid."""
    with open(path, "rb") as f:
        if f.readline().strip() != b"Pf":
            raise ValueError(f"{path}: not a grayscale PFM file")
        w, h = (int(x) for x in f.readline().split())
        scale = float(f.readline())
        dtype = "<f4" if scale < 0 else ">f4"
        data = np.frombuffer(f.read(4 * w * h), dtype=dtype).reshape(h, w)[::-1]
    metric = data.astype(np.float64)
    valid = metric > 0
    inv = np.zeros_like(metric)
    inv[valid] = 1.0 / metric[valid]
    return DepthMap(inv, valid)
