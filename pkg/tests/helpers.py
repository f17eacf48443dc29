"""Shared test utilities: kink-safe gradient-check instances, finite
difference oracles, and pose/depth error metrics.

Bilinear sampling is only piecewise smooth, so gradient-check instances keep
every warped sample's subpixel phase near 0.5 (a half-pixel base translation
plus perturbations far smaller than a cell). Central differences then stay
on a single smooth piece and are a valid oracle for the analytic gradients.
"""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from evfusion.core import CameraIntrinsics, DepthMap, IntensityFrame, se3_exp


def smooth_noise(rng, shape, sigma=2.0, lo=0.1, hi=0.9):
    g = ndimage.gaussian_filter(rng.standard_normal(shape), sigma, mode="wrap")
    g = (g - g.min()) / (g.max() - g.min())
    return lo + (hi - lo) * g


def small_K(n=16):
    return CameraIntrinsics(
        fx=float(n), fy=float(n), cx=(n - 1) / 2, cy=(n - 1) / 2, width=n, height=n
    )


def make_depth_instance(seed: int, n: int = 16):
    """Random 16x16 photometric-loss instance with kink-safe geometry."""
    rng = np.random.default_rng(seed)
    K = small_K(n)
    I_k = IntensityFrame(pixels=smooth_noise(rng, (n, n)))
    I_k1 = IntensityFrame(pixels=smooth_noise(rng, (n, n)))
    q0 = rng.uniform(0.8, 1.2)
    d_k = DepthMap(q0 + 0.02 * rng.standard_normal((n, n)))
    d_k1 = DepthMap(q0 + 0.02 * rng.standard_normal((n, n)))
    base = 0.5 / (K.fx * q0)
    twist = np.concatenate(
        [rng.normal(scale=2e-4, size=3), [base, base, 0.0] + rng.normal(scale=3e-4, size=3)]
    )
    return {"I_k": I_k, "I_k1": I_k1, "d_k": d_k, "d_k1": d_k1, "twist": twist, "K": K}


def relative_error(analytic: np.ndarray, fd: np.ndarray) -> float:
    analytic = np.asarray(analytic).ravel()
    fd = np.asarray(fd).ravel()
    return float(np.linalg.norm(analytic - fd) / max(np.linalg.norm(fd), 1e-12))


def central_difference(fn, x0: np.ndarray, h: float) -> np.ndarray:
    """Dense central-difference gradient of a scalar function."""
    x0 = np.asarray(x0, dtype=np.float64)
    g = np.zeros(x0.size)
    flat = x0.ravel()
    for i in range(flat.size):
        d = np.zeros(flat.size)
        d[i] = h
        g[i] = (fn((flat + d).reshape(x0.shape)) - fn((flat - d).reshape(x0.shape))) / (2 * h)
    return g.reshape(x0.shape)


def rotation_error_deg(R_est: np.ndarray, R_gt: np.ndarray) -> float:
    cos = np.clip((np.trace(R_est.T @ R_gt) - 1.0) / 2.0, -1.0, 1.0)
    return float(np.degrees(np.arccos(cos)))


def translation_direction_error_deg(t_est: np.ndarray, t_gt: np.ndarray) -> float:
    na, nb = np.linalg.norm(t_est), np.linalg.norm(t_gt)
    if na < 1e-12 or nb < 1e-12:
        return 0.0 if na < 1e-12 and nb < 1e-12 else 90.0
    cos = np.clip(np.dot(t_est, t_gt) / (na * nb), -1.0, 1.0)
    return float(np.degrees(np.arccos(cos)))


def median_inv_depth_relative_error(est: DepthMap, gt: DepthMap) -> float:
    """Median per-pixel relative error after aligning the monocular scale."""
    mask = est.valid & gt.valid
    e = est.inv_depth[mask]
    g = gt.inv_depth[mask]
    scale = np.median(g / e)
    return float(np.median(np.abs(scale * e - g) / g))
