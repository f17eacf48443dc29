"""Camera model, rigid-motion algebra, and image containers.

Conventions used throughout the package:

- Images are numpy arrays indexed ``[row, col]`` = ``[y, x]`` (height first).
- Pixel coordinates ``(u, v)`` map to ``(x, y)``; integer coordinates sit on
  pixel centers.
- A :class:`Pose` is the rigid transform ``X' = R @ X + t`` taking points from
  the target/reference camera frame into the source frame, parameterized by a
  6-vector twist ``(wx, wy, wz, vx, vy, vz)`` through the SE(3) exponential
  map (rotation components first, radians).
- Depth is stored as inverse depth (1 / scene units); larger is closer.

All containers are treated as immutable after construction (arrays are marked
read-only), so every operation here is a pure function safe for concurrent
callers.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Below this rotation magnitude the closed-form Rodrigues coefficients are
# replaced by their Taylor series (cancellation-safe).
_SMALL_ANGLE = 1e-2


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole camera: focal lengths, principal point, sensor size (pixels)."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the sensor")

    def scaled(self, factor: float) -> "CameraIntrinsics":
        """Intrinsics of the same camera at a resized image (pyramids)."""
        return CameraIntrinsics(
            fx=self.fx * factor,
            fy=self.fy * factor,
            cx=self.cx * factor,
            cy=self.cy * factor,
            width=max(1, int(round(self.width * factor))),
            height=max(1, int(round(self.height * factor))),
        )


def load_calibration(path) -> CameraIntrinsics:
    """Read a plain-text calibration file: one line ``fx fy cx cy width height``."""
    with open(path) as f:
        tokens = f.read().split()
    if len(tokens) != 6:
        raise ValueError(f"calibration file {path}: expected 6 values, got {len(tokens)}")
    fx, fy, cx, cy = (float(t) for t in tokens[:4])
    w, h = int(tokens[4]), int(tokens[5])
    return CameraIntrinsics(fx=fx, fy=fy, cx=cx, cy=cy, width=w, height=h)


def save_calibration(path, K: CameraIntrinsics) -> None:
    with open(path, "w") as f:
        f.write(
            f"{float(K.fx)!r} {float(K.fy)!r} {float(K.cx)!r} {float(K.cy)!r} "
            f"{int(K.width)} {int(K.height)}\n"
        )


# ---------------------------------------------------------------------------
# SE(3)
# ---------------------------------------------------------------------------


def _skew(w: np.ndarray) -> np.ndarray:
    return np.array(
        [
            [0.0, -w[2], w[1]],
            [w[2], 0.0, -w[0]],
            [-w[1], w[0], 0.0],
        ]
    )


def _rot_coeffs(theta: float):
    """Rodrigues coefficients (s, c, b): R = I + s W + c W^2, V = I + c W + b W^2."""
    if theta < _SMALL_ANGLE:
        t2 = theta * theta
        s = 1.0 - t2 / 6.0 + t2 * t2 / 120.0
        c = 0.5 - t2 / 24.0 + t2 * t2 / 720.0
        b = 1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0
    else:
        s = np.sin(theta) / theta
        c = (1.0 - np.cos(theta)) / (theta * theta)
        b = (theta - np.sin(theta)) / (theta * theta * theta)
    return s, c, b


class Pose:
    """Rigid transform backed by a twist vector.

    ``R`` and ``t`` are cached from ``se3_exp(twist)`` at construction; the
    instance is immutable.
    """

    __slots__ = ("twist", "R", "t")

    def __init__(self, twist: np.ndarray, R: np.ndarray, t: np.ndarray):
        self.twist = _readonly(np.asarray(twist).reshape(6))
        self.R = _readonly(np.asarray(R).reshape(3, 3))
        self.t = _readonly(np.asarray(t).reshape(3))

    @property
    def omega(self) -> np.ndarray:
        return self.twist[:3]

    @property
    def v(self) -> np.ndarray:
        return self.twist[3:]

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform an (N, 3) array of points: R @ X + t."""
        return points @ self.R.T + self.t

    def inverse(self) -> "Pose":
        return se3_exp(-self.twist)

    def matrix(self) -> np.ndarray:
        """4x4 homogeneous matrix."""
        M = np.eye(4)
        M[:3, :3] = self.R
        M[:3, 3] = self.t
        return M

    def rotation_angle_deg(self) -> float:
        cos = np.clip((np.trace(self.R) - 1.0) / 2.0, -1.0, 1.0)
        return float(np.degrees(np.arccos(cos)))

    def __repr__(self):
        return f"Pose(twist={np.array2string(self.twist, precision=5)})"


def identity_pose() -> Pose:
    return Pose(np.zeros(6), np.eye(3), np.zeros(3))


def se3_exp(twist: np.ndarray) -> Pose:
    """Exponential map of a twist (wx, wy, wz, vx, vy, vz) to a Pose.

    R by the Rodrigues formula, t = V(w) @ v with the standard SE(3)
    left Jacobian V; series expansions below ``_SMALL_ANGLE``.
    """
    twist = np.asarray(twist, dtype=np.float64).reshape(6)
    if not np.all(np.isfinite(twist)):
        raise ValueError("twist components must be finite")
    w, v = twist[:3], twist[3:]
    theta = float(np.linalg.norm(w))
    s, c, b = _rot_coeffs(theta)
    W = _skew(w)
    W2 = W @ W
    R = np.eye(3) + s * W + c * W2
    V = np.eye(3) + c * W + b * W2
    return Pose(twist, R, V @ v)


def se3_log(R: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Inverse of :func:`se3_exp`; valid for rotation angles strictly below pi."""
    R = np.asarray(R, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64).reshape(3)
    cos = np.clip((np.trace(R) - 1.0) / 2.0, -1.0, 1.0)
    theta = float(np.arccos(cos))
    if theta < _SMALL_ANGLE:
        # log(R) ~ (R - R^T)/2 with a second-order angle correction
        w = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
        w *= 0.5 * (1.0 + theta * theta / 6.0)
    elif np.pi - theta < 1e-6:
        # near pi: extract the axis from the symmetric part
        A = (R + np.eye(3)) / 2.0
        axis = np.sqrt(np.maximum(np.diagonal(A), 0.0))
        k = int(np.argmax(axis))
        axis = A[:, k] / max(axis[k], 1e-12)
        axis /= np.linalg.norm(axis)
        # fix the sign using the skew part
        w_skew = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
        if np.dot(w_skew, axis) < 0:
            axis = -axis
        w = axis * theta
    else:
        w = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
        w *= theta / (2.0 * np.sin(theta))
    W = _skew(w)
    W2 = W @ W
    if theta < _SMALL_ANGLE:
        t2 = theta * theta
        coeff = 1.0 / 12.0 + t2 / 720.0 + t2 * t2 / 30240.0
    else:
        coeff = (1.0 - theta * np.sin(theta) / (2.0 * (1.0 - np.cos(theta)))) / (theta * theta)
    Vinv = np.eye(3) - 0.5 * W + coeff * W2
    return np.concatenate([w, Vinv @ t])


def se3_compose(a: Pose, b: Pose) -> Pose:
    """Composition applying ``b`` first, then ``a``: R = Ra Rb, t = Ra tb + ta."""
    R = a.R @ b.R
    t = a.R @ b.t + a.t
    return Pose(se3_log(R, t), R, t)


def se3_invert(p: Pose) -> Pose:
    """Inverse transform; with the exponential parameterization this is exp(-twist)."""
    return p.inverse()


def pose_from_rt(R: np.ndarray, t: np.ndarray) -> Pose:
    return Pose(se3_log(R, t), R, t)


def transform_with_jacobian(twist: np.ndarray, points: np.ndarray):
    """Apply exp(twist) to (N, 3) points and return d(transformed)/d(twist).

    Returns ``(Xp, J)`` with ``Xp`` of shape (N, 3) and ``J`` of shape
    (N, 3, 6); columns 0..2 differentiate w.r.t. the rotation components,
    columns 3..5 w.r.t. the translation components of the twist. Everything
    is exact (closed form / series), no finite differences.
    """
    twist = np.asarray(twist, dtype=np.float64).reshape(6)
    X = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    n = X.shape[0]
    w, v = twist[:3], twist[3:]
    theta = float(np.linalg.norm(w))
    s, c, b = _rot_coeffs(theta)
    # derivatives of the scalar coefficients divided by theta (even functions,
    # finite at theta = 0)
    if theta < _SMALL_ANGLE:
        t2 = theta * theta
        ds = -1.0 / 3.0 + t2 / 30.0 - t2 * t2 / 840.0
        dc = -1.0 / 12.0 + t2 / 180.0 - t2 * t2 / 6720.0
        db = -1.0 / 60.0 + t2 / 1260.0 - t2 * t2 / 60480.0
    else:
        sin, cos = np.sin(theta), np.cos(theta)
        ds = (theta * cos - sin) / theta**3
        dc = (theta * sin - 2.0 * (1.0 - cos)) / theta**4
        db = (theta * (1.0 - cos) - 3.0 * (theta - sin)) / theta**5

    def cross(a, B):
        # a: (3,), B: (..., 3) -> a x B rows
        return np.cross(np.broadcast_to(a, B.shape), B)

    wX = cross(w, X)           # (n, 3)
    wwX = cross(w, wX)
    Xp = X + s * wX + c * wwX  # R @ X

    W = _skew(w)
    W2 = W @ W
    V = np.eye(3) + c * W + b * W2
    wv = np.cross(w, v)
    wwv = np.cross(w, wv)
    t_vec = v + c * wv + b * wwv
    Xp = Xp + t_vec

    J = np.empty((n, 3, 6))
    eye = np.eye(3)
    for i in range(3):
        e = eye[i]
        eX = cross(e, X)
        ewX = cross(e, wX)
        weX = cross(w, eX)
        dRX = (ds * w[i]) * wX + s * eX + (dc * w[i]) * wwX + c * (ewX + weX)
        ev = np.cross(e, v)
        dt = (
            (dc * w[i]) * wv
            + c * ev
            + (db * w[i]) * wwv
            + b * (np.cross(e, wv) + np.cross(w, ev))
        )
        J[:, :, i] = dRX + dt
    J[:, :, 3:] = V[None, :, :]
    return Xp, J


# ---------------------------------------------------------------------------
# Projection
# ---------------------------------------------------------------------------


def project(points: np.ndarray, K: CameraIntrinsics):
    """Pinhole projection of (N, 3) points (or a single 3-vector).

    Returns ``(uv, in_bounds)``. Points with z <= 0 or landing outside
    ``[0, width-1] x [0, height-1]`` get ``in_bounds=False`` (never raises).
    """
    pts = np.asarray(points, dtype=np.float64)
    single = pts.ndim == 1
    pts = pts.reshape(-1, 3)
    z = pts[:, 2]
    positive = z > 0
    safe_z = np.where(positive, z, 1.0)
    u = K.fx * pts[:, 0] / safe_z + K.cx
    v = K.fy * pts[:, 1] / safe_z + K.cy
    uv = np.stack([u, v], axis=-1)
    ok = positive & (u >= 0) & (u <= K.width - 1) & (v >= 0) & (v <= K.height - 1)
    if single:
        return uv[0], bool(ok[0])
    return uv, ok


def backproject(uv: np.ndarray, inv_depth: np.ndarray, K: CameraIntrinsics) -> np.ndarray:
    """Lift pixels (N, 2) with inverse depths (N,) to camera-frame 3D points."""
    uv_arr = np.asarray(uv, dtype=np.float64)
    single = uv_arr.ndim == 1
    uv_arr = uv_arr.reshape(-1, 2)
    q = np.asarray(inv_depth, dtype=np.float64).reshape(-1)
    if np.any(q <= 0) or not np.all(np.isfinite(q)):
        raise ValueError("inverse depth must be positive and finite")
    z = 1.0 / q
    x = (uv_arr[:, 0] - K.cx) * z / K.fx
    y = (uv_arr[:, 1] - K.cy) * z / K.fy
    pts = np.stack([x, y, z], axis=-1)
    return pts[0] if single else pts


# ---------------------------------------------------------------------------
# Image containers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class IntensityFrame:
    """Dense grayscale image with values in [0, 1] and a timestamp (seconds)."""

    pixels: np.ndarray
    timestamp: float = 0.0

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        if not np.all(np.isfinite(px)):
            raise ValueError("intensity frame contains non-finite values")
        if px.min() < -1e-9 or px.max() > 1.0 + 1e-9:
            raise ValueError("intensity values must lie in [0, 1]")
        object.__setattr__(self, "pixels", _readonly(np.clip(px, 0.0, 1.0)))

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass(frozen=True)
class DepthMap:
    """Per-pixel inverse depth with a validity mask.

    Valid entries are positive and finite; invalid entries are excluded from
    every loss and warp. The constructor demotes non-finite / non-positive
    entries to invalid rather than raising, since optimizers may hand in
    intermediate iterates.
    """

    inv_depth: np.ndarray
    valid: np.ndarray = field(default=None)

    def __post_init__(self):
        inv = np.asarray(self.inv_depth, dtype=np.float64)
        valid = (
            np.ones(inv.shape, dtype=bool)
            if self.valid is None
            else np.asarray(self.valid, dtype=bool).copy()
        )
        if valid.shape != inv.shape:
            raise ValueError("validity mask shape must match inverse depth shape")
        valid &= np.isfinite(inv) & (inv > 0)
        inv = np.where(valid, inv, 0.0)
        object.__setattr__(self, "inv_depth", _readonly(inv))
        valid.flags.writeable = False
        object.__setattr__(self, "valid", valid)

    @property
    def height(self) -> int:
        return self.inv_depth.shape[0]

    @property
    def width(self) -> int:
        return self.inv_depth.shape[1]

    def mean_valid(self) -> float:
        if not self.valid.any():
            raise ValueError("depth map has no valid pixels")
        return float(self.inv_depth[self.valid].mean())

    def normalized(self) -> "DepthMap":
        """Rescale so the mean valid inverse depth equals 1 (fixes gauge)."""
        return DepthMap(self.inv_depth / self.mean_valid(), self.valid)
