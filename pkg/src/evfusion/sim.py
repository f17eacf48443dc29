"""Synthetic hybrid-sensor simulator: frames, ground-truth depth and
trajectory, and an event stream, all deterministic given a seed.

Scenes are one or two textured fronto-parallel planes in the world frame
(the camera at t=0 is the world frame and looks down +z). A trajectory is
piecewise-linear in twist coordinates; ``pose(t)`` maps world points into
the camera at time t. Events follow the standard contrast-threshold model:
log intensity is rendered on a dense time grid and every crossing of a
multiple of the threshold since a pixel's last event emits one event with a
linearly interpolated timestamp.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .core import CameraIntrinsics, DepthMap, IntensityFrame, Pose, se3_compose, se3_exp, se3_invert
from .events import EventStream

_LOG_FLOOR = 1e-4


@dataclass(frozen=True)
class Texture:
    """Procedural texture over a world-plane rectangle.

    kind: 'noise' (band-limited, seeded), 'checker', or 'step'.
    ``extent`` is the half-width of the textured square in scene units;
    lookups clamp at the boundary.
    """

    kind: str = "noise"
    extent: float = 4.0
    resolution: int = 256
    smooth: float = 3.0
    lo: float = 0.15
    hi: float = 0.9
    checker_period: float = 0.25
    step_at: float = 0.0
    seed: int = 0
    _grid: np.ndarray = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.kind == "noise":
            rng = np.random.default_rng(self.seed)
            g = rng.standard_normal((self.resolution, self.resolution))
            g = ndimage.gaussian_filter(g, sigma=self.smooth, mode="wrap")
            g = (g - g.min()) / max(g.max() - g.min(), 1e-12)
            grid = self.lo + (self.hi - self.lo) * g
            object.__setattr__(self, "_grid", grid)

    def sample(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Bilinear texture lookup at world-plane coordinates."""
        if self.kind == "checker":
            cells = np.floor(x / self.checker_period) + np.floor(y / self.checker_period)
            return np.where(cells % 2 == 0, self.lo, self.hi)
        if self.kind == "step":
            return np.where(x < self.step_at, self.lo, self.hi)
        n = self.resolution
        u = np.clip((x + self.extent) / (2 * self.extent) * (n - 1), 0, n - 1)
        v = np.clip((y + self.extent) / (2 * self.extent) * (n - 1), 0, n - 1)
        x0 = np.clip(np.floor(u), 0, n - 2).astype(np.intp)
        y0 = np.clip(np.floor(v), 0, n - 2).astype(np.intp)
        wx = u - x0
        wy = v - y0
        g = self._grid
        return (
            g[y0, x0] * (1 - wx) * (1 - wy)
            + g[y0, x0 + 1] * wx * (1 - wy)
            + g[y0 + 1, x0] * (1 - wx) * wy
            + g[y0 + 1, x0 + 1] * wx * wy
        )


@dataclass(frozen=True)
class Plane:
    """Fronto-parallel textured plane at world depth z = depth.

    ``bounds`` restricts the plane to [xmin, xmax, ymin, ymax] in world
    coordinates (None = infinite), letting a near plane occlude a far one.
    """

    depth: float
    texture: Texture
    bounds: tuple | None = None

    def __post_init__(self):
        if self.depth <= 0:
            raise ValueError("plane depth must be positive")


@dataclass(frozen=True)
class SyntheticScene:
    planes: tuple

    def __post_init__(self):
        if not self.planes:
            raise ValueError("scene needs at least one plane")
        object.__setattr__(self, "planes", tuple(self.planes))


@dataclass(frozen=True)
class Trajectory:
    """Piecewise-linear twist path; pose(t) maps world -> camera at time t."""

    times: np.ndarray
    twists: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=np.float64)
        twists = np.asarray(self.twists, dtype=np.float64).reshape(len(times), 6)
        if len(times) < 2 or np.any(np.diff(times) <= 0):
            raise ValueError("trajectory needs >= 2 strictly increasing keyframe times")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "twists", twists)

    @property
    def duration(self) -> float:
        return float(self.times[-1] - self.times[0])

    def twist_at(self, t: float) -> np.ndarray:
        t = np.clip(t, self.times[0], self.times[-1])
        i = int(np.clip(np.searchsorted(self.times, t, side="right") - 1, 0, len(self.times) - 2))
        a = (t - self.times[i]) / (self.times[i + 1] - self.times[i])
        return (1 - a) * self.twists[i] + a * self.twists[i + 1]

    def pose_at(self, t: float) -> Pose:
        return se3_exp(self.twist_at(t))

    def relative_pose(self, t_from: float, t_to: float) -> Pose:
        """Transform taking points in the camera at t_from to the camera at t_to."""
        return se3_compose(self.pose_at(t_to), se3_invert(self.pose_at(t_from)))


def render_view(scene: SyntheticScene, pose: Pose, K: CameraIntrinsics):
    """Ray-cast the scene from a camera pose; exact per-pixel depth.

    Returns ``(IntensityFrame, DepthMap)``. Raises if nothing is visible.
    """
    ys, xs = np.mgrid[0 : K.height, 0 : K.width]
    dirs = np.stack(
        [
            (xs.ravel() - K.cx) / K.fx,
            (ys.ravel() - K.cy) / K.fy,
            np.ones(K.width * K.height),
        ],
        axis=-1,
    )
    # camera ray X_cam = s * dir; world point = R^T (X_cam - t)
    Rt = pose.R.T
    d_world = dirs @ Rt.T
    o_world = -Rt @ pose.t

    depth = np.full(dirs.shape[0], np.inf)
    color = np.zeros(dirs.shape[0])
    for plane in scene.planes:
        dz = d_world[:, 2]
        ok = np.abs(dz) > 1e-12
        s = np.where(ok, (plane.depth - o_world[2]) / np.where(ok, dz, 1.0), np.inf)
        ok &= s > 1e-9
        px = o_world[0] + s * d_world[:, 0]
        py = o_world[1] + s * d_world[:, 1]
        if plane.bounds is not None:
            xmin, xmax, ymin, ymax = plane.bounds
            ok &= (px >= xmin) & (px <= xmax) & (py >= ymin) & (py <= ymax)
        # camera-space depth is the z of s*dir, and dir_z = 1
        hit = ok & (s < depth)
        if hit.any():
            color[hit] = plane.texture.sample(px[hit], py[hit])
        depth = np.where(hit, s, depth)
    visible = np.isfinite(depth)
    if not visible.any():
        raise ValueError("no scene geometry is visible from this pose")
    inv = np.zeros_like(depth)
    inv[visible] = 1.0 / depth[visible]
    frame = IntensityFrame(
        pixels=np.clip(color.reshape(K.height, K.width), 0.0, 1.0), timestamp=0.0
    )
    return frame, DepthMap(inv.reshape(K.height, K.width), visible.reshape(K.height, K.width))


class ContrastThresholdStepper:
    """Per-pixel reference-crossing event generation from log-intensity frames.

    Feed successive (log_frame, t) pairs; every crossing of a multiple of the
    threshold since a pixel's last event emits an event with a linearly
    interpolated timestamp. Polarity is the crossing direction.
    """

    def __init__(self, first_log: np.ndarray, t0: float, threshold: float):
        if threshold <= 0:
            raise ValueError("contrast threshold must be positive")
        self.ref = first_log.astype(np.float64).copy()
        self.prev = self.ref.copy()
        self.t_prev = float(t0)
        self.threshold = threshold

    def step(self, log_frame: np.ndarray, t: float):
        """Advance to the next sample; returns (ts, xs, ys, polarities)."""
        theta = self.threshold
        cur = log_frame
        dt = t - self.t_prev
        delta = cur - self.ref
        # tolerance so ramps hitting an exact multiple of theta still fire
        n_cross = np.floor(np.abs(delta) / theta + 1e-9).astype(np.int64)
        out_t, out_x, out_y, out_p = [], [], [], []
        if n_cross.any():
            total = cur - self.prev
            max_n = int(n_cross.max())
            sign = np.sign(delta).astype(np.int8)
            ys, xs = np.nonzero(n_cross)
            counts = n_cross[ys, xs]
            for k in range(1, max_n + 1):
                sel = counts >= k
                yy, xx = ys[sel], xs[sel]
                level = self.ref[yy, xx] + sign[yy, xx] * k * theta
                denom = total[yy, xx]
                frac = np.where(
                    np.abs(denom) > 1e-12,
                    (level - self.prev[yy, xx]) / np.where(np.abs(denom) > 1e-12, denom, 1.0),
                    1.0,
                )
                frac = np.clip(frac, 0.0, 1.0)
                out_t.append(self.t_prev + frac * dt)
                out_x.append(xx)
                out_y.append(yy)
                out_p.append(sign[yy, xx])
            self.ref[ys, xs] += sign[ys, xs] * counts * theta
        self.prev = cur.copy()
        self.t_prev = float(t)
        if not out_t:
            return (
                np.empty(0),
                np.empty(0, dtype=np.int32),
                np.empty(0, dtype=np.int32),
                np.empty(0, dtype=np.int8),
            )
        ts = np.concatenate(out_t)
        xs_all = np.concatenate(out_x).astype(np.int32)
        ys_all = np.concatenate(out_y).astype(np.int32)
        ps = np.concatenate(out_p).astype(np.int8)
        order = np.argsort(ts, kind="stable")
        return ts[order], xs_all[order], ys_all[order], ps[order]


def generate_events(
    scene: SyntheticScene,
    trajectory: Trajectory,
    K: CameraIntrinsics,
    contrast_threshold: float = 0.1,
    sample_rate: float = 1000.0,
) -> EventStream:
    """Contrast-threshold event stream for a camera moving through the scene."""
    if sample_rate <= 0:
        raise ValueError("sample_rate must be positive")
    t0, t1 = float(trajectory.times[0]), float(trajectory.times[-1])
    n_steps = max(2, int(np.ceil((t1 - t0) * sample_rate)) + 1)
    times = np.linspace(t0, t1, n_steps)

    def log_view(t):
        frame, _ = render_view(scene, trajectory.pose_at(t), K)
        return np.log(np.maximum(frame.pixels, _LOG_FLOOR))

    stepper = ContrastThresholdStepper(log_view(times[0]), times[0], contrast_threshold)
    ts, xs, ys, ps = [], [], [], []
    for t in times[1:]:
        et, ex, ey, ep = stepper.step(log_view(t), float(t))
        if len(et):
            ts.append(et)
            xs.append(ex)
            ys.append(ey)
            ps.append(ep)
    if ts:
        t_all = np.concatenate(ts)
        x_all = np.concatenate(xs)
        y_all = np.concatenate(ys)
        p_all = np.concatenate(ps)
    else:
        t_all = np.empty(0)
        x_all = np.empty(0, dtype=np.int32)
        y_all = np.empty(0, dtype=np.int32)
        p_all = np.empty(0, dtype=np.int8)
    return EventStream(
        t=t_all, x=x_all, y=y_all, polarity=p_all, width=K.width, height=K.height
    )


def corrupt_events(stream: EventStream, noise_rate: float, seed: int = 0) -> EventStream:
    """Inject uniformly random spurious events (robustness experiments).

    Adds ``round(noise_rate * len(stream))`` events with uniform pixel,
    polarity, and time within the stream span, then re-sorts by time
    (stable). Deterministic given the seed.
    """
    if not (0.0 <= noise_rate <= 1.0):
        raise ValueError("noise_rate must lie in [0, 1]")
    n_noise = int(round(noise_rate * len(stream)))
    if n_noise == 0:
        return EventStream(
            t=stream.t.copy(),
            x=stream.x.copy(),
            y=stream.y.copy(),
            polarity=stream.polarity.copy(),
            width=stream.width,
            height=stream.height,
        )
    rng = np.random.default_rng(seed)
    t_lo, t_hi = float(stream.t[0]), float(stream.t[-1])
    nt = rng.uniform(t_lo, t_hi, size=n_noise)
    nx = rng.integers(0, stream.width, size=n_noise, dtype=np.int32)
    ny = rng.integers(0, stream.height, size=n_noise, dtype=np.int32)
    np_ = np.where(rng.random(n_noise) < 0.5, -1, 1).astype(np.int8)
    t_all = np.concatenate([stream.t, nt])
    order = np.argsort(t_all, kind="stable")
    return EventStream(
        t=t_all[order],
        x=np.concatenate([stream.x, nx])[order],
        y=np.concatenate([stream.y, ny])[order],
        polarity=np.concatenate([stream.polarity, np_])[order],
        width=stream.width,
        height=stream.height,
    )
