"""Synthesis of intermediate frames by forward-warping and blending.

Both bracketing intensity frames are splatted to the intermediate camera
location (through their own depth maps and block poses) and alpha-blended.
Blending happens in the native frame intensity domain (no gamma handling).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from PIL import Image

from .core import CameraIntrinsics, DepthMap, IntensityFrame, Pose
from .warp import blend, forward_splat

log = logging.getLogger(__name__)


class RenderError(RuntimeError):
    pass


def render_intermediate(
    I_k: IntensityFrame,
    I_k1: IntensityFrame,
    d_k: DepthMap,
    d_k1: DepthMap,
    xi_k_j: Pose,
    xi_k1_j: Pose,
    alpha: float,
    K: CameraIntrinsics,
    gamma: float = 10.0,
    timestamp: float = 0.0,
) -> IntensityFrame:
    """One latent frame at an intermediate camera location.

    ``alpha`` weights the contribution of I_k (1 = pure I_k). Raises
    :class:`RenderError` when both splats land empty (pathological poses).
    """
    buf_k = forward_splat(I_k, d_k, xi_k_j, K, gamma=gamma)
    buf_k1 = forward_splat(I_k1, d_k1, xi_k1_j, K, gamma=gamma)
    if not (buf_k.weight > 0).any() and not (buf_k1.weight > 0).any():
        raise RenderError("both forward splats are empty; poses are pathological")
    out = np.clip(blend(buf_k, buf_k1, alpha), 0.0, 1.0)
    return IntensityFrame(pixels=out, timestamp=timestamp)


@dataclass
class RenderedSequence:
    frames: list
    substituted: list  # indices of outputs replaced by a nearest input frame


def render_sequence(
    frames: list[IntensityFrame],
    depths: list[tuple],
    pose_pairs: list[list],
    block_times: list[list],
    K: CameraIntrinsics,
    gamma: float = 10.0,
) -> RenderedSequence:
    """Render every window's intermediate frames plus the input passthroughs.

    ``depths[w]`` is the (d_k, d_k1) pair of window w, ``pose_pairs[w]`` the
    per-block (xi_k_j, xi_k1_j) pairs, ``block_times[w]`` the block
    midpoints. A failed intermediate degrades to the nearer input frame
    (flagged) rather than aborting. Output timestamps are strictly
    increasing.
    """
    if not (len(depths) == len(pose_pairs) == len(block_times) == len(frames) - 1):
        raise ValueError("need one depth pair, pose list, and time list per frame pair")
    out = []
    substituted = []
    for w in range(len(frames) - 1):
        I_k, I_k1 = frames[w], frames[w + 1]
        d_k, d_k1 = depths[w]
        pairs = pose_pairs[w]
        times = block_times[w]
        if len(pairs) != len(times):
            raise ValueError(f"window {w}: {len(pairs)} pose pairs but {len(times)} block times")
        out.append(I_k)
        n = len(pairs)
        for j, ((xi_kj, xi_k1j), t_mid) in enumerate(zip(pairs, times), start=1):
            alpha = 1.0 - j / (n + 1.0)
            try:
                frame = render_intermediate(
                    I_k, I_k1, d_k, d_k1, xi_kj, xi_k1j, alpha, K, gamma=gamma, timestamp=t_mid
                )
            except RenderError as exc:
                log.warning("window %d block %d: %s; substituting nearest input", w, j, exc)
                nearest = I_k if abs(t_mid - I_k.timestamp) <= abs(I_k1.timestamp - t_mid) else I_k1
                frame = IntensityFrame(pixels=nearest.pixels.copy(), timestamp=t_mid)
                substituted.append(len(out))
            out.append(frame)
    out.append(frames[-1])
    ts = [f.timestamp for f in out]
    if any(b <= a for a, b in zip(ts[:-1], ts[1:])):
        raise RenderError("output timestamps are not strictly increasing")
    return RenderedSequence(frames=out, substituted=substituted)


# ---------------------------------------------------------------------------
# Frame directory output: 8-bit grayscale PNGs plus a filename->timestamp manifest
# ---------------------------------------------------------------------------


def frame_filename(index: int) -> str:
    return f"frame_{index:08d}.png"


def write_frame_png(path, frame: IntensityFrame) -> None:
    data = np.clip(np.round(frame.pixels * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(data, mode="L").save(path)


def read_frame_png(path, timestamp: float = 0.0) -> IntensityFrame:
    data = np.asarray(Image.open(path).convert("L"), dtype=np.float64) / 255.0
    return IntensityFrame(pixels=data, timestamp=timestamp)


def write_frames(directory, frames: list[IntensityFrame], manifest_path) -> list:
    """Write frames as frame_%08d.png and the manifest mapping file -> time."""
    names = []
    lines = []
    for i, frame in enumerate(frames):
        name = frame_filename(i)
        write_frame_png(directory / name, frame)
        names.append(name)
        lines.append(f"{name} {float(frame.timestamp)!r}\n")
    with open(manifest_path, "w") as f:
        f.writelines(lines)
    return names


def read_manifest(manifest_path) -> list[tuple]:
    entries = []
    with open(manifest_path) as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            name, ts = line.split()
            entries.append((name, float(ts)))
    return entries
