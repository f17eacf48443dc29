"""Dataset directory layout and simulator-spec handling.

A dataset directory holds::

    frames/frame_%08d.png   8-bit grayscale input frames
    frames.txt              one line per frame: filename timestamp
    events.txt              event text format (t x y p)
    calib.txt               fx fy cx cy width height

A simulator spec is a YAML file with ``scene`` / ``trajectory`` / ``camera``
/ ``frames`` / ``events`` sections; :func:`simulate_dataset` renders it into
the dataset layout plus ground truth (depth PFMs, trajectory, and the spec
itself for later ground-truth rendering).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from .config import ConfigError
from .core import CameraIntrinsics, IntensityFrame, load_calibration, save_calibration
from .depth_opt import export_pfm
from .events import EventStream, parse_events, write_events
from .pose_opt import save_trajectory
from .renderer import read_frame_png, read_manifest, write_frames
from .sim import Plane, SyntheticScene, Texture, Trajectory, generate_events, render_view

SIM_SPEC_NAME = "sim_spec.yaml"


@dataclass
class SimSpec:
    scene: SyntheticScene
    trajectory: Trajectory
    K: CameraIntrinsics
    frame_times: list
    contrast_threshold: float
    sample_rate: float
    seed: int
    raw: dict


def load_sim_spec(path) -> SimSpec:
    with open(path) as f:
        data = yaml.safe_load(f)
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: simulator spec must be a mapping")
    try:
        cam = data["camera"]
        K = CameraIntrinsics(
            fx=float(cam["fx"]),
            fy=float(cam["fy"]),
            cx=float(cam["cx"]),
            cy=float(cam["cy"]),
            width=int(cam["width"]),
            height=int(cam["height"]),
        )
        seed = int(data.get("seed", 0))
        planes = []
        for i, p in enumerate(data["scene"]["planes"]):
            tex_cfg = dict(p.get("texture", {}))
            tex = Texture(
                kind=tex_cfg.get("kind", "noise"),
                extent=float(tex_cfg.get("extent", 4.0)),
                resolution=int(tex_cfg.get("resolution", 256)),
                smooth=float(tex_cfg.get("smooth", 3.0)),
                lo=float(tex_cfg.get("lo", 0.15)),
                hi=float(tex_cfg.get("hi", 0.9)),
                checker_period=float(tex_cfg.get("checker_period", 0.25)),
                step_at=float(tex_cfg.get("step_at", 0.0)),
                seed=int(tex_cfg.get("seed", seed + i)),
            )
            bounds = p.get("bounds")
            planes.append(
                Plane(
                    depth=float(p["depth"]),
                    texture=tex,
                    bounds=tuple(float(b) for b in bounds) if bounds else None,
                )
            )
        keyframes = data["trajectory"]["keyframes"]
        times = [float(k["t"]) for k in keyframes]
        twists = [
            list(np.asarray(k.get("rotation", (0, 0, 0)), dtype=float))
            + list(np.asarray(k.get("translation", (0, 0, 0)), dtype=float))
            for k in keyframes
        ]
        trajectory = Trajectory(times=np.array(times), twists=np.array(twists))
        frames_cfg = data["frames"]
        if "times" in frames_cfg:
            frame_times = [float(t) for t in frames_cfg["times"]]
        else:
            frame_times = list(
                np.linspace(
                    float(frames_cfg["start"]),
                    float(frames_cfg["stop"]),
                    int(frames_cfg["count"]),
                )
            )
        ev = data.get("events", {})
        return SimSpec(
            scene=SyntheticScene(planes=tuple(planes)),
            trajectory=trajectory,
            K=K,
            frame_times=frame_times,
            contrast_threshold=float(ev.get("contrast_threshold", 0.1)),
            sample_rate=float(ev.get("sample_rate", 1000.0)),
            seed=seed,
            raw=data,
        )
    except KeyError as exc:
        raise ConfigError(f"{path}: simulator spec is missing {exc}") from None


class GroundTruth:
    """Renders reference frames / depth / poses for a simulated dataset."""

    def __init__(self, spec: SimSpec):
        self.spec = spec

    def render(self, t: float):
        frame, depth = render_view(self.spec.scene, self.spec.trajectory.pose_at(t), self.spec.K)
        return IntensityFrame(pixels=frame.pixels, timestamp=t), depth

    def relative_pose(self, t_from: float, t_to: float):
        return self.spec.trajectory.relative_pose(t_from, t_to)


def simulate_dataset(spec: SimSpec, out_dir) -> Path:
    """Render a simulator spec into the dataset layout plus ground truth."""
    out = Path(out_dir)
    (out / "frames").mkdir(parents=True, exist_ok=True)
    (out / "gt").mkdir(exist_ok=True)

    gt = GroundTruth(spec)
    frames = []
    for i, t in enumerate(spec.frame_times):
        frame, depth = gt.render(t)
        frames.append(frame)
        export_pfm(out / "gt" / f"depth_{i:08d}.pfm", depth)
    write_frames(out / "frames", frames, out / "frames.txt")
    save_trajectory(
        out / "gt" / "trajectory.txt",
        spec.frame_times,
        [spec.trajectory.pose_at(t) for t in spec.frame_times],
    )
    stream = generate_events(
        spec.scene,
        spec.trajectory,
        spec.K,
        contrast_threshold=spec.contrast_threshold,
        sample_rate=spec.sample_rate,
    )
    write_events(out / "events.txt", stream)
    save_calibration(out / "calib.txt", spec.K)
    with open(out / SIM_SPEC_NAME, "w") as f:
        yaml.safe_dump(spec.raw, f, sort_keys=True)
    return out


@dataclass
class Dataset:
    root: Path
    frames: list
    stream: EventStream
    K: CameraIntrinsics
    sim_spec: SimSpec | None = None

    @property
    def ground_truth(self) -> GroundTruth | None:
        return GroundTruth(self.sim_spec) if self.sim_spec else None


def load_dataset(path) -> Dataset:
    root = Path(path)
    for required in ("frames.txt", "events.txt", "calib.txt"):
        if not (root / required).exists():
            raise FileNotFoundError(f"dataset {root} is missing {required}")
    K = load_calibration(root / "calib.txt")
    entries = read_manifest(root / "frames.txt")
    if len(entries) < 2:
        raise ValueError(f"dataset {root}: need at least two frames")
    frames = [read_frame_png(root / "frames" / name, timestamp=ts) for name, ts in entries]
    frames.sort(key=lambda f: f.timestamp)
    stream = parse_events(root / "events.txt", K.width, K.height)
    spec = None
    if (root / SIM_SPEC_NAME).exists():
        spec = load_sim_spec(root / SIM_SPEC_NAME)
    return Dataset(root=root, frames=frames, stream=stream, K=K, sim_spec=spec)
