import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from evfusion.core import CameraIntrinsics
from evfusion.flow import depth_from_flow, edge_aware_refine, estimate_flow
from evfusion.sim import Plane, SyntheticScene, Texture, Trajectory, render_view


EVENT_CONTRAST = 0.035
EVENT_SAMPLE_RATE = 2000.0


def make_two_plane_scene(seed: int = 11) -> SyntheticScene:
    far = Plane(
        depth=2.5,
        texture=Texture(
            kind="noise", extent=4.0, resolution=384, smooth=3.0, lo=0.1, hi=0.95, seed=seed
        ),
    )
    near = Plane(
        depth=1.4,
        texture=Texture(
            kind="noise", extent=4.0, resolution=384, smooth=3.0, lo=0.1, hi=0.95, seed=seed + 1
        ),
        bounds=(-0.75, 0.25, -0.65, 0.55),
    )
    return SyntheticScene(planes=(far, near))


def make_trajectory() -> Trajectory:
    return Trajectory(
        times=np.array([0.0, 1.0]),
        twists=np.array(
            [
                [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
                [0.0, 0.0, 0.05, 0.35, 0.06, 0.0],
            ]
        ),
    )


def sim_K() -> CameraIntrinsics:
    return CameraIntrinsics(fx=64.0, fy=64.0, cx=31.5, cy=31.5, width=64, height=64)


@pytest.fixture(scope="session")
def sim_stream():
    """Moderate-rate event stream from the shared two-plane scene."""
    from evfusion.sim import generate_events

    return generate_events(
        make_two_plane_scene(),
        make_trajectory(),
        sim_K(),
        contrast_threshold=EVENT_CONTRAST,
        sample_rate=EVENT_SAMPLE_RATE,
    )


ACCEPT_SPEC = {
    "seed": 21,
    "camera": {"fx": 96.0, "fy": 96.0, "cx": 47.5, "cy": 47.5, "width": 96, "height": 96},
    "scene": {
        "planes": [
            {
                "depth": 2.5,
                "texture": {
                    "kind": "noise",
                    "extent": 4.0,
                    "resolution": 384,
                    "smooth": 4.0,
                    "lo": 0.1,
                    "hi": 0.95,
                    "seed": 21,
                },
            },
            {
                "depth": 1.4,
                "texture": {
                    "kind": "noise",
                    "extent": 4.0,
                    "resolution": 384,
                    "smooth": 4.0,
                    "lo": 0.1,
                    "hi": 0.95,
                    "seed": 22,
                },
                "bounds": [-0.75, 0.25, -0.65, 0.55],
            },
        ]
    },
    "trajectory": {
        "keyframes": [
            {"t": 0.0, "rotation": [0, 0, 0], "translation": [0, 0, 0]},
            {"t": 1.0, "rotation": [0, 0, 0.05], "translation": [0.35, 0.06, 0.0]},
        ]
    },
    "frames": {"times": [0.15, 0.35, 0.55, 0.75, 0.95]},
    "events": {"contrast_threshold": 0.1, "sample_rate": 2000.0},
}


def accept_config(input_path, output_path):
    """Pipeline config for the acceptance scene: paper defaults plus
    sensor-matched pseudo-intensity settings."""
    from evfusion.config import PipelineConfig
    from evfusion.optim import OptimizerSettings

    return PipelineConfig(
        contrast_step=0.5,
        cf_contrast=0.1,
        input=str(input_path),
        output=str(output_path),
        depth_optimizer=OptimizerSettings(
            step_size=1e-3, twist_step_size=1e-4, max_iterations=1500, convergence_tol=1e-5
        ),
        pose_optimizer=OptimizerSettings(
            step_size=2e-3, max_iterations=400, convergence_tol=1e-6
        ),
    )


@pytest.fixture(scope="session")
def accept_bundle(tmp_path_factory):
    """Shared end-to-end runs on the acceptance scene: clean pipeline (twice,
    for determinism), corrupted-events pipeline, and both CF baselines."""
    import shutil

    import yaml

    from evfusion.dataset import GroundTruth, load_dataset, load_sim_spec
    from evfusion.events import write_events
    from evfusion.pipeline import run_baseline_cf, run_pipeline
    from evfusion.sim import corrupt_events

    import time

    tmp = tmp_path_factory.mktemp("accept")
    spec_path = tmp / "spec.yaml"
    spec_path.write_text(yaml.safe_dump(ACCEPT_SPEC))
    spec = load_sim_spec(spec_path)

    t0 = time.time()
    res_clean = run_pipeline(accept_config(spec_path, tmp / "run_clean"))
    clean_duration = time.time() - t0
    res_repeat = run_pipeline(accept_config(spec_path, tmp / "run_repeat"))

    dataset_dir = tmp / "run_clean" / "dataset"
    data = load_dataset(dataset_dir)

    noisy_dir = tmp / "dataset_noisy"
    shutil.copytree(dataset_dir, noisy_dir)
    write_events(noisy_dir / "events.txt", corrupt_events(data.stream, 0.1, seed=77))

    res_noisy = run_pipeline(accept_config(noisy_dir, tmp / "run_noisy"))
    cf_clean = run_baseline_cf(accept_config(dataset_dir, tmp / "cf_clean"))
    cf_noisy = run_baseline_cf(accept_config(noisy_dir, tmp / "cf_noisy"))

    return {
        "spec": spec,
        "gt": GroundTruth(spec),
        "data": data,
        "clean": res_clean,
        "repeat": res_repeat,
        "noisy": res_noisy,
        "cf_clean": cf_clean,
        "cf_noisy": cf_noisy,
        "root": tmp,
        "clean_duration": clean_duration,
    }


@pytest.fixture(scope="session")
def pose_block_fixture(sim_window, sim_stream):
    """Pseudo frames, depth, and ground truth for one mid-window event block."""
    from evfusion.events import frame_events, pseudo_intensity, reference_block

    w = sim_window
    t_k, t_k1 = w["t_k"], w["t_k1"]
    blocks = frame_events(sim_stream, 2000, t_k, t_k1)
    blk = blocks[len(blocks) // 2]

    def mk(block, t=None):
        f = pseudo_intensity(block, prior=None, contrast_step=0.2, tv_iters=20, tv_eps=1.0)
        if t is not None:
            f.t_mid = t
        return f

    return {
        "K": w["K"],
        "I_k": w["I_k"],
        "I_k1": w["I_k1"],
        "gt_d_k": w["gt_d_k"],
        "gt_d_k1": w["gt_d_k1"],
        "gt_xi": w["gt_xi"],
        "E_k0": mk(reference_block(sim_stream, t_k, 2000), t_k),
        "E_k1_0": mk(reference_block(sim_stream, t_k1, 2000), t_k1),
        "E_j": mk(blk),
        "block": blk,
        "gt_kj": w["trajectory"].relative_pose(t_k, blk.t_mid),
    }


@pytest.fixture(scope="session")
def sim_window():
    """A simulator frame pair with ground truth and flow-based depth seeds."""
    scene = make_two_plane_scene()
    traj = make_trajectory()
    K = sim_K()
    t_k, t_k1 = 0.35, 0.65
    I_k, gt_d_k = render_view(scene, traj.pose_at(t_k), K)
    I_k1, gt_d_k1 = render_view(scene, traj.pose_at(t_k1), K)
    I_k = type(I_k)(pixels=I_k.pixels, timestamp=t_k)
    I_k1 = type(I_k1)(pixels=I_k1.pixels, timestamp=t_k1)
    init_d_k = edge_aware_refine(depth_from_flow(estimate_flow(I_k, I_k1)), I_k)
    init_d_k1 = edge_aware_refine(depth_from_flow(estimate_flow(I_k1, I_k)), I_k1)
    return {
        "scene": scene,
        "trajectory": traj,
        "K": K,
        "t_k": t_k,
        "t_k1": t_k1,
        "I_k": I_k,
        "I_k1": I_k1,
        "gt_d_k": gt_d_k,
        "gt_d_k1": gt_d_k1,
        "gt_xi": traj.relative_pose(t_k, t_k1),
        "init_d_k": init_d_k,
        "init_d_k1": init_d_k1,
    }
