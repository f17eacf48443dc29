"""Pipeline configuration: defaults, YAML loading, CLI overrides, validation.

Every default that the reconstruction method prescribes is wired here:
smoothness edge weight beta = 10.0, smoothness weight lambda_sm = 1.0, pose
regularization lambda_r = 0.01, 2000-event blocks, and the
complementary-filter cutoff 6.28 rad/s.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .optim import OptimizerSettings


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field."""


@dataclass
class FlowSettings:
    levels: int = 4
    iterations: int = 100
    smoothness: float = 0.02
    epsilon: float = 0.1  # flow-magnitude floor for depth seeding (pixels)


@dataclass
class RefineSettings:
    spatial_sigma: float = 4.0
    range_sigma: float = 0.05
    iterations: int = 3


@dataclass
class PipelineConfig:
    beta: float = 10.0
    lambda_sm: float = 1.0
    lambda_r: float = 0.01
    block_size: int = 2000
    cf_cutoff: float = 6.28
    contrast_step: float = 0.1  # pseudo-intensity integrator step per event
    cf_contrast: float = 0.1    # complementary-filter per-event log step
    decay: float = 0.8
    tv_weight: float = 0.1
    tv_iters: int = 20
    tv_eps: float = 1.0
    splat_gamma: float = 10.0
    alpha_policy: str = "linear"
    independent_blocks: bool = False  # skip warm-start chaining across blocks
    seed: int = 0
    input: str = ""
    output: str = ""
    flow: FlowSettings = field(default_factory=FlowSettings)
    refine: RefineSettings = field(default_factory=RefineSettings)
    depth_optimizer: OptimizerSettings = field(
        default_factory=lambda: OptimizerSettings(
            step_size=1e-3, twist_step_size=1e-4, max_iterations=2000, convergence_tol=1e-5
        )
    )
    pose_optimizer: OptimizerSettings = field(
        default_factory=lambda: OptimizerSettings(
            step_size=2e-3, max_iterations=400, convergence_tol=1e-6
        )
    )

    def validate(self) -> "PipelineConfig":
        positive = [
            "beta",
            "lambda_sm",
            "cf_cutoff",
            "contrast_step",
            "cf_contrast",
            "tv_weight",
            "tv_eps",
            "splat_gamma",
        ]
        for name in positive:
            if getattr(self, name) <= 0:
                raise ConfigError(f"config field '{name}' must be positive")
        if self.lambda_r < 0:
            raise ConfigError("config field 'lambda_r' must be non-negative")
        if self.block_size < 1:
            raise ConfigError("config field 'block_size' must be >= 1")
        if not (0 <= self.decay <= 1):
            raise ConfigError("config field 'decay' must lie in [0, 1]")
        if self.tv_iters < 0:
            raise ConfigError("config field 'tv_iters' must be >= 0")
        if self.alpha_policy != "linear":
            raise ConfigError(f"config field 'alpha_policy' unknown: {self.alpha_policy!r}")
        if self.flow.levels < 1:
            raise ConfigError("config field 'flow.levels' must be >= 1")
        if self.flow.epsilon <= 0:
            raise ConfigError("config field 'flow.epsilon' must be positive")
        if self.refine.spatial_sigma <= 0 or self.refine.range_sigma <= 0:
            raise ConfigError("config field 'refine' sigmas must be positive")
        return self


def _build(cls, data: dict, path: str):
    field_names = {f.name for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        if key not in field_names:
            raise ConfigError(f"unknown config field '{path}{key}'")
        kwargs[key] = value
    return cls(**kwargs)


def config_from_dict(data: dict) -> PipelineConfig:
    data = dict(data or {})
    nested = {
        "flow": FlowSettings,
        "refine": RefineSettings,
        "depth_optimizer": OptimizerSettings,
        "pose_optimizer": OptimizerSettings,
    }
    kwargs = {}
    for key, cls in nested.items():
        if key in data:
            sub = data.pop(key)
            if not isinstance(sub, dict):
                raise ConfigError(f"config field '{key}' must be a mapping")
            try:
                kwargs[key] = _build(cls, sub, f"{key}.")
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"config field '{key}': {exc}") from None
    base = _build(PipelineConfig, data, "")
    for key, value in kwargs.items():
        setattr(base, key, value)
    return base.validate()


def load_config(path) -> PipelineConfig:
    with open(path) as f:
        data = yaml.safe_load(f) or {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return config_from_dict(data)


def config_to_dict(cfg: PipelineConfig) -> dict:
    return dataclasses.asdict(cfg)


def save_config(path, cfg: PipelineConfig) -> None:
    with open(path, "w") as f:
        yaml.safe_dump(config_to_dict(cfg), f, sort_keys=True)


def is_sim_spec(path) -> bool:
    """A YAML file with a 'scene' section is a simulator spec, not a dataset."""
    p = Path(path)
    if p.is_dir():
        return False
    if p.suffix.lower() not in (".yaml", ".yml"):
        return False
    try:
        with open(p) as f:
            data = yaml.safe_load(f)
    except yaml.YAMLError:
        return False
    return isinstance(data, dict) and "scene" in data
