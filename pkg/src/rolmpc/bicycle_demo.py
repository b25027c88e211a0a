"""End-to-end chicane experiment: configuration, setup and the learning run."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np

from .bicycle import BicycleParams, DisturbanceOracle, bicycle_model, seed_outputs
from .error_invariant import SampledRpiConfig, linearize_and_gain
from .geometry import Box
from .lmpc import LmpcConfig, run_algorithm

log = logging.getLogger(__name__)


@dataclass
class PlantConfig:
    L_true: float = 2e-4
    gamma_true: float = 1e-3


@dataclass
class LqrConfig:
    Q: tuple = (35.0, 3.0, 0.5)
    R: tuple = (0.1, 1.0)


@dataclass
class SeedConfig:
    ds: float = 0.85
    decay_steps: int = 36
    s_end: float = 58.5


@dataclass
class DemoConfig:
    bicycle: BicycleParams = field(default_factory=BicycleParams)
    plant: PlantConfig = field(default_factory=PlantConfig)
    lqr: LqrConfig = field(default_factory=LqrConfig)
    seed_traj: SeedConfig = field(default_factory=SeedConfig)
    lmpc: LmpcConfig = field(default_factory=LmpcConfig)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["bicycle"] = self.bicycle.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: Optional[dict]) -> "DemoConfig":
        d = d or {}
        lm = dict(d.get("lmpc", {}))
        rpi = SampledRpiConfig(**lm.pop("rpi", {}))
        lq = {k: tuple(v) for k, v in d.get("lqr", {}).items()}
        return cls(
            bicycle=BicycleParams.from_dict(d.get("bicycle", {})),
            plant=PlantConfig(**d.get("plant", {})),
            lqr=LqrConfig(**lq),
            seed_traj=SeedConfig(**d.get("seed_traj", {})),
            lmpc=LmpcConfig(**lm, rpi=rpi),
        )


@dataclass
class DemoSetup:
    params: BicycleParams
    model: object
    K: object
    plant: DisturbanceOracle
    seed: np.ndarray
    X_G: Box


def setup(cfg: DemoConfig) -> DemoSetup:
    p = cfg.bicycle
    model = bicycle_model(p)
    x_ref = np.array([np.sqrt(200.0), 0.0, 0.0])     # curvature sign change of the chicane
    u_ref = np.array([0.5 * (p.v_min + p.v_max), 0.0])
    _, _, K = linearize_and_gain(model, x_ref, u_ref, np.diag(cfg.lqr.Q), np.diag(cfg.lqr.R))
    plant = DisturbanceOracle(cfg.plant.L_true, cfg.plant.gamma_true, model.n, model.m)
    seed = seed_outputs(p, cfg.seed_traj.ds, cfg.seed_traj.decay_steps, cfg.seed_traj.s_end)
    return DemoSetup(p, model, K, plant, seed, p.goal_box)


def run(cfg: DemoConfig, on_iteration: Optional[Callable] = None):
    s = setup(cfg)
    p = s.params
    return run_algorithm(s.model, s.seed, np.array(p.x_start), s.K, s.plant, p.X, p.U, s.X_G,
                         p.operating_state_box, p.operating_input_box, cfg.lmpc, on_iteration)
