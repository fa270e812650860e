"""Objective suite behind the single evaluator interface the search consumes.

Two design-only objectives (complexity, height) are deterministic; the
three locomotion objectives instantiate the planar body and run MPPI.  Any
instantiation or simulation failure flags the design invalid.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .grammar import DesignGraph
from .mppi import MppiConfig, RolloutReward, run_task, trajectory_reward
from .physics import (
    ArticulatedBody,
    InstantiationError,
    SimConfig,
    SimulationError,
    instantiate,
    rest_state,
    simulate,
)

MOTION_KINDS = ("flat_locomotion", "low_power_locomotion", "jumping")
DESIGN_KINDS = ("design_complexity", "robot_height")
OBJECTIVE_KINDS = MOTION_KINDS + DESIGN_KINDS

LOW_POWER_TORQUE_SCALE = 0.2


@dataclass(frozen=True)
class ObjectiveSpec:
    """One objective: its kind plus the constants its reward uses."""

    kind: str
    duration: float = 4.0
    stability_coef: float = 1.0
    jump_coef: float = 10.0
    complexity_scale: float = 10.0
    height_coef: float = 10.0
    pitch_penalty_coef: float = 2.0
    settle_duration: float = 1.0
    torque_scale: float = 1.0

    @property
    def motion_dependent(self) -> bool:
        return self.kind in MOTION_KINDS


def make_objective(kind: str, **overrides) -> ObjectiveSpec:
    if kind not in OBJECTIVE_KINDS:
        raise ValueError(f"unknown objective kind {kind!r}; have {OBJECTIVE_KINDS}")
    spec = ObjectiveSpec(kind=kind)
    if kind == "low_power_locomotion":
        spec = replace(spec, torque_scale=LOW_POWER_TORQUE_SCALE)
    return replace(spec, **overrides) if overrides else spec


@dataclass
class EvalResult:
    reward: float
    valid: bool
    diagnostics: dict = field(default_factory=dict)
    note: str = ""


def reward_flat(traj, stability_coef: float = 1.0) -> float:
    """Forward displacement rate of the torso plus mean-uprightness bonus."""
    return trajectory_reward(traj, RolloutReward.flat(stability_coef))


def reward_jump(traj, jump_coef: float = 10.0, stability_coef: float = 1.0) -> float:
    """Peak clearance of the robot's lowest point plus mean-uprightness bonus."""
    return trajectory_reward(traj, RolloutReward.jump(jump_coef, stability_coef))


def reward_height(design: DesignGraph, spec: ObjectiveSpec | None = None,
                  sim: SimConfig | None = None) -> float:
    """Initial top height scaled, minus a passive pitch-drift penalty.

    Runs a short zero-torque settle from the rest pose; deterministic.
    Raises InstantiationError when the design cannot be built.
    """
    spec = spec or make_objective("robot_height")
    sim = sim or SimConfig()
    body = instantiate(design, sim)
    h0 = body.top_height(body.rest_pos)
    drift = passive_pitch_drift(body, spec.settle_duration, sim)
    return spec.height_coef * h0 - spec.pitch_penalty_coef * drift


def passive_pitch_drift(body: ArticulatedBody, duration: float, sim: SimConfig) -> float:
    steps = int(round(duration / sim.dt))
    traj = simulate(body, rest_state(body), None, steps, sim.dt, sim)
    return float(np.abs(traj.pos[:, 0, 2] - traj.pos[0, 0, 2]).max())


class Evaluator:
    """Dispatches designs to their objective rewards; owns the sim configs."""

    def __init__(self, mppi: MppiConfig | None = None, sim: SimConfig | None = None):
        self.mppi = mppi or MppiConfig()
        self.sim = sim or SimConfig()

    def evaluate(self, design: DesignGraph, spec: ObjectiveSpec, rng) -> EvalResult:
        try:
            body = instantiate(design, self.sim, torque_scale=spec.torque_scale)
        except InstantiationError as e:
            return EvalResult(0.0, False, note=str(e))
        if spec.kind == "design_complexity":
            return EvalResult(
                spec.complexity_scale / len(design.nodes),
                True,
                {"links": len(design.nodes)},
            )
        if spec.kind == "robot_height":
            h0 = body.top_height(body.rest_pos)
            drift = passive_pitch_drift(body, spec.settle_duration, self.sim)
            return EvalResult(
                spec.height_coef * h0 - spec.pitch_penalty_coef * drift,
                True,
                {"top_height": h0, "pitch_drift": drift},
            )
        return self._motion(body, spec, rng)

    def _motion(self, body: ArticulatedBody, spec: ObjectiveSpec, rng) -> EvalResult:
        if body.n_actuated == 0:
            return EvalResult(0.0, False, note="no actuated joints")
        if spec.kind == "jumping":
            rollout = RolloutReward.jump(spec.jump_coef, spec.stability_coef)
        else:
            rollout = RolloutReward.flat(spec.stability_coef)
        try:
            traj, reward = run_task(body, rollout, spec.duration, self.mppi, rng, sim=self.sim)
        except SimulationError as e:
            return EvalResult(0.0, False, note=str(e))
        return EvalResult(reward, True, _diagnostics(traj))


def _diagnostics(traj) -> dict:
    body = traj.body
    clear = (body.endpoints_batch(traj.pos)[..., 1] - body.radius[None, :, None]).min(axis=(1, 2))
    rel_angle = traj.pos[:, body.jchild, 2] - traj.pos[:, body.jparent, 2] if body.n_joints else None
    if rel_angle is not None and len(traj.torques):
        energy = float(np.abs(traj.torques * np.diff(rel_angle, axis=0)).sum())
    else:
        energy = 0.0
    return {
        "distance": float(traj.pos[-1, 0, 0] - traj.pos[0, 0, 0]),
        "peak_height": float(clear.max()),
        "mean_pitch": float(traj.pos[:, 0, 2].mean()),
        "energy": energy,
    }
