"""Sampling-based receding-horizon control (MPPI).

Each plan call perturbs the nominal torque sequence with Gaussian noise,
rolls every sample out through the simulator, and returns the
exponentially reward-weighted average.  Task execution replans every few
steps, warm-starting from the shifted previous plan.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import kernels
from .kernels import REWARD_FLAT, REWARD_JUMP, REWARD_TIP
from .physics import ArticulatedBody, SimConfig, SimState, SimulationError, Trajectory, rest_state


@dataclass(frozen=True)
class MppiConfig:
    horizon: int = 32  # control steps per rollout
    samples: int = 64
    noise_std: float = 0.5  # N*m
    temperature: float = 0.5
    executed: int = 4  # control steps per replan
    control_dt: float = 1.0 / 30.0
    substeps: int = 16

    @property
    def sim_dt(self) -> float:
        return self.control_dt / self.substeps


@dataclass(frozen=True)
class RolloutReward:
    """Trajectory reward the planner optimizes, dispatched by kernel code."""

    code: int
    stability_coef: float = 0.0
    peak_coef: float = 0.0

    @classmethod
    def flat(cls, stability_coef: float = 1.0) -> "RolloutReward":
        return cls(REWARD_FLAT, stability_coef=stability_coef)

    @classmethod
    def jump(cls, jump_coef: float = 10.0, stability_coef: float = 1.0) -> "RolloutReward":
        return cls(REWARD_JUMP, stability_coef=stability_coef, peak_coef=jump_coef)

    @classmethod
    def tip_height(cls) -> "RolloutReward":
        return cls(REWARD_TIP)


def mppi_plan(
    body: ArticulatedBody,
    state: SimState,
    reward: RolloutReward,
    cfg: MppiConfig,
    rng: np.random.Generator,
    nominal: np.ndarray | None = None,
    sim: SimConfig | None = None,
) -> np.ndarray:
    """One MPPI update of the nominal sequence; returns [horizon, nj] torques."""
    sim = sim or SimConfig()
    nj = body.n_joints
    if nominal is None:
        nominal = np.zeros((cfg.horizon, nj))
    noise = rng.normal(0.0, cfg.noise_std, size=(cfg.samples, cfg.horizon, nj))
    if nj:
        noise[:, :, body.jkind == 0] = 0.0  # welded joints take no torque
    rewards = kernels.rollout_rewards(
        state.pos, state.vel, *body.kernel_args(), body.jtorque, nominal, noise,
        cfg.substeps, cfg.sim_dt, sim.gravity, sim.contact_stiffness,
        sim.contact_damping, sim.friction_mu, sim.friction_vband,
        sim.solver_iters, sim.baumgarte,
        reward.code, reward.stability_coef, reward.peak_coef,
    )
    finite = np.isfinite(rewards)
    if not finite.any():
        warnings.warn("all MPPI rollouts diverged; returning zero controls")
        return np.zeros((cfg.horizon, nj))
    shifted = np.where(finite, (rewards - rewards[finite].max()) / cfg.temperature, -np.inf)
    weights = np.exp(shifted)
    weights /= weights.sum()
    return nominal + np.tensordot(weights, noise, axes=1)


def trajectory_reward(traj: Trajectory, reward: RolloutReward) -> float:
    """The planner's reward formula applied to an executed trajectory."""
    body = traj.body
    pos = traj.pos
    steps = pos[1:] if len(pos) > 1 else pos
    duration = traj.times[-1] - traj.times[0]
    if reward.code == REWARD_FLAT:
        rate = (pos[-1, 0, 0] - pos[0, 0, 0]) / duration if duration > 0 else 0.0
        return float(rate + reward.stability_coef * np.cos(steps[:, 0, 2]).mean())
    if reward.code == REWARD_JUMP:
        clear = (body.endpoints_batch(steps)[..., 1] - body.radius[None, :, None]).min(axis=(1, 2))
        return float(
            reward.peak_coef * clear.max()
            + reward.stability_coef * np.cos(steps[:, 0, 2]).mean()
        )
    tip = steps[:, -1, 1] + body.half_len[-1] * np.sin(steps[:, -1, 2])
    return float(tip.mean())


def run_task(
    body: ArticulatedBody,
    reward: RolloutReward,
    duration: float,
    cfg: MppiConfig,
    rng: np.random.Generator,
    sim: SimConfig | None = None,
    start: SimState | None = None,
):
    """Receding-horizon control for ``duration`` seconds.

    Returns (trajectory recorded at control steps, total reward under the
    planner's formula).  Raises SimulationError if the state diverges.
    """
    sim = sim or SimConfig()
    state = (start or rest_state(body)).copy()
    nj = body.n_joints
    total_steps = int(round(duration / cfg.control_dt))
    all_pos = [state.pos.copy()]
    all_vel = [state.vel.copy()]
    all_torques = []
    nominal = np.zeros((cfg.horizon, nj))
    done = 0
    while done < total_steps:
        nominal = mppi_plan(body, state, reward, cfg, rng, nominal=nominal, sim=sim)
        n_exec = min(cfg.executed, total_steps - done)
        torques = body.clamp_torques(nominal[:n_exec])
        traj_pos = np.empty((n_exec + 1, body.n_links, 3))
        traj_vel = np.empty_like(traj_pos)
        traj_pos[0] = state.pos
        traj_vel[0] = state.vel
        ok = kernels.run_steps(
            state.pos, state.vel, *body.kernel_args(), torques,
            cfg.substeps, cfg.sim_dt, sim.gravity, sim.contact_stiffness,
            sim.contact_damping, sim.friction_mu, sim.friction_vband,
            sim.solver_iters, sim.baumgarte, traj_pos, traj_vel,
        )
        if not ok:
            raise SimulationError("controlled simulation diverged")
        all_pos.extend(traj_pos[1:])
        all_vel.extend(traj_vel[1:])
        all_torques.extend(torques)
        state.time += n_exec * cfg.control_dt
        done += n_exec
        nominal = np.vstack([nominal[n_exec:], np.zeros((n_exec, nj))])
    times = cfg.control_dt * np.arange(total_steps + 1)
    traj = Trajectory(
        times,
        np.array(all_pos),
        np.array(all_vel),
        np.array(all_torques).reshape(total_steps, nj),
        body,
    )
    return traj, trajectory_reward(traj, reward)
