"""Planar articulated rigid bodies built from terminal designs.

Maps a design tree onto capsule links joined at their endpoints, assembles
the rest pose resting on the ground, and rejects designs whose rest pose
self-overlaps.  Time stepping delegates to the kernels module.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .grammar import DesignGraph, is_terminal

GRAVITY = 9.81


class InstantiationError(Exception):
    """Design cannot be physically realized (rest-pose overlap, bad tree)."""


class SimulationError(Exception):
    """Simulation state became non-finite."""


@dataclass(frozen=True)
class SimConfig:
    dt: float = 1.0 / 480.0
    solver_iters: int = 8
    baumgarte: float = 0.2
    gravity: float = GRAVITY
    contact_stiffness: float = 1.0e4
    contact_damping: float = 50.0
    friction_mu: float = 0.8
    friction_vband: float = 0.01
    joint_damping: float = 0.2
    overlap_tol: float = 0.005


@dataclass
class ArticulatedBody:
    """Array-of-links form of a terminal design, ready for the kernels.

    Link 0 is the tree root.  Joint j connects the parent's far endpoint to
    the child's near endpoint; fixed joints weld the relative angle at the
    rest value, revolute joints are actuated up to their torque limit.
    """

    length: np.ndarray
    radius: np.ndarray
    mass: np.ndarray
    inertia: np.ndarray
    inv_mass: np.ndarray
    inv_inertia: np.ndarray
    jparent: np.ndarray
    jchild: np.ndarray
    jkind: np.ndarray  # 0 fixed, 1 revolute
    jrest: np.ndarray
    jtorque: np.ndarray
    jdamp: np.ndarray
    rest_pos: np.ndarray  # [n, 3] grounded rest pose
    half_len: np.ndarray = field(init=False)

    def __post_init__(self):
        self.half_len = self.length / 2.0

    @property
    def n_links(self) -> int:
        return len(self.length)

    @property
    def n_joints(self) -> int:
        return len(self.jparent)

    @property
    def n_actuated(self) -> int:
        return int((self.jkind == 1).sum())

    def kernel_args(self):
        return (
            self.half_len,
            self.radius,
            self.inv_mass,
            self.inv_inertia,
            self.jparent,
            self.jchild,
            self.jkind,
            self.jrest,
            self.jdamp,
        )

    def endpoints(self, pos: np.ndarray) -> np.ndarray:
        """World endpoints of every link for a [n,3] pose array: [n, 2, 2]."""
        c = np.cos(pos[:, 2])
        s = np.sin(pos[:, 2])
        off = np.stack([self.half_len * c, self.half_len * s], axis=1)
        center = pos[:, :2]
        return np.stack([center - off, center + off], axis=1)

    def endpoints_batch(self, pos: np.ndarray) -> np.ndarray:
        """Endpoints across a [T,n,3] pose batch: [T, n, 2 ends, 2 coords]."""
        c = np.cos(pos[..., 2])
        s = np.sin(pos[..., 2])
        off = np.stack([self.half_len * c, self.half_len * s], axis=-1)
        center = pos[..., :2]
        return np.stack([center - off, center + off], axis=2)

    def lowest_point(self, pos: np.ndarray) -> float:
        return float((self.endpoints(pos)[:, :, 1] - self.radius[:, None]).min())

    def top_height(self, pos: np.ndarray) -> float:
        return float((self.endpoints(pos)[:, :, 1] + self.radius[:, None]).max())

    def clamp_torques(self, torques: np.ndarray) -> np.ndarray:
        return np.clip(torques, -self.jtorque, self.jtorque)

    def scale_torque_limits(self, scale: float) -> "ArticulatedBody":
        body = ArticulatedBody(
            self.length, self.radius, self.mass, self.inertia, self.inv_mass,
            self.inv_inertia, self.jparent, self.jchild, self.jkind, self.jrest,
            self.jtorque * scale, self.jdamp, self.rest_pos,
        )
        return body


@dataclass
class SimState:
    pos: np.ndarray  # [n, 3]: x, z, theta at the center of mass
    vel: np.ndarray  # [n, 3]
    time: float = 0.0

    def copy(self) -> "SimState":
        return SimState(self.pos.copy(), self.vel.copy(), self.time)


@dataclass
class Trajectory:
    times: np.ndarray  # [T+1]
    pos: np.ndarray  # [T+1, n, 3]
    vel: np.ndarray  # [T+1, n, 3]
    torques: np.ndarray  # [T, nj] applied (clamped) torques
    body: ArticulatedBody

    def __len__(self) -> int:
        return len(self.times)


def _segment_distance(a0, a1, b0, b1) -> float:
    """Min distance between 2D segments a0-a1 and b0-b1."""
    def point_seg(p, q0, q1):
        d = q1 - q0
        denom = float(d @ d)
        t = 0.0 if denom == 0.0 else float(np.clip((p - q0) @ d / denom, 0.0, 1.0))
        return float(np.linalg.norm(p - (q0 + t * d)))

    da = a1 - a0
    db = b1 - b0
    denom = da[0] * db[1] - da[1] * db[0]
    if abs(denom) > 1e-12:
        t = ((b0[0] - a0[0]) * db[1] - (b0[1] - a0[1]) * db[0]) / denom
        u = ((b0[0] - a0[0]) * da[1] - (b0[1] - a0[1]) * da[0]) / denom
        if 0.0 <= t <= 1.0 and 0.0 <= u <= 1.0:
            return 0.0
    return min(
        point_seg(a0, b0, b1),
        point_seg(a1, b0, b1),
        point_seg(b0, a0, a1),
        point_seg(b1, a0, a1),
    )


def instantiate(design: DesignGraph, cfg: SimConfig | None = None, torque_scale: float = 1.0) -> ArticulatedBody:
    """Build the grounded articulated body of a terminal design.

    Mass uses the cylinder closed form density * pi * r^2 * length; inertia
    is the transverse value m (L^2/12 + r^2/4).  Raises InstantiationError
    when the rest pose self-overlaps beyond tolerance.
    """
    cfg = cfg or SimConfig()
    if not is_terminal(design):
        raise InstantiationError("design still contains nonterminal symbols")

    order = [design.root]
    for i in order:
        order.extend(sorted(design.children_of(i)))
    new_index = {old: new for new, old in enumerate(order)}

    n = len(order)
    length = np.array([design.nodes[i].length for i in order])
    radius = np.array([design.nodes[i].radius for i in order])
    density = np.array([design.nodes[i].density for i in order])
    mass = density * np.pi * radius**2 * length
    inertia = mass * (length**2 / 12.0 + radius**2 / 4.0)

    jparent, jchild, jkind, jrest, jtorque = [], [], [], [], []
    for p, c in design.edges:
        node = design.nodes[c]
        jparent.append(new_index[p])
        jchild.append(new_index[c])
        jkind.append(0 if node.joint_kind == "fixed" else 1)
        jrest.append(node.attach_angle)
        jtorque.append(node.torque_limit * torque_scale)
    joint_order = (
        np.argsort(np.array(jchild, dtype=np.int64), kind="stable")
        if jchild
        else np.array([], dtype=np.int64)
    )

    body = ArticulatedBody(
        length=length,
        radius=radius,
        mass=mass,
        inertia=inertia,
        inv_mass=1.0 / mass,
        inv_inertia=1.0 / inertia,
        jparent=np.array(jparent, dtype=np.int64)[joint_order].reshape(-1),
        jchild=np.array(jchild, dtype=np.int64)[joint_order].reshape(-1),
        jkind=np.array(jkind, dtype=np.int64)[joint_order].reshape(-1),
        jrest=np.array(jrest, dtype=float)[joint_order].reshape(-1),
        jtorque=np.array(jtorque, dtype=float)[joint_order].reshape(-1),
        jdamp=np.full(len(jparent), cfg.joint_damping),
        rest_pos=np.zeros((n, 3)),
    )

    # assemble rest pose: root horizontal with its near endpoint at the origin
    pos = body.rest_pos
    theta = np.zeros(n)
    anchor = {0: np.zeros(2)}
    pos[0] = (body.half_len[0], 0.0, 0.0)
    for j in range(body.n_joints):
        p, c = int(body.jparent[j]), int(body.jchild[j])
        theta[c] = theta[p] + body.jrest[j]
        start = anchor[p] + body.half_len[p] * 2 * np.array([math.cos(theta[p]), math.sin(theta[p])])
        direction = np.array([math.cos(theta[c]), math.sin(theta[c])])
        pos[c] = (*(start + body.half_len[c] * direction), theta[c])
        anchor[c] = start
    pos[:, 1] -= body.lowest_point(pos)

    _check_overlap(body, pos, cfg.overlap_tol)
    return body


def _check_overlap(body: ArticulatedBody, pos: np.ndarray, tol: float) -> None:
    ends = body.endpoints(pos)
    n = body.n_links
    for i in range(n):
        for j in range(i + 1, n):
            shared = False
            for ei in range(2):
                for ej in range(2):
                    if np.linalg.norm(ends[i, ei] - ends[j, ej]) < 1e-9:
                        shared = True
            if shared:
                continue
            d = _segment_distance(ends[i, 0], ends[i, 1], ends[j, 0], ends[j, 1])
            if d < body.radius[i] + body.radius[j] - tol:
                raise InstantiationError(
                    f"links {i} and {j} overlap at rest (separation {d:.4f} m)"
                )


def rest_state(body: ArticulatedBody) -> SimState:
    return SimState(body.rest_pos.copy(), np.zeros_like(body.rest_pos), 0.0)


def step(body: ArticulatedBody, state: SimState, torques, dt: float, cfg: SimConfig | None = None) -> SimState:
    """One integration substep; input state is not modified."""
    cfg = cfg or SimConfig()
    out = state.copy()
    tq = body.clamp_torques(np.asarray(torques, dtype=float))
    kernels.substep(
        out.pos, out.vel, *body.kernel_args(), tq, dt,
        cfg.gravity, cfg.contact_stiffness, cfg.contact_damping,
        cfg.friction_mu, cfg.friction_vband, cfg.solver_iters, cfg.baumgarte,
    )
    if not kernels.state_finite(out.pos, out.vel):
        raise SimulationError("state became non-finite")
    out.time += dt
    return out


def simulate(
    body: ArticulatedBody,
    state: SimState,
    torques_seq: np.ndarray | None,
    n_steps: int,
    dt: float,
    cfg: SimConfig | None = None,
    substeps: int = 1,
) -> Trajectory:
    """Run n_steps control steps of ``substeps`` substeps each, recording all.

    ``torques_seq`` is [n_steps, nj] (zeros when None).  Raises
    SimulationError on non-finite states.
    """
    cfg = cfg or SimConfig()
    nj = body.n_joints
    if torques_seq is None:
        torques_seq = np.zeros((n_steps, nj))
    torques_seq = body.clamp_torques(np.asarray(torques_seq, dtype=float)).reshape(n_steps, nj)
    n = body.n_links
    traj_pos = np.empty((n_steps + 1, n, 3))
    traj_vel = np.empty((n_steps + 1, n, 3))
    traj_pos[0] = state.pos
    traj_vel[0] = state.vel
    pos = state.pos.copy()
    vel = state.vel.copy()
    ok = kernels.run_steps(
        pos, vel, *body.kernel_args(), torques_seq, substeps, dt,
        cfg.gravity, cfg.contact_stiffness, cfg.contact_damping,
        cfg.friction_mu, cfg.friction_vband, cfg.solver_iters, cfg.baumgarte,
        traj_pos, traj_vel,
    )
    if not ok:
        raise SimulationError("state became non-finite during simulation")
    times = state.time + dt * substeps * np.arange(n_steps + 1)
    return Trajectory(times, traj_pos, traj_vel, torques_seq, body)


def mechanical_energy(body: ArticulatedBody, pos: np.ndarray, vel: np.ndarray, gravity: float = GRAVITY) -> float:
    """Kinetic plus gravitational potential energy of one state."""
    ke = 0.5 * float(
        (body.mass * (vel[:, 0] ** 2 + vel[:, 1] ** 2)).sum()
        + (body.inertia * vel[:, 2] ** 2).sum()
    )
    pe = gravity * float((body.mass * pos[:, 1]).sum())
    return ke + pe


def chain_body(
    lengths,
    radii,
    density: float = 1000.0,
    attach_angles=None,
    torque_limits=None,
    joint_damping: float = 0.2,
    static_root: bool = False,
    root_pose=(0.0, 0.0, 0.0),
) -> ArticulatedBody:
    """Hand-built serial chain for tests and control rigs.

    With ``static_root`` the first link is immovable (an anchor for
    pendulum-style setups); ``root_pose`` places its center of mass.
    """
    lengths = np.asarray(lengths, dtype=float)
    n = len(lengths)
    radii = np.broadcast_to(np.asarray(radii, dtype=float), (n,)).copy()
    mass = density * np.pi * radii**2 * lengths
    inertia = mass * (lengths**2 / 12.0 + radii**2 / 4.0)
    inv_mass = 1.0 / mass
    inv_inertia = 1.0 / inertia
    if static_root:
        inv_mass[0] = 0.0
        inv_inertia[0] = 0.0
    nj = n - 1
    attach = np.zeros(nj) if attach_angles is None else np.asarray(attach_angles, dtype=float)
    tq = np.full(nj, np.inf) if torque_limits is None else np.asarray(torque_limits, dtype=float)
    body = ArticulatedBody(
        length=lengths,
        radius=radii,
        mass=mass,
        inertia=inertia,
        inv_mass=inv_mass,
        inv_inertia=inv_inertia,
        jparent=np.arange(nj, dtype=np.int64),
        jchild=np.arange(1, n, dtype=np.int64),
        jkind=np.ones(nj, dtype=np.int64),
        jrest=attach,
        jtorque=tq,
        jdamp=np.full(nj, joint_damping),
        rest_pos=np.zeros((n, 3)),
    )
    pos = body.rest_pos
    theta = np.zeros(n)
    x0, z0, th0 = root_pose
    theta[0] = th0
    pos[0] = (x0, z0, th0)
    start = np.array([x0, z0]) + body.half_len[0] * np.array([math.cos(th0), math.sin(th0)])
    for j in range(nj):
        c = j + 1
        theta[c] = theta[j] + attach[j]
        direction = np.array([math.cos(theta[c]), math.sin(theta[c])])
        pos[c] = (*(start + body.half_len[c] * direction), theta[c])
        start = start + lengths[c] * direction
    return body
