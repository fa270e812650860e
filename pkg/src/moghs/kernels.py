"""Hot numeric kernels: planar articulated dynamics and MPPI rollouts.

Maximal-coordinate semi-implicit Euler.  Links are capsules with state
(x, z, theta) at the center of mass; joints are solved by sequential
impulses with Baumgarte stabilization; ground contact is a penalty normal
force with regularized Coulomb friction.  Compiled with numba when the
accelerated lane is active (see moghs.accel); the same code runs uncompiled
in the pure-NumPy lane.
"""

import math

import numpy as np

from .accel import njit

REWARD_FLAT = 0  # displacement rate of the root plus upright bonus
REWARD_JUMP = 1  # peak ground clearance of the lowest point plus upright bonus
REWARD_TIP = 2  # mean height of the last link's far endpoint


@njit(cache=True)
def substep(
    pos,
    vel,
    half_len,
    radius,
    inv_mass,
    inv_inertia,
    jparent,
    jchild,
    jkind,
    jrest,
    jdamp,
    torques,
    dt,
    gravity,
    contact_k,
    contact_c,
    mu,
    vband,
    iters,
    beta,
):
    n = pos.shape[0]
    nj = jparent.shape[0]

    for i in range(n):
        if inv_mass[i] > 0.0:
            vel[i, 1] -= gravity * dt

    # penalty ground contact at both capsule endpoints; the damping parts of
    # the normal and in-band friction forces are implicit so light links
    # stay stable at the configured stiffness
    for i in range(n):
        if inv_mass[i] == 0.0:
            continue
        c = math.cos(pos[i, 2])
        s = math.sin(pos[i, 2])
        for e in range(2):
            sign = -1.0 if e == 0 else 1.0
            rx = sign * half_len[i] * c
            rz = sign * half_len[i] * s
            pz = pos[i, 1] + rz
            depth = radius[i] - pz
            if depth > 0.0:
                vx = vel[i, 0] - vel[i, 2] * rz
                vz = vel[i, 1] + vel[i, 2] * rx
                kz = inv_mass[i] + inv_inertia[i] * rx * rx
                kx = inv_mass[i] + inv_inertia[i] * rz * rz
                vz_post = (vz + dt * kz * contact_k * depth) / (1.0 + dt * kz * contact_c)
                fn = contact_k * depth - contact_c * vz_post
                if fn < 0.0:
                    fn = 0.0
                slope = mu * fn / vband
                vx_post = vx / (1.0 + dt * kx * slope)
                ft = -slope * vx_post
                if ft > mu * fn:
                    ft = mu * fn
                elif ft < -mu * fn:
                    ft = -mu * fn
                vel[i, 0] += dt * ft * inv_mass[i]
                vel[i, 1] += dt * fn * inv_mass[i]
                vel[i, 2] += dt * (rx * fn - rz * ft) * inv_inertia[i]

    # motor torques (explicit) and joint damping (implicit) on revolute joints
    for j in range(nj):
        p = jparent[j]
        c_ = jchild[j]
        if jkind[j] == 1:
            vel[c_, 2] += dt * torques[j] * inv_inertia[c_]
            vel[p, 2] -= dt * torques[j] * inv_inertia[p]
            ki = inv_inertia[p] + inv_inertia[c_]
            if jdamp[j] > 0.0 and ki > 0.0:
                wrel = vel[c_, 2] - vel[p, 2]
                lam = -jdamp[j] * dt * wrel / (1.0 + jdamp[j] * dt * ki)
                vel[c_, 2] += lam * inv_inertia[c_]
                vel[p, 2] -= lam * inv_inertia[p]

    # sequential impulses: anchor coincidence, plus weld angle for fixed joints
    for _ in range(iters):
        for j in range(nj):
            p = jparent[j]
            c_ = jchild[j]
            cp = math.cos(pos[p, 2])
            sp = math.sin(pos[p, 2])
            cc = math.cos(pos[c_, 2])
            sc = math.sin(pos[c_, 2])
            rax = half_len[p] * cp
            raz = half_len[p] * sp
            rbx = -half_len[c_] * cc
            rbz = -half_len[c_] * sc
            ex = (pos[p, 0] + rax) - (pos[c_, 0] + rbx)
            ez = (pos[p, 1] + raz) - (pos[c_, 1] + rbz)
            bx = (vel[p, 0] - vel[p, 2] * raz) - (vel[c_, 0] - vel[c_, 2] * rbz) + beta / dt * ex
            bz = (vel[p, 1] + vel[p, 2] * rax) - (vel[c_, 1] + vel[c_, 2] * rbx) + beta / dt * ez
            k11 = inv_mass[p] + inv_mass[c_] + inv_inertia[p] * raz * raz + inv_inertia[c_] * rbz * rbz
            k12 = -inv_inertia[p] * rax * raz - inv_inertia[c_] * rbx * rbz
            k22 = inv_mass[p] + inv_mass[c_] + inv_inertia[p] * rax * rax + inv_inertia[c_] * rbx * rbx
            det = k11 * k22 - k12 * k12
            if det > 1e-14:
                px = (-k22 * bx + k12 * bz) / det
                pz = (k12 * bx - k11 * bz) / det
                vel[p, 0] += px * inv_mass[p]
                vel[p, 1] += pz * inv_mass[p]
                vel[p, 2] += (rax * pz - raz * px) * inv_inertia[p]
                vel[c_, 0] -= px * inv_mass[c_]
                vel[c_, 1] -= pz * inv_mass[c_]
                vel[c_, 2] -= (rbx * pz - rbz * px) * inv_inertia[c_]
            if jkind[j] == 0:
                ki = inv_inertia[p] + inv_inertia[c_]
                if ki > 0.0:
                    werr = (vel[c_, 2] - vel[p, 2]) + beta / dt * (
                        pos[c_, 2] - pos[p, 2] - jrest[j]
                    )
                    lam = -werr / ki
                    vel[c_, 2] += lam * inv_inertia[c_]
                    vel[p, 2] -= lam * inv_inertia[p]

    for i in range(n):
        pos[i, 0] += dt * vel[i, 0]
        pos[i, 1] += dt * vel[i, 1]
        pos[i, 2] += dt * vel[i, 2]


@njit(cache=True)
def seg_pool_forward(h, starts, sizes):
    """Per-segment mean and max over contiguous row blocks of h [N, H]."""
    B = starts.shape[0]
    H = h.shape[1]
    mean = np.zeros((B, H))
    mx = np.full((B, H), -1e300)
    for b in range(B):
        s = starts[b]
        e = s + sizes[b]
        for r in range(s, e):
            for f in range(H):
                v = h[r, f]
                mean[b, f] += v
                if v > mx[b, f]:
                    mx[b, f] = v
        for f in range(H):
            mean[b, f] /= sizes[b]
    return mean, mx


@njit(cache=True)
def seg_pool_backward(h, mx, d_mean, d_max, starts, sizes):
    """Gradient through mean+max pooling; max gradient splits over ties."""
    N = h.shape[0]
    H = h.shape[1]
    B = starts.shape[0]
    dh = np.empty((N, H))
    counts = np.empty(H)
    for b in range(B):
        s = starts[b]
        e = s + sizes[b]
        for f in range(H):
            counts[f] = 0.0
        for r in range(s, e):
            for f in range(H):
                if h[r, f] == mx[b, f]:
                    counts[f] += 1.0
        for r in range(s, e):
            for f in range(H):
                g = d_mean[b, f] / sizes[b]
                if h[r, f] == mx[b, f]:
                    g += d_max[b, f] / counts[f]
                dh[r, f] = g
    return dh


@njit(cache=True)
def state_finite(pos, vel):
    for i in range(pos.shape[0]):
        for k in range(3):
            if not (math.isfinite(pos[i, k]) and math.isfinite(vel[i, k])):
                return False
    return True


@njit(cache=True)
def run_steps(
    pos,
    vel,
    half_len,
    radius,
    inv_mass,
    inv_inertia,
    jparent,
    jchild,
    jkind,
    jrest,
    jdamp,
    torques_seq,
    substeps,
    dt,
    gravity,
    contact_k,
    contact_c,
    mu,
    vband,
    iters,
    beta,
    traj_pos,
    traj_vel,
):
    """Advance len(torques_seq) control steps in place, recording each one.

    traj_pos/traj_vel have shape [T+1, n, 3]; row 0 must hold the initial
    state.  Returns False as soon as the state stops being finite.
    """
    steps = torques_seq.shape[0]
    for t in range(steps):
        for _ in range(substeps):
            substep(
                pos, vel, half_len, radius, inv_mass, inv_inertia,
                jparent, jchild, jkind, jrest, jdamp, torques_seq[t],
                dt, gravity, contact_k, contact_c, mu, vband, iters, beta,
            )
        if not state_finite(pos, vel):
            return False
        traj_pos[t + 1] = pos
        traj_vel[t + 1] = vel
    return True


@njit(cache=True)
def _lowest_clearance(pos, half_len, radius):
    low = 1e300
    for i in range(pos.shape[0]):
        c = math.cos(pos[i, 2])
        s = math.sin(pos[i, 2])
        for e in range(2):
            sign = -1.0 if e == 0 else 1.0
            z = pos[i, 1] + sign * half_len[i] * s - radius[i]
            if z < low:
                low = z
    return low


@njit(cache=True)
def rollout_rewards(
    pos0,
    vel0,
    half_len,
    radius,
    inv_mass,
    inv_inertia,
    jparent,
    jchild,
    jkind,
    jrest,
    jdamp,
    jtorque,
    nominal,
    noise,
    substeps,
    dt,
    gravity,
    contact_k,
    contact_c,
    mu,
    vband,
    iters,
    beta,
    code,
    c_stability,
    c_peak,
):
    """Total trajectory reward of each perturbed control sequence.

    Non-finite rollouts score -inf.  Rewards mirror the evaluation-phase
    trajectory formulas, applied over the planning window.
    """
    samples = noise.shape[0]
    horizon = nominal.shape[0]
    nj = nominal.shape[1]
    out = np.empty(samples)
    pos = np.empty_like(pos0)
    vel = np.empty_like(vel0)
    torques = np.empty(nj)
    window = horizon * substeps * dt
    for k in range(samples):
        pos[:] = pos0
        vel[:] = vel0
        x_start = pos0[0, 0]
        cos_sum = 0.0
        peak = -1e300
        tip_sum = 0.0
        ok = True
        for t in range(horizon):
            for j in range(nj):
                u = nominal[t, j] + noise[k, t, j]
                if u > jtorque[j]:
                    u = jtorque[j]
                elif u < -jtorque[j]:
                    u = -jtorque[j]
                torques[j] = u
            for _ in range(substeps):
                substep(
                    pos, vel, half_len, radius, inv_mass, inv_inertia,
                    jparent, jchild, jkind, jrest, jdamp, torques,
                    dt, gravity, contact_k, contact_c, mu, vband, iters, beta,
                )
            if not state_finite(pos, vel):
                ok = False
                break
            if code == REWARD_FLAT:
                cos_sum += math.cos(pos[0, 2])
            elif code == REWARD_JUMP:
                clear = _lowest_clearance(pos, half_len, radius)
                if clear > peak:
                    peak = clear
                cos_sum += math.cos(pos[0, 2])
            else:
                last = pos.shape[0] - 1
                tip_sum += pos[last, 1] + half_len[last] * math.sin(pos[last, 2])
        if not ok:
            out[k] = -np.inf
        elif code == REWARD_FLAT:
            out[k] = (pos[0, 0] - x_start) / window + c_stability * cos_sum / horizon
        elif code == REWARD_JUMP:
            out[k] = c_peak * peak + c_stability * cos_sum / horizon
        else:
            out[k] = tip_sum / horizon
    return out
