"""Robot-state synthesis: joint positions, velocities, torques and wrench
estimates consistent with a tip trajectory and the contact force.

Torque model per joint::

    tau_des = J^T [f; 0] + g(q) + grip
    tau     = tau_des + friction(q_dot, load) + noise

``g(q)`` is a configuration-dependent gravity/cable-spring term and the
friction Coulomb level grows with the external load, neither of which a
constant-offset dynamics model can capture.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from ..state import KIN_DIM, SLICES, STATE_DIM
from .kinematics import N_JOINTS, Arm, UnreachableError, quaternion


@dataclass(frozen=True)
class Corruption:
    """Distortions applied on top of the ideal Jacobian-transpose torques."""

    name: str = "default"
    friction: bool = True
    load_friction: float = 0.15  # extra Coulomb per unit external joint load
    gravity: bool = True
    tau_noise: tuple[float, ...] = (0.004, 0.004, 0.03, 0.0006, 0.0008, 0.0008, 0.0008)
    force_noise: float = 0.10  # N, white noise on the wrench estimate
    force_drift: float = 0.20  # N, stationary std of a slow bias on the wrench estimate
    drift_tau: float = 2.0  # s, bias correlation time
    moment_noise: float = 0.002  # N*m
    grip_torque: float = 0.04  # N*m on the jaw joint while grasping
    servo_lag: float = 0.03  # s
    servo_stiffness: tuple[float, ...] = (40.0, 40.0, 400.0, 5.0, 5.0, 5.0, 5.0)

    @property
    def noisy(self) -> bool:
        return any(s > 0 for s in self.tau_noise) or self.force_noise > 0 or self.force_drift > 0 \
            or self.moment_noise > 0


IDEAL = Corruption("ideal", friction=False, load_friction=0.0, gravity=False, tau_noise=(0.0,) * 7,
                   force_noise=0.0, force_drift=0.0, moment_noise=0.0)
FRICTION_ONLY = replace(IDEAL, name="friction_only", friction=True)
DEFAULT = Corruption()
PRESETS = {c.name: c for c in (IDEAL, FRICTION_ONLY, DEFAULT)}

_G_OFFSET = np.array([0.010, 0.060, 0.45, 0.003, 0.002, -0.002, 0.0])


def gravity_torque(q: np.ndarray) -> np.ndarray:
    """Configuration-dependent gravity and cable-spring torques, (T, 7)."""
    q = np.atleast_2d(q)
    g = np.tile(_G_OFFSET, (len(q), 1))
    g[:, 0] += 0.02 * np.sin(q[:, 0])
    g[:, 1] += 0.12 * np.sin(q[:, 1]) * (0.5 + q[:, 2])
    g[:, 2] += 0.25 * np.cos(q[:, 1]) - 0.2
    g[:, 3] += 0.004 * np.sin(q[:, 3])
    g[:, 4] += 0.006 * np.sin(q[:, 4])
    g[:, 5] += 0.006 * np.sin(q[:, 5])
    return g


def _ou(rng: np.random.Generator, n: int, dt: float, sigma: float, tau: float, dims: int = 3) -> np.ndarray:
    out = np.zeros((n, dims))
    if sigma <= 0 or n == 0:
        return out
    a = np.exp(-dt / tau)
    step = sigma * np.sqrt(1 - a * a)
    out[0] = rng.normal(0, sigma, dims)
    for i in range(1, n):
        out[i] = a * out[i - 1] + step * rng.normal(0, 1, dims)
    return out


def solve_joints(arm: Arm, tip_base: np.ndarray, wrist: np.ndarray) -> np.ndarray:
    """Inverse kinematics per tick with warm start; errors name the failing tick."""
    n = len(tip_base)
    q = np.zeros((n, N_JOINTS))
    prev = None
    for i in range(n):
        try:
            q[i] = arm.ik_position(tip_base[i], wrist[i], prev)
        except UnreachableError as exc:
            raise UnreachableError(f"tick {i}: {exc}") from None
        prev = q[i]
    return q


def synthesize_robot_state(arm: Arm, tip_base: np.ndarray, wrist: np.ndarray, f_gt: np.ndarray,
                           grasp: np.ndarray, dt: float, corruption: Corruption = DEFAULT,
                           seed=None) -> tuple[np.ndarray, dict]:
    """Build the (T, 54) state sequence.

    ``tip_base`` is the tip position in the arm base frame, ``f_gt`` the force
    the tool applies to the tissue (base-frame axes).  Returns the states and
    a dict of intermediate arrays (q, J, clean torques) used by tests.
    """
    tip_base = np.asarray(tip_base, dtype=float)
    f_gt = np.asarray(f_gt, dtype=float)
    n = len(tip_base)
    if not (np.isfinite(tip_base).all() and np.isfinite(f_gt).all()):
        raise ValueError("non-finite tip pose or force")
    rng = np.random.default_rng(seed)
    tool = arm.tool

    q = solve_joints(arm, tip_base, wrist)
    q_dot = np.gradient(q, dt, axis=0) if n > 1 else np.zeros_like(q)

    states = np.zeros((n, STATE_DIM))
    J_all = np.zeros((n, 6, N_JOINTS))
    tau_ext = np.zeros((n, N_JOINTS))
    moments = np.zeros((n, 3))
    rots = np.zeros((n, 3, 3))
    for i in range(n):
        _, _, _, p, R, wrist_pt, _ = arm.frames(q[i])
        J = arm.jacobian(q[i])
        J_all[i] = J
        rots[i] = R
        tau_ext[i] = J[:3].T @ f_gt[i]
        twist = J @ q_dot[i]
        states[i, SLICES["p"]] = p
        states[i, SLICES["o"]] = quaternion(R)
        states[i, SLICES["v"]] = R.T @ twist[:3]
        states[i, SLICES["w"]] = R.T @ twist[3:]
        moments[i] = R.T @ np.cross(p - wrist_pt, f_gt[i])
        states[i, SLICES["f"]] = R.T @ f_gt[i]
    states[:, SLICES["q"]] = q
    states[:, SLICES["q_dot"]] = q_dot

    c = corruption
    tau_des = tau_ext.copy()
    if c.gravity:
        tau_des += gravity_torque(q)
    tau_des[:, 6] += np.where(grasp, c.grip_torque, 0.0)
    tau = tau_des.copy()
    if c.friction:
        coulomb = np.asarray(tool.coulomb) + c.load_friction * np.abs(tau_ext)
        tau += coulomb * np.sign(q_dot) + np.asarray(tool.viscous) * q_dot

    tau_noise = rng.normal(0, 1, (n, N_JOINTS)) * np.asarray(c.tau_noise)
    tau_des_noise = rng.normal(0, 1, (n, N_JOINTS)) * np.asarray(c.tau_noise) * 0.5
    drift = _ou(rng, n, dt, c.force_drift, c.drift_tau)
    f_noise = rng.normal(0, c.force_noise, (n, 3)) if c.force_noise > 0 else np.zeros((n, 3))
    m_noise = rng.normal(0, c.moment_noise, (n, 3)) if c.moment_noise > 0 else np.zeros((n, 3))

    q_des = q + c.servo_lag * q_dot + tau_des / np.asarray(c.servo_stiffness)
    states[:, SLICES["q_des"]] = q_des
    states[:, SLICES["tau"]] = tau + tau_noise
    states[:, SLICES["tau_des"]] = tau_des + tau_des_noise
    # wrench estimate: rotate the drift into the end-effector frame with the force
    states[:, SLICES["f"]] += np.einsum("nji,nj->ni", rots, drift) + f_noise
    states[:, SLICES["t"]] = moments + m_noise
    assert KIN_DIM == SLICES["f"].start
    return states, {"q": q, "q_dot": q_dot, "jacobian": J_all, "tau_ext": tau_ext, "tau_clean": tau}

