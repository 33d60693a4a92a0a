"""Spring-damper point contact between the tool tip and the tissue surface.

Reported forces are those the tool exerts on the tissue, in the sensor frame
(axes parallel to the world frame): pressing down gives negative z.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .scene import MaterialModel
from .trajectory import TipTrajectory

DEFAULT_MAX_FORCE = 10.0
_V_EPS = 1e-3  # m/s, smooths the drag direction near zero sliding speed


@dataclass
class ContactResult:
    times: np.ndarray
    pos: np.ndarray  # tip, tissue frame
    vel: np.ndarray
    indentation: np.ndarray  # (T,) metres into the surface, >= 0
    displacement: np.ndarray  # (T,3) tip minus grasp anchor, zero when not grasping
    grasp: np.ndarray  # (T,) bool
    force: np.ndarray  # (T,3) newtons on the tissue


def contact_force(pos: np.ndarray, vel: np.ndarray, grasp: np.ndarray, anchor: np.ndarray,
                  material: MaterialModel, max_force: float = DEFAULT_MAX_FORCE) -> np.ndarray:
    """Vectorized force law for positions/velocities in the tissue frame."""
    k, b = material.stiffness, material.damping
    delta = np.maximum(-pos[:, 2], 0.0)
    delta_rate = -vel[:, 2]
    normal = np.where(delta > 0, np.maximum(k * delta + b * delta_rate, 0.0), 0.0)
    vt = vel[:, :2]
    speed = np.linalg.norm(vt, axis=1, keepdims=True)
    drag = material.friction * normal[:, None] * vt / (speed + _V_EPS)
    free = np.column_stack([drag, -normal])

    stiff = np.array([k * material.shear_ratio, k * material.shear_ratio, k])
    disp = np.where(grasp[:, None], pos - np.nan_to_num(anchor), 0.0)
    held = stiff * disp + b * vel  # tissue is dragged toward the tool
    force = np.where(grasp[:, None], held, free)

    mag = np.linalg.norm(force, axis=1, keepdims=True)
    scale = np.where(mag > max_force, max_force / np.maximum(mag, 1e-300), 1.0)
    return force * scale


def simulate_contact(traj: TipTrajectory, material: MaterialModel, dt: float,
                     max_force: float = DEFAULT_MAX_FORCE) -> ContactResult:
    """Sample ``traj`` every ``dt`` seconds and evaluate the contact force."""
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    n = int(round(traj.duration / dt))
    times = np.arange(n) * dt
    s = traj.sample(times)
    if not (np.isfinite(s["pos"]).all() and np.isfinite(s["vel"]).all()):
        raise ValueError("trajectory contains non-finite samples")
    anchor = traj.anchors(times)
    grasp = s["grasp"] & np.isfinite(anchor[:, 0])
    force = contact_force(s["pos"], s["vel"], grasp, anchor, material, max_force)
    disp = np.where(grasp[:, None], s["pos"] - np.nan_to_num(anchor), 0.0)
    indentation = np.maximum(-s["pos"][:, 2], 0.0)
    return ContactResult(times, s["pos"], s["vel"], indentation, disp, grasp, force)
