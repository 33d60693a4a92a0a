"""Seven-joint cable-driven instrument arm with a remote center of motion.

Joint order: outer yaw, outer pitch, insertion (prismatic, metres), tool
roll, wrist pitch, wrist yaw, jaw.  The base frame sits at the remote center
with axes parallel to the world frame; the jaw joint does not move the tip.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation

N_JOINTS = 7
INSERTION_LIMITS = (0.04, 0.26)


class UnreachableError(ValueError):
    pass


@dataclass(frozen=True)
class ToolModel:
    name: str
    wrist_length: float  # wrist pitch axis to wrist yaw axis (m)
    jaw_length: float  # wrist yaw axis to tip (m)
    coulomb: tuple[float, ...]  # per-joint Coulomb friction (N*m, N for insertion)
    viscous: tuple[float, ...]  # per-joint viscous friction (N*m*s/rad, N*s/m)
    jaw_width: float  # rendered jaw half-width at the base (m)
    jaw_taper: float  # tip width / base width
    jaw_curve: float  # lateral bow of the jaw centre-line (m)
    shaft_radius: float = 0.0042

    def friction(self, q_dot: np.ndarray) -> np.ndarray:
        return np.asarray(self.coulomb) * np.sign(q_dot) + np.asarray(self.viscous) * q_dot

    def jaw_polygons(self, opening: float) -> list[np.ndarray]:
        """Jaw outlines in the tip frame (origin at the wrist yaw axis, -z toward the tip).

        Each jaw is split into two convex quads so a bowed jaw stays convex per piece.
        """
        polys = []
        L = self.jaw_length
        for side in (-1.0, 1.0):
            ang = side * 0.5 * opening
            c, s = np.cos(ang), np.sin(ang)
            pts = []
            for a, b in ((0.0, 0.55), (0.5, 1.0)):
                quad = []
                for frac, edge in ((a, -1), (b, -1), (b, 1), (a, 1)):
                    half = self.jaw_width * (1.0 - (1.0 - self.jaw_taper) * frac)
                    bow = self.jaw_curve * np.sin(np.pi * frac)
                    x_local = edge * half + bow
                    z_local = -L * frac
                    # opening rotates the jaw about the yaw axis in the x-z plane
                    quad.append([c * x_local - s * z_local, 0.0015 * side, s * x_local + c * z_local])
                pts.append(np.array(quad))
            polys.extend(pts)
        return polys


CADIERE = ToolModel("cadiere", wrist_length=0.0091, jaw_length=0.0102,
                    coulomb=(0.020, 0.022, 0.18, 0.004, 0.006, 0.006, 0.005),
                    viscous=(0.030, 0.035, 0.60, 0.002, 0.004, 0.004, 0.003),
                    jaw_width=0.0024, jaw_taper=0.55, jaw_curve=0.0)
MARYLAND = ToolModel("maryland", wrist_length=0.0091, jaw_length=0.0110,
                     coulomb=(0.032, 0.030, 0.27, 0.006, 0.010, 0.011, 0.008),
                     viscous=(0.045, 0.050, 0.85, 0.003, 0.007, 0.007, 0.005),
                     jaw_width=0.0014, jaw_taper=0.35, jaw_curve=0.0012)
TOOLS = {t.name: t for t in (CADIERE, MARYLAND)}


def _rot(axis: str, a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    if axis == "x":
        return np.array([[1, 0, 0], [0, c, -s], [0, s, c]])
    if axis == "y":
        return np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]])
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]])


_AXES = {"x": np.array([1.0, 0, 0]), "y": np.array([0, 1.0, 0]), "z": np.array([0, 0, 1.0])}


@dataclass(frozen=True)
class Arm:
    """Kinematic chain for one tool; all poses are in the arm base frame."""

    tool: ToolModel = CADIERE

    def frames(self, q: np.ndarray):
        """Joint origins/axes in the base frame plus the tip pose.

        Returns (origins (7,3), axes (7,3), kinds, tip position, tip rotation,
        wrist pitch point).
        """
        q = np.asarray(q, dtype=float)
        R = np.eye(3)
        p = np.zeros(3)
        origins, axes, kinds = [], [], []

        def revolute(a, angle):
            nonlocal R
            origins.append(p.copy())
            axes.append(R @ _AXES[a])
            kinds.append("R")
            R = R @ _rot(a, angle)

        revolute("z", q[0])
        revolute("x", q[1])
        origins.append(p.copy())
        axes.append(R @ np.array([0, 0, -1.0]))
        kinds.append("P")
        p = p + R @ np.array([0, 0, -q[2]])
        revolute("z", q[3])
        revolute("x", q[4])
        wrist = p.copy()
        p = p + R @ np.array([0, 0, -self.tool.wrist_length])
        revolute("y", q[5])
        yaw_point = p.copy()
        p = p + R @ np.array([0, 0, -self.tool.jaw_length])
        origins.append(p.copy())
        axes.append(R @ _AXES["y"])
        kinds.append("J")
        return np.array(origins), np.array(axes), kinds, p, R, wrist, yaw_point

    def fk(self, q: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        _, _, _, p, R, _, _ = self.frames(q)
        return p, R

    def jacobian(self, q: np.ndarray) -> np.ndarray:
        """6x7 geometric Jacobian of the tip (linear rows first) in the base frame."""
        origins, axes, kinds, p, _, _, _ = self.frames(q)
        J = np.zeros((6, N_JOINTS))
        for i, (o, a, k) in enumerate(zip(origins, axes, kinds)):
            if k == "R":
                J[:3, i] = np.cross(a, p - o)
                J[3:, i] = a
            elif k == "P":
                J[:3, i] = a
            # jaw column stays zero
        return J

    def ik_position(self, target: np.ndarray, wrist: np.ndarray, q0: np.ndarray | None = None,
                    tol: float = 1e-12, max_iter: int = 50) -> np.ndarray:
        """Solve yaw, pitch and insertion so the tip reaches ``target`` with the
        given (roll, wrist pitch, wrist yaw, jaw) values held fixed."""
        q = np.zeros(N_JOINTS)
        q[3:] = wrist
        if q0 is not None:
            q[:3] = q0[:3]
        else:
            d = target / np.linalg.norm(target)
            q[0] = np.arctan2(-d[0], d[1]) if abs(d[0]) + abs(d[1]) > 1e-12 else 0.0
            q[1] = np.arccos(np.clip(-d[2], -1, 1))
            q[2] = np.linalg.norm(target)
        for _ in range(max_iter):
            p, _ = self.fk(q)
            err = target - p
            if np.linalg.norm(err) < tol:
                break
            J = self.jacobian(q)[:3, :3]
            q[:3] += np.linalg.solve(J, err)
        p, _ = self.fk(q)
        if np.linalg.norm(target - p) > 1e-9:
            raise UnreachableError(f"inverse kinematics did not converge for target {target}")
        if not (INSERTION_LIMITS[0] <= q[2] <= INSERTION_LIMITS[1]):
            raise UnreachableError(f"insertion {q[2]:.4f} m outside limits {INSERTION_LIMITS}")
        return q


def quaternion(R: np.ndarray) -> np.ndarray:
    """(x, y, z, w) unit quaternion with w >= 0."""
    quat = Rotation.from_matrix(R).as_quat()
    if quat[3] < 0:
        quat = -quat
    return quat / np.linalg.norm(quat)
