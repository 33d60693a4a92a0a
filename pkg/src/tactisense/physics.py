"""Physics baseline: a static friction + bias joint-torque model and a
Jacobian pseudo-inverse map from external joint torque to tip force.

The model is fitted on free-space samples of the training clips::

    tau ~ g + c * sign(q_dot) + d * q_dot          (per joint)

and at estimation time ``tau_ext = tau - model`` is mapped to a wrench with
``pinv(J^T)``.  Inputs are low-pass filtered with a causal second-order
Butterworth filter; the head trim of each clip covers its warm-up.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import signal

from .sim.kinematics import N_JOINTS, TOOLS, Arm
from .state import RATE_HZ, SLICES, STATE_DIM, Episode, RobotState, flatten_state

CUTOFF_HZ = 3.0
FILTER_ORDER = 2
COND_LIMIT = 1e6


class PhysicsError(ValueError):
    pass


@dataclass(frozen=True)
class DynamicsParams:
    c: np.ndarray  # Coulomb level per joint
    d: np.ndarray  # viscous coefficient per joint
    g: np.ndarray  # constant bias (gravity, cable tension) per joint
    cutoff_hz: float | None = CUTOFF_HZ
    rate_hz: float = RATE_HZ

    def __post_init__(self):
        for name in ("c", "d", "g"):
            v = np.asarray(getattr(self, name), dtype=float)
            if v.shape != (N_JOINTS,):
                raise ValueError(f"{name} must have {N_JOINTS} entries, got shape {v.shape}")
            object.__setattr__(self, name, v)
        if self.cutoff_hz is not None and not 0 < self.cutoff_hz < self.rate_hz / 2:
            raise ValueError(f"cutoff {self.cutoff_hz} Hz must lie below Nyquist ({self.rate_hz / 2} Hz)")

    def model(self, q_dot: np.ndarray) -> np.ndarray:
        """Predicted joint torque without contact, for (..., 7) velocities."""
        q_dot = np.asarray(q_dot, dtype=float)
        return self.g + self.c * np.sign(q_dot) + self.d * q_dot

    def to_dict(self) -> dict:
        return {"c": self.c.tolist(), "d": self.d.tolist(), "g": self.g.tolist(),
                "cutoff_hz": self.cutoff_hz, "rate_hz": self.rate_hz, "filter_order": FILTER_ORDER}

    @classmethod
    def from_dict(cls, d: dict) -> "DynamicsParams":
        return cls(np.array(d["c"]), np.array(d["d"]), np.array(d["g"]), d.get("cutoff_hz", CUTOFF_HZ),
                   d.get("rate_hz", RATE_HZ))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load(cls, path: str | Path) -> "DynamicsParams":
        return cls.from_dict(json.loads(Path(path).read_text()))


def lowpass(x: np.ndarray, cutoff_hz: float | None = CUTOFF_HZ, rate_hz: float = RATE_HZ) -> np.ndarray:
    """Causal Butterworth filter along axis 0, started at steady state on the first sample."""
    x = np.asarray(x, dtype=float)
    if cutoff_hz is None or len(x) == 0:
        return x.copy()
    b, a = signal.butter(FILTER_ORDER, cutoff_hz, fs=rate_hz)
    zi = signal.lfilter_zi(b, a)
    zi = zi.reshape((-1,) + (1,) * (x.ndim - 1)) * x[:1]
    y, _ = signal.lfilter(b, a, x, axis=0, zi=zi)
    return y


def no_contact(labels: np.ndarray) -> np.ndarray:
    """Ticks where the ground-truth force is exactly zero."""
    return np.all(np.asarray(labels) == 0.0, axis=1)


def _filtered(ep: Episode, cutoff_hz, rate_hz) -> tuple[np.ndarray, np.ndarray]:
    q_dot = lowpass(ep.states[:, SLICES["q_dot"]], cutoff_hz, rate_hz)
    tau = lowpass(ep.states[:, SLICES["tau"]], cutoff_hz, rate_hz)
    return q_dot, tau


def fit(episodes: Sequence[Episode], cutoff_hz: float | None = CUTOFF_HZ, rate_hz: float = RATE_HZ) -> DynamicsParams:
    """Least-squares fit of g, c, d per joint on the no-contact training samples."""
    qd_rows, tau_rows = [], []
    for ep in episodes:
        q_dot, tau = _filtered(ep, cutoff_hz, rate_hz)
        free = no_contact(ep.labels)
        qd_rows.append(q_dot[free])
        tau_rows.append(tau[free])
    if not qd_rows or sum(len(r) for r in qd_rows) == 0:
        raise PhysicsError("no no-contact samples to fit the dynamics model on")
    q_dot = np.concatenate(qd_rows)
    tau = np.concatenate(tau_rows)

    c, d, g = np.zeros(N_JOINTS), np.zeros(N_JOINTS), np.zeros(N_JOINTS)
    deficient = []
    designs = []
    for j in range(N_JOINTS):
        A = np.column_stack([np.ones(len(q_dot)), np.sign(q_dot[:, j]), q_dot[:, j]])
        if np.linalg.matrix_rank(A) < 3:
            deficient.append(j + 1)
        designs.append(A)
    if deficient:
        raise PhysicsError(f"rank-deficient friction regression for joint(s) {deficient}: "
                           "no-contact samples do not excite both velocity directions")
    for j, A in enumerate(designs):
        g[j], c[j], d[j] = np.linalg.lstsq(A, tau[:, j], rcond=None)[0]
        if c[j] < 0 or d[j] < 0:
            # clamp and refit the remaining terms
            c[j], d[j] = max(c[j], 0.0), max(d[j], 0.0)
            keep = [0] + [k for k, v in ((1, c[j]), (2, d[j])) if v > 0]
            sol = np.linalg.lstsq(A[:, keep], tau[:, j], rcond=None)[0]
            vals = dict(zip(keep, sol))
            g[j], c[j], d[j] = vals[0], vals.get(1, 0.0), vals.get(2, 0.0)
    return DynamicsParams(c, np.maximum(d, 0.0), g, cutoff_hz, rate_hz)


@dataclass(frozen=True)
class ForceEstimate:
    force: np.ndarray  # (3,) N
    condition: float
    reliable: bool


def force_from_torque(tau_ext: np.ndarray, jacobian: np.ndarray) -> tuple[np.ndarray, float]:
    """First three components of pinv(J^T) tau_ext, plus the Jacobian condition number."""
    J = np.asarray(jacobian, dtype=float)
    wrench = np.linalg.pinv(J.T) @ np.asarray(tau_ext, dtype=float)
    return wrench[:3], float(np.linalg.cond(J))


def estimate_force(state: RobotState | np.ndarray, params: DynamicsParams, jacobian: np.ndarray) -> ForceEstimate:
    """Tip force from one (unfiltered) state; flagged unreliable near singularities."""
    x = flatten_state(state) if isinstance(state, RobotState) else np.asarray(state, dtype=float)
    if x.shape != (STATE_DIM,):
        raise ValueError(f"expected a {STATE_DIM}-vector state, got shape {x.shape}")
    tau_ext = x[SLICES["tau"]] - params.model(x[SLICES["q_dot"]])
    force, cond = force_from_torque(tau_ext, jacobian)
    return ForceEstimate(force, cond, cond < COND_LIMIT)


def episode_jacobians(ep: Episode) -> np.ndarray:
    arm = Arm(TOOLS[ep.meta.get("tool", "cadiere")])
    return np.stack([arm.jacobian(q) for q in ep.states[:, SLICES["q"]]])


def estimate_episode(ep: Episode, params: DynamicsParams) -> tuple[np.ndarray, np.ndarray]:
    """Force estimates (T, 3) for a clip and a (T,) reliability flag.

    Unreliable ticks are returned as NaN so they cannot be scored silently.
    """
    q_dot, tau = _filtered(ep, params.cutoff_hz, params.rate_hz)
    tau_ext = tau - params.model(q_dot)
    out = np.empty((len(ep), 3))
    ok = np.ones(len(ep), dtype=bool)
    for i, J in enumerate(episode_jacobians(ep)):
        out[i], cond = force_from_torque(tau_ext[i], J)
        ok[i] = cond < COND_LIMIT
    out[~ok] = np.nan
    return out, ok


class PhysicsBaseline:
    """Evaluator-facing wrapper: never looks at frames."""

    kind = "physics"
    uses_image = False

    def __init__(self, params: DynamicsParams):
        self.params = params

    @classmethod
    def fit(cls, episodes: Sequence[Episode], cutoff_hz: float | None = CUTOFF_HZ) -> "PhysicsBaseline":
        return cls(fit(episodes, cutoff_hz))

    def predict_clip(self, ep: Episode) -> np.ndarray:
        return estimate_episode(ep, self.params)[0]

    def save(self, directory: str | Path) -> Path:
        path = Path(directory) / "physics.json"
        self.params.save(path)
        return path

    @classmethod
    def load(cls, directory: str | Path) -> "PhysicsBaseline":
        return cls(DynamicsParams.load(Path(directory) / "physics.json"))
