"""Robot-state layout, force labels, normalization and feature-removal masks.

The 54-slot state vector is ordered::

    p(3) o(4) v(3) w(3) q(7) q_dot(7) q_des(7) | f(3) t(3) tau(7) tau_des(7)

with the kinematic block first.  Feature removal is index based; the force
mask deliberately also covers ``q_des`` even though it sits in the kinematic
block.
"""

from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

log = logging.getLogger(__name__)

RATE_HZ = 30.0
STD_FLOOR = 1e-8

_KIN_FIELDS = (("p", ("x", "y", "z")), ("o", ("x", "y", "z", "w")), ("v", ("x", "y", "z")),
               ("w", ("x", "y", "z")), ("q", tuple(map(str, range(1, 8)))),
               ("q_dot", tuple(map(str, range(1, 8)))), ("q_des", tuple(map(str, range(1, 8)))))
_FORCE_FIELDS = (("f", ("x", "y", "z")), ("t", ("x", "y", "z")), ("tau", tuple(map(str, range(1, 8)))),
                 ("tau_des", tuple(map(str, range(1, 8)))))

KIN_COLUMNS = tuple(f"{name}_{c}" for name, comps in _KIN_FIELDS for c in comps)
FORCE_COLUMNS = tuple(f"{name}_{c}" for name, comps in _FORCE_FIELDS for c in comps)
STATE_COLUMNS = KIN_COLUMNS + FORCE_COLUMNS
LABEL_COLUMNS = ("fx_gt", "fy_gt", "fz_gt")

KIN_DIM = len(KIN_COLUMNS)
FORCE_DIM = len(FORCE_COLUMNS)
STATE_DIM = len(STATE_COLUMNS)


def _slice_of(prefix: str) -> slice:
    idx = [i for i, c in enumerate(STATE_COLUMNS) if c.rsplit("_", 1)[0] == prefix]
    return slice(idx[0], idx[-1] + 1)


SLICES = {name: _slice_of(name) for name, _ in _KIN_FIELDS + _FORCE_FIELDS}

KINEMATIC_INDICES = tuple(range(0, KIN_DIM))
QDES_INDICES = tuple(range(SLICES["q_des"].start, SLICES["q_des"].stop))
FORCE_INDICES = tuple(range(KIN_DIM, STATE_DIM))
# force removal also drops the desired joint positions
FORCE_REMOVAL_INDICES = QDES_INDICES + FORCE_INDICES

REMOVAL_GROUPS = ("none", "kinematic", "force")


class ConfigurationError(ValueError):
    pass


@dataclass(frozen=True)
class KinematicState:
    p: np.ndarray
    o: np.ndarray
    v: np.ndarray
    w: np.ndarray
    q: np.ndarray
    q_dot: np.ndarray
    q_des: np.ndarray

    def flatten(self) -> np.ndarray:
        return np.concatenate([self.p, self.o, self.v, self.w, self.q, self.q_dot, self.q_des]).astype(float)


@dataclass(frozen=True)
class ForceState:
    f: np.ndarray
    t: np.ndarray
    tau: np.ndarray
    tau_des: np.ndarray

    def flatten(self) -> np.ndarray:
        return np.concatenate([self.f, self.t, self.tau, self.tau_des]).astype(float)


@dataclass(frozen=True)
class RobotState:
    kin: KinematicState
    force: ForceState


def flatten_state(s: RobotState) -> np.ndarray:
    out = np.concatenate([s.kin.flatten(), s.force.flatten()])
    assert out.shape == (STATE_DIM,)
    return out


def unflatten_state(x: np.ndarray) -> RobotState:
    x = np.asarray(x, dtype=float)
    if x.shape != (STATE_DIM,):
        raise ValueError(f"expected a {STATE_DIM}-vector, got shape {x.shape}")
    get = lambda k: x[SLICES[k]].copy()
    return RobotState(
        KinematicState(get("p"), get("o"), get("v"), get("w"), get("q"), get("q_dot"), get("q_des")),
        ForceState(get("f"), get("t"), get("tau"), get("tau_des")),
    )


def removal_indices(group: str) -> tuple[int, ...]:
    if group == "none":
        return ()
    if group == "kinematic":
        return KINEMATIC_INDICES
    if group == "force":
        return FORCE_REMOVAL_INDICES
    raise ValueError(f"unknown feature group {group!r}; expected one of {REMOVAL_GROUPS}")


def removal_mask(group: str) -> np.ndarray:
    """Boolean 54-mask, True where the feature survives."""
    keep = np.ones(STATE_DIM, dtype=bool)
    keep[list(removal_indices(group))] = False
    return keep


def remove_features(x: np.ndarray, group: str) -> np.ndarray:
    """Zero one feature group in a (..., 54) array; returns a copy."""
    x = np.array(x, dtype=float, copy=True)
    if x.shape[-1] != STATE_DIM:
        raise ValueError(f"expected trailing dimension {STATE_DIM}, got {x.shape}")
    idx = removal_indices(group)
    if idx:
        x[..., list(idx)] = 0.0
    return x


@dataclass(frozen=True)
class NormStats:
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float)
        std = np.asarray(self.std, dtype=float)
        if mean.shape != std.shape:
            raise ConfigurationError(f"mean shape {mean.shape} != std shape {std.shape}")
        if not np.all(std > 0) or not np.all(np.isfinite(std)):
            raise ConfigurationError("standard deviations must be finite and > 0")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "std", std)

    def normalize(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=float) - self.mean) / self.std

    def denormalize(self, z: np.ndarray) -> np.ndarray:
        return np.asarray(z, dtype=float) * self.std + self.mean

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "NormStats":
        return cls(np.array(d["mean"], dtype=float), np.array(d["std"], dtype=float))


def normalize(x: np.ndarray, stats: NormStats) -> np.ndarray:
    return stats.normalize(x)


def denormalize(z: np.ndarray, stats: NormStats) -> np.ndarray:
    return stats.denormalize(z)


def _stats_of(rows: np.ndarray, what: str) -> NormStats:
    mean = rows.mean(axis=0)
    std = rows.std(axis=0)  # population convention
    low = std < STD_FLOOR
    if low.any():
        warnings.warn(f"{what}: {int(low.sum())} degenerate column(s); std floored at {STD_FLOOR}",
                      RuntimeWarning, stacklevel=3)
        std = np.where(low, STD_FLOOR, std)
    return NormStats(mean, std)


# -- episodes ------------------------------------------------------------------
SCENE_TAGS = ("C", "L1", "L2", "L3", "R1", "R2", "R3", "Z1", "Z2", "Z3", "unseen_material", "unseen_tool")


@dataclass
class Episode:
    """A time-aligned clip: frames, 54-d states and 3-d force labels at 30 Hz."""

    config: str
    states: np.ndarray  # (T, 54)
    labels: np.ndarray  # (T, 3) newtons, sensor frame
    timestamps: np.ndarray  # (T,) seconds
    frames: np.ndarray | None = None  # (T, H, W, 3) uint8
    split: str = ""
    name: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=float)
        self.labels = np.asarray(self.labels, dtype=float)
        self.timestamps = np.asarray(self.timestamps, dtype=float)
        n = len(self.timestamps)
        if self.states.shape != (n, STATE_DIM):
            raise ValueError(f"states shape {self.states.shape}, expected ({n}, {STATE_DIM})")
        if self.labels.shape != (n, 3):
            raise ValueError(f"labels shape {self.labels.shape}, expected ({n}, 3)")
        if self.frames is not None and len(self.frames) != n:
            raise ValueError(f"{len(self.frames)} frames for {n} timesteps")
        if n > 1 and not np.all(np.diff(self.timestamps) > 0):
            raise ValueError("timestamps must be strictly increasing")

    def __len__(self) -> int:
        return len(self.timestamps)

    def state(self, i: int) -> RobotState:
        return unflatten_state(self.states[i])

    def view(self, start: int, stop: int) -> "Episode":
        return Episode(self.config, self.states[start:stop], self.labels[start:stop],
                       self.timestamps[start:stop],
                       None if self.frames is None else self.frames[start:stop],
                       self.split, self.name, {**self.meta, "offset": self.meta.get("offset", 0) + start})


def compute_stats(train_episodes: Sequence[Episode]) -> tuple[NormStats, NormStats]:
    """Per-element mean/std of states and force labels over the training split."""
    train_episodes = list(train_episodes)
    if not train_episodes:
        raise ValueError("cannot compute normalization statistics from an empty split")
    for ep in train_episodes:
        if ep.split and ep.split != "train":
            raise AssertionError(f"normalization stats requested over {ep.split!r} clip {ep.name!r}")
    states = np.concatenate([ep.states for ep in train_episodes])
    labels = np.concatenate([ep.labels for ep in train_episodes])
    if len(states) == 0:
        raise ValueError("training split has no timesteps")
    return _stats_of(states, "state"), _stats_of(labels, "force")


# -- on-disk format --------------------------------------------------------------
def write_episode(directory: str | Path, ep: Episode) -> None:
    from PIL import Image

    d = Path(directory)
    (d / "frames").mkdir(parents=True, exist_ok=True)
    meta = {"config": ep.config, "length": len(ep), "rate_hz": RATE_HZ, "split": ep.split,
            "name": ep.name, **ep.meta}
    if ep.frames is not None:
        meta["frame_size"] = [int(ep.frames.shape[2]), int(ep.frames.shape[1])]
    (d / "episode.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
    header = ",".join(("timestamp",) + STATE_COLUMNS + LABEL_COLUMNS)
    table = np.column_stack([ep.timestamps, ep.states, ep.labels])
    np.savetxt(d / "states.csv", table, delimiter=",", header=header, comments="", fmt="%.17g")
    if ep.frames is not None:
        for i, frame in enumerate(ep.frames):
            Image.fromarray(frame).save(d / "frames" / f"{i:06d}.png", optimize=False, compress_level=1)


def read_episode(directory: str | Path, load_frames: bool = True) -> Episode:
    from PIL import Image

    d = Path(directory)
    meta = json.loads((d / "episode.json").read_text())
    with open(d / "states.csv") as fh:
        header = fh.readline().strip().split(",")
    expected = ["timestamp", *STATE_COLUMNS, *LABEL_COLUMNS]
    if header != expected:
        raise ValueError(f"{d / 'states.csv'}: unexpected column layout")
    table = np.loadtxt(d / "states.csv", delimiter=",", skiprows=1, ndmin=2)
    frames = None
    if load_frames:
        n = int(meta["length"])
        frames = np.stack([np.asarray(Image.open(d / "frames" / f"{i:06d}.png").convert("RGB"))
                           for i in range(n)])
    config = meta.pop("config")
    split = meta.pop("split", "")
    name = meta.pop("name", d.name)
    for k in ("length", "rate_hz"):
        meta.pop(k, None)
    return Episode(config, table[:, 1:1 + STATE_DIM], table[:, 1 + STATE_DIM:], table[:, 0],
                   frames, split, name, meta)
