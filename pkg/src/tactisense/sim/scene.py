"""Scene configuration grid, tissue materials and world geometry.

World frame: origin at the centre of the tissue surface in the reference
(C) configuration, z up, x toward the viewer's left.  The arm base sits
14.5 cm to the right (-x) of the tissue centre.  L/R configurations shift the
camera and the arm base together; Z configurations lower the platform.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .kinematics import CADIERE, MARYLAND, ToolModel

RCM_NOMINAL = np.array([-0.145, 0.0, 0.11])
CAMERA_NOMINAL = np.array([0.0, -0.10, 0.14])
TABLE_Z = -0.030
PLATFORM_HALF = (0.085, 0.055)
TISSUE_HALF = (0.0625, 0.036)
FLANGE_WIDTH = 0.008


@dataclass(frozen=True)
class MaterialModel:
    name: str
    stiffness: float  # N/m
    damping: float  # N*s/m
    color: tuple[int, int, int]
    friction: float = 0.35  # tangential drag coefficient
    shear_ratio: float = 0.5  # tangential / normal stiffness while grasped

    def __post_init__(self):
        if not self.stiffness > 0:
            raise ValueError("stiffness must be positive")
        if self.damping < 0:
            raise ValueError("damping must be non-negative")


SEEN_MATERIAL = MaterialModel("seen", stiffness=650.0, damping=4.0, color=(226, 178, 160))
UNSEEN_MATERIAL = MaterialModel("unseen", stiffness=1400.0, damping=6.0, color=(196, 44, 48))


@dataclass(frozen=True)
class SceneConfig:
    tag: str
    camera_offset_x: float = 0.0  # cm, +x = left
    platform_offset_z: float = 0.0  # cm
    material: MaterialModel = SEEN_MATERIAL
    tool: ToolModel = CADIERE
    depth_bias: float = 0.0  # m, raises minimum palpation depth

    @property
    def base_position(self) -> np.ndarray:
        return RCM_NOMINAL + np.array([self.camera_offset_x / 100.0, 0.0, 0.0])

    @property
    def camera_position(self) -> np.ndarray:
        return CAMERA_NOMINAL + np.array([self.camera_offset_x / 100.0, 0.0, 0.0])

    @property
    def surface_z(self) -> float:
        return self.platform_offset_z / 100.0


_SHIFTS = {"1": 1.5, "2": 3.0, "3": 4.0}
_DROPS = {"1": -0.635, "2": -1.27, "3": -1.905}
Z_DEPTH_BIAS = 0.003


def scene_config(tag: str) -> SceneConfig:
    if tag == "C":
        return SceneConfig("C")
    if tag == "unseen_material":
        return SceneConfig(tag, material=UNSEEN_MATERIAL)
    if tag == "unseen_tool":
        return SceneConfig(tag, tool=MARYLAND)
    if len(tag) == 2 and tag[1] in _SHIFTS:
        if tag[0] == "L":
            return SceneConfig(tag, camera_offset_x=_SHIFTS[tag[1]])
        if tag[0] == "R":
            return SceneConfig(tag, camera_offset_x=-_SHIFTS[tag[1]])
        if tag[0] == "Z":
            return SceneConfig(tag, platform_offset_z=_DROPS[tag[1]], depth_bias=Z_DEPTH_BIAS)
    raise ValueError(f"unknown scene tag {tag!r}")


CONFIG_TAGS = ("L3", "L2", "L1", "C", "R1", "R2", "R3", "Z1", "Z2", "Z3")
ALL_TAGS = CONFIG_TAGS + ("unseen_material", "unseen_tool")
GRID = {tag: scene_config(tag) for tag in ALL_TAGS}


@dataclass(frozen=True)
class ClipScene:
    """A scene config plus the per-clip reset jitter (tissue piece swapped, platform re-clamped)."""

    config: SceneConfig
    surface_offset: np.ndarray = field(default_factory=lambda: np.zeros(3))
    stiffness_scale: float = 1.0

    @property
    def tissue_origin(self) -> np.ndarray:
        return np.array([0.0, 0.0, self.config.surface_z]) + self.surface_offset

    @property
    def material(self) -> MaterialModel:
        m = self.config.material
        return replace(m, stiffness=m.stiffness * self.stiffness_scale)

    @classmethod
    def sample(cls, config: SceneConfig, rng: np.random.Generator, jitter: bool = True) -> "ClipScene":
        if not jitter:
            return cls(config)
        offset = np.array([rng.normal(0, 0.0015), rng.normal(0, 0.0015), rng.normal(0, 0.0015)])
        return cls(config, offset, float(rng.uniform(0.9, 1.1)))
