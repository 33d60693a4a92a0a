"""Flat-shaded monocular renderer.

Planes (table, platform, tissue) are ray-cast per pixel; the instrument is
rasterized as convex polygons in image space.  Rendering is deterministic:
identical inputs give bit-identical frames.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kinematics import Arm
from .scene import FLANGE_WIDTH, PLATFORM_HALF, TABLE_Z, TISSUE_HALF, ClipScene, SceneConfig

FULL_SIZE = (960, 540)
FOCAL_FRACTION = 0.36  # focal length in pixels / image width

TABLE_COLOR = np.array([58.0, 74.0, 66.0])
PLATFORM_COLOR = np.array([150.0, 150.0, 140.0])
SHAFT_COLOR = np.array([52.0, 52.0, 58.0])
WRIST_COLOR = np.array([92.0, 92.0, 100.0])
JAW_COLOR = {"cadiere": np.array([176.0, 178.0, 184.0]), "maryland": np.array([128.0, 132.0, 146.0])}
# table fiducials stay put; platform fiducials move with the platform
TABLE_MARKS = (((0.11, 0.075), (230, 230, 60)), ((-0.11, 0.075), (60, 200, 230)),
               ((0.11, -0.06), (230, 90, 200)), ((-0.11, -0.06), (240, 240, 240)),
               ((0.0, 0.09), (240, 140, 40)))
PLATFORM_MARKS = (((0.075, 0.046), (30, 60, 200)), ((-0.075, 0.046), (30, 170, 60)),
                  ((0.075, -0.046), (200, 40, 40)), ((-0.075, -0.046), (20, 20, 20)))
MARK_RADIUS = 0.005
SHAFT_LENGTH = 0.07


@dataclass(frozen=True)
class Camera:
    position: np.ndarray
    rotation: np.ndarray  # columns: right, down, forward (world)
    focal: float
    width: int
    height: int

    @classmethod
    def look_at(cls, position, target, width: int, height: int) -> "Camera":
        position = np.asarray(position, dtype=float)
        fwd = np.asarray(target, dtype=float) - position
        fwd /= np.linalg.norm(fwd)
        right = np.cross(fwd, [0.0, 0.0, 1.0])
        right /= np.linalg.norm(right)
        down = np.cross(fwd, right)
        return cls(position, np.column_stack([right, down, fwd]), FOCAL_FRACTION * width, width, height)

    @classmethod
    def for_scene(cls, config: SceneConfig, width: int = FULL_SIZE[0], height: int = FULL_SIZE[1]) -> "Camera":
        # L/R: aimed at the (shifted) tissue centre; Z configs keep the nominal aim
        return cls.look_at(config.camera_position, np.zeros(3), width, height)

    def project(self, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """World points (N,3) -> pixel coords (N,2) and depth (N,)."""
        pc = (np.atleast_2d(pts) - self.position) @ self.rotation
        z = pc[:, 2]
        uv = np.column_stack([self.focal * pc[:, 0] / z + self.width / 2,
                              self.focal * pc[:, 1] / z + self.height / 2])
        return uv, z

    def rays(self) -> np.ndarray:
        """World-space ray directions for every pixel centre, (H, W, 3)."""
        u = (np.arange(self.width) + 0.5 - self.width / 2) / self.focal
        v = (np.arange(self.height) + 0.5 - self.height / 2) / self.focal
        uu, vv = np.meshgrid(u, v)
        d = np.stack([uu, vv, np.ones_like(uu)], axis=-1)
        return d @ self.rotation.T


def project_point(config: SceneConfig, point: np.ndarray, width: int = FULL_SIZE[0],
                  height: int = FULL_SIZE[1]) -> np.ndarray:
    uv, _ = Camera.for_scene(config, width, height).project(np.asarray(point, dtype=float))
    return uv[0]


def _fill_convex(img: np.ndarray, poly: np.ndarray, color: np.ndarray) -> None:
    """Fill a convex polygon given in pixel coordinates (either winding)."""
    h, w = img.shape[:2]
    x0, y0 = np.floor(poly.min(axis=0)).astype(int)
    x1, y1 = np.ceil(poly.max(axis=0)).astype(int)
    x0, y0 = max(x0, 0), max(y0, 0)
    x1, y1 = min(x1, w - 1), min(y1, h - 1)
    if x0 > x1 or y0 > y1:
        return
    xs = np.arange(x0, x1 + 1) + 0.5
    ys = np.arange(y0, y1 + 1) + 0.5
    px, py = np.meshgrid(xs, ys)
    nxt = np.roll(poly, -1, axis=0)
    cross = [(b[0] - a[0]) * (py - a[1]) - (b[1] - a[1]) * (px - a[0]) for a, b in zip(poly, nxt)]
    inside = np.all([c >= 0 for c in cross], axis=0) | np.all([c <= 0 for c in cross], axis=0)
    img[y0:y1 + 1, x0:x1 + 1][inside] = color


def _segment_quad(cam: Camera, a: np.ndarray, b: np.ndarray, radius: float) -> np.ndarray | None:
    uv, z = cam.project(np.array([a, b]))
    if np.any(z <= 1e-4):
        return None
    d = uv[1] - uv[0]
    length = np.linalg.norm(d)
    if length < 1e-9:
        return None
    nrm = np.array([-d[1], d[0]]) / length
    ra, rb = cam.focal * radius / z[0], cam.focal * radius / z[1]
    return np.array([uv[0] + ra * nrm, uv[1] + rb * nrm, uv[1] - rb * nrm, uv[0] - ra * nrm])


class Renderer:
    """Renders frames for one clip scene; caches the per-pixel plane hits."""

    def __init__(self, scene: ClipScene, width: int = FULL_SIZE[0], height: int = FULL_SIZE[1]):
        self.scene = scene
        self.camera = Camera.for_scene(scene.config, width, height)
        self.arm = Arm(scene.config.tool)
        self._build_background()

    def _plane_hits(self, z: float) -> np.ndarray:
        d = self._rays
        t = (z - self.camera.position[2]) / np.where(np.abs(d[..., 2]) < 1e-12, -1e-12, d[..., 2])
        return self.camera.position[:2] + t[..., None] * d[..., :2]

    def _build_background(self) -> None:
        self._rays = self.camera.rays()
        origin = self.scene.tissue_origin
        img = np.empty(self._rays.shape, dtype=float)

        table = self._plane_hits(TABLE_Z)
        img[:] = TABLE_COLOR
        checker = ((np.floor(table[..., 0] / 0.02) + np.floor(table[..., 1] / 0.02)) % 2)[..., None]
        img += 6.0 * checker
        for (mx, my), color in TABLE_MARKS:
            m = (table[..., 0] - mx) ** 2 + (table[..., 1] - my) ** 2 < MARK_RADIUS ** 2
            img[m] = color

        plat_z = origin[2] - 0.003
        plat = self._plane_hits(plat_z) - origin[:2]
        on_plat = (np.abs(plat[..., 0]) < PLATFORM_HALF[0]) & (np.abs(plat[..., 1]) < PLATFORM_HALF[1])
        img[on_plat] = PLATFORM_COLOR
        for (mx, my), color in PLATFORM_MARKS:
            m = on_plat & ((plat[..., 0] - mx) ** 2 + (plat[..., 1] - my) ** 2 < (0.7 * MARK_RADIUS) ** 2)
            img[m] = color

        tis = self._plane_hits(origin[2]) - origin[:2]
        on_tis = (np.abs(tis[..., 0]) < TISSUE_HALF[0]) & (np.abs(tis[..., 1]) < TISSUE_HALF[1] + FLANGE_WIDTH)
        base = np.asarray(self.scene.config.material.color, dtype=float)
        flange = on_tis & (np.abs(tis[..., 1]) >= TISSUE_HALF[1])
        img[on_tis] = base
        img[flange] = base * 0.72
        # faint fabric texture so motion of the surface is visible
        tex = 1.0 + 0.03 * np.sin(tis[..., 0] * 900.0) * np.sin(tis[..., 1] * 700.0)
        img[on_tis] *= tex[on_tis][:, None]

        self._background = img
        self._tissue_xy = tis
        self._on_tissue = on_tis & ~flange

    def render(self, q: np.ndarray, indentation: float, displacement: np.ndarray | None = None,
               contact_xy: np.ndarray | None = None) -> np.ndarray:
        """Render one frame for joint vector ``q`` (arm base frame).

        ``indentation`` (m) darkens a dimple around ``contact_xy`` (tissue
        frame); ``displacement`` (tip minus grasp anchor) raises a highlighted
        tent while grasping.
        """
        img = self._background.copy()
        origin = self.scene.tissue_origin
        base = self.scene.config.base_position
        _, axes, _, tip, R, wrist_pt, yaw_pt = self.arm.frames(q)
        tip_w, wrist_w, yaw_w = tip + base, wrist_pt + base, yaw_pt + base
        if contact_xy is None:
            contact_xy = (tip_w - origin)[:2]

        xy = self._tissue_xy
        on = self._on_tissue
        if indentation > 0:
            sigma = 0.004 + 0.6 * indentation
            r2 = (xy[..., 0] - contact_xy[0]) ** 2 + (xy[..., 1] - contact_xy[1]) ** 2
            dark = min(45.0 * indentation, 0.6) * np.exp(-r2 / (2 * sigma * sigma))
            img[on] *= (1.0 - dark[on])[:, None]
        if displacement is not None and np.any(displacement):
            lateral = displacement[:2]
            lift = max(displacement[2], 0.0)
            centre = contact_xy - 0.5 * lateral
            amount = min(40.0 * float(np.linalg.norm(displacement)), 0.5)
            sx = 0.004 + abs(lateral[0])
            sy = 0.004 + abs(lateral[1]) + 0.3 * lift
            g = np.exp(-((xy[..., 0] - centre[0]) ** 2 / (2 * sx * sx) + (xy[..., 1] - centre[1]) ** 2 / (2 * sy * sy)))
            bright = amount * g
            img[on] += (bright[on])[:, None] * (255.0 - img[on])

        # shadow of the tool tip from an overhead light, offset toward +y
        shadow = tip_w[:2] + np.array([0.0, 0.35]) * max(tip_w[2] - origin[2], 0.0)
        r2 = (xy[..., 0] + origin[0] - shadow[0]) ** 2 + (xy[..., 1] + origin[1] - shadow[1]) ** 2
        img[on] *= (1.0 - 0.25 * np.exp(-r2[on] / (2 * 0.003 ** 2)))[:, None]

        cam = self.camera
        shaft_top = wrist_w - axes[2] * SHAFT_LENGTH  # axes[2] points down the shaft
        quad = _segment_quad(cam, shaft_top, wrist_w, self.arm.tool.shaft_radius)
        if quad is not None:
            _fill_convex(img, quad, SHAFT_COLOR)
        quad = _segment_quad(cam, wrist_w, yaw_w, 0.7 * self.arm.tool.shaft_radius)
        if quad is not None:
            _fill_convex(img, quad, WRIST_COLOR)
        jaw_color = JAW_COLOR.get(self.arm.tool.name, JAW_COLOR["cadiere"])
        for poly in self.arm.tool.jaw_polygons(float(q[6])):
            pts_w = yaw_w + poly @ R.T
            uv, z = cam.project(pts_w)
            if np.all(z > 1e-4):
                _fill_convex(img, uv, jaw_color)
        return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def render_frame(scene: SceneConfig | ClipScene, q: np.ndarray, indentation: float = 0.0,
                 displacement: np.ndarray | None = None, width: int = FULL_SIZE[0],
                 height: int = FULL_SIZE[1]) -> np.ndarray:
    """Single-frame convenience wrapper around :class:`Renderer`."""
    clip = scene if isinstance(scene, ClipScene) else ClipScene(scene)
    return Renderer(clip, width, height).render(q, indentation, displacement)
