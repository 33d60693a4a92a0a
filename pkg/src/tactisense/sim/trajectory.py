"""Tip trajectories for palpation and pulling.

A trajectory is a list of waypoints joined by quintic smoothstep segments
(zero velocity and acceleration at every waypoint), so position is C2 and
never overshoots a waypoint: a commanded indentation depth is a hard bound.

Positions are in the tissue frame: origin at the centre of the undeformed
tissue surface, z up.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DEFAULT_INDENT_CAP = 0.008  # m
JAW_OPEN = 0.6  # rad
JAW_CLOSED = 0.05
TISSUE_HALF = (0.0625, 0.036)  # half extents of the 125 x 72 mm tissue (m)


def _smoothstep(u: np.ndarray):
    u = np.clip(u, 0.0, 1.0)
    s = u ** 3 * (10 - 15 * u + 6 * u * u)
    ds = 30 * u * u * (1 - u) ** 2
    return s, ds


@dataclass
class Waypoint:
    t: float
    pos: np.ndarray  # (3,) tissue frame
    wrist: np.ndarray  # (roll, wrist pitch, wrist yaw, jaw)
    grasp: bool = False


@dataclass
class TipTrajectory:
    kind: str
    duration: float
    waypoints: list[Waypoint]
    events: list[dict] = field(default_factory=list)

    def _locate(self, t: np.ndarray):
        times = np.array([w.t for w in self.waypoints])
        idx = np.clip(np.searchsorted(times, t, side="right") - 1, 0, len(times) - 2)
        t0, t1 = times[idx], times[idx + 1]
        u = (t - t0) / np.maximum(t1 - t0, 1e-12)
        return idx, u, t1 - t0

    def sample(self, t: np.ndarray) -> dict[str, np.ndarray]:
        """Position, velocity, wrist joints, wrist rates and grasp flag at times ``t``."""
        t = np.asarray(t, dtype=float)
        idx, u, span = self._locate(t)
        s, ds = _smoothstep(u)
        P = np.array([w.pos for w in self.waypoints])
        W = np.array([w.wrist for w in self.waypoints])
        G = np.array([w.grasp for w in self.waypoints])
        dP = P[idx + 1] - P[idx]
        dW = W[idx + 1] - W[idx]
        rate = (ds / span)[:, None]
        # grasp holds from a grasp waypoint through the next one
        grasp = G[idx] & G[np.minimum(idx + 1, len(G) - 1)]
        return {
            "pos": P[idx] + s[:, None] * dP,
            "vel": rate * dP,
            "wrist": W[idx] + s[:, None] * dW,
            "wrist_rate": rate * dW,
            "grasp": grasp,
        }

    def anchors(self, t: np.ndarray) -> np.ndarray:
        """Grasp anchor (on the surface, z=0) in force at each time; NaN when not grasping."""
        out = np.full((len(t), 3), np.nan)
        for ev in self.events:
            if ev["kind"] != "pull":
                continue
            m = (t >= ev["grasp_start"]) & (t <= ev["grasp_end"])
            out[m] = ev["anchor"]
        return out


class _Builder:
    def __init__(self, rng: np.random.Generator, start: np.ndarray, wrist: np.ndarray):
        self.rng = rng
        self.t = 0.0
        self.pts = [Waypoint(0.0, start.copy(), wrist.copy())]
        self.events: list[dict] = []

    @property
    def last(self) -> Waypoint:
        return self.pts[-1]

    def wrist_jitter(self, jaw: float) -> np.ndarray:
        r = self.rng
        return np.array([r.uniform(-0.35, 0.35), r.uniform(-0.3, 0.3), r.uniform(-0.3, 0.3), jaw])

    def go(self, dt: float, pos, wrist=None, grasp=False):
        self.t += dt
        w = self.last.wrist.copy() if wrist is None else np.asarray(wrist, dtype=float)
        self.pts.append(Waypoint(self.t, np.asarray(pos, dtype=float), w, grasp))


def _random_point(rng, margin=0.012):
    return np.array([rng.uniform(-TISSUE_HALF[0] + margin, TISSUE_HALF[0] - margin),
                     rng.uniform(-TISSUE_HALF[1] + margin, TISSUE_HALF[1] - margin)])


def _palpation(b: _Builder, cap: float, depth_bias: float):
    r = b.rng
    xy = _random_point(r)
    hover = r.uniform(0.003, 0.007)
    lo = min(cap, 0.002 + depth_bias)
    depth = r.uniform(lo, cap)
    b.go(r.uniform(0.30, 0.45), [*xy, hover], b.wrist_jitter(JAW_CLOSED))
    t_touch = b.t
    b.go(r.uniform(0.30, 0.45), [*(xy + r.normal(0, 0.0008, 2)), -depth])
    b.go(r.uniform(0.05, 0.20), [*(b.last.pos[:2] + r.normal(0, 0.0005, 2)), -depth * r.uniform(0.85, 1.0)])
    b.go(r.uniform(0.25, 0.40), [*b.last.pos[:2], hover])
    b.events.append({"kind": "palpation", "start": t_touch, "end": b.t, "depth": depth, "xy": xy.tolist()})


def _pull(b: _Builder, cap: float, depth_bias: float):
    r = b.rng
    xy = _random_point(r, margin=0.018)
    hover = r.uniform(0.003, 0.006)
    b.go(r.uniform(0.25, 0.40), [*xy, hover], b.wrist_jitter(JAW_OPEN))
    b.go(r.uniform(0.20, 0.30), [*xy, -r.uniform(0.0004, 0.0012)])
    grasp_start = b.t
    b.last.grasp = True
    closed = b.last.wrist.copy()
    closed[3] = JAW_CLOSED
    b.go(0.15, b.last.pos, closed, grasp=True)
    lift = r.uniform(0.003, 0.008)
    lateral = r.normal(0, 0.003, 2)
    b.go(r.uniform(0.35, 0.50), [*(xy + lateral), lift], grasp=True)
    b.go(r.uniform(0.05, 0.20), [*(xy + lateral * r.uniform(0.9, 1.1)), lift * r.uniform(0.9, 1.05)], grasp=True)
    b.go(r.uniform(0.30, 0.45), [*xy, -0.0004], grasp=True)
    grasp_end = b.t
    opened = b.last.wrist.copy()
    opened[3] = JAW_OPEN
    b.go(0.15, b.last.pos, opened)
    b.go(r.uniform(0.20, 0.30), [*xy, hover], b.wrist_jitter(JAW_CLOSED))
    b.events.append({"kind": "pull", "start": grasp_start, "end": b.t, "grasp_start": grasp_start,
                     "grasp_end": grasp_end, "anchor": [float(xy[0]), float(xy[1]), 0.0]})


def generate_trajectory(kind: str, duration: float, seed, indent_cap: float = DEFAULT_INDENT_CAP,
                        depth_bias: float = 0.0, lead_in: tuple[float, float] = (0.6, 1.0)) -> TipTrajectory:
    """Random palpation / pull / mixed trajectory lasting exactly ``duration`` seconds.

    The clip opens with free-space motion above the tissue; events then follow
    back to back.  ``depth_bias`` raises the minimum palpation depth.
    """
    if not duration > 0:
        raise ValueError(f"trajectory duration must be positive, got {duration}")
    if kind not in ("palpation", "pull", "mixed"):
        raise ValueError(f"unknown trajectory kind {kind!r}")
    rng = np.random.default_rng(seed)
    start = np.array([*_random_point(rng), rng.uniform(0.012, 0.020)])
    b = _Builder(rng, start, np.zeros(4))
    b.pts[0].wrist = b.wrist_jitter(JAW_CLOSED)
    # free-space wander: every joint moves in both directions
    t_free = rng.uniform(*lead_in)
    n_free = 3
    for _ in range(n_free):
        b.go(t_free / n_free, [*_random_point(rng), rng.uniform(0.008, 0.020)], b.wrist_jitter(rng.uniform(0.05, 0.6)))
    while b.t < duration:
        k = kind if kind != "mixed" else ("palpation" if rng.random() < 0.5 else "pull")
        (_palpation if k == "palpation" else _pull)(b, indent_cap, depth_bias)
        if rng.random() < 0.3:
            b.go(rng.uniform(0.2, 0.4), [*_random_point(rng), rng.uniform(0.006, 0.015)], b.wrist_jitter(JAW_CLOSED))
    b.go(0.5, [*b.last.pos[:2], b.last.pos[2] + 0.004])
    return TipTrajectory(kind, float(duration), b.pts, b.events)
