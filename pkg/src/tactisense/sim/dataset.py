"""Episode simulation and train/val/test dataset generation.

Each clip gets its own seed derived from (run seed, split, tag, index), so a
clip's content does not depend on generation order or worker count.
"""

from __future__ import annotations

import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..state import RATE_HZ, Episode, write_episode
from .contact import simulate_contact
from .kinematics import Arm
from .render import Renderer
from .robot_state import PRESETS, synthesize_robot_state
from .scene import ALL_TAGS, GRID, ClipScene
from .trajectory import generate_trajectory

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class DatasetPreset:
    name: str
    clip_seconds: float
    width: int
    height: int


PAPER_PRESET = DatasetPreset("paper", 120.0, 960, 540)
DESK_PRESET = DatasetPreset("desk", 5.0, 320, 180)
DATASET_PRESETS = {p.name: p for p in (PAPER_PRESET, DESK_PRESET)}

_SEEN = {"C": 2, "R2": 2, "L2": 2, "Z2": 1}
SPLIT_COUNTS: dict[str, dict[str, int]] = {
    "train": {"C": 4, "R2": 4, "L2": 4, "Z2": 2},
    "val": dict(_SEEN),
    "test_seen": dict(_SEEN),
    "test_unseen": {"R1": 2, "R3": 2, "L1": 2, "L3": 2, "unseen_material": 2, "unseen_tool": 2,
                    "Z1": 1, "Z3": 1},
}
SPLITS = tuple(SPLIT_COUNTS)


@dataclass(frozen=True)
class ClipJob:
    split: str
    tag: str
    index: int
    seed: int
    clip_seconds: float
    width: int
    height: int
    corruption: str = "default"
    render: bool = True

    @property
    def name(self) -> str:
        return f"{self.tag}_{self.index:02d}"

    def seed_sequence(self) -> np.random.SeedSequence:
        return np.random.SeedSequence([self.seed, SPLITS.index(self.split), ALL_TAGS.index(self.tag), self.index])


def simulate_episode(job: ClipJob) -> tuple[Episode, np.ndarray]:
    """Simulate one clip.  Returns the episode and a (T, 4) contact table
    (indentation m, contact pixel u, v at render resolution, grasp flag)."""
    traj_seed, scene_seed, noise_seed = job.seed_sequence().spawn(3)
    config = GRID[job.tag]
    scene = ClipScene.sample(config, np.random.default_rng(scene_seed))
    dt = 1.0 / RATE_HZ
    traj = generate_trajectory("mixed", job.clip_seconds, traj_seed, depth_bias=config.depth_bias)
    contact = simulate_contact(traj, scene.material, dt)
    sample = traj.sample(contact.times)
    arm = Arm(config.tool)
    tip_base = contact.pos + scene.tissue_origin - config.base_position
    states, aux = synthesize_robot_state(arm, tip_base, sample["wrist"], contact.force, contact.grasp, dt,
                                         PRESETS[job.corruption], noise_seed)
    n = len(contact.times)
    frames = None
    contact_px = np.full((n, 2), np.nan)
    if job.render:
        renderer = Renderer(scene, job.width, job.height)
        frames = np.empty((n, job.height, job.width, 3), dtype=np.uint8)
        for i in range(n):
            frames[i] = renderer.render(aux["q"][i], contact.indentation[i], contact.displacement[i])
        world = contact.pos + scene.tissue_origin
        world[:, 2] = np.minimum(world[:, 2], scene.tissue_origin[2])
        contact_px, _ = renderer.camera.project(world)
    meta = {
        "preset_size": [job.width, job.height],
        "seed": job.seed,
        "corruption": job.corruption,
        "material": scene.material.name,
        "stiffness": scene.material.stiffness,
        "tool": config.tool.name,
        "surface_offset": scene.surface_offset.tolist(),
        "events": [{k: (float(v) if isinstance(v, (float, np.floating)) else v) for k, v in ev.items()}
                   for ev in traj.events],
    }
    ep = Episode(job.tag, states, contact.force, contact.times, frames, job.split, job.name, meta)
    table = np.column_stack([contact.indentation, contact_px, contact.grasp.astype(float)])
    return ep, table


def _write_job(args: tuple[ClipJob, str]) -> dict:
    job, out = args
    ep, table = simulate_episode(job)
    d = Path(out) / job.split / job.name
    write_episode(d, ep)
    np.savetxt(d / "contact.csv", table, delimiter=",", header="indentation,contact_u,contact_v,grasp",
               comments="", fmt="%.17g")
    return {"split": job.split, "name": job.name, "config": job.tag, "length": len(ep)}


def plan_jobs(seed: int, preset: DatasetPreset, clip_seconds: float | None = None,
              corruption: str = "default", counts: dict[str, dict[str, int]] | None = None) -> list[ClipJob]:
    seconds = preset.clip_seconds if clip_seconds is None else float(clip_seconds)
    if not seconds > 0:
        raise ValueError(f"clip length must be positive, got {seconds}")
    jobs = []
    for split, per_tag in (counts or SPLIT_COUNTS).items():
        for tag, count in per_tag.items():
            for k in range(count):
                jobs.append(ClipJob(split, tag, k, int(seed), seconds, preset.width, preset.height, corruption))
    return jobs


def generate_dataset(out: str | Path, seed: int = 7, preset: str | DatasetPreset = "desk",
                     clip_seconds: float | None = None, corruption: str = "default",
                     workers: int | None = None, counts: dict[str, dict[str, int]] | None = None) -> dict:
    """Simulate every clip of every split and write them under ``out``.

    ``counts`` overrides the per-split clip counts (small test datasets).
    """
    preset = DATASET_PRESETS[preset] if isinstance(preset, str) else preset
    if corruption not in PRESETS:
        raise ValueError(f"unknown corruption preset {corruption!r}; expected one of {sorted(PRESETS)}")
    out = Path(out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create dataset directory {out}: {exc}") from exc
    jobs = plan_jobs(seed, preset, clip_seconds, corruption, counts)
    workers = workers if workers is not None else int(os.environ.get("TACTISENSE_THREADS", "1"))
    args = [(job, str(out)) for job in jobs]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            clips = list(pool.map(_write_job, args))
    else:
        clips = [_write_job(a) for a in args]
    totals = {s: sum(c["length"] for c in clips if c["split"] == s) for s in SPLITS}
    manifest = {
        "preset": preset.name,
        "seed": int(seed),
        "clip_seconds": jobs[0].clip_seconds,
        "frame_size": [preset.width, preset.height],
        "rate_hz": RATE_HZ,
        "corruption": corruption,
        "clips": clips,
        "examples": totals,
    }
    (out / "dataset.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    log.info("wrote %d clips to %s", len(clips), out)
    return manifest


def load_dataset(root: str | Path, load_frames: bool = True, splits=SPLITS) -> dict[str, list[Episode]]:
    """Read a generated dataset back as {split: [Episode, ...]} in manifest order."""
    from ..state import read_episode

    root = Path(root)
    manifest_path = root / "dataset.json"
    if not manifest_path.exists():
        raise FileNotFoundError(f"no dataset manifest at {manifest_path}")
    manifest = json.loads(manifest_path.read_text())
    out: dict[str, list[Episode]] = {s: [] for s in splits}
    for clip in manifest["clips"]:
        if clip["split"] in out:
            out[clip["split"]].append(read_episode(root / clip["split"] / clip["name"], load_frames))
    return out


def read_contact_table(clip_dir: str | Path) -> np.ndarray:
    return np.loadtxt(Path(clip_dir) / "contact.csv", delimiter=",", skiprows=1, ndmin=2)
