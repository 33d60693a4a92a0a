import json
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tactisense.sim.contact import contact_force, simulate_contact
from tactisense.sim.dataset import (DESK_PRESET, SPLIT_COUNTS, ClipJob, load_dataset, plan_jobs, read_contact_table,
                                    simulate_episode)
from tactisense.sim.kinematics import CADIERE, MARYLAND, Arm, quaternion
from tactisense.sim.render import Camera, render_frame
from tactisense.sim.robot_state import DEFAULT, IDEAL, PRESETS, synthesize_robot_state
from tactisense.sim.scene import ALL_TAGS, GRID, SEEN_MATERIAL, UNSEEN_MATERIAL, MaterialModel
from tactisense.sim.trajectory import generate_trajectory
from tactisense.state import SLICES, STATE_DIM


def _one(pos, vel=(0.0, 0.0, 0.0), material=SEEN_MATERIAL, grasp=False, anchor=(np.nan,) * 3, **kw):
    return contact_force(np.array([pos], float), np.array([vel], float), np.array([grasp]),
                         np.array([anchor], float), material, **kw)[0]


class TestContact:
    def test_free_space_is_zero(self):
        np.testing.assert_array_equal(_one([0.0, 0.0, 0.01]), 0.0)

    def test_static_indentation_is_hookean(self):
        f = _one([0.0, 0.0, -0.002])
        np.testing.assert_allclose(f, [0.0, 0.0, -650.0 * 0.002])

    def test_stiffer_material_pushes_harder(self):
        soft = _one([0.0, 0.0, -0.002])[2]
        hard = _one([0.0, 0.0, -0.002], material=UNSEEN_MATERIAL)[2]
        assert abs(hard) > abs(soft)

    def test_saturates(self):
        f = _one([0.0, 0.0, -0.05])
        assert np.linalg.norm(f) == pytest.approx(10.0)

    def test_drag_opposes_sliding(self):
        f = _one([0.0, 0.0, -0.002], vel=[0.05, 0.0, 0.0])
        assert f[0] > 0  # force on the tissue follows the tool

    def test_grasp_pulls_tissue_with_tool(self):
        f = _one([0.0, 0.0, 0.004], grasp=True, anchor=[0.0, 0.0, 0.0])
        assert f[2] > 0

    def test_material_validation(self):
        with pytest.raises(ValueError):
            MaterialModel("bad", stiffness=0.0, damping=1.0, color=(0, 0, 0))

    def test_simulate_length(self):
        traj = generate_trajectory("palpation", 2.0, 3)
        res = simulate_contact(traj, SEEN_MATERIAL, 1 / 30)
        assert len(res.times) == 60
        assert np.all(res.indentation >= 0)
        with pytest.raises(ValueError):
            simulate_contact(traj, SEEN_MATERIAL, 0.0)


class TestTrajectory:
    def test_deterministic(self):
        a = generate_trajectory("mixed", 5.0, 42)
        b = generate_trajectory("mixed", 5.0, 42)
        t = np.linspace(0, 5, 50)
        np.testing.assert_array_equal(a.sample(t)["pos"], b.sample(t)["pos"])

    def test_makes_contact(self):
        traj = generate_trajectory("palpation", 6.0, 1)
        pos = traj.sample(np.linspace(0, 6, 181))["pos"]
        assert pos[0, 2] > 0 and pos[:, 2].min() < 0

    def test_indent_cap(self):
        traj = generate_trajectory("palpation", 8.0, 2, indent_cap=0.004)
        assert traj.sample(np.linspace(0, 8, 400))["pos"][:, 2].min() >= -0.004 - 1e-12

    @pytest.mark.parametrize("bad", [dict(kind="spin", duration=1.0), dict(kind="pull", duration=0.0)])
    def test_rejects(self, bad):
        with pytest.raises(ValueError):
            generate_trajectory(bad["kind"], bad["duration"], 0)


class TestKinematics:
    @given(st.integers(0, 10_000))
    @settings(max_examples=20, deadline=None)
    def test_jacobian_matches_finite_difference(self, seed):
        rng = np.random.default_rng(seed)
        arm = Arm(CADIERE)
        q = np.array([*rng.uniform(-0.5, 0.5, 2), rng.uniform(0.08, 0.2), *rng.uniform(-0.6, 0.6, 3), 0.3])
        J = arm.jacobian(q)
        h = 1e-6
        for j in range(7):
            dq = np.zeros(7)
            dq[j] = h
            num = (arm.fk(q + dq)[0] - arm.fk(q - dq)[0]) / (2 * h)
            np.testing.assert_allclose(J[:3, j], num, atol=1e-7)

    def test_ik_round_trip(self):
        arm = Arm(MARYLAND)
        q = np.array([0.2, -0.1, 0.15, 0.3, -0.2, 0.1, 0.4])
        p, _ = arm.fk(q)
        back = arm.ik_position(p, q[3:], q0=q + 0.05)
        np.testing.assert_allclose(arm.fk(back)[0], p, atol=1e-9)

    def test_quaternion_unit_and_identity(self):
        np.testing.assert_allclose(quaternion(np.eye(3)), [0, 0, 0, 1], atol=1e-12)
        R = Arm(CADIERE).fk(np.array([0.1, 0.2, 0.1, 0.3, 0.1, 0.0, 0.0]))[1]
        assert np.linalg.norm(quaternion(R)) == pytest.approx(1.0)


class TestRender:
    def test_shape_and_determinism(self):
        q = np.array([0.0, 0.0, 0.15, 0.0, 0.0, 0.0, 0.3])
        a = render_frame(GRID["C"], q, width=96, height=54)
        b = render_frame(GRID["C"], q, width=96, height=54)
        assert a.shape == (54, 96, 3) and a.dtype == np.uint8
        np.testing.assert_array_equal(a, b)

    def test_indentation_changes_image(self, tiny_data, tiny_dataset):
        ep = tiny_dataset["train"][0]
        table = read_contact_table(tiny_data / ep.split / ep.name)
        i = int(np.argmax(table[:, 0]))
        q = ep.states[i, SLICES["q"]]
        a = render_frame(GRID[ep.config], q, 0.0, width=160, height=90)
        b = render_frame(GRID[ep.config], q, 0.006, width=160, height=90)
        assert np.any(a != b)

    def test_unseen_material_changes_tissue_colour(self):
        q = np.array([0.0, 0.0, 0.10, 0.0, 0.0, 0.0, 0.3])
        a = render_frame(GRID["C"], q, width=96, height=54).astype(int)
        b = render_frame(GRID["unseen_material"], q, width=96, height=54).astype(int)
        assert np.abs(a - b).sum() > 0

    def test_tissue_centre_projects_to_image(self):
        cam = Camera.for_scene(GRID["C"])
        uv, z = cam.project(np.zeros(3))
        assert z[0] > 0
        assert 0 < uv[0, 0] < 960 and 0 < uv[0, 1] < 540

    def test_left_shift_moves_projection(self):
        u_c = Camera.for_scene(GRID["C"]).project(np.array([0.03, 0.0, 0.0]))[0][0, 0]
        u_l = Camera.for_scene(GRID["L3"]).project(np.array([0.03, 0.0, 0.0]))[0][0, 0]
        assert u_c != pytest.approx(u_l)


def _synth(corruption, n=60, seed=0):
    arm = Arm(CADIERE)
    t = np.arange(n) / 30.0
    tip = np.column_stack([0.14 + 0.01 * np.sin(t), 0.01 * np.cos(2 * t), -0.12 + 0.005 * np.sin(3 * t)])
    wrist = np.tile([0.1, -0.1, 0.0, 0.3], (n, 1))
    f = np.column_stack([0.5 * np.sin(t), 0.2 * np.ones(n), -np.abs(np.sin(2 * t))])
    return synthesize_robot_state(arm, tip, wrist, f, np.zeros(n, bool), 1 / 30, corruption, seed), f


class TestRobotState:
    def test_presets(self):
        assert set(PRESETS) == {"ideal", "friction_only", "default"}

    def test_ideal_torque_is_jacobian_transpose(self):
        (states, aux), f = _synth(IDEAL)
        assert states.shape == (60, STATE_DIM)
        expected = np.einsum("nji,nj->ni", aux["jacobian"][:, :3], f)
        np.testing.assert_allclose(states[:, SLICES["tau"]], expected, atol=1e-12)

    def test_ideal_wrench_is_rotated_force(self):
        (states, _), f = _synth(IDEAL)
        norms = np.linalg.norm(states[:, SLICES["f"]], axis=1)
        np.testing.assert_allclose(norms, np.linalg.norm(f, axis=1), atol=1e-12)

    def test_default_corrupts(self):
        (ideal, _), _ = _synth(IDEAL)
        (noisy, _), _ = _synth(DEFAULT)
        assert np.abs(noisy[:, SLICES["tau"]] - ideal[:, SLICES["tau"]]).max() > 1e-3
        np.testing.assert_array_equal(noisy[:, SLICES["q"]], ideal[:, SLICES["q"]])

    def test_seeded(self):
        (a, _), _ = _synth(DEFAULT, seed=5)
        (b, _), _ = _synth(DEFAULT, seed=5)
        assert a.tobytes() == b.tobytes()

    def test_orientation_is_unit_quaternion(self):
        (states, _), _ = _synth(DEFAULT)
        np.testing.assert_allclose(np.linalg.norm(states[:, SLICES["o"]], axis=1), 1.0)

    def test_non_finite_rejected(self):
        arm = Arm(CADIERE)
        with pytest.raises(ValueError):
            synthesize_robot_state(arm, np.full((2, 3), np.nan), np.zeros((2, 4)), np.zeros((2, 3)),
                                   np.zeros(2, bool), 1 / 30)


class TestDataset:
    def test_plan_counts(self):
        jobs = plan_jobs(7, DESK_PRESET)
        per_split = {s: sum(c.values()) for s, c in SPLIT_COUNTS.items()}
        for split, n in per_split.items():
            assert sum(j.split == split for j in jobs) == n
        assert len({(j.split, j.name) for j in jobs}) == len(jobs)

    def test_every_condition_in_test_splits(self):
        tags = {j.tag for j in plan_jobs(7, DESK_PRESET) if j.split.startswith("test")}
        assert tags == set(ALL_TAGS)

    def test_episode_deterministic_and_seed_sensitive(self):
        job = ClipJob("train", "C", 0, 7, 1.0, 64, 36, render=False)
        a, ta = simulate_episode(job)
        b, tb = simulate_episode(job)
        c, _ = simulate_episode(replace(job, seed=8))
        assert a.states.tobytes() == b.states.tobytes()
        np.testing.assert_array_equal(ta, tb)
        assert a.states.tobytes() != c.states.tobytes()

    def test_tiny_dataset_on_disk(self, tiny_data, tiny_dataset):
        manifest = json.loads((tiny_data / "dataset.json").read_text())
        assert len(manifest["clips"]) == 7
        ep = tiny_dataset["train"][0]
        assert ep.frames.shape == (120, 180, 320, 3)
        assert len(ep) == 120
        table = read_contact_table(tiny_data / ep.split / ep.name)
        assert table.shape == (120, 4)
        assert np.all(table[:, 0] >= 0)

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_dataset(tmp_path)

    def test_unseen_material_clip_uses_stiffer_tissue(self, tiny_dataset):
        ep = next(e for e in tiny_dataset["test_unseen"] if e.config == "unseen_material")
        assert ep.meta["material"] == "unseen"
