from dataclasses import replace

import numpy as np
import pytest

from tactisense.physics import (DynamicsParams, PhysicsBaseline, PhysicsError, estimate_episode, estimate_force, fit,
                                force_from_torque, lowpass, no_contact)
from tactisense.sim.dataset import ClipJob, simulate_episode
from tactisense.sim.kinematics import CADIERE, Arm
from tactisense.state import SLICES


def _episodes(corruption, n=3, seconds=6.0, split="train"):
    job = ClipJob(split, "C", 0, 21, seconds, 320, 180, corruption, render=False)
    return [simulate_episode(replace(job, index=k))[0] for k in range(n)]


@pytest.fixture(scope="module")
def friction_only():
    return _episodes("friction_only")


@pytest.fixture(scope="module")
def ideal():
    return _episodes("ideal")


class TestFilter:
    def test_none_is_identity(self, rng):
        x = rng.normal(size=(20, 7))
        np.testing.assert_array_equal(lowpass(x, None), x)

    def test_constant_passes_unchanged(self):
        np.testing.assert_allclose(lowpass(np.full((50, 2), 3.0)), 3.0, atol=1e-12)

    def test_attenuates_high_frequency(self):
        t = np.arange(300) / 30.0
        y = lowpass(np.sin(2 * np.pi * 12.0 * t))
        assert np.abs(y[100:]).max() < 0.1

    def test_causal(self, rng):
        x = rng.normal(size=60)
        y = x.copy()
        y[40:] += 5.0
        np.testing.assert_array_equal(lowpass(x)[:40], lowpass(y)[:40])


class TestFit:
    def test_recovers_friction_within_five_percent(self, friction_only):
        params = fit(friction_only, cutoff_hz=None)
        c_true, d_true = np.asarray(CADIERE.coulomb), np.asarray(CADIERE.viscous)
        np.testing.assert_allclose(params.c, c_true, rtol=0.05)
        np.testing.assert_allclose(params.d, d_true, rtol=0.05)
        np.testing.assert_allclose(params.g, 0.0, atol=1e-9)

    def test_no_free_samples(self, friction_only):
        ep = friction_only[0]
        ep = replace(ep, labels=np.ones_like(ep.labels))
        with pytest.raises(PhysicsError):
            fit([ep])

    def test_rank_deficiency_names_joint(self, friction_only):
        ep = friction_only[0]
        states = ep.states.copy()
        states[:, SLICES["q_dot"].start + 3] = 0.0
        with pytest.raises(PhysicsError, match=r"\[4\]"):
            fit([replace(ep, states=states)])

    def test_params_round_trip(self, tmp_path):
        p = DynamicsParams(np.arange(7.0), np.ones(7), np.zeros(7), None)
        p.save(tmp_path / "p.json")
        back = DynamicsParams.load(tmp_path / "p.json")
        np.testing.assert_array_equal(back.c, p.c)
        assert back.cutoff_hz is None

    def test_cutoff_validated(self):
        with pytest.raises(ValueError):
            DynamicsParams(np.zeros(7), np.zeros(7), np.zeros(7), cutoff_hz=20.0)

    def test_no_contact_definition(self):
        labels = np.array([[0.0, 0.0, 0.0], [0.0, 0.0, -1e-9]])
        np.testing.assert_array_equal(no_contact(labels), [True, False])


class TestEstimate:
    def test_force_from_torque_inverts_transpose(self, rng):
        J = Arm(CADIERE).jacobian(np.array([0.1, -0.2, 0.12, 0.2, 0.1, -0.1, 0.3]))
        f = rng.normal(size=3)
        got, cond = force_from_torque(J[:3].T @ f, J)
        np.testing.assert_allclose(got, f, atol=1e-10)
        assert np.isfinite(cond)

    def test_ideal_closed_loop(self, ideal):
        params = DynamicsParams(np.zeros(7), np.zeros(7), np.zeros(7), None)
        for ep in ideal:
            pred, ok = estimate_episode(ep, params)
            assert ok.all()
            assert np.sqrt(np.mean((pred - ep.labels) ** 2)) < 1e-6

    def test_single_state_matches_episode(self, friction_only):
        ep = friction_only[0]
        params = fit(friction_only, cutoff_hz=None)
        pred, _ = estimate_episode(ep, params)
        i = len(ep) // 2
        J = Arm(CADIERE).jacobian(ep.states[i, SLICES["q"]])
        np.testing.assert_allclose(estimate_force(ep.states[i], params, J).force, pred[i], atol=1e-12)

    def test_singular_jacobian_flagged(self):
        est = estimate_force(np.zeros(54), DynamicsParams(np.zeros(7), np.zeros(7), np.zeros(7), None),
                             np.zeros((6, 7)))
        assert not est.reliable

    def test_rmse_grows_with_corruption(self, ideal):
        noisy = _episodes("default")
        base = PhysicsBaseline.fit(ideal, cutoff_hz=None)
        worse = PhysicsBaseline.fit(noisy, cutoff_hz=None)

        def err(model, eps):
            return np.sqrt(np.mean(np.concatenate([(model.predict_clip(e) - e.labels) ** 2 for e in eps])))

        assert err(worse, noisy) > err(base, ideal)


class TestBaseline:
    def test_save_load(self, tmp_path, friction_only):
        b = PhysicsBaseline.fit(friction_only)
        b.save(tmp_path)
        back = PhysicsBaseline.load(tmp_path)
        np.testing.assert_array_equal(back.params.d, b.params.d)
        assert back.params.cutoff_hz == 3.0
        assert back.kind == "physics" and not back.uses_image
