import numpy as np
import pytest

from tactisense.evaluator import CONDITIONS, EvalReport
from tactisense.protocol import StageError, _stage, trend_checks


def _report(means: dict[str, dict[str, float]]):
    per_axis = {m: {c: (np.full(3, v[c]) if c in v else None) for c in CONDITIONS} for m, v in means.items()}
    return EvalReport(list(means), per_axis, {})


def _good():
    seen = {c: 1.0 for c in ("C", "L2", "R2", "Z2")}
    return _report({
        "S": {**seen, "unseen_material": 1.0},
        "V": {c: 2.0 for c in (*seen, "unseen_material")},
        "VS": {**{c: 0.5 for c in seen}, "unseen_material": 0.9},
        "RNN": {**seen, "unseen_material": 1.1},
        "physics": {**{c: 1.5 for c in seen}, "unseen_material": 1.5},
    })


class TestTrends:
    def test_all_pass(self):
        out = trend_checks(_good(), {"none": 1.0, "kinematic": 1.1, "force": 1.5})
        assert out["all_pass"]
        assert out["margin"] == 0.05

    def test_margin_is_enforced(self):
        out = trend_checks(_good(), {"none": 1.0, "kinematic": 1.0, "force": 1.04})
        assert not out["checks"]["c_state_force_removal_hurts_more"]["pass"]
        assert not out["all_pass"]

    def test_vision_must_be_worst_unseen(self):
        report = _good()
        report.per_axis["physics"]["unseen_material"] = np.full(3, 2.05)
        out = trend_checks(report, {"none": 1.0, "kinematic": 1.0, "force": 2.0})
        assert not out["checks"]["b_vision_unseen_material_worst"]["pass"]


class TestStage:
    def test_partial_renamed_on_success(self, tmp_path):
        final = _stage(tmp_path, "a", lambda d: (d.mkdir(), (d / "x").write_text("1")))
        assert final == tmp_path / "a" and (final / "x").read_text() == "1"
        assert not (tmp_path / "a.partial").exists()

    def test_finished_stage_skipped(self, tmp_path):
        _stage(tmp_path, "a", lambda d: d.mkdir())
        _stage(tmp_path, "a", lambda d: pytest.fail("should not rerun"))

    def test_failure_leaves_no_final(self, tmp_path):
        def boom(d):
            d.mkdir()
            raise RuntimeError("nope")

        with pytest.raises(StageError) as exc:
            _stage(tmp_path, "b", boom)
        assert exc.value.stage == "b"
        assert not (tmp_path / "b").exists()
