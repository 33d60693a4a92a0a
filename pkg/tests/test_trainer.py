import json

import numpy as np
import pytest

from tactisense.autograd.tensor import Tensor
from tactisense.nets import ForceNet, build_network
from tactisense.state import STATE_DIM
from tactisense.trainer import (TrainConfig, TrainingError, _l1, best_epoch, check_masks, l1_parameters,
                                predict_clip, prepare_splits, rnn_first_tick, run_ablation, train, trim_clip,
                                trim_range)


@pytest.fixture(scope="module")
def trained_s(tiny_dataset, tmp_path_factory):
    out = tmp_path_factory.mktemp("run_s")
    cfg = TrainConfig("S", epochs=2, seed=3, track_train_rmse=True)
    net, record, stats = train(cfg, tiny_dataset, out)
    return out, net, record, stats


class TestConfig:
    def test_defaults(self):
        cfg = TrainConfig("vs")
        assert (cfg.variant, cfg.epochs, cfg.learning_rate, cfg.batch_size) == ("VS", 30, 1e-3, 64)
        assert TrainConfig("v").learning_rate == 1e-4
        assert TrainConfig("S", preset="paper").epochs == 100
        assert TrainConfig("rnn").effective_batch_size == 250

    def test_alias(self):
        assert TrainConfig("S", feature_removal="kin").feature_removal == "kinematic"

    @pytest.mark.parametrize("kw", [dict(variant="V", feature_removal="force"), dict(variant="S", epochs=0),
                                    dict(variant="S", feature_removal="vision"), dict(variant="S", preset="huge"),
                                    dict(variant="S", l1_weight=-1.0)])
    def test_rejects(self, kw):
        with pytest.raises(ValueError):
            TrainConfig(**kw)


class TestHelpers:
    def test_best_epoch_ties_go_early(self):
        assert best_epoch([3.0, 1.0, 1.0, 2.0]) == 2
        with pytest.raises(ValueError):
            best_epoch([])

    def test_trim(self):
        assert trim_range(200) == slice(80, 190)
        with pytest.raises(ValueError):
            trim_range(90)

    def test_trim_clip(self, tiny_dataset):
        ep = trim_clip(tiny_dataset["train"][0])
        assert len(ep) == 30 and ep.meta["offset"] == 80

    def test_check_masks(self):
        for removal in ("none", "kinematic", "force"):
            check_masks(removal, np.ones((2, STATE_DIM)))

    def test_l1_is_mean_scaled(self):
        params = [Tensor(np.array([[1.0, -3.0]])), Tensor(np.array([[2.0, 2.0]]))]
        assert float(_l1(params, 0.5).data) == pytest.approx(0.5 * 8.0 / 4)
        assert _l1(params, 0.0) is None

    def test_l1_skips_biases_and_norms(self):
        params = l1_parameters(build_network("S"))
        assert len(params) == 7  # the seven dense weight matrices
        assert all(p.data.ndim == 2 for p in params)

    def test_rnn_first_tick(self):
        assert rnn_first_tick(build_network("RNN")) == 79


class TestTraining:
    def test_outputs_written(self, trained_s):
        out, _, record, _ = trained_s
        for name in ("config.json", "stats.json", "train_log.csv", "record.json", "model.ckpt", "model.json"):
            assert (out / name).exists()
        assert len(record.train_loss) == len(record.val_rmse) == len(record.train_rmse) == 2
        assert json.loads((out / "config.json").read_text())["variant"] == "S"
        assert (out / "train_log.csv").read_text().splitlines()[0] == "epoch,loss,val_rmse"

    def test_checkpoint_is_best_epoch(self, trained_s, tiny_dataset):
        out, net, record, stats = trained_s
        loaded = ForceNet.load(out)
        prepared, _, _ = prepare_splits({"val": tiny_dataset["val"]}, "S", stats=(stats["state"], stats["force"]))
        clip = prepared["val"][0]
        np.testing.assert_array_equal(predict_clip(loaded, clip), predict_clip(net, clip))
        assert record.best_epoch == int(np.argmin(record.val_rmse)) + 1

    def test_bit_identical_rerun(self, trained_s, tiny_dataset, tmp_path):
        out, _, _, _ = trained_s
        train(TrainConfig("S", epochs=2, seed=3, track_train_rmse=True), tiny_dataset, tmp_path)
        assert (tmp_path / "model.ckpt").read_bytes() == (out / "model.ckpt").read_bytes()
        assert (tmp_path / "train_log.csv").read_bytes() == (out / "train_log.csv").read_bytes()

    def test_seed_changes_weights(self, trained_s, tiny_dataset, tmp_path):
        out, _, _, _ = trained_s
        train(TrainConfig("S", epochs=2, seed=4), tiny_dataset, tmp_path)
        assert (tmp_path / "model.ckpt").read_bytes() != (out / "model.ckpt").read_bytes()

    @pytest.mark.parametrize("variant", ["V", "VS", "RNN"])
    def test_image_variants_run(self, tiny_dataset, variant):
        net, record, _ = train(TrainConfig(variant, epochs=1, seed=1), tiny_dataset)
        assert np.isfinite(record.val_rmse[0])
        assert net.variant == variant

    def test_rnn_predictions_start_after_window(self, tiny_dataset):
        net = build_network("RNN", seed=0)
        prepared, _, _ = prepare_splits({"train": tiny_dataset["train"][:1]}, "RNN")
        pred = predict_clip(net, prepared["train"][0])
        first = rnn_first_tick(net)
        assert np.isnan(pred[:first]).all()
        assert np.isfinite(pred[first:]).all()

    def test_missing_frames(self, tiny_dataset):
        no_frames = {k: [e.view(0, len(e)) for e in v] for k, v in tiny_dataset.items()}
        for eps in no_frames.values():
            for e in eps:
                e.frames = None
        with pytest.raises(TrainingError):
            train(TrainConfig("VS", epochs=1), no_frames)

    def test_overfit_subset_is_fixed(self, tiny_dataset):
        _, rec_a, _ = train(TrainConfig("S", epochs=1, seed=2, max_train_examples=40, track_train_rmse=True),
                            tiny_dataset)
        _, rec_b, _ = train(TrainConfig("S", epochs=1, seed=2, max_train_examples=40, track_train_rmse=True),
                            tiny_dataset)
        assert rec_a.train_rmse == rec_b.train_rmse


class TestAblation:
    def test_three_runs(self, tiny_dataset, tmp_path):
        results = run_ablation(TrainConfig("S", epochs=1, seed=5), tiny_dataset, tmp_path)
        assert set(results) == {"none", "kinematic", "force"}
        for removal in results:
            cfg = json.loads((tmp_path / removal / "config.json").read_text())
            assert cfg["feature_removal"] == removal

    def test_vision_only_refused(self, tiny_dataset):
        with pytest.raises(ValueError):
            run_ablation(TrainConfig("V", epochs=1), tiny_dataset)
