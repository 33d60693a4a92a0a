"""Training loops with validation-best selection, clip trimming and the
feature-removal study runner."""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .autograd.optim import AdamState, adam_step
from .autograd import tensor as T
from .autograd.tensor import Tensor, no_grad
from .nets import ForceNet, NetworkSpec
from .preprocess import (IMAGENET, FramePreprocessor, SpaceTimeSpec, clip_spacetime, preset_geometry,
                         to_gray, CropResize)
from .state import (REMOVAL_GROUPS, Episode, NormStats, compute_stats, remove_features, removal_indices)

log = logging.getLogger(__name__)

TRIM_HEAD = 80
TRIM_TAIL = 10
EPOCHS = {"paper": 100, "desk": 30}
ABLATE_ALIASES = {"none": "none", "kin": "kinematic", "kinematic": "kinematic", "force": "force"}


class TrainingError(RuntimeError):
    pass


def default_learning_rate(variant: str) -> float:
    return 1e-4 if variant.upper() == "V" else 1e-3


@dataclass(frozen=True)
class TrainConfig:
    variant: str
    preset: str = "desk"
    epochs: int | None = None
    learning_rate: float | None = None
    l1_weight: float = 0.001
    batch_size: int = 64
    rnn_batch_size: int = 250
    seed: int = 7
    feature_removal: str = "none"
    freeze_stem: bool = False
    max_train_examples: int | None = None
    track_train_rmse: bool = False  # eval-mode RMSE on the training subset each epoch

    def __post_init__(self):
        v = self.variant.upper()
        object.__setattr__(self, "variant", v)
        if self.preset not in EPOCHS:
            raise ValueError(f"unknown preset {self.preset!r}")
        if self.epochs is None:
            object.__setattr__(self, "epochs", EPOCHS[self.preset])
        if self.learning_rate is None:
            object.__setattr__(self, "learning_rate", default_learning_rate(v))
        removal = ABLATE_ALIASES.get(self.feature_removal)
        if removal is None:
            raise ValueError(f"unknown feature removal {self.feature_removal!r}")
        object.__setattr__(self, "feature_removal", removal)
        if v == "V" and removal != "none":
            raise ValueError("the vision-only network has no state input to ablate")
        if self.epochs < 1 or self.batch_size < 2 or self.l1_weight < 0:
            raise ValueError("epochs >= 1, batch_size >= 2 and l1_weight >= 0 required")

    @property
    def effective_batch_size(self) -> int:
        return self.rnn_batch_size if self.variant == "RNN" else self.batch_size

    def to_dict(self) -> dict:
        d = asdict(self)
        d["effective_batch_size"] = self.effective_batch_size
        d["validation_metric"] = "mean denormalized RMSE (N)"
        d["l1_scope"] = "mean |w| over dense/conv/lstm weight matrices"
        return d


@dataclass
class TrainRecord:
    train_loss: list[float] = field(default_factory=list)
    val_rmse: list[float] = field(default_factory=list)
    train_rmse: list[float] = field(default_factory=list)  # normalized units, only when tracked
    best_epoch: int = 0  # 1-based
    checkpoint: str = ""
    seconds: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)


def best_epoch(val_curve: Sequence[float]) -> int:
    """1-based index of the minimum validation value; ties go to the earliest epoch."""
    if len(val_curve) == 0:
        raise ValueError("empty validation curve")
    return int(np.argmin(np.asarray(val_curve))) + 1


def trim_clip(ep: Episode, head: int = TRIM_HEAD, tail: int = TRIM_TAIL) -> Episode:
    if len(ep) <= head + tail:
        raise ValueError(f"clip {ep.name!r} has {len(ep)} ticks; trimming needs more than {head + tail}")
    return ep.view(head, len(ep) - tail)


def trim_range(n: int, head: int = TRIM_HEAD, tail: int = TRIM_TAIL) -> slice:
    if n <= head + tail:
        raise ValueError(f"clip of {n} ticks is too short to trim {head}+{tail}")
    return slice(head, n - tail)


# -- data preparation ------------------------------------------------------------
@dataclass
class PreparedClip:
    name: str
    config: str
    states: np.ndarray  # normalized, feature removal applied
    labels: np.ndarray  # normalized
    raw_labels: np.ndarray  # newtons
    images: np.ndarray | None = None  # (T, S, S, 3) normalized
    stacks: np.ndarray | None = None  # (T - history, S, S, depth)


class DataPreparer:
    """Turns episodes into network-ready arrays for one variant."""

    def __init__(self, state_stats: NormStats, force_stats: NormStats, variant: str, removal: str = "none",
                 spacetime: SpaceTimeSpec = SpaceTimeSpec()):
        self.state_stats = state_stats
        self.force_stats = force_stats
        self.variant = variant.upper()
        self.removal = removal
        self.spacetime = spacetime
        self._pre: dict[tuple[int, int], FramePreprocessor] = {}

    def _frame_pre(self, w: int, h: int) -> FramePreprocessor:
        if (w, h) not in self._pre:
            crop, out = preset_geometry(w, h)
            self._pre[(w, h)] = FramePreprocessor(w, h, crop, out, IMAGENET)
        return self._pre[(w, h)]

    def __call__(self, ep: Episode) -> PreparedClip:
        states = remove_features(self.state_stats.normalize(ep.states), self.removal)
        clip = PreparedClip(ep.name, ep.config, states, self.force_stats.normalize(ep.labels), ep.labels.copy())
        if self.variant in ("V", "VS", "RNN") and ep.frames is None:
            raise TrainingError(f"clip {ep.name!r} has no frames but variant {self.variant} needs images")
        if self.variant in ("V", "VS"):
            h, w = ep.frames.shape[1:3]
            pre = self._frame_pre(w, h)
            out = np.empty((len(ep), pre.resize.size, pre.resize.size, 3))
            for i, frame in enumerate(ep.frames):
                pre(frame, out[i])
            clip.images = out
        if self.variant == "RNN":
            clip.stacks = spacetime_clip(ep.frames, self.spacetime)
        return clip


def spacetime_clip(frames: np.ndarray, spec: SpaceTimeSpec = SpaceTimeSpec()) -> np.ndarray:
    """Offline space-time stacks for a clip: gray crop-resized frames minus the clip mean image."""
    h, w = frames.shape[1:3]
    crop, out = preset_geometry(w, h)
    resize = CropResize(w, h, crop, out, 3)
    gray = np.empty((len(frames), out, out))
    for i, f in enumerate(frames):
        gray[i] = to_gray(resize(f)) / 255.0
    return clip_spacetime(gray, spec, gray.mean(axis=0))


# -- model helpers -----------------------------------------------------------------
def l1_parameters(net: ForceNet) -> list[Tensor]:
    out = []
    for name, p in net.named_parameters():
        leaf = name.rsplit(".", 1)[-1]
        if leaf in ("weight", "w_x", "w_h") and p.data.ndim >= 2:
            out.append(p)
    return out


def _l1(params: Sequence[Tensor], weight: float):
    """``weight`` times the mean absolute value of the penalized weights."""
    if weight == 0 or not params:
        return None
    total = T.abs_sum(params[0])
    for p in params[1:]:
        total = T.add(total, T.abs_sum(p))
    count = sum(p.data.size for p in params)
    return T.mul(total, Tensor(np.asarray(weight / count)))


def predict_clip(net: ForceNet, clip: PreparedClip, batch: int = 256) -> np.ndarray:
    """Normalized predictions for every tick (NaN where the model has no estimate)."""
    net.set_mode(False)
    n = len(clip.states)
    out = np.full((n, 3), np.nan)
    with no_grad():
        if net.variant == "RNN":
            hist = n - len(clip.stacks)
            L = net.spec.sequence_length
            if len(clip.stacks) < L:
                return out
            enc_parts = []
            for a in range(0, len(clip.stacks), batch):
                enc_parts.append(net.encode_frames(Tensor(clip.stacks[a:a + batch]),
                                                   Tensor(clip.states[hist + a:hist + a + batch])).data)
            enc = Tensor(np.concatenate(enc_parts))
            ends = np.arange(L - 1, len(clip.stacks))
            for a in range(0, len(ends), batch):
                e = ends[a:a + batch]
                out[e + hist] = net.forward_windows(enc, e).data
            return out
        for a in range(0, n, batch):
            img = None if clip.images is None else Tensor(clip.images[a:a + batch])
            st = Tensor(clip.states[a:a + batch]) if net.spec.uses_state else None
            out[a:a + batch] = net.forward_batch(img if net.spec.uses_image else None, st).data
    return out


def rnn_first_tick(net_or_spec, spacetime: SpaceTimeSpec = SpaceTimeSpec()) -> int:
    spec = net_or_spec.spec if isinstance(net_or_spec, ForceNet) else net_or_spec
    return spacetime.history + spec.sequence_length - 1


def split_rmse(net: ForceNet, clips: Sequence[PreparedClip], force_stats: NormStats) -> float:
    """Mean-over-axes RMSE in newtons pooled over all ticks with a prediction."""
    se = np.zeros(3)
    count = 0
    for clip in clips:
        pred = force_stats.denormalize(predict_clip(net, clip))
        ok = np.isfinite(pred[:, 0])
        se += ((pred[ok] - clip.raw_labels[ok]) ** 2).sum(axis=0)
        count += int(ok.sum())
    if count == 0:
        raise TrainingError("validation split produced no predictions")
    return float(np.sqrt(se / count).mean())


# -- training --------------------------------------------------------------------
class _SingleFrameData:
    """Training arrays concatenated once; optional fixed random subset."""

    def __init__(self, clips: Sequence[PreparedClip], uses_image: bool, limit: int | None, seed: int):
        self.states = np.concatenate([c.states for c in clips])
        self.labels = np.concatenate([c.labels for c in clips])
        self.images = np.concatenate([c.images for c in clips]) if uses_image else None
        self.index = np.arange(len(self.states))
        if limit is not None and limit < len(self.index):
            pick = np.random.default_rng(np.random.SeedSequence([seed, 2])).permutation(len(self.index))[:limit]
            self.index = np.sort(pick)

    def rmse(self, net: ForceNet, batch: int = 256) -> float:
        """Eval-mode mean-over-axes RMSE on the (subset of) training examples, normalized units."""
        net.set_mode(False)
        se = np.zeros(3)
        with no_grad():
            for a in range(0, len(self.index), batch):
                idx = self.index[a:a + batch]
                img = None if self.images is None else Tensor(self.images[idx])
                st = Tensor(self.states[idx]) if net.spec.uses_state else None
                pred = net.forward_batch(img if net.spec.uses_image else None, st).data
                se += ((pred - self.labels[idx]) ** 2).sum(axis=0)
        return float(np.sqrt(se / len(self.index)).mean())

    def batches(self, rng: np.random.Generator, batch: int):
        order = self.index[rng.permutation(len(self.index))]
        # near-equal batches of at most ``batch`` so no tiny tail batch skews batch norm
        n_batches = -(-len(order) // batch)
        for part in np.array_split(order, n_batches):
            idx = np.sort(part)
            if len(idx) < 2:
                continue  # batch norm needs at least two samples
            yield (None if self.images is None else self.images[idx]), self.states[idx], self.labels[idx]


def _rnn_chunks(clips: Sequence[PreparedClip], L: int, batch: int):
    chunks = []
    for ci, c in enumerate(clips):
        ends = np.arange(L - 1, len(c.stacks))
        for a in range(0, len(ends), batch):
            chunks.append((ci, ends[a:a + batch]))
    return chunks


class Trainer:
    def __init__(self, config: TrainConfig, spec: NetworkSpec | None = None):
        self.config = config
        self.spec = spec or NetworkSpec(config.variant, freeze_stem=config.freeze_stem)
        if self.spec.variant != config.variant:
            raise ValueError("network spec and train config disagree on the variant")

    def fit(self, train: Sequence[PreparedClip], val: Sequence[PreparedClip], force_stats: NormStats,
            out_dir: str | Path | None = None) -> tuple[ForceNet, TrainRecord]:
        cfg = self.config
        if not train:
            raise TrainingError("empty training split")
        if not val:
            raise TrainingError("empty validation split")
        t0 = time.perf_counter()
        net = ForceNet(self.spec, cfg.seed)
        params = net.trainable_parameters()
        l1_params = [p for p in l1_parameters(net) if any(p is q for q in params)]
        adam = AdamState.for_params(params, cfg.learning_rate)
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1]))
        record = TrainRecord()
        best_state = None
        data = None if cfg.variant == "RNN" else _SingleFrameData(train, net.spec.uses_image,
                                                                   cfg.max_train_examples, cfg.seed)
        for epoch in range(1, cfg.epochs + 1):
            net.set_mode(True)
            losses = []
            if cfg.variant == "RNN":
                batches = self._rnn_batches(net, train, rng)
            else:
                batches = self._single_batches(net, data, rng)
            for bi, (pred, target) in enumerate(batches):
                loss = T.mse(pred, target)
                reg = _l1(l1_params, cfg.l1_weight)
                total = loss if reg is None else T.add(loss, reg)
                if not np.isfinite(total.data):
                    raise TrainingError(f"non-finite loss at epoch {epoch}, batch {bi}")
                for p in params:
                    p.grad = None
                total.backward()
                adam_step(params, [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params], adam)
                losses.append(float(total.data))
            record.train_loss.append(float(np.mean(losses)))
            record.val_rmse.append(split_rmse(net, val, force_stats))
            if cfg.track_train_rmse and data is not None:
                record.train_rmse.append(data.rmse(net))
            if record.val_rmse[-1] < min(record.val_rmse[:-1], default=np.inf):
                best_state = {k: v.copy() for k, v in net.state_dict().items()}
            log.info("%s epoch %d loss %.5f val %.4f N", cfg.variant, epoch, record.train_loss[-1],
                     record.val_rmse[-1])
        record.best_epoch = best_epoch(record.val_rmse)
        net.load_state_dict(best_state)
        net.set_mode(False)
        record.seconds = time.perf_counter() - t0
        if out_dir is not None:
            record.checkpoint = net.save(out_dir).name
        return net, record

    def _single_batches(self, net, data: _SingleFrameData, rng):
        for img, st, lab in data.batches(rng, self.config.batch_size):
            pred = net.forward_batch(None if img is None else Tensor(img),
                                     Tensor(st) if net.spec.uses_state else None)
            yield pred, lab

    def _rnn_batches(self, net, train, rng):
        cfg = self.config
        L = net.spec.sequence_length
        chunks = _rnn_chunks(train, L, cfg.rnn_batch_size)
        for k in rng.permutation(len(chunks)):
            ci, ends = chunks[k]
            c = train[ci]
            hist = len(c.states) - len(c.stacks)
            lo, hi = ends[0] - (L - 1), ends[-1] + 1
            enc = net.encode_frames(Tensor(c.stacks[lo:hi]), Tensor(c.states[hist + lo:hist + hi]))
            pred = net.forward_windows(enc, ends - lo)
            yield pred, c.labels[hist + ends]


# -- run-level entry points --------------------------------------------------------
def prepare_splits(dataset: dict[str, list[Episode]], variant: str, removal: str = "none",
                   stats: tuple[NormStats, NormStats] | None = None):
    state_stats, force_stats = stats or compute_stats(dataset["train"])
    prep = DataPreparer(state_stats, force_stats, variant, removal)
    return {split: [prep(ep) for ep in eps] for split, eps in dataset.items()}, state_stats, force_stats


def check_masks(removal: str, probe: np.ndarray) -> None:
    """Removal must zero exactly its index set on a probe batch (34 or 27 entries)."""
    zeroed = remove_features(probe, removal)
    idx = list(removal_indices(removal))
    if idx and not np.all(zeroed[..., idx] == 0):
        raise AssertionError(f"{removal} removal left non-zero features")
    expected = {"none": 0, "kinematic": 34, "force": 27}[removal]
    if len(idx) != expected:
        raise AssertionError(f"{removal} removal zeroes {len(idx)} features, expected {expected}")


def train(config: TrainConfig, dataset: dict[str, list[Episode]], out_dir: str | Path | None = None,
          prepared=None) -> tuple[ForceNet, TrainRecord, dict]:
    """Train one model.  Returns the best-epoch network, its record and the
    normalization stats (as dicts) used."""
    check_masks(config.feature_removal, np.ones((2, 54)))
    if prepared is None:
        prepared, state_stats, force_stats = prepare_splits(
            {k: dataset[k] for k in ("train", "val")}, config.variant, config.feature_removal)
    else:
        prepared, state_stats, force_stats = prepared
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "config.json").write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True))
        (out_dir / "stats.json").write_text(json.dumps(
            {"state": state_stats.to_dict(), "force": force_stats.to_dict()}, indent=2, sort_keys=True))
    net, record = Trainer(config).fit(prepared["train"], prepared["val"], force_stats, out_dir)
    if out_dir is not None:
        write_train_log(out_dir / "train_log.csv", record)
        (out_dir / "record.json").write_text(json.dumps(record.to_dict(), indent=2, sort_keys=True))
    return net, record, {"state": state_stats, "force": force_stats}


def write_train_log(path: str | Path, record: TrainRecord) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "loss", "val_rmse"])
        for i, (loss, v) in enumerate(zip(record.train_loss, record.val_rmse), start=1):
            w.writerow([i, repr(loss), repr(v)])


def run_ablation(base: TrainConfig, dataset: dict[str, list[Episode]], out_dir: str | Path | None = None):
    """Three trainings differing only in the removal mask: none, kinematic, force."""
    if base.variant == "V":
        raise ValueError("the vision-only network has no state input to ablate")
    results = {}
    for removal in REMOVAL_GROUPS:
        cfg = replace(base, feature_removal=removal)
        sub = None if out_dir is None else Path(out_dir) / removal
        results[removal] = train(cfg, dataset, sub)
    return results
