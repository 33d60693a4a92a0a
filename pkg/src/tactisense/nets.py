"""The four estimator architectures: state-only (S), vision-only (V),
vision + state (VS) and the recurrent space-time baseline (RNN).

All networks map to a 3-vector of normalized force.  Images are NHWC.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .autograd import checkpoint
from .autograd import tensor as T
from .autograd.layers import (RELU, TANH, Layer, LSTMCell, Sequential, batch_norm, conv, dense, forward,
                              lstm_cell, residual_block)
from .autograd.tensor import Tensor, no_grad
from .state import STATE_DIM

VARIANTS = ("S", "V", "VS", "RNN")
S_HIDDEN = (500, 1000, 1000, 1000, 500, 50)
FUSION_HIDDEN = (84, 180, 50)
VISION_EMBED = 30
SEQUENCE_LENGTH = 60
OUTPUT_DIM = 3
RNN_HIDDEN = 128


class UsageError(ValueError):
    pass


@dataclass(frozen=True)
class BackboneSpec:
    in_channels: int = 3
    stem_channels: int = 16
    stem_patch: int = 4
    stages: tuple[tuple[int, int], ...] = ((16, 1), (32, 2), (64, 2), (128, 2))

    @property
    def width(self) -> int:
        return self.stages[-1][0]

    def scaled(self, factor: int) -> "BackboneSpec":
        return BackboneSpec(self.in_channels, self.stem_channels * factor, self.stem_patch,
                            tuple((c * factor, s) for c, s in self.stages))


@dataclass(frozen=True)
class NetworkSpec:
    variant: str
    image_size: int = 64
    backbone: BackboneSpec = field(default_factory=BackboneSpec)
    s_hidden: tuple[int, ...] = S_HIDDEN
    fusion_hidden: tuple[int, ...] = FUSION_HIDDEN
    vision_embed: int = VISION_EMBED
    state_dim: int = STATE_DIM
    output_dim: int = OUTPUT_DIM
    rnn_hidden: int = RNN_HIDDEN
    sequence_length: int = SEQUENCE_LENGTH
    freeze_stem: bool = False

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        frozen = {"s_hidden": (tuple(self.s_hidden), S_HIDDEN),
                  "fusion_hidden": (tuple(self.fusion_hidden), FUSION_HIDDEN),
                  "vision_embed": (self.vision_embed, VISION_EMBED),
                  "state_dim": (self.state_dim, STATE_DIM),
                  "output_dim": (self.output_dim, OUTPUT_DIM),
                  "sequence_length": (self.sequence_length, SEQUENCE_LENGTH)}
        for name, (got, want) in frozen.items():
            if got != want:
                raise ValueError(f"{name} is fixed at {want}, got {got}")
        if self.fusion_hidden[0] != self.vision_embed + self.state_dim:
            raise ValueError("first fusion layer must match the concatenated width")
        if self.image_size % self.backbone.stem_patch:
            raise ValueError("image size must be a multiple of the stem patch")
        if self.variant == "RNN" and self.backbone.in_channels != 3:
            raise ValueError("recurrent backbone consumes the 3-deep space-time stack")

    @property
    def uses_image(self) -> bool:
        return self.variant != "S"

    @property
    def uses_state(self) -> bool:
        return self.variant != "V"

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        d = dict(d)
        bb = d.pop("backbone")
        bb["stages"] = tuple(tuple(s) for s in bb["stages"])
        for k in ("s_hidden", "fusion_hidden"):
            d[k] = tuple(d[k])
        return cls(backbone=BackboneSpec(**bb), **d)


def _mlp_specs(sizes: Sequence[int], out: int):
    specs = []
    for a, b in zip(sizes[:-1], sizes[1:]):
        specs += [dense(a, b), batch_norm(b), RELU]
    specs.append(dense(sizes[-1], out))
    return specs


class Backbone(Layer):
    """Patchify stem + residual stages + global average pool."""

    def __init__(self, spec: BackboneSpec, rng: np.random.Generator):
        super().__init__(None)
        p = spec.stem_patch
        self.stem = Sequential([conv(spec.in_channels, spec.stem_channels, p, p, 0),
                                batch_norm(spec.stem_channels), RELU], rng)
        blocks = []
        cin = spec.stem_channels
        for cout, stride in spec.stages:
            blocks.append(residual_block(cin, cout, stride))
            cin = cout
        self.blocks = Sequential(blocks, rng)

    def children(self):
        return {"stem": self.stem, "blocks": self.blocks}

    def feature_maps(self, x: Tensor) -> Tensor:
        """Output of the last residual block, before pooling."""
        return self.blocks(self.stem(x))

    def forward(self, x: Tensor) -> Tensor:
        return T.global_avg_pool(self.feature_maps(x))


class ForceNet(Layer):
    """One estimator; which sub-networks exist depends on the variant."""

    def __init__(self, spec: NetworkSpec, seed: int = 0):
        super().__init__(None)
        self.spec = spec
        self.seed = int(seed)
        ss = np.random.SeedSequence(self.seed)
        bb_seed, head_seed = ss.spawn(2)
        self.backbone = Backbone(spec.backbone, np.random.default_rng(bb_seed)) if spec.uses_image else None
        rng = np.random.default_rng(head_seed)
        width = spec.backbone.width
        self.lstm = None
        if spec.variant == "S":
            self.head = Sequential(_mlp_specs((spec.state_dim, *spec.s_hidden), spec.output_dim), rng)
        elif spec.variant == "V":
            self.head = Sequential([dense(width, spec.output_dim)], rng)
        elif spec.variant == "VS":
            self.embed = Sequential([dense(width, spec.vision_embed)], rng)
            self.head = Sequential(_mlp_specs((spec.vision_embed + spec.state_dim, *spec.fusion_hidden),
                                              spec.output_dim), rng)
        else:
            self.lstm = LSTMCell(lstm_cell(width + spec.state_dim, spec.rnn_hidden), rng)
            self.head = Sequential([dense(spec.rnn_hidden, spec.output_dim)], rng)
        self.set_mode(False)

    @property
    def kind(self) -> str:
        return f"net_{self.spec.variant.lower()}"

    @property
    def variant(self) -> str:
        return self.spec.variant

    def children(self):
        out = {}
        if self.backbone is not None:
            out["backbone"] = self.backbone
        if self.variant == "VS":
            out["embed"] = self.embed
        if self.lstm is not None:
            out["lstm"] = self.lstm
        out["head"] = self.head
        return out

    def trainable_parameters(self) -> list[Tensor]:
        frozen = set()
        if self.spec.freeze_stem and self.backbone is not None:
            frozen = {id(p) for p in self.backbone.stem.parameters()}
        return [p for p in self.parameters() if id(p) not in frozen]

    # -- forward passes ----------------------------------------------------------
    def _check_inputs(self, image, state):
        if self.spec.uses_image and image is None:
            raise UsageError(f"variant {self.variant} needs an image input")
        if self.spec.uses_state and state is None:
            raise UsageError(f"variant {self.variant} needs a state input")

    def forward(self, inputs):
        image, state = inputs
        return self.forward_batch(image, state)

    def forward_batch(self, image: Tensor | None, state: Tensor | None) -> Tensor:
        """Single-frame forward for S / V / VS on a batch."""
        if self.variant == "RNN":
            raise UsageError("the recurrent network predicts from windows; use forward_windows")
        self._check_inputs(image, state)
        if self.variant == "S":
            return forward(self.head.layers, state)
        feats = self.backbone(image)
        if self.variant == "V":
            return forward(self.head.layers, feats)
        z = T.concat([self.embed(feats), state], axis=-1)
        return forward(self.head.layers, z)

    def encode_frames(self, stacks: Tensor, states: Tensor) -> Tensor:
        """Per-tick recurrent inputs: tanh(backbone(space-time stack)) concatenated with the state."""
        return T.concat([T.tanh(self.backbone(stacks)), states], axis=-1)

    def forward_windows(self, encoded: Tensor, ends: np.ndarray) -> Tensor:
        """LSTM over windows of ``sequence_length`` rows of ``encoded`` ending at ``ends``; (B, 3)."""
        L = self.spec.sequence_length
        ends = np.asarray(ends)
        if np.any(ends - (L - 1) < 0) or np.any(ends >= encoded.shape[0]):
            raise UsageError(f"every window needs {L} encoded ticks")
        state = self.lstm.initial_state(len(ends))
        for k in range(L):
            state = self.lstm((T.getitem(encoded, ends - (L - 1 - k)), state))
        return forward(self.head.layers, state[0])

    def predict(self, image: np.ndarray | None = None, state: np.ndarray | None = None) -> np.ndarray:
        """Eval-mode prediction for single inputs or batches (normalized units)."""
        self._check_inputs(image, state)
        single = (state is not None and np.ndim(state) == 1) or (image is not None and np.ndim(image) == 3)
        img = None if image is None else Tensor(np.asarray(image, dtype=float).reshape((-1,) + np.shape(image)[-3:]))
        st = None if state is None else Tensor(np.asarray(state, dtype=float).reshape(-1, STATE_DIM))
        if not self.spec.uses_image:
            img = None
        self.set_mode(False)
        with no_grad():
            out = self.forward_batch(img if self.spec.uses_image else None, st if self.spec.uses_state else None).data
        return out[0] if single else out

    def predict_sequence(self, stacks: np.ndarray, states: np.ndarray) -> np.ndarray:
        """RNN estimate at the last step of one full window (60 stacks + 60 states)."""
        L = self.spec.sequence_length
        if len(stacks) != L or len(states) != L:
            raise UsageError(f"sequence length must be {L}, got {len(stacks)} frames / {len(states)} states")
        self.set_mode(False)
        with no_grad():
            enc = self.encode_frames(Tensor(np.asarray(stacks, dtype=float)), Tensor(np.asarray(states, dtype=float)))
            return self.forward_windows(enc, np.array([L - 1])).data[0]

    # -- persistence -------------------------------------------------------------
    def state_dict(self) -> dict[str, np.ndarray]:
        out = {name: p.data for name, p in self.named_parameters()}
        out.update({name: b for name, b in self.named_buffers()})
        return out

    def load_state_dict(self, tensors: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        bufs = dict(self.named_buffers())
        missing = (set(own) | set(bufs)) - set(tensors)
        if missing:
            raise KeyError(f"checkpoint lacks {sorted(missing)[:5]}")
        for name, p in own.items():
            if tensors[name].shape != p.data.shape:
                raise ValueError(f"{name}: checkpoint shape {tensors[name].shape} != {p.data.shape}")
            p.data[...] = tensors[name]
        for name, b in bufs.items():
            b[...] = tensors[name]

    def describe(self) -> dict:
        params = self.named_parameters()
        return {"spec": self.spec.to_dict(), "seed": self.seed,
                "parameters": {name: list(p.shape) for name, p in params},
                "parameter_count": int(sum(p.data.size for p in self.parameters()))}

    def save(self, directory: str | Path, name: str = "model") -> Path:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        path = d / f"{name}.ckpt"
        checkpoint.save(path, self.state_dict())
        (d / f"{name}.json").write_text(json.dumps(self.describe(), indent=2, sort_keys=True))
        return path

    @classmethod
    def load(cls, directory: str | Path, name: str = "model") -> "ForceNet":
        d = Path(directory)
        meta = json.loads((d / f"{name}.json").read_text())
        net = cls(NetworkSpec.from_dict(meta["spec"]), meta["seed"])
        net.load_state_dict(checkpoint.load(d / f"{name}.ckpt"))
        return net


def build_network(spec: NetworkSpec | str, seed: int = 0, **kw) -> ForceNet:
    if isinstance(spec, str):
        spec = NetworkSpec(spec.upper(), **kw)
    return ForceNet(spec, seed)


def dense_parameter_count(net: ForceNet) -> int:
    """Weights and biases of dense layers only (batch-norm affine excluded)."""
    total = 0
    for name, p in net.named_parameters():
        parts = name.split(".")
        owner = net
        for part in parts[:-1]:
            owner = owner.children()[part]
        if owner.kind == "dense":
            total += p.data.size
    return total
