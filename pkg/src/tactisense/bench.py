"""Real-time loop benchmark: per-tick preprocessing + inference latency of
the single-frame vision+state pipeline against the recurrent pipeline.

Each iteration consumes one raw frame and one raw state and produces one
force estimate.  Buffers for image work are allocated once up front; the
network forward itself allocates its activations (numpy gives no
allocation-free matmul path).
"""

from __future__ import annotations

import csv
import os
import platform
import time
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .autograd.tensor import Tensor, no_grad
from .autograd.layers import forward
from .evaluator import NetPredictor
from .preprocess import IMAGENET, CropResize, FramePreprocessor, SpaceTimeSpec, StreamingMean, preset_geometry
from .state import Episode, remove_features

ITERATIONS = 1000
WARMUP = 50
RESOLUTION_LIMIT = 0.01  # clock resolution as a fraction of mean latency


def clock_resolution_ms() -> float:
    return time.get_clock_info("perf_counter").resolution * 1e3


def host_descriptor() -> str:
    import numpy

    return (f"{platform.node()} {platform.system()} {platform.release()} {platform.machine()} "
            f"cpus={os.cpu_count()} python={platform.python_version()} numpy={numpy.__version__}")


@dataclass
class BenchResult:
    pipeline: str
    iterations: int
    latency_ms: np.ndarray
    preprocess_ms: np.ndarray
    inference_ms: np.ndarray
    carry_state: bool = False
    clock_resolution_ms: float = field(default_factory=clock_resolution_ms)
    outputs: np.ndarray | None = None

    @property
    def mean_ms(self) -> float:
        return float(np.mean(self.latency_ms))

    @property
    def rate_hz(self) -> float:
        return 1000.0 / self.mean_ms

    @property
    def unreliable(self) -> bool:
        return self.clock_resolution_ms > RESOLUTION_LIMIT * self.mean_ms

    @property
    def label(self) -> str:
        if self.pipeline == "rnn":
            return "rnn-carry" if self.carry_state else "rnn-window"
        return self.pipeline


class VSPipeline:
    """Crop/resize/normalize the frame, normalize the state, single forward."""

    def __init__(self, predictor: NetPredictor, width: int, height: int):
        if predictor.net.variant != "VS":
            raise ValueError(f"the single-frame pipeline needs a VS model, got {predictor.net.variant}")
        self.p = predictor
        crop, out = preset_geometry(width, height)
        self.frame_pre = FramePreprocessor(width, height, crop, out, IMAGENET)
        self.image = np.empty((1, out, out, 3))
        self.state = np.empty((1, predictor.preparer.state_stats.mean.size))

    def preprocess(self, frame: np.ndarray, state: np.ndarray) -> None:
        self.frame_pre(frame, self.image[0])
        stats = self.p.preparer.state_stats
        np.subtract(state, stats.mean, out=self.state[0])
        self.state[0] /= stats.std
        if self.p.removal != "none":
            self.state[0] = remove_features(self.state[0], self.p.removal)

    def infer(self) -> np.ndarray:
        with no_grad():
            return self.p.net.forward_batch(Tensor(self.image), Tensor(self.state)).data[0]


class RNNPipeline:
    """Streaming mean image, space-time stack from a rolling buffer, LSTM.

    ``carry_state=False`` re-runs the LSTM over the last 60 encoded ticks on
    every tick; ``True`` advances a persistent hidden state one step.
    """

    def __init__(self, predictor: NetPredictor, width: int, height: int, carry_state: bool = False,
                 spacetime: SpaceTimeSpec = SpaceTimeSpec()):
        if predictor.net.variant != "RNN":
            raise ValueError(f"the recurrent pipeline needs an RNN model, got {predictor.net.variant}")
        self.p = predictor
        self.carry_state = carry_state
        self.spacetime = spacetime
        crop, out = preset_geometry(width, height)
        self.mean = StreamingMean(spacetime.alpha, (height, width, 3))
        self.centered = np.empty((height, width, 3))
        self.resize = CropResize(width, height, crop, out, 3)
        self.gray = np.zeros((spacetime.history + 1, out, out))  # ring buffer of preprocessed frames
        self.stack = np.empty((1, out, out, spacetime.depth))
        self.state = np.empty((1, predictor.preparer.state_stats.mean.size))
        self.L = predictor.net.spec.sequence_length
        self.encoded: deque[np.ndarray] = deque(maxlen=self.L)
        self.hidden = None
        self.tick = 0

    def preprocess(self, frame: np.ndarray, state: np.ndarray) -> None:
        m = self.mean.update(frame)
        np.subtract(frame, m, out=self.centered)
        slot = self.tick % len(self.gray)
        np.matmul(self.resize(self.centered), _GRAY_255, out=self.gray[slot])
        for k in range(self.spacetime.depth):
            self.stack[0, :, :, k] = self.gray[(slot - k * self.spacetime.spacing) % len(self.gray)]
        stats = self.p.preparer.state_stats
        np.subtract(state, stats.mean, out=self.state[0])
        self.state[0] /= stats.std
        if self.p.removal != "none":
            self.state[0] = remove_features(self.state[0], self.p.removal)
        self.tick += 1

    def infer(self) -> np.ndarray:
        net = self.p.net
        with no_grad():
            enc = net.encode_frames(Tensor(self.stack), Tensor(self.state))
            self.encoded.append(enc.data)
            if self.carry_state:
                if self.hidden is None:
                    self.hidden = net.lstm.initial_state(1)
                self.hidden = net.lstm((enc, self.hidden))
                return forward(net.head.layers, self.hidden[0]).data[0]
            seq = list(self.encoded)
            state = net.lstm.initial_state(1)
            for row in seq:
                state = net.lstm((Tensor(row), state))
            return forward(net.head.layers, state[0]).data[0]


_GRAY_255 = np.array([0.299, 0.587, 0.114]) / 255.0


def bench_pipeline(pipeline: str, predictor: NetPredictor, episode: Episode, iterations: int = ITERATIONS,
                   warmup: int = WARMUP, carry_state: bool = False) -> BenchResult:
    """Time ``iterations`` ticks (after ``warmup`` untimed ticks), cycling through the clip."""
    if iterations < 1 or warmup < 0:
        raise ValueError("iterations must be >= 1 and warmup >= 0")
    if episode.frames is None:
        raise ValueError(f"clip {episode.name!r} has no frames to stream")
    h, w = episode.frames.shape[1:3]
    if pipeline == "vs":
        pipe = VSPipeline(predictor, w, h)
    elif pipeline == "rnn":
        pipe = RNNPipeline(predictor, w, h, carry_state)
    else:
        raise ValueError(f"unknown pipeline {pipeline!r}; expected 'vs' or 'rnn'")
    predictor.net.set_mode(False)
    n = len(episode)
    total = warmup + iterations
    lat = np.empty(iterations)
    pre = np.empty(iterations)
    inf = np.empty(iterations)
    outputs = np.empty((iterations, 3))
    clock = time.perf_counter
    for i in range(total):
        frame, state = episode.frames[i % n], episode.states[i % n]
        t0 = clock()
        pipe.preprocess(frame, state)
        t1 = clock()
        out = pipe.infer()
        t2 = clock()
        if i >= warmup:
            k = i - warmup
            pre[k] = (t1 - t0) * 1e3
            inf[k] = (t2 - t1) * 1e3
            lat[k] = (t2 - t0) * 1e3
            outputs[k] = out
    return BenchResult(pipeline, iterations, lat, pre, inf, carry_state and pipeline == "rnn", outputs=outputs)


BENCH_COLUMNS = ("pipeline", "iterations", "mean_ms", "p50_ms", "p99_ms", "rate_hz", "preprocess_ms",
                 "inference_ms", "clock_resolution_ms", "unreliable", "host")


def emit_bench_report(results: Sequence[BenchResult], path: str | Path | None = None) -> list[dict]:
    """One row per result with latency statistics and the host descriptor."""
    if not results:
        raise ValueError("no benchmark results to report")
    host = host_descriptor()
    rows = []
    for r in results:
        rows.append({
            "pipeline": r.label,
            "iterations": r.iterations,
            "mean_ms": r.mean_ms,
            "p50_ms": float(np.percentile(r.latency_ms, 50)),
            "p99_ms": float(np.percentile(r.latency_ms, 99)),
            "rate_hz": r.rate_hz,
            "preprocess_ms": float(np.mean(r.preprocess_ms)),
            "inference_ms": float(np.mean(r.inference_ms)),
            "clock_resolution_ms": r.clock_resolution_ms,
            "unreliable": r.unreliable,
            "host": host,
        })
    if path is not None:
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=BENCH_COLUMNS)
            w.writeheader()
            for row in rows:
                w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    return rows


def read_bench_report(path: str | Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
