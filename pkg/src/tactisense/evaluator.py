"""Force-error metrics, per-condition RMSE reports, trajectory exports and
Grad-CAM heatmaps.

All errors are in newtons.  Every method is scored on the same trimmed
timesteps of each test clip; a cell is the per-clip mean-over-axes RMSE
averaged over that condition's clips.
"""

from __future__ import annotations

import csv
import json
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Protocol, Sequence

import numpy as np

from .autograd import tensor as T
from .autograd.tensor import Tensor
from .autograd.layers import forward
from .nets import ForceNet, UsageError
from .preprocess import _lerp_table, preset_geometry
from .state import RATE_HZ, Episode, NormStats
from .trainer import TRIM_HEAD, TRIM_TAIL, DataPreparer, predict_clip, trim_range

log = logging.getLogger(__name__)

CONFIG_COLUMNS = ("L3", "L2", "L1", "C", "R1", "R2", "R3", "Z1", "Z2", "Z3")
UNSEEN_COLUMNS = ("unseen_material", "unseen_tool")
CONDITIONS = CONFIG_COLUMNS + UNSEEN_COLUMNS
REPORT_COLUMNS = CONFIG_COLUMNS + ("mean",) + UNSEEN_COLUMNS
SEEN_CONFIGS = ("C", "L2", "R2", "Z2")
METHODS = ("S", "V", "VS", "RNN", "physics")
METHOD_LABELS = {"S": "State-only", "V": "Vision-only", "VS": "Vision+State", "RNN": "Vision+State RNN",
                 "physics": "Physics-based"}
ABSENT = "absent"
AXES = ("x", "y", "z")


class EvaluationError(ValueError):
    pass


class Predictor(Protocol):
    def predict_clip(self, ep: Episode) -> np.ndarray: ...


# -- metrics ---------------------------------------------------------------------
def rmse(pred: np.ndarray, label: np.ndarray) -> tuple[np.ndarray, float]:
    """Per-axis RMSE (3,) and its arithmetic mean."""
    pred = np.asarray(pred, dtype=float).reshape(-1, 3)
    label = np.asarray(label, dtype=float).reshape(-1, 3)
    if len(pred) == 0:
        raise EvaluationError("cannot compute RMSE of an empty sequence")
    if pred.shape != label.shape:
        raise EvaluationError(f"prediction shape {pred.shape} != label shape {label.shape}")
    per_axis = np.sqrt(np.mean((pred - label) ** 2, axis=0))
    return per_axis, float(per_axis.mean())


def compression_mask(labels: np.ndarray, limit: float | None) -> np.ndarray:
    """True where the tick is kept: compression (downward push, -f_z) not above ``limit`` N."""
    labels = np.asarray(labels)
    if limit is None:
        return np.ones(len(labels), dtype=bool)
    return -labels[:, 2] <= limit


# -- report ------------------------------------------------------------------------
@dataclass
class EvalReport:
    methods: list[str]
    per_axis: dict[str, dict[str, np.ndarray | None]]  # method -> condition -> (3,)
    clip_counts: dict[str, int]
    exclude_above: float | None = None
    notes: dict = field(default_factory=dict)

    def cell(self, method: str, condition: str) -> float | None:
        if condition == "mean":
            vals = [self.cell(method, c) for c in CONFIG_COLUMNS]
            vals = [v for v in vals if v is not None]
            return float(np.mean(vals)) if vals else None
        v = self.per_axis[method].get(condition)
        return None if v is None else float(np.mean(v))

    def seen_mean(self, method: str) -> float | None:
        vals = [self.cell(method, c) for c in SEEN_CONFIGS]
        vals = [v for v in vals if v is not None]
        return float(np.mean(vals)) if vals else None

    def table(self) -> list[list]:
        return [[m] + [self.cell(m, c) for c in REPORT_COLUMNS] for m in self.methods]

    def write(self, directory: str | Path) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        with open(d / "report.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["method", *REPORT_COLUMNS])
            for row in self.table():
                w.writerow([row[0]] + [ABSENT if v is None else repr(v) for v in row[1:]])
        with open(d / "per_axis.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["method", "condition", "rmse_x", "rmse_y", "rmse_z", "mean", "clips"])
            for m in self.methods:
                for c in CONDITIONS:
                    v = self.per_axis[m].get(c)
                    vals = [ABSENT] * 4 if v is None else [repr(float(a)) for a in v] + [repr(float(np.mean(v)))]
                    w.writerow([m, c, *vals, self.clip_counts.get(c, 0)])
        meta = {"exclude_above_newtons": self.exclude_above, "clip_counts": self.clip_counts,
                "trim": [TRIM_HEAD, TRIM_TAIL], "units": "N", **self.notes}
        (d / "report.json").write_text(json.dumps(meta, indent=2, sort_keys=True))


def read_report(path: str | Path) -> dict[str, dict[str, float | None]]:
    """report.csv -> {method: {column: value or None}}."""
    out = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            m = row.pop("method")
            out[m] = {k: (None if v == ABSENT else float(v)) for k, v in row.items()}
    return out


def merge_reports(paths: Sequence[str | Path], out: str | Path) -> dict[str, dict[str, float | None]]:
    """Stack the rows of several report.csv files into one table; later files win on duplicate methods."""
    merged: dict[str, dict[str, float | None]] = {}
    for p in paths:
        p = Path(p)
        merged.update(read_report(p / "report.csv" if p.is_dir() else p))
    order = [m for m in METHODS if m in merged] + [m for m in merged if m not in METHODS]
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", *REPORT_COLUMNS])
        for m in order:
            w.writerow([m] + [ABSENT if merged[m].get(c) is None else repr(merged[m][c]) for c in REPORT_COLUMNS])
    return merged


def evaluate_predictions(predictions: Mapping[str, Mapping[str, np.ndarray]], clips: Sequence[Episode],
                         exclude_above: float | None = None) -> EvalReport:
    """Build a report from stored full-length predictions {method: {clip name: (T, 3)}}.

    Each clip is trimmed, then scored only where every method has an
    estimate (and the compression filter keeps the tick), so all methods
    see identical timesteps.
    """
    methods = list(predictions)
    sums: dict[str, dict[str, list[np.ndarray]]] = {m: {} for m in methods}
    counts: dict[str, int] = {}
    dropped = 0
    for ep in clips:
        cond = ep.config
        if cond not in CONDITIONS:
            raise EvaluationError(f"clip {ep.name!r} has unknown condition {cond!r}")
        window = trim_range(len(ep))
        labels = ep.labels[window]
        keep = compression_mask(labels, exclude_above)
        preds = {m: np.asarray(predictions[m][ep.name])[window] for m in methods}
        for p in preds.values():
            keep &= np.isfinite(p).all(axis=1)
        dropped += int((~keep).sum())
        if not keep.any():
            log.warning("clip %s has no scorable ticks", ep.name)
            continue
        counts[cond] = counts.get(cond, 0) + 1
        for m in methods:
            sums[m].setdefault(cond, []).append(rmse(preds[m][keep], labels[keep])[0])
    per_axis = {m: {c: (np.mean(sums[m][c], axis=0) if c in sums[m] else None) for c in CONDITIONS}
                for m in methods}
    for c in CONDITIONS:
        if c not in counts:
            log.warning("condition %s has no test clips; marked absent", c)
    return EvalReport(methods, per_axis, counts, exclude_above, {"dropped_ticks": dropped})


def predict_all(methods: Mapping[str, Predictor], clips: Sequence[Episode]) -> dict[str, dict[str, np.ndarray]]:
    return {m: {ep.name: p.predict_clip(ep) for ep in clips} for m, p in methods.items()}


def evaluate_all(methods: Mapping[str, Predictor], clips: Sequence[Episode],
                 exclude_above: float | None = None) -> tuple[EvalReport, dict]:
    preds = predict_all(methods, clips)
    return evaluate_predictions(preds, clips, exclude_above), preds


# -- trained-run loading -------------------------------------------------------------
class NetPredictor:
    """A trained network plus its normalization stats and feature-removal mask."""

    def __init__(self, net: ForceNet, state_stats: NormStats, force_stats: NormStats, removal: str = "none"):
        self.net = net
        self.force_stats = force_stats
        self.removal = removal
        self.preparer = DataPreparer(state_stats, force_stats, net.variant, removal)

    @property
    def kind(self) -> str:
        return self.net.variant

    def predict_clip(self, ep: Episode) -> np.ndarray:
        return self.force_stats.denormalize(predict_clip(self.net, self.preparer(ep)))


def load_run(run_dir: str | Path) -> NetPredictor:
    d = Path(run_dir)
    for name in ("config.json", "stats.json", "model.json", "model.ckpt"):
        if not (d / name).exists():
            raise FileNotFoundError(f"run directory {d} lacks {name}")
    config = json.loads((d / "config.json").read_text())
    stats = json.loads((d / "stats.json").read_text())
    net = ForceNet.load(d)
    return NetPredictor(net, NormStats.from_dict(stats["state"]), NormStats.from_dict(stats["force"]),
                        config.get("feature_removal", "none"))


# -- trajectories ----------------------------------------------------------------------
TRAJ_COLUMNS = ("t", "fx_pred", "fy_pred", "fz_pred", "fx_gt", "fy_gt", "fz_gt")


def export_trajectory(times: np.ndarray, pred: np.ndarray, labels: np.ndarray, window: float = 6.0,
                      start: int = 0, path: str | Path | None = None, rate_hz: float = RATE_HZ) -> np.ndarray:
    """Aligned (rows, 7) excerpt of predictions and labels; windows past the clip end are clamped."""
    if window <= 0:
        raise ValueError("trajectory window must be positive")
    n = len(times)
    rows = int(round(window * rate_hz))
    if start < 0 or start >= n:
        raise ValueError(f"start tick {start} outside clip of {n} ticks")
    if start + rows > n:
        warnings.warn(f"{window} s window from tick {start} exceeds the clip; clamped to {n - start} rows",
                      RuntimeWarning, stacklevel=2)
        rows = n - start
    sl = slice(start, start + rows)
    table = np.column_stack([np.asarray(times)[sl], np.asarray(pred)[sl], np.asarray(labels)[sl]])
    if path is not None:
        np.savetxt(path, table, delimiter=",", header=",".join(TRAJ_COLUMNS), comments="", fmt="%.17g")
    return table


def write_trajectory_svg(table: np.ndarray, path: str | Path, title: str = "") -> None:
    """Three stacked panels (x, y, z) of predicted vs ground-truth force."""
    w, h, pad = 640, 420, 40
    panel = (h - 2 * pad) / 3
    t = table[:, 0]
    t0, t1 = float(t.min()), float(t.max()) if len(t) > 1 else float(t.min()) + 1
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="11">',
             f'<text x="{pad}" y="20">{title}</text>']
    for k, axis in enumerate(AXES):
        series = table[:, [1 + k, 4 + k]]
        finite = series[np.isfinite(series)]
        lo, hi = (float(finite.min()), float(finite.max())) if finite.size else (0.0, 1.0)
        if hi - lo < 1e-9:
            lo, hi = lo - 0.5, hi + 0.5
        top = pad + k * panel
        parts.append(f'<text x="4" y="{top + panel / 2:.1f}">f{axis} (N)</text>')
        for col, colour in ((4 + k, "#222222"), (1 + k, "#d0402a")):
            pts = []
            for ti, v in zip(t, table[:, col]):
                if np.isfinite(v):
                    x = pad + (ti - t0) / (t1 - t0 + 1e-12) * (w - 2 * pad)
                    y = top + panel - 4 - (v - lo) / (hi - lo) * (panel - 8)
                    pts.append(f"{x:.1f},{y:.1f}")
            parts.append(f'<polyline fill="none" stroke="{colour}" stroke-width="1.2" points="{" ".join(pts)}"/>')
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts))


# -- Grad-CAM ---------------------------------------------------------------------------
@dataclass
class GradCamMap:
    axis: str
    heatmap: np.ndarray  # (H, W) in [0, 1]
    degenerate: bool

    @property
    def peak(self) -> tuple[int, int]:
        """(x, y) pixel of the maximum."""
        r, c = np.unravel_index(int(np.argmax(self.heatmap)), self.heatmap.shape)
        return int(c), int(r)


def upsample_bilinear(m: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    ri0, ri1, rw0, rw1 = _lerp_table(m.shape[0], out_h)
    ci0, ci1, cw0, cw1 = _lerp_table(m.shape[1], out_w)
    rows = m[ri0] * rw0[:, None] + m[ri1] * rw1[:, None]
    return rows[:, ci0] * cw0 + rows[:, ci1] * cw1


def grad_cam(net: ForceNet, image: np.ndarray, state: np.ndarray | None = None, axis: int | str = 0) -> list[GradCamMap]:
    """Grad-CAM of force component ``axis`` w.r.t. the last residual block output.

    ``image`` is one normalized (H, W, 3) input or a batch; returns one map per image.
    """
    if net.variant not in ("V", "VS"):
        raise UsageError(f"Grad-CAM needs a single-frame convolutional model (V or VS), not {net.variant}")
    k = AXES.index(axis.lower()) if isinstance(axis, str) else int(axis)
    if k not in (0, 1, 2):
        raise ValueError(f"force axis must be 0, 1 or 2, got {axis}")
    image = np.asarray(image, dtype=float)
    single = image.ndim == 3
    image = image.reshape((-1,) + image.shape[-3:])
    if net.variant == "VS":
        if state is None:
            raise UsageError("the vision+state model needs a state for Grad-CAM")
        state = np.asarray(state, dtype=float).reshape(len(image), -1)
    net.set_mode(False)
    with T.no_grad():
        feats = net.backbone.feature_maps(Tensor(image)).data
    A = Tensor(feats, requires_grad=True)
    pooled = T.global_avg_pool(A)
    if net.variant == "V":
        out = forward(net.head.layers, pooled)
    else:
        out = forward(net.head.layers, T.concat([net.embed(pooled), Tensor(state)], axis=-1))
    # eval-mode layers act per sample, so summing over the batch keeps maps independent
    T.tsum(T.getitem(out, (slice(None), k))).backward()
    weights = A.grad.mean(axis=(1, 2))  # (N, C)
    cams = np.maximum(np.einsum("nhwc,nc->nhw", feats, weights), 0.0)
    maps = []
    for cam in cams:
        lo, hi = cam.min(), cam.max()
        degenerate = not hi > lo
        norm = np.zeros_like(cam) if degenerate else (cam - lo) / (hi - lo)
        if degenerate:
            log.warning("degenerate Grad-CAM map (constant activation) for axis %s", AXES[k])
        maps.append(GradCamMap(AXES[k], upsample_bilinear(norm, image.shape[1], image.shape[2]), degenerate))
    return maps[:1] if single else maps


def contact_to_input(contact_uv: np.ndarray, width: int, height: int) -> np.ndarray:
    """Map full-frame contact pixels to network-input pixel coordinates."""
    crop, out = preset_geometry(width, height)
    x0, y0 = (width - crop) // 2, (height - crop) // 2
    uv = np.asarray(contact_uv, dtype=float)
    return (uv - [x0, y0] + 0.5) * (out / crop) - 0.5


def peak_hit_rate(maps: Sequence[GradCamMap], contacts: np.ndarray, radius: float = 16.0) -> float:
    """Fraction of maps whose peak lies within ``radius`` input pixels of the contact point."""
    contacts = np.asarray(contacts, dtype=float)
    if len(maps) == 0:
        raise EvaluationError("no Grad-CAM maps to score")
    hits = [np.hypot(*(np.asarray(m.peak) - c)) <= radius for m, c in zip(maps, contacts)]
    return float(np.mean(hits))


def write_pgm(path: str | Path, heatmap: np.ndarray) -> None:
    """Binary 8-bit PGM of a [0, 1] map."""
    img = np.clip(np.round(np.asarray(heatmap) * 255), 0, 255).astype(np.uint8)
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode())
        fh.write(img.tobytes())


def write_gradcam_svg(path: str | Path, image_rgb: np.ndarray, heatmap: np.ndarray, contact=None) -> None:
    """Overlay of a heatmap on the input frame as an SVG with embedded PNG layers."""
    import base64
    import io

    from PIL import Image

    def png(arr, mode):
        buf = io.BytesIO()
        Image.fromarray(arr, mode).save(buf, format="PNG")
        return base64.b64encode(buf.getvalue()).decode()

    h, w = heatmap.shape
    heat = np.zeros((h, w, 4), dtype=np.uint8)
    heat[..., 0] = 255
    heat[..., 1] = np.round(200 * (1 - heatmap)).astype(np.uint8)
    heat[..., 3] = np.round(160 * heatmap).astype(np.uint8)
    scale = 4
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{w * scale}" height="{h * scale}">',
             f'<image width="{w * scale}" height="{h * scale}" style="image-rendering:pixelated" '
             f'href="data:image/png;base64,{png(np.asarray(image_rgb, dtype=np.uint8), "RGB")}"/>',
             f'<image width="{w * scale}" height="{h * scale}" style="image-rendering:pixelated" '
             f'href="data:image/png;base64,{png(heat, "RGBA")}"/>']
    if contact is not None and np.all(np.isfinite(contact)):
        cx, cy = (np.asarray(contact) + 0.5) * scale
        parts.append(f'<circle cx="{cx:.1f}" cy="{cy:.1f}" r="6" fill="none" stroke="#00ff66" stroke-width="2"/>')
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts))
