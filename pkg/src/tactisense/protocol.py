"""End-to-end protocol: generate data, train the four networks and the S
feature-removal twins, fit the physics baseline, evaluate, benchmark and
write the consolidated report.

Every stage writes into ``<stage>.partial`` and is renamed into place when
it completes, so a rerun into the same directory skips finished stages and
never edits them.
"""

from __future__ import annotations

import gc
import json
import logging
import shutil
import time
from pathlib import Path

import numpy as np

from .bench import bench_pipeline, emit_bench_report
from .evaluator import (METHODS, EvalReport, evaluate_predictions, export_trajectory, grad_cam,
                        contact_to_input, load_run, peak_hit_rate, predict_all, write_gradcam_svg, write_pgm,
                        write_trajectory_svg)
from .physics import PhysicsBaseline
from .sim.dataset import generate_dataset, load_dataset, read_contact_table
from .trainer import TrainConfig, prepare_splits, train, trim_range

log = logging.getLogger(__name__)

TREND_MARGIN = 0.05
GRADCAM_FRAMES = 40


class StageError(RuntimeError):
    def __init__(self, stage: str, exc: BaseException):
        super().__init__(f"stage {stage!r} failed: {type(exc).__name__}: {exc}")
        self.stage = stage


def _stage(root: Path, name: str, fn) -> Path:
    """Run ``fn(partial_dir)`` unless ``root/name`` already exists."""
    final = root / name
    if final.exists():
        log.info("stage %s already complete; reusing", name)
        return final
    partial = root / f"{name}.partial"
    if partial.exists():
        shutil.rmtree(partial)
    partial.parent.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    try:
        fn(partial)
    except Exception as exc:
        raise StageError(name, exc) from exc
    partial.rename(final)
    log.info("stage %s done in %.1f s", name, time.perf_counter() - t0)
    return final


def trend_checks(report: EvalReport, ablation: dict[str, float], margin: float = TREND_MARGIN) -> dict:
    """The four qualitative orderings, each as a strict inequality with a relative margin."""

    def worse(a: float, b: float) -> bool:
        return a > b * (1 + margin)

    mean = {m: report.cell(m, "mean") for m in report.methods}
    unseen = {m: report.cell(m, "unseen_material") for m in report.methods}
    checks = {
        "a_vision_mean_worst_of_V_S_VS": {
            "values": {k: mean[k] for k in ("V", "S", "VS")},
            "pass": worse(mean["V"], mean["S"]) and worse(mean["V"], mean["VS"])},
        "b_vision_unseen_material_worst": {
            "values": unseen,
            "pass": all(worse(unseen["V"], v) for m, v in unseen.items() if m != "V")},
        "c_state_force_removal_hurts_more": {
            "values": dict(ablation),
            "pass": worse(ablation["force"], ablation["kinematic"])},
        "d_physics_worse_than_VS_seen": {
            "values": {"physics": report.seen_mean("physics"), "VS": report.seen_mean("VS")},
            "pass": worse(report.seen_mean("physics"), report.seen_mean("VS"))},
    }
    return {"margin": margin, "checks": checks, "all_pass": all(c["pass"] for c in checks.values())}


def reproduce_paper_protocol(out: str | Path, seed: int = 7, preset: str = "desk", epochs: int | None = None,
                             bench_iters: int = 1000) -> dict:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "protocol.json").write_text(json.dumps(
        {"preset": preset, "seed": seed, "epochs": epochs, "bench_iters": bench_iters}, indent=2, sort_keys=True))
    data = _stage(out, "data", lambda d: generate_dataset(d, seed, preset))

    runs = out / "runs"
    cache: dict[bool, dict] = {}

    def need(frames: bool) -> dict:
        if frames not in cache:
            cache.clear()
            gc.collect()
            cache[frames] = load_dataset(data, load_frames=frames, splits=("train", "val"))
        return cache[frames]

    def cfg(variant, removal="none"):
        return TrainConfig(variant, preset=preset, epochs=epochs, seed=seed, feature_removal=removal)

    for removal in ("none", "kinematic", "force"):
        name = "S" if removal == "none" else f"S-{removal}"
        _stage(runs, name, lambda d, r=removal: train(cfg("S", r), need(False), d))

    vision = [v for v in ("V", "VS") if not (runs / v).exists()]
    if vision:
        # V and VS consume identical image and state arrays
        prepared = prepare_splits(need(True), "VS")
        for v in vision:
            _stage(runs, v, lambda d, v=v: train(cfg(v), need(True), d, prepared))
        del prepared
        gc.collect()
    _stage(runs, "RNN", lambda d: train(cfg("RNN"), need(True), d))
    cache.clear()

    def fit_physics(d):
        d.mkdir(parents=True)
        PhysicsBaseline.fit(load_dataset(data, load_frames=False, splits=("train",))["train"]).save(d)

    _stage(runs, "physics", fit_physics)

    eval_dir = _stage(out, "eval", lambda d: _evaluate(d, data, runs))
    bench_dir = _stage(out, "bench", lambda d: _bench(d, data, runs, bench_iters))

    summary = json.loads((eval_dir / "trends.json").read_text())
    summary["bench"] = json.loads((bench_dir / "bench.json").read_text())
    return summary


def _evaluate(d: Path, data: Path, runs: Path) -> None:
    d.mkdir(parents=True)
    test = load_dataset(data, load_frames=True, splits=("test_seen", "test_unseen"))
    clips = test["test_seen"] + test["test_unseen"]
    methods = {m: (PhysicsBaseline.load(runs / m) if m == "physics" else load_run(runs / m)) for m in METHODS}
    preds = predict_all(methods, clips)
    report = evaluate_predictions(preds, clips)
    report.write(d)
    evaluate_predictions(preds, clips, exclude_above=5.0).write(d / "exclude_above_5N")

    # S feature-removal study on the same clips
    abl_methods = {"none": methods["S"], "kinematic": load_run(runs / "S-kinematic"),
                   "force": load_run(runs / "S-force")}
    abl_preds = {"none": preds["S"], **predict_all({k: v for k, v in abl_methods.items() if k != "none"}, clips)}
    abl_report = evaluate_predictions(abl_preds, clips)
    abl_report.write(d / "ablation_S")
    ablation = {k: abl_report.cell(k, "mean") for k in abl_preds}

    # trajectory excerpts on the first seen clip, starting at the trimmed window
    ep = test["test_seen"][0]
    start = trim_range(len(ep)).start
    for m in METHODS:
        table = export_trajectory(ep.timestamps, preds[m][ep.name], ep.labels, 6.0, start,
                                  d / f"traj_{m}_{ep.name}.csv")
        write_trajectory_svg(table, d / f"traj_{m}_{ep.name}.svg", f"{m} on {ep.name}")

    gradcam = _gradcam(d, methods["VS"], ep, data)
    trends = trend_checks(report, ablation)
    trends["gradcam"] = gradcam
    (d / "trends.json").write_text(json.dumps(trends, indent=2, sort_keys=True))


def _gradcam(d: Path, predictor, ep, data: Path) -> dict:
    """Grad-CAM maps on in-contact frames of one clip plus the contact-localization hit rate."""
    contact = read_contact_table(data / ep.split / ep.name)
    window = trim_range(len(ep))
    ticks = [t for t in range(window.start, window.stop) if contact[t, 0] > 0 and np.isfinite(contact[t, 1:3]).all()]
    ticks = ticks[:GRADCAM_FRAMES]
    if not ticks:
        return {"frames": 0}
    clip = predictor.preparer(ep)
    h, w = ep.frames.shape[1:3]
    uv = contact_to_input(contact[ticks, 1:3], w, h)
    result = {"frames": len(ticks)}
    for k, axis in enumerate("xyz"):
        maps = grad_cam(predictor.net, clip.images[ticks], clip.states[ticks], axis)
        result[f"hit_rate_{axis}"] = peak_hit_rate(maps, uv)
        result[f"degenerate_{axis}"] = int(sum(m.degenerate for m in maps))
        write_pgm(d / f"gradcam_{axis}_{ep.name}_{ticks[0]:04d}.pgm", maps[0].heatmap)
        rgb = _input_rgb(clip.images[ticks[0]])
        write_gradcam_svg(d / f"gradcam_{axis}_{ep.name}_{ticks[0]:04d}.svg", rgb, maps[0].heatmap, uv[0])
    return result


def _input_rgb(image: np.ndarray) -> np.ndarray:
    from .preprocess import denormalize_image

    return np.clip(np.round(denormalize_image(image, layout="hwc") * 255), 0, 255).astype(np.uint8)


def _bench(d: Path, data: Path, runs: Path, iters: int) -> None:
    d.mkdir(parents=True)
    ep = load_dataset(data, load_frames=True, splits=("test_seen",))["test_seen"][0]
    results = [bench_pipeline("vs", load_run(runs / "VS"), ep, iters),
               bench_pipeline("rnn", load_run(runs / "RNN"), ep, iters, carry_state=False),
               bench_pipeline("rnn", load_run(runs / "RNN"), ep, iters, carry_state=True)]
    rows = emit_bench_report(results, d / "bench.csv")
    rates = {r["pipeline"]: r["rate_hz"] for r in rows}
    (d / "bench.json").write_text(json.dumps(
        {"rates_hz": rates, "vs_faster_than_both_rnn_modes": rates["vs"] > max(rates["rnn-window"], rates["rnn-carry"])},
        indent=2, sort_keys=True))


def protocol_artifacts(out: str | Path) -> list[Path]:
    """Files that must be bit-identical between two runs with the same seed."""
    out = Path(out)
    files = sorted(out.glob("runs/*/model.ckpt")) + sorted(out.glob("runs/physics/physics.json"))
    files += sorted(p for p in out.glob("eval/**/*.csv"))
    return files

