"""Command-line entry point.

Exit codes: 0 success, 1 runtime failure, 2 usage error, 3 missing data
directory.  Failures print one JSON line on stderr:
``{"error": kind, "code": n, "message": ...}``.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

log = logging.getLogger("tactisense")

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_NO_DATA = 0, 1, 2, 3


class CliError(Exception):
    def __init__(self, code: int, kind: str, message: str):
        super().__init__(message)
        self.code, self.kind = code, kind


def _default_seed() -> int:
    raw = os.environ.get("TACTISENSE_SEED", "7")
    try:
        return int(raw)
    except ValueError:
        raise CliError(EXIT_USAGE, "usage", f"TACTISENSE_SEED must be an integer, got {raw!r}") from None


def _data_dir(path: str | None) -> Path:
    if path is None:
        raise CliError(EXIT_NO_DATA, "missing-data", "no --data directory given")
    p = Path(path)
    if not (p / "dataset.json").is_file():
        raise CliError(EXIT_NO_DATA, "missing-data", f"{p} is not a generated dataset (no dataset.json)")
    return p


def _fresh_dir(path: str | Path) -> Path:
    """Output directories are append-only: refuse to write into a non-empty one."""
    p = Path(path)
    if p.exists() and any(p.iterdir()):
        raise CliError(EXIT_FAIL, "exists", f"output directory {p} already exists and is not empty")
    p.mkdir(parents=True, exist_ok=True)
    return p


def _save_run_config(out: Path, args: argparse.Namespace, **resolved) -> None:
    cfg = {k: v for k, v in vars(args).items() if k != "func"}
    cfg.update(resolved)
    (out / "run.json").write_text(json.dumps(cfg, indent=2, sort_keys=True, default=str))


# -- subcommands ---------------------------------------------------------------
def cmd_gen(args) -> int:
    from .sim.dataset import generate_dataset

    out = _fresh_dir(args.out)
    manifest = generate_dataset(out, args.seed, args.preset, args.clip_seconds, args.corruption, args.workers)
    print(json.dumps({"out": str(out), "examples": manifest["examples"]}))
    return EXIT_OK


def cmd_train(args) -> int:
    from .physics import PhysicsBaseline
    from .sim.dataset import load_dataset
    from .trainer import TrainConfig, train

    data = _data_dir(args.data)
    if args.variant == "physics":
        out = _fresh_dir(args.out)
        _save_run_config(out, args, data=str(data))
        PhysicsBaseline.fit(load_dataset(data, load_frames=False, splits=("train",))["train"],
                            args.cutoff_hz).save(out)
        print(json.dumps({"out": str(out), "variant": "physics"}))
        return EXIT_OK
    config = TrainConfig(args.variant.upper(), args.preset, args.epochs, args.lr, seed=args.seed,
                         feature_removal=args.ablate, freeze_stem=args.freeze_stem,
                         max_train_examples=args.max_train_examples)
    out = _fresh_dir(args.out)
    _save_run_config(out, args, data=str(data), resolved=config.to_dict())
    dataset = load_dataset(data, load_frames=config.variant != "S", splits=("train", "val"))
    _, record, _ = train(config, dataset, out)
    print(json.dumps({"out": str(out), "best_epoch": record.best_epoch,
                      "best_val_rmse": record.val_rmse[record.best_epoch - 1]}))
    return EXIT_OK


def cmd_ablate(args) -> int:
    from .sim.dataset import load_dataset
    from .trainer import TrainConfig, run_ablation

    data = _data_dir(args.data)
    base = TrainConfig(args.variant.upper(), args.preset, args.epochs, seed=args.seed)
    out = _fresh_dir(args.out)
    _save_run_config(out, args, data=str(data), resolved=base.to_dict())
    dataset = load_dataset(data, load_frames=base.variant != "S", splits=("train", "val"))
    results = run_ablation(base, dataset, out)
    print(json.dumps({k: rec.val_rmse[rec.best_epoch - 1] for k, (_, rec, _) in results.items()}))
    return EXIT_OK


def _method_for(run: Path):
    from .evaluator import load_run
    from .physics import PhysicsBaseline

    if (run / "physics.json").exists():
        return "physics", PhysicsBaseline.load(run)
    pred = load_run(run)
    name = pred.kind if pred.removal == "none" else f"{pred.kind}-{pred.removal}"
    return name, pred


def cmd_eval(args) -> int:
    from .evaluator import evaluate_all
    from .sim.dataset import load_dataset

    data = _data_dir(args.data)
    methods = {}
    for r in args.run:
        run = Path(r)
        if not run.is_dir():
            raise CliError(EXIT_USAGE, "usage", f"run directory {run} does not exist")
        name, pred = _method_for(run)
        methods[name] = pred
    out = _fresh_dir(args.out or Path(args.run[0]) / "eval")
    test = load_dataset(data, load_frames=True, splits=("test_seen", "test_unseen"))
    report, _ = evaluate_all(methods, test["test_seen"] + test["test_unseen"], args.exclude_above_newtons)
    report.write(out)
    print(json.dumps({"out": str(out), "mean": {m: report.cell(m, "mean") for m in methods}}))
    return EXIT_OK


def cmd_bench(args) -> int:
    from .bench import bench_pipeline, emit_bench_report
    from .evaluator import load_run
    from .sim.dataset import load_dataset

    run = Path(args.run)
    if args.data is None and (run / "run.json").exists():
        args.data = json.loads((run / "run.json").read_text()).get("data")
    data = _data_dir(args.data)
    ep = load_dataset(data, load_frames=True, splits=("test_seen",))["test_seen"][0]
    result = bench_pipeline(args.pipeline, load_run(run), ep, args.iters, args.warmup, args.carry_state)
    out = _fresh_dir(args.out or run / f"bench_{result.label}")
    rows = emit_bench_report([result], out / "bench.csv")
    print(json.dumps(rows[0]))
    return EXIT_OK


def cmd_gradcam(args) -> int:
    import numpy as np

    from .evaluator import contact_to_input, grad_cam, load_run, write_gradcam_svg, write_pgm
    from .protocol import _input_rgb
    from .sim.dataset import load_dataset, read_contact_table

    data = _data_dir(args.data)
    pred = load_run(args.run)
    if pred.net.variant not in ("V", "VS"):
        raise CliError(EXIT_USAGE, "usage", f"Grad-CAM needs a V or VS run, got {pred.net.variant}")
    eps = load_dataset(data, load_frames=True, splits=(args.split,))[args.split]
    ep = next((e for e in eps if e.name == args.clip), None) if args.clip else eps[0]
    if ep is None:
        raise CliError(EXIT_USAGE, "usage", f"clip {args.clip!r} not found in split {args.split}")
    if not 0 <= args.tick < len(ep):
        raise CliError(EXIT_USAGE, "usage", f"tick {args.tick} outside clip of {len(ep)} ticks")
    out = _fresh_dir(args.out or Path(args.run) / f"gradcam_{ep.name}_{args.tick:04d}")
    clip = pred.preparer(ep)
    contact = read_contact_table(data / ep.split / ep.name)[args.tick]
    h, w = ep.frames.shape[1:3]
    uv = contact_to_input(contact[1:3], w, h) if contact[0] > 0 else np.array([np.nan, np.nan])
    for axis in "xyz":
        m = grad_cam(pred.net, clip.images[args.tick], clip.states[args.tick], axis)[0]
        write_pgm(out / f"gradcam_{axis}.pgm", m.heatmap)
        write_gradcam_svg(out / f"gradcam_{axis}.svg", _input_rgb(clip.images[args.tick]), m.heatmap, uv)
    print(json.dumps({"out": str(out)}))
    return EXIT_OK


def cmd_report(args) -> int:
    from .evaluator import merge_reports

    paths = []
    for r in args.runs:
        p = Path(r)
        for candidate in (p / "report.csv", p / "eval" / "report.csv", p):
            if candidate.is_file():
                paths.append(candidate)
                break
        else:
            raise CliError(EXIT_NO_DATA, "missing-data", f"no report.csv under {p}")
    out = Path(args.out)
    if out.exists():
        raise CliError(EXIT_FAIL, "exists", f"{out} already exists")
    out.parent.mkdir(parents=True, exist_ok=True)
    merged = merge_reports(paths, out)
    print(json.dumps({"out": str(out), "methods": list(merged)}))
    return EXIT_OK


def cmd_reproduce(args) -> int:
    from .protocol import reproduce_paper_protocol

    summary = reproduce_paper_protocol(args.out, args.seed, args.preset, args.epochs, args.bench_iters)
    print(json.dumps({"out": str(args.out), "trends_pass": summary["all_pass"],
                      "rates_hz": summary["bench"]["rates_hz"]}))
    return EXIT_OK


# -- parser ----------------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    seed = _default_seed()
    p = argparse.ArgumentParser(prog="tactisense", description="Vision and state based tool-tissue force estimation.")
    p.add_argument("-q", "--quiet", action="store_true", help="only log warnings")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="simulate a dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int, default=seed)
    g.add_argument("--preset", choices=("paper", "desk"), default="desk")
    g.add_argument("--clip-seconds", type=float, default=None)
    g.add_argument("--corruption", choices=("ideal", "friction_only", "default"), default="default")
    g.add_argument("--workers", type=int, default=None, help="defaults to TACTISENSE_THREADS or 1")
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="train one model")
    t.add_argument("--variant", choices=("s", "v", "vs", "rnn", "physics"), required=True)
    t.add_argument("--preset", choices=("paper", "desk"), default="desk")
    t.add_argument("--ablate", choices=("none", "kin", "force"), default="none")
    t.add_argument("--seed", type=int, default=seed)
    t.add_argument("--data")
    t.add_argument("--out", required=True)
    t.add_argument("--epochs", type=int, default=None)
    t.add_argument("--lr", type=float, default=None)
    t.add_argument("--max-train-examples", type=int, default=None)
    t.add_argument("--freeze-stem", action="store_true")
    t.add_argument("--cutoff-hz", type=float, default=3.0, help="physics input filter cutoff")
    t.set_defaults(func=cmd_train)

    a = sub.add_parser("ablate", help="train the none / kinematic / force feature-removal triple")
    a.add_argument("--variant", choices=("s", "vs", "rnn"), default="s")
    a.add_argument("--preset", choices=("paper", "desk"), default="desk")
    a.add_argument("--seed", type=int, default=seed)
    a.add_argument("--data")
    a.add_argument("--out", required=True)
    a.add_argument("--epochs", type=int, default=None)
    a.set_defaults(func=cmd_ablate)

    e = sub.add_parser("eval", help="score runs on the test splits")
    e.add_argument("--run", action="append", required=True, help="run directory (repeatable)")
    e.add_argument("--data")
    e.add_argument("--out")
    e.add_argument("--exclude-above-newtons", type=float, default=None)
    e.set_defaults(func=cmd_eval)

    b = sub.add_parser("bench", help="loop-rate benchmark")
    b.add_argument("--run", required=True)
    b.add_argument("--pipeline", choices=("vs", "rnn"), required=True)
    b.add_argument("--iters", type=int, default=1000)
    b.add_argument("--warmup", type=int, default=50)
    b.add_argument("--carry-state", action="store_true")
    b.add_argument("--data")
    b.add_argument("--out")
    b.set_defaults(func=cmd_bench)

    c = sub.add_parser("gradcam", help="Grad-CAM maps for one frame")
    c.add_argument("--run", required=True)
    c.add_argument("--data")
    c.add_argument("--split", default="test_seen")
    c.add_argument("--clip")
    c.add_argument("--tick", type=int, default=100)
    c.add_argument("--out")
    c.set_defaults(func=cmd_gradcam)

    r = sub.add_parser("report", help="merge report.csv files into one table")
    r.add_argument("--runs", nargs="+", required=True)
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_report)

    x = sub.add_parser("reproduce", aliases=["reproduce_paper_protocol"], help="full protocol: data, five methods, evaluation, benchmark")
    x.add_argument("--preset", choices=("paper", "desk"), default="desk")
    x.add_argument("--seed", type=int, default=seed)
    x.add_argument("--out", required=True)
    x.add_argument("--epochs", type=int, default=None)
    x.add_argument("--bench-iters", type=int, default=1000)
    x.set_defaults(func=cmd_reproduce)
    return p


def _fail(code: int, kind: str, message: str) -> int:
    print(json.dumps({"error": kind, "code": code, "message": " ".join(str(message).split())}), file=sys.stderr)
    return code


def main(argv: list[str] | None = None) -> int:
    try:
        parser = build_parser()
    except CliError as exc:
        return _fail(exc.code, exc.kind, str(exc))
    args = parser.parse_args(argv)  # usage errors exit 2 here
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    from .nets import UsageError
    from .protocol import StageError

    try:
        return args.func(args)
    except CliError as exc:
        return _fail(exc.code, exc.kind, str(exc))
    except FileNotFoundError as exc:
        return _fail(EXIT_NO_DATA, "missing-data", str(exc))
    except (UsageError, ValueError) as exc:
        return _fail(EXIT_USAGE, "usage", str(exc))
    except StageError as exc:
        return _fail(EXIT_FAIL, f"stage:{exc.stage}", str(exc))
    except Exception as exc:  # noqa: BLE001 - last-resort one-line report
        return _fail(EXIT_FAIL, type(exc).__name__, str(exc))


if __name__ == "__main__":
    sys.exit(main())
