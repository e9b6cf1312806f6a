"""Command-line surface: synth, train, eval, ablate, gradcheck, report.

Exit codes: 0 success, 1 configuration error, 2 data error, 3 numeric
failure.  Every run echoes its fully resolved configuration (seeds included)
so results are reproducible from the log alone.
"""

from __future__ import annotations

import argparse
import csv
import itertools
import json
import sys
from pathlib import Path

import numpy as np

from . import report as report_mod
from .config import ModelConfig, load_config, parse_override
from .data import read_store, synth_dataset, write_store
from .engine import (
    evaluate,
    init_model_params,
    load_checkpoint,
    save_checkpoint,
    train,
    write_metrics,
    _rng_streams,
)
from .errors import (
    ConfigError,
    ContractError,
    DataError,
    FormatError,
    FsarError,
    IntegrityError,
    NumericError,
    SamplingError,
    ShapeError,
    UnknownClassError,
)
from .fusion import FUSION_STRATEGIES
from .gradcheck import run_gradient_suite
from .semantic import CONSTRAINT_MODES

CONFIG_EXIT = (ConfigError, ShapeError, ContractError)
DATA_EXIT = (FormatError, IntegrityError, DataError, SamplingError, UnknownClassError)


def _add_store_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--manifest", required=True, help="manifest JSON path")
    p.add_argument("--frames", required=True, help="frame container path")
    p.add_argument("--prompts", required=True, help="prompt container path")


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file mirroring the model config")
    p.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="config override, repeatable; unknown keys are rejected",
    )
    p.add_argument("--seed", type=int)
    p.add_argument("--way", type=int)
    p.add_argument("--shot", type=int)
    p.add_argument("--query", type=int, help="queries per class")
    p.add_argument("--gamma", type=float)
    for i in (1, 2, 3, 4):
        p.add_argument(f"--lambda{i}", type=float)
    for comp in ("hsmr", "spm", "padm"):
        p.add_argument(f"--toggle-{comp}", choices=["on", "off"])
    p.add_argument("--fusion", choices=list(FUSION_STRATEGIES))
    p.add_argument("--constraint", choices=list(CONSTRAINT_MODES))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fsar", description="Few-shot action recognition head over embedding stores"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    synth = sub.add_parser("synth", help="write a synthetic embedding store")
    _add_store_flags(synth)
    synth.add_argument("--classes", type=int, default=24)
    synth.add_argument("--per-class", type=int, default=30)
    synth.add_argument("--T", type=int, default=8)
    synth.add_argument("--C", type=int, default=64)
    synth.add_argument("--R", type=int, default=16)
    synth.add_argument("--appearance-sep", type=float, default=1.0)
    synth.add_argument("--motion-sep", type=float, default=1.0)
    synth.add_argument("--noise", type=float, default=0.1)
    synth.add_argument("--seed", type=int, default=0)
    synth.add_argument(
        "--splits", help="train,val,test class counts, e.g. 24,0,10 (default: auto)"
    )

    tr = sub.add_parser("train", help="episodic training")
    _add_store_flags(tr)
    _add_config_flags(tr)
    tr.add_argument("--episodes", type=int, help="training episodes")
    tr.add_argument("--out", required=True, help="output directory (checkpoint + metrics)")

    ev = sub.add_parser("eval", help="episodic evaluation")
    _add_store_flags(ev)
    _add_config_flags(ev)
    ev.add_argument("--episodes", type=int, help="evaluation episodes")
    ev.add_argument("--checkpoint", help="checkpoint to evaluate (default: fresh params)")
    ev.add_argument("--split", default="test", choices=["train", "val", "test"])
    ev.add_argument("--out", help="optional CSV to append the result row to")

    ab = sub.add_parser("ablate", help="component/fusion/constraint grid")
    _add_store_flags(ab)
    _add_config_flags(ab)
    ab.add_argument("--train-episodes", type=int, default=200)
    ab.add_argument("--eval-episodes", type=int, default=100)
    ab.add_argument("--out", required=True, help="grid CSV path")

    gc = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    gc.add_argument("--quiet", action="store_true")

    rp = sub.add_parser("report", help="render SVG curves from metrics CSVs")
    rp.add_argument("--metrics", required=True, help="metrics CSV from train")
    rp.add_argument("--out", required=True, help="SVG output path")

    return parser


def _flag_overrides(args: argparse.Namespace) -> dict:
    mapping = {
        "seed": "seed",
        "way": "way",
        "shot": "shot",
        "query": "queries",
        "gamma": "gamma",
        "lambda1": "lambda1",
        "lambda2": "lambda2",
        "lambda3": "lambda3",
        "lambda4": "lambda4",
        "fusion": "fusion",
        "constraint": "constraint",
    }
    out: dict = {}
    for attr, key in mapping.items():
        value = getattr(args, attr, None)
        if value is not None:
            out[key] = value
    for comp in ("hsmr", "spm", "padm"):
        value = getattr(args, f"toggle_{comp}", None)
        if value is not None:
            out[f"use_{comp}"] = value == "on"
    return out


def _resolve_config(args: argparse.Namespace, manifest=None) -> ModelConfig:
    overrides = _flag_overrides(args)
    for text in getattr(args, "overrides", []):
        key, value = parse_override(text)
        overrides[key] = value
    cfg = load_config(getattr(args, "config", None), overrides)
    if manifest is not None:
        defaults = ModelConfig()
        adopted = {}
        for key, value in (
            ("frames", manifest.frames_per_video),
            ("channels", manifest.channels),
            ("templates", manifest.templates_per_class),
        ):
            current = getattr(cfg, key)
            if current != value:
                if current != getattr(defaults, key) or key in overrides:
                    raise ConfigError(
                        f"config {key}={current} disagrees with the store ({key}={value})"
                    )
                adopted[key] = value
        if adopted:
            cfg = cfg.with_overrides(adopted)
    return cfg.validate()


def _echo_config(cfg: ModelConfig) -> None:
    print("resolved config:")
    print(json.dumps(cfg.to_dict(), indent=2, sort_keys=True))


def cmd_synth(args) -> int:
    split_counts = None
    if args.splits:
        try:
            split_counts = tuple(int(x) for x in args.splits.split(","))
        except ValueError:
            raise ConfigError(f"--splits must be three integers, got {args.splits!r}")
        if len(split_counts) != 3:
            raise ConfigError(f"--splits must be three integers, got {args.splits!r}")
    manifest, store = synth_dataset(
        args.classes,
        args.per_class,
        args.T,
        args.C,
        args.R,
        appearance_sep=args.appearance_sep,
        motion_sep=args.motion_sep,
        noise=args.noise,
        seed=args.seed,
        split_counts=split_counts,
    )
    write_store(manifest, store, args.frames, args.prompts, args.manifest)
    print(
        json.dumps(
            {
                "classes": args.classes,
                "per_class": args.per_class,
                "T": args.T,
                "C": args.C,
                "R": args.R,
                "appearance_sep": args.appearance_sep,
                "motion_sep": args.motion_sep,
                "noise": args.noise,
                "seed": args.seed,
                "splits": {k: len(v) for k, v in manifest.splits.items()},
            },
            indent=2,
        )
    )
    print(f"wrote {args.frames}, {args.prompts}, {args.manifest}")
    return 0


def cmd_train(args) -> int:
    manifest, store = read_store(args.frames, args.prompts, args.manifest)
    cfg = _resolve_config(args, manifest)
    _echo_config(cfg)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    state, metrics = train(manifest, store, cfg, episodes=args.episodes)
    ckpt = out_dir / "checkpoint.fsc"
    save_checkpoint(state.params, cfg, ckpt)
    metrics_path = out_dir / "metrics.csv"
    write_metrics(metrics, metrics_path)
    tail = np.mean([m.accuracy for m in metrics[-100:]]) if metrics else float("nan")
    print(f"trained {state.episode} episodes; tail accuracy {tail:.4f}")
    print(f"wrote {ckpt} and {metrics_path}")
    return 0


def cmd_eval(args) -> int:
    manifest, store = read_store(args.frames, args.prompts, args.manifest)
    cfg = _resolve_config(args, manifest)
    _echo_config(cfg)
    if args.checkpoint:
        params = load_checkpoint(args.checkpoint, cfg)
    else:
        params = init_model_params(cfg, _rng_streams(cfg.seed)["init"])
    result = evaluate(manifest, store, params, cfg, n_episodes=args.episodes, split=args.split)
    print(result.format())
    if args.out:
        new = not Path(args.out).exists()
        with open(args.out, "a", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            if new:
                writer.writerow(["split", "episodes", "accuracy", "ci95"])
            writer.writerow(
                [args.split, len(result.per_episode), f"{result.accuracy:.6f}",
                 "" if result.ci95 is None else f"{result.ci95:.6f}"]
            )
        print(f"appended result to {args.out}")
    return 0


def ablation_grid() -> list[dict]:
    """Deterministic grid: 8 component rows, 3 fusion rows, 4 constraint rows."""
    rows: list[dict] = []
    for hsmr, spm, padm in itertools.product([False, True], repeat=3):
        rows.append(
            {"axis": "components", "use_hsmr": hsmr, "use_spm": spm, "use_padm": padm}
        )
    for fusion in FUSION_STRATEGIES:
        rows.append({"axis": "fusion", "fusion": fusion})
    for constraint in CONSTRAINT_MODES:
        rows.append({"axis": "constraint", "constraint": constraint})
    return rows


def cmd_ablate(args) -> int:
    manifest, store = read_store(args.frames, args.prompts, args.manifest)
    base = _resolve_config(args, manifest)
    _echo_config(base)
    rows = ablation_grid()
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["axis", "use_hsmr", "use_spm", "use_padm", "fusion", "constraint",
             "accuracy", "ci95"]
        )
        for row in rows:
            overrides = {k: v for k, v in row.items() if k != "axis"}
            cfg = base.with_overrides(overrides)
            state, _ = train(manifest, store, cfg, episodes=args.train_episodes)
            result = evaluate(manifest, store, state.params, cfg, n_episodes=args.eval_episodes)
            record = [
                row["axis"],
                cfg.use_hsmr,
                cfg.use_spm,
                cfg.use_padm,
                cfg.fusion,
                cfg.constraint,
                f"{result.accuracy:.6f}",
                "" if result.ci95 is None else f"{result.ci95:.6f}",
            ]
            writer.writerow(record)
            fh.flush()
            print(
                f"[{row['axis']}] hsmr={cfg.use_hsmr} spm={cfg.use_spm} padm={cfg.use_padm} "
                f"fusion={cfg.fusion} constraint={cfg.constraint}: {result.format()}"
            )
    print(f"wrote {args.out}")
    return 0


def cmd_gradcheck(args) -> int:
    ok = run_gradient_suite(verbose=not args.quiet)
    if not ok:
        raise NumericError("gradient suite failed")
    print("gradient suite passed")
    return 0


def cmd_report(args) -> int:
    rows = report_mod.load_metrics(args.metrics)
    report_mod.render_svg(rows, args.out)
    print(report_mod.summarize(rows))
    print(f"wrote {args.out}")
    return 0


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "gradcheck": cmd_gradcheck,
    "report": cmd_report,
}


def run(argv=None) -> int:
    """Parse argv, dispatch, and map failures to exit codes."""
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except CONFIG_EXIT as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except DATA_EXIT as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except FsarError as exc:  # any other typed failure counts as config misuse
        print(f"error: {exc}", file=sys.stderr)
        return 1


main = run


if __name__ == "__main__":
    sys.exit(main())
