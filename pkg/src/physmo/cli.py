"""Operator command line.

Every experiment-facing subcommand takes ``--config <file>`` plus optional
``--seed`` (master-seed override) and ``--resume``; work lands in the config's
output directory.  Failures exit nonzero after printing a machine-readable
JSON record to stderr (and, for ``run``, persisting it as failure.json).
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import ExperimentConfig
from .dpo import PROFILES, TrainHyper
from .errors import ContractViolation, PhysmoError
from .export import EXPORT_KINDS, export_run
from .generator import load_checkpoint
from .motion import Condition, FAMILIES, SpatialControl, TaskCondition
from .pipeline import (ensure_config_echo, build_round_pairs, make_eval_suite,
                       resolve_run_dir, run_arm, run_experiment, run_lock,
                       save_pairs, stage_baseline_eval, stage_pretrain,
                       stage_synth, _summary_csv, _write_eval, _write_json)
from .rewards import default_embedding_model, r_control, r_slide, r_task, r_track
from .tracking import trajectory_from_rows


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", required=True, help="experiment config JSON")
    p.add_argument("--seed", type=int, default=None,
                   help="override the config's master seed")
    p.add_argument("--resume", action="store_true",
                   help="continue into an existing run directory")


def _load_config(args) -> ExperimentConfig:
    config = ExperimentConfig.load(args.config)
    if args.seed is not None:
        config = replace(config, master_seed=args.seed)
    return config


def _prepare(config: ExperimentConfig, resume: bool):
    """Shared stage ladder: echo config, then materialize dataset/checkpoint
    on demand so each subcommand can start from any point."""
    run_dir = resolve_run_dir(config)
    run_dir.mkdir(parents=True, exist_ok=True)
    ensure_config_echo(config, run_dir, resume)
    model = config.load_model()
    em = config.embedding_model(model)
    schedule = config.schedule()
    return run_dir, model, em, schedule


def _cmd_synth(args) -> int:
    config = _load_config(args)
    run_dir, model, _, _ = _prepare(config, args.resume)
    with run_lock(run_dir):
        records = stage_synth(config, run_dir, model)
    print(f"{len(records)} sequences in {run_dir / 'data' / 'dataset'}")
    return 0


def _cmd_pretrain(args) -> int:
    config = _load_config(args)
    run_dir, model, _, schedule = _prepare(config, args.resume)
    with run_lock(run_dir):
        records = stage_synth(config, run_dir, model)
        stage_pretrain(config, run_dir, records, schedule)
    print(f"checkpoint at {run_dir / 'round_0' / 'checkpoint'}")
    return 0


def _cmd_build_prefs(args) -> int:
    base = _load_config(args)
    config = base
    if args.k is not None:
        config = replace(config, k=args.k)
    if args.mode is not None:
        config = replace(config, mode=args.mode)
    if config is not base and not args.out:
        # the in-run pairs file must stay reproducible from config.json
        raise ContractViolation("pass --out when overriding k or mode")
    run_dir, model, em, schedule = _prepare(base, args.resume)
    with run_lock(run_dir):
        records = stage_synth(base, run_dir, model)
        prev = run_dir / f"round_{args.round - 1}" / "checkpoint"
        if not prev.exists():
            raise ContractViolation(f"no checkpoint at {prev}; run earlier "
                                    "rounds first")
        params, _ = load_checkpoint(prev)
        pairs, acceptance, log = build_round_pairs(
            config, model, em, records, params, schedule, "full", args.round)
        out = Path(args.out) if args.out else \
            run_dir / f"round_{args.round}" / "pairs"
        out.parent.mkdir(parents=True, exist_ok=True)
        save_pairs(out, pairs, round_index=args.round)
        _write_json(out.with_name(out.name + "_log.json"), log)
    print(f"{len(pairs)} pairs (acceptance {acceptance:.3f}) in {out}")
    return 0


def _cmd_finetune(args) -> int:
    config = _load_config(args)
    hyper = config.train
    if args.profile:
        hyper = TrainHyper(**{**PROFILES[args.profile],
                              "rounds": hyper.rounds, "seed": hyper.seed})
        config = replace(config, profile=args.profile)
    overrides = {k: v for k, v in (("beta", args.beta),
                                   ("lambda_sft", args.lambda_sft),
                                   ("rounds", args.rounds)) if v is not None}
    if overrides:
        hyper = replace(hyper, **overrides)
    config = replace(config, train=hyper)
    if args.mode:
        config = replace(config, mode=args.mode)
    if args.ref:
        config = replace(config, ref_mode=args.ref)

    run_dir, model, em, schedule = _prepare(config, args.resume)
    with run_lock(run_dir):
        records = stage_synth(config, run_dir, model)
        params = stage_pretrain(config, run_dir, records, schedule)
        suite = make_eval_suite(config, model, em, records)
        baseline = stage_baseline_eval(run_dir, params, suite, model, em,
                                       schedule)
        summaries = run_arm(config, model, em, records, params, schedule,
                            suite, run_dir, "full", config.train,
                            resume=args.resume)
        text = _summary_csv(baseline, {"full": summaries}, hyper.rounds)
        (run_dir / "summary.csv").write_text(text)
    print(f"{hyper.rounds} rounds done; summary at {run_dir / 'summary.csv'}")
    return 0


def _cmd_evaluate(args) -> int:
    config = _load_config(args)
    run_dir, model, em, schedule = _prepare(config, True)
    rounds = sorted(run_dir.glob("round_*/checkpoint"),
                    key=lambda p: int(p.parent.name.split("_")[1]))
    if not rounds:
        raise ContractViolation(f"{run_dir} holds no checkpoints to evaluate")
    records = stage_synth(config, run_dir, model)
    suite = make_eval_suite(config, model, em, records)
    table = []
    for ckpt in rounds:
        rdir = ckpt.parent
        if not (rdir / "metrics.json").exists():
            params, _ = load_checkpoint(ckpt)
            _write_eval(rdir, params, suite, model, em, schedule)
        table.append((rdir.name, json.loads((rdir / "metrics.json").read_text())))

    fields = ["jerk", "control_err", "fid_like", "mm_dist",
              "r_at_1", "r_at_2", "r_at_3", "n_samples"]
    print(f"{'round':<10}" + "".join(f"{f:>14}" for f in fields))
    for name, agg in table:
        cells = [f"{agg[f]:>14.6g}" if f != "n_samples" else f"{agg[f]:>14d}"
                 for f in fields]
        print(f"{name:<10}" + "".join(cells))
    return 0


def _cmd_run(args) -> int:
    config = _load_config(args)
    run_dir = run_experiment(config, resume=args.resume,
                             with_sft=not args.no_sft, ablation=args.ablation)
    print(f"run complete: {run_dir / 'summary.csv'}")
    return 0


def _cmd_export(args) -> int:
    config = _load_config(args)
    written = export_run(resolve_run_dir(config), args.what, stride=args.stride)
    print(f"{len(written)} files under {written[0].parent}")
    return 0


# -- batch scoring --------------------------------------------------------------------


def _read_grouped_csv(path) -> dict[str, tuple[list[str], list[list[str]]]]:
    """Split a stacked CSV on its leading candidate_id column."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[0] != "candidate_id":
            raise ContractViolation(f"{path}: first column must be candidate_id")
        groups: dict[str, list[list[str]]] = {}
        for row in reader:
            groups.setdefault(row[0], []).append(row[1:])
    return {cid: (header[1:], rows) for cid, rows in groups.items()}


def _cmd_score(args) -> int:
    if args.family not in FAMILIES:
        raise ContractViolation(f"unknown task family {args.family!r}")
    config = ExperimentConfig(embodiment_path=args.model)
    model = config.load_model()
    em = default_embedding_model(model)
    task = TaskCondition(args.family, args.param)

    trajs = {cid: trajectory_from_rows(h, rows)
             for cid, (h, rows) in _read_grouped_csv(args.trajectories).items()}
    refs = {}
    for cid, (h, rows) in _read_grouped_csv(args.references).items():
        col = {name: i for i, name in enumerate(h)}
        D = sum(n.startswith("q") and n[1:].isdigit() for n in h)
        refs[cid] = np.array([[float(r[col[f"q{i}"]]) for i in range(D)]
                              for r in rows])
    missing = sorted(set(trajs) - set(refs))
    if missing:
        raise ContractViolation(f"references missing for candidates {missing}")

    spatial = None
    if args.spatial:
        first = next(iter(trajs.values()))
        targets = np.zeros_like(first.frames)
        mask = np.zeros_like(first.frames)
        with open(args.spatial, newline="") as fh:
            reader = csv.reader(fh)
            next(reader)                      # frame,coord,target header
            for row in reader:
                f, d, v = int(row[0]), int(row[1]), float(row[2])
                targets[f, d] = v
                mask[f, d] = 1.0
        spatial = SpatialControl(targets, mask)
    cond = Condition(task, spatial)

    lines = ["candidate_id,track,slide,task,control"]
    for cid in sorted(trajs):
        x = trajs[cid]
        track = r_track_from_frames(refs[cid], x)
        control = repr(r_control(x, spatial)) if spatial is not None else "nan"
        lines.append(",".join([cid, repr(track),
                               repr(r_slide(x)),
                               repr(r_task(x, task, em)), control]))
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def r_track_from_frames(ref_frames: np.ndarray, realized) -> float:
    from .motion import MotionSequence

    return r_track(MotionSequence(ref_frames, realized.dt), realized)


# -- entry point ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="physmo",
        description="physics-grounded motion generation experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, fn, text in (("synth", _cmd_synth, "generate the motion corpus"),
                           ("pretrain", _cmd_pretrain, "train the generator"),
                           ("run", _cmd_run, "execute the full experiment"),
                           ("evaluate", _cmd_evaluate, "metrics per round"),
                           ("export", _cmd_export, "materialize artifacts")):
        p = sub.add_parser(name, help=text)
        _add_common(p)
        p.set_defaults(fn=fn)
        if name == "run":
            p.add_argument("--no-sft", action="store_true",
                           help="skip the comparison arm")
            p.add_argument("--ablation", action="store_true",
                           help="also run the reward-ablation matrix")
        if name == "export":
            p.add_argument("--what", choices=EXPORT_KINDS, required=True)
            p.add_argument("--stride", type=int, default=6,
                           help="frames between stick-figure snapshots")

    p = sub.add_parser("build-prefs", help="construct one round of pairs")
    _add_common(p)
    p.add_argument("--round", type=int, default=1)
    p.add_argument("--k", type=int, default=None, help="candidates per condition")
    p.add_argument("--mode", choices=("dominance", "fuse"), default=None)
    p.add_argument("--out", default=None, help="pairs file destination")
    p.set_defaults(fn=_cmd_build_prefs)

    p = sub.add_parser("finetune", help="preference-optimization rounds")
    _add_common(p)
    p.add_argument("--rounds", type=int, default=None)
    p.add_argument("--beta", type=float, default=None)
    p.add_argument("--lambda-sft", type=float, default=None, dest="lambda_sft")
    p.add_argument("--mode", choices=("dominance", "fuse"), default=None)
    p.add_argument("--profile", choices=tuple(PROFILES), default=None)
    p.add_argument("--ref", choices=("refresh", "fixed"), default=None)
    p.set_defaults(fn=_cmd_finetune)

    p = sub.add_parser("score", help="reward a batch of tracked trajectories")
    p.add_argument("--model", default=None, help="embodiment file "
                   "(default: packaged biped)")
    p.add_argument("--trajectories", required=True,
                   help="stacked rollout CSV with a candidate_id column")
    p.add_argument("--references", required=True,
                   help="stacked reference CSV (candidate_id, frame, time, q*)")
    p.add_argument("--family", required=True)
    p.add_argument("--param", type=float, required=True)
    p.add_argument("--spatial", default=None,
                   help="CSV of frame,coord,target constraints")
    p.add_argument("--out", default=None, help="rewards CSV (default stdout)")
    p.set_defaults(fn=_cmd_score)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except PhysmoError as exc:
        record = {"type": type(exc).__name__, "message": str(exc),
                  "command": args.command}
        print(json.dumps(record, sort_keys=True), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
