"""End-to-end experiment driver.

A run directory is a pure function of its config: every stage writes
deterministic artifacts (sorted-key JSON, repr-exact floats, fixed-order
binary containers) and skips itself on resume when its outputs already
exist.  Layout::

    <run>/config.json            exact resolved config echo
    <run>/data/dataset           synthetic motion corpus
    <run>/round_0/checkpoint     pre-trained generator (+ eval.csv, metrics.json)
    <run>/round_r/{checkpoint,pairs,report,eval.csv,build_log.json,metrics.json}
    <run>/sft/round_r/...        comparison arm with the preference term off
    <run>/ablation/<name>/...    optional reward-ablation arms
    <run>/summary.csv            {baseline, sft, full} x rounds

Relative output directories are resolved under $PHYSMO_RUNS_DIR when it is
set, so identical configs can be executed side by side.
"""

from __future__ import annotations

import json
import os
from contextlib import contextmanager
from dataclasses import dataclass, replace
from hashlib import sha256
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .config import ExperimentConfig
from .dataset import (SynthRecord, load_dataset, random_spatial_condition,
                      save_dataset, synthesize_dataset)
from .dpo import RoundReport, finetune_round
from .embodiment import EmbodimentModel
from .errors import ContractViolation, PhysmoError
from .generator import (DenoiserParams, load_checkpoint, sample,
                        sample_candidates, save_checkpoint, train_denoiser)
from .metrics import MetricReport, fid_like, jerk, retrieval_metrics
from .motion import Condition, MotionSequence, sample_task
from .preferences import (PreferencePair, acceptance_rate, build_dataset)
from .records import (condition_fields, condition_from_fields, read_records,
                      write_records)
from .rewards import (RewardVector, embed_motion, r_control, score,
                      tracking_distortion)
from .tracking import kinematic_realized, track_many

_PAIRS_MAGIC = b"PMPAIRS1"

# Reward subsets for the ablation matrix, cumulative in this order.
ABLATION_ARMS: tuple[tuple[str, tuple[str, ...]], ...] = (
    ("tracking", ("track",)),
    ("control", ("track", "control")),
    ("sliding", ("track", "control", "slide")),
    ("task", ("track", "control", "slide", "task")),
)


def derive_seed(*parts) -> int:
    """Stable sub-seed from a master seed and a label path."""
    text = "/".join(repr(p) for p in parts)
    return int.from_bytes(sha256(text.encode()).digest()[:4], "little")


def resolve_run_dir(config: ExperimentConfig) -> Path:
    out = Path(config.output_dir)
    root = os.environ.get("PHYSMO_RUNS_DIR")
    if root and not out.is_absolute():
        out = Path(root) / out
    return out


@contextmanager
def run_lock(run_dir: Path):
    """Advisory single-writer lock; a lock from a dead process is reclaimed."""
    path = run_dir / "lock"
    if path.exists():
        try:
            pid = int(path.read_text().strip())
            os.kill(pid, 0)
        except (ValueError, ProcessLookupError, PermissionError):
            path.unlink()            # stale or unreadable -> reclaim
        else:
            raise PhysmoError(f"run directory {run_dir} is locked by pid {pid}")
    fd = os.open(path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield
    finally:
        path.unlink(missing_ok=True)


def _write_atomic(path: Path, writer) -> None:
    tmp = path.with_name(path.name + ".tmp")
    writer(tmp)
    os.replace(tmp, path)


def _write_json(path: Path, payload) -> None:
    text = json.dumps(payload, sort_keys=True, indent=2) + "\n"
    _write_atomic(path, lambda p: p.write_text(text))


# -- preference-pair container --------------------------------------------------------


def _reward_fields(r: RewardVector) -> dict:
    return {"track": r.track, "slide": r.slide, "task": r.task,
            "control": r.control}


def save_pairs(path, pairs: Sequence[PreferencePair],
               round_index: int = 0) -> None:
    records = []
    for p in pairs:
        header, arrays = condition_fields(p.condition)
        header.update(mode=p.mode, dt=p.win.dt, round=round_index,
                      names=list(p.names) if p.names is not None else None,
                      win_rewards=_reward_fields(p.win_rewards),
                      lose_rewards=_reward_fields(p.lose_rewards))
        records.append((header, [p.win.frames, p.lose.frames] + arrays))
    write_records(path, _PAIRS_MAGIC, records)


def load_pairs(path) -> list[PreferencePair]:
    out = []
    for header, arrays in read_records(path, _PAIRS_MAGIC):
        cond = condition_from_fields(header, arrays[2:])
        win = MotionSequence(arrays[0], header["dt"])
        lose = MotionSequence(arrays[1], header["dt"])
        names = header.get("names")
        out.append(PreferencePair(
            cond, win, lose,
            RewardVector(**header["win_rewards"]),
            RewardVector(**header["lose_rewards"]), mode=header["mode"],
            names=tuple(names) if names is not None else None))
    return out


# -- condition sampling ---------------------------------------------------------------


def sample_conditions(config: ExperimentConfig, records: Sequence[SynthRecord],
                      n: int, seed: int) -> list[Condition]:
    """n mixed task/spatial conditions; spatial masks come from ground-truth
    corpus motions of the same family (the cross-control protocol)."""
    rng = np.random.default_rng(seed)
    by_family: dict[str, list[SynthRecord]] = {}
    for rec in records:
        by_family.setdefault(rec.condition.task.family, []).append(rec)
    out = []
    for _ in range(n):
        family = config.families[int(rng.integers(len(config.families)))]
        task = sample_task(family, rng)
        if rng.uniform() < config.spatial_fraction and by_family.get(family):
            pool = by_family[family]
            motion = pool[int(rng.integers(len(pool)))].motion
            out.append(random_spatial_condition(motion, task, rng))
        else:
            out.append(Condition(task))
    return out


# -- evaluation -----------------------------------------------------------------------


@dataclass
class EvalSuite:
    """Frozen held-out evaluation protocol, shared by every arm and round."""
    conditions: list[Condition]
    sample_seeds: list[int]
    reference_features: np.ndarray     # corpus embeddings, the fid anchor
    fail_threshold: float

    def __len__(self) -> int:
        return len(self.conditions)


def make_eval_suite(config: ExperimentConfig, model: EmbodimentModel, em,
                    records: Sequence[SynthRecord]) -> EvalSuite:
    conds = sample_conditions(config, records, config.eval_conditions,
                              derive_seed(config.master_seed, "eval-conditions"))
    seeds = [derive_seed(config.master_seed, "eval-sample", i)
             for i in range(len(conds))]
    refs = np.array([embed_motion(kinematic_realized(model, rec.motion), em)
                     for rec in records])
    return EvalSuite(conds, seeds, refs, config.fail_threshold)


def evaluate_params(params: DenoiserParams, suite: EvalSuite,
                    model: EmbodimentModel, em, schedule,
                    ) -> tuple[MetricReport, dict, str]:
    """Sample one motion per held-out condition, track it, and aggregate.

    Returns the metric report, a JSON-ready aggregate dict, and a CSV of
    per-condition rows.
    """
    motions = [sample(params, c, s, schedule)
               for c, s in zip(suite.conditions, suite.sample_seeds)]
    realized = track_many(model, motions)

    rows = ["idx,family,param,spatial,fell,delta,jerk,control_err,max_control_err"]
    deltas, jerks, ctrl, ctrl_max, fails = [], [], [], [], 0
    for i, (cond, m, x) in enumerate(zip(suite.conditions, motions, realized)):
        d = tracking_distortion(m, x)
        j = jerk(x)
        deltas.append(d)
        jerks.append(j)
        ce = mx = float("nan")
        if cond.has_spatial:
            cs = cond.spatial
            ce = -r_control(x, cs)
            mx = float(np.abs(x.frames - cs.targets)[cs.mask == 1.0].max())
            ctrl.append(ce)
            ctrl_max.append(mx)
            fails += bool(mx > suite.fail_threshold)
        rows.append(",".join([str(i), cond.task.family, repr(cond.task.param),
                              str(int(cond.has_spatial)), str(int(x.fell)),
                              repr(d), repr(j), repr(ce), repr(mx)]))

    mm_dist, r_at_k = retrieval_metrics(list(zip(realized, suite.conditions)), em)
    features = np.array([embed_motion(x, em) for x in realized])
    report = MetricReport(
        jerk=float(np.mean(jerks)),
        control_err=float(np.mean(ctrl)) if ctrl else float("nan"),
        fid_like=fid_like(features, suite.reference_features),
        mm_dist=mm_dist, r_at_k=r_at_k, n_samples=len(motions))
    aggregates = {
        "median_delta": float(np.median(deltas)),
        "mean_delta": float(np.mean(deltas)),
        "fell_rate": float(np.mean([x.fell for x in realized])),
        "fail_rate": fails / len(ctrl) if ctrl else float("nan"),
        "median_control_err": float(np.median(ctrl)) if ctrl else float("nan"),
        "jerk": report.jerk, "control_err": report.control_err,
        "fid_like": report.fid_like, "mm_dist": report.mm_dist,
        "n_samples": report.n_samples,
        **{f"r_at_{k}": v for k, v in sorted(report.r_at_k.items())},
    }
    return report, aggregates, "\n".join(rows) + "\n"


def _write_eval(round_dir: Path, params, suite, model, em, schedule) -> dict:
    report, aggregates, detail = evaluate_params(params, suite, model, em,
                                                 schedule)
    head, row = report.csv_row()
    _write_atomic(round_dir / "eval.csv",
                  lambda p: p.write_text(head + "\n" + row + "\n"))
    _write_atomic(round_dir / "eval_detail.csv",
                  lambda p: p.write_text(detail))
    _write_json(round_dir / "metrics.json", aggregates)
    return aggregates


# -- per-round preference building ------------------------------------------------


def build_round_pairs(config: ExperimentConfig, model: EmbodimentModel, em,
                      records: Sequence[SynthRecord], params: DenoiserParams,
                      schedule, arm: str, round_index: int,
                      names: Sequence[str] | None = None,
                      ) -> tuple[list[PreferencePair], float, list[dict]]:
    seed_of = lambda tag: derive_seed(config.master_seed, arm, tag, round_index)
    conds = sample_conditions(config, records, config.train_conditions,
                              seed_of("conditions"))
    thresholds = config.thresholds()
    log: list[dict] = []
    pairs = build_dataset(
        conds,
        sampler=lambda c, k, base: sample_candidates(params, c, k, base, schedule),
        tracker=lambda motions: track_many(model, motions),
        scorer=lambda m, x, c: score(m, x, c, em, thresholds),
        k=config.k, round_seed=seed_of("candidates"), mode=config.mode,
        names=names, log_out=log)
    acceptance = acceptance_rate(log)
    if config.data_fraction < 1.0 and pairs:
        rng = np.random.default_rng(seed_of("fraction"))
        keep = max(1, round(config.data_fraction * len(pairs)))
        idx = sorted(rng.choice(len(pairs), size=keep, replace=False))
        pairs = [pairs[i] for i in idx]
    return pairs, acceptance, log


def _reward_probe(config: ExperimentConfig, model: EmbodimentModel, em,
                  records: Sequence[SynthRecord], schedule, arm: str,
                  round_index: int, n: int = 16):
    """eval_fn for round reports: mean rewards over a small fixed probe set."""
    conds = sample_conditions(
        config, records, n,
        derive_seed(config.master_seed, arm, "probe", round_index))
    seeds = [derive_seed(config.master_seed, "probe-sample", i)
             for i in range(n)]
    thresholds = config.thresholds()

    def eval_fn(params: DenoiserParams) -> Mapping[str, float]:
        motions = [sample(params, c, s, schedule)
                   for c, s in zip(conds, seeds)]
        realized = track_many(model, motions)
        sums: dict[str, list[float]] = {}
        for c, m, x in zip(conds, motions, realized):
            r = score(m, x, c, em, thresholds)
            for name in ("track", "slide", "task"):
                sums.setdefault(name, []).append(r.value(name))
            if c.has_spatial:
                sums.setdefault("control", []).append(r.control)
        return {k: float(np.mean(v)) for k, v in sums.items()}

    return eval_fn


# -- arm execution --------------------------------------------------------------------


def _round_done(rdir: Path) -> bool:
    return all((rdir / name).exists()
               for name in ("checkpoint", "pairs", "report", "eval.csv",
                            "metrics.json"))


def run_arm(config: ExperimentConfig, model: EmbodimentModel, em,
            records: Sequence[SynthRecord], start: DenoiserParams,
            schedule, suite: EvalSuite, arm_dir: Path, arm: str,
            hyper, names: Sequence[str] | None = None,
            resume: bool = False) -> list[dict]:
    """Preference rounds for one arm, resumable at round granularity."""
    fixed_ref = start.copy() if config.ref_mode == "fixed" else None
    params = start
    summaries = []
    for r in range(1, hyper.rounds + 1):
        rdir = arm_dir / f"round_{r}"
        if resume and _round_done(rdir):
            params, _ = load_checkpoint(rdir / "checkpoint")
            summaries.append({**json.loads((rdir / "metrics.json").read_text()),
                              "round": r})
            continue
        rdir.mkdir(parents=True, exist_ok=True)
        pairs, acceptance, log = build_round_pairs(
            config, model, em, records, params, schedule, arm, r, names)
        _write_json(rdir / "build_log.json", log)
        _write_atomic(rdir / "pairs",
                      lambda p: save_pairs(p, pairs, round_index=r))

        if pairs:
            round_hyper = replace(
                hyper, seed=derive_seed(config.master_seed, arm, "train", r))
            eval_fn = _reward_probe(config, model, em, records, schedule, arm, r)
            params, report = finetune_round(
                params, pairs, round_hyper, schedule, ref_params=fixed_ref,
                round_index=r, acceptance=acceptance, eval_fn=eval_fn)
        else:
            report = RoundReport(round_index=r, mean_rewards_before={},
                                 mean_rewards_after={}, acceptance_rate=acceptance,
                                 final_dpo_loss=float("nan"),
                                 final_sft_loss=float("nan"),
                                 final_total_loss=float("nan"))
        _write_atomic(rdir / "checkpoint",
                      lambda p: save_checkpoint(p, params, schedule))
        _write_atomic(rdir / "report",
                      lambda p: p.write_text(report.lines()))
        summaries.append({**_write_eval(rdir, params, suite, model, em, schedule),
                          "round": r, "acceptance": acceptance})
    return summaries


# -- the full experiment ----------------------------------------------------------


_SUMMARY_FIELDS = ("median_delta", "mean_delta", "fail_rate", "jerk",
                   "control_err", "median_control_err", "fid_like", "mm_dist",
                   "r_at_1", "r_at_2", "r_at_3", "n_samples")


def _summary_csv(baseline: dict, arms: Mapping[str, list[dict]],
                 rounds: int) -> str:
    lines = ["arm,round," + ",".join(_SUMMARY_FIELDS)]

    def row(arm: str, r: int, agg: dict) -> str:
        vals = [repr(float(agg[f])) if f != "n_samples" else str(agg[f])
                for f in _SUMMARY_FIELDS]
        return ",".join([arm, str(r)] + vals)

    for arm in ("baseline",) + tuple(arms):
        lines.append(row(arm, 0, baseline))
        for r in range(1, rounds + 1):
            agg = baseline if arm == "baseline" else arms[arm][r - 1]
            lines.append(row(arm, r, agg))
    return "\n".join(lines) + "\n"


def run_experiment(config: ExperimentConfig, resume: bool = False,
                   with_sft: bool = True, ablation: bool = False) -> Path:
    """Execute synth -> pretrain -> preference rounds -> per-round eval ->
    summary, persisting every stage.  Deterministic in the master seed."""
    run_dir = resolve_run_dir(config)
    run_dir.mkdir(parents=True, exist_ok=True)
    stage = {"name": "setup"}
    try:
        with run_lock(run_dir):
            return _run_stages(config, run_dir, resume, with_sft, ablation,
                               stage)
    except Exception as exc:
        _write_json(run_dir / "failure.json",
                    {"stage": stage["name"], "type": type(exc).__name__,
                     "message": str(exc)})
        raise


def ensure_config_echo(config: ExperimentConfig, run_dir: Path,
                       resume: bool) -> None:
    echo = run_dir / "config.json"
    if echo.exists():
        if echo.read_text() != config.to_json():
            raise ContractViolation(
                f"{echo} does not match the supplied config; refusing to mix runs")
        if not resume:
            raise ContractViolation(
                f"{run_dir} already holds a run; pass resume=True to continue")
    else:
        _write_atomic(echo, lambda p: p.write_text(config.to_json()))


def stage_synth(config: ExperimentConfig, run_dir: Path,
                model: EmbodimentModel) -> list[SynthRecord]:
    data_path = run_dir / "data" / "dataset"
    if not data_path.exists():
        data_path.parent.mkdir(exist_ok=True)
        records = synthesize_dataset(
            model, config.n_per_family,
            seed=derive_seed(config.master_seed, "synth"),
            frame_count=config.frame_count, fps=config.fps,
            ceilings=config.ceilings, families=config.families)
        _write_atomic(data_path, lambda p: save_dataset(p, records))
    return load_dataset(data_path)


def stage_pretrain(config: ExperimentConfig, run_dir: Path,
                   records: Sequence[SynthRecord], schedule) -> DenoiserParams:
    base_dir = run_dir / "round_0"
    base_dir.mkdir(exist_ok=True)
    ckpt = base_dir / "checkpoint"
    if not ckpt.exists():
        hyper = replace(config.gen,
                        seed=derive_seed(config.master_seed, "pretrain"))
        params = train_denoiser([(rec.motion, rec.condition) for rec in records],
                                schedule, hyper)
        _write_atomic(ckpt, lambda p: save_checkpoint(p, params, schedule))
    params, _ = load_checkpoint(ckpt)
    return params


def stage_baseline_eval(run_dir: Path, params: DenoiserParams,
                        suite: EvalSuite, model: EmbodimentModel, em,
                        schedule) -> dict:
    base_dir = run_dir / "round_0"
    if (base_dir / "metrics.json").exists():
        return json.loads((base_dir / "metrics.json").read_text())
    return _write_eval(base_dir, params, suite, model, em, schedule)


def _run_stages(config: ExperimentConfig, run_dir: Path, resume: bool,
                with_sft: bool, ablation: bool, stage: dict) -> Path:
    def _enter(name: str) -> None:
        stage["name"] = name

    _enter("config")
    ensure_config_echo(config, run_dir, resume)
    model = config.load_model()
    em = config.embedding_model(model)
    schedule = config.schedule()

    _enter("synth")
    records = stage_synth(config, run_dir, model)

    _enter("pretrain")
    params = stage_pretrain(config, run_dir, records, schedule)

    _enter("evaluate-baseline")
    suite = make_eval_suite(config, model, em, records)
    baseline = stage_baseline_eval(run_dir, params, suite, model, em, schedule)

    arms: dict[str, list[dict]] = {}
    _enter("rounds-full")
    arms["full"] = run_arm(config, model, em, records, params, schedule,
                           suite, run_dir, "full", config.train, resume=resume)
    if with_sft:
        _enter("rounds-sft")
        sft_hyper = replace(config.train, dpo_weight=0.0)
        arms["sft"] = run_arm(config, model, em, records, params, schedule,
                              suite, run_dir / "sft", "sft", sft_hyper,
                              resume=resume)
    if ablation:
        for name, names in ABLATION_ARMS:
            _enter(f"rounds-ablation-{name}")
            arms[f"ablation_{name}"] = run_arm(
                config, model, em, records, params, schedule, suite,
                run_dir / "ablation" / name, f"ablation-{name}", config.train,
                names=names, resume=resume)

    _enter("summary")
    text = _summary_csv(baseline, arms, config.train.rounds)
    _write_atomic(run_dir / "summary.csv", lambda p: p.write_text(text))
    return run_dir
