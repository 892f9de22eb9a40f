"""Run-directory export: trajectory CSVs, SVG stick-figure strips, and
metric tables.  Every export is a pure function of the run artifacts, so
exporting twice yields identical bytes.
"""

from __future__ import annotations

import json
import shutil
from pathlib import Path

from .config import ExperimentConfig
from .embodiment import EmbodimentModel
from .errors import ContractViolation
from .generator import load_checkpoint, sample
from .motion import MotionSequence
from .pipeline import make_eval_suite, stage_synth
from .simulator import forward_kinematics
from .tracking import save_trajectory_csv, track_many

EXPORT_KINDS = ("trajectories", "svg", "tables")


def motion_svg(model: EmbodimentModel, motion: MotionSequence,
               stride: int = 6) -> str:
    """Stick-figure strip: one polyline group per sampled frame, frames laid
    out left to right with each snapshot centred on its own root."""
    if stride < 1:
        raise ContractViolation("stride must be >= 1")
    frames = motion.frames[::stride]
    slot = 1.1 * float(model.lengths.sum())      # generous per-snapshot width
    scale = 80.0                                 # px per metre
    height = 2.2 * slot
    width = len(frames) * slot

    def pt(x: float, y: float, cx: float, i: int) -> str:
        px = (i + 0.5) * slot + (x - cx)
        py = height - 0.25 * slot - y            # y up -> SVG y down
        return f"{px * scale / slot:.2f},{py * scale / slot:.2f}"

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" '
             f'width="{width * scale / slot:.0f}" '
             f'height="{height * scale / slot:.0f}">',
             f'<line x1="0" y1="{(height - 0.25 * slot) * scale / slot:.2f}" '
             f'x2="{width * scale / slot:.0f}" '
             f'y2="{(height - 0.25 * slot) * scale / slot:.2f}" '
             f'stroke="#999" stroke-width="1"/>']
    for i, q in enumerate(frames):
        prox, dist = forward_kinematics(model, q)
        lines = []
        for a, b in zip(prox, dist):
            lines.append(f'<polyline points="{pt(a[0], a[1], q[0], i)} '
                         f'{pt(b[0], b[1], q[0], i)}" stroke="#224" '
                         f'stroke-width="2" fill="none"/>')
        parts.append('<g>' + "".join(lines) + '</g>')
    parts.append('</svg>')
    return "\n".join(parts) + "\n"


def _latest_checkpoint(run_dir: Path) -> Path:
    rounds = sorted(run_dir.glob("round_*/checkpoint"),
                    key=lambda p: int(p.parent.name.split("_")[1]))
    if not rounds:
        raise ContractViolation(f"{run_dir} holds no checkpoints to export")
    return rounds[-1]


def export_run(run_dir, what: str, stride: int = 6) -> list[Path]:
    """Materialize one export kind under <run>/export/<what>/."""
    run_dir = Path(run_dir)
    if what not in EXPORT_KINDS:
        raise ContractViolation(f"unknown export kind {what!r}")
    config_path = run_dir / "config.json"
    if not config_path.exists():
        raise ContractViolation(f"{run_dir} has no config echo; run synth first")
    out_dir = run_dir / "export" / what
    out_dir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    if what == "tables":
        for src in sorted(run_dir.rglob("*.csv")):
            if "export" in src.parts:
                continue
            rel = "_".join(src.relative_to(run_dir).parts)
            dst = out_dir / rel
            shutil.copyfile(src, dst)
            written.append(dst)
        if not written:
            raise ContractViolation(f"{run_dir} holds no tables to export")
        return written

    config = ExperimentConfig.from_dict(json.loads(config_path.read_text()))
    model = config.load_model()
    em = config.embedding_model(model)
    schedule = config.schedule()
    records = stage_synth(config, run_dir, model)
    suite = make_eval_suite(config, model, em, records)
    params, _ = load_checkpoint(_latest_checkpoint(run_dir))
    motions = [sample(params, c, s, schedule)
               for c, s in zip(suite.conditions, suite.sample_seeds)]

    if what == "svg":
        for i, m in enumerate(motions):
            dst = out_dir / f"cond_{i:03d}.svg"
            dst.write_text(motion_svg(model, m, stride))
            written.append(dst)
    else:
        for i, x in enumerate(track_many(model, motions)):
            dst = out_dir / f"cond_{i:03d}.csv"
            save_trajectory_csv(x, dst)
            written.append(dst)
    return written
