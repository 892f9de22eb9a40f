from __future__ import annotations

import numpy as np
import pytest

from physmo.errors import ContractViolation
from physmo.export import _latest_checkpoint, export_run, motion_svg
from physmo.motion import MotionSequence
from physmo.tracking import trajectory_from_rows


@pytest.fixture(scope="module")
def wiggle(model):
    rng = np.random.default_rng(3)
    frames = np.zeros((30, model.dof))
    frames[:, 1] = model.standing_height()
    frames[:, 3:] = model.nominal_pose + 0.1 * rng.standard_normal((30, 4))
    return MotionSequence(frames, 1.0 / 30.0)


def test_svg_group_per_snapshot(model, wiggle):
    svg = motion_svg(model, wiggle, stride=6)
    assert svg.count("<g>") == 5                      # 30 frames / stride 6
    assert svg.count("<polyline") == 5 * len(model.lengths)
    assert svg.startswith("<svg xmlns=")
    assert "<line" in svg                             # ground line
    assert svg.rstrip().endswith("</svg>")

    assert motion_svg(model, wiggle, stride=1).count("<g>") == 30
    assert motion_svg(model, wiggle, stride=29).count("<g>") == 2


def test_svg_is_deterministic(model, wiggle):
    assert motion_svg(model, wiggle) == motion_svg(model, wiggle)
    with pytest.raises(ContractViolation):
        motion_svg(model, wiggle, stride=0)


def test_latest_checkpoint_sorts_numerically(tmp_path):
    with pytest.raises(ContractViolation):
        _latest_checkpoint(tmp_path)
    for r in (0, 2, 10):
        (tmp_path / f"round_{r}").mkdir()
        (tmp_path / f"round_{r}" / "checkpoint").touch()
    assert _latest_checkpoint(tmp_path).parent.name == "round_10"


def test_export_validation(tmp_path):
    with pytest.raises(ContractViolation):
        export_run(tmp_path, "holograms")
    with pytest.raises(ContractViolation):
        export_run(tmp_path, "tables")            # no config echo yet
    (tmp_path / "config.json").write_text("{}")
    with pytest.raises(ContractViolation):
        export_run(tmp_path, "tables")            # echo but nothing to copy


def test_export_tables_flattens_run_csvs(pipeline_run):
    _, run_dir, _ = pipeline_run
    written = export_run(run_dir, "tables")
    names = {p.name for p in written}
    assert "summary.csv" in names
    assert "round_0_eval.csv" in names
    assert "round_1_eval_detail.csv" in names
    # copies are verbatim
    assert (run_dir / "export" / "tables" / "summary.csv").read_bytes() == \
        (run_dir / "summary.csv").read_bytes()


def test_export_svg_and_trajectories_are_deterministic(pipeline_run, model):
    cfg, run_dir, _ = pipeline_run
    first = export_run(run_dir, "svg", stride=5)
    assert len(first) == cfg.eval_conditions
    blob = first[0].read_bytes()
    assert export_run(run_dir, "svg", stride=5)[0].read_bytes() == blob

    trajs = export_run(run_dir, "trajectories")
    assert len(trajs) == cfg.eval_conditions
    import csv
    with open(trajs[0], newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        realized = trajectory_from_rows(header, list(reader))
    assert realized.frames.shape == (30, model.dof)
