from __future__ import annotations

import numpy as np
import pytest

from physmo.embodiment import (ROOT_DOF, EmbodimentModel, LinkSpec,
                               default_biped, load_embodiment, save_embodiment)
from physmo.simulator import foot_points


def test_default_biped_shape():
    m = default_biped()
    assert ROOT_DOF == 3
    assert m.link_count == 5
    assert m.joint_count == 4
    assert m.dof == 7
    assert m.link_names == ("torso", "thigh_l", "shank_l", "thigh_r", "shank_r")
    assert m.foot_links == (2, 4)
    assert np.all(m.lengths > 0) and np.all(m.masses > 0)
    assert np.all(m.torque_limits > 0)
    assert np.all(m.kp >= 0) and np.all(m.kd >= 0)
    assert m.total_mass == pytest.approx(10.0)


def test_standing_height_and_nominal_state():
    m = default_biped()
    h = m.standing_height()
    # legs are slightly flexed in the nominal pose, so shorter than the
    # straight-leg chain (0.4 + 0.4)
    assert 0.7 < h < 0.8
    q = m.nominal_state()
    assert q[1] == pytest.approx(h)
    feet = foot_points(m, q)
    assert feet[:, 1].min() == pytest.approx(0.0, abs=1e-12)


def test_straight_pose_feet_hang_one_leg_length_down():
    m = default_biped()
    q = np.zeros(m.dof)
    q[1] = 1.5
    feet = foot_points(m, q)
    np.testing.assert_allclose(feet[:, 0], 0.0, atol=1e-12)
    np.testing.assert_allclose(feet[:, 1], 1.5 - 0.8, atol=1e-12)


def test_config_file_round_trip(tmp_path):
    m = default_biped()
    path = tmp_path / "biped.cfg"
    save_embodiment(m, path)
    back = load_embodiment(path)
    assert back.links == m.links
    for name in ("joint_limits", "torque_limits", "kp", "kd", "nominal_pose"):
        np.testing.assert_array_equal(getattr(back, name), getattr(m, name))
    assert back.foot_links == m.foot_links
    assert back.gravity == m.gravity

    again = tmp_path / "again.cfg"
    save_embodiment(back, again)
    assert again.read_bytes() == path.read_bytes()


def test_gravity_must_be_nonnegative():
    m = default_biped()
    with pytest.raises(Exception):
        EmbodimentModel(links=m.links, joint_limits=m.joint_limits,
                        torque_limits=m.torque_limits, kp=m.kp, kd=m.kd,
                        foot_links=m.foot_links, nominal_pose=m.nominal_pose,
                        gravity=-1.0)


def test_single_link_model_tables():
    rod = EmbodimentModel(
        links=(LinkSpec("rod", -1, 0.0, 0, 0.0, 0.7, 1.0),),
        joint_limits=np.array([[-3.0, 3.0]]),
        torque_limits=np.array([10.0]),
        kp=np.array([0.0]), kd=np.array([0.0]),
        foot_links=(0,), nominal_pose=np.array([0.0]))
    assert rod.dof == 4
    assert rod.lengths[0] == 0.7
    # angle = root pitch + joint angle
    np.testing.assert_array_equal(rod.angle_matrix, [[0.0, 0.0, 1.0, 1.0]])
