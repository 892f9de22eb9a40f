"""Planar articulated embodiment: rigid-link description plus config I/O.

An embodiment is a tree of rigid links living in the x-y plane.  The root
frame carries three unactuated coordinates (horizontal position, vertical
position, pitch); every further degree of freedom is a revolute joint with a
PD-actuated torque.  The generalized coordinate vector is

    q = [root_x, root_y, root_pitch, joint_0, ..., joint_{J-1}]

Angles are measured counter-clockwise.  A link's direction unit vector is
``u(a) = (sin a, -cos a)``, so a leg link with absolute angle zero hangs
straight down and the torso (which carries a fixed offset of pi) points
straight up.  A joint angle of zero leaves the child link aligned with its
parent's axis.

Because the tree is planar and every absolute link angle is an affine
function of q, the kinematics of the whole mechanism reduce to a handful of
constant coefficient matrices that are precomputed when the model is built:

``angle_matrix``
    (L, 3+J) matrix W with ``absolute_angle = W @ q + angle_offset``.
``attach_coeff`` / ``com_coeff`` / ``distal_coeff``
    (L, L) matrices C such that the corresponding point of link i is
    ``root + (C @ U)[i]`` where ``U[k] = u(absolute_angle_k)``.

Links are uniform thin rods: the center of mass sits at the midpoint and the
moment of inertia about it is ``m * length**2 / 12``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ContractViolation

ROOT_DOF = 3


@dataclass(frozen=True)
class LinkSpec:
    """One rigid link of the tree.

    ``parent`` is a link index or -1 for the root frame.  ``attach`` is the
    fraction along the parent where this link is pinned (0 = proximal end,
    1 = distal end); ignored for root children, which attach at the root
    point.  ``joint`` is the index of the revolute joint driving this link,
    or -1 if the link is rigidly welded to its parent.  ``offset`` is the
    fixed angle added on top of the parent axis.
    """

    name: str
    parent: int
    attach: float
    joint: int
    offset: float
    length: float
    mass: float


@dataclass(eq=False)
class EmbodimentModel:
    links: tuple[LinkSpec, ...]
    joint_limits: np.ndarray       # (J, 2) lower/upper, radians
    torque_limits: np.ndarray      # (J,) symmetric bound, N*m
    kp: np.ndarray                 # (J,) proportional gains
    kd: np.ndarray                 # (J,) derivative gains
    foot_links: tuple[int, ...]    # links whose distal endpoints touch ground
    nominal_pose: np.ndarray       # (J,) joint angles of the resting stance
    gravity: float = 9.81

    # Derived, filled by __post_init__.
    angle_matrix: np.ndarray = field(init=False, repr=False)
    angle_offsets: np.ndarray = field(init=False, repr=False)
    attach_coeff: np.ndarray = field(init=False, repr=False)
    com_coeff: np.ndarray = field(init=False, repr=False)
    distal_coeff: np.ndarray = field(init=False, repr=False)
    lengths: np.ndarray = field(init=False, repr=False)
    masses: np.ndarray = field(init=False, repr=False)
    inertias: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self.joint_limits = np.asarray(self.joint_limits, dtype=np.float64).reshape(-1, 2)
        self.torque_limits = np.asarray(self.torque_limits, dtype=np.float64).ravel()
        self.kp = np.asarray(self.kp, dtype=np.float64).ravel()
        self.kd = np.asarray(self.kd, dtype=np.float64).ravel()
        self.nominal_pose = np.asarray(self.nominal_pose, dtype=np.float64).ravel()
        self._validate()
        self._build_tables()

    # -- basic shape accessors -------------------------------------------------

    @property
    def link_count(self) -> int:
        return len(self.links)

    @property
    def joint_count(self) -> int:
        return int(self.joint_limits.shape[0])

    @property
    def dof(self) -> int:
        """Dimension of q: three root coordinates plus one per joint."""
        return ROOT_DOF + self.joint_count

    @property
    def link_names(self) -> tuple[str, ...]:
        return tuple(s.name for s in self.links)

    # -- validation ------------------------------------------------------------

    def _validate(self) -> None:
        n_links = len(self.links)
        n_joints = self.joint_limits.shape[0]
        if n_links < 1:
            raise ContractViolation("embodiment needs at least one link")
        seen_joints = set()
        for i, s in enumerate(self.links):
            if not (-1 <= s.parent < i):
                raise ContractViolation(
                    f"link {s.name!r}: parent must precede the link (got {s.parent})")
            if s.attach not in (0.0, 1.0):
                raise ContractViolation(f"link {s.name!r}: attach must be 0 or 1")
            if s.length <= 0 or s.mass <= 0:
                raise ContractViolation(f"link {s.name!r}: length and mass must be positive")
            if s.joint >= 0:
                if s.joint >= n_joints:
                    raise ContractViolation(f"link {s.name!r}: joint index out of range")
                if s.joint in seen_joints:
                    raise ContractViolation(f"joint {s.joint} drives more than one link")
                seen_joints.add(s.joint)
        if len(seen_joints) != n_joints:
            raise ContractViolation("every joint must drive exactly one link")
        for arr, name in ((self.torque_limits, "torque_limits"), (self.kp, "kp"),
                          (self.kd, "kd"), (self.nominal_pose, "nominal_pose")):
            if arr.shape != (n_joints,):
                raise ContractViolation(f"{name} must have one entry per joint")
        if np.any(self.joint_limits[:, 0] >= self.joint_limits[:, 1]):
            raise ContractViolation("joint limits must satisfy lower < upper")
        if np.any(self.torque_limits <= 0) or np.any(self.kp < 0) or np.any(self.kd < 0):
            raise ContractViolation("torque limits must be positive and gains non-negative")
        if np.any(self.nominal_pose < self.joint_limits[:, 0]) or \
                np.any(self.nominal_pose > self.joint_limits[:, 1]):
            raise ContractViolation("nominal pose violates joint limits")
        for f in self.foot_links:
            if not (0 <= f < n_links):
                raise ContractViolation("foot link index out of range")
        if self.gravity < 0:
            raise ContractViolation("gravity magnitude must be non-negative")

    # -- precomputed kinematic tables -------------------------------------------

    def _build_tables(self) -> None:
        n_links = self.link_count
        n = self.dof
        self.lengths = np.array([s.length for s in self.links], dtype=np.float64)
        self.masses = np.array([s.mass for s in self.links], dtype=np.float64)
        self.inertias = self.masses * self.lengths ** 2 / 12.0

        W = np.zeros((n_links, n))
        off = np.zeros(n_links)
        A = np.zeros((n_links, n_links))
        W[:, 2] = 1.0  # every link angle rides on root pitch
        for i, s in enumerate(self.links):
            if s.parent >= 0:
                W[i] = W[s.parent].copy()
                W[i, 2] = 1.0
                off[i] = off[s.parent] + s.offset
                A[i] = A[s.parent]
                A[i, s.parent] += s.attach * self.links[s.parent].length
            else:
                off[i] = s.offset
            if s.joint >= 0:
                W[i, ROOT_DOF + s.joint] += 1.0
        self.angle_matrix = W
        self.angle_offsets = off
        self.attach_coeff = A
        self.com_coeff = A + np.diag(self.lengths * 0.5)
        self.distal_coeff = A + np.diag(self.lengths)

    # -- convenience -----------------------------------------------------------

    @property
    def total_mass(self) -> float:
        return float(self.masses.sum())

    def standing_height(self) -> float:
        """Root height at which the lowest foot touches the ground in the
        nominal pose with zero pitch."""
        from .simulator import foot_points  # local import to avoid a cycle

        q = np.zeros(self.dof)
        q[ROOT_DOF:] = self.nominal_pose
        feet = foot_points(self, q)
        return float(-feet[:, 1].min())

    def nominal_state(self) -> np.ndarray:
        """Full q for resting on the ground in the nominal pose."""
        q = np.zeros(self.dof)
        q[1] = self.standing_height()
        q[ROOT_DOF:] = self.nominal_pose
        return q


# -- config file I/O ------------------------------------------------------------
#
# Plain line-oriented text:  "key = value" with "#" comments.  Link lines pack
# the whole LinkSpec; joints carry limits/torque/gains.  repr-formatted floats
# keep write/read round-trips exact.

_FORMAT_VERSION = 1


def default_biped() -> EmbodimentModel:
    """Five-link planar biped: torso plus two thigh+shank legs, ~10 kg."""
    links = (
        LinkSpec("torso", -1, 0.0, -1, np.pi, 0.50, 6.0),
        LinkSpec("thigh_l", -1, 0.0, 0, 0.0, 0.40, 1.2),
        LinkSpec("shank_l", 1, 1.0, 1, 0.0, 0.40, 0.8),
        LinkSpec("thigh_r", -1, 0.0, 2, 0.0, 0.40, 1.2),
        LinkSpec("shank_r", 3, 1.0, 3, 0.0, 0.40, 0.8),
    )
    return EmbodimentModel(
        links=links,
        joint_limits=np.array([[-2.4, 2.4]] * 4),
        torque_limits=np.array([120.0, 120.0, 120.0, 120.0]),
        kp=np.array([220.0, 220.0, 220.0, 220.0]),
        kd=np.array([14.0, 14.0, 14.0, 14.0]),
        foot_links=(2, 4),
        nominal_pose=np.array([0.25, -0.10, -0.25, 0.10]),
    )


def save_embodiment(model: EmbodimentModel, path: str | Path) -> None:
    lines = [f"format_version = {_FORMAT_VERSION}", f"gravity = {model.gravity!r}",
             f"link_count = {model.link_count}", f"joint_count = {model.joint_count}"]
    for i, s in enumerate(model.links):
        lines.append(
            f"link.{i} = {s.name} {s.parent} {s.attach!r} {s.joint} "
            f"{s.offset!r} {s.length!r} {s.mass!r}")
    for j in range(model.joint_count):
        lo, hi = model.joint_limits[j]
        lines.append(
            f"joint.{j} = limits={float(lo)!r},{float(hi)!r} "
            f"torque={float(model.torque_limits[j])!r} "
            f"kp={float(model.kp[j])!r} kd={float(model.kd[j])!r}")
    lines.append("foot_links = " + ",".join(str(f) for f in model.foot_links))
    lines.append("nominal_pose = " + ",".join(repr(float(v))
                                              for v in model.nominal_pose))
    Path(path).write_text("\n".join(lines) + "\n")


def load_embodiment(path: str | Path) -> EmbodimentModel:
    entries: dict[str, str] = {}
    for raw in Path(path).read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ContractViolation(f"malformed config line: {raw!r}")
        key, val = line.split("=", 1)
        entries[key.strip()] = val.strip()
    try:
        version = int(entries["format_version"])
        if version != _FORMAT_VERSION:
            raise ContractViolation(f"unsupported config format version {version}")
        n_links = int(entries["link_count"])
        n_joints = int(entries["joint_count"])
        links = []
        for i in range(n_links):
            parts = entries[f"link.{i}"].split()
            if len(parts) != 7:
                raise ContractViolation(f"link.{i} must have 7 fields")
            links.append(LinkSpec(parts[0], int(parts[1]), float(parts[2]),
                                  int(parts[3]), float(parts[4]), float(parts[5]),
                                  float(parts[6])))
        limits = np.zeros((n_joints, 2))
        torque = np.zeros(n_joints)
        kp = np.zeros(n_joints)
        kd = np.zeros(n_joints)
        for j in range(n_joints):
            fields = dict(tok.split("=", 1) for tok in entries[f"joint.{j}"].split())
            limits[j] = [float(v) for v in fields["limits"].split(",")]
            torque[j] = float(fields["torque"])
            kp[j] = float(fields["kp"])
            kd[j] = float(fields["kd"])
        feet = tuple(int(tok) for tok in entries["foot_links"].split(","))
        pose = np.array([float(tok) for tok in entries["nominal_pose"].split(",")])
        return EmbodimentModel(
            links=tuple(links), joint_limits=limits, torque_limits=torque,
            kp=kp, kd=kd, foot_links=feet, nominal_pose=pose,
            gravity=float(entries["gravity"]))
    except KeyError as exc:
        raise ContractViolation(f"config missing entry {exc}") from exc
