"""Rigid-body dynamics and integration for planar link trees.

State layout, angle conventions and the precomputed coefficient matrices are
documented in :mod:`physmo.embodiment`.  Dynamics follow from d'Alembert's
principle.  With ``p_i = root + (C @ U)_i`` (C a constant matrix, ``U`` the
stack of link direction vectors) the center-of-mass Jacobians are

    J_i = [I_2 | sum_k C[i, k] * u'(a_k) * W[k, :]]

and, because link angles are affine in q, the angular rows contribute no
velocity-product terms: the only bias is translational,

    Jdot_i qdot = -sum_k C[i, k] * u(a_k) * adot_k**2     (since u'' = -u).

The mass matrix is ``M = sum_i m_i J_i^T J_i + I_i W_i^T W_i`` and

    M qddot = Q_applied + sum_i m_i J_i^T (g_vec - Jdot_i qdot).

Ground contact is a one-sided penalty at each foot link's distal endpoint:
a normal spring-damper (clamped to push only) plus regularized Coulomb
friction ``f_t = -mu * f_n * tanh(vx / stiction_vel)``.  The friction slope
near zero velocity (mu * f_n / stiction_vel) is far too stiff for explicit
millisecond substeps, so ``step`` evaluates the friction law implicitly at
the end-of-step tangential velocity (a tiny damped-Newton solve per substep).
Joint limits add one-sided penalty torques.

Integration updates velocity first from forces at the current state, then
position with the average of old and new velocity (kick-drift form), which
reproduces constant-acceleration arcs exactly at one force evaluation per
substep.

Everything below is written over a leading batch axis so that many rollouts
advance in lockstep; the single-state API is the B = 1 case of the same code
path.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .embodiment import ROOT_DOF, EmbodimentModel
from .errors import ContractViolation, SimulationDiverged


@dataclass
class SimSettings:
    """Ground-contact and joint-limit penalty constants."""

    contact_stiffness: float = 2.0e4     # N/m
    contact_damping: float = 2.0e2       # N*s/m, one-sided
    friction_mu: float = 0.8
    stiction_vel: float = 0.01           # m/s, tanh regularization scale
    limit_stiffness: float = 300.0       # N*m/rad
    limit_damping: float = 2.0           # N*m*s/rad


DEFAULT_SETTINGS = SimSettings()


@dataclass
class SimState:
    q: np.ndarray
    qdot: np.ndarray
    t: float = 0.0

    def __post_init__(self) -> None:
        self.q = np.asarray(self.q, dtype=np.float64).ravel()
        self.qdot = np.asarray(self.qdot, dtype=np.float64).ravel()
        if self.q.shape != self.qdot.shape:
            raise ContractViolation("q and qdot must have the same shape")

    def copy(self) -> "SimState":
        return SimState(self.q.copy(), self.qdot.copy(), self.t)


# -- kinematics -------------------------------------------------------------------


def link_angles(model: EmbodimentModel, q: np.ndarray) -> np.ndarray:
    """Absolute link angles; q may carry leading batch axes."""
    return q @ model.angle_matrix.T + model.angle_offsets


def _directions(alpha: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Unit vectors u(a) = (sin a, -cos a) and derivatives u'(a)."""
    sa, ca = np.sin(alpha), np.cos(alpha)
    return np.stack((sa, -ca), axis=-1), np.stack((ca, sa), axis=-1)


def forward_kinematics(model: EmbodimentModel, q: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Proximal and distal endpoint positions of every link, each (L, 2)."""
    q = np.asarray(q, dtype=np.float64)
    if q.shape != (model.dof,):
        raise ContractViolation(f"q must have shape ({model.dof},)")
    U, _ = _directions(link_angles(model, q))
    root = q[:2]
    prox = root + model.attach_coeff @ U
    dist = root + model.distal_coeff @ U
    return prox, dist


def com_points(model: EmbodimentModel, q: np.ndarray) -> np.ndarray:
    U, _ = _directions(link_angles(model, q))
    return q[:2] + model.com_coeff @ U


def foot_points(model: EmbodimentModel, q: np.ndarray) -> np.ndarray:
    """Distal endpoints of the foot links, (n_feet, 2)."""
    _, dist = forward_kinematics(model, q)
    return dist[list(model.foot_links)]


def _point_jacobians(model: EmbodimentModel, coeff_rows: np.ndarray,
                     Up: np.ndarray) -> np.ndarray:
    """Point Jacobians for coefficient rows: (..., P, 2, dof).

    ``Up`` may be (L, 2) or batched (B, L, 2).
    """
    J = np.einsum("pk,...kx,kn->...pxn", coeff_rows, Up, model.angle_matrix)
    J[..., 0, 0] += 1.0
    J[..., 1, 1] += 1.0
    return J


# -- batched dynamics ---------------------------------------------------------------


def _batch_dynamics(model: EmbodimentModel, Q: np.ndarray, Qd: np.ndarray,
                    tau: np.ndarray, settings: SimSettings):
    """Mass matrices, frictionless force, and tangential contact data.

    Q, Qd: (B, dof); tau: (B, joints) already clamped.
    Returns M (B,n,n), rhs (B,n), fn (B,nf), Jt (B,nf,n), vt (B,nf).
    """
    B = Q.shape[0]
    n = model.dof
    W = model.angle_matrix
    alpha = Q @ W.T + model.angle_offsets
    U, Up = _directions(alpha)                     # (B, L, 2)

    J = _point_jacobians(model, model.com_coeff, Up)        # (B, L, 2, n)
    Jf = J.reshape(B, 2 * model.link_count, n)
    m2 = np.repeat(model.masses, 2)
    M = Jf.transpose(0, 2, 1) @ (m2[None, :, None] * Jf)
    M += (W.T @ (model.inertias[:, None] * W))[None]

    adot = Qd @ W.T                                          # (B, L)
    bias = -np.matmul(model.com_coeff[None], adot[..., None] ** 2 * U)
    force = -bias
    force[..., 1] -= model.gravity
    rhs = (Jf.transpose(0, 2, 1) @ (m2[:, None] * force.reshape(B, -1, 1)))[..., 0]

    qj = Q[:, ROOT_DOF:]
    vj = Qd[:, ROOT_DOF:]
    lo, hi = model.joint_limits[:, 0], model.joint_limits[:, 1]
    over = np.maximum(qj - hi, 0.0)
    under = np.maximum(lo - qj, 0.0)
    tau_lim = settings.limit_stiffness * (under - over)
    tau_lim -= settings.limit_damping * vj * ((over > 0) | (under > 0))
    rhs[:, ROOT_DOF:] += tau + tau_lim

    feet = list(model.foot_links)
    pos = Q[:, None, :2] + np.matmul(model.distal_coeff[feet][None], U)  # (B, nf, 2)
    Jp = _point_jacobians(model, model.distal_coeff[feet], Up)           # (B, nf, 2, n)
    nf = len(feet)
    vel = (Jp.reshape(B, nf * 2, n) @ Qd[..., None]).reshape(B, nf, 2)
    pen = pos[..., 1] < 0.0
    fn = np.where(pen, settings.contact_stiffness * (-pos[..., 1])
                  - settings.contact_damping * vel[..., 1], 0.0)
    fn = np.maximum(fn, 0.0)
    rhs += (Jp[:, :, 1, :] * fn[..., None]).sum(axis=1)
    Jt = Jp[:, :, 0, :]
    vt = vel[..., 0]
    return M, rhs, fn, Jt, vt


def _implicit_friction(fn: np.ndarray, Wf: np.ndarray, vpred: np.ndarray,
                       h: float, settings: SimSettings) -> np.ndarray:
    """Solve f = -mu*fn*tanh((vpred + h Wf f)/v_reg) batched, damped Newton.

    fn (B, nf), Wf (B, nf, nf) PSD, vpred (B, nf).  Unloaded rows (fn = 0)
    solve to f = 0 automatically.  Iteration counts and tolerances are fixed
    so identical inputs give identical forces.
    """
    B, nf = fn.shape
    scale = settings.friction_mu * fn
    vreg = settings.stiction_vel
    eye = np.eye(nf)
    f = np.zeros((B, nf))

    def residual(fv):
        arg = (vpred + h * (Wf @ fv[..., None])[..., 0]) / vreg
        t = np.tanh(arg)
        return fv + scale * t, t

    res, t = residual(f)
    tol = 1.0e-12 * max(1.0, float(scale.max(initial=0.0)))
    for _ in range(60):
        worst = np.abs(res).max(axis=1)
        if worst.max(initial=0.0) < tol:
            break
        jac = eye[None] + (scale * (1.0 - t * t) / vreg)[..., None] * (h * Wf)
        delta = np.linalg.solve(jac, res[..., None])[..., 0]
        factor = np.ones((B, 1))
        new_f = f - delta
        new_res, new_t = residual(new_f)
        for _ in range(30):
            bad = np.abs(new_res).max(axis=1) > np.maximum(worst, tol)
            if not bad.any():
                break
            factor[bad] *= 0.5
            new_f = f - factor * delta
            new_res, new_t = residual(new_f)
        f, res, t = new_f, new_res, new_t
    return f


def step_many(model: EmbodimentModel, Q: np.ndarray, Qd: np.ndarray,
              torques: np.ndarray, h: float,
              settings: SimSettings = DEFAULT_SETTINGS,
              active: np.ndarray | None = None):
    """Advance a batch of states one substep.

    Q, Qd: (B, dof); torques: (B, joints).  ``active`` marks rows to advance;
    inactive rows pass through untouched.  Returns (Q', Qd', ok) where ok
    flags rows that stayed finite (rows that blow up keep their inputs and
    come back with ok = False rather than raising).
    """
    if h <= 0:
        raise ContractViolation("substep length must be positive")
    B = Q.shape[0]
    tau = np.clip(torques, -model.torque_limits, model.torque_limits)
    # Blown-up rows are reported through ok, not warnings.
    with np.errstate(all="ignore"):
        M, rhs, fn, Jt, vt = _batch_dynamics(model, Q, Qd, tau, settings)

    stacked = np.concatenate((rhs[..., None], Jt.transpose(0, 2, 1)), axis=2)
    try:
        sol = np.linalg.solve(M, stacked)
    except np.linalg.LinAlgError:
        # Some row is singular (already blown up); fall back row by row.
        sol = np.zeros_like(stacked)
        bad = np.zeros(B, dtype=bool)
        for b in range(B):
            try:
                sol[b] = np.linalg.solve(M[b], stacked[b])
            except np.linalg.LinAlgError:
                bad[b] = True
        sol[bad] = np.nan
    qdd0 = sol[..., 0]
    minv_jt = sol[..., 1:]
    Wf = Jt @ minv_jt
    vpred = vt + h * (Jt @ qdd0[..., None])[..., 0]
    with np.errstate(all="ignore"):
        fr = _implicit_friction(np.nan_to_num(fn), np.nan_to_num(Wf),
                                np.nan_to_num(vpred), h, settings)
    qdd = qdd0 + (minv_jt @ fr[..., None])[..., 0]

    Qd_new = Qd + h * qdd
    Q_new = Q + 0.5 * h * (Qd + Qd_new)
    ok = np.isfinite(Q_new).all(axis=1) & np.isfinite(Qd_new).all(axis=1)
    keep = ~ok if active is None else (~ok | ~active)
    if keep.any():
        Q_new[keep] = Q[keep]
        Qd_new[keep] = Qd[keep]
    return Q_new, Qd_new, ok


def step(model: EmbodimentModel, state: SimState, joint_torques: np.ndarray,
         h: float, settings: SimSettings = DEFAULT_SETTINGS) -> SimState:
    """One substep for a single state; raises on divergence."""
    joint_torques = np.asarray(joint_torques, dtype=np.float64).ravel()
    if joint_torques.shape != (model.joint_count,):
        raise ContractViolation("one torque per joint required")
    if not (np.all(np.isfinite(state.q)) and np.all(np.isfinite(state.qdot))
            and np.all(np.isfinite(joint_torques))):
        raise ContractViolation("non-finite state or torques")
    Q, Qd, ok = step_many(model, state.q[None], state.qdot[None],
                          joint_torques[None], h, settings)
    if not ok[0]:
        raise SimulationDiverged("integrator produced non-finite state", time=state.t)
    return SimState(Q[0], Qd[0], state.t + h)


def acceleration(model: EmbodimentModel, q: np.ndarray, qdot: np.ndarray,
                 joint_torques: np.ndarray,
                 settings: SimSettings = DEFAULT_SETTINGS) -> np.ndarray:
    """Instantaneous qddot with friction evaluated at the current velocity.

    Diagnostic form of the dynamics; ``step`` resolves friction implicitly
    against the end-of-step velocity instead.
    """
    tau = np.clip(np.asarray(joint_torques, dtype=np.float64),
                  -model.torque_limits, model.torque_limits)
    M, rhs, fn, Jt, vt = _batch_dynamics(model, q[None], qdot[None],
                                         tau[None], settings)
    ft = -settings.friction_mu * fn * np.tanh(vt / settings.stiction_vel)
    rhs = rhs + (Jt * ft[..., None]).sum(axis=1)
    return np.linalg.solve(M[0], rhs[0])


def foot_contact_forces(model: EmbodimentModel, q: np.ndarray, qdot: np.ndarray,
                        settings: SimSettings = DEFAULT_SETTINGS) -> np.ndarray:
    """Per-foot (tangential, normal) contact force at the current state.

    Friction here is the instantaneous (explicit) value; inside ``step`` the
    tangential component is resolved implicitly, so treat this as a summary
    for flags and plots, with the normal component the authoritative part.
    """
    zero = np.zeros(model.joint_count)
    _, _, fn, _, vt = _batch_dynamics(model, q[None], qdot[None], zero[None], settings)
    ft = -settings.friction_mu * fn * np.tanh(vt / settings.stiction_vel)
    return np.stack((ft[0], fn[0]), axis=1)


def normal_forces_many(model: EmbodimentModel, Q: np.ndarray, Qd: np.ndarray,
                       settings: SimSettings = DEFAULT_SETTINGS) -> np.ndarray:
    """Normal contact force per foot for a batch of states, (B, nf)."""
    feet = list(model.foot_links)
    U, Up = _directions(Q @ model.angle_matrix.T + model.angle_offsets)
    pos = Q[:, None, :2] + np.matmul(model.distal_coeff[feet][None], U)
    Jp = _point_jacobians(model, model.distal_coeff[feet], Up)
    B, nf = pos.shape[:2]
    vel = (Jp.reshape(B, nf * 2, model.dof) @ Qd[..., None]).reshape(B, nf, 2)
    fn = np.where(pos[..., 1] < 0.0,
                  settings.contact_stiffness * (-pos[..., 1])
                  - settings.contact_damping * vel[..., 1], 0.0)
    return np.maximum(fn, 0.0)


# -- diagnostics used by conservation checks ---------------------------------------


def mass_matrix(model: EmbodimentModel, q: np.ndarray) -> np.ndarray:
    _, Up = _directions(link_angles(model, q))
    J = _point_jacobians(model, model.com_coeff, Up)
    Jf = J.reshape(2 * model.link_count, model.dof)
    m2 = np.repeat(model.masses, 2)
    M = (m2[:, None] * Jf).T @ Jf
    W = model.angle_matrix
    return M + W.T @ (model.inertias[:, None] * W)


def total_energy(model: EmbodimentModel, q: np.ndarray, qdot: np.ndarray) -> float:
    """Kinetic plus gravitational potential energy (contact/limit penalties
    excluded, so this is conserved only away from ground and limits)."""
    T = 0.5 * float(qdot @ (mass_matrix(model, q) @ qdot))
    V = model.gravity * float(model.masses @ com_points(model, q)[:, 1])
    return T + V


def linear_momentum(model: EmbodimentModel, q: np.ndarray, qdot: np.ndarray) -> np.ndarray:
    _, Up = _directions(link_angles(model, q))
    J = _point_jacobians(model, model.com_coeff, Up)
    vel = J @ qdot
    return model.masses @ vel


def ballistic_point(q0: np.ndarray, qdot0: np.ndarray, g: float, t: float) -> np.ndarray:
    """Closed-form root translation under gravity alone (reference for tests)."""
    out = np.asarray(q0, dtype=np.float64).copy()
    out[0] += qdot0[0] * t
    out[1] += qdot0[1] * t - 0.5 * g * t * t
    return out
