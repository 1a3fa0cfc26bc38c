"""Measurement models, their residuals, and the energy observation channel.

Residuals follow the "measured minus predicted" convention, with manifold
channels differenced through the group logarithm.  The energy channel follows
the work balance over one integration interval:

    r = yE - [ T(x'; pi) - T(x; pi) + T_f(v; theta) ]

with x' the deterministic semi-implicit step from (x, a) and T_f the
left-endpoint quadrature of the generalized friction power.  That keeps the
residual a node-local function of (x, a, theta), so its exact derivatives
chain through the integrator step Jacobians.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .derivatives import energy_derivatives
from .dynamics import config_step_jacobians, integrate_config
from .liegroups import jlog_so3, log_so3, quat_to_rot
from .model import Materialized, RobotModel, actuation_effort

CHANNELS = ("joint_position", "joint_velocity", "base_orientation",
            "base_angular_velocity", "energy")


@dataclass
class ObservationSpec:
    channel: str
    node: int
    value: np.ndarray          # measurement z (quaternion wxyz for orientation)
    cov: np.ndarray            # (d, d) SPD covariance

    def __post_init__(self):
        if self.channel not in CHANNELS:
            raise ValueError(f"unknown channel {self.channel}")
        self.value = np.atleast_1d(np.asarray(self.value, dtype=float))
        self.cov = np.atleast_2d(np.asarray(self.cov, dtype=float))


def scalar_joint_dofs(model: RobotModel):
    """Tangent dofs of all 1-dof joints, in body order."""
    return np.array([model.idx_v[i] for i, b in enumerate(model.bodies)
                     if b.joint_type != "floating"], dtype=int)


def scalar_joint_qidx(model: RobotModel):
    return np.array([model.idx_q[i] for i, b in enumerate(model.bodies)
                     if b.joint_type != "floating"], dtype=int)


def floating_base_index(model: RobotModel):
    for i, b in enumerate(model.bodies):
        if b.joint_type == "floating":
            return i
    return None


def generalized_friction(model, v, mat: Materialized):
    """Generalized friction force row vector and its derivatives.

    Returns (f, df_dv diagonal, df_dtheta) with f entering the dynamics as
    tau = S u_cmd - f.
    """
    n_act = 0 if model.actuation is None else len(model.actuation.bodies)
    tau0, dv0, dth0 = actuation_effort(model, v, mat, np.zeros(n_act))
    return -tau0, -dv0, -dth0


def friction_dissipation(model, v, mat, dt):
    """Left-endpoint quadrature of friction power over one step.

    Returns (T_f, dT_f/dv, dT_f/dtheta); nonnegative whenever the friction
    coefficients satisfy the dissipativity constraints.
    """
    f, df_dv, df_dth = generalized_friction(model, v, mat)
    T_f = dt * float(v @ f)
    dT_dv = dt * (f + v * df_dv)
    dT_dth = dt * (v @ df_dth)
    return T_f, dT_dv, dT_dth


def measured_input_energy(t, v_rows, u_rows):
    """Trapezoidal actuated-joint input energy per interval.

    t is (N,), v_rows/u_rows are (N, n_act) of measured velocity and command;
    returns (N-1,) with entry k covering [t_k, t_{k+1}].
    """
    t = np.asarray(t, dtype=float)
    if t.size < 2:
        raise ValueError("need at least two samples")
    p = np.sum(np.asarray(v_rows) * np.asarray(u_rows), axis=1)
    dt = np.diff(t)
    return 0.5 * (p[:-1] + p[1:]) * dt


@dataclass
class ObservationBlocks:
    r: np.ndarray
    dr_dx: np.ndarray          # d x (2 nv) tangent Jacobian
    dr_da: np.ndarray | None   # d x nv, energy channel only
    dr_dth: np.ndarray | None  # d x ntheta, channels touching theta


def residual_and_jacobians(model: RobotModel, spec: ObservationSpec, q, v,
                           mat: Materialized = None, a=None, dt=None) -> ObservationBlocks:
    """Residual z (-) h(x; theta) and its exact tangent Jacobians."""
    nv = model.nv
    ch = spec.channel
    if ch == "joint_position":
        dofs = scalar_joint_dofs(model)
        qidx = scalar_joint_qidx(model)
        r = spec.value - q[qidx]
        J = np.zeros((r.size, 2 * nv))
        J[np.arange(r.size), dofs] = -1.0
        return ObservationBlocks(r, J, None, None)
    if ch == "joint_velocity":
        dofs = scalar_joint_dofs(model)
        r = spec.value - v[dofs]
        J = np.zeros((r.size, 2 * nv))
        J[np.arange(r.size), nv + dofs] = -1.0
        return ObservationBlocks(r, J, None, None)
    if ch == "base_orientation":
        fb = floating_base_index(model)
        if fb is None:
            raise ValueError("model has no floating base")
        iq, iv = model.idx_q[fb], model.idx_v[fb]
        R = quat_to_rot(q[iq + 3:iq + 7])
        Rz = quat_to_rot(spec.value)
        T = R.T @ Rz
        r = log_so3(T)
        J = np.zeros((3, 2 * nv))
        J[:, iv:iv + 3] = -jlog_so3(T) @ T.T
        return ObservationBlocks(r, J, None, None)
    if ch == "base_angular_velocity":
        fb = floating_base_index(model)
        if fb is None:
            raise ValueError("model has no floating base")
        iv = model.idx_v[fb]
        r = spec.value - v[iv:iv + 3]
        J = np.zeros((3, 2 * nv))
        J[:, nv + iv:nv + iv + 3] = -1.0
        return ObservationBlocks(r, J, None, None)
    if ch == "energy":
        if a is None or dt is None or mat is None:
            raise ValueError("energy channel needs (a, dt, materialized params)")
        return _energy_residual(model, spec, q, v, a, dt, mat)
    raise ValueError(ch)


def _energy_residual(model, spec, q, v, a, dt, mat):
    nv = model.nv
    v2 = v + a * dt
    step = v2 * dt
    q2 = integrate_config(model, q, step)
    dK_dq, dK_dv, dU_dq, YK, YU = energy_derivatives(model, q, v, pi=mat.pi)
    dK2_dq, dK2_dv, dU2_dq, YK2, YU2 = energy_derivatives(model, q2, v2, pi=mat.pi)
    pi_flat = mat.pi.reshape(-1)
    T0 = YK @ pi_flat + YU @ pi_flat
    T1 = YK2 @ pi_flat + YU2 @ pi_flat
    Tf, dTf_dv, dTf_dth = friction_dissipation(model, v, mat, dt)
    r = spec.value - (T1 - T0 + Tf)
    # chain through q2 = integrate(q, v2 dt)
    Jq, Jd = config_step_jacobians(model, q, step)
    dT1_dq2 = dK2_dq + dU2_dq
    h_dq = dT1_dq2 @ Jq - (dK_dq + dU_dq)
    h_dv = dT1_dq2 @ Jd * dt + dK2_dv - dK_dv + dTf_dv
    h_da = (dT1_dq2 @ Jd * dt + dK2_dv) * dt
    dY = (YK2 + YU2) - (YK + YU)
    h_dth = np.array(dTf_dth, dtype=float).copy()
    for bi in mat.layout.inertial_bodies:
        sl, dpi = mat.dpi_dtheta(bi)
        h_dth[sl] += dY[10 * bi:10 * bi + 10] @ dpi
    J = np.zeros((1, 2 * nv))
    J[0, :nv] = -h_dq
    J[0, nv:] = -h_dv
    return ObservationBlocks(np.array([r]).reshape(1), J,
                             -h_da.reshape(1, nv), -h_dth.reshape(1, -1))
