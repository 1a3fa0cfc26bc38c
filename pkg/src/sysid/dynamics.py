"""Tree dynamics with bilateral contacts and loop closures.

All internal kinematic quantities live in world coordinates: joint motion
columns, body spatial velocities/accelerations, and spatial inertias are
expressed in the world frame, which keeps every configuration derivative a
plain spatial cross product.  Constraint-frame quantities are mapped back
with the adjoint of the (possibly world-aligned) constraint placement.

Mode dynamics and reset maps solve the saddle-point system

    [ M   G^T ] [ a  ]   [ tau - h ]        [ M   G^T ] [ v+ ]   [ M v- ]
    [ G   0   ] [ -f ] = [ b_a     ]  and   [ G   0   ] [ -L ] = [ b_v  ]

via a Cholesky factorization of M and of the constraint Schur complement;
the factorization handle is reused by derivative and projection routines.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .liegroups import (
    Transform,
    crf,
    cross_force,
    cross_motion,
    exp_se3,
    hat,
    jlog_se3,
    log_se3,
    quat_to_rot,
    rot_to_quat,
)
from .model import JOINT_NQ, JOINT_NV, RobotModel, unvech

GRAVITY_DIM = 6


class RankDeficientConstraints(RuntimeError):
    """Constraint Jacobian lost row rank; identification must not continue."""


# ---------------------------------------------------------------------------
# configuration manifold helpers
# ---------------------------------------------------------------------------

def joint_transform(body, q_j):
    """Parent-to-child transform of one joint at configuration slice q_j."""
    if body.joint_type == "revolute":
        from .liegroups import exp_so3
        return body.joint_placement.compose(
            Transform(exp_so3(body.axis * q_j[0]), np.zeros(3)))
    if body.joint_type == "prismatic":
        return body.joint_placement.compose(
            Transform(np.eye(3), body.axis * q_j[0]))
    if body.joint_type == "floating":
        return body.joint_placement.compose(
            Transform(quat_to_rot(q_j[3:7]), q_j[:3]))
    raise ValueError(body.joint_type)


def integrate_config(model: RobotModel, q, dq):
    """Retract a tangent step: scalar joints add, floating joints compose."""
    q2 = np.array(q, dtype=float)
    for i, b in enumerate(model.bodies):
        iq, iv = model.idx_q[i], model.idx_v[i]
        if b.joint_type == "floating":
            R = quat_to_rot(q[iq + 3:iq + 7])
            p = q[iq:iq + 3]
            E = exp_se3(dq[iv:iv + 6])
            q2[iq:iq + 3] = R @ E.trans + p
            q2[iq + 3:iq + 7] = rot_to_quat(R @ E.rot)
        else:
            q2[iq] = q[iq] + dq[iv]
    return q2


def difference_config(model: RobotModel, q0, q1):
    """Tangent dq with integrate_config(q0, dq) == q1."""
    dq = np.zeros(model.nv)
    for i, b in enumerate(model.bodies):
        iq, iv = model.idx_q[i], model.idx_v[i]
        if b.joint_type == "floating":
            R0, p0 = quat_to_rot(q0[iq + 3:iq + 7]), q0[iq:iq + 3]
            R1, p1 = quat_to_rot(q1[iq + 3:iq + 7]), q1[iq:iq + 3]
            T = Transform(R0, p0).inverse().compose(Transform(R1, p1))
            dq[iv:iv + 6] = log_se3(T)
        else:
            dq[iv] = q1[iq] - q0[iq]
    return dq


def config_step_jacobians(model: RobotModel, q, dq):
    """Tangent Jacobians of q' = integrate_config(q, dq).

    Returns (Jq, Jd) with d(q' tangent) = Jq d(q tangent) + Jd d(dq); both are
    identity except on floating-joint blocks.
    """
    nv = model.nv
    Jq = np.eye(nv)
    Jd = np.eye(nv)
    for i, b in enumerate(model.bodies):
        if b.joint_type != "floating":
            continue
        iv = model.idx_v[i]
        xi = dq[iv:iv + 6]
        E = exp_se3(xi)
        Jq[iv:iv + 6, iv:iv + 6] = E.inverse().adjoint()
        # right Jacobian of exp: inverse of jlog at exp(xi)
        Jd[iv:iv + 6, iv:iv + 6] = np.linalg.inv(jlog_se3(E))
    return Jq, Jd


def config_diff_jacobians(model: RobotModel, q0, q1):
    """Tangent Jacobians of d = difference_config(q0, q1) w.r.t. both arguments."""
    nv = model.nv
    J0 = -np.eye(nv)
    J1 = np.eye(nv)
    for i, b in enumerate(model.bodies):
        if b.joint_type != "floating":
            continue
        iv = model.idx_v[i]
        iq = model.idx_q[i]
        R0, p0 = quat_to_rot(q0[iq + 3:iq + 7]), q0[iq:iq + 3]
        R1, p1 = quat_to_rot(q1[iq + 3:iq + 7]), q1[iq:iq + 3]
        T = Transform(R0, p0).inverse().compose(Transform(R1, p1))
        J = jlog_se3(T)
        J1[iv:iv + 6, iv:iv + 6] = J
        J0[iv:iv + 6, iv:iv + 6] = -J @ T.inverse().adjoint()
    return J0, J1


def normalize_config(model: RobotModel, q):
    q2 = np.array(q, dtype=float)
    for i, b in enumerate(model.bodies):
        if b.joint_type == "floating":
            iq = model.idx_q[i]
            q2[iq + 3:iq + 7] /= np.linalg.norm(q2[iq + 3:iq + 7])
    return q2


def random_config(model: RobotModel, rng, scale=1.0):
    dq = scale * rng.uniform(-1.0, 1.0, model.nv)
    return integrate_config(model, model.neutral_config(), dq)


# ---------------------------------------------------------------------------
# kinematics cache
# ---------------------------------------------------------------------------

class Kin:
    """World-frame kinematics of one evaluation point (q[, v[, a]])."""

    __slots__ = ("R", "p", "Adinv", "phi", "v", "a_bias", "a_true", "dof_parent_v")

    def __init__(self, nb, nv):
        self.R = np.empty((nb, 3, 3))
        self.p = np.empty((nb, 3))
        self.Adinv = np.empty((nb, 6, 6))
        self.phi = np.zeros((nv, 6))      # world motion column per tangent dof
        self.v = None                      # (nb, 6) world body velocities
        self.a_bias = None                 # (nb, 6) velocity-product acceleration
        self.a_true = None                 # (nb, 6) world body accelerations
        self.dof_parent_v = None           # (nv, 6) parent-body velocity per dof


def kinematics(model: RobotModel, q, v=None, a=None) -> Kin:
    nb, nv = model.n_bodies, model.nv
    kin = Kin(nb, nv)
    if v is not None:
        kin.v = np.zeros((nb, 6))
        kin.a_bias = np.zeros((nb, 6))
        kin.dof_parent_v = np.zeros((nv, 6))
    if a is not None:
        kin.a_true = np.zeros((nb, 6))
    for i, b in enumerate(model.bodies):
        iq, iv = model.idx_q[i], model.idx_v[i]
        Xj = joint_transform(b, q[iq:iq + JOINT_NQ[b.joint_type]])
        if b.parent >= 0:
            Rp, pp = kin.R[b.parent], kin.p[b.parent]
            Ri = Rp @ Xj.rot
            pi = Rp @ Xj.trans + pp
        else:
            Ri, pi = Xj.rot, Xj.trans
        kin.R[i] = Ri
        kin.p[i] = pi
        Xw = Transform(Ri, pi)
        kin.Adinv[i] = Xw.inverse().adjoint()
        nvi = JOINT_NV[b.joint_type]
        if b.joint_type == "revolute":
            w = Ri @ b.axis
            kin.phi[iv, :3] = w
            kin.phi[iv, 3:] = np.cross(pi, w)
        elif b.joint_type == "prismatic":
            kin.phi[iv, 3:] = Ri @ b.axis
        else:
            kin.phi[iv:iv + 6] = Xw.adjoint().T  # columns as rows
        if v is not None:
            vp = kin.v[b.parent] if b.parent >= 0 else np.zeros(6)
            kin.dof_parent_v[iv:iv + nvi] = vp
            vj = kin.phi[iv:iv + nvi].T @ v[iv:iv + nvi]
            vi = vp + vj
            kin.v[i] = vi
            ab = kin.a_bias[b.parent] if b.parent >= 0 else np.zeros(6)
            kin.a_bias[i] = ab + cross_motion(vi, vj)
            if a is not None:
                ap = kin.a_true[b.parent] if b.parent >= 0 else np.zeros(6)
                kin.a_true[i] = (ap + kin.phi[iv:iv + nvi].T @ a[iv:iv + nvi]
                                 + cross_motion(vi, vj))
    return kin


def spatial_inertia(pi):
    """6x6 spatial inertia from (m, h, vech(I)), angular-first layout."""
    m, h = pi[0], pi[1:4]
    I6 = np.zeros((6, 6))
    I6[:3, :3] = unvech(pi[4:])
    H = hat(h)
    I6[:3, 3:] = H
    I6[3:, :3] = H.T
    I6[3:, 3:] = m * np.eye(3)
    return I6


def world_inertias(model: RobotModel, kin: Kin, pi=None):
    """(nb, 6, 6) spatial inertias in world coordinates."""
    pis = pi if pi is not None else [b.inertia for b in model.bodies]
    out = np.empty((model.n_bodies, 6, 6))
    for i in range(model.n_bodies):
        Ai = kin.Adinv[i]
        out[i] = Ai.T @ spatial_inertia(pis[i]) @ Ai
    return out


def _gravity6(model):
    g = np.zeros(6)
    g[3:] = model.gravity
    return g


def _body_forces(model, kin, Iw, fext=None):
    """Per-body world net wrenches for the inverse-dynamics pass."""
    nb = model.n_bodies
    g6 = _gravity6(model)
    f = np.empty((nb, 6))
    for i in range(nb):
        abar = (kin.a_true[i] if kin.a_true is not None else kin.a_bias[i]) - g6
        hi = Iw[i] @ kin.v[i]
        f[i] = Iw[i] @ abar + cross_force(kin.v[i], hi)
        if fext is not None and fext[i] is not None:
            f[i] -= kin.Adinv[i].T @ np.asarray(fext[i])
    return f


def _backward_accumulate(model, f):
    """Subtree-summed wrenches (in place copy) and joint projections."""
    fc = f.copy()
    for i in reversed(range(model.n_bodies)):
        p = model.bodies[i].parent
        if p >= 0:
            fc[p] += fc[i]
    return fc


def rnea(model: RobotModel, q, v, a, fext=None, pi=None, kin=None):
    """Generalized force tau with M a + h(q, v) - sum J_i^T fext_i = tau.

    External wrenches are given per body in local body coordinates.
    """
    if kin is None:
        kin = kinematics(model, q, v, a)
    Iw = world_inertias(model, kin, pi)
    fc = _backward_accumulate(model, _body_forces(model, kin, Iw, fext))
    tau = np.empty(model.nv)
    for m in range(model.nv):
        tau[m] = kin.phi[m] @ fc[model.dof_body[m]]
    return tau


def mass_matrix(model: RobotModel, q, pi=None, kin=None):
    """Joint-space inertia matrix (composite rigid body recursion)."""
    if kin is None:
        kin = kinematics(model, q)
    Iw = world_inertias(model, kin, pi)
    Ic = Iw.copy()
    for i in reversed(range(model.n_bodies)):
        p = model.bodies[i].parent
        if p >= 0:
            Ic[p] += Ic[i]
    nv = model.nv
    M = np.zeros((nv, nv))
    for i in range(model.n_bodies):
        dofs_i = np.arange(model.idx_v[i], model.idx_v[i] + JOINT_NV[model.bodies[i].joint_type])
        F = kin.phi[dofs_i] @ Ic[i]          # (nvi, 6)
        anc = model.ancestor_dofs[i]
        blk = F @ kin.phi[anc].T
        M[np.ix_(dofs_i, anc)] = blk
        M[np.ix_(anc, dofs_i)] = blk.T
    return M


def gravity_vector(model: RobotModel, q, pi=None):
    return rnea(model, q, np.zeros(model.nv), np.zeros(model.nv), pi=pi)


def bias_force(model: RobotModel, kin: Kin, pi=None):
    """h(q, v) = Coriolis, centrifugal and gravity forces (needs kin with v)."""
    Iw = world_inertias(model, kin, pi)
    g6 = _gravity6(model)
    nb = model.n_bodies
    f = np.empty((nb, 6))
    for i in range(nb):
        hi = Iw[i] @ kin.v[i]
        f[i] = Iw[i] @ (kin.a_bias[i] - g6) + cross_force(kin.v[i], hi)
    fc = _backward_accumulate(model, f)
    h = np.empty(model.nv)
    for m in range(model.nv):
        h[m] = kin.phi[m] @ fc[model.dof_body[m]]
    return h


# ---------------------------------------------------------------------------
# constraints
# ---------------------------------------------------------------------------

@dataclass
class ConstraintData:
    """Geometry of one constraint evaluated at a configuration."""

    spec: object
    rows: np.ndarray          # selected rows of the 6-d residual
    X_A: Transform            # frame on body A, world placement
    X_B: Transform            # frame on body B or world reference
    E: np.ndarray             # 6x6 map world -> constraint coordinates
    r6: np.ndarray            # full 6-d configuration residual
    G6: np.ndarray            # 6 x nv velocity map before row selection

    @property
    def r(self):
        return self.r6[self.rows]

    @property
    def G(self):
        return self.G6[self.rows]


def _frame_placement(kin, body, frame, model=None):
    if body < 0:
        return frame
    Xb = Transform(kin.R[body], kin.p[body])
    return Xb.compose(frame)


def constraint_data(model: RobotModel, kin: Kin, spec) -> ConstraintData:
    X_A = _frame_placement(kin, spec.body_a, spec.frame_a)
    X_B = _frame_placement(kin, spec.body_b, spec.frame_b)
    T = X_B.inverse().compose(X_A)
    r6 = log_se3(T)
    if spec.world_aligned:
        C = Transform(np.eye(3), X_A.trans)
        Lam = np.zeros((6, 6))
        Lam[:3, :3] = X_A.rot
        Lam[3:, 3:] = X_A.rot
        r6 = Lam @ r6
    else:
        C = X_A
    E = C.inverse().adjoint()
    G6 = np.zeros((6, model.nv))
    da = model.ancestor_dofs[spec.body_a]
    G6[:, da] = E @ kin.phi[da].T
    if spec.body_b >= 0:
        db = model.ancestor_dofs[spec.body_b]
        G6[:, db] -= E @ kin.phi[db].T
    rows = np.arange(3, 6) if spec.dim == 3 else np.arange(6)
    return ConstraintData(spec, rows, X_A, X_B, E, r6, G6)


def constraint_residual_and_jacobian(model: RobotModel, q, spec, kin=None):
    """Configuration residual (log of the placement error) and velocity map G."""
    if kin is None:
        kin = kinematics(model, q)
    cd = constraint_data(model, kin, spec)
    return cd.r, cd.G


def constraint_config_jacobian(model, kin, cd):
    """Exact tangent derivative of the configuration residual rows.

    d r = Jlog6(T) (J_A^loc - Ad_{T^-1} J_B^loc) dq, rotated for world-aligned
    constraints (where the alignment rotation itself moves with q).
    """
    sp = cd.spec
    T = cd.X_B.inverse().compose(cd.X_A)
    EA = cd.X_A.inverse().adjoint()
    G6_loc = np.zeros((6, model.nv))
    da = model.ancestor_dofs[sp.body_a]
    G6_loc[:, da] = EA @ kin.phi[da].T
    if sp.body_b >= 0:
        db = model.ancestor_dofs[sp.body_b]
        G6_loc[:, db] -= EA @ kin.phi[db].T
    Jr = jlog_se3(T) @ G6_loc
    if sp.world_aligned:
        R = cd.X_A.rot
        Lam = np.zeros((6, 6))
        Lam[:3, :3] = R
        Lam[3:, 3:] = R
        Jr = Lam @ Jr
        # the aligning rotation moves with the body: d(Lam) r term
        r_loc = log_se3(T)
        for mdof in da:
            w = kin.phi[mdof, :3]
            Jr[:3, mdof] += np.cross(w, R @ r_loc[:3])
            Jr[3:, mdof] += np.cross(w, R @ r_loc[3:])
    return Jr[cd.rows]


def constraint_velocity(model, kin, cd):
    """G v rows, from body velocities."""
    vA = kin.v[cd.spec.body_a]
    z = vA - (kin.v[cd.spec.body_b] if cd.spec.body_b >= 0 else 0.0)
    return (cd.E @ z)[cd.rows]


def constraint_acceleration(model, kin, cd, bias_only=False):
    """d/dt(G v) rows: G a + Gdot v (true acceleration level, no feedback)."""
    a = kin.a_bias if (bias_only or kin.a_true is None) else kin.a_true
    sp = cd.spec
    zA = a[sp.body_a]
    if sp.body_b >= 0:
        z = zA - a[sp.body_b] + cross_motion(kin.v[sp.body_a], kin.v[sp.body_b])
    else:
        z = zA
    if sp.world_aligned:
        vhat = cd.E @ kin.v[sp.body_a]
        wC = np.concatenate([np.zeros(3), vhat[3:]])
        z = z - cross_motion(wC, kin.v[sp.body_a])
    return (cd.E @ z)[cd.rows]


def baumgarte_bias(spec, r, rdot):
    """Constraint-space feedback b* = -Kp r - Kd rdot."""
    return -spec.kp * r - spec.kd * rdot


@dataclass
class StackedConstraints:
    specs: tuple
    data: tuple
    G: np.ndarray
    offsets: tuple
    dim: int

    def rows_of(self, k):
        return slice(self.offsets[k], self.offsets[k] + len(self.data[k].rows))


def stack_constraints(model, kin, specs) -> StackedConstraints:
    data = tuple(constraint_data(model, kin, s) for s in specs)
    dims = [len(cd.rows) for cd in data]
    offsets, k = [], 0
    for d in dims:
        offsets.append(k)
        k += d
    G = np.zeros((k, model.nv))
    for cd, off, d in zip(data, offsets, dims):
        G[off:off + d] = cd.G
    return StackedConstraints(tuple(specs), data, G, tuple(offsets), k)


def bias_acceleration(model, kin, sc: StackedConstraints):
    """Right-hand side b_a = -(Gdot v) + b* of the acceleration constraint."""
    b = np.empty(sc.dim)
    for cd, off in zip(sc.data, sc.offsets):
        d = len(cd.rows)
        drift = constraint_acceleration(model, kin, cd, bias_only=True)
        rdot = constraint_velocity(model, kin, cd)
        b[off:off + d] = -drift + baumgarte_bias(cd.spec, cd.r, rdot)
    return b


def reset_bias_velocity(model, kin, sc: StackedConstraints):
    """b_v rows: -eps G v- on contacts, zero on loop closures."""
    b = np.zeros(sc.dim)
    for cd, off in zip(sc.data, sc.offsets):
        d = len(cd.rows)
        if cd.spec.kind == "contact" and cd.spec.restitution != 0.0:
            b[off:off + d] = -cd.spec.restitution * constraint_velocity(model, kin, cd)
    return b


# ---------------------------------------------------------------------------
# KKT solves
# ---------------------------------------------------------------------------

class KKTFactorization:
    """Cholesky of M and of the constraint Schur complement G M^-1 G^T."""

    def __init__(self, M, G, specs=None):
        self.M = M
        self.G = G
        self.nc = G.shape[0]
        try:
            self.M_cho = sla.cho_factor(M, lower=True)
        except np.linalg.LinAlgError as e:  # pragma: no cover - SPD by construction
            raise RankDeficientConstraints(f"mass matrix not SPD: {e}")
        if self.nc:
            MinvGT = sla.cho_solve(self.M_cho, G.T)
            S = G @ MinvGT
            S = 0.5 * (S + S.T)
            try:
                self.S_cho = sla.cho_factor(S, lower=True)
            except np.linalg.LinAlgError:
                raise RankDeficientConstraints(
                    "constraint Schur complement singular for "
                    + ", ".join(getattr(s, "name", "?") or s.kind for s in (specs or [])))
            dS = np.sqrt(np.diag(S))
            if dS.max() > 1e8 * max(dS.min(), 1e-300):
                raise RankDeficientConstraints(
                    "near rank-deficient constraint set: "
                    + ", ".join(getattr(s, "name", "?") or s.kind for s in (specs or [])))

    def solve(self, b1, b2=None):
        """Solve [[M, G^T], [G, 0]] [x; y] = [b1; b2]; returns (x, y)."""
        x0 = sla.cho_solve(self.M_cho, b1)
        if not self.nc:
            return x0, np.zeros(0)
        rhs = self.G @ x0 - (b2 if b2 is not None else 0.0)
        y = sla.cho_solve(self.S_cho, rhs)
        x = x0 - sla.cho_solve(self.M_cho, self.G.T @ y)
        return x, y

    def solve_many(self, B1, B2=None):
        """Column-stacked variant of solve()."""
        X0 = sla.cho_solve(self.M_cho, B1)
        if not self.nc:
            return X0, np.zeros((0, B1.shape[1]))
        rhs = self.G @ X0 - (B2 if B2 is not None else 0.0)
        Y = sla.cho_solve(self.S_cho, rhs)
        X = X0 - sla.cho_solve(self.M_cho, self.G.T @ Y)
        return X, Y

    def nullspace_projector(self):
        """Dynamically consistent projector N = I - M^-1 G^T S^-1 G."""
        n = self.M.shape[0]
        if not self.nc:
            return np.eye(n)
        W = sla.cho_solve(self.S_cho, self.G)         # S^-1 G
        return np.eye(n) - sla.cho_solve(self.M_cho, self.G.T @ W)


@dataclass
class ModeSolution:
    a: np.ndarray
    lam: np.ndarray
    kkt: KKTFactorization
    kin: Kin
    sc: StackedConstraints
    tau_b: np.ndarray
    q: np.ndarray = None
    v: np.ndarray = None


@dataclass
class ResetSolution:
    v_plus: np.ndarray
    impulse: np.ndarray
    kkt: KKTFactorization
    kin: Kin
    sc: StackedConstraints
    v_minus: np.ndarray
    q: np.ndarray = None


def constrained_forward_dynamics(model, q, v, tau_b, specs, pi=None) -> ModeSolution:
    """Accelerations and constraint forces of one mode.

    tau_b is the total applied generalized force (actuation minus friction);
    Coriolis/gravity bias is handled internally.
    """
    kin = kinematics(model, q, v)
    sc = stack_constraints(model, kin, specs)
    M = mass_matrix(model, q, pi=pi, kin=kin)
    h = bias_force(model, kin, pi=pi)
    kkt = KKTFactorization(M, sc.G, specs)
    b_a = bias_acceleration(model, kin, sc)
    a, y = kkt.solve(tau_b - h, b_a)
    lam = -y
    r_d = M @ a + h - sc.G.T @ lam - tau_b
    r_a = sc.G @ a - b_a
    res = max(np.abs(r_d).max() if r_d.size else 0.0,
              np.abs(r_a).max() if r_a.size else 0.0)
    if not np.isfinite(res) or res > 1e-6:
        raise RankDeficientConstraints(f"KKT solve residual {res:.2e}")
    return ModeSolution(a, lam, kkt, kin, sc, np.asarray(tau_b, dtype=float),
                        np.asarray(q, dtype=float), np.asarray(v, dtype=float))


def reset_map(model, q, v_minus, specs, pi=None) -> ResetSolution:
    """Post-impact velocity and impulses; configuration is unchanged."""
    kin = kinematics(model, q, v_minus)
    sc = stack_constraints(model, kin, specs)
    M = mass_matrix(model, q, pi=pi, kin=kin)
    kkt = KKTFactorization(M, sc.G, specs)
    b_v = reset_bias_velocity(model, kin, sc)
    v_plus, y = kkt.solve(M @ v_minus, b_v)
    imp = -y
    return ResetSolution(v_plus, imp, kkt, kin, sc, np.asarray(v_minus, dtype=float),
                         np.asarray(q, dtype=float))


def noise_projection(model, q, specs, w, pi=None, kkt=None):
    """Project a 2*nv process vector onto constraint-consistent directions.

    Returns (w_hat, N) with N the dynamically consistent nullspace projector;
    w stacks a configuration-tangent part and a velocity part.
    """
    nv = model.nv
    if kkt is None:
        kin = kinematics(model, q)
        sc = stack_constraints(model, kin, specs)
        M = mass_matrix(model, q, pi=pi, kin=kin)
        kkt = KKTFactorization(M, sc.G, specs)
    N = kkt.nullspace_projector()
    w = np.asarray(w, dtype=float)
    w_hat = np.concatenate([N @ w[:nv], N @ w[nv:]])
    return w_hat, N


# ---------------------------------------------------------------------------
# integration
# ---------------------------------------------------------------------------

def integrate_step(model, q, v, a, dt, w_hat=None):
    """Semi-implicit Euler, then an optional retraction of projected noise."""
    v2 = v + a * dt
    q2 = integrate_config(model, q, v2 * dt)
    if w_hat is not None:
        q2 = integrate_config(model, q2, w_hat[:model.nv])
        v2 = v2 + w_hat[model.nv:]
    return normalize_config(model, q2), v2


# ---------------------------------------------------------------------------
# energies and regressors
# ---------------------------------------------------------------------------

def inertia_regressor_matrix(xi):
    """6x10 matrix A with I(pi) xi = A(xi) pi, xi and pi in the same frame."""
    w, u = xi[:3], xi[3:]
    A = np.zeros((6, 10))
    A[:3, 1:4] = -hat(u)
    A[3:, 0] = u
    A[3:, 1:4] = hat(w)
    # L(w) vech multiplication
    A[0, 4:7] = w
    A[1, 5] = w[0]
    A[1, 7:9] = w[1], w[2]
    A[2, 6] = w[0]
    A[2, 8:10] = w[1], w[2]
    return A


def energies_and_regressors(model: RobotModel, q, v, pi=None, kin=None):
    """Kinetic/potential energy and their inertial-parameter regressors."""
    if kin is None:
        kin = kinematics(model, q, v)
    pis = pi if pi is not None else [b.inertia for b in model.bodies]
    nb = model.n_bodies
    YK = np.zeros(10 * nb)
    YU = np.zeros(10 * nb)
    g = model.gravity
    K = U = 0.0
    for i in range(nb):
        vloc = kin.Adinv[i] @ kin.v[i]
        YK[10 * i:10 * i + 10] = 0.5 * inertia_regressor_matrix(vloc).T @ vloc
        YU[10 * i] = -g @ kin.p[i]
        YU[10 * i + 1:10 * i + 4] = -g @ kin.R[i]
        blk = np.asarray(pis[i])
        K += YK[10 * i:10 * i + 10] @ blk
        U += YU[10 * i:10 * i + 10] @ blk
    return K, U, YK, YU


def kinetic_energy(model, q, v, pi=None, kin=None):
    return energies_and_regressors(model, q, v, pi=pi, kin=kin)[0]


def total_energy(model, q, v, pi=None):
    K, U, _, _ = energies_and_regressors(model, q, v, pi=pi)
    return K + U


def torque_regressor(model: RobotModel, q, v, a, kin=None):
    """nv x 10nb matrix Y with Y pi = rnea(q, v, a) (gravity in, friction out)."""
    if kin is None:
        kin = kinematics(model, q, v, a)
    nb, nv = model.n_bodies, model.nv
    g6 = _gravity6(model)
    Y = np.zeros((nv, 10 * nb))
    for k in range(nb):
        Ak = kin.Adinv[k]
        vloc = Ak @ kin.v[k]
        aloc = Ak @ (kin.a_true[k] - g6)
        Fk = Ak.T @ (inertia_regressor_matrix(aloc)
                     + crf(vloc) @ inertia_regressor_matrix(vloc))
        anc = model.ancestor_dofs[k]
        Y[anc, 10 * k:10 * k + 10] = kin.phi[anc] @ Fk
    return Y
