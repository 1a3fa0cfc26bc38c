"""First-order sensitivities of the constrained dynamics.

All configuration derivatives are tangent-space derivatives: entry (i, m) is
the change of output i under a retraction step along tangent dof m, which is
what the finite-difference oracle below computes.  Working in world
coordinates keeps every block a combination of spatial cross products:

  d v_k / d q_m   = phi_m x (v_k - v_pm)
  d a_k / d q_m   = phi_m x (a_k - a_pm) + (v_pm x phi_m) x (v_k - v_pm)
  d a_k / d dq_m  = phi_m x (v_k - v_pm) + v_bm x phi_m
  d I_k / d q_m   = crf(phi_m) I_k - I_k crm(phi_m)

with pm the parent body of dof m's joint and x the spatial cross product.
Wrenches held fixed in a frame that moves with dof m transport as
d w / d q_m = crf(phi^C_m) w, where phi^C_m is the frame's motion column
(the body column for body-fixed frames; its translational part only for
world-aligned frames).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dynamics import (
    Kin,
    KKTFactorization,
    ModeSolution,
    ResetSolution,
    bias_force,
    constraint_config_jacobian,
    constraint_data,
    integrate_config,
    kinematics,
    mass_matrix,
    stack_constraints,
    torque_regressor,
    world_inertias,
)
from .liegroups import cross_force, cross_motion
from .model import JOINT_NV, RobotModel


# ---------------------------------------------------------------------------
# finite-difference oracle
# ---------------------------------------------------------------------------

def fd_jacobian(f, x, h=None):
    """Central-difference Jacobian of f at a flat vector x."""
    x = np.asarray(x, dtype=float)
    if h is None:
        h = 1e-6 * max(1.0, float(np.linalg.norm(x)))
    f0 = np.atleast_1d(np.asarray(f(x), dtype=float))
    J = np.empty((f0.size, x.size))
    for k in range(x.size):
        d = np.zeros_like(x)
        d[k] = h
        J[:, k] = (np.atleast_1d(f(x + d)) - np.atleast_1d(f(x - d))) / (2 * h)
    return J


def fd_jacobian_config(model, f, q, h=None):
    """Central-difference Jacobian under configuration retraction."""
    if h is None:
        h = 1e-6
    f0 = np.atleast_1d(np.asarray(f(q), dtype=float))
    J = np.empty((f0.size, model.nv))
    for k in range(model.nv):
        d = np.zeros(model.nv)
        d[k] = h
        fp = np.atleast_1d(f(integrate_config(model, q, d)))
        fm = np.atleast_1d(f(integrate_config(model, q, -d)))
        J[:, k] = (fp - fm) / (2 * h)
    return J


# ---------------------------------------------------------------------------
# kinematic derivative primitives
# ---------------------------------------------------------------------------

class KinWork:
    """Shared per-configuration context for the derivative passes."""

    def __init__(self, model: RobotModel, kin: Kin, pi=None):
        self.model = model
        self.kin = kin
        self.Iw = world_inertias(model, kin, pi)
        nb = model.n_bodies
        self.parent = np.array([b.parent for b in model.bodies])
        # parent velocity / true acceleration per body with a world fallback
        self.vp = np.zeros((nb, 6)) if kin.v is None else np.array(
            [kin.v[p] if p >= 0 else np.zeros(6) for p in self.parent])
        if kin.a_true is not None:
            self.ap = np.array([kin.a_true[p] if p >= 0 else np.zeros(6) for p in self.parent])

    def dv_dq(self, k, m):
        """d v_k / d q_m, caller guarantees m is an ancestor dof of body k."""
        kin = self.kin
        bm = self.model.dof_body[m]
        return cross_motion(kin.phi[m], kin.v[k] - self.vp[bm])

    def da_dq(self, k, m):
        kin = self.kin
        bm = self.model.dof_body[m]
        dv = kin.v[k] - self.vp[bm]
        da = kin.a_true[k] - self.ap[bm]
        return (cross_motion(kin.phi[m], da)
                + cross_motion(cross_motion(self.vp[bm], kin.phi[m]), dv))

    def da_dv(self, k, m):
        kin = self.kin
        bm = self.model.dof_body[m]
        return (cross_motion(kin.phi[m], kin.v[k] - self.vp[bm])
                + cross_motion(kin.v[bm], kin.phi[m]))


def _ancestor_mask(model):
    mask = np.zeros((model.n_bodies, model.nv), dtype=bool)
    for i in range(model.n_bodies):
        mask[i, model.ancestor_dofs[i]] = True
    return mask


def _anc_mask(model):
    if not hasattr(model, "_anc_mask_cache"):
        object.__setattr__(model, "_anc_mask_cache", _ancestor_mask(model))
    return model._anc_mask_cache


# ---------------------------------------------------------------------------
# inverse dynamics derivatives
# ---------------------------------------------------------------------------

def rnea_derivatives(model: RobotModel, q, v, a, fext=None, pi=None):
    """(d tau/d q, d tau/d v, M, Y): all blocks of the inverse dynamics.

    External wrenches are held fixed in their local body frames.  Y is the
    inertial-parameter regressor, i.e. d tau / d pi stacked over bodies.
    """
    kin = kinematics(model, q, v, a)
    work = KinWork(model, kin, pi)
    nb, nv = model.n_bodies, model.nv
    g6 = np.zeros(6)
    g6[3:] = model.gravity
    abar = kin.a_true - g6
    fext_w = None
    if fext is not None:
        fext_w = [None] * nb
        for i, fl in enumerate(fext):
            if fl is not None:
                fext_w[i] = kin.Adinv[i].T @ np.asarray(fl)
    # net wrenches and subtree sums
    f = np.empty((nb, 6))
    for i in range(nb):
        hv = work.Iw[i] @ kin.v[i]
        f[i] = work.Iw[i] @ abar[i] + cross_force(kin.v[i], hv)
        if fext_w is not None and fext_w[i] is not None:
            f[i] -= fext_w[i]
    fc = f.copy()
    for i in reversed(range(nb)):
        p = work.parent[i]
        if p >= 0:
            fc[p] += fc[i]
    mask = _anc_mask(model)
    dtau_dq = np.zeros((nv, nv))
    dtau_dv = np.zeros((nv, nv))
    hw = np.array([work.Iw[i] @ kin.v[i] for i in range(nb)])
    abar_p = np.array([abar[p] if p >= 0 else -g6 for p in work.parent])
    for m in range(nv):
        bm = model.dof_body[m]
        phim = kin.phi[m]
        vpm = work.vp[bm]
        sub = model.subtree[bm]
        df_q = np.zeros((nb, 6))
        df_v = np.zeros((nb, 6))
        for k in sub:
            Ik = work.Iw[k]
            vk = kin.v[k]
            dv = cross_motion(phim, vk - vpm)
            da = (cross_motion(phim, abar[k] - abar_p[bm])
                  + cross_motion(cross_motion(vpm, phim), vk - vpm))
            dIa = cross_force(phim, Ik @ abar[k]) - Ik @ cross_motion(phim, abar[k])
            dIv = cross_force(phim, hw[k]) - Ik @ cross_motion(phim, vk)
            df_q[k] = (dIa + Ik @ da + cross_force(dv, hw[k])
                       + cross_force(vk, dIv + Ik @ dv))
            if fext_w is not None and fext_w[k] is not None:
                df_q[k] -= cross_force(phim, fext_w[k])
            da_v = cross_motion(phim, vk - vpm) + cross_motion(kin.v[bm], phim)
            df_v[k] = (Ik @ da_v + cross_force(phim, hw[k])
                       + cross_force(vk, Ik @ phim))
        for k in reversed(range(nb)):
            p = work.parent[k]
            if p >= 0:
                df_q[p] += df_q[k]
                df_v[p] += df_v[k]
        for n in range(nv):
            bn = model.dof_body[n]
            val_q = kin.phi[n] @ df_q[bn]
            val_v = kin.phi[n] @ df_v[bn]
            if mask[bn, m]:
                val_q += cross_motion(phim, kin.phi[n]) @ fc[bn]
            dtau_dq[n, m] = val_q
            dtau_dv[n, m] = val_v
    M = mass_matrix(model, q, pi=pi, kin=kin)
    Y = torque_regressor(model, q, v, a, kin=kin)
    return dtau_dq, dtau_dv, M, Y


# ---------------------------------------------------------------------------
# constraint derivative blocks
# ---------------------------------------------------------------------------

class ConstraintDerivatives:
    """Derivative blocks of one constraint at a (q, v[, a]) evaluation."""

    def __init__(self, model, kin, cd):
        self.model = model
        self.kin = kin
        self.cd = cd
        sp = cd.spec
        self.bA, self.bB = sp.body_a, sp.body_b
        self.dofs_A = model.ancestor_dofs[self.bA]
        self.dofs_B = model.ancestor_dofs[self.bB] if self.bB >= 0 else np.array([], dtype=int)
        self.work = KinWork(model, kin)
        self.pA = cd.X_A.trans

    def frame_column(self, m):
        """World motion column of the constraint frame along dof m (A side)."""
        phi = self.kin.phi[m]
        if not self.cd.spec.world_aligned:
            return phi
        return np.concatenate([np.zeros(3), phi[3:] + np.cross(phi[:3], self.pA)])

    def _project(self, dz, m, z):
        """E (dz - phi^C_m x z); the frame correction only on A-side dofs."""
        if m in self._dofsA_set:
            dz = dz - cross_motion(self.frame_column(m), z)
        return (self.cd.E @ dz)[self.cd.rows]

    @property
    def _dofsA_set(self):
        if not hasattr(self, "_dAs"):
            self._dAs = set(int(x) for x in self.dofs_A)
        return self._dAs

    def _zvel(self):
        vB = self.kin.v[self.bB] if self.bB >= 0 else np.zeros(6)
        return self.kin.v[self.bA] - vB

    def dGv_dq(self, u=None):
        """Derivative of the velocity rows G(q) u at fixed generalized velocity.

        u defaults to the velocity stored in kin; passing u re-evaluates the
        body velocities as J u without building a new kinematics cache.
        """
        model, kin = self.model, self.kin
        if u is None:
            vA = kin.v[self.bA]
            vB = kin.v[self.bB] if self.bB >= 0 else np.zeros(6)
            vp = {m: self.work.vp[model.dof_body[m]] for m in self._union_dofs()}
        else:
            vA = kin.phi[self.dofs_A].T @ u[self.dofs_A]
            vB = (kin.phi[self.dofs_B].T @ u[self.dofs_B]) if self.bB >= 0 else np.zeros(6)
            vp = {}
            for m in self._union_dofs():
                bm = model.dof_body[m]
                anc = model.ancestor_dofs[bm]
                pm_dofs = anc[:-JOINT_NV[model.bodies[bm].joint_type]]
                vp[m] = kin.phi[pm_dofs].T @ u[pm_dofs] if pm_dofs.size else np.zeros(6)
        z = vA - vB
        out = np.zeros((len(self.cd.rows), model.nv))
        for m in self._union_dofs():
            dz = np.zeros(6)
            if m in self._dofsA_set:
                dz = dz + cross_motion(kin.phi[m], vA - vp[m])
            if self.bB >= 0 and m in self._dofsB_set:
                dz = dz - cross_motion(kin.phi[m], vB - vp[m])
            out[:, m] = self._project(dz, m, z)
        return out

    @property
    def _dofsB_set(self):
        if not hasattr(self, "_dBs"):
            self._dBs = set(int(x) for x in self.dofs_B)
        return self._dBs

    def _union_dofs(self):
        return sorted(self._dofsA_set | self._dofsB_set)

    def _zacc(self):
        kin = self.kin
        sp = self.cd.spec
        aA = kin.a_true[self.bA]
        if self.bB >= 0:
            z = aA - kin.a_true[self.bB] + cross_motion(kin.v[self.bA], kin.v[self.bB])
        else:
            z = aA.copy()
        if sp.world_aligned:
            vhat = self.cd.E @ kin.v[self.bA]
            wC = np.concatenate([np.zeros(3), vhat[3:]])
            z = z - cross_motion(wC, kin.v[self.bA])
        return z

    def dacc_dq(self):
        """Configuration derivative of d/dt(G v) rows at fixed (v, a)."""
        model, kin, work = self.model, self.kin, self.work
        z = self._zacc()
        sp = self.cd.spec
        vA = kin.v[self.bA]
        vB = kin.v[self.bB] if self.bB >= 0 else np.zeros(6)
        if sp.world_aligned:
            vhat = self.cd.E @ vA
            wC = np.concatenate([np.zeros(3), vhat[3:]])
        out = np.zeros((len(self.cd.rows), model.nv))
        for m in self._union_dofs():
            dz = np.zeros(6)
            inA = m in self._dofsA_set
            inB = self.bB >= 0 and m in self._dofsB_set
            dvA = work.dv_dq(self.bA, m) if inA else np.zeros(6)
            if inA:
                dz = dz + work.da_dq(self.bA, m)
            if inB:
                daB = work.da_dq(self.bB, m)
                dvB = work.dv_dq(self.bB, m)
                dz = dz - daB + cross_motion(vA, dvB)
            if self.bB >= 0 and inA:
                dz = dz + cross_motion(dvA, vB)
            if sp.world_aligned and inA:
                # wC depends on q through the aligned velocity rows
                dvhat = self.cd.E @ (dvA - cross_motion(self.frame_column(m), vA))
                dwC = np.concatenate([np.zeros(3), dvhat[3:]])
                dz = dz - cross_motion(dwC, vA) - cross_motion(wC, dvA)
            out[:, m] = self._project(dz, m, z)
        return out

    def dacc_dv(self):
        """Velocity derivative of d/dt(G v) rows at fixed a."""
        model, kin, work = self.model, self.kin, self.work
        sp = self.cd.spec
        vA = kin.v[self.bA]
        vB = kin.v[self.bB] if self.bB >= 0 else np.zeros(6)
        if sp.world_aligned:
            vhat = self.cd.E @ vA
            wC = np.concatenate([np.zeros(3), vhat[3:]])
        out = np.zeros((len(self.cd.rows), model.nv))
        for m in self._union_dofs():
            dz = np.zeros(6)
            inA = m in self._dofsA_set
            inB = self.bB >= 0 and m in self._dofsB_set
            dvA = kin.phi[m] if inA else np.zeros(6)
            if inA:
                dz = dz + work.da_dv(self.bA, m)
            if inB:
                dz = dz - work.da_dv(self.bB, m) + cross_motion(vA, kin.phi[m])
            if self.bB >= 0 and inA:
                dz = dz + cross_motion(dvA, vB)
            if sp.world_aligned and inA:
                dvhat = self.cd.E @ dvA
                dwC = np.concatenate([np.zeros(3), dvhat[3:]])
                dz = dz - cross_motion(dwC, vA) - cross_motion(wC, dvA)
            out[:, m] = (self.cd.E @ dz)[self.cd.rows]
        return out

    def dforce_dq(self, lam, transport="constraint"):
        """Derivative of G^T lam at fixed multiplier.

        transport="constraint" holds lam fixed in the constraint frame (the
        physically correct transport); "body" holds the equivalent wrench
        fixed in the local frame of the body it acts on, which is what an
        external-wrench inverse-dynamics path differentiates.
        """
        model, kin = self.model, self.kin
        lam6 = np.zeros(6)
        lam6[self.cd.rows] = lam
        w = self.cd.E.T @ lam6          # world wrench on body A (reaction on B)
        mask = _anc_mask(model)
        out = np.zeros((model.nv, model.nv))
        for m in self._union_dofs():
            phim = kin.phi[m]
            if transport == "constraint":
                dw = cross_force(self.frame_column(m), w) if m in self._dofsA_set else np.zeros(6)
                dwB = -dw
            else:
                dw = cross_force(phim, w) if m in self._dofsA_set else np.zeros(6)
                dwB = -(cross_force(phim, w) if (self.bB >= 0 and m in self._dofsB_set) else np.zeros(6))
            for n in self.dofs_A:
                val = kin.phi[n] @ dw
                if mask[model.dof_body[n], m]:
                    val += cross_motion(phim, kin.phi[n]) @ w
                out[n, m] += val
            for n in self.dofs_B:
                val = kin.phi[n] @ dwB
                if mask[model.dof_body[n], m]:
                    val -= cross_motion(phim, kin.phi[n]) @ w
                out[n, m] += val
        return out

    def dr_dq(self):
        return constraint_config_jacobian(self.model, self.kin, self.cd)

    def dbias_dq(self):
        """d b*/d q = -Kp dr/dq - Kd d(Gv)/dq."""
        sp = self.cd.spec
        return -sp.kp * self.dr_dq() - sp.kd * self.dGv_dq()

    def dbias_dv(self):
        return -self.cd.spec.kd * self.cd.G


def geometric_stiffness(model, q, spec, lam, kin=None):
    """Extra contribution to d(G^T lam)/dq from the motion of the wrench frame.

    Zero for local-frame contacts; nonzero for world-aligned contacts and for
    the reaction on the second body of a loop closure.
    """
    if kin is None:
        kin = kinematics(model, q, np.zeros(model.nv))
    cd = constraint_data(model, kin, spec)
    der = ConstraintDerivatives(model, kin, cd)
    return der.dforce_dq(lam, "constraint") - der.dforce_dq(lam, "body")


def constraint_force_derivative(model, kin, sc, lam):
    """Total d(G^T lam)/dq over a stacked constraint set."""
    out = np.zeros((model.nv, model.nv))
    for cd, off in zip(sc.data, sc.offsets):
        d = len(cd.rows)
        der = ConstraintDerivatives(model, kin, cd)
        out += der.dforce_dq(lam[off:off + d])
    return out


def baumgarte_derivatives(model, q, v, specs):
    """Stacked (d b*/d q, d b*/d v) over a constraint set."""
    kin = kinematics(model, q, v)
    sc = stack_constraints(model, kin, specs)
    dq = np.zeros((sc.dim, model.nv))
    dv = np.zeros((sc.dim, model.nv))
    for cd, off in zip(sc.data, sc.offsets):
        d = len(cd.rows)
        der = ConstraintDerivatives(model, kin, cd)
        dq[off:off + d] = der.dbias_dq()
        dv[off:off + d] = der.dbias_dv()
    return dq, dv


# ---------------------------------------------------------------------------
# KKT differentiation
# ---------------------------------------------------------------------------

@dataclass
class ModeDerivatives:
    da_dq: np.ndarray
    da_dv: np.ndarray
    da_dtau: np.ndarray        # sensitivity to the applied generalized force
    dlam_dq: np.ndarray
    dlam_dv: np.ndarray
    dlam_dtau: np.ndarray
    drd_dpi: np.ndarray        # d r_d / d (stacked body inertial parameters)


def mode_residual_derivatives(model, sol: ModeSolution, pi=None,
                              dtau_dq=None, dtau_dv=None):
    """RHS blocks (d r_d, d r_a) of the differentiated mode KKT system."""
    nv = model.nv
    kin = kinematics(model, sol.q, sol.v, sol.a)
    sc = stack_constraints(model, kin, sol.sc.specs)
    nc = sc.dim
    dtq, dtv, M, Y = rnea_derivatives(model, sol.q, sol.v, sol.a, pi=pi)
    drd_dq = dtq - constraint_force_derivative(model, kin, sc, sol.lam)
    drd_dv = dtv.copy()
    if dtau_dq is not None:
        drd_dq -= dtau_dq
    if dtau_dv is not None:
        drd_dv -= dtau_dv
    dra_dq = np.zeros((nc, nv))
    dra_dv = np.zeros((nc, nv))
    for cd, off in zip(sc.data, sc.offsets):
        d = len(cd.rows)
        der = ConstraintDerivatives(model, kin, cd)
        dra_dq[off:off + d] = der.dacc_dq() - der.dbias_dq()
        dra_dv[off:off + d] = der.dacc_dv() - der.dbias_dv()
    return drd_dq, drd_dv, dra_dq, dra_dv, Y


def constrained_fd_derivatives(model, sol: ModeSolution, pi=None,
                               dtau_dq=None, dtau_dv=None) -> ModeDerivatives:
    """Sensitivities of (a, lam) via forward-mode differentiation of the KKT.

    dtau_dq / dtau_dv are derivatives of the applied generalized force; the
    factorization stored in the solution handle is reused for all solves.
    """
    nv = model.nv
    nc = sol.sc.dim
    drd_dq, drd_dv, dra_dq, dra_dv, Y = mode_residual_derivatives(
        model, sol, pi, dtau_dq, dtau_dv)
    Xq, Yq = sol.kkt.solve_many(-drd_dq, -dra_dq)
    Xv, Yv = sol.kkt.solve_many(-drd_dv, -dra_dv)
    Xt, Yt = sol.kkt.solve_many(np.eye(nv), np.zeros((nc, nv)))
    Xp, Yp = sol.kkt.solve_many(-Y, np.zeros((nc, Y.shape[1])))
    return ModeDerivatives(
        da_dq=Xq, da_dv=Xv, da_dtau=Xt,
        dlam_dq=-Yq, dlam_dv=-Yv, dlam_dtau=-Yt,
        drd_dpi=Y,
    ), Xp, -Yp


@dataclass
class ResetDerivatives:
    dv_dq: np.ndarray
    dv_dvm: np.ndarray
    dimp_dq: np.ndarray
    dimp_dvm: np.ndarray
    dri_dpi: np.ndarray


def reset_derivatives(model, sol: ResetSolution, pi=None) -> ResetDerivatives:
    """Sensitivities of the impact map via the same KKT differentiation.

    The impulse-balance derivative avoids inertia tensors through
    d r_i = d RNEA(q, 0, v+ - v-) - d g(q).
    """
    nv = model.nv
    dv = sol.v_plus - sol.v_minus
    z = np.zeros(nv)
    dtq_dv, _, M, Y_dv = rnea_derivatives(model, sol.q, z, dv, pi=pi)
    dtq_g, _, _, Y_g = rnea_derivatives(model, sol.q, z, z, pi=pi)
    kin = kinematics(model, sol.q, sol.v_minus)
    sc = stack_constraints(model, kin, sol.sc.specs)
    nc = sc.dim
    dri_dq = (dtq_dv - dtq_g) - constraint_force_derivative(model, kin, sc, sol.impulse)
    drv_dq = np.zeros((nc, nv))
    drv_dvm = np.zeros((nc, nv))
    for cd, off in zip(sc.data, sc.offsets):
        d = len(cd.rows)
        der = ConstraintDerivatives(model, kin, cd)
        eps = cd.spec.restitution if cd.spec.kind == "contact" else 0.0
        u = sol.v_plus + eps * sol.v_minus
        drv_dq[off:off + d] = der.dGv_dq(u=u)
        drv_dvm[off:off + d] = eps * cd.G
    Xq, Yq = sol.kkt.solve_many(-dri_dq, -drv_dq)
    Xv, Yv = sol.kkt.solve_many(M, -drv_dvm)   # d r_i/d v- = -M
    Xp, Yp = sol.kkt.solve_many(-(Y_dv - Y_g), np.zeros((nc, Y_dv.shape[1])))
    return ResetDerivatives(
        dv_dq=Xq, dv_dvm=Xv, dimp_dq=-Yq, dimp_dvm=-Yv,
        dri_dpi=Y_dv - Y_g,
    ), Xp, -Yp


def projector_derivatives(model, q, specs, w, pi=None, kkt=None):
    """Directional configuration derivative of the projected noise.

    Returns (w_hat, d w_hat/d q) for a 2*nv process vector; both halves reuse
    one factorization and the velocity-residual machinery with v := w_hat.
    """
    nv = model.nv
    kin = kinematics(model, q)
    sc = stack_constraints(model, kin, specs)
    if kkt is None:
        M = mass_matrix(model, q, pi=pi, kin=kin)
        kkt = KKTFactorization(M, sc.G, specs)
    nc = sc.dim
    w = np.asarray(w, dtype=float)
    out = np.zeros((2 * nv, nv))
    w_hat = np.zeros(2 * nv)
    z = np.zeros(nv)
    for half in range(2):
        u = w[half * nv:(half + 1) * nv]
        u_hat, zeta_neg = kkt.solve(kkt.M @ u, np.zeros(nc))
        zeta = -zeta_neg
        w_hat[half * nv:(half + 1) * nv] = u_hat
        delta = u_hat - u
        dtq_d, _, _, _ = rnea_derivatives(model, q, z, delta, pi=pi)
        dtq_g, _, _, _ = rnea_derivatives(model, q, z, z, pi=pi)
        drw_dq = (dtq_d - dtq_g) - constraint_force_derivative(model, kin, sc, zeta)
        drz_dq = np.zeros((nc, nv))
        for cd, off in zip(sc.data, sc.offsets):
            d = len(cd.rows)
            der = ConstraintDerivatives(model, kin, cd)
            drz_dq[off:off + d] = der.dGv_dq(u=u_hat)
        X, _ = kkt.solve_many(-drw_dq, -drz_dq)
        out[half * nv:(half + 1) * nv] = X
    return w_hat, out


def projector_theta_derivative(model, q, specs, w, mat, kkt=None):
    """d w_hat / d theta through the inertial dependence of the projector."""
    nv = model.nv
    kin = kinematics(model, q)
    sc = stack_constraints(model, kin, specs)
    if kkt is None:
        M = mass_matrix(model, q, pi=mat.pi, kin=kin)
        kkt = KKTFactorization(M, sc.G, specs)
    nc = sc.dim
    ntheta = mat.layout.size
    out = np.zeros((2 * nv, ntheta))
    if not mat.layout.inertial_bodies or nc == 0:
        return out
    z = np.zeros(nv)
    for half in range(2):
        u = w[half * nv:(half + 1) * nv]
        u_hat, _ = kkt.solve(kkt.M @ u, np.zeros(nc))
        delta = u_hat - u
        Yd = torque_regressor(model, q, z, delta)
        Yg = torque_regressor(model, q, z, z)
        drw_dpi = Yd - Yg
        drw_dth = np.zeros((nv, ntheta))
        for bi in mat.layout.inertial_bodies:
            sl, dpi = mat.dpi_dtheta(bi)
            drw_dth[:, sl] = drw_dpi[:, 10 * bi:10 * bi + 10] @ dpi
        X, _ = kkt.solve_many(-drw_dth, np.zeros((nc, ntheta)))
        out[half * nv:(half + 1) * nv] = X
    return out


# ---------------------------------------------------------------------------
# energy derivatives
# ---------------------------------------------------------------------------

def energy_derivatives(model, q, v, pi=None):
    """(dK/dq, dK/dv, dU/dq, Y_K, Y_U) with Y the parameter regressors."""
    from .dynamics import energies_and_regressors, gravity_vector
    kin = kinematics(model, q, v)
    work = KinWork(model, kin, pi)
    nb, nv = model.n_bodies, model.nv
    hC = np.array([work.Iw[i] @ kin.v[i] for i in range(nb)])
    for i in reversed(range(nb)):
        p = work.parent[i]
        if p >= 0:
            hC[p] += hC[i]
    dK_dq = np.zeros(nv)
    dK_dv = np.zeros(nv)
    for m in range(nv):
        bm = model.dof_body[m]
        dK_dq[m] = -cross_motion(kin.phi[m], work.vp[bm]) @ hC[bm]
        dK_dv[m] = kin.phi[m] @ hC[bm]
    dU_dq = gravity_vector(model, q, pi=pi)
    _, _, YK, YU = energies_and_regressors(model, q, v, pi=pi, kin=kin)
    return dK_dq, dK_dv, dU_dq, YK, YU
