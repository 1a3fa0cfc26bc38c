"""Desk-scale robot fixtures used by tests, the derivative checker, and studies.

All fixtures are built programmatically so geometry and inertia stay exactly
reproducible; ``save_model`` can export any of them to the JSON schema.
"""

from __future__ import annotations

import numpy as np

from .liegroups import Transform
from .model import (
    Actuation,
    Body,
    ConstraintSpec,
    FrictionSpec,
    RobotModel,
    inertial_params,
    vech,
)


def _box_inertia(m, lx, ly, lz):
    Ixx = m / 12.0 * (ly * ly + lz * lz)
    Iyy = m / 12.0 * (lx * lx + lz * lz)
    Izz = m / 12.0 * (lx * lx + ly * ly)
    return np.diag([Ixx, Iyy, Izz])


def _rod_pi(m, length, com_offset=None):
    """Slender rod along +x: pi at the joint-side end."""
    c = np.array([length / 2.0, 0.0, 0.0]) if com_offset is None else np.asarray(com_offset)
    I_c = _box_inertia(m, length, 0.05 * length, 0.05 * length)
    h = m * c
    from .liegroups import hat
    I_o = I_c + (hat(h) @ hat(h).T) / m
    return np.concatenate([[m], h, vech(I_o)])


def _trans(xyz):
    return Transform(np.eye(3), np.asarray(xyz, dtype=float))


def pendulum(identify=True, friction=False, gains=False):
    """Point-mass pendulum swinging about the world y axis."""
    m, length = 1.1, 0.8
    h = m * np.array([length, 0.0, 0.0])
    from .liegroups import hat
    I_o = (hat(h) @ hat(h).T) / m + 1e-3 * np.eye(3)
    pi = np.concatenate([[m], h, vech(I_o)])
    bodies = (
        Body("link", -1, "revolute", Transform.identity(), np.array([0.0, 1.0, 0.0]),
             pi, identify=identify),
    )
    frictions = ()
    if friction:
        mu = np.array([np.log(0.12), np.log(30.0), 10.0, np.log(0.25), np.log(18.0), np.log(0.05)])
        frictions = (FrictionSpec(body=0, mu=mu, identify=True),)
    act = Actuation(bodies=(0,), gains=np.array([1.0]), identify_gains=gains)
    return RobotModel(bodies=bodies, frictions=frictions, actuation=act, name="pendulum")


def double_pendulum(identify=True, friction=False, lengths=(0.9, 0.7), masses=(1.2, 0.8)):
    """Two slender rods rotating about y; classic closed-form comparison case."""
    l1, l2 = lengths
    m1, m2 = masses
    bodies = (
        Body("link1", -1, "revolute", Transform.identity(), np.array([0.0, 1.0, 0.0]),
             _rod_pi(m1, l1), identify=identify),
        Body("link2", 0, "revolute", _trans([l1, 0.0, 0.0]), np.array([0.0, 1.0, 0.0]),
             _rod_pi(m2, l2), identify=identify),
    )
    frictions = ()
    if friction:
        frictions = (
            FrictionSpec(0, np.array([np.log(0.1), np.log(25.0), 8.0, np.log(0.2), np.log(15.0), np.log(0.04)]), True),
            FrictionSpec(1, np.array([np.log(0.08), np.log(22.0), 6.0, np.log(0.15), np.log(12.0), np.log(0.03)]), True),
        )
    act = Actuation(bodies=(0, 1), gains=np.ones(2))
    return RobotModel(bodies=bodies, frictions=frictions, actuation=act, name="double_pendulum")


def arm3(identify=True, friction=True):
    """Fixed-base 3-link arm with mixed joint axes (z, y, y)."""
    bodies = (
        Body("shoulder", -1, "revolute", Transform.identity(), np.array([0.0, 0.0, 1.0]),
             _rod_pi(1.5, 0.3), identify=identify),
        Body("upper", 0, "revolute", _trans([0.3, 0.0, 0.0]), np.array([0.0, 1.0, 0.0]),
             _rod_pi(1.0, 0.45), identify=identify),
        Body("fore", 1, "revolute", _trans([0.45, 0.0, 0.0]), np.array([0.0, 1.0, 0.0]),
             _rod_pi(0.6, 0.4), identify=identify),
    )
    frictions = ()
    if friction:
        frictions = tuple(
            FrictionSpec(i, np.array([np.log(0.1 + 0.03 * i), np.log(28.0 - 4 * i), 6.0 + i,
                                      np.log(0.2 - 0.04 * i), np.log(16.0 + 2 * i),
                                      np.log(0.05 + 0.01 * i)]), True)
            for i in range(3)
        )
    act = Actuation(bodies=(0, 1, 2), gains=np.ones(3))
    return RobotModel(bodies=bodies, frictions=frictions, actuation=act, name="arm3")


def biped(identify="legs", kp=10.0, kd=6.0, stagger=0.08):
    """Floating-base biped with two point feet in contact.

    Torso is a free joint; each leg has a hip and knee joint about y.  Feet
    are 3-d point contacts against their nominal world anchors.  The stance
    is staggered fore-aft: with all leg joints about y, a square stance makes
    the two lateral constraint rows identical (rank-deficient contact set).
    """
    torso_pi = np.concatenate([[8.0], np.zeros(3), vech(_box_inertia(8.0, 0.25, 0.30, 0.45))])
    up, lo = 0.35, 0.35
    hip_off = 0.11
    bodies = (
        Body("torso", -1, "floating", Transform.identity(), None, torso_pi,
             identify=(identify == "all")),
        Body("l_thigh", 0, "revolute", _trans([0.0, hip_off, -0.20]), np.array([0.0, 1.0, 0.0]),
             _leg_pi(1.4, up), identify=identify in ("legs", "all")),
        Body("l_shank", 1, "revolute", _trans([0.0, 0.0, -up]), np.array([0.0, 1.0, 0.0]),
             _leg_pi(0.9, lo), identify=identify in ("legs", "all")),
        Body("r_thigh", 0, "revolute", _trans([0.0, -hip_off, -0.20]), np.array([0.0, 1.0, 0.0]),
             _leg_pi(1.4, up), identify=identify in ("legs", "all")),
        Body("r_shank", 3, "revolute", _trans([0.0, 0.0, -up]), np.array([0.0, 1.0, 0.0]),
             _leg_pi(0.9, lo), identify=identify in ("legs", "all")),
    )
    foot_l = np.array([stagger, hip_off, 0.0])
    foot_r = np.array([-stagger, -hip_off, 0.0])
    constraints = (
        ConstraintSpec("contact", body_a=2, frame_a=_trans([0.0, 0.0, -lo]),
                       frame_b=_trans(foot_l), dim=3, world_aligned=True,
                       kp=kp, kd=kd, name="l_foot"),
        ConstraintSpec("contact", body_a=4, frame_a=_trans([0.0, 0.0, -lo]),
                       frame_b=_trans(foot_r), dim=3, world_aligned=True,
                       kp=kp, kd=kd, name="r_foot"),
    )
    act = Actuation(bodies=(1, 2, 3, 4), gains=np.ones(4))
    return RobotModel(bodies=bodies, constraints=constraints, actuation=act, name="biped")


def _leg_pi(m, length):
    """Slender leg segment along -z."""
    c = np.array([0.0, 0.0, -length / 2.0])
    I_c = _box_inertia(m, 0.05 * length, 0.05 * length, length)
    from .liegroups import hat
    h = m * c
    I_o = I_c + (hat(h) @ hat(h).T) / m
    return np.concatenate([[m], h, vech(I_o)])


def biped_standing_config(model):
    """Bent-knee stance with both feet projected exactly onto their anchors."""
    q = model.neutral_config()
    bend = 0.25
    q[2] = 0.20 + 0.35 * np.cos(bend / 2) * 2.0
    q[7 + 0] = bend / 2    # l hip
    q[7 + 1] = -bend       # l knee
    q[7 + 2] = bend / 2    # r hip
    q[7 + 3] = -bend       # r knee
    return project_to_closure(model, q)


def closed_chain(identify=True, kp=10.0, kd=6.0):
    """Spatial four-joint chain closed onto the ground by a point constraint.

    The mixed joint axes keep all three closure rows active, leaving one
    internal degree of freedom (a four-bar-style loop at desk scale).
    """
    seg = 0.4
    bodies = (
        Body("bar1", -1, "revolute", Transform.identity(), np.array([0.0, 1.0, 0.0]),
             _rod_pi(0.8, seg), identify=identify),
        Body("bar2", 0, "revolute", _trans([seg, 0.0, 0.0]), np.array([0.0, 0.0, 1.0]),
             _rod_pi(0.6, seg), identify=identify),
        Body("bar3", 1, "revolute", _trans([seg, 0.0, 0.0]), np.array([0.0, 1.0, 0.0]),
             _rod_pi(0.5, seg), identify=identify),
        Body("bar4", 2, "revolute", _trans([seg, 0.0, 0.0]), np.array([0.0, 0.0, 1.0]),
             _rod_pi(0.4, seg), identify=identify),
    )
    anchor = np.array([1.2, 0.1, -0.5])
    constraints = (
        ConstraintSpec("loop", body_a=3, frame_a=_trans([seg, 0.0, 0.0]),
                       body_b=-1, frame_b=_trans(anchor), dim=3, kp=kp, kd=kd,
                       name="closure"),
    )
    act = Actuation(bodies=(0,), gains=np.ones(1))
    return RobotModel(bodies=bodies, constraints=constraints, actuation=act, name="closed_chain")


def project_to_closure(model, q, specs=None, iters=200, tol=1e-12):
    """Damped Newton projection of q onto the constraint manifold."""
    from .dynamics import constraint_residual_and_jacobian, integrate_config
    specs = model.constraints if specs is None else specs
    for _ in range(iters):
        rs, Gs = [], []
        for spec in specs:
            r, G = constraint_residual_and_jacobian(model, q, spec)
            rs.append(r)
            Gs.append(G)
        r = np.concatenate(rs)
        if np.linalg.norm(r) < tol:
            break
        step = -np.linalg.pinv(np.vstack(Gs)) @ r
        alpha = 1.0
        for _ in range(12):
            q_try = integrate_config(model, q, alpha * step)
            r_try = np.concatenate([
                constraint_residual_and_jacobian(model, q_try, s)[0] for s in specs])
            if np.linalg.norm(r_try) < np.linalg.norm(r):
                q = q_try
                break
            alpha *= 0.5
        else:
            break
    return q


def closed_chain_config(model):
    """A configuration satisfying the point closure to high accuracy."""
    q = model.neutral_config()
    q[0], q[1], q[2], q[3] = 0.4, 0.5, -0.6, 0.3
    return project_to_closure(model, q)


def body_loop_pair(identify=True, kp=10.0, kd=6.0):
    """Two chains joined body-to-body: exercises loop closures between bodies."""
    seg = 0.35
    bodies = (
        Body("a1", -1, "revolute", Transform.identity(), np.array([0.0, 1.0, 0.0]),
             _rod_pi(0.7, seg), identify=identify),
        Body("a2", 0, "revolute", _trans([seg, 0.0, 0.0]), np.array([0.0, 0.0, 1.0]),
             _rod_pi(0.5, seg), identify=identify),
        Body("b1", -1, "revolute", _trans([0.8, 0.0, 0.0]), np.array([0.0, 1.0, 0.0]),
             _rod_pi(0.6, seg), identify=identify),
        Body("b2", 2, "revolute", _trans([seg, 0.0, 0.0]), np.array([0.0, 0.0, 1.0]),
             _rod_pi(0.4, seg), identify=identify),
    )
    constraints = (
        ConstraintSpec("loop", body_a=1, frame_a=_trans([seg, 0.0, 0.0]),
                       body_b=3, frame_b=_trans([seg, 0.0, 0.0]), dim=3,
                       kp=kp, kd=kd, name="bridge"),
    )
    act = Actuation(bodies=(0, 2), gains=np.ones(2))
    return RobotModel(bodies=bodies, constraints=constraints, actuation=act, name="body_loop_pair")


def body_loop_config(model):
    q = model.neutral_config()
    q[:] = [0.6, 0.4, 2.4, 0.3]
    return project_to_closure(model, q)


FIXTURES = {
    "pendulum": pendulum,
    "double_pendulum": double_pendulum,
    "arm3": arm3,
    "biped": biped,
    "closed_chain": closed_chain,
}
