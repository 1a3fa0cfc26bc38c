"""Robot description, consistent inertial coordinates, friction and actuation models.

Inertial parameters of one body are the 10-vector pi = (m, h, vech(I)) with
h the first mass moment (kg*m) and I the rotational inertia at the body frame
origin, vech order (xx, xy, xz, yy, yz, zz).

The unconstrained inertial coordinates are a 10-vector
phi = (sigma_m, hx, hy, hz, wx, wy, wz, sigma_x, sigma_y, sigma_z):
mass and the principal second moments are exponentials of the sigmas, the
eigenbasis of the centroidal inertia is Exp(w).  Every phi in R^10 maps to a
fully consistent pi (positive mass, SPD centroidal inertia, triangle
inequalities on the principal moments).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np

from .liegroups import (
    Transform,
    exp_so3,
    hat,
    jl_so3,
    log_so3,
)

VECH_IDX = [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)]

# couples the principal second moments L to the principal inertia moments D
MOMENT_COUPLING = np.array([[0.0, 1.0, 1.0], [1.0, 0.0, 1.0], [1.0, 1.0, 0.0]])


def vech(S):
    return np.array([S[i, j] for i, j in VECH_IDX])


def unvech(v):
    S = np.empty((3, 3))
    for k, (i, j) in enumerate(VECH_IDX):
        S[i, j] = v[k]
        S[j, i] = v[k]
    return S


class InertiaConsistencyError(ValueError):
    """Raised for inertial parameters with no realizable mass distribution."""


# ---------------------------------------------------------------------------
# unconstrained inertial coordinates
# ---------------------------------------------------------------------------

def inertial_params(phi):
    """Map unconstrained coordinates to consistent parameters pi = (m, h, vech(I))."""
    phi = np.asarray(phi, dtype=float)
    m = np.exp(phi[0])
    h = phi[1:4]
    R = exp_so3(phi[4:7])
    L = np.exp(phi[7:10])
    D = MOMENT_COUPLING @ L
    I_c = (R * D) @ R.T
    H = hat(h)
    I_o = I_c + (H @ H.T) / m
    return np.concatenate([[m], h, vech(I_o)])


def inertial_coords(pi):
    """Inverse of :func:`inertial_params`; rejects inconsistent parameters."""
    pi = np.asarray(pi, dtype=float)
    m = pi[0]
    if not m > 0.0:
        raise InertiaConsistencyError(f"mass must be positive, got {m}")
    h = pi[1:4]
    H = hat(h)
    I_c = unvech(pi[4:]) - (H @ H.T) / m
    I_c = 0.5 * (I_c + I_c.T)
    D, R = np.linalg.eigh(I_c)
    order = np.argsort(D)[::-1]
    D = D[order]
    R = R[:, order]
    if np.linalg.det(R) < 0.0:
        R[:, 2] = -R[:, 2]
    # L = P^{-1} D; positivity of L encodes the triangle inequalities
    L = 0.5 * np.array([-D[0] + D[1] + D[2], D[0] - D[1] + D[2], D[0] + D[1] - D[2]])
    if np.any(D <= 0.0) or np.any(L <= 0.0):
        raise InertiaConsistencyError(
            f"centroidal inertia not realizable: principal moments {D}")
    return np.concatenate([[np.log(m)], h, log_so3(R), np.log(L)])


def inertial_params_jac(phi):
    """10x10 Jacobian of :func:`inertial_params` at phi."""
    phi = np.asarray(phi, dtype=float)
    m = np.exp(phi[0])
    h = phi[1:4]
    w = phi[4:7]
    R = exp_so3(w)
    L = np.exp(phi[7:10])
    D = MOMENT_COUPLING @ L
    H = hat(h)
    J = np.zeros((10, 10))
    J[0, 0] = m
    J[1:4, 1:4] = np.eye(3)
    # inertia block, by phi component
    HHt = H @ H.T
    J[4:, 0] = vech(-HHt / m)
    eye = np.eye(3)
    for k in range(3):
        dHHt = 2.0 * h[k] * eye - np.outer(eye[k], h) - np.outer(h, eye[k])
        J[4:, 1 + k] = vech(dHHt / m)
    # dExp(w)/dw_i = R [Jr(w) e_i]x with Jr the right Jacobian
    Jr = jl_so3(-w)
    for i in range(3):
        U = hat(Jr @ eye[i])
        dI = (R @ U * D) @ R.T
        dI = dI + dI.T
        J[4:, 4 + i] = vech(dI)
    for a in range(3):
        dD = MOMENT_COUPLING[:, a] * L[a]
        J[4:, 7 + a] = vech((R * dD) @ R.T)
    return J


def is_fully_consistent(pi, tol=0.0):
    """Positivity, SPD centroidal inertia, and triangle inequalities."""
    pi = np.asarray(pi, dtype=float)
    if not pi[0] > tol:
        return False
    H = hat(pi[1:4])
    I_c = unvech(pi[4:]) - (H @ H.T) / pi[0]
    D = np.linalg.eigvalsh(0.5 * (I_c + I_c.T))
    if np.any(D <= tol):
        return False
    return (D[0] + D[1] > D[2] - tol)  # eigvalsh sorts ascending


# ---------------------------------------------------------------------------
# joint friction
# ---------------------------------------------------------------------------

EXP_FRICTION_SLOTS = (0, 1, 3, 4, 5)  # gamma_2 is stored directly


def friction_gamma(mu):
    """Friction coefficients from log coordinates (gamma_2 kept linear)."""
    mu = np.asarray(mu, dtype=float)
    g = mu.copy()
    for i in EXP_FRICTION_SLOTS:
        g[i] = np.exp(mu[i])
    return g


def friction_gamma_jac(mu):
    """Diagonal d gamma / d mu."""
    mu = np.asarray(mu, dtype=float)
    d = np.ones(6)
    for i in EXP_FRICTION_SLOTS:
        d[i] = np.exp(mu[i])
    return d


def friction_torque(v, gamma):
    """Smooth joint friction torque: stiction/Stribeck bump + dry + viscous terms.

    tau_f = g0 (tanh(g1 v) - tanh(g2 v)) + g3 tanh(g4 v) + g5 v

    Dissipative (v * tau_f >= 0) whenever gamma_0,1,3,4,5 >= 0 and
    gamma_1 >= gamma_2: for v > 0, tanh(g1 v) >= tanh(g2 v) exactly when
    g1 >= g2, and the other two terms are odd with nonnegative gain.
    """
    g = gamma
    return (g[0] * (np.tanh(g[1] * v) - np.tanh(g[2] * v))
            + g[3] * np.tanh(g[4] * v) + g[5] * v)


def friction_derivs(v, gamma):
    """(d tau_f/d v, d tau_f/d gamma) for scalar v."""
    g = gamma
    t1, t2, t4 = np.tanh(g[1] * v), np.tanh(g[2] * v), np.tanh(g[4] * v)
    c1, c2, c4 = 1.0 - t1 * t1, 1.0 - t2 * t2, 1.0 - t4 * t4
    d_v = g[0] * g[1] * c1 - g[0] * g[2] * c2 + g[3] * g[4] * c4 + g[5]
    d_g = np.array([
        t1 - t2,
        g[0] * v * c1,
        -g[0] * v * c2,
        t4,
        g[3] * v * c4,
        v,
    ])
    return d_v, d_g


# ---------------------------------------------------------------------------
# robot model
# ---------------------------------------------------------------------------

JOINT_NQ = {"revolute": 1, "prismatic": 1, "floating": 7}
JOINT_NV = {"revolute": 1, "prismatic": 1, "floating": 6}


@dataclass(frozen=True)
class Body:
    name: str
    parent: int                       # index of parent body, -1 = world
    joint_type: str                   # revolute | prismatic | floating
    joint_placement: Transform        # parent frame -> joint frame at q = 0
    axis: np.ndarray | None           # joint axis in the child frame (1-dof)
    inertia: np.ndarray               # pi 10-vector in the child frame
    identify: bool = False


@dataclass(frozen=True)
class ConstraintSpec:
    """Bilateral contact (body_b == -1) or loop closure between two frames."""

    kind: str                         # "contact" | "loop"
    body_a: int
    frame_a: Transform
    body_b: int = -1
    frame_b: Transform = None         # reference placement (world) for contacts
    dim: int = 3                      # 3 -> point rows, 6 -> full frame
    world_aligned: bool = False
    kp: float = 0.0
    kd: float = 0.0
    restitution: float = 0.0
    name: str = ""


@dataclass(frozen=True)
class FrictionSpec:
    body: int                         # body whose (1-dof) joint dissipates
    mu: np.ndarray                    # 6 log coordinates
    identify: bool = False


@dataclass(frozen=True)
class Actuation:
    bodies: tuple                     # bodies whose joint dof is actuated
    gains: np.ndarray                 # command scale per actuated joint
    identify_gains: bool = False


@dataclass(frozen=True)
class RobotModel:
    bodies: tuple
    constraints: tuple = ()
    frictions: tuple = ()
    actuation: Actuation | None = None
    gravity: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, -9.81]))
    name: str = "robot"

    def __post_init__(self):
        for i, b in enumerate(self.bodies):
            if not (-1 <= b.parent < i):
                raise ValueError(f"body {i} parent {b.parent} does not form a tree")

    @property
    def n_bodies(self):
        return len(self.bodies)

    @cached_property
    def nq(self):
        return sum(JOINT_NQ[b.joint_type] for b in self.bodies)

    @cached_property
    def nv(self):
        return sum(JOINT_NV[b.joint_type] for b in self.bodies)

    @cached_property
    def idx_q(self):
        out, k = [], 0
        for b in self.bodies:
            out.append(k)
            k += JOINT_NQ[b.joint_type]
        return tuple(out)

    @cached_property
    def idx_v(self):
        out, k = [], 0
        for b in self.bodies:
            out.append(k)
            k += JOINT_NV[b.joint_type]
        return tuple(out)

    @cached_property
    def dof_body(self):
        """Body index owning each tangent dof."""
        out = []
        for i, b in enumerate(self.bodies):
            out.extend([i] * JOINT_NV[b.joint_type])
        return np.array(out, dtype=int)

    @cached_property
    def ancestors(self):
        """Per body, the list of body indices from root to the body itself."""
        anc = []
        for i, b in enumerate(self.bodies):
            chain = [] if b.parent < 0 else list(anc[b.parent])
            chain.append(i)
            anc.append(tuple(chain))
        return tuple(anc)

    @cached_property
    def ancestor_dofs(self):
        """Per body, array of tangent dofs on the root-to-body path."""
        out = []
        for i in range(self.n_bodies):
            dofs = []
            for j in self.ancestors[i]:
                nvj = JOINT_NV[self.bodies[j].joint_type]
                dofs.extend(range(self.idx_v[j], self.idx_v[j] + nvj))
            out.append(np.array(dofs, dtype=int))
        return tuple(out)

    @cached_property
    def subtree(self):
        """Per body, sorted array of bodies in its subtree (itself included)."""
        children = [[] for _ in range(self.n_bodies)]
        for i, b in enumerate(self.bodies):
            if b.parent >= 0:
                children[b.parent].append(i)
        out = [None] * self.n_bodies
        for i in reversed(range(self.n_bodies)):
            acc = [i]
            for c in children[i]:
                acc.extend(out[c])
            out[i] = sorted(acc)
        return tuple(np.array(s, dtype=int) for s in out)

    @cached_property
    def actuated_dofs(self):
        if self.actuation is None:
            return np.array([], dtype=int)
        return np.array([self.idx_v[b] for b in self.actuation.bodies], dtype=int)

    def neutral_config(self):
        q = np.zeros(self.nq)
        for i, b in enumerate(self.bodies):
            if b.joint_type == "floating":
                q[self.idx_q[i] + 3] = 1.0  # identity quaternion (w, x, y, z)
        return q

    def body_index(self, name):
        for i, b in enumerate(self.bodies):
            if b.name == name:
                return i
        raise KeyError(name)


# ---------------------------------------------------------------------------
# parameter vector
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ParamLayout:
    """Slices of the decision vector theta into model slots.

    theta stacks, in order: 10 inertial coordinates per identified body,
    6 friction log coordinates per identified joint, then actuation gains
    when flagged for identification.
    """

    inertial_bodies: tuple
    friction_entries: tuple           # indices into model.frictions
    n_gains: int

    @property
    def size(self):
        return 10 * len(self.inertial_bodies) + 6 * len(self.friction_entries) + self.n_gains

    def inertial_slice(self, k):
        return slice(10 * k, 10 * (k + 1))

    def friction_slice(self, k):
        off = 10 * len(self.inertial_bodies)
        return slice(off + 6 * k, off + 6 * (k + 1))

    @property
    def gain_slice(self):
        off = 10 * len(self.inertial_bodies) + 6 * len(self.friction_entries)
        return slice(off, off + self.n_gains)


def param_layout(model: RobotModel) -> ParamLayout:
    inertial = tuple(i for i, b in enumerate(model.bodies) if b.identify)
    frictions = tuple(k for k, f in enumerate(model.frictions) if f.identify)
    n_gains = 0
    if model.actuation is not None and model.actuation.identify_gains:
        n_gains = len(model.actuation.bodies)
    return ParamLayout(inertial, frictions, n_gains)


def pack_params(model: RobotModel, layout: ParamLayout | None = None):
    """theta holding the model's current values on all identified slots."""
    layout = layout or param_layout(model)
    theta = np.zeros(layout.size)
    for k, bi in enumerate(layout.inertial_bodies):
        theta[layout.inertial_slice(k)] = inertial_coords(model.bodies[bi].inertia)
    for k, fi in enumerate(layout.friction_entries):
        theta[layout.friction_slice(k)] = model.frictions[fi].mu
    if layout.n_gains:
        theta[layout.gain_slice] = model.actuation.gains
    return theta


class Materialized:
    """Model quantities at a given theta: per-body pi, per-joint gamma, gains.

    Frozen slots keep the model's stored values; identified slots come from
    theta.  Jacobian blocks d(pi)/d(theta-slice) are cached per body.
    """

    def __init__(self, model: RobotModel, layout: ParamLayout, theta):
        self.model = model
        self.layout = layout
        self.theta = np.asarray(theta, dtype=float)
        self.pi = np.array([b.inertia for b in model.bodies])
        self._dpi = {}
        for k, bi in enumerate(layout.inertial_bodies):
            phi = self.theta[layout.inertial_slice(k)]
            self.pi[bi] = inertial_params(phi)
            self._dpi[bi] = (k, phi)
        self.mu = {f.body: f.mu for f in model.frictions}
        self.gamma = {}
        self._dgamma = {}
        for k, fi in enumerate(layout.friction_entries):
            f = model.frictions[fi]
            mu = self.theta[layout.friction_slice(k)]
            self.mu[f.body] = mu
            self._dgamma[f.body] = k
        for body, mu in self.mu.items():
            self.gamma[body] = friction_gamma(mu)
        if model.actuation is None:
            self.gains = np.array([])
        elif layout.n_gains:
            self.gains = self.theta[layout.gain_slice]
        else:
            self.gains = np.asarray(model.actuation.gains, dtype=float)

    def dpi_dtheta(self, body):
        """(theta-slice, 10x10 Jacobian) for an identified body, else None."""
        if body not in self._dpi:
            return None
        k, phi = self._dpi[body]
        return self.layout.inertial_slice(k), inertial_params_jac(phi)

    def dgamma_slot(self, body):
        """(theta-slice, diag d gamma/d mu) for an identified joint, else None."""
        if body not in self._dgamma:
            return None
        k = self._dgamma[body]
        return self.layout.friction_slice(k), friction_gamma_jac(self.mu[body])


def actuation_effort(model: RobotModel, v, mat: Materialized, u_cmd):
    """Generalized force tau = S(theta) (u_cmd - tau_f) with passive friction.

    Returns (tau, d tau/d v diag over dofs, d tau/d theta).  Joint friction on
    actuated joints is scaled by the gain; friction on non-actuated joints
    enters directly.  Floating-base rows are always zero.
    """
    nv = model.nv
    ntheta = mat.layout.size
    tau = np.zeros(nv)
    dtau_dv = np.zeros(nv)
    dtau_dth = np.zeros((nv, ntheta))
    act = model.actuation
    act_bodies = set(act.bodies) if act is not None else set()
    if act is not None:
        if len(u_cmd) != len(act.bodies):
            raise ValueError(
                f"expected {len(act.bodies)} commands, got {len(u_cmd)}")
        for k, body in enumerate(act.bodies):
            dof = model.idx_v[body]
            g = mat.gains[k]
            tf, dv, dgam = 0.0, 0.0, None
            if body in mat.gamma:
                tf = friction_torque(v[dof], mat.gamma[body])
                dv, dgam = friction_derivs(v[dof], mat.gamma[body])
            tau[dof] = g * (u_cmd[k] - tf)
            dtau_dv[dof] = -g * dv
            slot = mat.dgamma_slot(body)
            if slot is not None:
                sl, dmu = slot
                dtau_dth[dof, sl] = -g * dgam * dmu
            if mat.layout.n_gains:
                dtau_dth[dof, mat.layout.gain_slice.start + k] = u_cmd[k] - tf
    for body, gamma in mat.gamma.items():
        if body in act_bodies:
            continue
        dof = model.idx_v[body]
        tf = friction_torque(v[dof], gamma)
        dv, dgam = friction_derivs(v[dof], gamma)
        tau[dof] -= tf
        dtau_dv[dof] -= dv
        slot = mat.dgamma_slot(body)
        if slot is not None:
            sl, dmu = slot
            dtau_dth[dof, sl] -= dgam * dmu
    return tau, dtau_dv, dtau_dth


# ---------------------------------------------------------------------------
# JSON model files
# ---------------------------------------------------------------------------

def _transform_to_json(T: Transform):
    return {"rotation": np.asarray(T.rot).tolist(), "translation": np.asarray(T.trans).tolist()}


def _transform_from_json(d):
    if d is None:
        return Transform.identity()
    return Transform(np.array(d["rotation"], dtype=float), np.array(d["translation"], dtype=float))


def model_to_json(model: RobotModel):
    doc = {
        "name": model.name,
        "gravity": model.gravity.tolist(),
        "bodies": [
            {
                "name": b.name,
                "parent": b.parent,
                "joint": {
                    "type": b.joint_type,
                    "placement": _transform_to_json(b.joint_placement),
                    "axis": None if b.axis is None else np.asarray(b.axis).tolist(),
                },
                "inertia": np.asarray(b.inertia).tolist(),
                "identify": bool(b.identify),
            }
            for b in model.bodies
        ],
        "constraints": [
            {
                "kind": c.kind,
                "name": c.name,
                "body_a": c.body_a,
                "frame_a": _transform_to_json(c.frame_a),
                "body_b": c.body_b,
                "frame_b": None if c.frame_b is None else _transform_to_json(c.frame_b),
                "dim": c.dim,
                "world_aligned": bool(c.world_aligned),
                "kp": c.kp,
                "kd": c.kd,
                "restitution": c.restitution,
            }
            for c in model.constraints
        ],
        "frictions": [
            {"body": f.body, "mu": np.asarray(f.mu).tolist(), "identify": bool(f.identify)}
            for f in model.frictions
        ],
        "actuation": None if model.actuation is None else {
            "bodies": list(model.actuation.bodies),
            "gains": np.asarray(model.actuation.gains).tolist(),
            "identify_gains": bool(model.actuation.identify_gains),
        },
    }
    return doc


def model_from_json(doc) -> RobotModel:
    bodies = tuple(
        Body(
            name=b["name"],
            parent=int(b["parent"]),
            joint_type=b["joint"]["type"],
            joint_placement=_transform_from_json(b["joint"].get("placement")),
            axis=None if b["joint"].get("axis") is None else np.array(b["joint"]["axis"], dtype=float),
            inertia=np.array(b["inertia"], dtype=float),
            identify=bool(b.get("identify", False)),
        )
        for b in doc["bodies"]
    )
    constraints = tuple(
        ConstraintSpec(
            kind=c["kind"],
            name=c.get("name", ""),
            body_a=int(c["body_a"]),
            frame_a=_transform_from_json(c.get("frame_a")),
            body_b=int(c.get("body_b", -1)),
            frame_b=None if c.get("frame_b") is None else _transform_from_json(c["frame_b"]),
            dim=int(c.get("dim", 3)),
            world_aligned=bool(c.get("world_aligned", False)),
            kp=float(c.get("kp", 0.0)),
            kd=float(c.get("kd", 0.0)),
            restitution=float(c.get("restitution", 0.0)),
        )
        for c in doc.get("constraints", [])
    )
    frictions = tuple(
        FrictionSpec(body=int(f["body"]), mu=np.array(f["mu"], dtype=float),
                     identify=bool(f.get("identify", False)))
        for f in doc.get("frictions", [])
    )
    act = doc.get("actuation")
    actuation = None
    if act is not None:
        actuation = Actuation(
            bodies=tuple(int(i) for i in act["bodies"]),
            gains=np.array(act["gains"], dtype=float),
            identify_gains=bool(act.get("identify_gains", False)),
        )
    return RobotModel(
        bodies=bodies,
        constraints=constraints,
        frictions=frictions,
        actuation=actuation,
        gravity=np.array(doc.get("gravity", [0.0, 0.0, -9.81]), dtype=float),
        name=doc.get("name", "robot"),
    )


def save_model(model: RobotModel, path):
    with open(path, "w") as f:
        json.dump(model_to_json(model), f, indent=1)


def load_model(path) -> RobotModel:
    with open(path) as f:
        return model_from_json(json.load(f))


def set_identified_params(model: RobotModel, mat: Materialized) -> RobotModel:
    """New model with identified slots replaced by the materialized values."""
    bodies = list(model.bodies)
    for k, bi in enumerate(mat.layout.inertial_bodies):
        bodies[bi] = replace(bodies[bi], inertia=mat.pi[bi].copy())
    frictions = list(model.frictions)
    for k, fi in enumerate(mat.layout.friction_entries):
        f = frictions[fi]
        frictions[fi] = replace(f, mu=np.asarray(mat.mu[f.body], dtype=float).copy())
    actuation = model.actuation
    if actuation is not None and mat.layout.n_gains:
        actuation = replace(actuation, gains=mat.gains.copy())
    return replace(model, bodies=tuple(bodies), frictions=tuple(frictions), actuation=actuation)
