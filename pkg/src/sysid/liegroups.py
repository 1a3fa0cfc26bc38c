"""Rotation and rigid-transform groups, 6-D spatial algebra, and map Jacobians.

Conventions used across the whole package:

* spatial motion vectors stack (angular; linear); spatial forces stack
  (torque; force)
* a ``Transform`` maps coordinates FROM its local frame TO the parent frame
* tangent perturbations act on the right: ``T' = T * exp6(delta)``
* floating-base orientation is stored as a unit quaternion (w, x, y, z);
  3x3 matrices are the working representation inside all kernels
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SMALL_ANGLE = 1e-6


def hat(w):
    """3x3 skew matrix of a 3-vector."""
    return np.array([
        [0.0, -w[2], w[1]],
        [w[2], 0.0, -w[0]],
        [-w[1], w[0], 0.0],
    ])


def vee(W):
    """Inverse of :func:`hat` (takes the antisymmetric part)."""
    return 0.5 * np.array([W[2, 1] - W[1, 2], W[0, 2] - W[2, 0], W[1, 0] - W[0, 1]])


def exp_so3(w):
    """Rotation matrix of the rotation vector ``w`` (Rodrigues)."""
    w = np.asarray(w, dtype=float)
    theta2 = w @ w
    theta = np.sqrt(theta2)
    if theta < SMALL_ANGLE:
        # 4th-order Taylor of sin(t)/t and (1-cos t)/t^2
        s = 1.0 - theta2 / 6.0 + theta2 * theta2 / 120.0
        c = 0.5 - theta2 / 24.0 + theta2 * theta2 / 720.0
    else:
        s = np.sin(theta) / theta
        c = (1.0 - np.cos(theta)) / theta2
    W = hat(w)
    return np.eye(3) + s * W + c * (W @ W)


def log_so3(R):
    """Rotation vector of ``R``; theta < pi regular, theta == pi via axis extraction."""
    tr = np.trace(R)
    cos_t = min(1.0, max(-1.0, 0.5 * (tr - 1.0)))
    theta = np.arccos(cos_t)
    if theta < SMALL_ANGLE:
        w = vee(R)
        return w * (1.0 + theta * theta / 6.0)
    if np.pi - theta < 1e-4:
        # Near the branch cut the antisymmetric part degenerates; recover the
        # axis from the symmetric part, 0.5 (R + R^T) = cos(t) I + (1-cos t) aa^T.
        S = 0.5 * (R + R.T)
        B = (S - cos_t * np.eye(3)) / (1.0 - cos_t)
        k = int(np.argmax(np.diag(B)))
        axis = B[:, k] / np.sqrt(max(B[k, k], 1e-300))
        axis /= np.linalg.norm(axis)
        if vee(R) @ axis < 0.0:
            axis = -axis
        return theta * axis
    return theta / (2.0 * np.sin(theta)) * vee(R - R.T)


def jl_so3(w):
    """Left Jacobian of the SO(3) exponential."""
    w = np.asarray(w, dtype=float)
    theta2 = w @ w
    theta = np.sqrt(theta2)
    W = hat(w)
    if theta < SMALL_ANGLE:
        c1 = 0.5 - theta2 / 24.0 + theta2 * theta2 / 720.0
        c2 = 1.0 / 6.0 - theta2 / 120.0 + theta2 * theta2 / 5040.0
    else:
        c1 = (1.0 - np.cos(theta)) / theta2
        c2 = (theta - np.sin(theta)) / (theta2 * theta)
    return np.eye(3) + c1 * W + c2 * (W @ W)


def jl_so3_inv(w):
    """Inverse left Jacobian of the SO(3) exponential."""
    w = np.asarray(w, dtype=float)
    theta2 = w @ w
    theta = np.sqrt(theta2)
    W = hat(w)
    if theta < SMALL_ANGLE:
        beta = 1.0 / 12.0 + theta2 / 720.0
    else:
        beta = 1.0 / theta2 - (1.0 + np.cos(theta)) / (2.0 * theta * np.sin(theta))
    return np.eye(3) - 0.5 * W + beta * (W @ W)


def jlog_so3(R):
    """Jacobian of log_so3 under right perturbation: Log(R exp(d)) ~ Log(R) + J d."""
    w = log_so3(R)
    # right-Jacobian inverse of exp at w
    return jl_so3_inv(-w)


@dataclass(frozen=True)
class Transform:
    """Rigid placement (rotation, translation); maps local coords to parent coords."""

    rot: np.ndarray
    trans: np.ndarray

    @staticmethod
    def identity():
        return Transform(np.eye(3), np.zeros(3))

    def compose(self, other: "Transform") -> "Transform":
        return Transform(self.rot @ other.rot, self.rot @ other.trans + self.trans)

    def inverse(self) -> "Transform":
        Rt = self.rot.T
        return Transform(Rt, -Rt @ self.trans)

    def apply(self, point):
        return self.rot @ np.asarray(point) + self.trans

    def adjoint(self):
        """6x6 Pluecker transform acting on motion vectors (angular; linear)."""
        A = np.zeros((6, 6))
        A[:3, :3] = self.rot
        A[3:, 3:] = self.rot
        A[3:, :3] = hat(self.trans) @ self.rot
        return A

    def adjoint_tr_inv(self):
        """Force map local -> parent, i.e. Ad(T^{-1})^T."""
        A = np.zeros((6, 6))
        A[:3, :3] = self.rot
        A[3:, 3:] = self.rot
        A[:3, 3:] = hat(self.trans) @ self.rot
        return A

    def act_motion(self, xi):
        w = self.rot @ xi[:3]
        return np.concatenate([w, self.rot @ xi[3:] + np.cross(self.trans, w)])

    def act_force(self, f):
        fr = self.rot @ f[3:]
        return np.concatenate([self.rot @ f[:3] + np.cross(self.trans, fr), fr])


def crm(xi):
    """Spatial cross product matrix for motion vectors ([xi] x)."""
    W = hat(xi[:3])
    C = np.zeros((6, 6))
    C[:3, :3] = W
    C[3:, 3:] = W
    C[3:, :3] = hat(xi[3:])
    return C


def crf(xi):
    """Spatial cross product matrix for force vectors ([xi] x*) = -crm(xi)^T."""
    W = hat(xi[:3])
    C = np.zeros((6, 6))
    C[:3, :3] = W
    C[3:, 3:] = W
    C[:3, 3:] = hat(xi[3:])
    return C


def cross_motion(a, b):
    """crm(a) @ b without forming the matrix."""
    wa, va = a[:3], a[3:]
    return np.concatenate([np.cross(wa, b[:3]), np.cross(va, b[:3]) + np.cross(wa, b[3:])])


def cross_force(a, f):
    """crf(a) @ f without forming the matrix."""
    wa, va = a[:3], a[3:]
    return np.concatenate([np.cross(wa, f[:3]) + np.cross(va, f[3:]), np.cross(wa, f[3:])])


def exp_se3(xi):
    """Exponential of a 6-vector twist (angular; linear) to a Transform."""
    xi = np.asarray(xi, dtype=float)
    w, v = xi[:3], xi[3:]
    return Transform(exp_so3(w), jl_so3(w) @ v)


def log_se3(T: Transform):
    """6-vector twist (angular; linear) with exp_se3(log_se3(T)) == T."""
    w = log_so3(T.rot)
    return np.concatenate([w, jl_so3_inv(w) @ T.trans])


def _se3_Q(w, v):
    """Coupling block of the left Jacobian of exp_se3."""
    theta2 = w @ w
    theta = np.sqrt(theta2)
    W = hat(w)
    V = hat(v)
    if theta < 0.5:
        # series: Q = sum_{n>=1} S_n / (n+1)!, S_1 = V, S_{n+1} = W S_n + V W^n
        Q = np.zeros((3, 3))
        S = V.copy()
        Wp = np.eye(3)
        fact = 1.0
        for n in range(1, 12):
            fact *= (n + 1)
            Q += S / fact
            Wp = Wp @ W
            S = W @ S + V @ Wp
        return Q
    s, c = np.sin(theta), np.cos(theta)
    c1 = (theta - s) / theta**3
    c2 = (1.0 - 0.5 * theta2 - c) / theta**4
    c3 = 0.5 * (c2 - 3.0 * (theta - s - theta**3 / 6.0) / theta**5)
    Q = (0.5 * V
         + c1 * (W @ V + V @ W + W @ V @ W)
         - c2 * (W @ W @ V + V @ W @ W - 3.0 * W @ V @ W)
         - c3 * (W @ V @ W @ W + W @ W @ V @ W))
    return Q


def jl_se3(xi):
    """Left Jacobian of exp_se3 at xi (angular; linear block layout)."""
    w, v = xi[:3], xi[3:]
    J3 = jl_so3(w)
    J = np.zeros((6, 6))
    J[:3, :3] = J3
    J[3:, 3:] = J3
    J[3:, :3] = _se3_Q(w, v)
    return J


def jl_se3_inv(xi):
    w, v = xi[:3], xi[3:]
    J3i = jl_so3_inv(w)
    Q = _se3_Q(w, v)
    J = np.zeros((6, 6))
    J[:3, :3] = J3i
    J[3:, 3:] = J3i
    J[3:, :3] = -J3i @ Q @ J3i
    return J


def jlog_se3(T: Transform):
    """Jacobian of log_se3 under right perturbation of T.

    log_se3(T * exp_se3(d)) ~ log_se3(T) + jlog_se3(T) @ d
    """
    xi = log_se3(T)
    return jl_se3_inv(-xi)


def plucker_time_derivative(X12, v1, v2):
    """Time derivative of the adjoint of the frame-2-to-frame-1 transform.

    For X12 mapping motion from frame 2 to frame 1, with frame spatial
    velocities v1/v2 expressed locally, dX12/dt = [X12 v2 - v1]x X12.
    """
    return crm(X12 @ v2 - v1) @ X12


def orthonormalize(R):
    """Nearest rotation matrix (polar projection via SVD)."""
    U, _, Vt = np.linalg.svd(R)
    D = np.eye(3)
    D[2, 2] = np.linalg.det(U @ Vt)
    return U @ D @ Vt


# quaternion helpers (w, x, y, z) -----------------------------------------

def quat_to_rot(q):
    w, x, y, z = q / np.linalg.norm(q)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def rot_to_quat(R):
    t = np.trace(R)
    if t > 0.0:
        s = np.sqrt(t + 1.0) * 2.0
        q = np.array([0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s,
                      (R[1, 0] - R[0, 1]) / s])
    else:
        i = int(np.argmax(np.diag(R)))
        j, k = (i + 1) % 3, (i + 2) % 3
        s = np.sqrt(max(R[i, i] - R[j, j] - R[k, k] + 1.0, 0.0)) * 2.0
        q = np.empty(4)
        q[0] = (R[k, j] - R[j, k]) / s
        q[1 + i] = 0.25 * s
        q[1 + j] = (R[j, i] + R[i, j]) / s
        q[1 + k] = (R[k, i] + R[i, k]) / s
    if q[0] < 0.0:
        q = -q
    return q / np.linalg.norm(q)
