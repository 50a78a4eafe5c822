"""Rigid-body algebra on SE(3).

Twists are 6-vectors stored as ``(v, w)``: translation part first, rotation
part second. ``twist_exp`` maps a twist to the transform ``T`` acting on points
as ``p -> R p + t``.

The small-angle behaviour of every coefficient is handled explicitly:
Rodrigues' formula switches to its Taylor series below ``SERIES_ANGLE``, and
the coefficients that suffer cancellation even at moderate angles use their
own, wider series windows.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateGeometryError, DomainError, InvalidArgumentError

SERIES_ANGLE = 1e-8
LOG_ANGLE_LIMIT = np.pi - 1e-6
_CUBIC_SERIES_ANGLE = 1e-2
_DERIV_SERIES_ANGLE = 1e-1


@dataclass(frozen=True)
class RigidTransform:
    """Rotation plus translation, ``p -> rotation @ p + translation``."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        t = np.asarray(self.translation, dtype=float).reshape(3)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> RigidTransform:
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, m) -> RigidTransform:
        m = np.asarray(m, dtype=float)
        return cls(m[:3, :3], m[:3, 3])

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def apply(self, points) -> np.ndarray:
        """Transform an ``(..., 3)`` array of points."""
        return np.asarray(points, dtype=float) @ self.rotation.T + self.translation

    def inverse(self) -> RigidTransform:
        Rt = self.rotation.T
        return RigidTransform(Rt, -Rt @ self.translation)

    def __matmul__(self, other: RigidTransform) -> RigidTransform:
        return RigidTransform(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def is_valid(self, tol: float = 1e-10) -> bool:
        R = self.rotation
        return bool(
            np.all(np.isfinite(R))
            and np.all(np.isfinite(self.translation))
            and np.abs(R.T @ R - np.eye(3)).max() <= tol
            and abs(np.linalg.det(R) - 1.0) <= tol
        )


def hat(w) -> np.ndarray:
    """Skew-symmetric matrix with ``hat(w) @ u == cross(w, u)``."""
    x, y, z = w
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def vee(m) -> np.ndarray:
    return np.array([m[2, 1], m[0, 2], m[1, 0]])


def _coefficients(theta: float) -> tuple[float, float, float]:
    """``sin t / t``, ``(1 - cos t) / t^2`` and ``(t - sin t) / t^3``."""
    t2 = theta * theta
    if theta < SERIES_ANGLE:
        a = 1.0 - t2 / 6.0
        b = 0.5 - t2 / 24.0
    else:
        a = np.sin(theta) / theta
        half = np.sin(0.5 * theta) / theta
        b = 2.0 * half * half
    if theta < _CUBIC_SERIES_ANGLE:
        c = 1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0
    else:
        c = (theta - np.sin(theta)) / (t2 * theta)
    return a, b, c


def _coefficient_derivatives(theta: float) -> tuple[float, float, float]:
    """Derivatives of the three coefficients, each divided by ``t``."""
    t2 = theta * theta
    if theta < _DERIV_SERIES_ANGLE:
        t4, t6 = t2 * t2, t2 * t2 * t2
        da = -1.0 / 3.0 + t2 / 30.0 - t4 / 840.0 + t6 / 45360.0
        db = -1.0 / 12.0 + t2 / 180.0 - t4 / 6720.0 + t6 / 453600.0
        dc = -1.0 / 60.0 + t2 / 1260.0 - t4 / 60480.0 + t6 / 4989600.0
        return da, db, dc
    s, c = np.sin(theta), np.cos(theta)
    da = (theta * c - s) / (t2 * theta)
    db = (theta * s - 2.0 * (1.0 - c)) / (t2 * t2)
    dc = ((1.0 - c) * theta - 3.0 * (theta - s)) / (t2 * t2 * theta)
    return da, db, dc


def _check_finite(x, name: str) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise InvalidArgumentError(f"{name} has non-finite entries: {x}")
    return x


def so3_exp(w) -> np.ndarray:
    w = _check_finite(w, "rotation vector").reshape(3)
    a, b, _ = _coefficients(float(np.linalg.norm(w)))
    W = hat(w)
    return np.eye(3) + a * W + b * (W @ W)


def so3_left_jacobian(w) -> np.ndarray:
    """Left Jacobian of SO(3); also the ``V`` matrix of the SE(3) exponential.

    ``so3_exp(w + dw) ~= so3_exp(J dw) @ so3_exp(w)``.
    """
    w = np.asarray(w, dtype=float).reshape(3)
    _, b, c = _coefficients(float(np.linalg.norm(w)))
    W = hat(w)
    return np.eye(3) + b * W + c * (W @ W)


def so3_log(R) -> np.ndarray:
    R = np.asarray(R, dtype=float)
    s = 0.5 * vee(R - R.T)
    cos_t = 0.5 * (np.trace(R) - 1.0)
    theta = float(np.arctan2(np.linalg.norm(s), cos_t))
    if theta >= LOG_ANGLE_LIMIT:
        raise DomainError(f"rotation angle {theta:.9f} too close to pi for a unique log")
    if theta < SERIES_ANGLE:
        return s * (1.0 + theta * theta / 6.0)
    return s * (theta / np.sin(theta))


def rotation_vector(R) -> np.ndarray:
    """Rotation vector of ``R`` with angle in ``[0, pi]``, defined for half turns too.

    Near a half turn the axis is recovered from ``(R + I) / 2``, which is
    ``a a^T`` there; the sign is fixed so the largest component is positive.
    """
    R = np.asarray(R, dtype=float)
    s = 0.5 * vee(R - R.T)
    cos_t = 0.5 * (np.trace(R) - 1.0)
    theta = float(np.arctan2(np.linalg.norm(s), cos_t))
    if theta < LOG_ANGLE_LIMIT:
        return so3_log(R)
    B = 0.5 * (R + np.eye(3))
    i = int(np.argmax(np.diag(B)))
    axis = B[:, i] / np.sqrt(B[i, i])
    if np.linalg.norm(s) > 0 and axis @ s < 0:
        axis = -axis
    return theta * axis / np.linalg.norm(axis)


def twist_exp(d) -> RigidTransform:
    """Exponential map ``se(3) -> SE(3)`` for a twist ``(v, w)``."""
    d = _check_finite(d, "twist").reshape(6)
    v, w = d[:3], d[3:]
    a, b, c = _coefficients(float(np.linalg.norm(w)))
    W = hat(w)
    W2 = W @ W
    R = np.eye(3) + a * W + b * W2
    V = np.eye(3) + b * W + c * W2
    return RigidTransform(R, V @ v)


def twist_log(T: RigidTransform) -> np.ndarray:
    """Inverse of :func:`twist_exp` for rotation angles below ``pi - 1e-6``."""
    if not isinstance(T, RigidTransform):
        T = RigidTransform.from_matrix(T)
    _check_finite(T.matrix(), "transform")
    w = so3_log(T.rotation)
    theta = float(np.linalg.norm(w))
    W = hat(w)
    if theta < _CUBIC_SERIES_ANGLE:
        t2 = theta * theta
        k = 1.0 / 12.0 + t2 / 720.0 + t2 * t2 / 30240.0
    else:
        a, b, _ = _coefficients(theta)
        k = (1.0 - a / (2.0 * b)) / (theta * theta)
    Vinv = np.eye(3) - 0.5 * W + k * (W @ W)
    return np.concatenate([Vinv @ T.translation, w])


def rotate_jacobian(w, rotated) -> np.ndarray:
    """Jacobian of ``so3_exp(w) @ p`` with respect to ``w``.

    ``rotated`` holds the already rotated points ``so3_exp(w) @ p`` with shape
    ``(N, 3)``; the result has shape ``(N, 3, 3)``.
    """
    rotated = np.asarray(rotated, dtype=float).reshape(-1, 3)
    J = so3_left_jacobian(w)
    # -hat(q) @ J == cross(J_col, q) column-wise
    return np.cross(J.T[None, :, :], rotated[:, None, :]).transpose(0, 2, 1)


def translation_part_jacobian(d) -> np.ndarray:
    """Jacobian of ``V(w) @ v`` with respect to the full twist ``(v, w)``, shape (3, 6)."""
    d = np.asarray(d, dtype=float).reshape(6)
    v, w = d[:3], d[3:]
    theta = float(np.linalg.norm(w))
    _, b, c = _coefficients(theta)
    _, db, dc = _coefficient_derivatives(theta)
    W = hat(w)
    wxv = W @ v
    wwxv = W @ wxv
    out = np.empty((3, 6))
    out[:, :3] = np.eye(3) + b * W + c * (W @ W)
    out[:, 3:] = (
        db * np.outer(wxv, w)
        - b * hat(v)
        + dc * np.outer(wwxv, w)
        + c * (np.dot(w, v) * np.eye(3) + np.outer(w, v) - 2.0 * np.outer(v, w))
    )
    return out


def exp_point_jacobian(d, points) -> np.ndarray:
    """Jacobian of ``twist_exp(d).apply(p)`` w.r.t. ``d`` for each point, shape (N, 3, 6)."""
    d = np.asarray(d, dtype=float).reshape(6)
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    T = twist_exp(d)
    rotated = points @ T.rotation.T
    jac = np.empty((len(points), 3, 6))
    tj = translation_part_jacobian(d)
    jac[:] = tj
    jac[:, :, 3:] += rotate_jacobian(d[3:], rotated)
    return jac


def pca_object_frame(points) -> RigidTransform:
    """Frame at the centroid with axes along the principal directions.

    Axes are sorted by descending variance. Each of the first two axes is
    flipped so that its largest-magnitude component is positive (the lowest
    index wins a magnitude tie); the third axis is their cross product.
    """
    P = _check_finite(points, "points").reshape(-1, 3)
    if len(P) < 4:
        raise DegenerateGeometryError(f"need at least 4 points, got {len(P)}")
    centre = P.mean(axis=0)
    X = P - centre
    cov = X.T @ X / len(P)
    vals, vecs = np.linalg.eigh(cov)
    order = np.argsort(-vals, kind="stable")
    vals, vecs = vals[order], vecs[:, order]
    if vals[0] <= 0.0 or vals[2] / vals[0] < 1e-9:
        raise DegenerateGeometryError(
            f"point covariance is rank deficient (eigenvalues {vals})"
        )
    axes = np.empty((3, 3))
    for i in range(2):
        e = vecs[:, i]
        if e[np.argmax(np.abs(e))] < 0:
            e = -e
        axes[:, i] = e / np.linalg.norm(e)
    axes[:, 2] = np.cross(axes[:, 0], axes[:, 1])
    return RigidTransform(axes, centre)


def _cross(a, b) -> np.ndarray:
    return np.array([a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]])


def exp_point_vjp(d, rotated, weights) -> np.ndarray:
    """``sum_n J_n^T g_n`` for the point Jacobians of :func:`exp_point_jacobian`.

    ``rotated`` are the points after rotation only (``R @ p``); ``weights``
    has the same ``(N, 3)`` shape. Contracts the Jacobians directly instead
    of forming the ``(N, 3, 6)`` array.
    """
    d = np.asarray(d, dtype=float).reshape(6)
    v, w = d[:3], d[3:]
    g = np.asarray(weights, dtype=float).reshape(-1, 3)
    total = g.sum(axis=0)
    M = np.asarray(rotated).reshape(-1, 3).T @ g
    torque = np.array([M[1, 2] - M[2, 1], M[2, 0] - M[0, 2], M[0, 1] - M[1, 0]])
    theta = float(np.sqrt(w @ w))
    _, b, c = _coefficients(theta)
    _, db, dc = _coefficient_derivatives(theta)

    def v_transpose(x):
        # V^T x with V = I + b W + c W^2, which is also the left Jacobian
        wx = _cross(w, x)
        return x - b * wx + c * _cross(w, wx)

    wxv = _cross(w, v)
    wwxv = _cross(w, wxv)
    out = np.empty(6)
    out[:3] = v_transpose(total)
    out[3:] = (
        w * (db * (wxv @ total) + dc * (wwxv @ total) - 2.0 * c * (v @ total))
        + b * _cross(v, total)
        + c * ((w @ v) * total + v * (w @ total))
        + v_transpose(torque)
    )
    return out
