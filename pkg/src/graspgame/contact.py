"""Collision clearances between hand and object and the fingertip contact objective.

Clearances are signed: ``>= 0`` collision-free, ``< 0`` penetration. The
robot-object vector stacks, in order, one sphere entry per (point k, object
point n) pair in row-major ``k * N + n`` order, followed by one ellipsoid
entry per (link l, object point n) in ``l * N + n`` order.

Non-smooth points are resolved deterministically: a ``min`` over object
points picks the lowest index among ties, and ``max(., 0)`` has derivative 0
at the kink. Coincident points contribute a zero gradient.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .hand import HandSpec, RobotVariable, forward_points_jacobian, squash
from .objects import ObjectCloud, ObjectVariable
from .se3 import exp_point_vjp, twist_exp

SPHERE, LINK, SELF_POINT, SELF_LINK = 0, 1, 2, 3
_KIND_NAMES = {SPHERE: "sphere", LINK: "link", SELF_POINT: "self-point", SELF_LINK: "self-link"}


@dataclass(frozen=True)
class ClearanceVector:
    """Per-pair clearances with ``index_map`` rows ``(kind, a, b)``.

    kinds: 0 sphere (point a, object point b), 1 link (link a, object point
    b), 2 self point pair (point a, point b), 3 self link pair (link a,
    point b).
    """

    values: np.ndarray
    index_map: np.ndarray

    def __len__(self) -> int:
        return len(self.values)

    def describe(self, i: int) -> str:
        kind, a, b = self.index_map[i]
        return f"{_KIND_NAMES[int(kind)]}({int(a)}, {int(b)})"

    def violated(self) -> list[str]:
        return [self.describe(i) for i in np.flatnonzero(self.values < 0)]


def sphere_clearance(p_r, p_o, r_k: float) -> float:
    return float(np.linalg.norm(np.subtract(p_r, p_o)) - r_k)


def link_clearance(p_r1, p_r2, p_o, r12: float) -> float:
    """Zero on the ellipsoid with foci ``p_r1``, ``p_r2`` and major axis ``r12``."""
    return float(
        np.linalg.norm(np.subtract(p_r1, p_o)) + np.linalg.norm(np.subtract(p_r2, p_o)) - r12
    )


# --------------------------------------------------------------------------
# array kernels working on point positions


class PairGeometry:
    """Distances between robot points and object points, kept for gradient passes.

    Only the distances are formed eagerly; direction vectors are computed in
    :func:`clearance_vjp` for the pairs that carry a nonzero weight.
    """

    __slots__ = ("p_robot", "p_object", "dist")

    def __init__(self, p_robot: np.ndarray, p_object: np.ndarray):
        self.p_robot = p_robot
        self.p_object = p_object
        d2 = (
            np.einsum("ki,ki->k", p_robot, p_robot)[:, None]
            + np.einsum("ni,ni->n", p_object, p_object)[None, :]
            - 2.0 * (p_robot @ p_object.T)
        )
        self.dist = np.sqrt(np.maximum(d2, 0.0))

    def units(self, k: np.ndarray, n: np.ndarray) -> np.ndarray:
        """Unit vectors from object point ``n`` to robot point ``k`` (zero when coincident)."""
        diff = self.p_robot[k] - self.p_object[n]
        norm = np.sqrt(np.einsum("ij,ij->i", diff, diff))
        safe = np.where(norm > 0.0, norm, 1.0)
        return np.where(norm[:, None] > 0.0, diff / safe[:, None], 0.0)


def clearance_values(spec: HandSpec, geo: PairGeometry) -> np.ndarray:
    D = geo.dist
    sphere = D - spec.radii[:, None]
    if len(spec.links):
        li = spec.link_index
        link = D[li[:, 0]] + D[li[:, 1]] - spec.link_thresholds[:, None]
        return np.concatenate([sphere.ravel(), link.ravel()])
    return sphere.ravel()


def clearance_vjp(spec: HandSpec, geo: PairGeometry, weights: np.ndarray):
    """Gradients of ``weights . clearances`` w.r.t. robot points and object points."""
    K, N = geo.dist.shape
    W = weights[: K * N].reshape(K, N)
    if len(spec.links):
        Wl = weights[K * N:].reshape(-1, N)
        if np.any(Wl):
            W = W.copy()
            li = spec.link_index
            np.add.at(W, li[:, 0], Wl)
            np.add.at(W, li[:, 1], Wl)
    k, n = np.nonzero(W)
    g_robot = np.zeros((K, 3))
    g_object = np.zeros((N, 3))
    if len(k):
        g = W[k, n][:, None] * geo.units(k, n)
        np.add.at(g_robot, k, g)
        np.add.at(g_object, n, -g)
    return g_robot, g_object


def clearance_index_map(spec: HandSpec, n_object: int) -> np.ndarray:
    K, L = spec.n_points, len(spec.links)
    kk, nn = np.meshgrid(np.arange(K), np.arange(n_object), indexing="ij")
    sphere = np.stack([np.full(K * n_object, SPHERE), kk.ravel(), nn.ravel()], axis=1)
    ll, mm = np.meshgrid(np.arange(L), np.arange(n_object), indexing="ij")
    link = np.stack([np.full(L * n_object, LINK), ll.ravel(), mm.ravel()], axis=1)
    return np.concatenate([sphere, link]).astype(int)


class SelfGeometry:
    __slots__ = ("values", "dirs", "rows")

    def __init__(self, spec: HandSpec, p_robot: np.ndarray):
        pairs = spec.self_pairs
        n = len(pairs)
        self.values = np.empty(n)
        # each row of self.rows: (a, b, weight-sign) contributions; built lazily in vjp
        self.dirs = []
        for i, sp in enumerate(pairs):
            if sp.kind == "point":
                ends = (sp.index,)
            else:
                link = spec.links[sp.index]
                ends = (link.k1, link.k2)
            total = -sp.threshold
            terms = []
            for e in ends:
                diff = p_robot[e] - p_robot[sp.other]
                dist = float(np.sqrt(diff @ diff))
                total += dist
                terms.append((e, diff / dist if dist > 0 else np.zeros(3)))
            self.values[i] = total
            self.dirs.append(terms)
        self.rows = pairs

    def vjp(self, spec: HandSpec, weights: np.ndarray) -> np.ndarray:
        g = np.zeros((spec.n_points, 3))
        for w, sp, terms in zip(weights, self.rows, self.dirs):
            if w == 0.0:
                continue
            for e, u in terms:
                g[e] += w * u
                g[sp.other] -= w * u
        return g


def self_index_map(spec: HandSpec) -> np.ndarray:
    rows = [
        (SELF_POINT if sp.kind == "point" else SELF_LINK, sp.index, sp.other)
        for sp in spec.self_pairs
    ]
    return np.array(rows, dtype=int).reshape(-1, 3)


def grasp_terms(spec: HandSpec, geo: PairGeometry):
    """Objective ``0.5 * sum J_k^2`` and its gradients w.r.t. robot and object points."""
    tips = spec.fingertip_index
    D = geo.dist[tips]
    nearest = np.argmin(D, axis=1)
    rows = np.arange(len(tips))
    gap = D[rows, nearest] - spec.fingertip_thresholds
    Jk = np.where(gap > 0.0, gap, 0.0)
    value = 0.5 * float(Jk @ Jk)
    u = geo.units(tips, nearest) * Jk[:, None]
    g_robot = np.zeros((spec.n_points, 3))
    np.add.at(g_robot, tips, u)
    g_object = np.zeros((geo.dist.shape[1], 3))
    np.add.at(g_object, nearest, -u)
    return value, g_robot, g_object, Jk


# --------------------------------------------------------------------------
# public operations on unconstrained variables


def _omega(w):
    return w.omega if isinstance(w, (RobotVariable, ObjectVariable)) else np.asarray(w, float)


class RobotEval:
    """Robot points at ``wr`` plus what is needed to pull point gradients back to ``wr``."""

    def __init__(self, spec: HandSpec, wr):
        self.spec = spec
        x, self.dx = squash(_omega(wr), spec.lower, spec.upper)
        self.x = x
        self.points, self.jac = forward_points_jacobian(spec, x)

    def pullback(self, g_points: np.ndarray) -> np.ndarray:
        return np.einsum("ki,kid->d", g_points, self.jac) * self.dx


class ObjectEval:
    """Object points at ``wo`` plus the pull-back of point gradients to ``wo``."""

    def __init__(self, cloud: ObjectCloud, wo: ObjectVariable):
        eps = np.asarray(wo.bounds, dtype=float)
        self.delta, self.dd = squash(wo.omega, -eps, eps)
        T = twist_exp(self.delta)
        self.rotated = cloud.points_initial @ T.rotation.T
        self.points = self.rotated + T.translation

    def pullback(self, g_points: np.ndarray) -> np.ndarray:
        return exp_point_vjp(self.delta, self.rotated, g_points) * self.dd


def phi(spec: HandSpec, cloud: ObjectCloud, wr, wo: ObjectVariable) -> ClearanceVector:
    """Robot-object clearances at squashed robot state and object twist."""
    re = RobotEval(spec, wr)
    oe = ObjectEval(cloud, wo)
    geo = PairGeometry(re.points, oe.points)
    return ClearanceVector(clearance_values(spec, geo), clearance_index_map(spec, cloud.n_points))


def phi_gradient(spec: HandSpec, cloud: ObjectCloud, wr, wo: ObjectVariable, weights):
    """Gradient of ``weights . phi`` w.r.t. ``(omega_R, omega_O)``."""
    re = RobotEval(spec, wr)
    oe = ObjectEval(cloud, wo)
    geo = PairGeometry(re.points, oe.points)
    g_r, g_o = clearance_vjp(spec, geo, np.asarray(weights, dtype=float))
    return re.pullback(g_r), oe.pullback(g_o)


def phi_min(spec: HandSpec, cloud: ObjectCloud, wr, wo: ObjectVariable):
    """Smallest clearance, the index achieving it and its gradient w.r.t. ``(omega_R, omega_O)``."""
    re = RobotEval(spec, wr)
    oe = ObjectEval(cloud, wo)
    geo = PairGeometry(re.points, oe.points)
    values = clearance_values(spec, geo)
    i = int(np.argmin(values))
    w = np.zeros_like(values)
    w[i] = 1.0
    g_r, g_o = clearance_vjp(spec, geo, w)
    return float(values[i]), i, re.pullback(g_r), oe.pullback(g_o)


def phi_self(spec: HandSpec, wr) -> ClearanceVector:
    re = RobotEval(spec, wr)
    return ClearanceVector(SelfGeometry(spec, re.points).values, self_index_map(spec))


def phi_self_gradient(spec: HandSpec, wr, weights) -> np.ndarray:
    re = RobotEval(spec, wr)
    sg = SelfGeometry(spec, re.points)
    return re.pullback(sg.vjp(spec, np.asarray(weights, dtype=float)))


def grasp_objective(spec: HandSpec, cloud: ObjectCloud, wr, wo: ObjectVariable):
    """Fingertip contact objective and its gradient w.r.t. ``omega_R``.

    The object sits at the twist encoded by ``wo``.
    """
    re = RobotEval(spec, wr)
    oe = ObjectEval(cloud, wo)
    value, g_r, _, _ = grasp_terms(spec, PairGeometry(re.points, oe.points))
    return value, re.pullback(g_r)
