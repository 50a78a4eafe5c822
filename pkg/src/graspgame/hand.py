"""Floating-base articulated hand: specification, kinematics and state squashing.

A hand is a tree of frames hanging off the base. Each frame is placed relative
to its parent either by proximal (modified) DH parameters

    T = RotX(alpha) TransX(a) RotZ(theta0 + q) TransZ(d)

or by a fixed ``origin`` transform. A DH frame becomes revolute when a joint
entry refers to it. Collision points are attached to frames; ``frame = -1``
means the base itself.

The optimisation coordinates of a hand are the flat vector
``[base translation (3), base rotation vector (3), joint angles (M)]``.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DimensionError, InvalidArgumentError, SpecError
from .se3 import RigidTransform, rotation_vector, so3_exp, so3_left_jacobian

BASE = -1
DEFAULT_ROTATION_LIMIT = np.pi
_CLAMP_MARGIN = 1e-6
_PRECONDITION_MARGIN = 1e-9


@dataclass(frozen=True)
class Frame:
    name: str
    parent: int
    dh: tuple[float, float, float, float] | None = None
    origin: RigidTransform | None = None


@dataclass(frozen=True)
class Joint:
    frame: int
    lower: float
    upper: float


@dataclass(frozen=True)
class Attachment:
    frame: int
    offset: np.ndarray
    radius: float


@dataclass(frozen=True)
class Link:
    k1: int
    k2: int
    threshold: float


@dataclass(frozen=True)
class Fingertip:
    point: int
    threshold: float


@dataclass(frozen=True)
class SelfPair:
    """Self-collision check: ``kind`` is ``"point"`` (index = point k) or
    ``"link"`` (index = link l); ``other`` is the robot point k'."""

    kind: str
    index: int
    other: int
    threshold: float


@dataclass(frozen=True)
class RobotState:
    translation: np.ndarray
    rotation_vector: np.ndarray
    joints: np.ndarray

    @property
    def base(self) -> RigidTransform:
        return RigidTransform(so3_exp(self.rotation_vector), self.translation)

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.translation, self.rotation_vector, self.joints])

    @classmethod
    def from_vector(cls, x) -> RobotState:
        x = np.asarray(x, dtype=float).reshape(-1)
        return cls(x[:3].copy(), x[3:6].copy(), x[6:].copy())

    @classmethod
    def from_base(cls, base: RigidTransform, joints) -> RobotState:
        return cls(base.translation.copy(), rotation_vector(base.rotation), np.asarray(joints, float))


@dataclass(frozen=True)
class RobotVariable:
    omega: np.ndarray
    clamped: bool = False


@dataclass(frozen=True, eq=False)
class HandSpec:
    name: str
    frames: tuple[Frame, ...]
    joints: tuple[Joint, ...]
    lower: np.ndarray
    upper: np.ndarray
    points: tuple[Attachment, ...]
    links: tuple[Link, ...]
    fingertips: tuple[Fingertip, ...]
    self_pairs: tuple[SelfPair, ...]
    palm_offset: RigidTransform
    _kin: _Kinematics = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "_kin", _Kinematics(self))

    @property
    def n_joints(self) -> int:
        return len(self.joints)

    @property
    def n_points(self) -> int:
        return len(self.points)

    @property
    def n_dof(self) -> int:
        return 6 + len(self.joints)

    @property
    def radii(self) -> np.ndarray:
        return self._kin.radii

    @property
    def link_index(self) -> np.ndarray:
        return self._kin.link_index

    @property
    def link_thresholds(self) -> np.ndarray:
        return self._kin.link_thresholds

    @property
    def fingertip_index(self) -> np.ndarray:
        return self._kin.tip_index

    @property
    def fingertip_thresholds(self) -> np.ndarray:
        return self._kin.tip_thresholds

    def midpoint(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)

    def zero_state(self) -> RobotState:
        return RobotState(np.zeros(3), np.zeros(3), np.zeros(self.n_joints))


class _Kinematics:
    """Precomputed tables that make FK a handful of vectorised operations."""

    def __init__(self, spec: HandSpec):
        n_frames = len(spec.frames)
        self.order = _topological_order(spec.frames)
        self.joint_of_frame = np.full(n_frames, -1)
        for j, joint in enumerate(spec.joints):
            self.joint_of_frame[joint.frame] = j
        # constant parts of each frame transform: pre = RotX(alpha) TransX(a)
        self.pre_R = np.zeros((n_frames, 3, 3))
        self.pre_t = np.zeros((n_frames, 3))
        self.theta0 = np.zeros(n_frames)
        self.d = np.zeros(n_frames)
        self.is_dh = np.zeros(n_frames, dtype=bool)
        for i, fr in enumerate(spec.frames):
            if fr.dh is not None:
                a, alpha, d, theta0 = fr.dh
                ca, sa = np.cos(alpha), np.sin(alpha)
                self.pre_R[i] = [[1, 0, 0], [0, ca, -sa], [0, sa, ca]]
                self.pre_t[i] = [a, 0.0, 0.0]
                self.theta0[i] = theta0
                self.d[i] = d
                self.is_dh[i] = True
            else:
                self.pre_R[i] = fr.origin.rotation
                self.pre_t[i] = fr.origin.translation
        self.parents = np.array([fr.parent for fr in spec.frames], dtype=int)

        self.point_frame = np.array([p.frame for p in spec.points], dtype=int)
        self.offsets = np.array([p.offset for p in spec.points], dtype=float).reshape(-1, 3)
        self.radii = np.array([p.radius for p in spec.points], dtype=float)
        self.link_index = np.array([[l.k1, l.k2] for l in spec.links], dtype=int).reshape(-1, 2)
        self.link_thresholds = np.array([l.threshold for l in spec.links], dtype=float)
        self.tip_index = np.array([f.point for f in spec.fingertips], dtype=int)
        self.tip_thresholds = np.array([f.threshold for f in spec.fingertips], dtype=float)

        # ancestors[f] = frames on the path from the base to f (inclusive)
        ancestors = []
        for i in range(n_frames):
            chain, f = [], i
            while f != BASE:
                chain.append(f)
                f = spec.frames[f].parent
            ancestors.append(set(chain))
        n_j = len(spec.joints)
        self.joint_frames = np.array([j.frame for j in spec.joints], dtype=int)
        self.moves = np.zeros((len(spec.points), n_j))
        for k, fk in enumerate(self.point_frame):
            if fk == BASE:
                continue
            for j, fj in enumerate(self.joint_frames):
                if fj in ancestors[fk]:
                    self.moves[k, j] = 1.0

    def frame_poses(self, q: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """World-in-base rotations and origins of every frame."""
        n = len(self.parents)
        R = np.empty((n, 3, 3))
        t = np.empty((n, 3))
        for i in self.order:
            if self.is_dh[i]:
                j = self.joint_of_frame[i]
                th = self.theta0[i] + (q[j] if j >= 0 else 0.0)
                c, s = np.cos(th), np.sin(th)
                Rz = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
                Rl = self.pre_R[i] @ Rz
                tl = self.pre_t[i] + Rl[:, 2] * self.d[i]
            else:
                Rl, tl = self.pre_R[i], self.pre_t[i]
            p = self.parents[i]
            if p == BASE:
                R[i], t[i] = Rl, tl
            else:
                R[i] = R[p] @ Rl
                t[i] = R[p] @ tl + t[p]
        return R, t

    def local_points(self, q: np.ndarray, with_frames: bool = False):
        R, t = self.frame_poses(q)
        Rb = np.concatenate([R, np.eye(3)[None]], axis=0)
        tb = np.concatenate([t, np.zeros((1, 3))], axis=0)
        idx = self.point_frame  # -1 picks the appended identity
        pts = np.einsum("kij,kj->ki", Rb[idx], self.offsets) + tb[idx]
        if with_frames:
            return pts, R, t
        return pts


def _topological_order(frames) -> list[int]:
    order, state = [], {}

    def visit(i, stack):
        if state.get(i) == 2:
            return
        if state.get(i) == 1:
            raise SpecError("cycle", f"frames[{i}].parent", f"cyclic parent chain {stack + [i]}")
        state[i] = 1
        p = frames[i].parent
        if p != BASE:
            visit(p, stack + [i])
        state[i] = 2
        order.append(i)

    for i in range(len(frames)):
        visit(i, [])
    return order


def _split_state(spec: HandSpec, x) -> np.ndarray:
    if isinstance(x, RobotState):
        vec = x.as_vector()
    else:
        vec = np.asarray(x, dtype=float).reshape(-1)
    if vec.size != spec.n_dof:
        raise DimensionError(
            f"hand '{spec.name}' expects {spec.n_joints} joints "
            f"({spec.n_dof} coordinates), got {vec.size - 6} joints"
        )
    return vec


def forward_points(spec: HandSpec, x) -> np.ndarray:
    """World positions ``(K, 3)`` of every attached point at state ``x``."""
    vec = _split_state(spec, x)
    local = spec._kin.local_points(vec[6:])
    return local @ so3_exp(vec[3:6]).T + vec[:3]


def forward_points_jacobian(spec: HandSpec, x) -> tuple[np.ndarray, np.ndarray]:
    """Points ``(K, 3)`` and their Jacobian ``(K, 3, 6 + M)`` w.r.t. the state vector.

    Flatten the Jacobian with ``reshape(3 * K, -1)`` for the point-major
    ``(3K) x (6+M)`` layout.
    """
    vec = _split_state(spec, x)
    kin = spec._kin
    local, R, t = kin.local_points(vec[6:], with_frames=True)
    Rb = so3_exp(vec[3:6])
    rotated = local @ Rb.T
    pts = rotated + vec[:3]
    K = len(pts)
    jac = np.zeros((K, 3, spec.n_dof))
    jac[:, :, :3] = np.eye(3)
    Jl = so3_left_jacobian(vec[3:6])
    jac[:, :, 3:6] = np.cross(Jl.T[None, :, :], rotated[:, None, :]).transpose(0, 2, 1)
    if spec.n_joints:
        axes = R[kin.joint_frames, :, 2]
        origins = t[kin.joint_frames]
        # d p_local / d q_j = z_j x (p - o_j) on the joint's subtree
        dq = np.cross(axes[None, :, :], local[:, None, :] - origins[None, :, :])
        dq *= kin.moves[:, :, None]
        jac[:, :, 6:] = np.einsum("ab,kjb->kaj", Rb, dq)
    return pts, jac


def sigmoid(w):
    w = np.asarray(w, dtype=float)
    out = np.empty_like(w)
    pos = w >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-w[pos]))
    e = np.exp(w[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def squash(omega, lower, upper) -> tuple[np.ndarray, np.ndarray]:
    """Box squash ``x = (upper - lower) * sigmoid(omega) + lower`` and ``dx/domega``.

    The result is pulled one ulp inward if rounding lands it on a bound, so
    the output is always strictly inside the open interval.
    """
    omega = np.asarray(omega, dtype=float)
    if not np.all(np.isfinite(omega)):
        raise InvalidArgumentError("squash input has non-finite entries")
    s = sigmoid(omega)
    width = upper - lower
    x = width * s + lower
    x = np.where(x <= lower, np.nextafter(lower, upper), x)
    x = np.where(x >= upper, np.nextafter(upper, lower), x)
    return x, width * s * (1.0 - s)


def squash_robot(spec: HandSpec, w: RobotVariable | np.ndarray) -> RobotState:
    omega = w.omega if isinstance(w, RobotVariable) else w
    omega = np.asarray(omega, dtype=float).reshape(-1)
    if omega.size != spec.n_dof:
        raise DimensionError(f"expected {spec.n_dof} unconstrained coordinates, got {omega.size}")
    x, _ = squash(omega, spec.lower, spec.upper)
    return RobotState.from_vector(x)


def unsquash_robot(spec: HandSpec, x: RobotState | np.ndarray) -> RobotVariable:
    """Logit inverse of :func:`squash_robot`.

    Coordinates within ``1e-9`` of the interval width from a bound (or beyond
    it) are pulled to a ``1e-6`` margin and the result is flagged ``clamped``.
    """
    vec = _split_state(spec, x)
    frac = (vec - spec.lower) / (spec.upper - spec.lower)
    bad = (frac < _PRECONDITION_MARGIN) | (frac > 1.0 - _PRECONDITION_MARGIN)
    if bad.any():
        warnings.warn(
            f"robot state coordinates {np.flatnonzero(bad).tolist()} on or outside their bounds; clamped",
            RuntimeWarning,
            stacklevel=2,
        )
        frac = np.clip(frac, _CLAMP_MARGIN, 1.0 - _CLAMP_MARGIN)
    return RobotVariable(np.log(frac) - np.log1p(-frac), clamped=bool(bad.any()))


# --------------------------------------------------------------------------
# loading


def _need(doc, key, path):
    if not isinstance(doc, dict) or key not in doc:
        raise SpecError("schema", f"{path}.{key}" if path else key, "missing required field")
    return doc[key]


def _vec(value, n, path) -> np.ndarray:
    try:
        arr = np.asarray(value, dtype=float)
    except (TypeError, ValueError):
        raise SpecError("schema", path, f"expected {n} numbers") from None
    if arr.shape != (n,) or not np.all(np.isfinite(arr)):
        raise SpecError("schema", path, f"expected {n} finite numbers, got {value!r}")
    return arr


def _num(value, path) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not np.isfinite(value):
        raise SpecError("schema", path, f"expected a finite number, got {value!r}")
    return float(value)


def _index(value, n, path) -> int:
    if isinstance(value, bool) or not isinstance(value, int) or not 0 <= value < n:
        raise SpecError("schema", path, f"expected an index in [0, {n}), got {value!r}")
    return value


def _transform(doc, path) -> RigidTransform:
    t = _vec(doc.get("translation", [0, 0, 0]), 3, f"{path}.translation")
    r = _vec(doc.get("rotvec", [0, 0, 0]), 3, f"{path}.rotvec")
    return RigidTransform(so3_exp(r), t)


def load_hand_spec(document) -> HandSpec:
    """Build a validated :class:`HandSpec` from a parsed JSON document, a JSON
    string, or a path to a JSON file.

    Raises :class:`SpecError` whose ``code`` distinguishes schema violations,
    cyclic frame trees, limit ordering, empty fingertip sets, empty link
    ellipsoids, non-positive radii and same-frame self-collision pairs.
    """
    if isinstance(document, Path) or (isinstance(document, str) and not document.lstrip().startswith("{")):
        document = json.loads(Path(document).read_text())
    elif isinstance(document, str):
        document = json.loads(document)
    if not isinstance(document, dict):
        raise SpecError("schema", "", "document must be a JSON object")
    doc = document

    frames_doc = _need(doc, "frames", "")
    if not isinstance(frames_doc, list):
        raise SpecError("schema", "frames", "expected a list")
    n_frames = len(frames_doc)
    frames = []
    for i, fd in enumerate(frames_doc):
        path = f"frames[{i}]"
        parent = _need(fd, "parent", path)
        if parent != BASE:
            parent = _index(parent, n_frames, f"{path}.parent")
        if parent == i:
            raise SpecError("cycle", f"{path}.parent", "frame is its own parent")
        if "dh" in fd:
            dh = _vec(fd["dh"], 4, f"{path}.dh")
            frames.append(Frame(fd.get("name", f"frame{i}"), parent, dh=tuple(dh)))
        elif "origin" in fd:
            frames.append(Frame(fd.get("name", f"frame{i}"), parent, origin=_transform(fd["origin"], f"{path}.origin")))
        else:
            raise SpecError("schema", path, "frame needs either 'dh' or 'origin'")
    _topological_order(frames)

    joints = []
    seen = set()
    for j, jd in enumerate(_need(doc, "joints", "")):
        path = f"joints[{j}]"
        f = _index(_need(jd, "frame", path), n_frames, f"{path}.frame")
        if frames[f].dh is None:
            raise SpecError("schema", f"{path}.frame", "joints must refer to a DH frame")
        if f in seen:
            raise SpecError("schema", f"{path}.frame", "frame already has a joint")
        seen.add(f)
        lo = _num(_need(jd, "lower", path), f"{path}.lower")
        hi = _num(_need(jd, "upper", path), f"{path}.upper")
        if not lo < hi:
            raise SpecError("limit_order", path, f"lower {lo} must be < upper {hi}")
        joints.append(Joint(f, lo, hi))

    bl = _need(doc, "base_limits", "")
    tr = _need(bl, "translation", "base_limits")
    t_lo = _vec(_need(tr, "lower", "base_limits.translation"), 3, "base_limits.translation.lower")
    t_hi = _vec(_need(tr, "upper", "base_limits.translation"), 3, "base_limits.translation.upper")
    rot = bl.get("rotation", {})
    r_lo = _vec(rot.get("lower", [-DEFAULT_ROTATION_LIMIT] * 3), 3, "base_limits.rotation.lower")
    r_hi = _vec(rot.get("upper", [DEFAULT_ROTATION_LIMIT] * 3), 3, "base_limits.rotation.upper")
    lower = np.concatenate([t_lo, r_lo, [j.lower for j in joints]])
    upper = np.concatenate([t_hi, r_hi, [j.upper for j in joints]])
    for i in range(6):
        if not lower[i] < upper[i]:
            part = "translation" if i < 3 else "rotation"
            raise SpecError("limit_order", f"base_limits.{part}[{i % 3}]", f"lower {lower[i]} must be < upper {upper[i]}")

    points = []
    for k, pd in enumerate(_need(doc, "points", "")):
        path = f"points[{k}]"
        f = _need(pd, "frame", path)
        if f != BASE:
            f = _index(f, n_frames, f"{path}.frame")
        r = _num(_need(pd, "radius", path), f"{path}.radius")
        if r <= 0:
            raise SpecError("radius", f"{path}.radius", f"radius must be positive, got {r}")
        points.append(Attachment(f, _vec(pd.get("offset", [0, 0, 0]), 3, f"{path}.offset"), r))
    K = len(points)
    if K == 0:
        raise SpecError("schema", "points", "at least one point is required")

    links = []
    for l, ld in enumerate(doc.get("links", [])):
        path = f"links[{l}]"
        pair = _need(ld, "points", path)
        if not isinstance(pair, list) or len(pair) != 2:
            raise SpecError("schema", f"{path}.points", "expected two point indices")
        k1 = _index(pair[0], K, f"{path}.points[0]")
        k2 = _index(pair[1], K, f"{path}.points[1]")
        if k1 == k2:
            raise SpecError("schema", f"{path}.points", "link endpoints must differ")
        links.append(Link(k1, k2, _num(_need(ld, "threshold", path), f"{path}.threshold")))

    tips_doc = _need(doc, "fingertip_subset", "")
    if not isinstance(tips_doc, list) or not tips_doc:
        raise SpecError("empty_fingertips", "fingertip_subset", "at least one fingertip point is required")
    tips = []
    for i, td in enumerate(tips_doc):
        path = f"fingertip_subset[{i}]"
        k = _index(_need(td, "point", path), K, f"{path}.point")
        tips.append(Fingertip(k, _num(_need(td, "threshold", path), f"{path}.threshold")))

    self_pairs = []
    for i, sd in enumerate(doc.get("self_collision_pairs", [])):
        path = f"self_collision_pairs[{i}]"
        kind = _need(sd, "kind", path)
        other = _index(_need(sd, "other", path), K, f"{path}.other")
        if kind == "point":
            k = _index(_need(sd, "point", path), K, f"{path}.point")
            if points[k].frame == points[other].frame:
                raise SpecError("self_pair", path, f"points {k} and {other} share frame {points[k].frame}")
            thr = sd.get("threshold", points[k].radius)
            self_pairs.append(SelfPair("point", k, other, _num(thr, f"{path}.threshold")))
        elif kind == "link":
            l = _index(_need(sd, "link", path), len(links), f"{path}.link")
            if other in (links[l].k1, links[l].k2):
                raise SpecError("self_pair", path, f"point {other} is an endpoint of link {l}")
            thr = sd.get("threshold", links[l].threshold)
            self_pairs.append(SelfPair("link", l, other, _num(thr, f"{path}.threshold")))
        else:
            raise SpecError("schema", f"{path}.kind", f"expected 'point' or 'link', got {kind!r}")

    palm = _transform(doc.get("palm_offset", {}), "palm_offset")

    spec = HandSpec(
        name=str(doc.get("name", doc.get("header", {}).get("name", "hand"))),
        frames=tuple(frames),
        joints=tuple(joints),
        lower=lower,
        upper=upper,
        points=tuple(points),
        links=tuple(links),
        fingertips=tuple(tips),
        self_pairs=tuple(self_pairs),
        palm_offset=palm,
    )

    header = doc.get("header", {})
    if "dof" in header and header["dof"] != spec.n_joints:
        raise SpecError("schema", "header.dof", f"declares {header['dof']} joints, spec has {spec.n_joints}")
    if "num_points" in header and header["num_points"] != K:
        raise SpecError("schema", "header.num_points", f"declares {header['num_points']} points, spec has {K}")

    if links:
        ref = forward_points(spec, spec.zero_state())
        for l, link in enumerate(links):
            dist = float(np.linalg.norm(ref[link.k1] - ref[link.k2]))
            if not link.threshold > dist:
                raise SpecError(
                    "empty_ellipsoid",
                    f"links[{l}].threshold",
                    f"threshold {link.threshold} does not exceed the reference distance {dist:.6g} "
                    f"between points {link.k1} and {link.k2}",
                )
    return spec
