"""Object point clouds, candidate escape twists and their box squash."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import CloudError, InvalidArgumentError
from .hand import squash
from .se3 import exp_point_jacobian, twist_exp

DEFAULT_EPSILON = np.array([0.02, 0.02, 0.02, 0.05, 0.05, 0.05])
DEFAULT_SAMPLE_N = 256


@dataclass(frozen=True, eq=False)
class ObjectCloud:
    """Object points in the object frame, centred on their mean.

    ``center`` is where that mean sat in the coordinates of the source file.
    """

    points_initial: np.ndarray
    source_count: int
    center: np.ndarray = np.zeros(3)

    @property
    def n_points(self) -> int:
        return len(self.points_initial)


@dataclass(frozen=True)
class ObjectVariable:
    omega: np.ndarray
    bounds: np.ndarray = DEFAULT_EPSILON

    @classmethod
    def zero(cls, bounds=DEFAULT_EPSILON) -> ObjectVariable:
        return cls(np.zeros(6), np.asarray(bounds, dtype=float))


def squash_object(v: ObjectVariable) -> np.ndarray:
    """Twist ``2 eps sigmoid(omega) - eps``, strictly inside ``(-eps, eps)``."""
    eps = np.asarray(v.bounds, dtype=float)
    delta, _ = squash(v.omega, -eps, eps)
    return delta


def squash_object_derivative(v: ObjectVariable) -> np.ndarray:
    eps = np.asarray(v.bounds, dtype=float)
    _, dd = squash(v.omega, -eps, eps)
    return dd


def unsquash_object(delta, bounds) -> np.ndarray:
    eps = np.asarray(bounds, dtype=float)
    frac = np.clip((np.asarray(delta, float) + eps) / (2 * eps), 1e-12, 1 - 1e-12)
    return np.log(frac) - np.log1p(-frac)


def transform_object(cloud: ObjectCloud, d) -> np.ndarray:
    """Object points moved by ``twist_exp(d)``, shape ``(N, 3)``."""
    return twist_exp(d).apply(cloud.points_initial)


def transform_object_jacobian(cloud: ObjectCloud, d) -> tuple[np.ndarray, np.ndarray]:
    """Moved points and their Jacobian ``(N, 3, 6)`` with respect to the twist."""
    return transform_object(cloud, d), exp_point_jacobian(d, cloud.points_initial)


def farthest_point_sample(points: np.ndarray, n: int, seed_index: int) -> np.ndarray:
    """Indices of ``n`` points chosen greedily by farthest-point sampling."""
    chosen = np.empty(n, dtype=int)
    chosen[0] = seed_index
    dist = np.linalg.norm(points - points[seed_index], axis=1)
    for i in range(1, n):
        nxt = int(np.argmax(dist))
        chosen[i] = nxt
        dist = np.minimum(dist, np.linalg.norm(points - points[nxt], axis=1))
    return chosen


def read_points(path) -> np.ndarray:
    """Read an ASCII XYZ file (``x y z`` per line) or a PLY file's vertex positions."""
    path = Path(path)
    if not path.exists():
        raise CloudError(f"object file not found: {path}")
    if path.suffix.lower() == ".ply":
        return _read_ply(path)
    rows = []
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.replace(",", " ").split()
        if len(parts) < 3:
            raise CloudError(f"{path}:{lineno}: expected 'x y z'")
        try:
            rows.append([float(v) for v in parts[:3]])
        except ValueError:
            raise CloudError(f"{path}:{lineno}: non-numeric coordinate") from None
    return np.array(rows, dtype=float).reshape(-1, 3)


_PLY_TYPES = {
    "float": "f", "float32": "f", "double": "d", "float64": "d",
    "char": "b", "int8": "b", "uchar": "B", "uint8": "B",
    "short": "h", "int16": "h", "ushort": "H", "uint16": "H",
    "int": "i", "int32": "i", "uint": "I", "uint32": "I",
}


def _read_ply(path: Path) -> np.ndarray:
    data = path.read_bytes()
    end = data.find(b"end_header")
    if not data.startswith(b"ply") or end < 0:
        raise CloudError(f"{path}: not a PLY file")
    header = data[:end].decode("ascii", errors="replace").splitlines()
    body = data[data.index(b"\n", end) + 1:]
    fmt, n_vertex, props, in_vertex = None, 0, [], False
    for line in header:
        tok = line.split()
        if not tok:
            continue
        if tok[0] == "format":
            fmt = tok[1]
        elif tok[0] == "element":
            in_vertex = tok[1] == "vertex"
            if in_vertex:
                n_vertex = int(tok[2])
        elif tok[0] == "property" and in_vertex:
            if tok[1] == "list":
                raise CloudError(f"{path}: list properties on vertices are not supported")
            props.append((tok[2], tok[1]))
    names = [p[0] for p in props]
    if not {"x", "y", "z"} <= set(names):
        raise CloudError(f"{path}: vertex element lacks x/y/z")
    cols = [names.index(c) for c in "xyz"]
    if fmt == "ascii":
        lines = body.decode("ascii").split("\n")
        rows = [lines[i].split() for i in range(n_vertex)]
        arr = np.array([[float(r[c]) for c in cols] for r in rows])
    elif fmt in ("binary_little_endian", "binary_big_endian"):
        order = "<" if fmt == "binary_little_endian" else ">"
        rec = order + "".join(_PLY_TYPES[t] for _, t in props)
        size = struct.calcsize(rec)
        arr = np.array(
            [[struct.unpack_from(rec, body, i * size)[c] for c in cols] for i in range(n_vertex)],
            dtype=float,
        )
    else:
        raise CloudError(f"{path}: unsupported PLY format {fmt!r}")
    return arr.reshape(-1, 3)


def load_object_cloud(document, target_n: int = DEFAULT_SAMPLE_N) -> ObjectCloud:
    """Centre a point list and reduce it to ``target_n`` points.

    ``document`` is an ``(n, 3)`` array-like or a path to an XYZ/PLY file.
    Sampling is farthest-point, seeded at the point farthest from the
    centroid, so the result is deterministic. The sample is re-centred on its
    own mean.
    """
    if isinstance(document, (str, Path)):
        pts = read_points(document)
    else:
        pts = np.asarray(document, dtype=float).reshape(-1, 3)
    if not np.all(np.isfinite(pts)):
        raise InvalidArgumentError("object cloud has non-finite coordinates")
    if target_n < 4:
        raise CloudError(f"target_n must be at least 4, got {target_n}")
    if len(pts) < target_n:
        raise CloudError(f"cloud has {len(pts)} points, fewer than the requested {target_n}")
    source_count = len(pts)
    centroid = pts.mean(axis=0)
    if len(pts) > target_n:
        seed = int(np.argmax(np.linalg.norm(pts - centroid, axis=1)))
        pts = pts[farthest_point_sample(pts, target_n, seed)]
    center = pts.mean(axis=0)
    return ObjectCloud(pts - center, source_count, center)
