"""Regenerate the bundled synthetic hand specifications.

Run from the repository root:  python scripts/make_hands.py
"""

from __future__ import annotations

import json
import math
from pathlib import Path

OUT = Path(__file__).resolve().parents[1] / "src" / "graspgame" / "data" / "hands"
# overall size; the hands span roughly a human hand's reach
S = 2.0

PALM_RADIUS = 0.03 * S
PALM_HEIGHT = 0.035 * S
KNUCKLE_R = 0.009 * S
JOINT_R = 0.008 * S
TIP_R = 0.007 * S
# contact points count as touching within half a millimetre of their sphere
CONTACT_MARGIN = 0.0005

# Fingers are laid out so that at mid-range they form an open pre-grasp
# around a sphere of DESIGN_RADIUS centred on the palm frame, every finger
# point DESIGN_GAP clear of it.
DESIGN_RADIUS = 0.015 * S
DESIGN_GAP = 0.005 * S
JOINT_SPAN = 0.6


def posture(latitudes_deg: list[float], radii: list[float]):
    """Link lengths and mid-range flex angles placing the finger points at the given latitudes."""
    pts = [(PALM_RADIUS, 0.0)]
    for lat, r in zip(latitudes_deg, radii):
        a = math.radians(lat)
        dist = DESIGN_RADIUS + r + DESIGN_GAP
        pts.append((dist * math.cos(a), PALM_HEIGHT + dist * math.sin(a)))
    lengths, angles, heading = [], [], 0.0
    for (x0, z0), (x1, z1) in zip(pts[:-1], pts[1:]):
        lengths.append(round(math.hypot(x1 - x0, z1 - z0), 4))
        th = math.atan2(-(x1 - x0), z1 - z0)
        angles.append(round(th - heading, 4))
        heading = th
    return lengths, angles


def finger_root(angle: float) -> dict:
    """Fixed frame at the finger base: x up the finger, z the inward-flex axis."""
    c, s = math.cos(angle), math.sin(angle)
    # columns x = e_z, y = -radial, z = -tangent
    rot = [[0.0, -c, s], [0.0, -s, -c], [1.0, 0.0, 0.0]]
    return {"translation": [PALM_RADIUS * c, PALM_RADIUS * s, 0.0], "rotvec": rotvec(rot)}


def rotvec(R) -> list[float]:
    tr = R[0][0] + R[1][1] + R[2][2]
    theta = math.acos(max(-1.0, min(1.0, 0.5 * (tr - 1.0))))
    if theta < 1e-12:
        return [0.0, 0.0, 0.0]
    if math.pi - theta < 1e-6:
        # axis from the diagonal for a half turn
        axis = [math.sqrt(max(0.0, 0.5 * (R[i][i] + 1.0))) for i in range(3)]
        i = max(range(3), key=lambda k: axis[k])
        for j in range(3):
            if j != i:
                axis[j] = math.copysign(axis[j], R[i][j])
        return [theta * a for a in axis]
    k = theta / (2 * math.sin(theta))
    return [k * (R[2][1] - R[1][2]), k * (R[0][2] - R[2][0]), k * (R[1][0] - R[0][1])]


def build(name: str, fingers: list[dict], spread: bool) -> dict:
    frames, joints, points, links = [], [], [], []
    tips, finger_points = [], []

    def add_point(frame, offset, radius):
        points.append({"frame": frame, "offset": offset, "radius": radius})
        return len(points) - 1

    palm_center = add_point(-1, [0.0, 0.0, 0.0], 0.012 * S)
    palm_ring = []
    for i in range(6):
        a = 2 * math.pi * i / 6 + math.pi / 6
        palm_ring.append(add_point(-1, [0.02 * S * math.cos(a), 0.02 * S * math.sin(a), 0.0], 0.01 * S))

    for f in fingers:
        frames.append({"name": f"{f['name']}_root", "parent": -1, "origin": finger_root(f["angle"])})
        parent = len(frames) - 1
        pts = [add_point(parent, [0.0, 0.0, 0.0], KNUCKLE_R)]
        if spread:
            # sideways spread about the radial axis, then back to the flex axis
            frames.append({"name": f"{f['name']}_spread", "parent": parent, "dh": [0.0, math.pi / 2, 0.0, 0.0]})
            joints.append({"frame": len(frames) - 1, "lower": -0.35, "upper": 0.35})
            parent = len(frames) - 1
            frames.append({"name": f"{f['name']}_flex0", "parent": parent, "dh": [0.0, -math.pi / 2, 0.0, 0.0]})
        else:
            frames.append({"name": f"{f['name']}_flex0", "parent": parent, "dh": [0.0, 0.0, 0.0, 0.0]})
        joints.append({"frame": len(frames) - 1, "lower": f["lower"][0], "upper": f["upper"][0]})
        parent = len(frames) - 1
        for i, length in enumerate(f["lengths"][:-1]):
            frames.append({"name": f"{f['name']}_flex{i + 1}", "parent": parent, "dh": [length, 0.0, 0.0, 0.0]})
            joints.append({"frame": len(frames) - 1, "lower": f["lower"][i + 1], "upper": f["upper"][i + 1]})
            parent = len(frames) - 1
            pts.append(add_point(parent, [0.0, 0.0, 0.0], JOINT_R))
        pts.append(add_point(parent, [f["lengths"][-1], 0.0, 0.0], TIP_R))
        # fingertip, then the finger's joint points, all pressing on the object
        for k in [pts[-1]] + pts[1:-1]:
            tips.append({"point": k, "threshold": points[k]["radius"] - CONTACT_MARGIN})
        for (a, b), length in zip(zip(pts[:-1], pts[1:]), f["lengths"]):
            # ellipsoid as thick as the thinner endpoint sphere
            r = min(points[a]["radius"], points[b]["radius"])
            links.append({"points": [a, b], "threshold": round(math.sqrt(length**2 + 4 * r * r), 6)})
        finger_points.append(pts)

    self_pairs = []
    for i in range(len(finger_points)):
        for j in range(len(finger_points)):
            if i != j:
                # fingertip of finger i against the joint points and tip of finger j
                for other in finger_points[j][1:]:
                    if not (other == finger_points[j][-1] and j < i):
                        self_pairs.append({"kind": "point", "point": finger_points[i][-1], "other": other})
        self_pairs.append({"kind": "point", "point": finger_points[i][-1], "other": palm_center})

    tips.append({"point": palm_center, "threshold": points[palm_center]["radius"] - CONTACT_MARGIN})
    return {
        "header": {"name": name, "dof": len(joints), "num_points": len(points)},
        "name": name,
        "frames": frames,
        "joints": joints,
        "base_limits": {
            "translation": {"lower": [-0.25 * S] * 3, "upper": [0.25 * S] * 3},
            "rotation": {"lower": [-math.pi] * 3, "upper": [math.pi] * 3},
        },
        "points": points,
        "links": links,
        "fingertip_subset": tips,
        "self_collision_pairs": self_pairs,
        "palm_offset": {"translation": [0.0, 0.0, PALM_HEIGHT], "rotvec": [0.0, 0.0, 0.0]},
    }


def finger(name, angle, latitudes):
    radii = [JOINT_R] * (len(latitudes) - 1) + [TIP_R]
    lengths, mids = posture(latitudes, radii)
    return {
        "name": name,
        "angle": angle,
        "lengths": lengths,
        "lower": [round(m - JOINT_SPAN, 4) for m in mids],
        "upper": [round(m + JOINT_SPAN, 4) for m in mids],
    }


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    three = [
        finger("thumb", math.pi, [0.0, 45.0]),
        finger("index", math.pi / 3, [-5.0, 30.0, 60.0]),
        finger("middle", -math.pi / 3, [-5.0, 30.0, 60.0]),
    ]
    four = [finger(f"f{i}", math.pi / 4 + i * math.pi / 2, [-5.0, 30.0, 60.0]) for i in range(4)]
    hands = {
        "synthetic3_8dof": build("synthetic3_8dof", three, spread=False),
        "synthetic4_12dof": build("synthetic4_12dof", four, spread=False),
        "synthetic4_16dof": build("synthetic4_16dof", four, spread=True),
    }
    for name, doc in hands.items():
        (OUT / f"{name}.json").write_text(json.dumps(doc, indent=1) + "\n")
        print(name, doc["header"])


if __name__ == "__main__":
    main()
