"""Regenerate the bundled object clouds, scene configs and the morph sequence.

Run from the repository root after ``make_hands.py``:  python scripts/make_scenes.py

Each cloud is reduced to its scene's point count here, so loading it back
does no further sampling. The designed verdict of every scene was checked
against the escape oracle when the suite was put together; the acceptance
tests re-check it.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation

from graspgame.objects import farthest_point_sample, load_object_cloud

DATA = Path(__file__).resolve().parents[1] / "src" / "graspgame" / "data"
EPSILON = [0.002, 0.002, 0.002, 0.01, 0.01, 0.01]


def box(sx, sy, sz, per=40):
    """Regular grid on the six faces of an axis-aligned box."""
    g = np.linspace(-1.0, 1.0, per)
    a, b = (m.ravel() for m in np.meshgrid(g, g))
    h = np.array([sx, sy, sz]) / 2
    faces = []
    for axis in range(3):
        u, v = [i for i in range(3) if i != axis]
        for sign in (-1.0, 1.0):
            p = np.zeros((len(a), 3))
            p[:, axis] = sign * h[axis]
            p[:, u], p[:, v] = a * h[u], b * h[v]
            faces.append(p)
    return np.unique(np.round(np.concatenate(faces), 12), axis=0)


def fibonacci_sphere(n, radius):
    i = np.arange(n) + 0.5
    polar = np.arccos(1 - 2 * i / n)
    azim = np.pi * (1 + 5**0.5) * i
    return radius * np.stack(
        [np.cos(azim) * np.sin(polar), np.sin(azim) * np.sin(polar), np.cos(polar)], axis=1
    )


def ellipsoid(a, b, c, n=4000):
    return fibonacci_sphere(n, 1.0) * np.array([a, b, c])


def cylinder(radius, height, n_around=64, n_along=40, n_rings=10):
    t = np.linspace(0, 2 * np.pi, n_around, endpoint=False)
    z = np.linspace(-height / 2, height / 2, n_along)
    T, Z = np.meshgrid(t, z)
    side = np.stack([radius * np.cos(T.ravel()), radius * np.sin(T.ravel()), Z.ravel()], axis=1)
    caps = []
    for r in np.linspace(radius / n_rings, radius, n_rings):
        k = max(6, int(n_around * r / radius))
        a = np.linspace(0, 2 * np.pi, k, endpoint=False)
        for s in (-1.0, 1.0):
            caps.append(np.stack([r * np.cos(a), r * np.sin(a), np.full(k, s * height / 2)], axis=1))
    centre = np.array([[0.0, 0.0, -height / 2], [0.0, 0.0, height / 2]])
    return np.concatenate([side, centre] + caps)


def rounded_cube(side, t):
    """Blend between the inscribed sphere (``t = 0``) and the cube (``t = 1``).

    Every cube surface point moves along its ray from the centre, so clouds
    at different ``t`` correspond point for point.
    """
    B = box(side, side, side)
    S = B * (side / 2) / np.linalg.norm(B, axis=1, keepdims=True)
    return (1 - t) * S + t * B


def write_xyz(path: Path, pts: np.ndarray) -> None:
    path.write_text("".join(f"{x:.17g} {y:.17g} {z:.17g}\n" for x, y, z in pts))


def dish(width, radius, per=80):
    """Square patch of a sphere of the given radius, open on one side."""
    g = np.linspace(-0.5, 0.5, per) * width
    a, b = (m.ravel() for m in np.meshgrid(g, g))
    return np.stack([a, b, (a * a + b * b) / (2 * radius)], axis=1)


def turned(pts, seed):
    """The cloud in a random orientation; seed 0 leaves it as built."""
    if not seed:
        return pts
    return pts @ Rotation.random(random_state=seed).as_matrix().T


# name: (hand, cloud builder, points, designed verdict, game overrides)
SCENES = {
    "box52_turned_h12": (
        "synthetic4_12dof", lambda: turned(box(0.052, 0.052, 0.052), 2), 256, "cageable", {},
    ),
    "box60x48x40_turned_h12": (
        "synthetic4_12dof", lambda: turned(box(0.060, 0.048, 0.040), 1), 256, "cageable", {},
    ),
    "rounded_cube_h12": ("synthetic4_12dof", lambda: rounded_cube(0.050, 0.9), 256, "cageable", {}),
    "box48_h8": ("synthetic3_8dof", lambda: box(0.048, 0.048, 0.048), 256, "cageable", {}),
    "box52_turned_h16": (
        "synthetic4_16dof", lambda: turned(box(0.052, 0.052, 0.052), 1), 256, "cageable", {},
    ),
    "rounded_cube_turned_h16": (
        "synthetic4_16dof", lambda: turned(rounded_cube(0.050, 0.9), 1), 256, "cageable", {},
    ),
    "sphere25_h12": ("synthetic4_12dof", lambda: fibonacci_sphere(4000, 0.025), 256, "uncageable", {}),
    "cylinder22x60_h12": ("synthetic4_12dof", lambda: cylinder(0.022, 0.060), 256, "uncageable", {}),
    "ellipsoid_h16": ("synthetic4_16dof", lambda: ellipsoid(0.030, 0.024, 0.020), 256, "uncageable", {}),
    "rod10x120_h8": ("synthetic3_8dof", lambda: cylinder(0.010, 0.120), 256, "uncageable", {}),
    # wider than any finger span, so the hand can only press on one side
    "dish200_h12": ("synthetic4_12dof", lambda: dish(0.200, 0.25), 256, "uncageable", {}),
    "bead8_h12_cap": (
        "synthetic4_12dof", lambda: fibonacci_sphere(2000, 0.008), 256, "uncageable", {"max_rounds": 1},
    ),
}

MORPH_HAND = "synthetic4_12dof"
MORPH_SIDE = 0.050
MORPH_STEPS = (0.9, 0.925, 0.95, 0.975, 0.985)
MORPH_POINTS = 256


def scene_config(hand: str, cloud: str, n: int, game: dict) -> dict:
    cfg = {
        "hand_path": f"../hands/{hand}.json",
        "object_path": f"../objects/{cloud}",
        "object_sample_n": n,
        "epsilon_bounds": EPSILON,
    }
    if game:
        cfg["game"] = game
    return cfg


def main():
    (DATA / "objects").mkdir(parents=True, exist_ok=True)
    (DATA / "scenes").mkdir(parents=True, exist_ok=True)
    suite = []
    for name, (hand, build, n, verdict, game) in SCENES.items():
        cloud = load_object_cloud(build(), n)
        write_xyz(DATA / "objects" / f"{name}.xyz", cloud.points_initial)
        (DATA / "scenes" / f"{name}.json").write_text(
            json.dumps(scene_config(hand, f"{name}.xyz", n, game), indent=1) + "\n"
        )
        suite.append({"name": name, "config": f"{name}.json", "designed": verdict})
    (DATA / "scenes" / "suite.json").write_text(json.dumps({"scenes": suite}, indent=1) + "\n")

    # one set of sample indices for every step keeps the clouds in correspondence
    morph_dir = DATA / "morph" / "rounded_cube"
    morph_dir.mkdir(parents=True, exist_ok=True)
    first = rounded_cube(MORPH_SIDE, MORPH_STEPS[0])
    seed = int(np.argmax(np.linalg.norm(first - first.mean(axis=0), axis=1)))
    idx = farthest_point_sample(first, MORPH_POINTS, seed)
    for i, t in enumerate(MORPH_STEPS):
        write_xyz(morph_dir / f"step_{i}.xyz", rounded_cube(MORPH_SIDE, t)[idx])
    morph_cfg = {
        "hand_path": f"../hands/{MORPH_HAND}.json",
        "object_sample_n": MORPH_POINTS,
        "epsilon_bounds": EPSILON,
    }
    (DATA / "scenes" / "morph_rounded_cube.json").write_text(json.dumps(morph_cfg, indent=1) + "\n")
    print(f"{len(suite)} scenes, {len(MORPH_STEPS)} morph steps")


if __name__ == "__main__":
    main()
