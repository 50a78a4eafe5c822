from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from graspgame.cli import bundled
from graspgame.hand import load_hand_spec
from graspgame.objects import load_object_cloud

settings.register_profile(
    "default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")

HAND_NAMES = ("synthetic3_8dof", "synthetic4_12dof", "synthetic4_16dof")
SCENE_EPS = np.array([0.002, 0.002, 0.002, 0.01, 0.01, 0.01])


def hand_path(name: str) -> Path:
    return bundled("hands", f"{name}.json")


def hand_doc(name: str) -> dict:
    return json.loads(hand_path(name).read_text())


@pytest.fixture(scope="session")
def hands():
    return {n: load_hand_spec(hand_path(n)) for n in HAND_NAMES}


@pytest.fixture(scope="session", params=HAND_NAMES)
def any_hand(request, hands):
    return hands[request.param]


@pytest.fixture(scope="session")
def hand12(hands):
    return hands["synthetic4_12dof"]


@pytest.fixture(scope="session")
def small_cloud():
    """A 64-point sample of a 5 cm box, for fast scene-level checks."""
    g = np.linspace(-1, 1, 9)
    a, b = (m.ravel() for m in np.meshgrid(g, g))
    faces = []
    for axis in range(3):
        u, v = [i for i in range(3) if i != axis]
        for s in (-1.0, 1.0):
            p = np.zeros((len(a), 3))
            p[:, axis], p[:, u], p[:, v] = s * 0.025, a * 0.025, b * 0.02
            faces.append(p)
    return load_object_cloud(np.unique(np.concatenate(faces), axis=0), 64)


def random_state(spec, rng, inset=0.05):
    """Hand coordinates drawn uniformly from the central part of each interval."""
    lo, hi = spec.lower, spec.upper
    u = rng.uniform(inset, 1 - inset, size=spec.n_dof)
    return lo + u * (hi - lo)


def rel_err(a, b) -> float:
    a, b = np.asarray(a, float), np.asarray(b, float)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-12))


def central_diff(f, x, h=1e-6):
    """Central differences of a scalar or array-valued ``f``; derivative axis last."""
    x = np.asarray(x, dtype=float)
    cols = []
    for i in range(x.size):
        e = np.zeros_like(x)
        e.flat[i] = h
        cols.append((np.asarray(f(x + e)) - np.asarray(f(x - e))) / (2 * h))
    return np.stack(cols, axis=-1)


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
