from __future__ import annotations

import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.spatial.distance import pdist

from graspgame.errors import CloudError, InvalidArgumentError
from graspgame.objects import (
    DEFAULT_EPSILON,
    ObjectVariable,
    load_object_cloud,
    read_points,
    squash_object,
    transform_object,
    transform_object_jacobian,
    unsquash_object,
)
from graspgame.se3 import twist_exp

from conftest import central_diff, rel_err

CORNERS = np.array([[x, y, z] for x in (-1, 1) for y in (-1, 1) for z in (-1, 1)], dtype=float) * 0.02


def sphere_surface(n, rng):
    p = rng.normal(size=(n, 3))
    return 0.05 * p / np.linalg.norm(p, axis=1, keepdims=True)


@pytest.fixture(scope="module")
def cloud():
    rng = np.random.default_rng(4)
    return load_object_cloud(rng.normal(size=(300, 3)) * [0.04, 0.03, 0.02], 64)


# -- transform_object ---------------------------------------------------------------


def test_zero_twist_leaves_points(cloud):
    assert np.array_equal(transform_object(cloud, np.zeros(6)), cloud.points_initial)


def test_pure_translation_shifts_points(cloud):
    moved = transform_object(cloud, [0.01, 0, 0, 0, 0, 0])
    assert np.allclose(moved - cloud.points_initial, [0.01, 0, 0], atol=1e-15)


def test_matches_exp_then_matrix_product(cloud):
    rng = np.random.default_rng(0)
    h = np.hstack([cloud.points_initial, np.ones((cloud.n_points, 1))])
    for _ in range(100):
        d = rng.normal(size=6) * [0.02, 0.02, 0.02, 0.5, 0.5, 0.5]
        ref = (h @ twist_exp(d).matrix().T)[:, :3]
        assert np.allclose(transform_object(cloud, d), ref, atol=1e-12)


def test_transform_preserves_distances(cloud):
    rng = np.random.default_rng(1)
    before = pdist(cloud.points_initial)
    for _ in range(20):
        moved = transform_object(cloud, rng.normal(size=6))
        assert np.allclose(pdist(moved), before, atol=1e-10)


def test_jacobian_at_zero_matches_finite_differences(cloud):
    _, jac = transform_object_jacobian(cloud, np.zeros(6))
    num = central_diff(lambda d: transform_object(cloud, d), np.zeros(6))
    assert rel_err(jac, num) < 1e-5


def test_jacobian_at_random_twists(cloud):
    rng = np.random.default_rng(2)
    for _ in range(20):
        d = rng.normal(size=6) * 0.05
        _, jac = transform_object_jacobian(cloud, d)
        num = central_diff(lambda v: transform_object(cloud, v), d)
        assert rel_err(jac, num) < 1e-5


# -- squash_object ---------------------------------------------------------------------


def test_squash_zero_is_exactly_zero():
    assert np.array_equal(squash_object(ObjectVariable.zero()), np.zeros(6))


def test_squash_saturates():
    d = squash_object(ObjectVariable(np.full(6, 40.0), DEFAULT_EPSILON))
    assert np.all(np.abs(d - DEFAULT_EPSILON) <= 1e-10 * DEFAULT_EPSILON)


def test_squash_monotone_over_random_pairs():
    rng = np.random.default_rng(3)
    for _ in range(1000):
        a, b = np.sort(rng.normal(scale=5, size=(2, 6)), axis=0)
        da = squash_object(ObjectVariable(a, DEFAULT_EPSILON))
        db = squash_object(ObjectVariable(b, DEFAULT_EPSILON))
        assert np.all(da < db)


@given(arrays(float, 6, elements=st.floats(-1e6, 1e6, allow_nan=False)))
def test_squash_strictly_inside_box(w):
    d = squash_object(ObjectVariable(w, DEFAULT_EPSILON))
    assert np.all(np.abs(d) < DEFAULT_EPSILON)


def test_unsquash_round_trip():
    rng = np.random.default_rng(5)
    eps = DEFAULT_EPSILON
    for _ in range(200):
        d = rng.uniform(-0.99, 0.99, size=6) * eps
        assert np.allclose(squash_object(ObjectVariable(unsquash_object(d, eps), eps)), d, atol=1e-15)


# -- load_object_cloud -------------------------------------------------------------------


def test_cube_corners_kept():
    c = load_object_cloud(CORNERS, 8)
    assert c.n_points == 8 and c.source_count == 8
    assert np.allclose(c.points_initial.mean(axis=0), 0, atol=1e-15)
    assert {tuple(p) for p in np.round(c.points_initial, 12)} == {tuple(p) for p in np.round(CORNERS, 12)}


def test_recentres_shifted_cloud():
    c = load_object_cloud(CORNERS + 1.0, 8)
    assert np.allclose(c.points_initial.mean(axis=0), 0, atol=1e-9)
    assert np.allclose(c.center, 1.0)


def test_fps_spreads_better_than_random_subsets():
    rng = np.random.default_rng(6)
    pts = sphere_surface(10_000, rng)
    sample = load_object_cloud(pts, 256).points_initial
    ours = pdist(sample).min()
    random_mins = [pdist(pts[rng.choice(len(pts), 256, replace=False)]).min() for _ in range(20)]
    assert ours >= np.median(random_mins)


def test_sampling_is_deterministic():
    pts = sphere_surface(2000, np.random.default_rng(7))
    a = load_object_cloud(pts, 100).points_initial
    b = load_object_cloud(pts, 100).points_initial
    assert np.array_equal(a, b)


def test_too_few_points():
    with pytest.raises(CloudError):
        load_object_cloud(CORNERS, 9)
    with pytest.raises(CloudError):
        load_object_cloud(CORNERS[:3], 3)


def test_non_finite_rejected():
    bad = CORNERS.copy()
    bad[2, 1] = np.nan
    with pytest.raises(InvalidArgumentError):
        load_object_cloud(bad, 8)


def test_reads_xyz_and_ply(tmp_path):
    xyz = tmp_path / "c.xyz"
    xyz.write_text("# corners\n" + "".join(f"{x:.17g} {y:.17g} {z:.17g}\n" for x, y, z in CORNERS))
    assert np.array_equal(read_points(xyz), CORNERS)

    ply = tmp_path / "c.ply"
    head = "ply\nformat binary_little_endian 1.0\nelement vertex 8\n" \
           "property double x\nproperty double y\nproperty double z\nend_header\n"
    ply.write_bytes(head.encode() + b"".join(struct.pack("<ddd", *p) for p in CORNERS))
    assert np.array_equal(read_points(ply), CORNERS)

    ascii_ply = tmp_path / "a.ply"
    ascii_ply.write_text(
        "ply\nformat ascii 1.0\nelement vertex 8\nproperty float x\nproperty float y\n"
        "property float z\nproperty uchar red\nend_header\n"
        + "".join(f"{x:.17g} {y:.17g} {z:.17g} 255\n" for x, y, z in CORNERS)
    )
    assert np.allclose(read_points(ascii_ply), CORNERS)


def test_missing_file_names_path(tmp_path):
    with pytest.raises(CloudError, match="nope.xyz"):
        load_object_cloud(tmp_path / "nope.xyz", 8)
