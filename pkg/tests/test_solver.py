from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.optimize import brentq

from graspgame.contact import phi, phi_self
from graspgame.game import best_escape, brute_force_escape, initialize_pose
from graspgame.hand import load_hand_spec, squash_robot
from graspgame.objects import ObjectCloud, ObjectVariable, squash_object, unsquash_object
from graspgame.solver import (
    ALConfig,
    FunctionProblem,
    Player1Problem,
    Player2Problem,
    Termination,
    lm_quasi_newton_minimize,
    solve_al,
    solve_player1,
    solve_player2,
)

from conftest import SCENE_EPS, rel_err


def quadratic(c):
    c = np.asarray(c, dtype=float)
    return lambda x: (float((x - c) @ (x - c)), 2 * (x - c))


def rosenbrock(x):
    a, b = x
    f = (1 - a) ** 2 + 100 * (b - a * a) ** 2
    g = np.array([-2 * (1 - a) - 400 * a * (b - a * a), 200 * (b - a * a)])
    return f, g


# -- lm_quasi_newton_minimize ------------------------------------------------------------


def test_quadratic_in_few_iterations():
    c = np.array([0.3, -1.2, 2.5, 0.0])
    res = lm_quasi_newton_minimize(quadratic(c), np.zeros(4))
    assert np.allclose(res.x, c, atol=1e-8)
    assert res.iterations <= 3 and res.status == "converged"


def test_rosenbrock():
    res = lm_quasi_newton_minimize(rosenbrock, np.array([-1.2, 1.0]))
    assert np.allclose(res.x, [1.0, 1.0], atol=1e-6)


def test_descent_on_random_smooth_functions():
    rng = np.random.default_rng(0)
    for _ in range(100):
        n = int(rng.integers(2, 8))
        A = rng.normal(size=(n, n))
        Q = A @ A.T + 0.1 * np.eye(n)
        b = rng.normal(size=n)
        k = rng.uniform(0, 2)

        def f(x):
            # convex quadratic plus a bounded oscillation
            s = np.sin(3 * x)
            return float(0.5 * x @ Q @ x + b @ x + k * s.sum()), Q @ x + b + 3 * k * np.cos(3 * x)

        x0 = rng.normal(size=n) * 3
        res = lm_quasi_newton_minimize(f, x0, max_iters=50)
        assert res.fun <= f(x0)[0]
        assert res.fun == f(res.x)[0]


def test_non_finite_aborts_with_last_finite_iterate():
    def f(x):
        if x[0] > 0.5:
            return float("nan"), np.full(1, np.nan)
        return float((x[0] - 2) ** 2), np.array([2 * (x[0] - 2)])

    res = lm_quasi_newton_minimize(f, np.zeros(1))
    assert res.status == "non_finite"
    assert np.isfinite(res.fun) and res.x[0] <= 0.5


# -- solve_al ----------------------------------------------------------------------------


def one_d_problem():
    return FunctionProblem(
        lambda x: (float((x[0] - 2) ** 2), np.array([2 * (x[0] - 2)])),
        lambda x: [x[0] - 1.0],
        lambda x: [[1.0]],
    )


def test_constrained_quadratic_reaches_kkt_point():
    rep = solve_al(one_d_problem(), [0.0], ALConfig())
    assert abs(rep.argmin[0] - 1.0) < 1e-4
    assert rep.termination == Termination.TOLERANCE_MET
    assert rep.max_violation <= 1e-5


def test_stationary_feasible_start_is_returned():
    prob = FunctionProblem(
        lambda x: (float(x @ x), 2 * x), lambda x: [x[0] - 1.0], lambda x: [[1.0, 0.0]]
    )
    rep = solve_al(prob, [0.0, 0.0], ALConfig())
    assert np.array_equal(rep.argmin, [0.0, 0.0])
    assert rep.termination == Termination.TOLERANCE_MET and rep.outer_iters == 1


def test_penalty_grows_geometrically():
    # an infeasible target with a tight tolerance runs several outer iterations
    cfg = ALConfig(constraint_tol=1e-12, rel_improve_tol=1e-12, max_outer=6, improvement_measure="merit")
    rep = solve_al(one_d_problem(), [0.0], cfg)
    assert rep.outer_iters >= 3
    for t, rho in enumerate(rep.rho_history, start=1):
        assert rho == cfg.penalty_init * cfg.penalty_growth**t


def test_iteration_cap_reported():
    cfg = ALConfig(constraint_tol=1e-15, rel_improve_tol=1e-15, max_outer=2, improvement_measure="merit")
    rep = solve_al(one_d_problem(), [0.0], cfg)
    assert rep.termination == Termination.ITERATION_CAP and rep.outer_iters == 2


def test_config_validation():
    for bad in ({"penalty_growth": 1.0}, {"constraint_tol": 0.0}, {"max_outer": 0},
                {"improvement_measure": "neither"}):
        with pytest.raises(ValueError):
            ALConfig(**bad)


@given(st.floats(-3, 3), st.floats(0.5, 3))
def test_tolerance_met_implies_feasible(x0, bound):
    prob = FunctionProblem(
        lambda x: (float((x[0] - 4) ** 2), np.array([2 * (x[0] - 4)])),
        lambda x: [x[0] - bound],
        lambda x: [[1.0]],
    )
    rep = solve_al(prob, [x0], ALConfig())
    if rep.termination == Termination.TOLERANCE_MET:
        assert rep.max_violation <= 1e-5
        assert rep.argmin[0] - bound <= 1e-5


# -- toy grasp: one joint, one fingertip, one object point ----------------------------------

# the contact threshold is small enough that J > 0 at the optimum, which makes it unique
L, R_TIP, R_CONTACT, ANGLE = 0.05, 0.01, 0.001, 0.3
TOY_EPS = np.array([0.01, 0.01, 0.01, 0.1, 0.1, 0.1])


def toy_hand():
    tiny = 1e-9  # the base is effectively fixed at the origin
    return load_hand_spec({
        "frames": [{"parent": -1, "dh": [0.0, 0.0, 0.0, 0.0]}],
        "joints": [{"frame": 0, "lower": -1.0, "upper": 1.0}],
        "base_limits": {
            "translation": {"lower": [-tiny] * 3, "upper": [tiny] * 3},
            "rotation": {"lower": [-tiny] * 3, "upper": [tiny] * 3},
        },
        "points": [{"frame": 0, "offset": [L, 0, 0], "radius": R_TIP}],
        "fingertip_subset": [{"point": 0, "threshold": R_CONTACT}],
    })


def toy_scene():
    spec = toy_hand()
    p = L * np.array([np.cos(ANGLE), np.sin(ANGLE), 0.0])
    cloud = ObjectCloud(p[None, :], 1)
    shift = 0.006 * np.array([np.sin(ANGLE), -np.cos(ANGLE), 0.0])  # along the path, towards q = 0
    wo = ObjectVariable(unsquash_object(np.concatenate([shift, np.zeros(3)]), TOY_EPS), TOY_EPS)
    return spec, cloud, wo


def toy_objective(q, wo):
    tip = L * np.array([np.cos(q), np.sin(q), 0.0])
    pd = L * np.array([np.cos(ANGLE), np.sin(ANGLE), 0.0]) + squash_object(wo)[:3]
    return 0.5 * max(np.linalg.norm(tip - pd) - R_CONTACT, 0.0) ** 2


def toy_grid(wo, step=1e-4):
    """Objective over a joint grid, points that penetrate the object at rest masked out."""
    q = np.arange(-1.0, 1.0 + step / 2, step)
    tips = L * np.stack([np.cos(q), np.sin(q), np.zeros_like(q)], axis=1)
    p0 = L * np.array([np.cos(ANGLE), np.sin(ANGLE), 0.0])
    pd = p0 + squash_object(wo)[:3]
    feasible = (np.linalg.norm(tips - pd, axis=1) <= R_TIP) & (np.linalg.norm(tips - p0, axis=1) >= R_TIP)
    J = 0.5 * np.maximum(np.linalg.norm(tips - pd, axis=1) - R_CONTACT, 0.0) ** 2
    return q, np.where(feasible, J, np.inf)


def test_toy_grasp_matches_closed_form_and_grid():
    spec, cloud, wo = toy_scene()
    # the tip rests against the undisplaced point on the side of the displacement:
    # a chord of length R_TIP subtends 2 asin(R_TIP / 2L)
    q_star = ANGLE - 2 * np.arcsin(R_TIP / (2 * L))
    J_star = toy_objective(q_star, wo)
    assert J_star > 0
    q, J = toy_grid(wo)
    assert abs(q[np.argmin(J)] - q_star) <= 1e-4

    rep = solve_player1(spec, cloud, np.zeros(spec.n_dof), wo, ALConfig())
    assert rep.termination == Termination.TOLERANCE_MET
    q_al = squash_robot(spec, rep.argmin).joints[0]
    # the constraint tolerance of 1e-5 m allows the tip to sit 1e-5 / (L cos) rad past the boundary
    slack = 1e-5 / (L * np.cos(np.arcsin(R_TIP / (2 * L)))) + 1e-6
    assert abs(q_al - q_star) <= slack
    assert abs(rep.objective - toy_objective(q_al, wo)) <= 1e-12
    slope = abs(toy_objective(q_star + 1e-6, wo) - toy_objective(q_star - 1e-6, wo)) / 2e-6
    assert abs(rep.objective - J_star) <= slope * slack


def test_toy_grasp_constraints_hold():
    spec, cloud, wo = toy_scene()
    rep = solve_player1(spec, cloud, np.zeros(spec.n_dof), wo, ALConfig())
    rest = phi(spec, cloud, rep.argmin, ObjectVariable.zero(TOY_EPS)).values
    moved = phi(spec, cloud, rep.argmin, wo).values
    assert rest.min() >= -1e-5 and moved.min() <= 1e-5


# -- Player 1 and Player 2 problem gradients ------------------------------------------------


def fd_check(problem, x, h=1e-6):
    f, g, C, vjp = problem.evaluate(x)
    rng = np.random.default_rng(1)
    w = rng.normal(size=len(C))
    num_f = np.array([(problem.evaluate(x + h * e)[0] - problem.evaluate(x - h * e)[0]) / (2 * h) for e in np.eye(len(x))])
    num_c = np.array([(w @ problem.evaluate(x + h * e)[2] - w @ problem.evaluate(x - h * e)[2]) / (2 * h) for e in np.eye(len(x))])
    return rel_err(g, num_f), rel_err(vjp(w), num_c)


def test_player1_problem_gradients(hand12, small_cloud):
    rng = np.random.default_rng(2)
    wo = ObjectVariable(rng.normal(size=6), SCENE_EPS)
    prob = Player1Problem(hand12, small_cloud, wo)
    checked = 0
    for _ in range(20):
        wr = initialize_pose(hand12, small_cloud).omega + rng.normal(scale=0.5, size=hand12.n_dof)
        vals = phi(hand12, small_cloud, wr, wo).values
        if np.partition(vals, 1)[1] - vals.min() < 1e-5:
            continue  # the smallest clearance must be unique for the first constraint to be smooth
        eg, ec = fd_check(prob, wr)
        assert eg < 1e-5 and ec < 1e-5
        checked += 1
    assert checked >= 10


def test_player2_problem_gradients(hand12, small_cloud):
    rng = np.random.default_rng(3)
    wr = initialize_pose(hand12, small_cloud).omega
    prob = Player2Problem(hand12, small_cloud, wr, SCENE_EPS)
    for _ in range(20):
        eg, ec = fd_check(prob, rng.normal(size=6))
        assert eg < 1e-5 and ec < 1e-5


def test_player2_pruning_keeps_every_violation(hand12, small_cloud):
    rng = np.random.default_rng(4)
    for _ in range(10):
        wr = initialize_pose(hand12, small_cloud).omega + rng.normal(scale=0.5, size=hand12.n_dof)
        prob = Player2Problem(hand12, small_cloud, wr, SCENE_EPS)
        assert prob.n_kept <= len(phi(hand12, small_cloud, wr, ObjectVariable.zero(SCENE_EPS)))
        for _ in range(5):
            wo = rng.normal(scale=3, size=6)
            full = phi(hand12, small_cloud, wr, ObjectVariable(wo, SCENE_EPS)).values
            C = prob.evaluate(wo)[2]
            assert abs(np.max(C, initial=0.0) - max(-full.min(), 0.0)) <= 1e-12


# -- Player 2 scenes ------------------------------------------------------------------------------


def far_hand(spec, cloud):
    """A hand state whose points are all far from the cloud."""
    x = spec.midpoint()
    x[:3] = spec.upper[:3] * 0.99
    return x


def test_absent_hand_lets_the_object_saturate_the_box(hand12):
    cloud = ObjectCloud(np.random.default_rng(5).normal(size=(20, 3)) * 0.01 - 0.45, 20)
    from graspgame.hand import unsquash_robot

    wr = unsquash_robot(hand12, far_hand(hand12, cloud)).omega
    assert phi(hand12, cloud, wr, ObjectVariable.zero(SCENE_EPS)).values.min() > 0.05
    wo0 = ObjectVariable(np.full(6, 0.1), SCENE_EPS)
    rep = solve_player2(hand12, cloud, wo0, wr, ALConfig())
    delta = squash_object(ObjectVariable(rep.argmin, SCENE_EPS))
    assert abs(np.linalg.norm(delta) - np.linalg.norm(SCENE_EPS)) < 1e-6
    assert np.all(np.abs(delta) < SCENE_EPS)
    # the multistart response gets there from rest as well
    best = best_escape(hand12, cloud, wr, SCENE_EPS, ALConfig())
    assert np.linalg.norm(squash_object(ObjectVariable(best.argmin, SCENE_EPS))) > 0.999 * np.linalg.norm(SCENE_EPS)


def fibonacci(n):
    i = np.arange(n) + 0.5
    polar = np.arccos(1 - 2 * i / n)
    azim = np.pi * (1 + 5**0.5) * i
    return np.stack([np.cos(azim) * np.sin(polar), np.sin(azim) * np.sin(polar), np.cos(polar)], axis=1)


# spheres this large make the shell thick: leaving it takes about 2 * SHELL_R of travel,
# more than any twist in the 2 cm box can produce at 1 m
SHELL_GAP, SHELL_R = 0.001, 0.05


def shell_scene():
    """Six object points 1 m out along the axes, each inside its own shell of hand spheres.

    Every shell sphere sits ``SHELL_GAP`` from the object point it encloses.
    """
    anchors = np.concatenate([np.eye(3), -np.eye(3)])
    shell = fibonacci(60) * (SHELL_R + SHELL_GAP)
    points = [{"frame": -1, "offset": list(a + s), "radius": SHELL_R} for a in anchors for s in shell]
    spec = load_hand_spec({
        "frames": [],
        "joints": [],
        "base_limits": {"translation": {"lower": [-0.1] * 3, "upper": [0.1] * 3}},
        "points": points,
        "fingertip_subset": [{"point": 0, "threshold": 0.01}],
    })
    return spec, ObjectCloud(anchors, 6)


def test_enclosed_object_escape_is_small_and_collision_free():
    spec, cloud = shell_scene()
    eps = np.full(6, 0.02)
    wr = np.zeros(6)
    al = ALConfig()
    bound = 1.1 * SHELL_GAP * np.sqrt(6)
    rep = best_escape(spec, cloud, wr, eps, al)
    delta = squash_object(ObjectVariable(rep.argmin, eps))
    assert np.linalg.norm(delta) <= bound
    assert phi(spec, cloud, wr, ObjectVariable(rep.argmin, eps)).values.min() >= -al.constraint_tol
    # a plain solve from a nudged start stays inside the shell too
    rep2 = solve_player2(spec, cloud, ObjectVariable(np.full(6, 0.05), eps), wr, al)
    if rep2.termination == Termination.TOLERANCE_MET:
        assert np.linalg.norm(squash_object(ObjectVariable(rep2.argmin, eps))) <= bound
    oracle = brute_force_escape(spec, cloud, squash_robot(spec, wr), eps, tolerance=al.constraint_tol)
    assert oracle is not None and np.linalg.norm(oracle) <= bound


TANGENT_EPS = np.full(6, 0.002)
A_SPHERE, R_SPHERE = 0.011, 0.01


def tangency_scene():
    """One object point between two hand spheres on the x axis."""
    spec = load_hand_spec({
        "frames": [],
        "joints": [],
        "base_limits": {"translation": {"lower": [-0.1] * 3, "upper": [0.1] * 3}},
        "points": [
            {"frame": -1, "offset": [A_SPHERE, 0, 0], "radius": R_SPHERE},
            {"frame": -1, "offset": [-A_SPHERE, 0, 0], "radius": R_SPHERE},
        ],
        "fingertip_subset": [{"point": 0, "threshold": 0.01}],
    })
    return spec, ObjectCloud(np.zeros((1, 3)), 1)


def test_start_at_tangency_is_kept():
    spec, cloud = tangency_scene()
    w = np.full(6, 20.0)  # everything but x saturates

    def gap(x):
        w[0] = unsquash_object(np.full(6, x), TANGENT_EPS)[0]
        return phi(spec, cloud, np.zeros(6), ObjectVariable(w, TANGENT_EPS)).values.min()

    # the translation of the exponential is V(w) v, so locate the tangency numerically
    x_star = brentq(gap, 0.0, 0.999 * TANGENT_EPS[0], xtol=1e-15)
    assert 0 < x_star < TANGENT_EPS[0]
    w[0] = unsquash_object(np.full(6, x_star), TANGENT_EPS)[0]
    wo0 = ObjectVariable(w, TANGENT_EPS)
    start = -float(squash_object(wo0) @ squash_object(wo0))
    assert phi(spec, cloud, np.zeros(6), wo0).values.min() == pytest.approx(0.0, abs=1e-12)
    cfg = ALConfig()
    rep = solve_player2(spec, cloud, wo0, np.zeros(6), cfg)
    assert rep.outer_iters == 1
    assert abs(rep.objective - start) <= cfg.rel_improve_tol * abs(start)
    assert rep.max_violation <= cfg.constraint_tol


@given(st.lists(st.floats(-50, 50), min_size=6, max_size=6))
def test_player2_answer_strictly_inside_box(w0):
    spec, cloud = _TANGENT
    rep = solve_player2(spec, cloud, ObjectVariable(np.array(w0), TANGENT_EPS), np.zeros(6), ALConfig(max_outer=5))
    delta = squash_object(ObjectVariable(rep.argmin, TANGENT_EPS))
    assert np.all(np.abs(delta) < TANGENT_EPS)


_TANGENT = tangency_scene()


def test_player1_self_constraint_respected(hand12, small_cloud):
    wr0 = initialize_pose(hand12, small_cloud).omega
    rep = solve_player1(hand12, small_cloud, wr0, ObjectVariable.zero(SCENE_EPS), ALConfig())
    if rep.termination == Termination.TOLERANCE_MET:
        assert phi_self(hand12, rep.argmin).values.min() >= -1e-5
