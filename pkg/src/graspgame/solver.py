"""Augmented Lagrangian solvers for both players over a limited-memory quasi-Newton core.

Both players are cast as ``min f(x) s.t. C(x) <= 0`` and handed to
:func:`solve_al`, which minimises

    L = f + mu . max(C, 0) + rho / 2 * |max(C, 0)|^2

for fixed ``(mu, rho)``, then sets ``mu <- max(mu + rho * C, 0)`` and
``rho <- alpha * rho``. The outer loop stops when ``|max(C, 0)|_inf`` is within
tolerance, when the relative improvement between consecutive outer
iterations drops below ``rel_improve_tol``, or after ``max_outer``
iterations. The improvement is measured on the merit ``L``
(``|L_t - L_{t-1}| / max(|L_{t-1}|, 1)``), on the violation, or (the
default) counts as stalled when either of the two stops improving. The
violation test catches iterates pinned where the squash map is flat: there
the merit keeps growing with ``rho`` while the iterate no longer moves.

Each problem states the units its constraints and objective are measured in
for the merit (``constraint_scale`` and ``objective_scale``): the players
measure clearances in millimetres (Player 1) and tenths of a millimetre
(Player 2), Player 1's objective in square millimetres and Player 2's escape
norm relative to the box. Tolerances and
reported values stay in the problem's natural units (metres).
"""

from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .contact import (
    PairGeometry,
    RobotEval,
    ObjectEval,
    SelfGeometry,
    clearance_values,
    clearance_vjp,
    grasp_terms,
)
from .hand import HandSpec, RobotVariable, squash
from .objects import ObjectCloud, ObjectVariable
from .se3 import exp_point_vjp, twist_exp

ARMIJO_C = 1e-4
BACKTRACK_SHRINK = 0.5
MAX_BACKTRACKS = 40


@dataclass(frozen=True)
class ALConfig:
    max_outer: int = 100
    penalty_growth: float = 10.0
    penalty_init: float = 1.0
    multiplier_init: float = 0.0
    constraint_tol: float = 1e-5
    rel_improve_tol: float = 1e-2
    inner_max_iters: int = 200
    inner_grad_tol: float = 1e-6
    memory: int = 10
    constraint_scale: float | None = None  # None: the problem's own unit
    improvement_measure: str = "either"  # "merit", "violation" or "either"

    def __post_init__(self):
        if not self.penalty_growth > 1:
            raise ValueError("penalty_growth must exceed 1")
        if not (self.constraint_tol > 0 and self.rel_improve_tol > 0 and self.inner_grad_tol > 0):
            raise ValueError("tolerances must be positive")
        if self.constraint_scale is not None and not self.constraint_scale > 0:
            raise ValueError("constraint_scale must be positive")
        if self.max_outer < 1 or self.inner_max_iters < 1 or self.memory < 1:
            raise ValueError("iteration counts and memory must be positive")
        if self.improvement_measure not in ("merit", "violation", "either"):
            raise ValueError("improvement_measure must be 'merit', 'violation' or 'either'")

    def penalty_scale(self, problem) -> float:
        if self.constraint_scale is not None:
            return float(self.constraint_scale)
        return float(getattr(problem, "constraint_scale", 1.0))

    def with_(self, **changes) -> ALConfig:
        return replace(self, **changes)


class Termination(str, enum.Enum):
    TOLERANCE_MET = "tolerance_met"
    STALLED = "relative_improvement_stalled"
    ITERATION_CAP = "iteration_cap"


@dataclass
class QNResult:
    x: np.ndarray
    fun: float
    grad: np.ndarray
    iterations: int
    evaluations: int
    status: str  # converged | iteration_cap | line_search_failed | non_finite


def _two_loop(g, S, Y, rhos):
    q = g.copy()
    alphas = []
    for s, y, r in zip(reversed(S), reversed(Y), reversed(rhos)):
        a = r * (s @ q)
        alphas.append(a)
        q -= a * y
    if S:
        s, y = S[-1], Y[-1]
        yy = y @ y
        if yy > 0:
            q *= (s @ y) / yy
    for (s, y, r), a in zip(zip(S, Y, rhos), reversed(alphas)):
        b = r * (y @ q)
        q += s * (a - b)
    return -q


def lm_quasi_newton_minimize(
    fun: Callable[[np.ndarray], tuple[float, np.ndarray]],
    x0,
    cfg: ALConfig | None = None,
    *,
    max_iters: int | None = None,
    grad_tol: float | None = None,
    memory: int | None = None,
) -> QNResult:
    """L-BFGS with Armijo backtracking (c = 1e-4, halving, at most 40 backtracks).

    ``fun`` returns ``(value, gradient)``. Stops when ``|grad|_inf <= grad_tol``,
    at the iteration cap, or when the line search fails. A non-finite value or
    gradient aborts with the last finite iterate (status ``non_finite``). The
    returned value never exceeds ``fun(x0)``.
    """
    cfg = cfg or ALConfig()
    max_iters = cfg.inner_max_iters if max_iters is None else max_iters
    grad_tol = cfg.inner_grad_tol if grad_tol is None else grad_tol
    memory = cfg.memory if memory is None else memory

    x = np.array(x0, dtype=float)
    f, g = fun(x)
    nfev = 1
    if not (np.isfinite(f) and np.all(np.isfinite(g))):
        return QNResult(x, f, g, 0, nfev, "non_finite")
    S, Y, rhos = deque(maxlen=memory), deque(maxlen=memory), deque(maxlen=memory)
    status = "iteration_cap"
    it = 0
    while it < max_iters:
        if np.max(np.abs(g), initial=0.0) <= grad_tol:
            status = "converged"
            break
        d = _two_loop(g, S, Y, rhos)
        gd = float(g @ d)
        if not gd < 0 or not np.isfinite(gd):
            S.clear(), Y.clear(), rhos.clear()
            d = -g
            gd = -float(g @ g)
        step = 1.0
        for _ in range(MAX_BACKTRACKS + 1):
            xn = x + step * d
            fn, gn = fun(xn)
            nfev += 1
            if not (np.isfinite(fn) and np.all(np.isfinite(gn))):
                return QNResult(x, f, g, it, nfev, "non_finite")
            if fn <= f + ARMIJO_C * step * gd:
                break
            step *= BACKTRACK_SHRINK
        else:
            status = "line_search_failed"
            break
        s, y = xn - x, gn - g
        sy = float(s @ y)
        if sy > 1e-12 * np.linalg.norm(s) * np.linalg.norm(y):
            S.append(s), Y.append(y), rhos.append(1.0 / sy)
        else:
            # negative curvature along the step: the stored pairs no longer describe
            # the local model and would keep proposing the same step
            S.clear(), Y.clear(), rhos.clear()
        x, f, g = xn, fn, gn
        it += 1
    return QNResult(x, f, g, it, nfev, status)


@dataclass
class SolveReport:
    argmin: np.ndarray
    objective: float
    max_violation: float
    outer_iters: int
    inner_iters_total: int
    termination: Termination
    violation_history: list[float] = field(default_factory=list)
    rho_history: list[float] = field(default_factory=list)
    merit_history: list[float] = field(default_factory=list)
    inner_status: list[str] = field(default_factory=list)

    @property
    def failed(self) -> bool:
        return "non_finite" in self.inner_status

    def to_dict(self) -> dict:
        return {
            "argmin": self.argmin,
            "objective": self.objective,
            "max_violation": self.max_violation,
            "outer_iters": self.outer_iters,
            "inner_iters_total": self.inner_iters_total,
            "termination": self.termination.value,
            "violation_history": self.violation_history,
            "rho_history": self.rho_history,
            "inner_status": self.inner_status,
        }


class ConstrainedProblem:
    """Interface for :func:`solve_al`.

    ``evaluate(x)`` returns ``(f, grad_f, C, vjp)`` where ``vjp(w)`` gives
    ``sum_i w_i grad C_i``. ``f`` may be a rescaled objective;
    ``f / objective_scale`` is what gets reported.
    """

    objective_scale = 1.0
    constraint_scale = 1.0

    def evaluate(self, x):  # pragma: no cover - interface
        raise NotImplementedError


class FunctionProblem(ConstrainedProblem):
    """Problem from plain callables, for small analytic cases."""

    def __init__(self, objective, constraints, constraint_jacobian):
        self.objective = objective
        self.constraints = constraints
        self.constraint_jacobian = constraint_jacobian

    def evaluate(self, x):
        f, g = self.objective(x)
        C = np.atleast_1d(np.asarray(self.constraints(x), dtype=float))
        Jc = np.atleast_2d(self.constraint_jacobian(x))
        return f, g, C, lambda w: w @ Jc


def solve_al(problem: ConstrainedProblem, x0, cfg: ALConfig) -> SolveReport:
    x = np.array(x0, dtype=float)
    f, _, C, _ = problem.evaluate(x)
    mu = np.full(len(C), float(cfg.multiplier_init))
    rho = float(cfg.penalty_init)
    scale = cfg.penalty_scale(problem)
    unscale = 1.0 / problem.objective_scale
    report = SolveReport(x, float(f) * unscale, float(np.max(C, initial=0.0)), 0, 0, Termination.ITERATION_CAP)
    prev = None

    for t in range(1, cfg.max_outer + 1):
        def merit(z, mu=mu, rho=rho):
            fz, gz, Cz, vjp = problem.evaluate(z)
            Cz = scale * Cz
            pos = np.maximum(Cz, 0.0)
            value = fz + mu @ pos + 0.5 * rho * (pos @ pos)
            w = np.where(Cz > 0.0, mu + rho * Cz, 0.0)
            return value, (gz + vjp(scale * w)) if np.any(w) else gz

        res = lm_quasi_newton_minimize(merit, x, cfg)
        x = res.x
        f, _, C, _ = problem.evaluate(x)
        pos = np.maximum(C, 0.0)
        violation = float(np.max(pos, initial=0.0))
        pos = scale * pos
        report.merit_history.append(float(f + mu @ pos + 0.5 * rho * (pos @ pos)))
        # projected first-order update: multipliers of satisfied constraints decay
        mu = np.maximum(mu + rho * scale * C, 0.0)
        rho *= cfg.penalty_growth
        report.rho_history.append(rho)
        report.violation_history.append(violation)
        report.inner_status.append(res.status)
        report.inner_iters_total += res.iterations
        report.outer_iters = t
        report.argmin, report.objective, report.max_violation = x, float(f) * unscale, violation

        if res.status == "non_finite":
            break
        if violation <= cfg.constraint_tol:
            report.termination = Termination.TOLERANCE_MET
            break
        progress = (report.merit_history[-1], violation)
        if prev is not None:
            merit_stalled = abs(progress[0] - prev[0]) < cfg.rel_improve_tol * max(abs(prev[0]), 1.0)
            violation_stalled = prev[1] - progress[1] < cfg.rel_improve_tol * prev[1]
            stalled = {
                "merit": merit_stalled,
                "violation": violation_stalled,
                "either": merit_stalled or violation_stalled,
            }[cfg.improvement_measure]
            if stalled:
                report.termination = Termination.STALLED
                break
        prev = progress
    return report


# --------------------------------------------------------------------------
# the two players


class Player1Problem(ConstrainedProblem):
    """Fingertip objective over ``omega_R`` with the object held at a fixed twist.

    Constraints, in order: the smallest clearance at the displaced object
    (``<= 0``, some collision), the negated self-collision clearances, and the
    negated clearances at the undisplaced object. The objective is handed to
    the solver in square millimetres.
    """

    objective_scale = 1e6
    constraint_scale = 1e3

    def __init__(self, spec: HandSpec, cloud: ObjectCloud, wo_fixed: ObjectVariable):
        self.spec = spec
        oe = ObjectEval(cloud, wo_fixed)
        self.delta = oe.delta
        self.moved = oe.points
        self.rest = cloud.points_initial
        self.same = not np.any(self.delta)

    def evaluate(self, wr):
        spec = self.spec
        re = RobotEval(spec, wr)
        geo_d = PairGeometry(re.points, self.moved)
        geo_0 = geo_d if self.same else PairGeometry(re.points, self.rest)
        J, gJ, _, _ = grasp_terms(spec, geo_d)
        phi_d = clearance_values(spec, geo_d)
        phi_0 = phi_d if self.same else clearance_values(spec, geo_0)
        i_min = int(np.argmin(phi_d))
        selfg = SelfGeometry(spec, re.points)
        n_self = len(selfg.values)
        C = np.concatenate([[phi_d[i_min]], -selfg.values, -phi_0])

        def vjp(w):
            w_rest = -w[1 + n_self:]
            if self.same:
                w_rest = w_rest.copy()
                w_rest[i_min] += w[0]
                g_points = clearance_vjp(spec, geo_0, w_rest)[0]
            else:
                w_moved = np.zeros_like(phi_d)
                w_moved[i_min] = w[0]
                g_points = clearance_vjp(spec, geo_d, w_moved)[0] + clearance_vjp(spec, geo_0, w_rest)[0]
            g_points -= selfg.vjp(spec, w[1:1 + n_self])
            return re.pullback(g_points)

        k = self.objective_scale
        return k * J, k * re.pullback(gJ), C, vjp


class Player2Problem(ConstrainedProblem):
    """Escape objective ``-|delta|^2`` over ``omega_O`` with the hand fixed.

    The solver sees it divided by ``|eps|^2`` so that it lies in ``(-1, 0]``
    whatever the size of the box.

    No object point moves further than ``D = |eps_v| + |eps_w| max|p|``
    under a twist in the box, so a sphere clearance changes by at most ``D``
    and a link clearance by at most ``2 D``. Pairs whose clearance at rest
    exceeds ``2 D`` stay collision-free throughout and are left out of the
    constraint vector; this changes neither the merit nor the violation.
    """

    def __init__(self, spec: HandSpec, cloud: ObjectCloud, wr_fixed, bounds):
        self.spec = spec
        self.bounds = np.asarray(bounds, dtype=float)
        self.objective_scale = 1.0 / float(self.bounds @ self.bounds)
        self.constraint_scale = 1e4
        P = RobotEval(spec, wr_fixed).points
        Q = cloud.points_initial
        reach = np.linalg.norm(self.bounds[:3]) + np.linalg.norm(self.bounds[3:]) * np.max(
            np.linalg.norm(Q, axis=1)
        )
        rest = clearance_values(spec, PairGeometry(P, Q))
        K, N = len(P), len(Q)
        keep = np.flatnonzero(rest <= 2.0 * reach + 1e-9)
        sphere, link = keep[keep < K * N], keep[keep >= K * N] - K * N
        ks, ns = np.divmod(sphere, N)
        ls, nl = np.divmod(link, N)
        li = spec.link_index[ls] if len(ls) else np.zeros((0, 2), dtype=int)
        # object points that appear in some kept pair, and pair rows into them
        self.obj_index, inverse = np.unique(np.concatenate([ns, nl]), return_inverse=True)
        self.q0 = Q[self.obj_index]
        self.ns, self.nl = inverse[: len(ns)], inverse[len(ns):]
        self.ps, self.rs = P[ks], spec.radii[ks]
        self.pa, self.pb = P[li[:, 0]], P[li[:, 1]]
        self.thr = spec.link_thresholds[ls]
        self.n_kept = len(keep)

    def evaluate(self, wo):
        delta, dd = squash(wo, -self.bounds, self.bounds)
        T = twist_exp(delta)
        rotated = self.q0 @ T.rotation.T
        q = rotated + T.translation
        ds = self.ps - q[self.ns]
        da = self.pa - q[self.nl]
        db = self.pb - q[self.nl]
        ns_ = np.sqrt(np.einsum("ij,ij->i", ds, ds))
        na = np.sqrt(np.einsum("ij,ij->i", da, da))
        nb = np.sqrt(np.einsum("ij,ij->i", db, db))
        C = np.concatenate([self.rs - ns_, self.thr - na - nb])
        n_s = len(ns_)

        def vjp(w):
            # d(-phi)/dq is the unit vector from the object point towards the robot point
            g = np.zeros_like(q)
            ws, wl = w[:n_s], w[n_s:]
            i = np.flatnonzero(ws)
            if len(i):
                np.add.at(g, self.ns[i], (ws[i] / _safe(ns_[i]))[:, None] * ds[i])
            i = np.flatnonzero(wl)
            if len(i):
                u = da[i] / _safe(na[i])[:, None] + db[i] / _safe(nb[i])[:, None]
                np.add.at(g, self.nl[i], wl[i][:, None] * u)
            return exp_point_vjp(delta, rotated, g) * dd

        k = self.objective_scale
        return -k * float(delta @ delta), -2.0 * k * delta * dd, C, vjp


def _safe(n):
    return np.where(n > 0.0, n, np.inf)


def solve_player1(spec: HandSpec, cloud: ObjectCloud, wr0, wo_fixed: ObjectVariable, cfg: ALConfig) -> SolveReport:
    omega = wr0.omega if isinstance(wr0, RobotVariable) else wr0
    return solve_al(Player1Problem(spec, cloud, wo_fixed), omega, cfg)


def solve_player2(spec: HandSpec, cloud: ObjectCloud, wo0: ObjectVariable, wr_fixed, cfg: ALConfig) -> SolveReport:
    wr = wr_fixed.omega if isinstance(wr_fixed, RobotVariable) else wr_fixed
    return solve_al(Player2Problem(spec, cloud, wr, wo0.bounds), wo0.omega, cfg)
