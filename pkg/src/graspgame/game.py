"""Iterative best response between the grasping hand and the escaping object.

Each round Player 1 moves the hand against the object displaced by the last
escape twist, then Player 2 searches for the largest collision-free twist of
the object inside the box ``|delta_i| < eps_i`` with the hand held fixed.
The game ends when the best escape is smaller than ``firm_tol`` (a firm
grasp), when the escape norm stops growing, when the escape norms alternate
between two values, or after ``max_rounds`` rounds.

``|delta|`` is the plain Euclidean norm of the raw twist, which mixes metres
and radians.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm, qmc

from .contact import PairGeometry, clearance_values
from .hand import HandSpec, RobotState, RobotVariable, forward_points, squash_robot, unsquash_robot
from .objects import DEFAULT_EPSILON, ObjectCloud, ObjectVariable, squash_object, unsquash_object
from .se3 import pca_object_frame, twist_exp
from .solver import ALConfig, SolveReport, Termination, solve_player1, solve_player2

BOUND_MARGIN = 1e-3
ESCAPE_MIN_NORM = 1e-6
CYCLE_MATCH_TOL = 1e-4
PLAYER2_SCREEN_SCALES = (0.05, 0.12, 0.25, 0.6, 0.999)
PLAYER2_STARTS = 4
PLAYER2_START_SCALE = 0.6
HALTON_SEED = 20240917


class Outcome(str, enum.Enum):
    FIRM = "firm_grasp"
    STALLED = "stalled"
    CYCLE = "cycle_suspected"
    ROUND_CAP = "round_cap"
    ABORTED = "aborted"


class Agreement(str, enum.Enum):
    CONSISTENT = "consistent"
    FALSE_FIRM = "false_firm"
    MISSED_FIRM = "missed_firm"


@dataclass(frozen=True)
class GameConfig:
    max_rounds: int = 10
    firm_tol: float = 1e-3
    stall_tol: float = 1e-5
    epsilon_bounds: np.ndarray = field(default_factory=lambda: DEFAULT_EPSILON.copy())
    cycle_window: int = 4
    fresh_player1_start: bool = False
    player2_multistart: bool = True
    stall_rule: str = "signed"  # "signed": change < stall_tol; "absolute": |change| < stall_tol

    def __post_init__(self):
        eps = np.asarray(self.epsilon_bounds, dtype=float).reshape(6)
        object.__setattr__(self, "epsilon_bounds", eps)
        if self.max_rounds < 1:
            raise ValueError("max_rounds must be at least 1")
        if not (self.firm_tol > 0 and self.stall_tol > 0):
            raise ValueError("firm_tol and stall_tol must be positive")
        if np.any(eps <= 0):
            raise ValueError("epsilon_bounds must be positive")
        if self.stall_rule not in ("absolute", "signed"):
            raise ValueError("stall_rule must be 'absolute' or 'signed'")
        if self.cycle_window < 4:
            raise ValueError("cycle_window must be at least 4")


@dataclass
class RoundRecord:
    index: int
    player1: SolveReport
    player2: SolveReport
    delta: np.ndarray
    delta_norm: float
    robot: np.ndarray  # squashed hand coordinates after Player 1
    branch: str | None = None  # termination branch taken after this round, if any


@dataclass
class GameTrace:
    rounds: list[RoundRecord]
    outcome: Outcome
    final_state: RobotState
    final_omega: np.ndarray
    initial_clamped: bool = False

    @property
    def delta_norms(self) -> list[float]:
        return [r.delta_norm for r in self.rounds]

    @property
    def final_delta(self) -> np.ndarray:
        return self.rounds[-1].delta if self.rounds else np.zeros(6)

    def to_dict(self) -> dict:
        return {
            "outcome": self.outcome.value,
            "initial_clamped": self.initial_clamped,
            "final_state": {
                "translation": self.final_state.translation,
                "rotation_vector": self.final_state.rotation_vector,
                "joints": self.final_state.joints,
            },
            "final_omega": self.final_omega,
            "rounds": [
                {
                    "round": r.index,
                    "delta_norm": r.delta_norm,
                    "delta": r.delta,
                    "robot": r.robot,
                    "branch": r.branch,
                    "player1": r.player1.to_dict(),
                    "player2": r.player2.to_dict(),
                }
                for r in self.rounds
            ],
        }

    def to_json(self) -> str:
        return dumps_exact(self.to_dict())


def dumps_exact(obj, indent: int = 1) -> str:
    """JSON text with every float printed to 17 significant digits.

    Non-finite floats become ``NaN``/``Infinity`` as in Python's ``json``.
    """

    def emit(o, depth):
        pad = "\n" + " " * (indent * (depth + 1))
        end = "\n" + " " * (indent * depth)
        if isinstance(o, np.ndarray):
            o = o.tolist()
        if isinstance(o, enum.Enum):
            o = o.value
        if o is None or isinstance(o, (bool, np.bool_)):
            return "null" if o is None else ("true" if o else "false")
        if isinstance(o, (int, np.integer)):
            return str(int(o))
        if isinstance(o, (float, np.floating)):
            o = float(o)
            if math.isnan(o):
                return "NaN"
            if math.isinf(o):
                return "Infinity" if o > 0 else "-Infinity"
            text = f"{o:.17g}"
            return text if any(c in text for c in ".en") else text + ".0"
        if isinstance(o, str):
            return json.dumps(o)
        if isinstance(o, dict):
            if not o:
                return "{}"
            items = [f"{pad}{emit(str(k), depth + 1)}: {emit(v, depth + 1)}" for k, v in o.items()]
            return "{" + ",".join(items) + end + "}"
        if isinstance(o, (list, tuple)):
            if not o:
                return "[]"
            if all(isinstance(v, (int, float, np.integer, np.floating)) for v in o):
                return "[" + ", ".join(emit(v, depth + 1) for v in o) + "]"
            return "[" + ",".join(pad + emit(v, depth + 1) for v in o) + end + "]"
        raise TypeError(f"cannot serialise {type(o).__name__}")

    return emit(obj, 0) + "\n"


# --------------------------------------------------------------------------
# initialisation


def initialize_pose(spec: HandSpec, cloud: ObjectCloud) -> RobotVariable:
    """Palm frame on the principal frame of the cloud, joints at mid-range.

    Base coordinates outside their bounds are clamped ``BOUND_MARGIN`` inside
    and the result is flagged ``clamped``.
    """
    frame = pca_object_frame(cloud.points_initial)
    base = frame @ spec.palm_offset.inverse()
    state = RobotState.from_base(base, spec.midpoint()[6:])
    x = state.as_vector()
    lo, hi = spec.lower[:6] + BOUND_MARGIN, spec.upper[:6] - BOUND_MARGIN
    clamped = bool(np.any((x[:6] < lo) | (x[:6] > hi)))
    x[:6] = np.clip(x[:6], lo, hi)
    w = unsquash_robot(spec, x)
    return RobotVariable(w.omega, clamped=clamped or w.clamped)


# --------------------------------------------------------------------------
# the game


def _candidate_twists(eps: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Zero, the signed axes and every sign corner of the box at a few scales, with the scales."""
    axes = np.concatenate([np.eye(6), -np.eye(6)])
    corners = np.array(np.meshgrid(*[[1.0, -1.0]] * 6, indexing="ij")).reshape(6, -1).T
    rows, scales = [np.zeros((1, 6))], [np.ones(1)]
    for scale in PLAYER2_SCREEN_SCALES:
        rows += [scale * axes, scale * corners]
        scales.append(np.full(len(axes) + len(corners), scale))
    return np.concatenate(rows) * eps, np.concatenate(scales)


def _screen(spec, cloud, robot_points, candidates) -> tuple[np.ndarray, np.ndarray]:
    """Worst clearance violation ``max(-phi, 0)`` at each candidate twist."""
    violation = np.empty(len(candidates))
    for i, d in enumerate(candidates):
        T = twist_exp(d)
        geo = PairGeometry(robot_points, cloud.points_initial @ T.rotation.T + T.translation)
        violation[i] = max(-clearance_values(spec, geo).min(), 0.0)
    return violation


def _as_report(delta, violation: float, eps, tol: float) -> SolveReport:
    """A sampled twist dressed as a Player 2 result."""
    term = Termination.TOLERANCE_MET if violation <= tol else Termination.ITERATION_CAP
    w = unsquash_object(delta, eps) if np.any(delta) else np.zeros(6)
    delta = squash_object(ObjectVariable(w, eps))
    return SolveReport(w, -float(delta @ delta), violation, 0, 0, term)


def _pick_escape(reports: list[SolveReport], tol: float) -> SolveReport:
    """Largest feasible escape; the least violating report when none is feasible."""
    feasible = [r for r in reports if r.max_violation <= tol]
    if feasible:
        return min(feasible, key=lambda r: r.objective)  # objective = -|delta|^2
    return min(reports, key=lambda r: r.max_violation)


def best_escape(spec, cloud, wr, eps, al2: ALConfig, previous=None, multistart=True):
    """Player 2's best response, taken over several AL solves.

    The escape norm has zero gradient in every component that is zero, so a
    single solve from the zero twist never leaves it. Candidate twists (the
    signed axes and the sign corners of the box at a few scales) are screened
    by their worst clearance violation alone. If a feasible candidate already
    sits at the outermost screening scale it is returned directly, since
    nothing in the box is meaningfully larger. Otherwise the AL solve runs
    from the previous answer (if any) and the ``PLAYER2_STARTS`` best
    candidates, least violating first and larger norms first among equals.
    Each candidate start is pulled in to at most ``PLAYER2_START_SCALE`` of
    the box, where the squash still has slope. Starts are tried in order and
    the search stops once a feasible escape reaches the outermost scale.

    The zero twist and the largest feasible screened candidate take part as
    answers in their own right, so an AL run that drifts off into collision
    never hides an escape the screening already saw; when nothing but the
    rest pose is feasible the answer is zero. With ``multistart`` off only
    the previous answer, or else the zero twist, is used as a start.
    """
    eps = np.asarray(eps, dtype=float)
    robot_points = forward_points(spec, squash_robot(spec, wr).as_vector())
    enough = PLAYER2_SCREEN_SCALES[-1] * float(np.linalg.norm(eps))
    rest = _as_report(np.zeros(6), 0.0, eps, al2.constraint_tol)
    starts = [] if previous is None else [previous.omega]
    screened = []
    if multistart:
        cand, scales = _candidate_twists(eps)
        violation = _screen(spec, cloud, robot_points, cand)
        rest = _as_report(cand[0], float(violation[0]), eps, al2.constraint_tol)
        norms = np.linalg.norm(cand, axis=1)
        ok = np.flatnonzero(violation <= al2.constraint_tol)
        if len(ok):
            # the largest screened twist that is already feasible backs up AL runs that drift off
            i = ok[np.argmax(norms[ok])]
            screened.append(_as_report(cand[i], float(violation[i]), eps, al2.constraint_tol))
            if norms[i] >= enough * (1 - 1e-12):
                return screened[0]
        for i in np.lexsort((-norms, violation))[:PLAYER2_STARTS]:
            if norms[i] > 0:
                # near the box faces the squash is flat, so start further in
                pull = min(1.0, PLAYER2_START_SCALE / scales[i])
                starts.append(unsquash_object(pull * cand[i], eps))
    else:
        rest = _as_report(np.zeros(6), float(_screen(spec, cloud, robot_points, np.zeros((1, 6)))[0]),
                          eps, al2.constraint_tol)
    if not starts:
        starts.append(np.zeros(6))
    reports = []
    for w in starts:
        rep = solve_player2(spec, cloud, ObjectVariable(w, eps), wr, al2)
        reports.append(rep)
        if rep.max_violation <= al2.constraint_tol and np.sqrt(-rep.objective) >= enough:
            break
    return _pick_escape(reports + [rest] + screened, al2.constraint_tol)


def _is_cycle(norms: list[float], window: int) -> bool:
    if len(norms) < window:
        return False
    tail = norms[-window:]
    repeats = all(abs(tail[i] - tail[i - 2]) <= CYCLE_MATCH_TOL for i in range(2, window))
    alternates = abs(tail[-1] - tail[-2]) > CYCLE_MATCH_TOL
    return repeats and alternates


def _stalled(change: float, cfg: GameConfig) -> bool:
    if cfg.stall_rule == "signed":
        return change < cfg.stall_tol
    return abs(change) < cfg.stall_tol


def run_game(
    spec: HandSpec,
    cloud: ObjectCloud,
    cfg: GameConfig | None = None,
    al1: ALConfig | None = None,
    al2: ALConfig | None = None,
    warm: RobotState | None = None,
) -> GameTrace:
    cfg = cfg or GameConfig()
    al1 = al1 or ALConfig()
    al2 = al2 or ALConfig()
    eps = cfg.epsilon_bounds

    if warm is not None:
        x = warm.as_vector() if isinstance(warm, RobotState) else np.asarray(warm, float)
        if np.any(x <= spec.lower) or np.any(x >= spec.upper):
            raise ValueError("warm start must lie strictly inside the hand limits")
        start = unsquash_robot(spec, x)
    else:
        start = initialize_pose(spec, cloud)
    wr = start.omega
    wo = ObjectVariable.zero(eps)
    prev_norm = 0.0
    previous_escape = None
    rounds: list[RoundRecord] = []
    outcome = Outcome.ROUND_CAP

    for t in range(1, cfg.max_rounds + 1):
        p1_start = start.omega if cfg.fresh_player1_start else wr
        r1 = solve_player1(spec, cloud, p1_start, wo, al1)
        if not r1.failed:
            wr = r1.argmin
        r2 = best_escape(spec, cloud, wr, eps, al2, previous_escape, cfg.player2_multistart)
        if not r2.failed:
            wo = ObjectVariable(r2.argmin, eps)
            previous_escape = wo
        delta = squash_object(wo)
        dnorm = float(np.linalg.norm(delta))
        rec = RoundRecord(t, r1, r2, delta, dnorm, squash_robot(spec, wr).as_vector())
        rounds.append(rec)

        if r1.failed and r2.failed:
            outcome = Outcome.ABORTED
        elif dnorm < cfg.firm_tol:
            outcome = Outcome.FIRM
        elif _stalled(dnorm - prev_norm, cfg):
            outcome = Outcome.STALLED
        elif _is_cycle([r.delta_norm for r in rounds], cfg.cycle_window):
            outcome = Outcome.CYCLE
        elif t == cfg.max_rounds:
            outcome = Outcome.ROUND_CAP
        else:
            prev_norm = dnorm
            continue
        rec.branch = outcome.value
        break

    return GameTrace(rounds, outcome, squash_robot(spec, wr), wr.copy(), start.clamped)


# --------------------------------------------------------------------------
# independent escape oracle


def escape_directions(n_dirs: int, seed: int = HALTON_SEED) -> np.ndarray:
    """The 12 signed axes followed by scrambled Halton points mapped onto the 5-sphere."""
    axes = np.concatenate([np.eye(6), -np.eye(6)])
    extra = max(n_dirs - len(axes), 0)
    if extra == 0:
        return axes[:n_dirs]
    u = qmc.Halton(d=6, scramble=True, seed=seed).random(extra)
    g = norm.ppf(np.clip(u, 1e-12, 1 - 1e-12))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    return np.concatenate([axes, g])


def _feasible(spec, robot_points, cloud_points, twists, tolerance=0.0) -> np.ndarray:
    out = np.empty(len(twists), dtype=bool)
    for i, d in enumerate(twists):
        T = twist_exp(d)
        geo = PairGeometry(robot_points, cloud_points @ T.rotation.T + T.translation)
        out[i] = clearance_values(spec, geo).min() >= -tolerance
    return out


def brute_force_escape(
    spec: HandSpec,
    cloud: ObjectCloud,
    x: RobotState,
    eps=DEFAULT_EPSILON,
    n_dirs: int = 500,
    n_mags: int = 12,
    seed: int = HALTON_SEED,
    tolerance: float = 0.0,
    min_norm: float = ESCAPE_MIN_NORM,
) -> np.ndarray | None:
    """Largest collision-free object twist found by direction sampling and bisection.

    Each direction ``u`` is scaled into the box as ``s * eps * u / max|u|``
    with ``0 <= s < 1``. The full step is tried first; otherwise ``n_mags``
    bisection steps find the largest collision-free scale, assuming
    collision-freeness is monotone along the ray. Feasibility means every
    robot-object clearance is ``>= -tolerance``; pass the game's constraint
    tolerance to judge a game result by the same standard the players use.
    Returns the feasible twist of largest Euclidean norm above ``min_norm``
    (ties broken by direction order), or ``None``. Verifying a game result
    uses the game's firm threshold as ``min_norm``: a firm grasp claims that
    no escape of that size exists, not that the object cannot move at all.
    """
    if n_dirs < 12 or n_mags < 1:
        raise ValueError("n_dirs must be at least 12 and n_mags at least 1")
    if tolerance < 0:
        raise ValueError("tolerance must be non-negative")
    eps = np.broadcast_to(np.asarray(eps, dtype=float), (6,))
    if not np.any(eps > 0):
        return None
    x = x if isinstance(x, RobotState) else RobotState.from_vector(x)
    robot_points = forward_points(spec, x.as_vector())
    dirs = escape_directions(n_dirs, seed)
    box = dirs * eps / np.max(np.abs(dirs), axis=1, keepdims=True)
    full = np.nextafter(1.0, 0.0)
    lo = np.zeros(len(dirs))
    hi = np.full(len(dirs), full)
    ok = _feasible(spec, robot_points, cloud.points_initial, box * full, tolerance)
    lo[ok] = full
    active = ~ok
    for _ in range(n_mags):
        idx = np.flatnonzero(active)
        if len(idx) == 0:
            break
        mid = 0.5 * (lo[idx] + hi[idx])
        good = _feasible(spec, robot_points, cloud.points_initial, box[idx] * mid[:, None], tolerance)
        lo[idx[good]] = mid[good]
        hi[idx[~good]] = mid[~good]
    twists = box * lo[:, None]
    norms = np.linalg.norm(twists, axis=1)
    best = int(np.argmax(norms))  # first index among ties
    if norms[best] <= min_norm:
        return None
    return twists[best]


def classify_agreement(trace: GameTrace, oracle_result) -> Agreement:
    firm = trace.outcome == Outcome.FIRM
    escape = oracle_result is not None
    if firm and not escape:
        return Agreement.CONSISTENT
    if firm:
        return Agreement.FALSE_FIRM
    if not escape:
        return Agreement.MISSED_FIRM
    return Agreement.CONSISTENT
