"""Command-line entry point: ``graspgame solve | verify | morph``.

Settings are layered: built-in defaults, then the JSON config file given with
``--config``, then command-line flags. Relative paths inside a config file
resolve against the file's directory; a hand path may also name a bundled
hand (``synthetic4_12dof``).

Exit codes: 0 firm grasp (or no escape for ``verify``), 2 non-firm outcome,
3 escape found by ``verify``, 1 any error. The log level comes from the
``GRASPGAME_LOG`` environment variable (default ``WARNING``).
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .contact import phi
from .errors import GraspGameError
from .game import (
    GameConfig,
    Outcome,
    brute_force_escape,
    dumps_exact,
    run_game,
)
from .hand import RobotState, load_hand_spec, unsquash_robot
from .objects import DEFAULT_SAMPLE_N, ObjectVariable, load_object_cloud, read_points
from .solver import ALConfig

log = logging.getLogger("graspgame")

DATA_DIR = Path(__file__).resolve().parent / "data"
LOG_ENV = "GRASPGAME_LOG"

EXIT_FIRM, EXIT_ERROR, EXIT_NOT_FIRM, EXIT_ESCAPE = 0, 1, 2, 3


class UsageError(Exception):
    """A configuration or input problem, reported with exit code 1."""


@dataclass
class RunConfig:
    hand_path: Path | None = None
    object_path: Path | None = None
    object_sample_n: int = DEFAULT_SAMPLE_N
    epsilon_bounds: np.ndarray | None = None
    game: dict = field(default_factory=dict)
    al1: dict = field(default_factory=dict)
    al2: dict = field(default_factory=dict)
    seed: int | None = None
    output_dir: Path = Path("graspgame_out")

    def game_config(self) -> GameConfig:
        kw = dict(self.game)
        if self.epsilon_bounds is not None:
            kw["epsilon_bounds"] = self.epsilon_bounds
        return GameConfig(**kw)

    def al_configs(self) -> tuple[ALConfig, ALConfig]:
        return ALConfig(**self.al1), ALConfig(**self.al2)

    def oracle_kwargs(self) -> dict:
        kw = {} if self.seed is None else {"seed": self.seed}
        return kw


def bundled(*parts: str) -> Path:
    return DATA_DIR.joinpath(*parts)


def _resolve(value, base: Path) -> Path:
    p = Path(value)
    return p if p.is_absolute() else base / p


def _resolve_hand(value, base: Path) -> Path:
    p = _resolve(value, base)
    if not p.exists() and not Path(value).suffix:
        named = bundled("hands", f"{value}.json")
        if named.exists():
            return named
    return p


def _epsilon(values) -> np.ndarray:
    """One value for all six entries, two for (translation, rotation), or all six."""
    v = np.atleast_1d(np.asarray(values, dtype=float))
    if len(v) == 1:
        return np.full(6, v[0])
    if len(v) == 2:
        return np.repeat(v, 3)
    if len(v) == 6:
        return v
    raise UsageError(f"epsilon needs 1, 2 or 6 values, got {len(v)}")


_FIELDS = {f.name for f in dataclasses.fields(RunConfig)}
_SECTIONS = {
    "game": {f.name for f in dataclasses.fields(GameConfig)} - {"epsilon_bounds"},
    "al1": {f.name for f in dataclasses.fields(ALConfig)},
    "al2": {f.name for f in dataclasses.fields(ALConfig)},
}


def load_config(path: Path | None) -> RunConfig:
    cfg = RunConfig()
    if path is None:
        return cfg
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError:
        raise UsageError(f"config file not found: {path}") from None
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None
    if not isinstance(doc, dict):
        raise UsageError(f"{path}: config must be a JSON object")
    unknown = set(doc) - _FIELDS
    if unknown:
        raise UsageError(f"{path}: unknown config keys {sorted(unknown)}")
    base = path.parent
    for name, allowed in _SECTIONS.items():
        section = doc.get(name, {})
        if not isinstance(section, dict) or set(section) - allowed:
            raise UsageError(f"{path}: bad '{name}' section (allowed keys {sorted(allowed)})")
        setattr(cfg, name, dict(section))
    if "hand_path" in doc:
        cfg.hand_path = _resolve_hand(doc["hand_path"], base)
    if "object_path" in doc:
        cfg.object_path = _resolve(doc["object_path"], base)
    if "output_dir" in doc:
        cfg.output_dir = _resolve(doc["output_dir"], base)
    if "object_sample_n" in doc:
        cfg.object_sample_n = int(doc["object_sample_n"])
    if "epsilon_bounds" in doc:
        cfg.epsilon_bounds = _epsilon(doc["epsilon_bounds"])
    if "seed" in doc:
        cfg.seed = None if doc["seed"] is None else int(doc["seed"])
    return cfg


def apply_flags(cfg: RunConfig, args) -> RunConfig:
    """Command-line flags override the config file."""
    cwd = Path.cwd()
    if args.hand is not None:
        cfg.hand_path = _resolve_hand(args.hand, cwd)
    if getattr(args, "object", None) is not None:
        cfg.object_path = _resolve(args.object, cwd)
    if args.epsilon is not None:
        cfg.epsilon_bounds = _epsilon(args.epsilon)
    if args.rounds is not None:
        cfg.game["max_rounds"] = args.rounds
    if args.seed is not None:
        cfg.seed = args.seed
    if args.points is not None:
        cfg.object_sample_n = args.points
    if args.out is not None:
        cfg.output_dir = _resolve(args.out, cwd)
    return cfg


def _require(path: Path | None, what: str) -> Path:
    if path is None:
        raise UsageError(f"no {what} given (use the config file or a flag)")
    if not Path(path).exists():
        raise UsageError(f"{what} not found: {path}")
    return Path(path)


def _load_hand(cfg: RunConfig):
    return load_hand_spec(_require(cfg.hand_path, "hand file"))


def _load_cloud(path: Path, n: int):
    return load_object_cloud(_require(path, "object file"), n)


# --------------------------------------------------------------------------
# output files


def write_grasp(path: Path, state: RobotState) -> None:
    lines = [
        "# final hand state: base translation (m), base rotation vector (rad), joints (rad)",
        "translation " + " ".join(f"{v:.17g}" for v in state.translation),
        "rotation_vector " + " ".join(f"{v:.17g}" for v in state.rotation_vector),
        "joints " + " ".join(f"{v:.17g}" for v in state.joints),
    ]
    path.write_text("\n".join(lines) + "\n")


def read_grasp(path: Path) -> RobotState:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read grasp file {path}: {exc}") from None
    parts = {}
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, *vals = line.split()
        try:
            parts[key] = np.array([float(v) for v in vals])
        except ValueError:
            raise UsageError(f"{path}: non-numeric value on line {line!r}") from None
    try:
        t, r, j = parts["translation"], parts["rotation_vector"], parts["joints"]
    except KeyError as exc:
        raise UsageError(f"{path}: missing '{exc.args[0]}' line") from None
    if len(t) != 3 or len(r) != 3:
        raise UsageError(f"{path}: translation and rotation_vector need 3 values each")
    return RobotState(t, r, j)


def write_outputs(out: Path, trace) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "trace.json").write_text(trace.to_json())
    write_grasp(out / "grasp.txt", trace.final_state)
    with open(out / "deltanorm.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["round", "delta_norm"])
        for r in trace.rounds:
            w.writerow([r.index, f"{r.delta_norm:.17g}"])


# --------------------------------------------------------------------------
# commands


def _solve(spec, cloud, cfg: RunConfig, warm=None):
    al1, al2 = cfg.al_configs()
    return run_game(spec, cloud, cfg.game_config(), al1, al2, warm=warm)


def _firm_code(trace) -> int:
    return EXIT_FIRM if trace.outcome == Outcome.FIRM else EXIT_NOT_FIRM


def cmd_solve(cfg: RunConfig) -> int:
    spec = _load_hand(cfg)
    cloud = _load_cloud(cfg.object_path, cfg.object_sample_n)
    log.info("solving %s with %s", cfg.object_path, cfg.hand_path)
    trace = _solve(spec, cloud, cfg)
    if trace.outcome == Outcome.ABORTED:
        print(f"solve aborted after {len(trace.rounds)} rounds: both players failed", file=sys.stderr)
        _write(cfg.output_dir, trace)
        return EXIT_ERROR
    _write(cfg.output_dir, trace)
    print(f"outcome {trace.outcome.value} after {len(trace.rounds)} rounds, |delta| {trace.delta_norms[-1]:.6g}")
    return _firm_code(trace)


def _write(out: Path, trace) -> None:
    try:
        write_outputs(out, trace)
    except OSError as exc:
        raise OutputError(f"cannot write results to {out}: {exc}") from None


class OutputError(Exception):
    pass


def cmd_verify(cfg: RunConfig, grasp_path: Path) -> int:
    state = read_grasp(grasp_path)
    spec = _load_hand(cfg)
    if len(state.joints) != spec.n_joints:
        raise UsageError(f"{grasp_path}: {len(state.joints)} joints, hand has {spec.n_joints}")
    cloud = _load_cloud(cfg.object_path, cfg.object_sample_n)
    eps = cfg.epsilon_bounds
    if eps is None:
        eps = GameConfig(**cfg.game).epsilon_bounds
    game_kw = {k: v for k, v in cfg.game.items() if k == "firm_tol"}
    firm_tol = GameConfig(**game_kw).firm_tol
    tol = ALConfig(**cfg.al2).constraint_tol
    x = state.as_vector()
    if np.any(x <= spec.lower) or np.any(x >= spec.upper):
        raise UsageError(f"{grasp_path}: state lies outside the hand limits")
    rest = phi(spec, cloud, unsquash_robot(spec, x), ObjectVariable.zero(np.ones(6))).values.min()
    print(f"smallest clearance at rest {rest:.17g}")
    if not np.any(eps > 0):
        print("warning: the escape box is empty, so no escape can exist", file=sys.stderr)
        print("verdict: no escape")
        return EXIT_FIRM
    esc = brute_force_escape(spec, cloud, state, eps=eps, tolerance=tol, min_norm=firm_tol, **cfg.oracle_kwargs())
    if esc is None:
        print("verdict: no escape")
        return EXIT_FIRM
    print(f"verdict: escape, |delta| {np.linalg.norm(esc):.6g}")
    print("escape twist " + " ".join(f"{v:.17g}" for v in esc))
    return EXIT_ESCAPE


def cmd_morph(cfg: RunConfig, sequence_dir: Path) -> int:
    sequence_dir = Path(sequence_dir)
    if not sequence_dir.is_dir():
        raise UsageError(f"cloud sequence directory not found: {sequence_dir}")
    files = sorted(p for p in sequence_dir.iterdir() if p.suffix.lower() in (".xyz", ".ply"))
    if not files:
        raise UsageError(f"{sequence_dir}: no .xyz or .ply files")
    spec = _load_hand(cfg)
    steps, warm, prev_joints, max_change = [], None, None, 0.0
    code = EXIT_FIRM
    for i, path in enumerate(files):
        cloud = _load_cloud(path, cfg.object_sample_n)
        trace = _solve(spec, cloud, cfg, warm=warm)
        _write(cfg.output_dir / f"step_{i:02d}", trace)
        joints = trace.final_state.joints
        change = 0.0 if prev_joints is None else float(np.max(np.abs(joints - prev_joints), initial=0.0))
        max_change = max(max_change, change)
        steps.append({
            "step": i,
            "cloud": path.name,
            "outcome": trace.outcome.value,
            "rounds": len(trace.rounds),
            "delta_norm": trace.delta_norms[-1],
            "max_joint_change": change,
        })
        print(f"step {i} {path.name}: {trace.outcome.value}, max joint change {change:.4f} rad")
        if trace.outcome != Outcome.FIRM:
            code = EXIT_NOT_FIRM
        if trace.outcome == Outcome.ABORTED:
            print(f"step {i} aborted, stopping the sequence", file=sys.stderr)
            break
        warm, prev_joints = trace.final_state, joints
    firm = sum(s["outcome"] == Outcome.FIRM.value for s in steps)
    summary = {
        "steps_total": len(files),
        "steps_attempted": len(steps),
        "firm_count": firm,
        "max_joint_change": max_change,
        "steps": steps,
    }
    (cfg.output_dir / "summary.json").write_text(dumps_exact(summary))
    print(f"firm {firm}/{len(files)}, max joint change {max_change:.4f} rad")
    return code


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON run configuration")
    common.add_argument("--hand", help="hand specification (path or bundled name)")
    common.add_argument("--epsilon", type=float, nargs="+", help="escape box: 1, 2 (trans, rot) or 6 values")
    common.add_argument("--rounds", type=int, help="maximum game rounds")
    common.add_argument("--seed", type=int, help="seed for the escape oracle's direction set")
    common.add_argument("--points", type=int, help="object points kept after sampling")
    common.add_argument("--out", help="output directory")

    p = argparse.ArgumentParser(prog="graspgame", description="Firm-grasp synthesis by a two-player game.")
    sub = p.add_subparsers(dest="command", required=True)
    s = sub.add_parser("solve", parents=[common], help="run the game on one object")
    s.add_argument("--object", help="object point cloud (.xyz or .ply)")
    v = sub.add_parser("verify", parents=[common], help="search for escapes from a stored grasp")
    v.add_argument("--object", help="object point cloud (.xyz or .ply)")
    v.add_argument("grasp", type=Path, help="grasp.txt written by solve")
    m = sub.add_parser("morph", parents=[common], help="solve a sequence of clouds with warm starts")
    m.add_argument("sequence", type=Path, help="directory of cloud files, solved in name order")
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get(LOG_ENV, "WARNING").upper(), format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    try:
        cfg = apply_flags(load_config(args.config), args)
        if args.command == "solve":
            return cmd_solve(cfg)
        if args.command == "verify":
            return cmd_verify(cfg, args.grasp)
        return cmd_morph(cfg, args.sequence)
    except (UsageError, OutputError, GraspGameError, ValueError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
