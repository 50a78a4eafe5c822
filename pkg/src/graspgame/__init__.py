"""Firm-grasp synthesis for multi-finger hands as a two-player game.

A hand (Player 1) closes around an object point cloud while the object
(Player 2) looks for the largest rigid twist that escapes without collision.
A grasp is firm when no escape above a small threshold remains. An
independent sampling oracle checks the verdict.
"""

from __future__ import annotations

from .contact import grasp_objective, phi, phi_gradient, phi_min, phi_self
from .game import (
    Agreement,
    GameConfig,
    GameTrace,
    Outcome,
    brute_force_escape,
    classify_agreement,
    initialize_pose,
    run_game,
)
from .hand import HandSpec, RobotState, RobotVariable, forward_points, load_hand_spec, squash_robot, unsquash_robot
from .objects import ObjectCloud, ObjectVariable, load_object_cloud, squash_object, transform_object
from .se3 import RigidTransform, pca_object_frame, twist_exp, twist_log
from .solver import ALConfig, SolveReport, lm_quasi_newton_minimize, solve_al, solve_player1, solve_player2

__all__ = [
    "ALConfig",
    "Agreement",
    "GameConfig",
    "GameTrace",
    "HandSpec",
    "ObjectCloud",
    "ObjectVariable",
    "Outcome",
    "RigidTransform",
    "RobotState",
    "RobotVariable",
    "SolveReport",
    "brute_force_escape",
    "classify_agreement",
    "forward_points",
    "grasp_objective",
    "initialize_pose",
    "lm_quasi_newton_minimize",
    "load_hand_spec",
    "load_object_cloud",
    "pca_object_frame",
    "phi",
    "phi_gradient",
    "phi_min",
    "phi_self",
    "run_game",
    "solve_al",
    "solve_player1",
    "solve_player2",
    "squash_object",
    "squash_robot",
    "transform_object",
    "twist_exp",
    "twist_log",
    "unsquash_robot",
]
