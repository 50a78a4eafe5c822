"""Exception types raised across the package."""

from __future__ import annotations


class GraspGameError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(GraspGameError, ValueError):
    """Non-finite or otherwise malformed numeric input."""


class DimensionError(GraspGameError, ValueError):
    """Array shapes do not match the model they are evaluated against."""


class DomainError(GraspGameError, ValueError):
    """Input lies outside the domain where an operation is well defined."""


class DegenerateGeometryError(GraspGameError, ValueError):
    """Point set too small or too flat to define a principal frame."""


class SpecError(GraspGameError, ValueError):
    """Invalid hand specification document.

    ``code`` is one of ``schema``, ``cycle``, ``limit_order``,
    ``empty_fingertips``, ``empty_ellipsoid``, ``radius``, ``self_pair``.
    ``path`` names the offending field (e.g. ``links[2].threshold``).
    """

    def __init__(self, code: str, path: str, message: str):
        super().__init__(f"[{code}] {path}: {message}")
        self.code = code
        self.path = path


class CloudError(GraspGameError, ValueError):
    """Object cloud could not be loaded or sampled."""
