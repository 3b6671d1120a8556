"""Exception hierarchy shared by all modules.

Every error carries the module it came from and, when known, the pipeline
stage, so the CLI can report ``[module/stage] message`` and pick an exit code.
"""

from __future__ import annotations


class KZError(Exception):
    """Base class. ``exit_code`` is what the CLI returns for this error."""

    exit_code = 1
    module = "kzsurface"

    def __init__(self, message: str, *, stage: str | None = None, **details):
        super().__init__(message)
        self.stage = stage
        self.details = details

    def tag(self) -> str:
        return f"{self.module}/{self.stage}" if self.stage else self.module


class ModelError(KZError):
    """Invalid surface model (branch points, cut plan, torus modulus)."""

    exit_code = 2
    module = "surface_model"


class UnsupportedModelError(KZError):
    exit_code = 3
    module = "surface_model"


class ConstructionError(KZError):
    module = "surface_model"


class ValidationError(KZError):
    """A mesh invariant failed; ``details['invariant']`` names it."""

    module = "surface_model"


class MeshResolutionError(KZError):
    module = "surface_model"


class QuadratureError(KZError):
    module = "surface_model"


class SolverError(KZError):
    module = "green_solver"


class MeshMismatchError(KZError):
    exit_code = 2
    module = "green_solver"


class OracleSizeError(KZError):
    exit_code = 2
    module = "green_solver"


class ConsistencyError(KZError):
    module = "tensor_engine"


class DiagramParseError(KZError):
    exit_code = 2
    module = "tensor_engine"

    def __init__(self, message: str, position: int | None = None, text: str | None = None):
        if position is not None and text is not None:
            pointer = text + "\n" + " " * position + "^"
            message = f"{message} at column {position}\n{pointer}"
        super().__init__(message, stage="parse")
        self.position = position


class DiagramCostError(KZError):
    module = "tensor_engine"

    def __init__(self, message: str, estimate: float):
        super().__init__(message, stage="eval", estimate=estimate)
        self.estimate = estimate


class UnsupportedGenusError(KZError):
    exit_code = 3
    module = "johnson_e1"


class ConfigError(KZError):
    exit_code = 2
    module = "cli_app"
