"""Exception types shared across the package (and mapped to CLI exit codes)."""


class ShapeError(ValueError):
    """Operand shapes do not conform for a primitive."""

    def __init__(self, primitive: str, *shapes):
        self.primitive = primitive
        self.shapes = shapes
        detail = " vs ".join(str(tuple(s)) for s in shapes) if shapes else "no operands"
        super().__init__(f"{primitive}: incompatible shapes {detail}")


class ConfigError(ValueError):
    """Invalid or unknown configuration (CLI exit code 2)."""


class ArtifactError(RuntimeError):
    """Corrupt, mismatched or wrong-version artifact file (CLI exit code 2)."""


class MissingPrerequisiteError(RuntimeError):
    """A pipeline stage ran before its prerequisite stage (CLI exit code 3)."""

    def __init__(self, stage: str, message: str | None = None):
        self.stage = stage
        super().__init__(message or f"missing prerequisite stage: {stage}")


class NumericError(RuntimeError):
    """Non-finite values encountered during training (CLI exit code 4)."""
