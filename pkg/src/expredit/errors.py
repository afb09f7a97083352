"""Exception types shared across the package."""


class ExpreditError(Exception):
    """Base class for all package-specific failures."""


class ValidationError(ExpreditError):
    """Malformed or inconsistent input data: bad shapes, bad schemas,
    out-of-range indices, values that fail a documented precondition."""


class DegenerateInputError(ExpreditError):
    """An input whose direction is required has (near-)zero norm."""


class SingularAugmentationError(ExpreditError):
    """The target embedding is orthogonal to the prompt subspace in
    aggregate, so the augmentation rescaling is undefined."""


class ConfigError(ExpreditError):
    """Invalid run configuration: unknown keys, non-positive counts,
    missing required fields."""


class NumericAbortError(ExpreditError):
    """Training produced a non-finite loss term.

    Carries the step index and the name of the offending term so a run
    can report exactly where optimization went bad.
    """

    def __init__(self, step: int, term: str):
        self.step = step
        self.term = term
        super().__init__(f"non-finite value in {term} at step {step}")
