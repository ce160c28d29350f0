"""Exception types shared across the package."""


class StructuralError(ValueError):
    """Malformed graph, sheaf, file or split structure."""


class ShapeError(ValueError):
    """Array shapes that do not agree with the owning structure."""


class DomainError(ValueError):
    """An argument lies outside the domain where the operation is defined."""


class NumericError(ArithmeticError):
    """A numerical operation could not be carried out."""


class CapacityError(RuntimeError):
    """A dense computation was requested above its size limit."""


class RepresentabilityError(ValueError):
    """Target operator cannot be realised by the requested parameterisation."""


class ConfigError(ValueError):
    """Invalid or unknown configuration."""


class DatasetError(ValueError):
    """Dataset files are missing or malformed."""
