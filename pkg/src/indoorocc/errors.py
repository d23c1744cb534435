"""Exception types shared across the toolkit."""


class DomainError(ValueError):
    """An argument lies outside the domain an operation is defined on."""


class InvalidPoseError(DomainError):
    """Camera pose has non-finite entries or a non-orthonormal rotation."""


class DegenerateViewError(DomainError):
    """Camera forward direction has no usable horizontal component."""


class InvalidPredictionError(DomainError):
    """A prediction grid contains a value outside the class range."""
