"""Exception types shared across the package."""


class PQCError(Exception):
    """Base class for all errors raised by pqclab."""


class SceneInfeasible(PQCError):
    pass


class InvalidState(PQCError):
    pass


class InfeasibleAction(PQCError):
    pass


class NoFeasibleAction(PQCError):
    pass


class FormatError(PQCError):
    """A file failed magic, version, fingerprint or schema checks."""


class ShapeMismatch(PQCError):
    pass


class UnknownLossKind(PQCError):
    pass


class PenaltyInvalid(PQCError):
    """The non-expert penalty is not below every expert target."""


class SceneUnsolved(PQCError):
    pass


class InfeasibleState(PQCError):
    pass


class EmptyBuffer(PQCError):
    pass
