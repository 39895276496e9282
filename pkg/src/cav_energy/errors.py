"""Exception types raised across the package.

Every error derives from :class:`ModelError` so callers (the CLI in
particular) can map the whole family onto one exit code.
"""


class ModelError(Exception):
    """Base class for all model errors."""


class InvalidInput(ModelError, ValueError):
    """Input rejected by a precondition check."""


# corridor
class OverlappingZones(InvalidInput):
    pass


class ZoneOutOfBounds(InvalidInput):
    pass


class BadLimits(InvalidInput):
    pass


class PositionOutOfRange(InvalidInput):
    pass


class NegativeSpeed(InvalidInput):
    pass


# vehicle dynamics controller
class OutOfOrderArrival(InvalidInput):
    pass


class PredecessorUnassigned(ModelError):
    pass


class ZeroPredecessorSpeed(ModelError):
    pass


class SingularSystem(ModelError):
    pass


class Infeasible(ModelError):
    pass


class NoConvergence(ModelError):
    pass


class TimeOutOfRange(InvalidInput):
    pass


class DisjointTimeSpans(InvalidInput):
    pass


# baseline driver
class LeaderBehindFollower(InvalidInput):
    pass


# powertrain
class NoFeasibleGear(ModelError):
    pass


class OutsideEnvelope(InvalidInput):
    pass


class PowerLimitExceeded(InvalidInput):
    pass


class ZeroConsumption(ModelError):
    pass


class BadSpec(InvalidInput):
    pass


class DemandExceedsCapability(ModelError):
    pass


# pareto controller
class EmptyFeasibleSet(ModelError):
    pass


class OutOfRange(InvalidInput):
    pass


class InfeasibleCell(ModelError):
    pass


class FingerprintMismatch(InvalidInput):
    pass


# simulation
class ParetoTableMissing(ModelError):
    pass


class InfeasibleAssignment(ModelError):
    pass


class TrackingDiverged(ModelError):
    pass


class EmptyRecords(InvalidInput):
    pass
