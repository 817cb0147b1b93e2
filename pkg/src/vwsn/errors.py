"""Exception taxonomy for the whole stack.

Every error carries a stable machine ``code``. The REST layer maps codes to
HTTP statuses through a single table (see :mod:`vwsn.api`); node-side wire
errors reuse the short codes that travel in protocol frames.
"""


class VwsnError(Exception):
    """Base class; ``code`` is the wire-stable identifier."""

    code = "INTERNAL"

    def __init__(self, message: str = ""):
        super().__init__(message or self.code)
        self.message = message or self.code


# --- core model ---------------------------------------------------------

class IllegalTransition(VwsnError):
    code = "ILLEGAL_TRANSITION"


class AlreadyBound(VwsnError):
    code = "ALREADY_BOUND"


class NotBound(VwsnError):
    code = "NOT_BOUND"


class IncompatibleUnits(VwsnError):
    code = "INCOMPATIBLE_UNITS"


# --- simulated infrastructure (node-side short codes) --------------------

class InvalidConfig(VwsnError):
    code = "INVALID_CONFIG"


class DuplicateNodeId(VwsnError):
    code = "DUPLICATE_NODE_ID"


class CapacityError(VwsnError):
    code = "CAPACITY"


class EnergyDepleted(VwsnError):
    code = "ENERGY"


class BadFrame(VwsnError):
    code = "BADFRAME"


class QueueFull(VwsnError):
    code = "QUEUEFULL"


class UnsupportedOp(VwsnError):
    code = "UNSUPPORTED"


class NoSlot(VwsnError):
    code = "NOSLOT"


# --- registry ------------------------------------------------------------

class UnknownNode(VwsnError):
    code = "UNKNOWN_NODE"


class InvalidQuery(VwsnError):
    code = "INVALID_QUERY"


class IoFailure(VwsnError):
    code = "IO_FAILURE"


class CorruptSnapshot(VwsnError):
    code = "CORRUPT_SNAPSHOT"


# --- manager -------------------------------------------------------------

class NodeCapacity(VwsnError):
    code = "NODE_CAPACITY"


class NodeEnergy(VwsnError):
    code = "NODE_ENERGY"


class NodeUnreachable(VwsnError):
    code = "NODE_UNREACHABLE"


class ProtocolError(VwsnError):
    code = "PROTOCOL_ERROR"


class UnsupportedPlatform(VwsnError):
    code = "UNSUPPORTED_PLATFORM"


class TargetCapacity(VwsnError):
    code = "TARGET_CAPACITY"


class TargetEnergy(VwsnError):
    code = "TARGET_ENERGY"


class UnknownVs(VwsnError):
    code = "UNKNOWN_VS"


# --- provisioning ----------------------------------------------------------

class NoCandidateNode(VwsnError):
    code = "NO_CANDIDATE_NODE"


class InvalidParams(VwsnError):
    code = "INVALID_PARAMS"


class UnsupportedCapability(VwsnError):
    code = "UNSUPPORTED_CAPABILITY"


class IntervalOutOfRange(VwsnError):
    code = "INTERVAL_OUT_OF_RANGE"


class UnitUnsupported(VwsnError):
    code = "UNIT_UNSUPPORTED"


class PastDue(VwsnError):
    code = "PAST_DUE"


class UnknownSchedule(VwsnError):
    code = "UNKNOWN_SCHEDULE"


class AlreadyFired(VwsnError):
    code = "ALREADY_FIRED"


# --- bench harness ---------------------------------------------------------

class ServiceUnreachable(VwsnError):
    code = "SERVICE_UNREACHABLE"


class InsufficientIterations(VwsnError):
    code = "INSUFFICIENT_ITERATIONS"


class InsufficientData(VwsnError):
    code = "INSUFFICIENT_DATA"


class ScenarioFailure(VwsnError):
    code = "SCENARIO_FAILURE"
