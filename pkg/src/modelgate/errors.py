"""Exception hierarchy shared across the stack."""


class ModelGateError(Exception):
    """Base class for all modelgate errors."""

    code = "ModelGateError"

    def __init__(self, message: str = ""):
        super().__init__(message or self.code)
        self.message = message or self.code


# --- policy / gateway ---------------------------------------------------

class UnknownDeployment(ModelGateError):
    code = "UnknownDeployment"


class MalformedContext(ModelGateError):
    code = "MalformedContext"


class UnauthorizedActor(ModelGateError):
    code = "UnauthorizedActor"


class InvalidParams(ModelGateError):
    code = "InvalidParams"


class TerminalState(ModelGateError):
    code = "TerminalState"


class NotFound(ModelGateError):
    code = "NotFound"


class AlreadyRevoked(ModelGateError):
    code = "AlreadyRevoked"


class UnknownSession(ModelGateError):
    code = "UnknownSession"


class BackendUnavailable(ModelGateError):
    code = "BackendUnavailable"


# --- monitor ------------------------------------------------------------

class MalformedEvent(ModelGateError):
    code = "MalformedEvent"


class AlreadyTriaged(ModelGateError):
    code = "AlreadyTriaged"


class UnknownAlert(ModelGateError):
    code = "UnknownAlert"


# --- incidents ----------------------------------------------------------

class UnknownSource(ModelGateError):
    code = "UnknownSource"


class UnknownIncident(ModelGateError):
    code = "UnknownIncident"


class InvalidChainStep(ModelGateError):
    code = "InvalidChainStep"


class IllegalState(ModelGateError):
    code = "IllegalState"


class ReviewMissing(ModelGateError):
    code = "ReviewMissing"


class ReviewNotApproved(ModelGateError):
    code = "ReviewNotApproved"


class InsufficientApprovers(ModelGateError):
    code = "InsufficientApprovers"


class ParseError(ModelGateError):
    code = "ParseError"


class DanglingReference(ModelGateError):
    code = "DanglingReference"


class GradeGateViolation(ModelGateError):
    code = "GradeGateViolation"


# --- comms --------------------------------------------------------------

class NoPlan(ModelGateError):
    code = "NoPlan"


class NoSLAConfigured(ModelGateError):
    code = "NoSLAConfigured"


class WebhookUnreachable(ModelGateError):
    code = "WebhookUnreachable"


# --- audit --------------------------------------------------------------

class StorageFailure(ModelGateError):
    code = "StorageFailure"


class ChainBroken(ModelGateError):
    code = "ChainBroken"

    def __init__(self, seq: int, message: str = ""):
        super().__init__(message or f"audit chain broken at seq={seq}")
        self.seq = seq


# --- scenarios ----------------------------------------------------------

class ScenarioInvalid(ModelGateError):
    code = "ScenarioInvalid"


class StackInitFailure(ModelGateError):
    code = "StackInitFailure"
