"""Error types shared across the stack.

Every service maps these onto HTTP status codes at its boundary; the
in-process cores raise them directly.
"""


class TwinlodError(Exception):
    """Base class for all stack errors."""


# --- context broker ---------------------------------------------------------

class AlreadyExists(TwinlodError):
    pass


class NotFound(TwinlodError):
    pass


class InvalidEntity(TwinlodError):
    pass


class InvalidQuery(TwinlodError):
    pass


class InvalidSubscription(TwinlodError):
    pass


# --- IoT gateway ------------------------------------------------------------

class DuplicateDevice(TwinlodError):
    pass


class InvalidRegistration(TwinlodError):
    pass


class UnknownDevice(TwinlodError):
    pass


class MalformedPayload(TwinlodError):
    pass


class UnmappedKey(TwinlodError):
    pass


class UnknownCommandEntity(TwinlodError):
    pass


class UnknownCommand(TwinlodError):
    pass


# --- dataflow engine --------------------------------------------------------

class MalformedNotification(TwinlodError):
    pass


class UnmappableRecord(TwinlodError):
    pass


class PortalUnavailable(TwinlodError):
    pass


class Unauthorized(TwinlodError):
    pass


class Forbidden(TwinlodError):
    pass


class NameConflict(TwinlodError):
    pass


class DatasetNotFound(TwinlodError):
    pass


class BrokerUnavailable(TwinlodError):
    pass


class InvalidGraph(TwinlodError):
    pass


class StorageFailure(TwinlodError):
    pass


# --- open-data portal -------------------------------------------------------

class Conflict(TwinlodError):
    pass


class InvalidName(TwinlodError):
    pass


class UnknownOrganization(TwinlodError):
    pass


class ResourceNotFound(TwinlodError):
    pass


class MetadataOnlyResource(TwinlodError):
    pass


# --- access control ---------------------------------------------------------

class InvalidCredentials(TwinlodError):
    pass


class UpstreamUnavailable(TwinlodError):
    pass


# --- twin scenario / CLI ----------------------------------------------------

class InvalidCandidate(TwinlodError):
    pass


class InvalidConfig(TwinlodError):
    pass


class ServiceUnavailable(TwinlodError):
    """Raised when a required stack service does not answer its health probe."""

    def __init__(self, service: str):
        super().__init__(service)
        self.service = service


class ConfigError(TwinlodError):
    pass


class PortInUse(TwinlodError):
    pass
