"""Exception hierarchy shared by every eeprobe module."""


class EEProbeError(Exception):
    """Base class for all eeprobe errors."""


class ConfigError(EEProbeError):
    """Invalid run configuration (maps to CLI exit code 2)."""


class BackendUnavailable(EEProbeError):
    pass


class PermissionDenied(BackendUnavailable):
    pass


class UnmodeledRegister(EEProbeError):
    pass


class RegisterUnavailable(EEProbeError):
    pass


class RangeViolation(EEProbeError, ValueError):
    pass


class UnsupportedFrequency(EEProbeError, ValueError):
    pass


class GovernorUnavailable(EEProbeError):
    pass


class EventUnavailable(EEProbeError):
    pass


class SourceUnavailable(EEProbeError):
    pass


class ParseError(EEProbeError, ValueError):
    pass


class InvalidCPU(EEProbeError, ValueError):
    pass


class CStateUnavailable(EEProbeError):
    pass


class EmptyInput(EEProbeError, ValueError):
    pass


class RankDeficient(EEProbeError, ValueError):
    pass


class TooFewSamples(EEProbeError, ValueError):
    pass


class VerificationFailure(EEProbeError):
    """Measured latencies do not match the expected frequency levels."""


class EmptyWindow(EmptyInput):
    pass


class AllocationFailure(EEProbeError, MemoryError):
    pass
