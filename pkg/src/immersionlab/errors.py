class ImmersionLabError(Exception):
    """Base class for every error raised by this package."""


class IntegrationDiverged(ImmersionLabError):
    def __init__(self, last_time: float, message: str = ""):
        self.last_time = float(last_time)
        super().__init__(message or f"non-finite state after t={self.last_time:g}")


class UnsupportedOperation(ImmersionLabError):
    pass


class DomainViolation(ImmersionLabError):
    def __init__(self, point, message: str = ""):
        self.point = point
        super().__init__(message or f"map undefined at point {point!r}")


class DegenerateData(ImmersionLabError):
    def __init__(self, rank: int, required: int):
        self.rank = rank
        self.required = required
        super().__init__(f"data matrix numerical rank {rank} < {required} basis functions")


class EmptyDomain(ImmersionLabError):
    pass


class ResamplingExhausted(ImmersionLabError):
    pass


class ConfigError(ImmersionLabError):
    pass
