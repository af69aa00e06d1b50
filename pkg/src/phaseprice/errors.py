"""Exception hierarchy shared by all modules."""

from __future__ import annotations


class PhasePriceError(Exception):
    """Base class for library errors."""


class ValidationError(PhasePriceError, ValueError):
    """Invalid parameters or inputs."""


class DomainError(ValidationError):
    """Argument outside the domain of a function."""


class DegenerateBandError(ValidationError):
    """Initial probability vector leaves a band with zero or full mass."""


class NumericalError(PhasePriceError, ArithmeticError):
    """A numerical routine failed to meet its contract."""


class QuadratureError(NumericalError):
    def __init__(self, message: str, estimate: float, error: float):
        super().__init__(f"{message} (estimate={estimate!r}, error={error!r})")
        self.estimate = estimate
        self.error = error


class OdeError(NumericalError):
    def __init__(self, message: str, t: float, y: float):
        super().__init__(f"{message} (last valid t={t!r}, y={y!r})")
        self.t = t
        self.y = y


class CurveCrossingError(NumericalError):
    def __init__(self, band: int, t: float):
        super().__init__(
            f"partition curve {band} crossed the curve below it at t={t:.6g}; "
            "band mass exhausted"
        )
        self.band = band
        self.t = t


class ConstructionError(NumericalError):
    """Failure while building the piecewise survival function."""

    def __init__(self, message: str, band: int | None = None):
        prefix = f"band {band}: " if band is not None else ""
        super().__init__(prefix + message)
        self.band = band


class VacuousBandError(NumericalError):
    def __init__(self, band: int, t: float, occupancy: float):
        super().__init__(
            f"band {band} is essentially unoccupied at t={t:.6g} "
            f"(occupancy={occupancy:.3e})"
        )
        self.band = band
        self.t = t
        self.occupancy = occupancy


class HorizonError(ValidationError):
    def __init__(self, index: int, t: float, horizon: float):
        super().__init__(
            f"record {index} has LOS {t!r} beyond the model horizon {horizon!r}"
        )
        self.index = index
        self.t = t
        self.horizon = horizon


class EstimationError(NumericalError):
    def __init__(self, message: str, stage: int, best=None):
        super().__init__(f"stage {stage}: {message}")
        self.stage = stage
        self.best = best
