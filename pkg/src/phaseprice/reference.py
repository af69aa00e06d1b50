"""Reference parameter sets used as generating fixtures."""

from __future__ import annotations

from .phase_type import CphParams
from .rgrst import LognormalParams

# Published four-phase estimates for a 5000-record inpatient sample. Rates
# were reported with negative signs and the first forward rate as ~0; the
# absolute values are used and that rate is clamped to a small positive value.
PUBLISHED_LAMBDA1 = 1e-6
PUBLISHED_CPH = CphParams(
    alpha=[0.99972043, 0.0000001, 0.0000001, 0.00027937],
    lam=[PUBLISHED_LAMBDA1, 6.45, 0.83],
    c=[2.09, 9.05, 0.91, 0.14],
)
PUBLISHED_LOGNORMAL = LognormalParams(mu=-0.5715, sigma=0.7149)

# every phase carries at least 10% of the initial mass
BALANCED_CPH = CphParams(
    alpha=[0.4, 0.3, 0.2, 0.1],
    lam=[1.5, 1.0, 0.6],
    c=[0.8, 0.5, 0.4, 0.3],
)
