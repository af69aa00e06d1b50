"""Coxian phase-type models of hospital length of stay coupled to charge growth.

The main entry points are :func:`construct_rho` (build a charge/LOS model
from Coxian parameters), :func:`two_stage_fit`, :func:`simulate_cohort` and
:func:`price_table`.
"""

__version__ = "0.1.0"

from .converter import FittedModel, construct_rho, joint_pdf, marginal_los_pdf  # noqa: E402
from .estimation import stage1_fit, stage2_fit, two_stage_fit  # noqa: E402
from .phase_type import CphParams, cph_cdf, cph_pdf, phase_occupancy  # noqa: E402
from .pricing import price, price_table  # noqa: E402
from .rgrst import LognormalParams  # noqa: E402
from .simulation import simulate_cohort  # noqa: E402

__all__ = [
    "__version__", "CphParams", "LognormalParams", "FittedModel", "construct_rho",
    "joint_pdf", "marginal_los_pdf", "cph_pdf", "cph_cdf", "phase_occupancy",
    "stage1_fit", "stage2_fit", "two_stage_fit", "price", "price_table",
    "simulate_cohort",
]
