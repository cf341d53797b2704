"""Hybrid variational message-passing estimator.

``messages`` holds the Gaussian / von Mises message computations around the
state variables, ``vmp`` the inner line-spectrum loop over the beamspace
observation model, and ``engine`` the per-slot orchestration.
"""

from .engine import EstimatorModel, HvmpConfig, SlotEstimates, SlotPriors, run_slot  # noqa: F401
from .messages import (  # noqa: F401
    DopplerEvidence, doppler_prediction_message, f1_gradient, f1_hessian, f1_value,
    forward_predict, per_link_position_message, position_fusion, velocity_fusion,
)
