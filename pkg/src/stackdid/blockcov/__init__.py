"""Closed-form covariance machinery under block-exchangeable correlation."""

from .closed_form import (CohortCounts, PairCovariance, att_correlation,
                          att_covariance, att_variance, variance_terms)
from .oracles import (CohortDesign, cov_component_sum, cov_exact_oracle,
                      designs_from_counts, g1, g2, h_functions)
from .structure import (CorrelationStructure, StateParams, ValidationReport,
                        build_sigma, validate_structure)
from .timing import (WindowDurations, time_factor, time_factor_zeros,
                     window_durations)

__all__ = [
    "CohortCounts", "PairCovariance", "att_correlation", "att_covariance",
    "att_variance", "variance_terms", "CohortDesign", "cov_component_sum",
    "cov_exact_oracle", "designs_from_counts", "g1", "g2", "h_functions",
    "CorrelationStructure", "StateParams", "ValidationReport", "build_sigma",
    "validate_structure", "WindowDurations", "time_factor",
    "time_factor_zeros", "window_durations",
]
