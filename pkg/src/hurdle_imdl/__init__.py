"""Hurdle-lognormal retrieval with inversion-model debiasing (IMDL)."""
from .hurdle_dist import (HurdleParams, LognormalParams, MarginalPrior,
                          debias_transform, hurdle_expectation, hurdle_pdf,
                          log_product_integral, lognormal_pdf, sample_hurdle)
from .losses import WeightScheme, batch_nll, nll_grad, nll_terms, weighted_mse
from .verify import DEFAULT_THRESHOLDS, full_report

__version__ = "0.1.0"
