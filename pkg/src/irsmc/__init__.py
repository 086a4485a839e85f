"""Independent-resampling sequential Monte Carlo.

Static IS/SIR/I-SIR/I-SIR-w estimators, classical and independent
resampling particle filters, auxiliary particle filters, benchmark models
and a budget-matched benchmark harness.
"""

from .sampling import (
    AllWeightsDegenerate,
    categorical_draw,
    effective_sample_size,
    multinomial_resample,
    normalize_log_weights,
    rng_stream,
)

__version__ = "0.1.0"

__all__ = [
    "AllWeightsDegenerate",
    "categorical_draw",
    "effective_sample_size",
    "multinomial_resample",
    "normalize_log_weights",
    "rng_stream",
]
