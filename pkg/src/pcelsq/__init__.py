"""Weighted least-squares polynomial chaos regression with coherence-aware sampling."""

__version__ = "0.1.0"

from .basis import (
    MultiIndexSet, PcBasis, QuadratureRule, envelope_B, eval_basis_row, eval_univariate,
    gauss_rule, gram_matrix, tensor_rule, total_order_indices, total_order_size,
)
from .coherence import (
    CoherenceReport, SampleSizePlan, estimate_coherence, failure_prob_bound, markov_tail_bound,
    mse_bound, mu_inf_theory_bound, required_samples, spectral_stability, stability_matrix,
)
from .errors import InfeasibleError, InputError, NumericalError, PceError, SizeError
from .regression import (
    DesignSystem, FitResult, NoiseModel, apply_noise, assemble, assemble_weighted,
    recovery_success, relative_error, solve, validation_rmse,
)
from .sampling import (
    McmcConfig, SampleBatch, SamplingStrategy, draw, sample_asymptotic, sample_ball,
    sample_coherence_optimal, sample_standard, weight_for, weight_normalization, weights_for,
)

__all__ = [name for name in dir() if not name.startswith("_")]
