"""Observability laboratory for non-autonomous parabolic and Ornstein-Uhlenbeck evolutions.

Polynomial symbols with piecewise-constant time dependence are propagated
exactly as Fourier multipliers on a periodic grid; sensor sets are boolean
masks per time piece.  The library estimates the spectral-inequality and
dissipation constants, assembles the explicit observability constant and
compares it with measured ratios.
"""

from .errors import (AliasingError, ChainTruncatedError, ConfigError, DomainError, EllipticityError,
                     HypothesisViolation, IntegrationError, ObslabError, UsageError)
from .evolution import (ExponentialBound, GaussianBoundReport, cocycle_residual, fit_exponential_bound,
                        generator_consistency, kernel, operator_norm_bound, operator_norm_p, propagate,
                        propagation_multiplier, verify_gaussian_bound)
from .observability import (CobsResult, DissipationFit, HypothesisConstants, LebesgueChain,
                            ObservabilityReport, UncertaintyFit, assemble_constants, cobs_chain,
                            cobs_explicit, empirical_ratio, estimate_dissipation, estimate_uncertainty,
                            falsify_mean_thickness, interpolation_combine, lebesgue_chain,
                            observability_candidates)
from .ou import (MatrixTrack, OUSystem, gram_matrix, kalman_generalized, liouville_check, norm_bound_check,
                 ou_propagate, quad_form, sheared_spectrum, solve_transition)
from .report import RunRecord, emit_plot_data, read_report, write_report
from .spectral import (Field, GridSpec, Spectrum, forward_transform, inverse_transform, lp_norm,
                       project_sharp, project_smooth)
from .symbol import (CoefficientTrack, NonAutonomousSymbol, check_uniform_ellipticity,
                     garding_lower_bound)
from .thickness import SetFamily, is_mean_thick, is_uniformly_thick, thickness_profile

__version__ = "0.1.0"
