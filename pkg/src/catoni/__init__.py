"""Catoni-type robust estimation for heavy-tailed data.

Public surface: influence functions (influence), distribution functions
(specialfn), the location solvers (mean), robust regression (regression),
noise models and population oracles (dist), and the deterministic Monte
Carlo harness (harness).
"""

__version__ = "0.1.0"

from .errors import (CatoniError, ConfigError, DegenerateSampleError,
                     DomainError, HarnessAbortError, NonConvergenceError,
                     SingularGramError)
from .influence import (EnvelopeReport, InfluenceSpec, custom_influence,
                        custom_influence_from_table, influence_by_name,
                        lemma1_gap_bound, narrow_influence, phi_derivative,
                        phi_eval, validate_envelope, wide_influence)
from .mean import (ConfidenceInterval, MeanConfig, MeanEstimate, bias_bound,
                   build_ci, catoni_g, solve_mean, solve_self_normalized)
from .regression import (FeasibilityReport, GramStats, RegressionConfig,
                         RegressionFit, RegressionProblem, StandardizedStat,
                         default_alpha, delta_n_from_scalar, feasibility,
                         gram_stats, h_value, solve_regression, standardize)
from .dist import (ModelMoments, NoiseModel, RngStream, abs_central_moment,
                   beta_terms, centered_gamma, centered_lognormal,
                   centered_pareto, d_k, draw, gamma_n, gaussian, moments,
                   parse_model, phi_mean_and_var, solve_u_n, student_t,
                   two_point, u_stat_lower_tail_bound,
                   variance_quarter_tail_bound)
from .harness import (ExperimentConfig, ReportTable, config_from_dict,
                      run_be_mean, run_be_self, run_coverage, run_experiment,
                      run_md, run_regression_bound, run_regression_mdbe,
                      run_tail_bounds)
from .specialfn import (chi2_cdf, ecdf_sup_distance, std_normal_cdf,
                        std_normal_pdf, std_normal_quantile)
