"""Local identifiability of sparse coding dictionaries.

Tools to evaluate the penalized sparse coding objective around a reference
dictionary, its sign-restricted closed form, explicit lower bounds on the
expected objective increase, and the conditions and constants under which a
local minimum is guaranteed near the reference.
"""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    BudgetExceededError,
    ConfigError,
    ConvergenceError,
    InfeasibleRadiusError,
    InvalidDictionaryError,
    InvalidParameterError,
    RankDeficiencyError,
)
from .dictionary import (  # noqa: E402
    cumulative_coherence,
    onb_pair,
    orthonormal,
    profile,
    rip_constants,
    spherical,
)
from .model import CoefficientModel, FixedProfile, SignedUniform, TruncatedGaussian, generate_batch  # noqa: E402
from .oblique import decompose, reconstruct, sample_sphere  # noqa: E402
from .lasso import check_sign_recovery, evaluate_batch, lasso_batch, objective_F, restricted_minimizer  # noqa: E402
from .phi import delta_phi_terms, expectation_traces, expected_delta_phi, uniform_lower_bound  # noqa: E402
from .theorems import asymptotic_report, finite_sample_n, outlier_thresholds, theorem_report  # noqa: E402
