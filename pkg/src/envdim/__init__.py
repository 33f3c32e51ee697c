"""Moment-based envelope estimation and envelope dimension selection."""

from .core import (
    EnvelopeBasis,
    EnvelopeFit,
    MomentPair,
    deflate,
    envelope_fit_from_basis,
    objective_1d_gradient,
    objective_1d_step,
    objective_fg,
    quasi_loglik,
    subspace_distance,
)
from .exceptions import (
    ConvergenceError,
    EnvelopeError,
    NumericalError,
    SeparationError,
    SingularMatrixError,
)
from .manifold import OptimizerSettings, solve_grassmann, solve_sphere
from .selection import (
    OneDPath,
    SelectionConfig,
    SelectionResult,
    criterion_1d,
    criterion_fg,
    run_1d_algorithm,
    select_dimension,
)
from .moments import (
    RegressionData,
    StandardFit,
    cox_envelope_moments,
    cox_partial_loglik,
    glm_envelope_moments,
    logistic_loglik,
    partial_envelope_moments,
    predictor_envelope_moments,
    response_envelope_moments,
    standard_cox_fit,
    standard_linear_fit,
    standard_logistic_fit,
)
from .simulate import (
    McReport,
    McRow,
    gen_generic,
    gen_regression,
    make_rng,
    regression_spec,
    run_table,
    scenario_spec,
)

__version__ = "0.1.0"
