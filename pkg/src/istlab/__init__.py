"""istlab: simulator and certificate toolkit for independent subnetwork
training on distributed quadratic problems."""

__version__ = "0.1.0"

from . import certificates, errors, estimators, linalg, quadratics, runner, sketches
from .certificates import (
    BoundCurve,
    ConvergenceCertificate,
    certificate,
    descent_matrix,
    estimator_bias,
    expected_iterate,
    fixed_point,
    function_gap_bound,
    interpolation_rates,
    minimize_psi,
    neighborhood_psi,
    stationarity_bound,
    step_constant,
)
from .estimators import EstimatorKind, estimate, expected_estimate, heterogeneity_variance
from .quadratics import (
    QuadraticProblem,
    gen_heterogeneous,
    gen_homogeneous,
    precondition_homogeneous,
)
from .runner import RunConfig, StepSchedule, Trace, run, sweep
from .sketches import (
    SketchKind,
    SketchMoments,
    SketchSample,
    closed_moments,
    enumerate_outcomes,
    enumerated_moments,
    monte_carlo_moments,
    sample,
)

__all__ = [
    "BoundCurve",
    "ConvergenceCertificate",
    "EstimatorKind",
    "QuadraticProblem",
    "RunConfig",
    "SketchKind",
    "SketchMoments",
    "SketchSample",
    "StepSchedule",
    "Trace",
    "certificate",
    "certificates",
    "closed_moments",
    "descent_matrix",
    "enumerate_outcomes",
    "enumerated_moments",
    "errors",
    "estimate",
    "estimator_bias",
    "estimators",
    "expected_estimate",
    "expected_iterate",
    "fixed_point",
    "function_gap_bound",
    "gen_heterogeneous",
    "gen_homogeneous",
    "heterogeneity_variance",
    "interpolation_rates",
    "linalg",
    "minimize_psi",
    "monte_carlo_moments",
    "neighborhood_psi",
    "precondition_homogeneous",
    "quadratics",
    "run",
    "runner",
    "sample",
    "sketches",
    "stationarity_bound",
    "step_constant",
    "sweep",
]
