"""Measurement-error correction for clustered exposure patterns.

Three-stage approach (3-SA): estimate usual exposures, classify
individuals with a frozen clustering function, fit a health model on
the dummy-coded cluster memberships. Four pipelines are provided
(naive, regression calibration, SIMEX, multiple imputation) together
with a seedable simulation engine.
"""

from .boxcox import UntransformableValue, inverse, transform
from .cluster import ClusterModel, classify, fit_gmm, fit_kmeans
from .correction import (
    CorrectionResult,
    SimexConfig,
    mi_3sa,
    naive_3sa,
    rc_3sa,
    simex_3sa,
    solve_corrective_mu,
)
from .errors import (
    ConvergenceError,
    DegenerateModelError,
    DegenerateVarianceError,
    FailedClassification,
    MethodFailure,
    SeparationError,
    SingularDesignError,
)
from .health_model import ContrastSet, HealthFit, expand_contrasts, fit_linear, fit_logistic
from .measures import adjusted_rand_index, bias_summary, misclassification_rate
from .mixed_model import ErrorModelFit, ExposurePanel, blup_transformed, fit_component, fit_error_model
from .nci import estimate_usual

__version__ = "0.1.0"
