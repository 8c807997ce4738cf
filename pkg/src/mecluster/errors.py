"""Exception hierarchy shared across modules."""


class MethodFailure(Exception):
    """A correction method could not produce an estimate for a dataset.

    The simulation engine counts these per scenario instead of aborting.
    """


class FailedClassification(MethodFailure):
    """A cluster solution or classification left at least one cluster empty."""


class SeparationError(MethodFailure):
    """Complete or quasi-complete separation in a logistic fit."""


class SingularDesignError(MethodFailure):
    """Health-model design matrix is rank deficient."""


class DegenerateModelError(MethodFailure):
    """Mixture variance collapsed."""


class DegenerateVarianceError(ValueError):
    """Reports carry no variation, so variance components are unidentifiable."""


class ConvergenceError(RuntimeError):
    """Iteration cap reached. ``best`` carries the best-so-far result."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best
