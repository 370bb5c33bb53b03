"""Exception types raised across the package."""


class HorizonError(Exception):
    """Base class for all library errors."""


class DSLSyntaxError(HorizonError):
    """Grammar violation in a function or set expression."""


class SemanticError(HorizonError):
    """Well-formed text that fails validation (lsc, bounded domain, dimension)."""


class NotDifferentiable(HorizonError):
    pass


class ProjectionFailed(HorizonError):
    pass


class NotInSet(HorizonError):
    pass


class UnboundedProjectionRequired(HorizonError):
    pass


class InconclusiveSampling(HorizonError):
    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace or []


class EmptyIntersection(HorizonError):
    pass


class UnsupportedClass(HorizonError):
    pass


class BothNonLipschitz(HorizonError):
    pass


class DomainBoundedError(HorizonError):
    pass


class QualificationFailed(HorizonError):
    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class CoercivityFailed(HorizonError):
    def __init__(self, message, direct=None, witness=None):
        super().__init__(message)
        self.direct = direct
        self.witness = witness


class NotLipschitzAtInfinity(HorizonError):
    pass


class EmptyOrBoundedConstraintSet(HorizonError):
    pass


class NotPiecewiseLinear(HorizonError):
    pass


class EmptyFeasibleRegion(HorizonError):
    pass


class AssumptionViolated(HorizonError):
    def __init__(self, assumption, message, witness=None):
        super().__init__(f"{assumption}: {message}")
        self.assumption = assumption
        self.witness = witness


class NoMultipliersFound(HorizonError):
    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class ConditionNotRefuted(HorizonError):
    pass


class NotBoundedBelow(HorizonError):
    pass


class DescentStalled(HorizonError):
    pass


class DimensionTooHigh(HorizonError):
    pass
