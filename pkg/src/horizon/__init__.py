"""Subdifferentials, normal cones and optimality conditions at infinity.

The library samples points escaping to infinity, tracks the directions and
subgradients that persist across growing radii, and turns the results into
finitely represented sets (points, rays and anchored rays) with three-valued
certificates.
"""
from .certificate import Certificate, Verdict
from .errors import HorizonError
from .expr import FunctionSpec, parse_function
from .limitset import LimitSet, SamplingPlan, truncated_hausdorff
from .sets import SetSpec, parse_set

__version__ = "0.1.0"

__all__ = [
    "Certificate", "FunctionSpec", "HorizonError", "LimitSet", "SamplingPlan", "SetSpec", "Verdict",
    "parse_function", "parse_set", "truncated_hausdorff", "__version__",
]
