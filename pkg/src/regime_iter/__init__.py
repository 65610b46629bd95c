"""Restricted-switching iterates and hard bounds for regime-switching diffusions.

The value function of a diffusion whose coefficients switch with a
continuous-time Markov chain is approached by iterates that allow at most m
switches.  Each iterate needs only single-regime solves, so it can come from
a closed-form lognormal mixture (:mod:`gbm_semianalytic`), from finite
differences (:mod:`fd_solver`), or be checked against brute-force Monte Carlo
(:mod:`mc_oracle`).  :mod:`bounds` turns consecutive iterates into two-sided
bounds on the value function.
"""
from .errors import (ConfigError, InvalidProblem, NonFiniteValue, OutOfHull, RegimeIterError, SandwichUnavailable,
                     SingularSystem)
from .model import (CallPayoff, FunctionPayoff, GbmRegimeModel, GeneralCoefficients, GeneralModel, GeneratorMatrix,
                    HalfLine, Interval, ProblemSpec, validate_generator)

__version__ = "0.1.0"

__all__ = [
    "CallPayoff", "ConfigError", "FunctionPayoff", "GbmRegimeModel", "GeneralCoefficients", "GeneralModel",
    "GeneratorMatrix", "HalfLine", "Interval", "InvalidProblem", "NonFiniteValue", "OutOfHull", "ProblemSpec",
    "RegimeIterError", "SandwichUnavailable", "SingularSystem", "validate_generator",
]
