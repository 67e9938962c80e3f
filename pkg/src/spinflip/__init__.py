"""Spin-flip dynamics on finite tori: exact semigroups, Gibbs measures,
operator expansions, and concentration/entropy diagnostics."""

from .dynamics import (
    GlauberRates,
    IndependentRates,
    PerturbedRates,
    SemigroupEngine,
)
from .gibbs import Potential, gibbs_measure, product_measure, uniform_measure
from .lattice import (
    Observable,
    SpinConfiguration,
    Torus,
    discrete_gradient,
    flip,
    lipschitz_norm,
    lipschitz_vector,
    monomial_eval,
)
from .mc import ensemble_expectation, ensemble_exponential_moment, sample_path
from .symbolic import GeneratorSpec, analyticity_radius, truncated_series

__version__ = "0.1.0"

__all__ = [
    "GeneratorSpec",
    "GlauberRates",
    "IndependentRates",
    "Observable",
    "PerturbedRates",
    "Potential",
    "SemigroupEngine",
    "SpinConfiguration",
    "Torus",
    "analyticity_radius",
    "discrete_gradient",
    "ensemble_expectation",
    "ensemble_exponential_moment",
    "flip",
    "gibbs_measure",
    "lipschitz_norm",
    "lipschitz_vector",
    "monomial_eval",
    "product_measure",
    "sample_path",
    "truncated_series",
    "uniform_measure",
    "__version__",
]
