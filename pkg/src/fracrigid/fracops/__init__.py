"""Kernel layer: lattice quadrature of the fractional Laplacian and its energies."""
from .assembly import FlowMap, IdentityMap, mapped_matrix, restricted_matrix
from .grid import GridFunction, Lattice
from .kernel import FracOrder, gamma_factor, normalization_constant
from .operators import (apply_fractional_laplacian, bilinear_form, gagliardo_seminorm,
                        regularized_energy, riesz_pairing, seminorm_squared)

__all__ = [
    "FlowMap", "FracOrder", "GridFunction", "IdentityMap", "Lattice",
    "apply_fractional_laplacian", "bilinear_form", "gagliardo_seminorm", "gamma_factor",
    "mapped_matrix", "normalization_constant", "regularized_energy", "restricted_matrix",
    "riesz_pairing", "seminorm_squared",
]
