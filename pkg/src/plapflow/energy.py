"""Regularized weighted p-Dirichlet energy on edges, with its gradient and Hessian.

The discrete energy is a sum of two-point edge terms,

    J(u) = (1/p) * sum_e gamma_e * ((g_e**2 + eps**2)**(p/2) - eps**p) * vol_e,

with ``g_e`` the difference quotient on edge ``e``.  Every edge flux is a
monotone function of one difference, so the induced operator is order
preserving and contractive in every L^q norm at the discrete level.
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .geometry import gradient
from .weights import WeightField
from ._validation import check_exponent, check_field, check_positive

__all__ = [
    "EnergyParams",
    "SingularGradientError",
    "energy",
    "energy_gradient",
    "energy_gradient_euclidean",
    "energy_hessian_apply",
    "hessian_matrix",
    "edge_flux",
]


class SingularGradientError(ArithmeticError):
    """Unregularized p < 2 flux evaluated where a difference quotient vanishes."""


@dataclass(frozen=True)
class EnergyParams:
    p: float
    eps: float
    weight: WeightField

    def __post_init__(self):
        object.__setattr__(self, "p", check_exponent(self.p))
        object.__setattr__(self, "eps", check_positive(self.eps, "eps", allow_zero=True))

    @property
    def mesh(self):
        return self.weight.mesh

    def with_eps(self, eps):
        return EnergyParams(self.p, eps, self.weight)


def _density(g, p, eps):
    if eps == 0:
        return np.abs(g) ** p / p
    # (g^2 + eps^2)^(p/2) - eps^p without cancellation for small g
    r = g / eps
    return eps**p * np.expm1(0.5 * p * np.log1p(r * r)) / p


def energy(u, params):
    """Value of the regularized energy; zero on constant fields."""
    mesh = params.mesh
    g = gradient(mesh, u)
    return float(np.dot(params.weight.edge_values * _density(g, params.p, params.eps), mesh.edge_volume))


def edge_flux(g, params):
    """``gamma_e * (g**2 + eps**2)**((p-2)/2) * g`` for edge quotients ``g``."""
    p, eps = params.p, params.eps
    s = g * g + eps * eps
    if eps == 0 and p < 2:
        if np.any(s == 0):
            raise SingularGradientError("eps = 0 with p < 2 and a vanishing edge gradient")
        coef = s ** ((p - 2) / 2)
    elif eps == 0:
        coef = np.abs(g) ** (p - 2)
    else:
        coef = s ** ((p - 2) / 2)
    return params.weight.edge_values * coef * g


def energy_gradient_euclidean(u, params):
    """Partial derivatives of :func:`energy` with respect to the nodal values."""
    mesh = params.mesh
    g = gradient(mesh, u)
    return mesh.apply_transpose(edge_flux(g, params) * mesh.edge_volume)


def energy_gradient(u, params):
    """Nodal Riesz representative of the first variation (the discrete operator A_eps u).

    ``sum(energy_gradient(u) * v * node_volume)`` equals the directional
    derivative of :func:`energy` at ``u`` along ``v``.
    """
    return energy_gradient_euclidean(u, params) / params.mesh.node_volume


def _curvature(g, params):
    p, eps = params.p, params.eps
    if eps == 0:
        if p < 2:
            raise SingularGradientError("Hessian needs eps > 0 or p > 2")
        return (p - 1) * np.abs(g) ** (p - 2)
    s = g * g + eps * eps
    return s ** ((p - 4) / 2) * ((p - 1) * g * g + eps * eps)


def hessian_matrix(u, params):
    """Sparse symmetric matrix of second partial derivatives (Euclidean coordinates)."""
    mesh = params.mesh
    g = gradient(mesh, u)
    c = params.weight.edge_values * _curvature(g, params) * mesh.edge_volume
    D = mesh.difference_matrix
    return (D.T @ sp.diags(c) @ D).tocsr()


def energy_hessian_apply(u, v, params):
    """Second variation at ``u`` applied to ``v``, as a nodal field.

    Self-adjoint under the node-volume inner product and zero on constants.
    """
    mesh = params.mesh
    v = check_field(mesh, v, "v")
    g = gradient(mesh, u)
    c = params.weight.edge_values * _curvature(g, params) * mesh.edge_volume
    return mesh.apply_transpose(c * gradient(mesh, v)) / mesh.node_volume
