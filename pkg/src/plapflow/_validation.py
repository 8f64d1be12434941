"""Input validation helpers shared by the public modules."""

import math
import numbers

import numpy as np


class ExcludedParameterError(ValueError):
    """Raised for parameter values the model deliberately does not cover (p = 2)."""


def check_exponent(p, name="p"):
    """Validate a p-Laplacian exponent: p > 1 and p != 2."""
    if not isinstance(p, numbers.Real) or not math.isfinite(p):
        raise ValueError(f"{name} must be a finite real number, got {p!r}")
    p = float(p)
    if p <= 1.0:
        raise ValueError(f"{name} must exceed 1, got {p}")
    if p == 2.0:
        raise ExcludedParameterError(f"excluded parameter: {name} = 2 (linear case is not covered)")
    return p


def check_positive(value, name, allow_zero=False):
    if not isinstance(value, numbers.Real) or not math.isfinite(value):
        raise ValueError(f"{name} must be a finite real number, got {value!r}")
    if value < 0 or (value == 0 and not allow_zero):
        bound = ">= 0" if allow_zero else "> 0"
        raise ValueError(f"{name} must be {bound}, got {value}")
    return float(value)


def check_field(mesh, u, name="u"):
    """Return ``u`` as a float array with one finite value per mesh node."""
    u = np.asarray(u, dtype=float)
    if u.ndim != 1 or u.shape[0] != mesh.n_nodes:
        raise ValueError(f"{name} must have shape ({mesh.n_nodes},), got {u.shape}")
    if not np.all(np.isfinite(u)):
        raise ValueError(f"{name} contains non-finite values")
    return u


def check_edge_field(mesh, f, name="flux"):
    f = np.asarray(f, dtype=float)
    if f.ndim != 1 or f.shape[0] != mesh.n_edges:
        raise ValueError(f"{name} must have shape ({mesh.n_edges},), got {f.shape}")
    if not np.all(np.isfinite(f)):
        raise ValueError(f"{name} contains non-finite values")
    return f
