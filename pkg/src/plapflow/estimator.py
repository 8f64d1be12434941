"""Scikit-learn style wrapper: ``transform`` applies the flow ``T(t)`` to flattened nodal fields."""

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from . import flow
from .energy import EnergyParams
from .geometry import build_grid
from .weights import constant_weight


class PLaplacianFlow(TransformerMixin, BaseEstimator):
    """Smooth each row of ``X`` (a field on an ``nx`` by ``ny`` grid) by the p-Laplacian flow up to time ``t``.

    ``fit`` only builds the grid and weight; it learns nothing from the data
    beyond checking that the row length matches ``nx * ny``.
    """

    def __init__(self, p=3.0, t=0.1, nx=17, ny=17, lx=1.0, ly=1.0, h=1e-2, eps=0.0, adaptive_eps=None, weight=None):
        self.p = p
        self.t = t
        self.nx = nx
        self.ny = ny
        self.lx = lx
        self.ly = ly
        self.h = h
        self.eps = eps
        self.adaptive_eps = adaptive_eps
        self.weight = weight

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        self.grid_ = build_grid(self.nx, self.ny, lx=self.lx, ly=self.ly)
        if X.shape[1] != self.grid_.n_nodes:
            raise ValueError(f"rows must hold {self.grid_.n_nodes} nodal values, got {X.shape[1]}")
        weight = self.weight(self.grid_) if callable(self.weight) else constant_weight(self.grid_)
        self.params_ = EnergyParams(self.p, self.eps, weight)
        adaptive = self.p < 2 and self.eps == 0 if self.adaptive_eps is None else self.adaptive_eps
        policy = flow.AdaptiveEps() if adaptive else flow.FixedEps(self.eps)
        self.step_ = flow.StepParams(self.h, eps_policy=policy)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "params_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        times = flow.TimeGrid.explicit([self.t])
        return np.vstack([flow.evolve(row, times, self.step_, self.params_, keep_states=False).final for row in X])
