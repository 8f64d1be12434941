"""Weight families, their integrability exponent, and the weight-dependent constants.

A :class:`WeightField` carries the analytic description of the weight
(family name and parameters) together with its samples on a mesh: at edge
midpoints (used by the fluxes) and at cell midpoints (used by integrals).
Integrability questions are answered from the analytic description, never
from the samples, because every discrete integral is finite.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from .geometry import Grid, Mesh
from ._validation import check_exponent, check_positive

__all__ = [
    "WeightField",
    "UnsupportedWeightError",
    "IntegralDivergenceError",
    "constant_weight",
    "power_weight",
    "checkerboard_weight",
    "table_weight",
    "p0",
    "weighted_p_integral",
    "gamma_power_integral",
    "midpoint_integral",
    "gamma_delta_p",
    "gamma_tilde",
    "extinction_window",
    "ap_characteristic",
]


class UnsupportedWeightError(ValueError):
    """The requested quantity has no supported closed form for this weight."""


class IntegralDivergenceError(ArithmeticError):
    """A weight-power integral is infinite."""


@dataclass(frozen=True, eq=False)
class WeightField:
    family: str
    params: dict
    mesh: Mesh
    edge_values: np.ndarray
    node_values: np.ndarray
    cell_values: np.ndarray = None
    n: int = 2
    sup_bound: float = field(default=None)

    def __post_init__(self):
        for name in ("edge_values", "node_values", "cell_values"):
            arr = getattr(self, name)
            if arr is None:
                continue
            arr = np.asarray(arr, dtype=float)
            if not np.all(np.isfinite(arr)) or np.any(arr <= 0):
                raise ValueError(f"weight samples ({name}) must be positive and finite")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        top = max(self.edge_values.max(), self.node_values.max())
        if self.cell_values is not None:
            top = max(top, self.cell_values.max())
        if self.sup_bound is None:
            object.__setattr__(self, "sup_bound", float(top))
        elif self.sup_bound < top * (1 - 1e-12):
            raise ValueError("sup_bound is below the largest sample")

    @property
    def hypotheses_verified(self):
        """False when no Muckenhoupt certificate exists for the family (tables)."""
        return self.family != "table"

    def check_muckenhoupt(self, p):
        """Raise unless the family parameters certify an A_p extension for this ``p``."""
        p = check_exponent(p)
        if self.family == "power":
            alpha = self.params["alpha"]
            if not 0 <= alpha < self.n * (p - 1):
                raise UnsupportedWeightError(
                    f"power weight with alpha={alpha} is not certified A_p for p={p} "
                    f"(need 0 <= alpha < n(p-1) = {self.n * (p - 1)})"
                )

    def to_dict(self):
        return {"family": self.family, "n": self.n, "sup_bound": self.sup_bound, **self.params}


def _require_grid(mesh, family):
    if not isinstance(mesh, Grid):
        raise UnsupportedWeightError(f"{family} weights need a structured grid")


def _from_function(mesh, family, params, func, n, sup_bound):
    edge = func(mesh.edge_midpoints)
    if np.any(edge <= 0):
        raise ValueError(f"{family} weight vanishes at an edge midpoint; add a floor or move the center")
    node = func(mesh.node_xy)
    zero = node <= 0
    if np.any(zero):
        # singular center sitting on a node: use the incident edge average there
        acc = np.bincount(mesh.edge_a, edge, mesh.n_nodes) + np.bincount(mesh.edge_b, edge, mesh.n_nodes)
        cnt = np.bincount(mesh.edge_a, None, mesh.n_nodes) + np.bincount(mesh.edge_b, None, mesh.n_nodes)
        node = np.where(zero, acc / cnt, node)
    cell = func(mesh.cell_centers)
    return WeightField(family, params, mesh, edge, node, cell, n=n, sup_bound=sup_bound)


def constant_weight(mesh, c=1.0, n=2):
    c = check_positive(c, "c")
    cell = None
    if isinstance(mesh, Grid):
        cell = np.full((mesh.nx - 1) * (mesh.ny - 1), c)
    return WeightField(
        "constant", {"c": c}, mesh, np.full(mesh.n_edges, c), np.full(mesh.n_nodes, c), cell, n=n, sup_bound=c
    )


def power_weight(mesh, center, alpha, floor=0.0, n=2):
    """``gamma(x) = max(|x - center|**alpha, floor)``, bounded on bounded sets for alpha >= 0."""
    _require_grid(mesh, "power")
    alpha = float(alpha)
    if not math.isfinite(alpha) or alpha < 0:
        raise UnsupportedWeightError(f"power weight needs alpha >= 0 (bounded weight), got {alpha}")
    floor = check_positive(floor, "floor", allow_zero=True)
    cx, cy = map(float, center)

    def func(xy):
        r = np.hypot(xy[:, 0] - cx, xy[:, 1] - cy)
        return np.maximum(r**alpha, floor)

    corners = np.array(
        [[mesh.x0, mesh.y0], [mesh.x0 + mesh.lx, mesh.y0], [mesh.x0, mesh.y0 + mesh.ly], [mesh.x0 + mesh.lx, mesh.y0 + mesh.ly]]
    )
    sup = float(func(corners).max())
    params = {"center": (cx, cy), "alpha": alpha, "floor": floor}
    return _from_function(mesh, "power", params, func, n, sup)


def checkerboard_weight(mesh, c1, c2, tiles=(2, 2), n=2):
    """Two-valued weight on a ``tiles[0]`` by ``tiles[1]`` checkerboard of the rectangle."""
    _require_grid(mesh, "checkerboard")
    c1, c2 = check_positive(c1, "c1"), check_positive(c2, "c2")
    tx, ty = int(tiles[0]), int(tiles[1])
    if tx < 1 or ty < 1:
        raise ValueError("tiles must be positive")

    def func(xy):
        k = np.clip(np.floor((xy[:, 0] - mesh.x0) / mesh.lx * tx), 0, tx - 1)
        m = np.clip(np.floor((xy[:, 1] - mesh.y0) / mesh.ly * ty), 0, ty - 1)
        return np.where((k + m) % 2 == 0, c1, c2)

    params = {"c1": c1, "c2": c2, "tiles": (tx, ty)}
    return _from_function(mesh, "checkerboard", params, func, n, max(c1, c2))


def table_weight(mesh, cell_values, n=2):
    """Cellwise-constant weight from a table of ``(ny-1) * (nx-1)`` values."""
    _require_grid(mesh, "table")
    cell = np.asarray(cell_values, dtype=float).ravel()
    if cell.size != (mesh.nx - 1) * (mesh.ny - 1):
        raise ValueError(f"table needs {(mesh.nx - 1) * (mesh.ny - 1)} cell values, got {cell.size}")
    if not np.all(np.isfinite(cell)) or np.any(cell <= 0):
        raise ValueError("table values must be positive and finite")
    nb = mesh.cells_of_edge()
    vals = np.where(nb >= 0, cell[np.maximum(nb, 0)], 0.0)
    edge = vals.sum(axis=1) / (nb >= 0).sum(axis=1)

    ncx = mesh.nx - 1
    c2d = cell.reshape(mesh.ny - 1, ncx)
    padded = np.pad(c2d, 1)
    mask = np.pad(np.ones_like(c2d), 1)
    acc = padded[:-1, :-1] + padded[:-1, 1:] + padded[1:, :-1] + padded[1:, 1:]
    cnt = mask[:-1, :-1] + mask[:-1, 1:] + mask[1:, :-1] + mask[1:, 1:]
    node = (acc / cnt).ravel()
    return WeightField("table", {"values": tuple(cell.tolist())}, mesh, edge, node, cell, n=n, sup_bound=float(cell.max()))


def p0(w):
    """Infimum of q > 1 with ``gamma**(1/(1-q))`` integrable, from the family's closed form."""
    if w.family in ("constant", "checkerboard", "table"):
        return 1.0
    if w.family == "power":
        alpha, floor = w.params["alpha"], w.params["floor"]
        if alpha == 0 or floor > 0 or not _center_in_closure(w):
            return 1.0
        return 1.0 + alpha / w.n
    raise UnsupportedWeightError(f"no closed-form p0 for weight family {w.family!r}")


def _center_in_closure(w):
    g = w.mesh
    cx, cy = w.params["center"]
    return g.x0 <= cx <= g.x0 + g.lx and g.y0 <= cy <= g.y0 + g.ly


def weighted_p_integral(w, grad, p):
    """Edge quadrature of ``gamma |grad u|**p``: sum over edges of gamma_e |g_e|^p vol_e."""
    if not p > 1:
        raise ValueError(f"p must exceed 1, got {p}")
    grad = np.asarray(grad, dtype=float)
    return float(np.dot(w.edge_values * np.abs(grad) ** p, w.mesh.edge_volume))


def midpoint_integral(w, exponent):
    """Cell-midpoint quadrature of ``gamma**exponent`` (node quadrature on bare meshes)."""
    if w.cell_values is None:
        return float(np.dot(w.node_values**exponent, w.mesh.node_volume))
    return float(np.sum(w.cell_values**exponent) * w.mesh.cell_volume)


def gamma_power_integral(w, exponent, return_error=False):
    """Integral of ``gamma**exponent`` over the domain.

    Constant, checkerboard and table weights are integrated exactly.  Power
    weights use the radial antiderivative along rays from the center and a
    one-dimensional adaptive quadrature in the angle, which stays accurate
    for integrable singularities at the center.

    Raises :class:`IntegralDivergenceError` when the integral is infinite.
    """
    exponent = float(exponent)
    fam = w.family
    if fam == "constant":
        val, err = w.params["c"] ** exponent * w.mesh.volume, 0.0
    elif fam == "checkerboard":
        tx, ty = w.params["tiles"]
        n_even = sum(1 for k in range(tx) for m in range(ty) if (k + m) % 2 == 0)
        area = w.mesh.lx * w.mesh.ly / (tx * ty)
        val = (n_even * w.params["c1"] ** exponent + (tx * ty - n_even) * w.params["c2"] ** exponent) * area
        err = 0.0
    elif fam == "table":
        val, err = midpoint_integral(w, exponent), 0.0
    elif fam == "power":
        val, err = _power_integral(w, exponent)
    else:
        raise UnsupportedWeightError(f"cannot integrate weight family {fam!r}")
    return (float(val), float(err)) if return_error else float(val)


def _power_integral(w, e):
    g = w.mesh
    alpha, floor = w.params["alpha"], w.params["floor"]
    cx, cy = w.params["center"]
    beta = alpha * e
    if alpha == 0:
        return max(1.0, floor) ** e * g.volume, 0.0
    rf = floor ** (1.0 / alpha) if floor > 0 else 0.0
    if rf == 0 and beta <= -w.n and _center_in_closure(w):
        raise IntegralDivergenceError(
            f"integral of |x-c|^{beta:g} diverges at the center (needs exponent > {-w.n / alpha:g})"
        )
    fe = floor**e if floor > 0 else 0.0

    if not _center_in_closure(w):
        # smooth integrand; ray decomposition would cancel divergent pieces
        val, err = integrate.dblquad(
            lambda y, x: max(math.hypot(x - cx, y - cy) ** alpha, floor) ** e,
            g.x0, g.x0 + g.lx, g.y0, g.y0 + g.ly, epsabs=0, epsrel=1e-12,
        )
        return val, err

    def radial(R):
        # int_0^R g(r) r dr
        m = min(R, rf)
        out = fe * m * m / 2.0
        if R > rf:
            if beta == -2.0:
                out += math.log(R / rf)
            else:
                out += (R ** (beta + 2) - rf ** (beta + 2)) / (beta + 2)
        return out

    def quarter(a, b):
        # integral over [0,a]x[0,b] with the center at the origin
        if a == 0 or b == 0:
            return 0.0, 0.0
        v1, e1 = integrate.quad(lambda t: radial(a / math.cos(t)), 0.0, math.atan2(b, a), epsabs=0, epsrel=1e-13, limit=200)
        v2, e2 = integrate.quad(lambda t: radial(b / math.cos(t)), 0.0, math.atan2(a, b), epsabs=0, epsrel=1e-13, limit=200)
        return v1 + v2, e1 + e2

    total, err = 0.0, 0.0
    for a in (g.x0 + g.lx - cx, cx - g.x0):
        for b in (g.y0 + g.ly - cy, cy - g.y0):
            v, ev = quarter(a, b)
            total += v
            err += ev
    return total, err


def _check_delta(w, delta, p):
    p = check_exponent(p)
    q0 = p0(w)
    dmax = (p - q0) / q0
    if not (0 <= delta < dmax):
        raise ValueError(f"delta={delta} outside admissible range [0, {dmax:g}) for p={p}, p0={q0}")
    return p


def gamma_delta_p(w, delta, p):
    """Constant converting the weighted p-energy decay into an L^(1+delta) gradient bound."""
    p = _check_delta(w, delta, p)
    s = 1.0 + delta
    integral = gamma_power_integral(w, s / (s - p))
    return integral ** ((p - s) / (p * s)) * (2.0 / abs(p - 2.0)) ** (1.0 / p)


def extinction_window(q0, n):
    """Open interval of exponents p for which extinction is guaranteed; None if empty."""
    lo = q0 * (n - 2) / (n + 2) + q0
    return (lo, 2.0) if lo < 2.0 else None


def gamma_tilde(w, n, p):
    """Weight constant entering the extinction-time bound."""
    p = check_exponent(p)
    window = extinction_window(p0(w), n)
    if window is None:
        raise ValueError(f"extinction window is empty for p0={p0(w)}, n={n}")
    if not window[0] < p < window[1]:
        raise ValueError(f"p={p} outside extinction window ({window[0]:g}, {window[1]:g})")
    integral = gamma_power_integral(w, 2.0 * n / (2.0 * n - n * p - 2.0 * p))
    return integral ** ((n * p + 2.0 * p - 2.0 * n) / (2.0 * n))


def ap_characteristic(w, p, levels=3):
    """Largest A_p ratio over dyadic sub-squares built from cell samples (diagnostic only)."""
    _require_grid(w.mesh, w.family)
    p = check_exponent(p)
    g = w.mesh
    cell = w.cell_values.reshape(g.ny - 1, g.nx - 1)
    worst = 0.0
    for lev in range(levels + 1):
        k = 2**lev
        bx = np.array_split(np.arange(g.nx - 1), k)
        by = np.array_split(np.arange(g.ny - 1), k)
        for ix in bx:
            for iy in by:
                if ix.size == 0 or iy.size == 0:
                    continue
                block = cell[np.ix_(iy, ix)]
                val = block.mean() * np.mean(block ** (1.0 / (1.0 - p))) ** (p - 1.0)
                worst = max(worst, float(val))
    return worst
