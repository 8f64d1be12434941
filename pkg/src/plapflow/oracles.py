"""Brute-force reference minimizer for one backward Euler step.

Written with explicit per-edge loops and scalar root finding so that it
shares no code path with the vectorised Newton solver it is used to check.
"""

import numpy as np
from scipy.optimize import brentq


def _edge_flux(g, p, eps):
    s = g * g + eps * eps
    if s == 0.0:
        if p < 2:
            raise ZeroDivisionError("singular flux")
        return 0.0
    return s ** ((p - 2) / 2) * g


def step_objective(u, u_prev, mesh, gamma_edges, p, eps, h):
    """J_eps(u) + ||u - u_prev||^2 / (2h), summed edge by edge."""
    total = 0.0
    for e in range(mesh.n_edges):
        a, b = int(mesh.edge_a[e]), int(mesh.edge_b[e])
        g = (u[b] - u[a]) / mesh.edge_length[e]
        dens = ((g * g + eps * eps) ** (p / 2) - eps**p) / p
        total += gamma_edges[e] * dens * mesh.edge_volume[e]
    for i in range(mesh.n_nodes):
        total += mesh.node_volume[i] * (u[i] - u_prev[i]) ** 2 / (2 * h)
    return total


def brute_force_resolvent(u_prev, mesh, gamma_edges, p, eps, h, starts=4, seed=0, tol=1e-15, max_sweeps=20000):
    """Minimize the step objective by multi-start cyclic coordinate descent.

    Each coordinate update solves the one-dimensional first-order condition
    exactly (it is strictly increasing) with Brent's method.  All starts
    must agree; the spread between them is returned alongside the result.
    """
    u_prev = np.asarray(u_prev, dtype=float)
    n = u_prev.size
    incident = [[] for _ in range(n)]
    for e in range(mesh.n_edges):
        a, b = int(mesh.edge_a[e]), int(mesh.edge_b[e])
        incident[a].append((e, b, -1.0))
        incident[b].append((e, a, 1.0))

    def coord_derivative(x, i, u):
        val = mesh.node_volume[i] * (x - u_prev[i]) / h
        for e, other, sign in incident[i]:
            he = mesh.edge_length[e]
            # g_e = (u_b - u_a)/h_e; d g_e / d u_i = sign / h_e
            g = sign * (x - u[other]) / he
            val += gamma_edges[e] * mesh.edge_volume[e] * _edge_flux(g, p, eps) * sign / he
        return val

    rng = np.random.default_rng(seed)
    spread = max(1.0, float(np.ptp(u_prev)))
    results = []
    for k in range(starts):
        u = u_prev.copy() if k == 0 else u_prev + spread * rng.uniform(-1, 1, n)
        for _ in range(max_sweeps):
            change = 0.0
            for i in range(n):
                lo = min(u_prev.min(), u.min()) - 1.0
                hi = max(u_prev.max(), u.max()) + 1.0
                while coord_derivative(lo, i, u) > 0:
                    lo -= 2 * (hi - lo)
                while coord_derivative(hi, i, u) < 0:
                    hi += 2 * (hi - lo)
                x = brentq(coord_derivative, lo, hi, args=(i, u), xtol=1e-300, rtol=8.9e-16, maxiter=500)
                change = max(change, abs(x - u[i]))
                u[i] = x
            if change <= tol * (1 + np.abs(u).max()):
                break
        results.append(u)
    results = np.array(results)
    best = min(range(starts), key=lambda k: step_objective(results[k], u_prev, mesh, gamma_edges, p, eps, h))
    return results[best], float(np.abs(results - results[best]).max())
