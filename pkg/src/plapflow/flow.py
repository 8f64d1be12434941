"""Backward Euler resolvent and the time integrator built from it.

One step maps ``u_prev`` to the minimizer of

    Phi(u) = J_eps(u) + 1/(2h) * ||u - u_prev||_2**2,

found by damped Newton.  Trajectories are iterated resolvents; outputs are
recorded at the requested times with uniform substeps in between.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .energy import EnergyParams, edge_flux, energy, energy_gradient_euclidean, hessian_matrix
from .geometry import gradient, lq_norm
from ._validation import check_field, check_positive

logger = logging.getLogger(__name__)

__all__ = [
    "FixedEps",
    "AdaptiveEps",
    "StepParams",
    "TimeGrid",
    "StepInfo",
    "Trajectory",
    "NewtonDivergenceError",
    "SolverFailure",
    "resolvent",
    "evolve",
    "scaling_check",
    "translation_check",
]

DENSE_LIMIT = 200


class NewtonDivergenceError(RuntimeError):
    """Newton did not reach the residual tolerance within the iteration cap."""

    def __init__(self, message, iterate=None, residuals=()):
        super().__init__(message)
        self.iterate = iterate
        self.residuals = list(residuals)


class SolverFailure(RuntimeError):
    """A resolvent failure during time integration, annotated with the time."""

    def __init__(self, t, cause):
        super().__init__(f"solver failure at t={t:.17g}: {cause}")
        self.t = t
        self.cause = cause


@dataclass(frozen=True)
class FixedEps:
    eps: float = 0.0

    def __call__(self, mesh, u):
        return self.eps


@dataclass(frozen=True)
class AdaptiveEps:
    """``eps_k = min(eps0, max(eps_min, theta * median |grad u_k|))``."""

    eps0: float = 1.0
    theta: float = 0.1
    eps_min: float = 1e-9

    def __call__(self, mesh, u):
        med = float(np.median(np.abs(gradient(mesh, u))))
        return min(self.eps0, max(self.eps_min, self.theta * med))


@dataclass(frozen=True)
class StepParams:
    h: float
    newton_tol: float = 1e-11
    max_newton: int = 60
    linear_tol: float = 1e-3
    eps_policy: object = field(default_factory=FixedEps)
    linear_solver: str = "auto"

    def __post_init__(self):
        check_positive(self.h, "h")
        check_positive(self.newton_tol, "newton_tol")
        check_positive(self.linear_tol, "linear_tol")
        if int(self.max_newton) < 1:
            raise ValueError("max_newton must be >= 1")
        if self.linear_solver not in ("auto", "dense", "direct", "cg"):
            raise ValueError(f"unknown linear_solver {self.linear_solver!r}")


@dataclass(frozen=True)
class TimeGrid:
    """Output times: ``uniform(t_end, steps)``, ``geometric(t0, t_end, ratio)`` or ``explicit(times)``."""

    kind: str
    t_end: float = None
    steps: int = None
    t0: float = None
    ratio: float = None
    values: tuple = None

    @classmethod
    def uniform(cls, t_end, steps):
        return cls("uniform", t_end=float(t_end), steps=int(steps))

    @classmethod
    def geometric(cls, t0, t_end, ratio):
        return cls("geometric", t0=float(t0), t_end=float(t_end), ratio=float(ratio))

    @classmethod
    def explicit(cls, values):
        return cls("explicit", values=tuple(float(v) for v in values))

    def times(self):
        if self.kind == "uniform":
            if self.steps < 1 or not self.t_end > 0:
                raise ValueError("uniform time grid needs steps >= 1 and t_end > 0")
            out = self.t_end * np.arange(1, self.steps + 1) / self.steps
        elif self.kind == "geometric":
            if not (0 < self.t0 < self.t_end and self.ratio > 1):
                raise ValueError("geometric time grid needs 0 < t0 < t_end and ratio > 1")
            k = int(math.floor(math.log(self.t_end / self.t0) / math.log(self.ratio) + 1e-9))
            out = self.t0 * self.ratio ** np.arange(k + 1)
            if out[-1] < self.t_end * (1 - 1e-12):
                out = np.append(out, self.t_end)
            else:
                out[-1] = self.t_end
        elif self.kind == "explicit":
            out = np.asarray(self.values, dtype=float)
        else:
            raise ValueError(f"unknown time grid kind {self.kind!r}")
        if out.size == 0 or out[0] <= 0 or np.any(np.diff(out) <= 0):
            raise ValueError("output times must be positive and strictly increasing")
        return out


@dataclass
class StepInfo:
    iterations: int = 0
    residuals: list = field(default_factory=list)
    eps: float = 0.0
    linear_fallbacks: int = 0


@dataclass
class Trajectory:
    """States at output times; ``times[0]`` is the start time with the initial state."""

    mesh: object
    times: np.ndarray
    states: np.ndarray
    newton_iters: np.ndarray
    eps_used: np.ndarray
    params: EnergyParams = None

    def __len__(self):
        return len(self.times)

    @property
    def final(self):
        return self.states[-1]


def _nodal_norm(mesh, r):
    return float(np.sqrt(np.dot(r * r, mesh.node_volume)))


def _solve_linear(H, rhs, step, info):
    n = rhs.shape[0]
    kind = step.linear_solver
    if kind == "auto":
        kind = "dense" if n <= DENSE_LIMIT else "cg"
    if kind == "dense":
        return scipy.linalg.solve(H.toarray(), rhs, assume_a="pos")
    if kind == "cg":
        diag = H.diagonal()
        M = sp.diags(1.0 / diag)
        x, status = spla.cg(H, rhs, rtol=step.linear_tol, atol=0.0, maxiter=10 * n, M=M)
        if status == 0 and np.all(np.isfinite(x)):
            return x
        info.linear_fallbacks += 1
        logger.debug("CG did not converge (status %s); falling back to sparse LU", status)
    return spla.spsolve(H.tocsc(), rhs)


def resolvent(u_prev, step, params, full_output=False):
    """One backward Euler step ``(I + h A_eps)^{-1} u_prev`` by damped Newton.

    ``params.eps`` is used as given; time integration chooses it through the
    step's eps policy.  The Newton direction is corrected by a constant so
    that the discrete mass of the iterate equals that of ``u_prev``.  When
    Newton stalls on a nearly nonsmooth problem (tiny eps, p < 2) the solve is
    repeated with a decreasing ladder of eps values, each warm-started.

    Raises :class:`NewtonDivergenceError` (carrying the last iterate and the
    residual history) when the tolerance is not reached.
    """
    mesh = params.mesh
    u_prev = check_field(mesh, u_prev, "u_prev")
    try:
        u, info = _newton(u_prev, u_prev, step, params)
    except NewtonDivergenceError as exc:
        if params.eps == 0:
            raise
        top = 0.1 * float(np.abs(gradient(mesh, u_prev)).max())
        if top <= 10 * params.eps:
            raise
        logger.debug("eps continuation after: %s", exc)
        u = u_prev
        total = 0
        for e in np.geomspace(top, params.eps, int(np.ceil(np.log10(top / params.eps))) + 1):
            u, info = _newton(u, u_prev, step, params.with_eps(float(e)))
            total += info.iterations
        info.iterations = total
    return (u, info) if full_output else u


def _newton(u, u_prev, step, params):
    mesh = params.mesh
    w = mesh.node_volume
    h = step.h
    tol = step.newton_tol * (1.0 + _nodal_norm(mesh, u_prev))
    info = StepInfo(eps=params.eps)
    total_w = w.sum()
    mach = np.finfo(float).eps

    def phi(u):
        d = u - u_prev
        return energy(u, params) + 0.5 / h * np.dot(w * d, d)

    def grad(u):
        return energy_gradient_euclidean(u, params) + w * (u - u_prev) / h

    u = u.copy()
    G = grad(u)
    rnorm = _nodal_norm(mesh, G / w)
    info.residuals.append(rnorm)
    for it in range(int(step.max_newton) + 1):
        if rnorm <= tol:
            info.iterations = it
            return u, info
        if it == step.max_newton:
            break
        H = hessian_matrix(u, params) + sp.diags(w / h)
        # rounding noise in G: perturbed nodal values pushed through H, plus the flux sums themselves
        flux = np.abs(edge_flux(gradient(mesh, u), params) * mesh.edge_volume)
        noise = 10 * mach * (
            abs(H) @ np.abs(u) + abs(mesh.difference_matrix.T) @ flux + w * np.abs(u_prev) / h
        )
        if it > 0 and rnorm <= max(tol, _nodal_norm(mesh, noise / w)):
            info.iterations = it
            return u, info
        d = _solve_linear(H, -G, step, info)
        # restore exact mass balance: constants lie in the kernel of the energy Hessian
        d -= (np.dot(w, d) + np.dot(w, u - u_prev)) / total_w
        slope = float(np.dot(G, d))
        if not slope < 0:
            d = spla.spsolve(H.tocsc(), -G)
            d -= (np.dot(w, d) + np.dot(w, u - u_prev)) / total_w
            slope = float(np.dot(G, d))
            info.linear_fallbacks += 1
        f0 = phi(u)
        a = 1.0
        while True:
            trial = u + a * d
            f1 = phi(trial)
            G1 = grad(trial)
            r1 = _nodal_norm(mesh, G1 / w)
            # Armijo on Phi, or a residual decrease once Phi differences reach round-off
            if f1 <= f0 + 1e-4 * a * slope or (r1 < rnorm and abs(f1 - f0) <= 1e-13 * (1 + abs(f0))):
                break
            a *= 0.5
            if a < 1e-12:
                raise NewtonDivergenceError(
                    f"line search failed at residual {rnorm:.3e} (tol {tol:.3e})", u, info.residuals
                )
        u, G, rnorm = trial, G1, r1
        info.residuals.append(rnorm)
    raise NewtonDivergenceError(
        f"no convergence in {step.max_newton} Newton iterations (residual {rnorm:.3e}, tol {tol:.3e})",
        u,
        info.residuals,
    )


def _substep(u, h, step, params, depth=0, max_depth=6):
    """Advance by ``h``; on Newton failure retry as two half steps."""
    eps = step.eps_policy(params.mesh, u)
    sp_ = StepParams(h, step.newton_tol, step.max_newton, step.linear_tol, step.eps_policy, step.linear_solver)
    try:
        u_new, info = resolvent(u, sp_, params.with_eps(eps), full_output=True)
        return u_new, info.iterations, eps
    except NewtonDivergenceError:
        if depth >= max_depth:
            raise
        logger.info("halving substep %.3e after Newton failure", h)
        u_half, it1, _ = _substep(u, h / 2, step, params, depth + 1, max_depth)
        u_new, it2, eps2 = _substep(u_half, h / 2, step, params, depth + 1, max_depth)
        return u_new, it1 + it2, eps2


def evolve(u0, times, step, params, observer=None, t_start=0.0, keep_states=True):
    """Iterate resolvents from ``u0`` and record the state at each output time.

    Each output interval is split into the fewest uniform substeps of size
    at most ``step.h``.  ``observer(t, u, info)`` is called at every output
    (including the start) with a read-only copy of the state; ``info`` holds
    the Newton iteration count of the interval and the last eps used.
    """
    mesh = params.mesh
    u = check_field(mesh, u0, "u0").copy()
    out_times = times.times() if isinstance(times, TimeGrid) else np.asarray(times, dtype=float)
    out_times = out_times + 0.0
    if np.any(out_times <= t_start):
        raise ValueError("output times must exceed the start time")

    all_times = [float(t_start)]
    states = [u.copy()] if keep_states else []
    iters = [0]
    eps_list = [float(step.eps_policy(mesh, u))]
    _notify(observer, t_start, u, 0, eps_list[0])

    t_prev = float(t_start)
    for t in out_times:
        dt = float(t) - t_prev
        nsub = max(1, int(math.ceil(dt / step.h * (1 - 1e-12))))
        hsub = dt / nsub
        n_it = 0
        eps = eps_list[-1]
        for k in range(nsub):
            try:
                u, it, eps = _substep(u, hsub, step, params)
            except (NewtonDivergenceError, ArithmeticError) as exc:
                raise SolverFailure(t_prev + k * hsub, exc) from exc
            n_it += it
        t_prev = float(t)
        all_times.append(t_prev)
        if keep_states:
            states.append(u.copy())
        iters.append(n_it)
        eps_list.append(float(eps))
        _notify(observer, t_prev, u, n_it, eps)

    return Trajectory(
        mesh=mesh,
        times=np.array(all_times),
        states=np.array(states) if keep_states else u[None, :].copy(),
        newton_iters=np.array(iters),
        eps_used=np.array(eps_list),
        params=params,
    )


def _notify(observer, t, u, iters, eps):
    if observer is None:
        return
    snap = u.copy()
    snap.setflags(write=False)
    observer(t, snap, {"newton_iters": iters, "eps_used": eps})


def scaling_check(u0, alpha, t, step, params, substeps=64, matched="step"):
    """L2 distance between ``T(t)(alpha u0)`` and ``alpha T(alpha**(p-2) t) u0``.

    With ``matched="step"`` both sides use the same step size ``t / substeps``
    so the discrepancy measures the time-discretization error.  With
    ``matched="count"`` both use ``substeps`` steps, for which the identity
    holds exactly for the discrete scheme (up to solver tolerance).
    """
    alpha = check_positive(alpha, "alpha")
    mesh = params.mesh
    u0 = check_field(mesh, u0, "u0")
    s = alpha ** (params.p - 2.0) * t
    if matched == "step":
        h = t / substeps
        n_right = max(1, int(round(s / h)))
        if not math.isclose(n_right * h, s, rel_tol=1e-9):
            raise ValueError("alpha**(p-2) * t must be a whole number of substeps for matched='step'")
        n_left = substeps
    elif matched == "count":
        n_left = n_right = substeps
    else:
        raise ValueError(f"unknown matching mode {matched!r}")

    def run(v, tt, n):
        st = StepParams(tt / n, step.newton_tol, step.max_newton, step.linear_tol, step.eps_policy, step.linear_solver)
        return evolve(v, TimeGrid.explicit([tt]), st, params, keep_states=False).final

    left = run(alpha * u0, t, n_left)
    right = alpha * run(u0, s, n_right)
    return {
        "discrepancy": lq_norm(mesh, left - right, 2),
        "reference": alpha * lq_norm(mesh, u0, 2),
        "alpha": alpha,
        "t": t,
        "scaled_t": s,
        "substeps": (n_left, n_right),
    }


def translation_check(u0, c, times, step, params):
    """L2 distance between ``T(t)(u0 + c)`` and ``T(t)u0 + c`` at the final time."""
    mesh = params.mesh
    u0 = check_field(mesh, u0, "u0")
    a = evolve(u0 + c, times, step, params, keep_states=False).final
    b = evolve(u0, times, step, params, keep_states=False).final
    return lq_norm(mesh, a - b - c, 2)
