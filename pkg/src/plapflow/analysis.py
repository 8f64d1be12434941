"""Trajectory diagnostics, explicit decay and extinction constants, and checks against them."""

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats

from .geometry import Grid, average, gradient, lq_norm
from .weights import (
    extinction_window,
    gamma_delta_p,
    gamma_tilde,
    p0,
    weighted_p_integral,
)
from ._validation import check_exponent, check_field

__all__ = [
    "DiagnosticsRecord",
    "BoundsReport",
    "ExtinctTrajectoryError",
    "record",
    "diagnostics",
    "dissipation_residual",
    "ode_comparison",
    "poincare_bound",
    "sobolev_embedding_estimate",
    "bounds_report",
    "extinction_bound",
    "decay_envelope_check",
    "gradient_decay_check",
    "fit_decay_exponent",
    "detect_extinction",
    "truncate",
]

RIGOROUS = "rigorous"
ESTIMATED = "estimated"


class ExtinctTrajectoryError(ValueError):
    """Deviation reached zero inside the fitting window; no power law to fit."""


@dataclass
class DiagnosticsRecord:
    t: float
    mass: float
    dev: dict
    energy_p: float
    f_u: float
    newton_iters: int = 0
    eps_used: float = 0.0

    @property
    def dev_l1(self):
        return self.dev[1.0]

    @property
    def dev_l2(self):
        return self.dev[2.0]

    @property
    def dev_linf(self):
        return self.dev[math.inf]


def record(mesh, u, t, weight, p, extra_q=(), mean=None, newton_iters=0, eps_used=0.0):
    """Diagnostics of one state; deviations are taken from ``mean`` (default: the state's own average)."""
    u = check_field(mesh, u)
    mass = float(np.dot(u, mesh.node_volume))
    if mean is None:
        mean = mass / mesh.volume
    v = u - mean
    dev = {}
    for q in (1.0, 2.0, math.inf, *map(float, extra_q)):
        dev[q] = lq_norm(mesh, v, q)
    f_u = float(np.dot(v * v, mesh.node_volume))
    e_p = weighted_p_integral(weight, gradient(mesh, u), p)
    return DiagnosticsRecord(float(t), mass, dev, e_p, f_u, int(newton_iters), float(eps_used))


def diagnostics(traj, extra_q=(), weight=None, p=None):
    """Records for every stored state of a trajectory, deviations from the initial mean."""
    weight = weight if weight is not None else traj.params.weight
    p = p if p is not None else traj.params.p
    mean = average(traj.mesh, traj.states[0])
    return [
        record(traj.mesh, u, t, weight, p, extra_q, mean, it, eps)
        for t, u, it, eps in zip(traj.times, traj.states, traj.newton_iters, traj.eps_used)
    ]


def dissipation_residual(records):
    """Normalized backward-difference defect of ``f_u' = -2 * energy_p`` per interval."""
    if len(records) < 2:
        raise ValueError("need at least two records")
    out = []
    for a, b in zip(records[:-1], records[1:]):
        rate = (b.f_u - a.f_u) / (b.t - a.t)
        out.append(abs(rate + 2 * b.energy_p) / max(2 * b.energy_p, 1e-30))
    return np.array(out)


def ode_comparison(f0, alpha, k):
    """Extinction time and exact solution of ``f' = -alpha * f**k``, ``f(0) = f0``."""
    if f0 < 0 or not alpha > 0 or not 0 < k < 1:
        raise ValueError("need f0 >= 0, alpha > 0 and 0 < k < 1")
    t_star = f0 ** (1 - k) / (alpha * (1 - k))

    def evaluator(t):
        t = np.asarray(t, dtype=float)
        base = np.maximum(f0 ** (1 - k) - alpha * (1 - k) * t, 0.0)
        return base ** (1 / (1 - k))

    return t_star, evaluator


def _pi_q(q):
    if q == 1:
        return 2.0
    return 2 * math.pi * (q - 1) ** (1 / q) / (q * math.sin(math.pi / q))


def poincare_bound(grid, q):
    """Upper bound on the L^q Poincare constant of a convex rectangle.

    Returns ``(value, rigor, source)``.  Uses ``diam / pi_q`` with
    ``pi_q = 2 pi (q-1)^(1/q) / (q sin(pi/q))``, which is ``diam/2`` at q=1
    and ``diam/pi`` at q=2.
    """
    if not q >= 1 or math.isinf(q):
        raise ValueError(f"Poincare bound needs 1 <= q < inf, got {q}")
    d = grid.diameter
    if q == 1:
        src = "Acosta-Duran (convex, q=1): diam/2"
    elif q == 2:
        src = "Payne-Weinberger (convex, q=2): diam/pi"
    else:
        src = "Ferone-Nitsch-Trombetti (convex): diam/pi_q"
    return d / _pi_q(q), RIGOROUS, src


def _probe_fields(grid, n_random, seed, res):
    rng = np.random.default_rng(seed)
    x = grid.x0 + grid.lx * (np.arange(res) + 0.5) / res
    y = grid.y0 + grid.ly * (np.arange(res) + 0.5) / res
    X, Y = np.meshgrid(x, y)
    sx, sy = (X - grid.x0) / grid.lx, (Y - grid.y0) / grid.ly
    probes = [(np.ones_like(X), np.zeros_like(X), np.zeros_like(X))]
    for _ in range(n_random):
        f = np.zeros_like(X)
        fx = np.zeros_like(X)
        fy = np.zeros_like(X)
        for kx in range(4):
            for ky in range(4):
                c = rng.normal() / (1 + kx + ky)
                cx, cy = np.cos(kx * np.pi * sx), np.cos(ky * np.pi * sy)
                f += c * cx * cy
                fx += -c * kx * np.pi / grid.lx * np.sin(kx * np.pi * sx) * cy
                fy += -c * ky * np.pi / grid.ly * cx * np.sin(ky * np.pi * sy)
        probes.append((f, fx, fy))
    centers = [(grid.x0, grid.y0), (grid.x0 + grid.lx / 2, grid.y0), (grid.x0 + grid.lx / 2, grid.y0 + grid.ly / 2)]
    d = grid.diameter
    for cx, cy in centers:
        for rho in d * np.array([0.05, 0.1, 0.2, 0.4, 0.8]):
            r = np.hypot(X - cx, Y - cy)
            inside = r < rho
            f = np.where(inside, 1 - r / rho, 0.0)
            with np.errstate(invalid="ignore", divide="ignore"):
                fx = np.where(inside & (r > 0), -(X - cx) / (rho * r), 0.0)
                fy = np.where(inside & (r > 0), -(Y - cy) / (rho * r), 0.0)
            probes.append((f, fx, fy))
    return probes, (grid.lx / res) * (grid.ly / res)


def sobolev_embedding_estimate(grid, r, target=2.0, n_random=40, seed=0, res=256):
    """Estimate the norm of the embedding W^{1,r} -> L^target by a max ratio over probes.

    Probes are random cosine polynomials and cones of several radii; the
    result is a lower estimate of the true operator norm and is flagged
    estimated.  Norms follow ``||f||_{W^{1,r}} = (||f||_r^r + ||grad f||_r^r)^(1/r)``.
    """
    if not isinstance(grid, Grid):
        raise ValueError("Sobolev estimates need a rectangular grid")
    probes, dA = _probe_fields(grid, n_random, seed, res)
    best = 0.0
    for f, fx, fy in probes:
        w_norm = (np.sum(np.abs(f) ** r) * dA + np.sum(np.hypot(fx, fy) ** r) * dA) ** (1 / r)
        if math.isinf(target):
            top = np.abs(f).max()
        else:
            top = (np.sum(np.abs(f) ** target) * dA) ** (1 / target)
        if w_norm > 0:
            best = max(best, float(top / w_norm))
    return best, ESTIMATED, f"max ratio over {len(probes)} probe fields"


def _const(value, rigor, source):
    return {"value": value, "rigor": rigor, "source": source}


@dataclass
class BoundsReport:
    p: float
    n: int
    p0: float
    admissible_delta_max: float
    gamma_delta_p: dict = field(default_factory=dict)
    gamma_tilde: dict = None
    poincare: dict = field(default_factory=dict)
    sobolev_embedding: dict = field(default_factory=dict)
    c_star: dict = None
    T_star: dict = None
    envelopes: dict = field(default_factory=dict)
    gradient_envelope: dict = None
    hypotheses_verified: bool = True
    notes: list = field(default_factory=list)

    def envelope(self, q):
        """Predicted bound ``t -> C * dev2(0)**(2/p) * t**(-1/p)`` for norm ``q``."""
        key = _qkey(q)
        if key not in self.envelopes:
            raise KeyError(f"no envelope constants for q={q}")
        pref = self.envelopes[key]["prefactor"]
        return lambda t: pref * np.asarray(t, dtype=float) ** (-1.0 / self.p)

    def to_dict(self):
        return _jsonable(asdict(self))


def _qkey(q):
    return "inf" if math.isinf(q) else repr(float(q))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def bounds_report(grid, weight, p, n=2, deltas=(0.0,), u0=None, sobolev_probes=40, seed=0):
    """Evaluate every explicit constant for this domain, weight and exponent.

    ``u0`` (optional) fixes ``dev2(0)`` for the envelopes and the extinction time.
    """
    p = check_exponent(p)
    q0 = p0(weight)
    dmax = (p - q0) / q0
    rep = BoundsReport(p=p, n=n, p0=q0, admissible_delta_max=dmax, hypotheses_verified=weight.hypotheses_verified)
    if not weight.hypotheses_verified:
        rep.notes.append("hypotheses unverified: no Muckenhoupt certificate for table weights")
    gamma_rigor = RIGOROUS if weight.hypotheses_verified else ESTIMATED

    dev2 = None
    if u0 is not None:
        u0 = check_field(grid, u0, "u0")
        dev2 = lq_norm(grid, u0 - average(grid, u0), 2)

    for delta in deltas:
        val = gamma_delta_p(weight, delta, p)
        rep.gamma_delta_p[repr(float(delta))] = _const(val, gamma_rigor, "weight-power integral")
        q = 1.0 + delta
        c, rig, src = poincare_bound(grid, q)
        rep.poincare[_qkey(q)] = _const(c, rig, src)
        rigor = RIGOROUS if (rig == RIGOROUS and gamma_rigor == RIGOROUS) else ESTIMATED
        env = {"q": q, "constant": c * val, "rigor": rigor}
        if dev2 is not None:
            env["prefactor"] = c * val * dev2 ** (2 / p)
        rep.envelopes[_qkey(q)] = env

    c2 = poincare_bound(grid, 2.0)
    rep.poincare[_qkey(2.0)] = _const(*c2)
    if dev2 is not None:
        rep.gradient_envelope = {
            "constant": 2.0 / abs(p - 2.0),
            "prefactor": 2.0 / abs(p - 2.0) * dev2**2,
            "rigor": RIGOROUS,
            "form": "energy_p(t) <= prefactor / t",
        }

    # uniform bound: needs p0 < p/n and n-1 < delta < dmax
    if q0 < p / n and n - 1 < dmax:
        d_inf = 0.5 * (n - 1 + dmax)
        s = 1.0 + d_inf
        ct, _, src = sobolev_embedding_estimate(grid, s, math.inf, sobolev_probes, seed)
        rep.sobolev_embedding[f"W1,{s:.6g}->Linf"] = _const(ct, ESTIMATED, src)
        cp, _, _ = poincare_bound(grid, s)
        c_star = ct * (cp**s + 1) ** (1 / s)
        rep.c_star = {"delta": d_inf, **_const(c_star, ESTIMATED, "embedding estimate x Poincare bound")}
        g_inf = gamma_delta_p(weight, d_inf, p)
        env = {"q": math.inf, "delta": d_inf, "constant": c_star * g_inf, "rigor": ESTIMATED}
        if dev2 is not None:
            env["prefactor"] = c_star * g_inf * dev2 ** (2 / p)
        rep.envelopes["inf"] = env

    window = extinction_window(q0, n)
    if window is not None and window[0] < p < window[1]:
        rep.gamma_tilde = _const(gamma_tilde(weight, n, p), gamma_rigor, "weight-power integral")
        if u0 is not None:
            rep.T_star = extinction_bound(grid, u0, weight, p, n, sobolev_probes=sobolev_probes, seed=seed)
    return rep


def extinction_bound(grid, u0, weight, p, n=2, sobolev_probes=40, seed=0):
    """Finite-time extinction bound and the ODE data ``f' + alpha f^k <= 0`` behind it."""
    p = check_exponent(p)
    q0 = p0(weight)
    window = extinction_window(q0, n)
    if window is None:
        raise ValueError(f"extinction window is empty for p0={q0}, n={n}")
    if not window[0] < p < window[1]:
        raise ValueError(f"p={p} outside extinction window ({window[0]:g}, 2)")
    u0 = check_field(grid, u0, "u0")
    v = u0 - average(grid, u0)
    f0 = float(np.dot(v * v, grid.node_volume))
    r = 2.0 * n / (n + 2)
    c_emb, _, src = sobolev_embedding_estimate(grid, r, 2.0, sobolev_probes, seed)
    c_p, _, _ = poincare_bound(grid, r)
    g_t = gamma_tilde(weight, n, p)
    K = c_emb**p * (c_p**r + 1) ** ((n * p + 2 * p) / (2 * n)) * g_t
    return {
        "value": f0 ** (1 - p / 2) / (2 - p) * K,
        "rigor": ESTIMATED,
        "source": f"embedding constant estimated ({src})",
        "f0": f0,
        "alpha": 2.0 / K,
        "k": p / 2,
        "embedding_constant": c_emb,
        "poincare_constant": c_p,
        "gamma_tilde": g_t,
    }


def _ratio(value, bound):
    if value == 0:
        return 0.0
    return value / bound if bound > 0 else math.inf


def decay_envelope_check(records, report, q):
    """Compare ``dev_q(t)`` with the predicted envelope at every ``t > 0``.

    Rigorous envelopes give a pass/fail verdict with zero margin; estimated
    ones are report-only (``passed`` is None).
    """
    key = _qkey(q)
    env = report.envelopes.get(key)
    if env is None or "prefactor" not in env:
        raise KeyError(f"missing envelope constants for q={q}")
    bound = report.envelope(q)
    ratios = []
    for rec in records:
        if rec.t <= 0:
            continue
        ratios.append((rec.t, _ratio(rec.dev[float(q)], float(bound(rec.t)))))
    worst = max((r for _, r in ratios), default=0.0)
    passed = (worst <= 1.0) if env["rigor"] == RIGOROUS else None
    return {"q": float(q), "rigor": env["rigor"], "passed": passed, "worst_ratio": worst, "ratios": ratios}


def gradient_decay_check(records, report):
    """``energy_p(t) <= 2/|p-2| * dev2(0)^2 / t`` at every recorded ``t > 0``."""
    env = report.gradient_envelope
    if env is None:
        raise KeyError("report has no gradient envelope (u0 not supplied)")
    ratios = [(r.t, _ratio(r.energy_p * r.t, env["prefactor"])) for r in records if r.t > 0]
    worst = max((x for _, x in ratios), default=0.0)
    return {"rigor": RIGOROUS, "passed": worst <= 1.0, "worst_ratio": worst, "ratios": ratios}


def fit_decay_exponent(times, devs, window=(None, None)):
    """Least-squares slope of ``log dev`` against ``log t`` over a time window.

    Returns ``(slope, stderr)``.  Raises :class:`ExtinctTrajectoryError` when
    a deviation in the window is not positive.
    """
    t = np.asarray(times, dtype=float)
    d = np.asarray(devs, dtype=float)
    lo = -np.inf if window[0] is None else window[0]
    hi = np.inf if window[1] is None else window[1]
    sel = (t >= lo) & (t <= hi) & (t > 0)
    if np.any(d[sel] <= 0):
        raise ExtinctTrajectoryError("trajectory extinct inside the fitting window")
    if sel.sum() < 5:
        raise ValueError(f"need at least 5 points in the window, got {int(sel.sum())}")
    res = stats.linregress(np.log(t[sel]), np.log(d[sel]))
    return float(res.slope), float(res.stderr)


def detect_extinction(times, dev2, threshold):
    """First time ``dev2 <= threshold``, linearly interpolated inside the crossing interval."""
    if not threshold > 0:
        raise ValueError("threshold must be positive")
    t = np.asarray(times, dtype=float)
    d = np.asarray(dev2, dtype=float)
    hit = np.nonzero(d <= threshold)[0]
    if hit.size == 0:
        return None
    k = int(hit[0])
    if k == 0:
        return float(t[0])
    frac = (d[k - 1] - threshold) / (d[k - 1] - d[k])
    return float(t[k - 1] + frac * (t[k] - t[k - 1]))


def truncate(u, k):
    """Componentwise truncation at level ``k``: ``s`` if ``|s| < k`` else ``k * sign(s)``."""
    if not k > 0:
        raise ValueError("truncation level must be positive")
    u = np.asarray(u, dtype=float)
    return np.where(np.abs(u) < k, u, k * np.sign(u))
