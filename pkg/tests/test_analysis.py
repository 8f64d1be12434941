import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from plapflow import analysis
from plapflow.analysis import (
    ESTIMATED,
    RIGOROUS,
    ExtinctTrajectoryError,
    bounds_report,
    decay_envelope_check,
    detect_extinction,
    diagnostics,
    dissipation_residual,
    extinction_bound,
    fit_decay_exponent,
    ode_comparison,
    poincare_bound,
    record,
    sobolev_embedding_estimate,
    truncate,
)
from plapflow.energy import EnergyParams
from plapflow.flow import AdaptiveEps, StepParams, TimeGrid, evolve
from plapflow.geometry import build_grid, gradient, lq_norm, nodal_field
from plapflow.weights import constant_weight, table_weight


@pytest.fixture
def grid():
    return build_grid(17, 17)


def test_record_constant(grid):
    r = record(grid, np.full(grid.n_nodes, 4.0), 0.0, constant_weight(grid), 3.0, extra_q=(3,))
    assert all(v == 0 for v in r.dev.values())
    assert r.energy_p == 0 and r.f_u == 0
    assert r.mass == pytest.approx(4.0)


def test_record_linear(grid):
    r = record(grid, nodal_field(grid, lambda x, y: x - 0.5), 0.0, constant_weight(grid), 3.0)
    assert abs(r.mass) <= 1e-15
    assert r.dev_linf == pytest.approx(0.5)
    assert r.energy_p == pytest.approx(1.0)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_f_u_is_dev2_squared(seed):
    g = build_grid(6, 5)
    u = np.random.default_rng(seed).normal(size=g.n_nodes) * 10
    r = record(g, u, 0.0, constant_weight(g), 1.5)
    assert r.f_u == pytest.approx(r.dev_l2**2, rel=1e-12)
    assert min(r.dev.values()) >= 0


def test_dissipation_residual_constant(grid):
    w = constant_weight(grid)
    recs = [record(grid, np.ones(grid.n_nodes), t, w, 3.0) for t in (0.0, 0.1, 0.2)]
    assert np.all(dissipation_residual(recs) == 0)
    with pytest.raises(ValueError):
        dissipation_residual(recs[:1])


def test_dissipation_residual_halves():
    g = build_grid(17, 17)
    u0 = nodal_field(g, lambda x, y: np.cos(np.pi * x) * np.cos(np.pi * y))
    P = EnergyParams(3.0, 0.0, constant_weight(g))
    res = []
    for h in (2e-3, 1e-3):
        # one record per step so the backward difference pairs exactly with the scheme
        times = np.arange(1, int(round(0.04 / h)) + 1) * h
        res.append(dissipation_residual(diagnostics(evolve(u0, times, StepParams(h), P))).max())
    assert res[1] <= 0.05
    assert 0.4 <= res[1] / res[0] <= 0.7


def test_ode_comparison_examples():
    t_star, f = ode_comparison(1.0, 2.0, 0.5)
    assert t_star == 1.0
    assert f(0.5) == pytest.approx(0.25, rel=1e-15)
    assert f(2.0) == 0.0
    assert ode_comparison(1.0, 2.0, 0.75)[0] == 2.0
    t0, f0 = ode_comparison(0.0, 2.0, 0.5)
    assert t0 == 0.0 and np.all(f0(np.linspace(0, 3, 7)) == 0)


@pytest.mark.parametrize("f0, alpha, k", [(1.0, 2.0, 0.5), (1.0, 2.0, 0.75), (3.7, 0.4, 0.2)])
def test_ode_comparison_solves_ode(f0, alpha, k):
    t_star, f = ode_comparison(f0, alpha, k)
    t = np.linspace(0.01, 0.99, 50) * t_star
    dt = 1e-6 * t_star
    fd = (f(t + dt) - f(t - dt)) / (2 * dt)
    rhs = -alpha * f(t) ** k
    assert np.max(np.abs(fd - rhs) / np.abs(rhs)) <= 1e-6


def test_ode_comparison_rejects():
    with pytest.raises(ValueError):
        ode_comparison(1.0, 1.0, 1.0)


def test_poincare_bounds(grid):
    d = math.sqrt(2)
    assert poincare_bound(grid, 2.0)[0] == pytest.approx(d / math.pi)
    assert poincare_bound(grid, 1.0)[0] == pytest.approx(d / 2)
    assert poincare_bound(grid, 2.0)[1] == RIGOROUS
    # the exact L2 constant of the unit square is 1/pi; the L1 ratio of x - 1/2 is 1/4
    assert poincare_bound(grid, 2.0)[0] >= 1 / math.pi
    assert poincare_bound(grid, 1.0)[0] >= 0.25
    with pytest.raises(ValueError):
        poincare_bound(grid, 0.5)


def test_poincare_bound_dominates_discrete_ratio(grid):
    # discrete Rayleigh quotient of the first cosine mode on this grid
    u = nodal_field(grid, lambda x, y: np.cos(np.pi * x))
    num = lq_norm(grid, u, 2)
    den = math.sqrt(np.dot(gradient(grid, u) ** 2, grid.edge_volume))
    for q in (1.5, 2.0, 3.0):
        assert poincare_bound(grid, q)[0] > 0
    assert num / den <= poincare_bound(grid, 2.0)[0]


def test_sobolev_estimate(grid):
    a = sobolev_embedding_estimate(grid, 1.0, 2.0, n_random=5, seed=3, res=64)
    b = sobolev_embedding_estimate(grid, 1.0, 2.0, n_random=5, seed=3, res=64)
    assert a == b
    assert a[0] >= 1.0  # constant probe on a unit-area domain
    assert a[1] == ESTIMATED


def test_bounds_report_constant_weight(grid):
    u0 = nodal_field(grid, lambda x, y: np.cos(np.pi * x) * np.cos(np.pi * y))
    rep = bounds_report(grid, constant_weight(grid), 3.0, u0=u0, sobolev_probes=4)
    assert rep.gamma_delta_p["0.0"]["value"] == pytest.approx(2 ** (1 / 3), rel=1e-12)
    assert rep.admissible_delta_max == 2.0
    assert rep.T_star is None
    env = rep.envelopes["1.0"]
    assert env["rigor"] == RIGOROUS
    assert env["constant"] == pytest.approx(math.sqrt(2) / 2 * 2 ** (1 / 3))
    d = rep.to_dict()
    assert d["p0"] == 1.0 and "inf" in d["envelopes"]


def test_bounds_report_extinction_window(grid):
    u0 = nodal_field(grid, lambda x, y: x)
    rep = bounds_report(grid, constant_weight(grid), 1.5, u0=u0, sobolev_probes=4)
    assert rep.T_star is not None and math.isfinite(rep.T_star["value"])
    assert rep.T_star["rigor"] == ESTIMATED


def test_bounds_report_table_flags(grid):
    w = table_weight(grid, np.linspace(1, 2, 256))
    rep = bounds_report(grid, w, 3.0, sobolev_probes=2)
    assert not rep.hypotheses_verified
    assert rep.gamma_delta_p["0.0"]["rigor"] == ESTIMATED


def test_extinction_bound_constant_u0(grid):
    tb = extinction_bound(grid, np.full(grid.n_nodes, 2.0), constant_weight(grid), 1.5, sobolev_probes=2)
    assert tb["value"] == 0.0


def test_extinction_bound_unit_constants(grid, monkeypatch):
    monkeypatch.setattr(analysis, "sobolev_embedding_estimate", lambda *a, **k: (1.0, ESTIMATED, "stub"))
    monkeypatch.setattr(analysis, "poincare_bound", lambda *a, **k: (0.0, RIGOROUS, "stub"))
    # f_u(0) = 1: a field with zero mean and unit L2 norm
    u0 = nodal_field(grid, lambda x, y: np.cos(np.pi * x))
    u0 = u0 / lq_norm(grid, u0, 2)
    tb = extinction_bound(grid, u0, constant_weight(grid), 1.5)
    # (C_p^r + 1) = 1 with a zero Poincare stub, so every bracket is 1
    assert tb["value"] == pytest.approx(1 / (2 - 1.5), rel=1e-12)
    assert tb["k"] == 0.75 and tb["alpha"] == pytest.approx(2.0)


def test_extinction_bound_window(grid):
    with pytest.raises(ValueError):
        extinction_bound(grid, np.zeros(grid.n_nodes), constant_weight(grid), 3.0)


def test_envelope_constant_trajectory(grid):
    u0 = np.full(grid.n_nodes, 1.0)
    rep = bounds_report(grid, constant_weight(grid), 3.0, u0=u0, sobolev_probes=2)
    recs = [record(grid, u0, t, constant_weight(grid), 3.0) for t in (0.0, 1.0, 2.0)]
    out = decay_envelope_check(recs, rep, 1.0)
    assert out["passed"] is True and out["worst_ratio"] == 0.0
    est = decay_envelope_check(recs, rep, math.inf)
    assert est["passed"] is None


def test_fit_exact_power_laws():
    t = np.geomspace(0.1, 10, 20)
    s, err = fit_decay_exponent(t, t ** (-1 / 3))
    assert s == pytest.approx(-1 / 3, abs=1e-12)
    assert fit_decay_exponent(t, 5 * t**-0.8)[0] == pytest.approx(-0.8, abs=1e-12)
    s, _ = fit_decay_exponent(t, t**-2.0, window=(1.0, 10.0))
    assert s == pytest.approx(-2.0, abs=1e-12)


def test_fit_errors():
    t = np.linspace(1, 2, 10)
    d = np.ones(10)
    d[5] = 0.0
    with pytest.raises(ExtinctTrajectoryError):
        fit_decay_exponent(t, d)
    with pytest.raises(ValueError):
        fit_decay_exponent(t[:3], np.ones(3))


def test_detect_extinction():
    assert detect_extinction([0.0, 1.0], [0.0, 0.0], 1e-12) == 0.0
    assert detect_extinction([0.0, 1.0, 2.0], [1.0, 0.5, 0.25], 0.1) is None
    assert detect_extinction([0.0, 1.0, 2.0], [1.0, 0.5, 0.0], 0.25) == pytest.approx(1.5)
    with pytest.raises(ValueError):
        detect_extinction([0.0], [1.0], 0.0)


def test_truncate_examples():
    u = np.array([0.5, -0.2])
    np.testing.assert_array_equal(truncate(u, 1.0), u)
    np.testing.assert_array_equal(truncate(np.array([3.0, -5.0]), 2.0), [2.0, -2.0])
    with pytest.raises(ValueError):
        truncate(u, 0.0)


def test_truncation_contraction():
    g = build_grid(9, 9)
    u = 3 * np.random.default_rng(1).normal(size=g.n_nodes)
    P = EnergyParams(3.0, 0.0, constant_weight(g))
    tu = truncate(u, 1.5)
    a = evolve(u, TimeGrid.uniform(0.1, 5), StepParams(0.01), P)
    b = evolve(tu, TimeGrid.uniform(0.1, 5), StepParams(0.01), P)
    for q in (1.0, 2.0, 4.0):
        d0 = lq_norm(g, tu - u, q)
        assert all(lq_norm(g, x - y, q) <= d0 * (1 + 1e-9) for x, y in zip(a.states, b.states))


def test_diagnostics_mass_and_monotone_f():
    g = build_grid(9, 9)
    u0 = np.random.default_rng(3).normal(size=g.n_nodes)
    P = EnergyParams(1.5, 0.0, constant_weight(g))
    recs = diagnostics(evolve(u0, TimeGrid.uniform(0.2, 10), StepParams(0.01, eps_policy=AdaptiveEps()), P), extra_q=(3,))
    m0 = recs[0].mass
    assert max(abs(r.mass - m0) for r in recs) <= 1e-10 * (1 + abs(m0))
    f = [r.f_u for r in recs]
    assert all(b <= a + 1e-12 for a, b in zip(f[:-1], f[1:]))
    assert 3.0 in recs[0].dev
