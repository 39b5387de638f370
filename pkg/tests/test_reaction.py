import numpy as np
import pytest
from hypothesis import example, given, strategies as st
from scipy.integrate import quad, solve_ivp

from shockparticles.errors import ConfigError, DomainError
from shockparticles.flux import FluxFunction, builtin_flux
from shockparticles.integrator import EvolveOptions, evolve
from shockparticles.interpolant import Segment, cell_averages, l1_error
from shockparticles.particles import ParticleField
from shockparticles.problems import detonation_run, quartic_field
from shockparticles.reaction import (
    BistableSource, ReactionOptions, correction_coefficient, equilibrium_gap, evolve_reaction, neighbor_drifts,
    reaction_segment_integral, rhs_balance, sonic_maintenance, sonic_markers, traveling_wave_profile,
    trapezoid_source,
)

from oracles import c_oracle, gap_oracle

burgers = builtin_flux("burgers")
BETA = 0.8


def field(pts, flux=burgers):
    return ParticleField.from_particles(pts, flux)


def test_psi_examples():
    src = BistableSource(0.01, BETA)
    assert src.psi(BETA) == 0 and src.psi(0.0) == 0 and src.psi(1.0) == 0
    assert src.psi(0.9) == pytest.approx(0.9, rel=1e-14)


@pytest.mark.parametrize("tau, beta", [(0.0, 0.5), (-1.0, 0.5), (0.1, 0.0), (0.1, 1.0)])
def test_invalid_source(tau, beta):
    with pytest.raises(ConfigError):
        BistableSource(tau, beta)


def test_rhs_balance_examples():
    src = BistableSource(0.01, BETA)
    dx, dum, dup = rhs_balance(field([(0.3, BETA)]), src)
    assert dx[0] == pytest.approx(BETA) and dum[0] == 0 and dup[0] == 0
    dx, dum, dup = rhs_balance(field([(0, 1, 1), (1, 1, 0), (2, 0, 0)]), src)
    assert dx[1] == 0.5 and dum[1] == 0 and dup[1] == 0
    dx, dum, dup = rhs_balance(field([(0.0, 0.9)]), src)
    assert dx[0] == 0.9 and dum[0] == pytest.approx(0.9) and dup[0] == pytest.approx(0.9)


def test_correction_coefficient_examples():
    tau = 0.008
    src = BistableSource(tau, BETA)
    assert abs(correction_coefficient(burgers, src, 0.0)) == pytest.approx(0.16 / tau, rel=1e-13)
    assert abs(correction_coefficient(burgers, src, 1.0)) == pytest.approx(0.06 / tau, rel=1e-13)
    for v in (0.0, 0.3, 0.95, 1.0):
        assert correction_coefficient(burgers, src, v) == pytest.approx(c_oracle(tau, BETA, v, BETA), rel=1e-12)
    ratio = correction_coefficient(burgers, BistableSource(10 * tau, BETA), 0.0) / correction_coefficient(burgers, src, 0.0)
    assert ratio == pytest.approx(0.1, rel=1e-14)
    assert correction_coefficient(burgers, src, BETA) == 0.0


def test_correction_coefficient_quadrature_path():
    generic = FluxFunction(value=burgers.value, deriv=burgers.deriv, deriv2=burgers.deriv2,
                           inv_deriv=burgers.inv_deriv, range=(0.0, 1.0), polynomial=False)
    src = BistableSource(0.008, BETA)
    for v in (0.0, 0.5, 1.0):
        assert correction_coefficient(generic, src, v) == pytest.approx(correction_coefficient(burgers, src, v), rel=1e-10)


def test_reaction_segment_integral_examples():
    tau, g = 0.008, 0.05
    src = BistableSource(tau, BETA)
    assert reaction_segment_integral(Segment(0.3, 0.3, 0.0, BETA, burgers), src) == 0.0
    seg = Segment(0.0, g, 0.0, BETA, burgers)
    assert reaction_segment_integral(seg, src) == pytest.approx(-0.064 * g / tau, rel=1e-13)
    assert reaction_segment_integral(seg, BistableSource(np.inf, BETA)) == 0.0


@given(ul=st.floats(0.05, 1), ur=st.floats(0.05, 1), w=st.floats(0.01, 1))
@example(ul=0.05, ur=0.05000000000000001, w=1.0)
def test_reaction_segment_integral_matches_quadrature(ul, ur, w):
    quartic = builtin_flux("quartic")
    src = BistableSource(0.02, 0.6)
    seg = Segment(0.0, w, ul, ur, quartic)
    direct, _ = quad(lambda x: src.psi(seg.eval(x)), 0.0, w, epsabs=1e-13, epsrel=1e-12)
    assert reaction_segment_integral(seg, src) == pytest.approx(direct, rel=1e-8, abs=1e-10)


def test_exact_flow_against_ode_solver():
    src = BistableSource(0.01, BETA)
    u0 = np.array([0.0, 0.05, 0.5, BETA, 0.81, 0.99, 1.0])
    h = 0.013
    exact = src.flow(u0, h)
    for a, b in zip(u0, exact):
        sol = solve_ivp(lambda _, u: src.psi(u), (0, h), [a], method="DOP853", rtol=1e-13, atol=1e-15)
        assert b == pytest.approx(sol.y[0, -1], abs=1e-11)
    assert exact[0] == 0.0 and exact[3] == BETA and exact[-1] == 1.0


def test_trapezoid_source_converges_to_flow():
    src = BistableSource(0.01, BETA)
    u = np.array([0.3, 0.9])
    errs = [np.max(np.abs(trapezoid_source(u, src, h) - src.flow(u, h))) for h in (1e-3, 5e-4)]
    assert np.log2(errs[0] / errs[1]) == pytest.approx(3.0, abs=0.3)


def test_sonic_insertion_in_rising_segment():
    src = BistableSource(0.008, BETA)
    out = sonic_maintenance(field([(0, 0), (1, 1)]), src)
    ms = sonic_markers(out)
    assert len(ms) == 1 and ms[0].x == pytest.approx(0.8, abs=1e-15)
    assert out.um[ms[0].index] == out.up[ms[0].index] == BETA


def test_no_sonic_below_beta_or_at_shock():
    src = BistableSource(0.008, BETA)
    assert not sonic_markers(sonic_maintenance(field([(0, 0.1), (1, 0.5)]), src))
    assert not sonic_markers(sonic_maintenance(field([(0, 1, 1), (0.5, 1, 0), (1, 0, 0)]), src))


def test_sonic_demoted_when_not_straddled():
    src = BistableSource(0.008, BETA)
    f = sonic_maintenance(field([(0, 0), (1, 1)]), src)
    f.um[-1] = f.up[-1] = 0.5
    assert not sonic_markers(sonic_maintenance(f, src))


def test_sonic_hysteresis_prevents_duplicates():
    src = BistableSource(0.008, BETA)
    f = sonic_maintenance(field([(0, 0), (1, 1)]), src)
    assert len(sonic_markers(sonic_maintenance(f, src))) == 1


def test_non_constant_neighbour_is_copied():
    src = BistableSource(0.008, BETA)
    f = sonic_maintenance(field([(-1, 0.3), (0, 0), (1, 1)]), src)
    i = sonic_markers(f)[0].index
    # the left neighbour (0, 0) sits next to a 0.3 -> 0 ramp, so a characteristic copy takes the drift
    assert f.x[i - 1] == f.x[i - 2] == 0.0
    idx, _, _ = neighbor_drifts(f, src)
    assert i - 1 in idx


@pytest.mark.parametrize("u, expected", [(0.0, 5.0), (1.0, 10 / 3)])
def test_equilibrium_gap_examples(u, expected):
    tau = 0.008
    assert equilibrium_gap(burgers, BistableSource(tau, BETA), u) == pytest.approx(expected * tau, rel=1e-13)


def test_equilibrium_gap_linear_in_tau():
    gaps = [equilibrium_gap(burgers, BistableSource(t, BETA), 0.0) for t in (0.02, 0.01, 0.005)]
    assert gaps[0] / gaps[1] == pytest.approx(2.0) and gaps[1] / gaps[2] == pytest.approx(2.0)


def _three_particle(tau, left_factor, right_factor):
    x0 = 0.3
    return field([(x0 - left_factor * 5 * tau, 0.0), (x0, BETA), (x0 + right_factor * 10 / 3 * tau, 1.0)])


@pytest.mark.parametrize("tau", [0.024, 0.008])
def test_gaps_relax_to_equilibrium(tau):
    f0 = _three_particle(tau, 10, 10)
    # the slower relaxation rate is |c(1, beta)| = 0.06 / tau; run for ten e-foldings of it
    t_end = 10 * tau / 0.06
    res = evolve_reaction(f0, BistableSource(tau, BETA), ReactionOptions(evolve=EvolveOptions(dt=1 / 256, t_end=t_end)))
    left = np.array([g[1] for g in res.gap_history])
    right = np.array([g[2] for g in res.gap_history])
    for gaps, g_eq, u in ((left, 5 * tau, 0.0), (right, 10 / 3 * tau, 1.0)):
        assert np.all(np.diff(gaps) <= 1e-15)
        reached = np.flatnonzero(gaps <= 1.05 * g_eq)
        assert len(reached) and np.all(np.abs(gaps[reached[0]:] / g_eq - 1) <= 0.05)
        assert gaps[-1] == pytest.approx(gap_oracle(tau, BETA, u, gaps[0], t_end), rel=1e-6)


def test_sonic_particle_moves_at_sonic_speed():
    tau = 0.008
    res = evolve_reaction(_three_particle(tau, 3, 3), BistableSource(tau, BETA),
                          ReactionOptions(evolve=EvolveOptions(dt=1 / 64, t_end=0.2)))
    t, ids, x = (np.array(col) for col in zip(*res.marker_history))
    assert np.all(ids == ids[0])
    assert np.allclose(np.diff(x) / np.diff(t), BETA, rtol=0, atol=1e-10)


@pytest.mark.parametrize("tau", [0.024, 0.008, 0.004, 0.001])
def test_isolated_shock_speed_unaffected(tau):
    res = evolve_reaction(field([(0.5, 1.0, 0.0)]), BistableSource(tau, BETA),
                          ReactionOptions(evolve=EvolveOptions(t_end=0.4)))
    assert res.field.x[0] == pytest.approx(0.7, abs=1e-6 * 0.4)


def test_vanishing_source_reduces_to_conservation_law():
    opts = EvolveOptions(dt=1 / 128, t_end=1.0)
    plain = evolve(quartic_field(), opts).field
    src = BistableSource(np.inf, BETA)
    with_source = evolve_reaction(quartic_field(), src, ReactionOptions(evolve=opts)).field
    a, b = cell_averages(plain, 0, 1, 1000), cell_averages(with_source, 0, 1, 1000)
    assert l1_error(a, b, 1e-3) <= 1e-10


def test_logistic_profile():
    src = BistableSource(0.01, BETA)
    xi, v = traveling_wave_profile(src, burgers)
    shift = np.log(BETA / (1 - BETA))
    assert np.allclose(v, 1 / (1 + np.exp(-(xi + shift))), atol=1e-9)
    assert v[0] < 1e-8 and v[-1] > 1 - 1e-8
    mid = np.argmin(np.abs(xi))
    assert (v[mid + 1] - v[mid - 1]) / (xi[mid + 1] - xi[mid - 1]) == pytest.approx(0.16, rel=1e-3)


def test_profile_needs_convex_flux():
    concave = FluxFunction(value=lambda u: u * (1 - u), deriv=lambda u: 1 - 2 * u,
                           deriv2=lambda u: -2 * np.ones_like(np.asarray(u, float)), range=(0.0, 1.0))
    with pytest.raises(DomainError):
        traveling_wave_profile(BistableSource(0.01, BETA), concave)


def test_detonation_matches_profile_location():
    tau = 0.008
    run = detonation_run(tau, with_fv=False)
    x_marker, x_expected = run.marker_positions[0.4], run.expected_front[0.4]
    g_left = 5 * tau
    assert abs(x_marker - x_expected) <= g_left
    # the oracle's midpoint sits inside the particle-resolved wave, between marker and left neighbour
    xi, v = traveling_wave_profile(BistableSource(tau, BETA), burgers, tau_scaled=True)
    x_mid = x_marker + np.interp(0.5, v, xi)
    assert x_marker - run.left_gaps[0.4] <= x_mid <= x_marker


def test_implicit_mode_at_small_tau():
    tau = 0.001
    run = detonation_run(tau, opts=ReactionOptions(implicit=True), with_fv=False)
    assert run.marker_speed(0.2, 0.4) == pytest.approx(BETA, rel=1e-6)
    assert run.left_gaps[0.4] == pytest.approx(5 * tau, rel=0.2)
    assert run.right_gaps[0.4] == pytest.approx(10 / 3 * tau, rel=0.2)
