import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from comvr.com import (
    NOISE_FLOOR,
    NoCenter,
    bus_currents,
    centers_from_currents,
    chain_net_currents,
    compute_all_centers,
    compute_center,
    estimate_bus_current,
    mass_diagram,
)
from comvr.controller import injections
from comvr.network import load_network
from comvr.powerflow import solve
from comvr.testdata import fixture_path, load_rhodes
from comvr.topology import extract_main_body

from oracles import center_by_definition

weights_st = st.lists(st.floats(1e-3, 1e3), min_size=1, max_size=20)


def _coords(n, draw_seed):
    return list(np.random.default_rng(draw_seed).uniform(0, 30, n))


def test_hand_examples():
    c = compute_center([1.0, 1.0], [0.2, 0.6])
    assert c.g == pytest.approx(0.4, rel=1e-12)
    assert c.delta_g == pytest.approx(0.2, rel=1e-12)
    c = compute_center([3.0, 1.0], [0.0, 0.4])
    assert c.g == pytest.approx(0.1, rel=1e-12)
    assert c.delta_g == pytest.approx(math.sqrt(0.03), rel=1e-12)


@pytest.mark.parametrize("w", [1e-3, 1.0, 7.5])
def test_single_point(w):
    c = compute_center([w], [3.25])
    assert c.g == 3.25 and c.delta_g == 0.0


def test_zero_variance_only_for_one_support_point():
    assert compute_center([1.0, 2.0, 0.0], [5.0, 5.0, 9.0]).delta_g == 0.0
    assert compute_center([1.0, 1e-9], [5.0, 5.0 + 1e-9]).delta_g > 0.0


def test_no_center():
    with pytest.raises(NoCenter):
        compute_center([], [])
    with pytest.raises(NoCenter):
        compute_center([0.0, 0.0], [1.0, 2.0])
    with pytest.raises(ValueError):
        compute_center([-1.0, 2.0], [1.0, 2.0])


@settings(max_examples=200, deadline=None)
@given(weights_st, st.integers(0, 2**32 - 1), st.floats(1e-3, 1e3))
def test_scale_invariance(w, seed, k):
    x = _coords(len(w), seed)
    a, b = compute_center(w, x), compute_center([k * v for v in w], x)
    assert b.g == pytest.approx(a.g, rel=1e-12, abs=1e-12)
    assert b.delta_g == pytest.approx(a.delta_g, rel=1e-12, abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(weights_st, st.integers(0, 2**32 - 1))
def test_convex_hull(w, seed):
    x = _coords(len(w), seed)
    c = compute_center(w, x)
    assert min(x) <= c.g <= max(x)
    assert c.delta_g >= 0.0


@settings(max_examples=200, deadline=None)
@given(weights_st, st.integers(0, 2**32 - 1), st.floats(-50, 50))
def test_translation(w, seed, shift):
    x = _coords(len(w), seed)
    a, b = compute_center(w, x), compute_center(w, [v + shift for v in x])
    assert b.g == pytest.approx(a.g + shift, rel=1e-12, abs=1e-12)
    assert b.delta_g == pytest.approx(a.delta_g, rel=1e-9, abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(weights_st, st.integers(0, 2**32 - 1))
def test_matches_definition(w, seed):
    x = _coords(len(w), seed)
    assume(len(set(x)) > 1)
    g, d = center_by_definition(w, x)
    c = compute_center(w, x)
    assert c.g == pytest.approx(g, rel=1e-12)
    assert c.delta_g == pytest.approx(d, rel=1e-9)
    assert c.total_weight == pytest.approx(sum(w), rel=1e-12)


def test_flat_profile_has_no_current():
    assert estimate_bus_current(1.0, 1.0, 1.0, 0.1 + 0.2j, 0.3 + 0.1j) == 0


@settings(max_examples=100, deadline=None)
@given(st.complex_numbers(max_magnitude=2), st.complex_numbers(min_magnitude=0.5, max_magnitude=1.2))
def test_pass_through_current_is_zero(i_through, vk):
    z1, z2 = 0.02 + 0.03j, 0.05 + 0.01j
    v_prev = vk + i_through * z1
    v_next = vk - i_through * z2
    assert abs(estimate_bus_current(v_prev, vk, v_next, z1, z2)) < 1e-12


def test_zero_impedance():
    with pytest.raises(ZeroDivisionError):
        estimate_bus_current(1.0, 1.0, 1.0, 0j, 1j)


def _fixture_solutions():
    """Converged solutions on every bundled network, with and without DG."""
    out = []
    for name in ("two_bus", "y_network"):
        m = load_network(fixture_path(name))
        for scale in (0.5, 5.0):
            out.append((m, solve(m, -m.load_vector() * scale)))
    m, fleet = load_rhodes()
    for scale in (0.2, 0.49):
        for dg in (False, True):
            sp = {a.id: (0.8 * a.rated_kw if dg and a.is_dg else 0.0) for a in fleet}
            s, _, _ = injections(m, m.load_vector() * scale, fleet, sp)
            out.append((m, solve(m, s)))
    return out


def test_bus_current_estimate_matches_power_flow():
    for m, sol in _fixture_solutions():
        body = extract_main_body(m)
        est = chain_net_currents(m, body, sol)
        V = sol.v
        for k, b in enumerate(body.chain[1:]):
            if body.branches[b]:
                continue
            i = m.index[b]
            assert abs(est[k] - np.conj(sol.s_injection[i] / V[i])) < 1e-6
        # Kirchhoff at the head: everything the chain buses inject is drawn back from the head
        head = m.index[m.head]
        i_head = np.conj(sol.s_injection[head] / V[head])
        assert abs(est.sum() + i_head) < 1e-5


def test_no_dg_means_no_generation_center():
    m, fleet = load_rhodes()
    s, load, gen = injections(m, m.load_vector() * 0.4, fleet, {a.id: 0.0 for a in fleet})
    c = compute_all_centers(m, extract_main_body(m), solve(m, s), load, gen)
    assert c.g_G is None
    assert c.g_GL.g == pytest.approx(c.g_L.g, abs=1e-6)


def test_generation_near_head_is_left_of_load():
    m, fleet = load_rhodes()
    body = extract_main_body(m)
    near = [a for a in fleet if a.is_dg and body.coords[body.coupling[a.bus]] < 5.0]
    sp = {a.id: (a.rated_kw if a in near else 0.0) for a in fleet}
    s, load, gen = injections(m, m.load_vector() * 0.4, fleet, sp)
    c = compute_all_centers(m, body, solve(m, s), load, gen)
    assert c.g_G.g < c.g_L.g


def test_local_compensation_leaves_no_net_center():
    m = load_network(fixture_path("y_network"))
    body = extract_main_body(m)
    load = m.load_vector()
    sol = solve(m, np.zeros(len(load)))  # every load met on the spot
    cur = bus_currents(m, body, sol, load, load)
    centers = centers_from_currents(cur)
    assert centers.g_GL is None
    assert centers.g_G.g == pytest.approx(centers.g_L.g)


def test_segment_filter_and_noise_floor():
    m, fleet = load_rhodes()
    body = extract_main_body(m)
    s, load, gen = injections(m, m.load_vector() * 0.4, fleet, {a.id: 0.0 for a in fleet})
    cur = bus_currents(m, body, solve(m, s), load, gen)
    part = centers_from_currents(cur, segment=(10.0, 20.0))
    assert 10.0 <= part.g_L.g <= 20.0
    real = centers_from_currents(cur, weighting="real-part")
    assert real.g_L.g == pytest.approx(centers_from_currents(cur).g_L.g, abs=0.5)
    assert NOISE_FLOOR == 1e-6
    text = mass_diagram(cur, part)
    assert "g_GL  |" in text and "ohm" in text
