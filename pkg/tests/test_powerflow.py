import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from comvr.network import build_admittance, load_network
from comvr.powerflow import (
    PowerFlowError,
    jacobian,
    losses_kw,
    max_voltage,
    min_voltage,
    mismatch,
    solve,
    voltage_profile_metric,
)
from comvr.testdata import fixture_path, load_rhodes

from oracles import random_radial, sweep_solve, two_bus_voltage


def _net_load(model, scale=1.0):
    return -model.load_vector() * scale


def test_newton_matches_sweep_on_200_random_feeders():
    rng = np.random.default_rng(7)
    t0 = time.perf_counter()
    for _ in range(200):
        n = int(rng.integers(3, 11))
        m = random_radial(rng, n)
        s = _net_load(m)
        # some DG so that reverse flows are covered too
        gen_at = rng.random(n) < 0.3
        s = s + gen_at * rng.uniform(0, 500, n)
        s[m.index[m.head]] = 0
        sol = solve(m, s)
        ref = sweep_solve(m, s)
        np.testing.assert_allclose(np.abs(sol.v - ref), 0, atol=1e-6)
    assert time.perf_counter() - t0 < 30.0


def _fd_jacobian(m, vm, va, h=1e-6):
    """Central differences of the calculated injections w.r.t. (va, vm), non-slack buses."""
    Y = build_admittance(m)
    pq = [i for i, b in enumerate(m.buses) if b.kind != "feeder-head"]

    def inj(vm_, va_):
        V = vm_ * np.exp(1j * va_)
        s = (V * np.conj(Y @ V))[pq]
        return np.concatenate([s.real, s.imag])

    cols = []
    for which in ("va", "vm"):
        for i in pq:
            d = np.zeros(len(vm))
            d[i] = h
            if which == "va":
                col = (inj(vm, va + d) - inj(vm, va - d)) / (2 * h)
            else:
                # the solver's voltage columns are scaled by |V|
                col = vm[i] * (inj(vm + d, va) - inj(vm - d, va)) / (2 * h)
            cols.append(col)
    return np.array(cols).T


def test_jacobian_matches_finite_differences():
    rng = np.random.default_rng(11)
    for _ in range(40):
        m = random_radial(rng, int(rng.integers(3, 11)))
        n = len(m.buses)
        vm = rng.uniform(0.9, 1.05, n)
        va = rng.uniform(-0.1, 0.1, n)
        J = jacobian(m, vm, va).full
        F = _fd_jacobian(m, vm, va)
        scale = np.maximum(np.abs(F), 1.0)
        assert np.max(np.abs(J - F) / scale) < 1e-5


def test_jacobian_blocks_shape():
    m = load_network(fixture_path("y_network"))
    jac = jacobian(m, np.ones(4), np.zeros(4))
    for block in (jac.H, jac.N, jac.J, jac.L):
        assert block.shape == (3, 3)


def test_two_bus_closed_form():
    m = load_network(fixture_path("two_bus"))
    for scale in (1.0, 50.0, 300.0, 1000.0):
        load = m.bus(1).base_load * scale
        sol = solve(m, _net_load(m, scale))
        z = (0.1 + 0.1j) / m.z_base
        v = two_bus_voltage(load.real / 1e4, load.imag / 1e4, z.real, z.imag)
        assert sol.vm[1] == pytest.approx(v, abs=1e-9)


def test_power_balance():
    m, _ = load_rhodes()
    s = _net_load(m, 0.45)
    sol = solve(m, s)
    loss = losses_kw(m, sol)
    assert loss.real > 0
    # slack injection = total load - generation + losses
    assert sol.slack_power_kw == pytest.approx(m.total_load * 0.45 + loss, rel=1e-7)
    assert np.max(np.abs(mismatch(m, sol.vm, sol.va, s / 1e4))) <= 1e-8


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(3, 10), st.floats(0.0, 2.0))
def test_losses_non_negative(seed, n, scale):
    m = random_radial(np.random.default_rng(seed), n)
    sol = solve(m, _net_load(m, scale))
    assert losses_kw(m, sol).real >= -1e-9
    assert sol.max_mismatch <= 1e-8


def test_deterministic():
    m, _ = load_rhodes()
    a = solve(m, _net_load(m, 0.5))
    b = solve(m, _net_load(m, 0.5))
    assert np.array_equal(a.vm, b.vm) and np.array_equal(a.va, b.va)


def test_no_load_is_flat():
    m = load_network(fixture_path("y_network"))
    sol = solve(m, np.zeros(4))
    assert sol.iterations == 0
    assert np.all(sol.vm == 1.0)


def test_divergence_reported():
    m = load_network(fixture_path("two_bus"))
    with pytest.raises(PowerFlowError):
        solve(m, _net_load(m, 1e6), max_iter=30)


def test_extremes_and_metric():
    m = load_network(fixture_path("y_network"))
    sol = solve(m, _net_load(m, 20.0))
    bus, v = min_voltage(sol)
    assert bus == 2 and v == sol.vm.min()
    assert max_voltage(sol) == (0, 1.0)
    assert voltage_profile_metric(sol) == pytest.approx(np.sum((sol.vm - 1) ** 2))
    assert voltage_profile_metric([0.9, 1.1], 1.0) == pytest.approx(0.02)


def test_rhodes_critical_voltage():
    m, _ = load_rhodes()
    sol = solve(m, _net_load(m, 4000.0 / 8100.0))
    assert sol.vm.min() == pytest.approx(0.90, abs=0.0006)
