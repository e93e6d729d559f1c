import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from comvr.network import (
    Bus,
    NetworkModel,
    ParseError,
    Segment,
    TopologyError,
    UnitError,
    build_admittance,
    load_network,
    model_from_dict,
    model_to_dict,
    power_factor_q,
    save_network,
)
from comvr.testdata import TOTAL_PEAK_KW, fixture_path, load_rhodes

from oracles import random_radial


def small_dict():
    return {
        "base": {"kv": 20.0, "mva": 10.0},
        "buses": [
            {"id": 1, "kind": "feeder-head"},
            {"id": 2, "kind": "load", "p_kw": 100.0},
            {"id": 3, "kind": "pole"},
        ],
        "segments": [
            {"from": 1, "to": 2, "conductor": "CU-95", "length_km": 2.0},
            {"from": 2, "to": 3, "r_ohm": 0.5, "x_ohm": 0.25},
        ],
    }


def test_conductor_impedance_from_length():
    m = model_from_dict(small_dict())
    assert m.segments[0].impedance == pytest.approx(complex(0.386, 0.680))
    assert m.segments[1].impedance == 0.5 + 0.25j


def test_default_power_factor():
    m = model_from_dict(small_dict())
    assert m.bus(2).base_load.imag == pytest.approx(100.0 * np.tan(np.arccos(0.95)))
    assert power_factor_q(0.0) == 0.0


def test_round_trip(tmp_path):
    m, _ = load_rhodes()
    p = tmp_path / "net.json"
    save_network(m, p)
    again = load_network(p)
    assert again == m
    assert again.conductors == m.conductors


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(3, 12))
def test_round_trip_random(seed, n):
    m = random_radial(np.random.default_rng(seed), n)
    assert model_from_dict(json.loads(json.dumps(model_to_dict(m)))) == m


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(3, 10))
def test_admittance_invariant_under_bus_permutation(seed, n):
    rng = np.random.default_rng(seed)
    m = random_radial(rng, n)
    perm = rng.permutation(n)
    shuffled = NetworkModel(tuple(m.buses[k] for k in perm), m.segments, m.base_kv, m.base_mva)
    Y1 = build_admittance(m).toarray()
    Y2 = build_admittance(shuffled).toarray()
    i1 = [m.index[b] for b in sorted(m.index)]
    i2 = [shuffled.index[b] for b in sorted(shuffled.index)]
    np.testing.assert_allclose(Y1[np.ix_(i1, i1)], Y2[np.ix_(i2, i2)], rtol=0, atol=0)


def test_admittance_two_bus_by_hand():
    m = load_network(fixture_path("two_bus"))
    y = 1.0 / ((0.1 + 0.1j) / 40.0)
    np.testing.assert_allclose(build_admittance(m).toarray(), [[y, -y], [-y, y]], rtol=1e-14)
    np.testing.assert_allclose(build_admittance(m, per_unit=False).toarray(), [[5 - 5j, -5 + 5j], [-5 + 5j, 5 - 5j]], rtol=1e-14)


def test_admittance_rows_sum_to_zero():
    m, _ = load_rhodes()
    Y = build_admittance(m)
    assert np.max(np.abs(np.asarray(Y.sum(axis=1)))) < 1e-9 * np.max(np.abs(Y.data))


def test_rhodes_totals():
    m, fleet = load_rhodes()
    loads = [b for b in m.buses if b.kind == "load"]
    assert len(loads) == 119
    assert m.total_load.real == pytest.approx(TOTAL_PEAK_KW, rel=1e-12)
    assert sum(a.rated_kw for a in fleet) == pytest.approx(3390.0)
    assert sum(a.rated_kw for a in fleet if a.is_dg) == pytest.approx(2120.0)


def test_cycle_rejected():
    d = small_dict()
    d["segments"].append({"from": 3, "to": 1, "r_ohm": 1.0, "x_ohm": 1.0})
    with pytest.raises(TopologyError, match="cycle"):
        model_from_dict(d)


def test_disconnected_rejected():
    d = small_dict()
    d["buses"].append({"id": 4, "kind": "pole"})
    d["buses"].append({"id": 5, "kind": "pole"})
    d["segments"].append({"from": 4, "to": 5, "r_ohm": 1.0, "x_ohm": 1.0})
    with pytest.raises(TopologyError):
        model_from_dict(d)


def test_zero_impedance_rejected():
    d = small_dict()
    d["segments"][1] = {"from": 2, "to": 3, "r_ohm": 0.0, "x_ohm": 0.0}
    with pytest.raises(ValueError, match="zero impedance"):
        model_from_dict(d)


@pytest.mark.parametrize(
    "mutate, exc",
    [
        (lambda d: d.pop("base"), UnitError),
        (lambda d: d["base"].update(kv="x"), UnitError),
        (lambda d: d["segments"][0].update(conductor="UNOBTAINIUM"), ParseError),
        (lambda d: d["buses"][1].update(kind="teapot"), ParseError),
        (lambda d: d["segments"][0].update(to=99), TopologyError),
        (lambda d: d["buses"][0].update(kind="load"), TopologyError),
    ],
)
def test_bad_files(mutate, exc):
    d = small_dict()
    mutate(d)
    with pytest.raises(exc):
        model_from_dict(d)


def test_malformed_json(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    with pytest.raises(ParseError):
        load_network(p)


def test_impedance_scale():
    m = load_network(fixture_path("y_network"))
    m2 = m.with_impedance_scale(2.0)
    assert [s.impedance for s in m2.segments] == [2 * s.impedance for s in m.segments]


def test_duplicate_ids():
    with pytest.raises(TopologyError):
        NetworkModel((Bus(0, "feeder-head"), Bus(0)), (Segment(0, 0, 1j),), 20.0, 10.0)
