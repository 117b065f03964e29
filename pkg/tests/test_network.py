import copy
import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gasccp.network import (
    NetworkParseError,
    NetworkValidationError,
    Scenario,
    dump_network,
    load_network,
    network_from_dict,
    sample_scenarios,
    scenarios_from_csv,
    scenarios_to_csv,
)
from gasccp.synthetic import SYNTHETIC

from .conftest import DATA

T1_DOC = json.loads((DATA / "t1.json").read_text())


def _doc(**edits):
    doc = copy.deepcopy(T1_DOC)
    for path, value in edits.items():
        section, k, field = path.split(".")
        doc[section][int(k)][field] = value
    return doc


def test_t1_example_document():
    net = load_network((DATA / "t1.json").read_text())
    assert net.name == "T1"
    assert len(net.nodes) == 2 and len(net.pipelines) == 1
    assert net.base_load.tolist() == [0.0, 3.0]
    assert net.pressure_unit == "Psig"


def test_dangling_reference_names_node():
    with pytest.raises(NetworkValidationError) as err:
        network_from_dict(_doc(**{"pipelines.0.to_node": 99}))
    assert err.value.element == 99
    assert "99" in str(err.value)


def test_degenerate_pressure_bounds_rejected():
    with pytest.raises(NetworkValidationError) as err:
        network_from_dict(_doc(**{"nodes.1.pi_min": 10.0}))
    assert err.value.element == 2


@pytest.mark.parametrize(
    "edit, element",
    [
        ({"nodes.0.pi_min": -1.0}, 1),
        ({"nodes.0.pi_min": 11.0}, 1),
        ({"nodes.1.base_load": -0.5}, 2),
        ({"pipelines.0.weymouth_coefficient": 0.0}, 12),
        ({"pipelines.0.f_max": 0.0}, 12),
        ({"pipelines.0.linepack_coefficient": -1.0}, 12),
        ({"pipelines.0.to_node": 1}, 12),
        ({"sources.0.g_min": 11.0}, 1),
        ({"sources.0.g_min": -1.0}, 1),
        ({"sources.0.unit_cost": -1.0}, 1),
        ({"sources.0.node": 7}, 7),
    ],
)
def test_each_element_invariant_is_enforced(edit, element):
    with pytest.raises(NetworkValidationError) as err:
        network_from_dict(_doc(**edit))
    assert err.value.element == element


def _with_compressor(**fields):
    doc = copy.deepcopy(T1_DOC)
    doc["nodes"].append({"id": 3, "pi_min": 1.0, "pi_max": 10.0, "base_load": 1.0})
    comp = {"id": "c", "from_node": 2, "to_node": 3, "gamma": 0.01, "r_max": 2.0, "fc_max": 5.0}
    comp.update(fields)
    doc["compressors"] = [comp]
    return doc


@pytest.mark.parametrize(
    "fields",
    [{"gamma": 1.0}, {"gamma": -0.1}, {"r_max": 0.9}, {"fc_max": 0.0}, {"to_node": 2}, {"to_node": 42}],
)
def test_compressor_invariants(fields):
    with pytest.raises(NetworkValidationError):
        network_from_dict(_with_compressor(**fields))


def test_valid_compressor_accepted():
    net = network_from_dict(_with_compressor())
    assert net.compressors[0].r_max == 2.0


def test_duplicate_ids_rejected():
    doc = copy.deepcopy(T1_DOC)
    doc["nodes"][1]["id"] = 1
    with pytest.raises(NetworkValidationError, match="duplicate node"):
        network_from_dict(doc)
    doc = copy.deepcopy(T1_DOC)
    doc["pipelines"].append(dict(doc["pipelines"][0]))
    with pytest.raises(NetworkValidationError, match="duplicate pipeline"):
        network_from_dict(doc)


def test_needs_a_source():
    doc = copy.deepcopy(T1_DOC)
    doc["sources"] = []
    with pytest.raises(NetworkValidationError, match="source"):
        network_from_dict(doc)


def test_disconnected_network_rejected():
    doc = copy.deepcopy(T1_DOC)
    doc["nodes"].append({"id": 5, "pi_min": 1.0, "pi_max": 2.0, "base_load": 0.0})
    with pytest.raises(NetworkValidationError) as err:
        network_from_dict(doc)
    assert err.value.element == 5


@pytest.mark.parametrize(
    "text",
    ["{not json", "[]", '{"nodes": []}', json.dumps({**T1_DOC, "extra": 1, "nodes": [{"id": 1}]})],
)
def test_parse_errors(text):
    with pytest.raises(NetworkParseError):
        load_network(text)


def test_unknown_field_is_a_parse_error():
    doc = _doc(**{"nodes.0.colour": "red"})
    with pytest.raises(NetworkParseError, match="unknown"):
        network_from_dict(doc)


@pytest.mark.parametrize("name", ["t1.json", "t2.json"])
def test_round_trip_tiny(name):
    net = load_network((DATA / name).read_text())
    assert load_network(dump_network(net)) == net


@given(st.sampled_from(sorted(SYNTHETIC)), st.integers(0, 10_000))
def test_synthetic_networks_validate_and_round_trip(kind, seed):
    net = SYNTHETIC[kind](seed)
    assert net.validate() is net
    assert load_network(dump_network(net)) == net


def test_packaged_networks_match_data_directory():
    from importlib import resources

    for name in ("t1.json", "t2.json"):
        packaged = resources.files("gasccp").joinpath("networks", name).read_text()
        assert load_network(packaged) == load_network((DATA / name).read_text())


# ---------------------------------------------------------------- scenarios


def test_sample_fifty_within_ten_percent(t1):
    scs = sample_scenarios(t1, 50, 0.10, 1, seed=7)
    assert len(scs) == 50
    lam = np.array([s.lam for s in scs])
    assert lam.min() >= 0.9 and lam.max() <= 1.1
    assert all(s.is_steady_state for s in scs)


def test_zero_fluctuation_gives_unit_multipliers(t1):
    scs = sample_scenarios(t1, 3, 0.0, 1, seed=1)
    assert all(np.all(s.lam == 1.0) for s in scs)


def test_multi_slot_sampling_is_reproducible(t1):
    a = sample_scenarios(t1, 2, 0.10, 6, seed=5)
    b = sample_scenarios(t1, 2, 0.10, 6, seed=5)
    assert all(s.lam.shape == (6, 2) for s in a)
    assert all(x.lam.tobytes() == y.lam.tobytes() for x, y in zip(a, b))
    assert a != sample_scenarios(t1, 2, 0.10, 6, seed=6)


@given(
    count=st.integers(1, 20),
    fluctuation=st.floats(0.0, 0.99),
    horizon=st.integers(1, 4),
    seed=st.integers(0, 2**31),
)
def test_sampled_multipliers_stay_in_band(t1, count, fluctuation, horizon, seed):
    lam = np.array([s.lam for s in sample_scenarios(t1, count, fluctuation, horizon, seed)])
    assert lam.shape == (count, horizon, 2)
    assert np.all(lam >= 1.0 - fluctuation) and np.all(lam <= 1.0 + fluctuation)


@pytest.mark.parametrize("kwargs", [{"count": 0}, {"fluctuation": 1.0}, {"fluctuation": -0.1}, {"horizon": 0}])
def test_sampling_preconditions(t1, kwargs):
    args = {"count": 2, "fluctuation": 0.1, "horizon": 1, "seed": 0, **kwargs}
    with pytest.raises(ValueError):
        sample_scenarios(t1, **args)


def test_scenario_rejects_nonpositive_multiplier():
    with pytest.raises(ValueError):
        Scenario(np.array([[1.0, 0.0]]))


def test_scenario_is_read_only():
    sc = Scenario(np.ones((1, 2)))
    with pytest.raises(ValueError):
        sc.lam[0, 0] = 2.0


def test_scenario_csv_round_trip(twenty):
    scs = sample_scenarios(twenty, 3, 0.1, 4, seed=2)
    text = scenarios_to_csv(twenty, scs)
    assert text.splitlines()[0] == "scenario_id,node_id,time_slot,lambda"
    assert text.endswith("\n")
    assert scenarios_from_csv(twenty, text) == scs


def test_scenario_csv_example_file(t1):
    scs = scenarios_from_csv(t1, (DATA / "t1_scenarios.csv").read_text())
    assert len(scs) >= 1
    assert all(np.all((s.lam >= 0.9) & (s.lam <= 1.1)) for s in scs)


def test_scenario_csv_missing_entries(t1):
    with pytest.raises(ValueError, match="missing"):
        scenarios_from_csv(t1, "scenario_id,node_id,time_slot,lambda\n0,1,1,1.0\n")
    with pytest.raises(ValueError, match="unknown node"):
        scenarios_from_csv(t1, "scenario_id,node_id,time_slot,lambda\n0,9,1,1.0\n")
