import json
from itertools import groupby

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gasccp.ccp import CcpConfig, cold_start, penalty_schedule, run_ccp, warm_start_from_pressures
from gasccp.model import build_instance, build_steady_state, evaluate_solution, linepack_from_pressures
from gasccp.network import Scenario, sample_scenarios


def test_default_parameters():
    cfg = CcpConfig()
    assert (cfg.zeta0, cfg.tau1, cfg.tau_max, cfg.kappa) == (1e-3, 1.0, 1000.0, 2.0)


@pytest.mark.parametrize(
    "kwargs", [{"zeta0": 0.0}, {"tau1": 0.0}, {"kappa": 1.0}, {"tau_max": 0.5}, {"max_iterations": 0}]
)
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        CcpConfig(**kwargs)


@given(
    tau1=st.floats(0.01, 10.0),
    kappa=st.floats(1.01, 5.0),
    cap=st.floats(10.0, 1e4),
    n=st.integers(1, 40),
)
def test_penalty_schedule_closed_form(tau1, kappa, cap, n):
    cfg = CcpConfig(tau1=tau1, kappa=kappa, tau_max=cap)
    taus = penalty_schedule(cfg, n)
    assert all(a <= b for a, b in zip(taus, taus[1:]))
    assert max(taus) <= cap
    for i, tau in enumerate(taus, start=1):
        assert tau == pytest.approx(min(kappa ** (i - 1) * tau1, cap), rel=1e-12)


# ------------------------------------------------------------- warm start


def test_warm_start_exact_t1(t1):
    inst = build_steady_state(t1, Scenario.constant(t1))
    p = warm_start_from_pressures(inst, [np.sqrt(10.0), 1.0])
    assert p.orientation.tolist() == [[1]]
    assert p.flow[0, 0] == pytest.approx(3.0)
    assert not p.low_confidence.any()


def test_warm_start_tie_is_low_confidence(t1):
    inst = build_steady_state(t1, Scenario.constant(t1))
    p = warm_start_from_pressures(inst, [4.0, 4.0])
    assert p.flow[0, 0] == 0.0
    assert p.orientation[0, 0] == 1
    assert p.low_confidence[0, 0]


def test_warm_start_clamps(t1):
    inst = build_steady_state(t1, Scenario.constant(t1))
    p = warm_start_from_pressures(inst, [12.0, 1.0])
    assert p.pressures[0, 0] == 10.0
    assert p.flow[0, 0] == pytest.approx(np.sqrt(99.0))


def test_warm_start_reverses_orientation(t1):
    inst = build_steady_state(t1, Scenario.constant(t1))
    p = warm_start_from_pressures(inst, [2.0, 3.0])
    assert p.orientation[0, 0] == -1
    assert p.flow[0, 0] == pytest.approx(np.sqrt(5.0))


def test_warm_start_needs_every_node(t1):
    inst = build_steady_state(t1, Scenario.constant(t1))
    with pytest.raises(ValueError):
        warm_start_from_pressures(inst, [2.0])
    with pytest.raises(ValueError):
        warm_start_from_pressures(inst, [2.0, np.nan])


# ------------------------------------------------------------- cold start


def test_cold_start_reproducible(t1):
    inst = build_steady_state(t1, Scenario.constant(t1))
    a, b = cold_start(inst, 3), cold_start(inst, 3)
    assert a.pressures.tobytes() == b.pressures.tobytes()
    assert np.all((a.pressures >= 1.0) & (a.pressures <= 10.0))


@given(seed=st.integers(0, 2**32 - 1))
def test_cold_start_orientation_fixed_by_file(twenty, seed):
    inst = build_steady_state(twenty, Scenario.constant(twenty))
    p = cold_start(inst, seed)
    assert np.all(p.orientation == 1)
    m, n = twenty.pipeline_ends()
    uphill = p.pressures[0, m] < p.pressures[0, n]
    assert np.all(p.flow[0, uphill] == 0.0)
    assert np.all((p.pressures >= twenty.pi_min) & (p.pressures <= twenty.pi_max))


# ------------------------------------------------------------------ loop


def test_exact_warm_start_converges_in_one_iteration(t1):
    inst = build_steady_state(t1, Scenario.constant(t1))
    res = run_ccp(inst, warm_start_from_pressures(inst, [np.sqrt(10.0), 1.0]))
    assert res.converged and res.iterations == 1
    assert res.objective == pytest.approx(3.0, abs=1e-6)
    assert res.xi < 1e-3
    assert res.trace[0].max_slack < 1e-6


@pytest.mark.parametrize("seed", range(5))
def test_cold_start_reaches_oracle_value_on_t1(t1, seed):
    inst = build_steady_state(t1, Scenario.constant(t1))
    res = run_ccp(inst, cold_start(inst, seed))
    assert res.converged and res.iterations >= 1
    assert res.objective == pytest.approx(3.0, rel=5e-3)


def test_iteration_budget_exhaustion(seven):
    sc = sample_scenarios(seven, 1, 0.1, 1, seed=3)[0]
    inst = build_steady_state(seven, sc)
    res = run_ccp(inst, cold_start(inst, 0), CcpConfig(max_iterations=1, zeta0=1e-14))
    assert res.status == "iteration-limit"
    assert res.iterations == 1 and np.isfinite(res.xi)


def test_result_json(t2):
    inst = build_steady_state(t2, Scenario.constant(t2))
    res = run_ccp(inst, cold_start(inst, 1))
    doc = json.loads(json.dumps(res.to_json()))
    assert doc["status"] == "converged"
    assert {"tau", "xi", "objective", "max_slack"} <= set(doc["trace"][0])
    assert doc["solution"]["values"]["W[23]"] == pytest.approx(0.02, abs=1e-6)


@settings(max_examples=15)
@given(scenario_seed=st.integers(0, 10_000), start_seed=st.integers(0, 10_000))
def test_loop_invariants_on_twenty_node(twenty, scenario_seed, start_seed):
    sc = sample_scenarios(twenty, 1, 0.1, 1, scenario_seed)[0]
    inst = build_steady_state(twenty, sc)
    res = run_ccp(inst, cold_start(inst, start_seed))
    assert res.status in ("converged", "iteration-limit", "subproblem-failed")
    if res.converged:
        rep = evaluate_solution(inst, res.solution)
        assert rep.xi < CcpConfig().zeta0
        assert rep.xi == pytest.approx(res.xi, abs=1e-12)
        assert rep.max_linear_residual < 1e-6
    taus = [r.tau for r in res.trace]
    assert taus == penalty_schedule(CcpConfig(), len(taus))
    # within a fixed penalty weight, the penalized objective does not increase
    for _, seg in groupby(res.trace, key=lambda r: r.tau):
        vals = [r.penalized_objective for r in seg]
        assert all(b <= a * (1 + 1e-6) for a, b in zip(vals, vals[1:]))


def test_multi_slot_run_keeps_linear_rows(twenty):
    lp = linepack_from_pressures(twenty, 0.5 * (twenty.pi_min + twenty.pi_max))
    sc = sample_scenarios(twenty, 1, 0.05, 2, seed=1)[0].with_initial_linepack(lp)
    inst = build_instance(twenty, sc)
    res = run_ccp(inst, cold_start(inst, 0))
    assert res.converged
    assert evaluate_solution(inst, res.solution).max_linear_residual < 1e-6


def test_direction_suspect_flags_are_shaped(seven):
    inst = build_steady_state(seven, Scenario.constant(seven))
    res = run_ccp(inst, cold_start(inst, 2))
    assert res.direction_suspect.shape == inst.F.shape
