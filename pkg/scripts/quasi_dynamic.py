"""Multi-slot run on the twenty-node network: linepack bookkeeping and the
constant-load comparison against the replicated steady state."""

import argparse

import numpy as np

from gasccp.ccp import cold_start, run_ccp, warm_start_from_pressures
from gasccp.model import build_instance, build_steady_state, linepack_from_pressures
from gasccp.network import Scenario, sample_scenarios
from gasccp.pipeline import presolve_scenario
from gasccp.synthetic import twenty_node_like


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--slots", type=int, default=6)
    ap.add_argument("--scenarios", type=int, default=5)
    ap.add_argument("--fluctuation", type=float, default=0.1)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    T = args.slots
    net = twenty_node_like()

    steady = presolve_scenario(net, Scenario.constant(net), restarts=6, seed=args.seed)
    base = build_steady_state(net, Scenario.constant(net))
    pressures = base.pressures(steady.solution.values)[0]
    lp = linepack_from_pressures(net, pressures)

    const = build_instance(net, Scenario.constant(net, T).with_initial_linepack(lp))
    res = run_ccp(const, warm_start_from_pressures(const, np.tile(pressures, (T, 1))))
    print(f"steady optimum {steady.objective:.6f}; constant load over {T} slots {res.objective:.6f} "
          f"(relative difference {abs(res.objective - T * steady.objective) / (T * steady.objective):.1e})")

    print(f"\n{'scenario':>8} {'status':>12} {'iters':>5} {'objective':>11} {'aggregate':>10} {'telescope':>10}")
    for sc in sample_scenarios(net, args.scenarios, args.fluctuation, T, seed=args.seed):
        inst = build_instance(net, sc.with_initial_linepack(lp))
        r = run_ccp(inst, cold_start(inst, [args.seed, sc.scenario_id]))
        if not r.converged:
            print(f"{sc.scenario_id:>8} {r.status:>12} {r.iterations:>5}")
            continue
        x = r.solution.values
        M, M0 = x[inst.M], inst.initial_linepack
        agg = abs(M[-1].sum() - M0.sum()) / M0.sum()
        tel = np.abs(M[-1] - M0 - (x[inst.q_in] - x[inst.q_out]).sum(axis=0)).max()
        print(f"{sc.scenario_id:>8} {r.status:>12} {r.iterations:>5} {r.objective:11.5f} {agg:10.1e} {tel:10.1e}")


if __name__ == "__main__":
    main()
