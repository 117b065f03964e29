"""Compare cold-started CCP with the exhaustive grid oracle on the two tiny
packaged networks."""

import argparse

from gasccp.ccp import cold_start, run_ccp
from gasccp.cli import resolve_network
from gasccp.model import build_steady_state
from gasccp.network import sample_scenarios
from gasccp.pipeline import brute_force_oracle


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--count", type=int, default=20)
    ap.add_argument("--resolution", type=float, default=1e-3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    for ref in ("t1", "t2"):
        net = resolve_network(ref)
        worst = 0.0
        for sc in sample_scenarios(net, args.count, 0.1, 1, seed=args.seed):
            oracle = brute_force_oracle(net, sc, args.resolution)
            inst = build_steady_state(net, sc)
            res = run_ccp(inst, cold_start(inst, [args.seed, sc.scenario_id]))
            gap = (res.objective - oracle.objective) / oracle.objective
            worst = max(worst, abs(gap))
        print(f"{net.name}: {args.count} scenarios, worst |relative gap| vs oracle {worst:.2e}")


if __name__ == "__main__":
    main()
