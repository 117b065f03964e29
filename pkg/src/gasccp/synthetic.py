"""Synthetic transmission networks for experiments.

Each generator fixes a design operating point first (loads, source split,
pressure profile) and then derives Weymouth coefficients from it, so the base
case is feasible by construction. Bounds are placed so that the cheap source is
deliverability-limited: it sits at its upper pressure bound, compressors on its
path run at their maximum ratio and one critical node sits at its lower
bound. That pins the optimal pressures, which makes them learnable.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .network import CompressorSpec, GasNetwork, NodeSpec, PipelineSpec, SourceSpec

__all__ = ["Topology", "design_network", "seven_node_like", "twenty_node_like", "SYNTHETIC"]


@dataclass(frozen=True)
class Topology:
    n_nodes: int
    tree: tuple  # (parent, child, kind) with kind "pipe" or "comp"; parents precede children
    loops: tuple  # extra (u, v) pipelines
    sources: tuple  # (node, unit_cost)
    critical: int  # node whose lower pressure bound binds at the design point


def _tree_flows(topo: Topology, load, inj, loop_flow, gamma):
    """Signed parent->child flows on tree edges for given nodal balances."""
    net = np.array(load, float) - np.array(inj, float)
    for (u, v), f in zip(topo.loops, loop_flow):
        net[u] += f
        net[v] -= f
    demand = net.copy()
    flows = np.zeros(len(topo.tree))
    for k in reversed(range(len(topo.tree))):
        parent, child, kind = topo.tree[k]
        f = demand[child]
        flows[k] = f
        demand[parent] += f * (1.0 + gamma) if kind == "comp" else f
    return flows, demand[0]


def design_network(
    topo: Topology,
    seed: int,
    name: str,
    root_pressure: float = 120.0,
    drop: tuple = (0.03, 0.07),
    ratio: float = 1.25,
    gamma: float = 0.01,
    cheap_share: float = 0.65,
    load_range: tuple = (600.0, 1400.0),
    loop_share: float = 0.35,
    bound_slack: float = 0.2,
    linepack_share: float = 0.2,
) -> GasNetwork:
    rng = np.random.default_rng(seed)
    N = topo.n_nodes
    source_nodes = {n for n, _ in topo.sources}
    load = np.where(
        [k in source_nodes and k != topo.critical for k in range(N)], 0.0, rng.uniform(*load_range, size=N)
    )
    load[0] = 0.0
    total = load.sum()

    # cheap root source takes the remainder after the others' fixed shares
    others = [n for n, _ in topo.sources[1:]]
    inj = np.zeros(N)
    for n in others:
        inj[n] = (1.0 - cheap_share) * total / len(others)

    flows0, _ = _tree_flows(topo, load, inj, np.zeros(len(topo.loops)), gamma)
    mean_flow = np.mean(np.abs(flows0[[k for k, e in enumerate(topo.tree) if e[2] == "pipe"]]))

    def profile(loop_flow, drops):
        flows, _ = _tree_flows(topo, load, inj, loop_flow, gamma)
        pr = np.zeros(N)
        pr[0] = root_pressure
        coeff = np.zeros(len(topo.tree))
        for k, (parent, child, kind) in enumerate(topo.tree):
            if kind == "comp":
                if flows[k] <= 0:
                    raise ValueError("compressor would run backwards at the design point")
                pr[child] = ratio * pr[parent]
                continue
            f = flows[k] if abs(flows[k]) > 1e-3 * mean_flow else 1e-3 * mean_flow
            pr[child] = pr[parent] * (1.0 - np.sign(f) * drops[k])
            coeff[k] = abs(f) / np.sqrt(abs(pr[parent] ** 2 - pr[child] ** 2))
        return flows, pr, coeff

    # loops run downhill: guess directions from the loop-free profile, then
    # fall back to every sign pattern, smaller loop flows and redrawn drops
    for _attempt in range(20):
        drops = rng.uniform(*drop, size=len(topo.tree))
        _, pr0, _ = profile(np.zeros(len(topo.loops)), drops)
        guess = tuple(1.0 if pr0[u] >= pr0[v] else -1.0 for u, v in topo.loops)
        patterns = [guess] + [sg for sg in itertools.product((1.0, -1.0), repeat=len(topo.loops)) if sg != guess]
        for share, signs in itertools.product((loop_share, 0.5 * loop_share, 0.25 * loop_share), patterns):
            loop_flow = np.array(signs) * share * mean_flow
            flows, pr, coeff = profile(loop_flow, drops)
            if all((pr[u] - pr[v]) * sg > 1e-3 * root_pressure for (u, v), sg in zip(topo.loops, signs)):
                break
        else:
            continue
        break
    else:
        raise ValueError("could not route loop flow consistently with the pressure profile")
    loop_coeff = [abs(f) / np.sqrt(abs(pr[u] ** 2 - pr[v] ** 2)) for (u, v), f in zip(topo.loops, loop_flow)]

    nodes = []
    for k in range(N):
        lo = pr[k] if k == topo.critical else (1.0 - bound_slack) * pr[k]
        hi = pr[k] if k == 0 else (1.0 + bound_slack) * pr[k]
        nodes.append(NodeSpec(k + 1, round(float(lo), 6), round(float(hi), 6), round(float(load[k]), 6)))
    pipes, comps = [], []
    H = linepack_share * mean_flow / root_pressure
    for k, (parent, child, kind) in enumerate(topo.tree):
        cap = 2.0 * abs(flows[k]) + 0.5 * mean_flow
        if kind == "comp":
            comps.append(CompressorSpec(f"c{len(comps) + 1}", parent + 1, child + 1, gamma, ratio, round(float(cap), 6)))
        else:
            a, b = (parent, child) if flows[k] >= 0 else (child, parent)
            pipes.append(
                PipelineSpec(f"p{len(pipes) + 1}", a + 1, b + 1, round(float(coeff[k]), 9), round(float(cap), 6), round(float(H), 9))
            )
    for (u, v), f, c in zip(topo.loops, loop_flow, loop_coeff):
        a, b = (u, v) if f > 0 else (v, u)
        pipes.append(
            PipelineSpec(f"p{len(pipes) + 1}", a + 1, b + 1, round(float(c), 9), round(float(2.0 * abs(f) + 0.5 * mean_flow), 6), round(float(H), 9))
        )
    sources = [
        SourceSpec(f"s{k + 1}", n + 1, cost, 0.0, round(float(1.5 * total), 6)) for k, (n, cost) in enumerate(topo.sources)
    ]
    return GasNetwork(nodes, pipes, comps, sources, name=name).validate()


# 7 nodes: cheap supply at node 1 feeding through a compressor, expensive supply at the far end.
SEVEN_NODE = Topology(
    n_nodes=7,
    tree=((0, 1, "pipe"), (1, 2, "pipe"), (2, 3, "comp"), (3, 4, "pipe"), (3, 5, "pipe"), (5, 6, "pipe")),
    loops=(),
    sources=((0, 2.0), (6, 2.5)),
    critical=6,
)

# 20 nodes: tree with two compressors on the trunk plus two loops.
TWENTY_NODE = Topology(
    n_nodes=20,
    tree=(
        (0, 1, "pipe"), (1, 2, "pipe"), (2, 3, "comp"), (3, 4, "pipe"), (4, 5, "pipe"),
        (4, 6, "pipe"), (6, 7, "pipe"), (5, 8, "pipe"), (8, 9, "comp"), (9, 10, "pipe"),
        (10, 11, "pipe"), (11, 12, "pipe"), (10, 13, "pipe"), (13, 14, "pipe"), (1, 15, "pipe"),
        (15, 16, "pipe"), (12, 17, "pipe"), (17, 18, "pipe"), (14, 19, "pipe"),
    ),
    loops=((7, 8), (12, 14)),
    sources=((0, 2.0), (19, 2.5)),
    critical=19,
)


def seven_node_like(seed: int = 7) -> GasNetwork:
    return design_network(SEVEN_NODE, seed, "seven-node-like")


def twenty_node_like(seed: int = 20) -> GasNetwork:
    return design_network(TWENTY_NODE, seed, "twenty-node-like")


SYNTHETIC = {"seven": seven_node_like, "twenty": twenty_node_like}
