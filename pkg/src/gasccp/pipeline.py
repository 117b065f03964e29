"""Orchestration: training-set presolve, predictor training, grid oracle and
the warm/cold benchmark harness."""

from __future__ import annotations

import csv
import io
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from importlib import resources
from typing import Callable, Sequence

import numpy as np

from .ann import Dataset, Mlp, TrainConfig, train
from .ccp import CcpConfig, CcpResult, cold_start, run_ccp, warm_start_from_pressures
from .model import ProblemInstance, build_instance, build_steady_state, evaluate_solution, linepack_from_pressures
from .network import GasNetwork, Scenario

__all__ = [
    "METHODS",
    "PresolveSummary",
    "PressurePredictor",
    "OracleResult",
    "OracleInfeasible",
    "NetworkTooLarge",
    "BenchmarkConfig",
    "BenchmarkReport",
    "presolve_scenario",
    "build_training_set",
    "default_initial_linepack",
    "train_predictor",
    "brute_force_oracle",
    "run_benchmark",
    "validate_report",
    "dataset_to_csv",
    "dataset_from_csv",
    "parallel_map",
]

METHODS = ("cold-ccp", "warm-ccp", "oracle")


def parallel_map(fn: Callable, items: Sequence, workers: int = 1) -> list:
    """Order-preserving map, fanned out to a process pool when workers > 1."""
    if workers < 1:
        raise ValueError("workers must be >= 1")
    if workers == 1 or len(items) < 2:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items, chunksize=max(1, len(items) // (4 * workers))))


def _better(a: CcpResult | None, b: CcpResult | None) -> CcpResult | None:
    if b is None or not b.converged:
        return a
    if a is None or not a.converged or b.objective < a.objective:
        return b
    return a


# ---------------------------------------------------------------- presolve


def presolve_scenario(
    network: GasNetwork, scenario: Scenario, restarts: int = 8, seed: int = 0, config: CcpConfig = CcpConfig()
) -> CcpResult | None:
    """Best converged result over ``restarts`` cold starts, or None."""
    if restarts < 1:
        raise ValueError("restarts must be >= 1")
    inst = build_instance(network, scenario)
    best = None
    for r in range(restarts):
        best = _better(best, run_ccp(inst, cold_start(inst, [seed, scenario.scenario_id, r]), config))
    return best


def _presolve_task(args):
    network, scenario, restarts, seed, config = args
    res = presolve_scenario(network, scenario, restarts, seed, config)
    if res is None:
        return None
    inst = build_instance(network, scenario)
    return res.objective, inst.pressures(res.solution.values)


def _refine_task(args):
    network, scenario, starts, config = args
    inst = build_instance(network, scenario)
    best = None
    for pr in starts:
        best = _better(best, run_ccp(inst, warm_start_from_pressures(inst, pr), config))
    if best is None:
        return None
    return best.objective, inst.pressures(best.solution.values)


@dataclass
class PresolveSummary:
    requested: int
    kept: int
    dropped: int
    refined: int
    objectives: np.ndarray
    scenario_ids: list[int]


def build_training_set(
    network: GasNetwork,
    scenarios: Sequence[Scenario],
    restarts: int = 8,
    seed: int = 0,
    config: CcpConfig = CcpConfig(),
    neighbors: int = 3,
    workers: int = 1,
) -> tuple[Dataset, PresolveSummary]:
    """Presolve each scenario by multi-start cold CCP and collect
    (flattened load multipliers, flattened converged pressures) pairs.

    After the cold pass each scenario is re-solved warm-started from the
    pressures of its ``neighbors`` nearest scenarios (in load space); the
    cheaper of the two is kept. Unconverged scenarios are dropped and counted.
    """
    scenarios = list(scenarios)
    first = parallel_map(_presolve_task, [(network, sc, restarts, seed, config) for sc in scenarios], workers)
    keep = [k for k, r in enumerate(first) if r is not None]
    if not keep:
        raise RuntimeError(f"presolve failed on all {len(scenarios)} scenarios")
    obj = np.array([first[k][0] for k in keep])
    press = [first[k][1] for k in keep]
    lam = np.array([scenarios[k].lam.ravel() for k in keep])

    refined = 0
    if neighbors > 0 and len(keep) > 1:
        d = np.linalg.norm(lam[:, None, :] - lam[None, :, :], axis=2)
        np.fill_diagonal(d, np.inf)
        order = np.argsort(d, axis=1, kind="stable")[:, : min(neighbors, len(keep) - 1)]
        tasks = [(network, scenarios[keep[i]], [press[j] for j in order[i]], config) for i in range(len(keep))]
        for i, r in enumerate(parallel_map(_refine_task, tasks, workers)):
            if r is not None and r[0] < obj[i] - 1e-9 * abs(obj[i]):
                obj[i], press[i] = r
                refined += 1

    targets = np.array([p.ravel() for p in press])
    ids = [scenarios[k].scenario_id for k in keep]
    data = Dataset(lam, targets, meta={"scenario_ids": ids, "objectives": obj.tolist(), "horizon": scenarios[0].horizon})
    summary = PresolveSummary(len(scenarios), len(keep), len(scenarios) - len(keep), refined, obj, ids)
    return data, summary


def default_initial_linepack(
    network: GasNetwork, restarts: int = 8, seed: int = 0, config: CcpConfig = CcpConfig()
) -> dict:
    """Linepack implied by the presolved steady state at nominal load."""
    res = presolve_scenario(network, Scenario.constant(network), restarts, seed, config)
    if res is None:
        raise RuntimeError("nominal steady state did not converge; cannot derive initial linepack")
    inst = build_steady_state(network, Scenario.constant(network))
    return linepack_from_pressures(network, inst.pressures(res.solution.values)[0])


# --------------------------------------------------------------- predictor


@dataclass
class PressurePredictor:
    """One network per time slot; each maps the flattened load multipliers to
    that slot's nodal pressures."""

    models: list[Mlp]
    n_nodes: int

    @property
    def horizon(self) -> int:
        return len(self.models)

    def __call__(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, float))
        return np.hstack([m.predict(x) for m in self.models])

    def pressures(self, scenario: Scenario) -> np.ndarray:
        if scenario.horizon != self.horizon or scenario.lam.shape[1] != self.n_nodes:
            raise ValueError(
                f"predictor covers {self.horizon} slot(s) x {self.n_nodes} nodes, "
                f"scenario has {scenario.lam.shape}"
            )
        return self(scenario.lam.ravel())[0].reshape(self.horizon, self.n_nodes)


def train_predictor(
    data: Dataset, n_nodes: int, config: TrainConfig = TrainConfig(), hidden: Sequence[int] | None = None
) -> tuple[PressurePredictor, list[list[float]]]:
    horizon = data.targets.shape[1] // n_nodes
    if horizon * n_nodes != data.targets.shape[1]:
        raise ValueError("target width is not a multiple of the node count")
    hidden = tuple(hidden or config.hidden or (2 * n_nodes,))
    models, histories = [], []
    for t in range(horizon):
        sizes = [data.inputs.shape[1], *hidden, n_nodes]
        model, hist = train(Mlp.init(sizes, seed=config.seed + t), data.columns(slice(t * n_nodes, (t + 1) * n_nodes)), config)
        models.append(model)
        histories.append(hist)
    return PressurePredictor(models, n_nodes), histories


# ------------------------------------------------------------------ oracle


class OracleInfeasible(ValueError):
    pass


class NetworkTooLarge(ValueError):
    pass


@dataclass
class OracleResult:
    objective: float
    point: dict[str, float]
    resolution: float
    evaluations: int

    def vector(self, instance: ProblemInstance) -> np.ndarray:
        return np.array([self.point[name] for name in instance.var_names])


def _tree_order(network: GasNetwork, root: int):
    """BFS parents over pipelines and compressors from ``root``."""
    N = len(network.nodes)
    adj: list[list] = [[] for _ in range(N)]
    for k, p in enumerate(network.pipelines):
        a, b = network.node_index(p.from_node), network.node_index(p.to_node)
        adj[a].append((b, "pipe", k))
        adj[b].append((a, "pipe", k))
    for k, c in enumerate(network.compressors):
        a, b = network.node_index(c.from_node), network.node_index(c.to_node)
        adj[a].append((b, "comp", k))
        adj[b].append((a, "comp", k))
    parent = [None] * N
    order, seen = [root], {root}
    for u in order:
        for v, kind, k in adj[u]:
            if v not in seen:
                seen.add(v)
                parent[v] = (u, kind, k)
                order.append(v)
    return order, parent


def _tree_flows(network: GasNetwork, demand: np.ndarray, order, parent):
    """Edge flows in file orientation for nodal net demand (load - injection);
    returns (F, FC, W, root residual)."""
    D = demand.astype(float).copy()
    F = np.zeros(len(network.pipelines))
    FC = np.zeros(len(network.compressors))
    for v in reversed(order[1:]):
        u, kind, k = parent[v]
        if kind == "pipe":
            F[k] = D[v] if network.node_index(network.pipelines[k].from_node) == u else -D[v]
            D[u] += D[v]
        else:
            c = network.compressors[k]
            if network.node_index(c.from_node) == u:
                FC[k] = D[v]
                D[u] += D[v] * (1.0 + c.gamma)
            else:
                FC[k] = -D[v] / (1.0 + c.gamma)
                D[u] -= FC[k]
    W = np.array([c.gamma for c in network.compressors]) * FC
    return F, FC, W, D[order[0]]


def brute_force_oracle(
    network: GasNetwork,
    scenario: Scenario,
    resolution: float = 1e-3,
    max_dof: int = 3,
    max_evaluations: int = 500_000_000,
    tol: float = 1e-9,
) -> OracleResult:
    """Exhaustive grid reference for tiny tree networks in steady state.

    Source outputs other than the last source are gridded at ``resolution``;
    the last source balances the network. On a tree the flows then follow from
    nodal balance, and every pipeline-connected component has one free
    pressure level (gridded at ``resolution``) from which the rest follow by
    the Weymouth relation. Candidates are scanned in cost order and the first
    one admitting a pressure assignment within all bounds is returned.
    """
    if scenario.horizon != 1:
        raise ValueError("the grid oracle handles steady-state scenarios only")
    N = len(network.nodes)
    if len(network.pipelines) + len(network.compressors) != N - 1:
        raise NetworkTooLarge("grid oracle requires a tree network")

    # pressure components joined by pipelines
    comp_of = list(range(N))

    def find(a):
        while comp_of[a] != a:
            comp_of[a] = comp_of[comp_of[a]]
            a = comp_of[a]
        return a

    m_idx, n_idx = network.pipeline_ends()
    for a, b in zip(m_idx, n_idx):
        comp_of[find(a)] = find(b)
    roots = sorted({find(a) for a in range(N)})
    members = [[v for v in range(N) if find(v) == r] for r in roots]
    dof = len(network.sources) - 1 + len(roots)
    if dof > max_dof:
        raise NetworkTooLarge(f"{dof} degrees of freedom exceed the oracle limit of {max_dof}")

    srcs = network.sources
    slack = srcs[-1]
    grids = [np.arange(s.g_min, s.g_max + 0.5 * resolution, resolution) for s in srcs[:-1]]
    # worst case: every supply candidate scans the full product of pressure levels
    per_candidate = np.prod([float(network.pi_max[m[0]] - network.pi_min[m[0]]) / resolution + 1 for m in members])
    worst = float(np.prod([g.size for g in grids])) * per_candidate
    if worst > max_evaluations:
        raise NetworkTooLarge(f"worst-case grid of {worst:.3g} points exceeds the evaluation budget")
    combos = np.array(np.meshgrid(*grids, indexing="ij")).reshape(len(grids), -1).T if grids else np.zeros((1, 0))
    load = scenario.lam[0] * network.base_load
    order, parent = _tree_order(network, network.node_index(slack.node))
    costs = np.array([s.unit_cost for s in srcs])

    candidates = []
    for row in combos:
        demand = load.copy()
        for s, g in zip(srcs[:-1], row):
            demand[network.node_index(s.node)] -= g
        F, FC, W, g_slack = _tree_flows(network, demand, order, parent)
        G = np.append(row, g_slack)
        candidates.append((float(costs @ G), G, F, FC, W))
    candidates.sort(key=lambda c: c[0])

    C = np.array([p.weymouth_coefficient for p in network.pipelines])
    fmax = np.array([p.f_max for p in network.pipelines])
    fcmax = np.array([c.fc_max for c in network.compressors])
    gmin = np.array([s.g_min for s in srcs])
    gmax = np.array([s.g_max for s in srcs])
    pmin, pmax = network.pi_min, network.pi_max
    evaluations = 0
    for cost, G, F, FC, W in candidates:
        evaluations += 1
        if (G < gmin - tol).any() or (G > gmax + tol).any():
            continue
        if (np.abs(F) > fmax + tol).any() or (FC < -tol).any() or (FC > fcmax + tol).any():
            continue
        # squared-pressure offsets inside each component
        offset = np.full(N, np.nan)
        levels = []
        for mem in members:
            ref = mem[0]
            offset[ref] = 0.0
            pending = True
            while pending:
                pending = False
                for k, (a, b) in enumerate(zip(m_idx, n_idx)):
                    drop = F[k] * abs(F[k]) / C[k] ** 2
                    if np.isnan(offset[b]) and not np.isnan(offset[a]):
                        offset[b] = offset[a] - drop
                        pending = True
                    elif np.isnan(offset[a]) and not np.isnan(offset[b]):
                        offset[a] = offset[b] + drop
                        pending = True
            grid = np.arange(pmin[ref], pmax[ref] + 0.5 * resolution, resolution)
            evaluations += grid.size
            sq = grid[:, None] ** 2 + offset[mem][None, :]
            ok = (sq >= pmin[mem] ** 2 - tol).all(axis=1) & (sq <= pmax[mem] ** 2 + tol).all(axis=1)
            levels.append(grid[ok])
        if any(lv.size == 0 for lv in levels):
            continue
        found = _couple_components(network, members, offset, levels, find, roots, max_evaluations - evaluations, tol)
        evaluations += found[1]
        if found[0] is None:
            continue
        pressures = found[0]
        point = {}
        for s, g in zip(srcs, G):
            point[f"G[{s.id}]"] = float(g)
        for p, f in zip(network.pipelines, F):
            point[f"F[{p.id}]"] = float(f)
        for nd, pr in zip(network.nodes, pressures):
            point[f"pi[{nd.id}]"] = float(pr)
        for c, fc, w in zip(network.compressors, FC, W):
            point[f"FC[{c.id}]"] = float(fc)
            point[f"W[{c.id}]"] = float(w)
        return OracleResult(cost, point, resolution, evaluations)
    raise OracleInfeasible(f"no feasible grid point after {evaluations} evaluations")


def _couple_components(network, members, offset, levels, find, roots, budget, tol):
    """Search the product of component levels for one satisfying every
    compressor ratio constraint; returns (pressures | None, evaluations)."""
    comp_pos = {r: k for k, r in enumerate(roots)}
    checks = []
    for c in network.compressors:
        i, j = network.node_index(c.from_node), network.node_index(c.to_node)
        checks.append((comp_pos[find(i)], i, comp_pos[find(j)], j, c.r_max))
    sizes = [lv.size for lv in levels]
    total = int(np.prod(sizes))
    if total > budget:
        raise NetworkTooLarge(f"pressure grid of {total} points exceeds the evaluation budget")
    lead, rest = levels[0], levels[1:]
    rest_mesh = np.array(np.meshgrid(*rest, indexing="ij")).reshape(len(rest), -1) if rest else np.zeros((0, 1))
    chunk = max(1, 4_000_000 // rest_mesh.shape[1])
    evaluations = 0
    for start in range(0, lead.size, chunk):
        block = lead[start:start + chunk]
        lv = [np.repeat(block, rest_mesh.shape[1])] + [np.tile(r, block.size) for r in rest_mesh]
        evaluations += lv[0].size
        ok = np.ones(lv[0].size, bool)
        for ci, i, cj, j, r in checks:
            pi_i = np.sqrt(lv[ci] ** 2 + offset[i])
            pi_j = np.sqrt(lv[cj] ** 2 + offset[j])
            ok &= (pi_i <= pi_j + tol) & (pi_j <= r * pi_i + tol)
        hit = np.flatnonzero(ok)
        if hit.size:
            h = hit[0]
            pressures = np.zeros(len(offset))
            for k, mem in enumerate(members):
                pressures[mem] = np.sqrt(lv[k][h] ** 2 + offset[mem])
            return pressures, evaluations
    return None, evaluations


# --------------------------------------------------------------- benchmark


@dataclass(frozen=True)
class BenchmarkConfig:
    ccp: CcpConfig = CcpConfig()
    seed: int = 0
    reference_restarts: int = 4
    oracle_resolution: float = 1e-3
    workers: int = 1

    def to_json(self) -> dict:
        d = asdict(self)
        d.pop("workers")
        return d


@dataclass
class BenchmarkReport:
    network: str
    methods: list[str]
    reference: str
    config: dict
    rows: list[dict]
    details: list[dict] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "network": self.network,
            "methods": self.methods,
            "reference": self.reference,
            "config": self.config,
            "rows": self.rows,
            "details": self.details,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, allow_nan=False) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        cols = ["scenario_id", "method", "status", "iterations", "objective", "xi", "max_linear_residual", "gap", "wall_time"]
        w = csv.DictWriter(buf, cols, lineterminator="\n", extrasaction="ignore")
        w.writeheader()
        for d in self.details:
            w.writerow({k: ("" if d[k] is None else d[k]) for k in cols})
        return buf.getvalue()

    def numerics(self) -> dict:
        """Everything except wall-clock timings."""
        doc = self.to_json()
        for d in doc["details"]:
            d.pop("wall_time")
        for r in doc["rows"]:
            r.pop("mean_wall_time")
        return doc


def _none_if_nan(v):
    return None if v is None or not np.isfinite(v) else float(v)


def _bench_task(args):
    network, scenario, method, config, predictor = args
    inst = build_instance(network, scenario)
    t0 = time.perf_counter()
    x, iterations, status, evaluations = None, 0, "converged", None
    if method == "oracle":
        try:
            res = brute_force_oracle(network, scenario, config.oracle_resolution)
            x, evaluations = res.vector(inst), res.evaluations
        except OracleInfeasible:
            status = "infeasible"
    elif method in ("cold-ccp", "reference"):
        best = None
        seeds = [[config.seed, scenario.scenario_id]] if method == "cold-ccp" else [
            [config.seed, scenario.scenario_id, 1 + r] for r in range(config.reference_restarts)
        ]
        for s in seeds:
            r = run_ccp(inst, cold_start(inst, s), config.ccp)
            iterations += r.iterations
            best = r if best is None else _better(best, r)
        status = best.status
        x = None if best.solution is None else best.solution.values
    elif method == "warm-ccp":
        point = warm_start_from_pressures(inst, predictor.pressures(scenario))
        r = run_ccp(inst, point, config.ccp)
        iterations, status = r.iterations, r.status
        x = None if r.solution is None else r.solution.values
    else:
        raise ValueError(f"unknown method {method!r}")
    wall = time.perf_counter() - t0
    row = {
        "scenario_id": scenario.scenario_id,
        "method": method,
        "status": status,
        "iterations": iterations,
        "objective": None,
        "xi": None,
        "max_linear_residual": None,
        "gap": None,
        "wall_time": wall,
        "evaluations": evaluations,
    }
    if x is not None:
        rep = evaluate_solution(inst, x, config.ccp.flow_floor)
        row.update(objective=float(inst.objective @ x), xi=rep.xi, max_linear_residual=rep.max_linear_residual)
    return row


def run_benchmark(
    network: GasNetwork,
    scenarios: Sequence[Scenario],
    methods: Sequence[str],
    config: BenchmarkConfig = BenchmarkConfig(),
    predictor: PressurePredictor | None = None,
) -> BenchmarkReport:
    """Solve every scenario with every method and aggregate.

    Feasibility numbers are recomputed from each returned point. Gaps are
    relative to the oracle when it is among the methods, otherwise to the best
    converged objective over the listed methods plus extra cold restarts.
    """
    methods = list(dict.fromkeys(methods))
    bad = [m for m in methods if m not in METHODS]
    if bad or not methods:
        raise ValueError(f"methods must be a non-empty subset of {METHODS}, got {list(methods)}")
    if "warm-ccp" in methods and predictor is None:
        raise ValueError("warm-ccp needs a trained model")
    reference = "oracle" if "oracle" in methods else "best-of"
    run_methods = methods + (["reference"] if reference == "best-of" else [])
    tasks = [(network, sc, m, config, predictor) for sc in scenarios for m in run_methods]
    results = parallel_map(_bench_task, tasks, config.workers)

    by_scenario: dict[int, dict] = {}
    for r in results:
        by_scenario.setdefault(r["scenario_id"], {})[r["method"]] = r
    details = []
    for sid, per in by_scenario.items():
        if reference == "oracle":
            ref = per["oracle"]["objective"]
        else:
            objs = [r["objective"] for r in per.values() if r["status"] == "converged" and r["objective"] is not None]
            ref = min(objs) if objs else None
        for m in methods:
            r = per[m]
            if ref is not None and r["objective"] is not None and r["status"] == "converged":
                r["gap"] = (r["objective"] - ref) / abs(ref) if ref != 0 else r["objective"] - ref
            details.append(r)

    rows = []
    for m in methods:
        sel = [d for d in details if d["method"] == m]
        ok = [d for d in sel if d["status"] == "converged"]
        xis = [d["xi"] for d in ok]
        gaps = [d["gap"] for d in ok if d["gap"] is not None]
        rows.append({
            "method": m,
            "scenarios": len(sel),
            "converged": len(ok),
            "mean_wall_time": float(np.mean([d["wall_time"] for d in sel])),
            "mean_iterations": float(np.mean([d["iterations"] for d in sel])),
            "mean_gap": _none_if_nan(np.mean(gaps)) if gaps else None,
            "mean_xi": _none_if_nan(np.mean(xis)) if xis else None,
            "max_xi": _none_if_nan(np.max(xis)) if xis else None,
        })
    cfg = config.to_json()
    cfg["scenario_ids"] = [sc.scenario_id for sc in scenarios]
    return BenchmarkReport(network.name, methods, reference, cfg, rows, details)


def load_report_schema() -> dict:
    return json.loads(resources.files("gasccp").joinpath("report_schema.json").read_text())


def validate_report(doc: dict) -> None:
    """Raise jsonschema.ValidationError if ``doc`` does not match the report schema."""
    import jsonschema

    jsonschema.validate(doc, load_report_schema())


# ------------------------------------------------------------- dataset io


def dataset_to_csv(network: GasNetwork, data: Dataset) -> str:
    """One row per presolved scenario: id, objective, multipliers, pressures."""
    horizon = int(data.meta.get("horizon", 1))
    ids = data.meta.get("scenario_ids", list(range(len(data))))
    objs = data.meta.get("objectives", [float("nan")] * len(data))
    cells = [f"n{nd.id}_t{t + 1}" for t in range(horizon) for nd in network.nodes]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["scenario_id", "objective", *[f"lambda_{c}" for c in cells], *[f"pi_{c}" for c in cells]])
    for sid, obj, x, y in zip(ids, objs, data.inputs, data.targets):
        w.writerow([sid, repr(float(obj)), *[repr(float(v)) for v in x], *[repr(float(v)) for v in y]])
    return buf.getvalue()


def dataset_from_csv(network: GasNetwork, text: str) -> Dataset:
    rows = list(csv.reader(io.StringIO(text)))
    if len(rows) < 2:
        raise ValueError("dataset file has no rows")
    header, body = rows[0], rows[1:]
    n_in = sum(h.startswith("lambda_") for h in header)
    n_out = sum(h.startswith("pi_") for h in header)
    if header[:2] != ["scenario_id", "objective"] or n_in != n_out or n_in % len(network.nodes):
        raise ValueError("dataset header does not match the network")
    vals = np.array([[float(v) for v in r[2:]] for r in body])
    meta = {
        "scenario_ids": [int(r[0]) for r in body],
        "objectives": [float(r[1]) for r in body],
        "horizon": n_in // len(network.nodes),
    }
    return Dataset(vals[:, :n_in], vals[:, n_in:], meta=meta)
