"""Gas network data model, JSON/CSV formats and load-scenario sampling."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field
from typing import Any, Hashable, Iterable, Sequence

import numpy as np

__all__ = [
    "NodeSpec",
    "PipelineSpec",
    "CompressorSpec",
    "SourceSpec",
    "GasNetwork",
    "Scenario",
    "NetworkParseError",
    "NetworkValidationError",
    "load_network",
    "dump_network",
    "sample_scenarios",
    "scenarios_to_csv",
    "scenarios_from_csv",
]


class NetworkParseError(ValueError):
    """The network document is not well-formed."""


class NetworkValidationError(ValueError):
    """The network document parses but violates a structural invariant.

    ``element`` holds the id of the offending node/pipeline/compressor/source.
    """

    def __init__(self, message: str, element: Hashable = None):
        super().__init__(message)
        self.element = element


@dataclass(frozen=True)
class NodeSpec:
    id: Hashable
    pi_min: float
    pi_max: float
    base_load: float = 0.0


@dataclass(frozen=True)
class PipelineSpec:
    id: Hashable
    from_node: Hashable
    to_node: Hashable
    weymouth_coefficient: float
    f_max: float
    linepack_coefficient: float = 0.0


@dataclass(frozen=True)
class CompressorSpec:
    id: Hashable
    from_node: Hashable
    to_node: Hashable
    gamma: float
    r_max: float
    fc_max: float


@dataclass(frozen=True)
class SourceSpec:
    id: Hashable
    node: Hashable
    unit_cost: float
    g_min: float
    g_max: float


@dataclass(frozen=True)
class GasNetwork:
    nodes: tuple[NodeSpec, ...]
    pipelines: tuple[PipelineSpec, ...]
    compressors: tuple[CompressorSpec, ...]
    sources: tuple[SourceSpec, ...]
    pressure_unit: str = "Psig"
    flow_unit: str = "kcf"
    name: str = ""
    _node_index: dict = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "pipelines", tuple(self.pipelines))
        object.__setattr__(self, "compressors", tuple(self.compressors))
        object.__setattr__(self, "sources", tuple(self.sources))
        object.__setattr__(self, "_node_index", {n.id: k for k, n in enumerate(self.nodes)})

    def node_index(self, node_id: Hashable) -> int:
        return self._node_index[node_id]

    @property
    def node_ids(self) -> list:
        return [n.id for n in self.nodes]

    @property
    def pi_min(self) -> np.ndarray:
        return np.array([n.pi_min for n in self.nodes], dtype=float)

    @property
    def pi_max(self) -> np.ndarray:
        return np.array([n.pi_max for n in self.nodes], dtype=float)

    @property
    def base_load(self) -> np.ndarray:
        return np.array([n.base_load for n in self.nodes], dtype=float)

    def pipeline_ends(self) -> tuple[np.ndarray, np.ndarray]:
        """Node indices (from, to) of every pipeline in file order."""
        m = np.array([self.node_index(p.from_node) for p in self.pipelines], dtype=int)
        n = np.array([self.node_index(p.to_node) for p in self.pipelines], dtype=int)
        return m, n

    def validate(self) -> "GasNetwork":
        _validate(self)
        return self

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "units": {"pressure": self.pressure_unit, "flow": self.flow_unit},
            "nodes": [asdict(n) for n in self.nodes],
            "pipelines": [asdict(p) for p in self.pipelines],
            "compressors": [asdict(c) for c in self.compressors],
            "sources": [asdict(s) for s in self.sources],
        }


@dataclass(frozen=True)
class Scenario:
    """Load multipliers for one optimization instance.

    ``lam`` has shape (T, n_nodes), rows are time slots 1..T and columns follow
    the network's node order. ``initial_linepack`` maps pipeline id to stored
    mass at the start of the horizon (quasi-dynamic only).
    """

    lam: np.ndarray
    scenario_id: int = 0
    initial_linepack: dict | None = None

    def __post_init__(self):
        lam = np.atleast_2d(np.asarray(self.lam, dtype=float))
        if lam.ndim != 2:
            raise ValueError("lambda must be a (T, n_nodes) array")
        if not np.all(lam > 0):
            raise ValueError("load multipliers must be strictly positive")
        lam.setflags(write=False)
        object.__setattr__(self, "lam", lam)

    @property
    def horizon(self) -> int:
        return self.lam.shape[0]

    @property
    def is_steady_state(self) -> bool:
        return self.horizon == 1

    def with_initial_linepack(self, linepack: dict) -> "Scenario":
        return Scenario(self.lam, self.scenario_id, dict(linepack))

    @classmethod
    def constant(cls, network: GasNetwork, horizon: int = 1, value: float = 1.0, scenario_id: int = 0):
        return cls(np.full((horizon, len(network.nodes)), value), scenario_id)

    def __eq__(self, other):
        if not isinstance(other, Scenario):
            return NotImplemented
        return (
            self.scenario_id == other.scenario_id
            and np.array_equal(self.lam, other.lam)
            and self.initial_linepack == other.initial_linepack
        )

    __hash__ = None


_NODE_KEYS = ("id", "pi_min", "pi_max", "base_load")
_PIPE_KEYS = ("id", "from_node", "to_node", "weymouth_coefficient", "f_max", "linepack_coefficient")
_COMP_KEYS = ("id", "from_node", "to_node", "gamma", "r_max", "fc_max")
_SRC_KEYS = ("id", "node", "unit_cost", "g_min", "g_max")


def _records(doc: dict, key: str, cls, required: Sequence[str], optional: dict) -> list:
    raw = doc.get(key, [])
    if not isinstance(raw, list):
        raise NetworkParseError(f"'{key}' must be a list")
    out = []
    for k, item in enumerate(raw):
        if not isinstance(item, dict):
            raise NetworkParseError(f"{key}[{k}] must be an object")
        missing = [f for f in required if f not in item]
        if missing:
            raise NetworkParseError(f"{key}[{k}] missing field(s) {missing}")
        unknown = set(item) - set(required) - set(optional)
        if unknown:
            raise NetworkParseError(f"{key}[{k}] has unknown field(s) {sorted(unknown)}")
        kwargs = {**optional, **item}
        try:
            for name, value in kwargs.items():
                if name not in ("id", "from_node", "to_node", "node"):
                    kwargs[name] = float(value)
        except (TypeError, ValueError) as exc:
            raise NetworkParseError(f"{key}[{k}]: non-numeric field ({exc})") from None
        out.append(cls(**kwargs))
    return out


def load_network(source_text: str) -> GasNetwork:
    """Parse and validate a JSON network document."""
    try:
        doc = json.loads(source_text)
    except json.JSONDecodeError as exc:
        raise NetworkParseError(f"malformed network document: {exc}") from None
    if not isinstance(doc, dict):
        raise NetworkParseError("network document must be a JSON object")
    for key in ("nodes", "pipelines", "sources"):
        if key not in doc:
            raise NetworkParseError(f"missing top-level key '{key}'")
    units = doc.get("units", {}) or {}
    if not isinstance(units, dict):
        raise NetworkParseError("'units' must be an object")
    net = GasNetwork(
        nodes=_records(doc, "nodes", NodeSpec, _NODE_KEYS[:3], {"base_load": 0.0}),
        pipelines=_records(doc, "pipelines", PipelineSpec, _PIPE_KEYS[:5], {"linepack_coefficient": 0.0}),
        compressors=_records(doc, "compressors", CompressorSpec, _COMP_KEYS, {}),
        sources=_records(doc, "sources", SourceSpec, _SRC_KEYS, {}),
        pressure_unit=str(units.get("pressure", "Psig")),
        flow_unit=str(units.get("flow", "kcf")),
        name=str(doc.get("name", "")),
    )
    return net.validate()


def dump_network(network: GasNetwork) -> str:
    return json.dumps(network.to_dict(), indent=2) + "\n"


def _unique(ids: Iterable, what: str):
    seen = set()
    for i in ids:
        if i in seen:
            raise NetworkValidationError(f"duplicate {what} id {i!r}", i)
        seen.add(i)


def _validate(net: GasNetwork) -> None:
    if not net.nodes:
        raise NetworkValidationError("network has no nodes")
    _unique((n.id for n in net.nodes), "node")
    _unique((p.id for p in net.pipelines), "pipeline")
    _unique((c.id for c in net.compressors), "compressor")
    _unique((s.id for s in net.sources), "source")
    if not net.sources:
        raise NetworkValidationError("network needs at least one source")
    known = set(net.node_ids)

    for n in net.nodes:
        if not (0.0 <= n.pi_min < n.pi_max):
            raise NetworkValidationError(f"node {n.id!r}: need 0 <= pi_min < pi_max", n.id)
        if n.base_load < 0:
            raise NetworkValidationError(f"node {n.id!r}: negative base_load", n.id)
    for p in net.pipelines:
        for end in (p.from_node, p.to_node):
            if end not in known:
                raise NetworkValidationError(f"pipeline {p.id!r} references unknown node {end!r}", end)
        if p.from_node == p.to_node:
            raise NetworkValidationError(f"pipeline {p.id!r} is a self-loop", p.id)
        if not p.weymouth_coefficient > 0:
            raise NetworkValidationError(f"pipeline {p.id!r}: weymouth_coefficient must be > 0", p.id)
        if not p.f_max > 0:
            raise NetworkValidationError(f"pipeline {p.id!r}: f_max must be > 0", p.id)
        if p.linepack_coefficient < 0:
            raise NetworkValidationError(f"pipeline {p.id!r}: linepack_coefficient must be >= 0", p.id)
    for c in net.compressors:
        for end in (c.from_node, c.to_node):
            if end not in known:
                raise NetworkValidationError(f"compressor {c.id!r} references unknown node {end!r}", end)
        if c.from_node == c.to_node:
            raise NetworkValidationError(f"compressor {c.id!r} is a self-loop", c.id)
        if not 0.0 <= c.gamma < 1.0:
            raise NetworkValidationError(f"compressor {c.id!r}: gamma must lie in [0, 1)", c.id)
        if c.r_max < 1.0:
            raise NetworkValidationError(f"compressor {c.id!r}: r_max must be >= 1", c.id)
        if not c.fc_max > 0:
            raise NetworkValidationError(f"compressor {c.id!r}: fc_max must be > 0", c.id)
    for s in net.sources:
        if s.node not in known:
            raise NetworkValidationError(f"source {s.id!r} references unknown node {s.node!r}", s.node)
        if not 0.0 <= s.g_min <= s.g_max:
            raise NetworkValidationError(f"source {s.id!r}: need 0 <= g_min <= g_max", s.id)
        if s.unit_cost < 0:
            raise NetworkValidationError(f"source {s.id!r}: negative unit_cost", s.id)

    # connectivity over pipelines + compressors, treated as undirected
    adj: dict = {i: [] for i in known}
    for e in (*net.pipelines, *net.compressors):
        adj[e.from_node].append(e.to_node)
        adj[e.to_node].append(e.from_node)
    start = net.nodes[0].id
    seen, stack = {start}, [start]
    while stack:
        for nb in adj[stack.pop()]:
            if nb not in seen:
                seen.add(nb)
                stack.append(nb)
    if len(seen) != len(known):
        orphan = next(n.id for n in net.nodes if n.id not in seen)
        raise NetworkValidationError(f"network is disconnected at node {orphan!r}", orphan)


def sample_scenarios(
    network: GasNetwork,
    count: int,
    fluctuation: float = 0.10,
    horizon: int = 1,
    seed: int = 0,
) -> list[Scenario]:
    """Draw ``count`` scenarios with every multiplier uniform on [1-f, 1+f]."""
    if count < 1:
        raise ValueError("count must be >= 1")
    if not 0.0 <= fluctuation < 1.0:
        raise ValueError("fluctuation must lie in [0, 1)")
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    rng = np.random.default_rng(seed)
    lam = rng.uniform(1.0 - fluctuation, 1.0 + fluctuation, size=(count, horizon, len(network.nodes)))
    return [Scenario(lam[k], scenario_id=k) for k in range(count)]


def scenarios_to_csv(network: GasNetwork, scenarios: Sequence[Scenario]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["scenario_id", "node_id", "time_slot", "lambda"])
    for sc in scenarios:
        for t in range(sc.horizon):
            for k, node in enumerate(network.nodes):
                w.writerow([sc.scenario_id, node.id, t + 1, repr(float(sc.lam[t, k]))])
    return buf.getvalue()


def scenarios_from_csv(network: GasNetwork, text: str) -> list[Scenario]:
    rows = list(csv.DictReader(io.StringIO(text)))
    if not rows:
        raise ValueError("scenario file has no rows")
    expected = {"scenario_id", "node_id", "time_slot", "lambda"}
    if set(rows[0]) != expected:
        raise ValueError(f"scenario header must be {sorted(expected)}")
    col = {str(nid): k for k, nid in enumerate(network.node_ids)}
    grouped: dict[int, dict] = {}
    for r in rows:
        sid = int(r["scenario_id"])
        if r["node_id"] not in col:
            raise ValueError(f"scenario {sid} references unknown node {r['node_id']!r}")
        grouped.setdefault(sid, {})[(int(r["time_slot"]), col[r["node_id"]])] = float(r["lambda"])
    out = []
    for sid in sorted(grouped):
        cells = grouped[sid]
        horizon = max(t for t, _ in cells)
        lam = np.full((horizon, len(col)), np.nan)
        for (t, k), v in cells.items():
            if t < 1:
                raise ValueError(f"scenario {sid}: time slots start at 1")
            lam[t - 1, k] = v
        if np.isnan(lam).any():
            raise ValueError(f"scenario {sid} is missing node/time entries")
        out.append(Scenario(lam, scenario_id=sid))
    return out


def network_from_dict(doc: dict[str, Any]) -> GasNetwork:
    return load_network(json.dumps(doc))
