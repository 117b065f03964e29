"""Assembly of steady-state and quasi-dynamic optimal gas flow problems.

A :class:`ProblemInstance` is an explicit description: a flat variable index
space, variable bounds, named linear rows and one nonconvex Weymouth record
per pipeline and time slot. Solvers consume it through the matrix views
(:meth:`ProblemInstance.equalities`, :meth:`ProblemInstance.inequalities`).
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .network import GasNetwork, Scenario

__all__ = [
    "LinearRow",
    "WeymouthRecord",
    "ProblemInstance",
    "SolutionVector",
    "FeasibilityReport",
    "build_steady_state",
    "build_quasi_dynamic",
    "build_instance",
    "evaluate_solution",
    "linepack_from_pressures",
    "polish_linear",
]

DEFAULT_FLOW_FLOOR = 1e-6


@dataclass(frozen=True)
class LinearRow:
    name: str
    index: tuple[int, ...]
    coef: tuple[float, ...]
    sense: str  # "==" or "<="
    rhs: float

    def value(self, x: np.ndarray) -> float:
        return float(np.dot(np.asarray(self.coef), x[list(self.index)]))

    def residual(self, x: np.ndarray) -> float:
        r = self.value(x) - self.rhs
        return abs(r) if self.sense == "==" else max(r, 0.0)


@dataclass(frozen=True)
class WeymouthRecord:
    """F |F| = C^2 (pi_m^2 - pi_n^2) for one pipeline in one slot."""

    pipeline: int
    slot: int
    flow: int
    pi_m: int
    pi_n: int
    coefficient: float


@dataclass
class ProblemInstance:
    network: GasNetwork
    scenario: Scenario
    var_names: list[str]
    lb: np.ndarray
    ub: np.ndarray
    objective: np.ndarray
    rows: list[LinearRow]
    weymouth: list[WeymouthRecord]
    # index arrays, shape (T, count); q_in/q_out/M are None for steady state
    G: np.ndarray
    F: np.ndarray
    pi: np.ndarray
    FC: np.ndarray
    W: np.ndarray
    q_in: np.ndarray | None = None
    q_out: np.ndarray | None = None
    M: np.ndarray | None = None
    initial_linepack: np.ndarray | None = None
    index: dict = field(init=False, repr=False)

    def __post_init__(self):
        self.index = {name: k for k, name in enumerate(self.var_names)}

    @property
    def n_vars(self) -> int:
        return len(self.var_names)

    @property
    def horizon(self) -> int:
        return self.pi.shape[0]

    @property
    def is_quasi_dynamic(self) -> bool:
        return self.M is not None

    def _matrix(self, sense: str):
        sel = [r for r in self.rows if r.sense == sense]
        data, ri, ci = [], [], []
        for k, r in enumerate(sel):
            ri.extend([k] * len(r.index))
            ci.extend(r.index)
            data.extend(r.coef)
        A = sp.csr_matrix((data, (ri, ci)), shape=(len(sel), self.n_vars))
        b = np.array([r.rhs for r in sel], dtype=float)
        return A, b, [r.name for r in sel]

    @cached_property
    def _eq(self):
        return self._matrix("==")

    @cached_property
    def _in(self):
        return self._matrix("<=")

    def equalities(self):
        """(A, b, names) with A x = b."""
        return self._eq

    def inequalities(self):
        """(A, b, names) with A x <= b."""
        return self._in

    def pressures(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x)[self.pi]

    def flows(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x)[self.F]


@dataclass
class SolutionVector:
    values: np.ndarray
    objective: float
    names: list[str] = field(default_factory=list)

    @classmethod
    def of(cls, instance: ProblemInstance, values) -> "SolutionVector":
        x = np.asarray(values, dtype=float)
        if x.shape != (instance.n_vars,):
            raise ValueError(f"solution has {x.size} entries, instance has {instance.n_vars} variables")
        return cls(x, float(instance.objective @ x), list(instance.var_names))

    def as_dict(self) -> dict[str, float]:
        return {n: float(v) for n, v in zip(self.names, self.values)}

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["variable", "value"])
        for n, v in zip(self.names, self.values):
            w.writerow([n, repr(float(v))])
        return buf.getvalue()

    def to_json(self) -> dict:
        return {"objective": self.objective, "values": self.as_dict()}


@dataclass
class FeasibilityReport:
    xi: float
    max_linear_residual: float
    pipeline_violation: np.ndarray  # (T, P)
    residuals: dict[str, float]

    def to_json(self) -> dict:
        return {
            "xi": self.xi,
            "max_linear_residual": self.max_linear_residual,
            "pipeline_violation": self.pipeline_violation.tolist(),
            "residuals": self.residuals,
        }


class _Builder:
    def __init__(self):
        self.names: list[str] = []
        self.lb: list[float] = []
        self.ub: list[float] = []
        self.rows: list[LinearRow] = []

    def var(self, name: str, lo=-np.inf, hi=np.inf) -> int:
        self.names.append(name)
        self.lb.append(lo)
        self.ub.append(hi)
        return len(self.names) - 1

    def row(self, name: str, terms: dict[int, float], sense: str, rhs: float):
        merged: dict[int, float] = {}
        for k, v in terms.items():
            merged[k] = merged.get(k, 0.0) + v
        idx = tuple(k for k, v in merged.items() if v != 0.0)
        self.rows.append(LinearRow(name, idx, tuple(merged[k] for k in idx), sense, float(rhs)))


def _slot(name: str, t: int, horizon: int) -> str:
    return name if horizon == 1 else f"{name[:-1]},t={t + 1}]"


def _assemble(network: GasNetwork, scenario: Scenario, dynamic: bool) -> ProblemInstance:
    T = scenario.horizon
    N, P, C, S = len(network.nodes), len(network.pipelines), len(network.compressors), len(network.sources)
    if scenario.lam.shape[1] != N:
        raise ValueError("scenario does not match the network's node count")
    b = _Builder()
    G = np.zeros((T, S), int)
    F = np.zeros((T, P), int)
    pi = np.zeros((T, N), int)
    FC = np.zeros((T, C), int)
    W = np.zeros((T, C), int)
    qi = np.zeros((T, P), int) if dynamic else None
    qo = np.zeros((T, P), int) if dynamic else None
    M = np.zeros((T, P), int) if dynamic else None

    for t in range(T):
        for k, s in enumerate(network.sources):
            G[t, k] = b.var(_slot(f"G[{s.id}]", t, T), s.g_min, s.g_max)  # (5)
        for k, p in enumerate(network.pipelines):
            F[t, k] = b.var(_slot(f"F[{p.id}]", t, T), -p.f_max, p.f_max)  # (3)
            if dynamic:
                qi[t, k] = b.var(_slot(f"q_in[{p.id}]", t, T))
                qo[t, k] = b.var(_slot(f"q_out[{p.id}]", t, T))
                M[t, k] = b.var(_slot(f"M[{p.id}]", t, T))
        for k, n in enumerate(network.nodes):
            pi[t, k] = b.var(_slot(f"pi[{n.id}]", t, T), n.pi_min, n.pi_max)  # (2)
        for k, c in enumerate(network.compressors):
            FC[t, k] = b.var(_slot(f"FC[{c.id}]", t, T), 0.0, c.fc_max)  # (4)
            W[t, k] = b.var(_slot(f"W[{c.id}]", t, T))

    objective = np.zeros(len(b.names))
    for t in range(T):
        for k, s in enumerate(network.sources):
            objective[G[t, k]] = s.unit_cost

    node_of = network.node_index
    load = network.base_load
    weymouth = []
    for t in range(T):
        for k, c in enumerate(network.compressors):
            i, j = pi[t, node_of(c.from_node)], pi[t, node_of(c.to_node)]
            b.row(_slot(f"ratio_lo[{c.id}]", t, T), {i: 1.0, j: -1.0}, "<=", 0.0)  # (6) pi_i <= pi_j
            b.row(_slot(f"ratio_hi[{c.id}]", t, T), {j: 1.0, i: -c.r_max}, "<=", 0.0)  # (6) pi_j <= R pi_i
            b.row(_slot(f"consumption[{c.id}]", t, T), {W[t, k]: 1.0, FC[t, k]: -c.gamma}, "==", 0.0)  # (7)

        terms: list[dict[int, float]] = [dict() for _ in range(N)]

        def add(node, var, coef):
            d = terms[node_of(node)]
            d[var] = d.get(var, 0.0) + coef

        for k, s in enumerate(network.sources):
            add(s.node, G[t, k], 1.0)
        for k, p in enumerate(network.pipelines):
            add(p.from_node, qi[t, k] if dynamic else F[t, k], -1.0)
            add(p.to_node, qo[t, k] if dynamic else F[t, k], 1.0)
        for k, c in enumerate(network.compressors):
            add(c.from_node, FC[t, k], -1.0)
            add(c.from_node, W[t, k], -1.0)
            add(c.to_node, FC[t, k], 1.0)
        for g, n in enumerate(network.nodes):
            b.row(_slot(f"balance[{n.id}]", t, T), terms[g], "==", scenario.lam[t, g] * load[g])  # (9)/(11)

        for k, p in enumerate(network.pipelines):
            weymouth.append(
                WeymouthRecord(k, t, F[t, k], pi[t, node_of(p.from_node)], pi[t, node_of(p.to_node)], p.weymouth_coefficient)
            )

    linepack0 = None
    if dynamic:
        linepack0 = np.array([scenario.initial_linepack[p.id] for p in network.pipelines], dtype=float)
        for t in range(T):
            for k, p in enumerate(network.pipelines):
                m, n = pi[t, node_of(p.from_node)], pi[t, node_of(p.to_node)]
                H = p.linepack_coefficient
                b.row(_slot(f"avgflow[{p.id}]", t, T), {F[t, k]: 1.0, qi[t, k]: -0.5, qo[t, k]: -0.5}, "==", 0.0)  # (12)
                b.row(_slot(f"linepack[{p.id}]", t, T), {M[t, k]: 1.0, m: -0.5 * H, n: -0.5 * H}, "==", 0.0)  # (13)
                dyn = {M[t, k]: 1.0, qi[t, k]: -1.0, qo[t, k]: 1.0}
                if t == 0:
                    b.row(_slot(f"mass[{p.id}]", t, T), dyn, "==", linepack0[k])  # (14), t = 1
                else:
                    dyn[M[t - 1, k]] = -1.0
                    b.row(_slot(f"mass[{p.id}]", t, T), dyn, "==", 0.0)  # (14)
        b.row("terminal_linepack", {M[T - 1, k]: 1.0 for k in range(P)}, "==", float(linepack0.sum()))  # (15)

    return ProblemInstance(
        network=network,
        scenario=scenario,
        var_names=b.names,
        lb=np.array(b.lb, float),
        ub=np.array(b.ub, float),
        objective=objective,
        rows=b.rows,
        weymouth=weymouth,
        G=G, F=F, pi=pi, FC=FC, W=W, q_in=qi, q_out=qo, M=M,
        initial_linepack=linepack0,
    )


def build_steady_state(network: GasNetwork, scenario: Scenario) -> ProblemInstance:
    if scenario.horizon != 1:
        raise ValueError(f"steady-state model needs a single time slot, scenario has {scenario.horizon}")
    return _assemble(network, scenario, dynamic=False)


def build_quasi_dynamic(network: GasNetwork, scenario: Scenario) -> ProblemInstance:
    if scenario.horizon < 2:
        raise ValueError("quasi-dynamic model needs a horizon of at least 2 slots")
    lp = scenario.initial_linepack
    if lp is None:
        raise ValueError("quasi-dynamic scenario has no initial linepack")
    missing = [p.id for p in network.pipelines if p.id not in lp]
    if missing:
        raise ValueError(f"initial linepack missing for pipeline(s) {missing}")
    return _assemble(network, scenario, dynamic=True)


def build_instance(network: GasNetwork, scenario: Scenario) -> ProblemInstance:
    if scenario.horizon == 1:
        return build_steady_state(network, scenario)
    return build_quasi_dynamic(network, scenario)


def linepack_from_pressures(network: GasNetwork, pressures) -> dict:
    """Stored mass per pipeline implied by nodal pressures (arithmetic mean rule)."""
    pressures = np.asarray(pressures, float)
    m, n = network.pipeline_ends()
    H = np.array([p.linepack_coefficient for p in network.pipelines])
    values = H * 0.5 * (pressures[m] + pressures[n])
    return {p.id: float(v) for p, v in zip(network.pipelines, values)}


def polish_linear(instance: ProblemInstance, x, active_tol: float = 1e-6, rounds: int = 3) -> np.ndarray:
    """Remove interior-point noise from the linear part of a near-feasible point.

    Variables within ``active_tol`` of a bound are snapped onto it and held;
    equality rows plus nearly active inequality rows are then enforced by a
    minimum-norm correction of the remaining variables. The correction is kept
    only if it lowers the worst linear residual.
    """
    x = np.clip(np.asarray(x, float), instance.lb, instance.ub)
    A_eq, b_eq, _ = instance.equalities()
    A_in, b_in, _ = instance.inequalities()
    A_eq, A_in = A_eq.toarray(), A_in.toarray()

    def worst(z):
        r = [0.0]
        if len(b_eq):
            r.append(np.max(np.abs(A_eq @ z - b_eq)))
        if len(b_in):
            r.append(np.max(np.maximum(A_in @ z - b_in, 0.0)))
        r.append(np.max(np.maximum(instance.lb - z, 0.0)))
        r.append(np.max(np.maximum(z - instance.ub, 0.0)))
        return max(r)

    best, best_res = x, worst(x)
    for _ in range(rounds):
        if best_res == 0.0:
            break
        scale = active_tol * (1.0 + np.abs(best))
        at_lo = np.abs(best - instance.lb) <= scale
        at_hi = np.abs(best - instance.ub) <= scale
        z = best.copy()
        z[at_lo] = instance.lb[at_lo]
        z[at_hi] = instance.ub[at_hi]
        free = ~(at_lo | at_hi)
        active = (A_in @ z - b_in) >= -active_tol * (1.0 + np.abs(b_in))
        A = np.vstack([A_eq, A_in[active]])
        b = np.concatenate([b_eq, b_in[active]])
        if A.shape[0] == 0 or not free.any():
            cand = z
        else:
            delta, *_ = np.linalg.lstsq(A[:, free], b - A @ z, rcond=None)
            cand = z.copy()
            cand[free] += delta
        res = worst(cand)
        if res >= best_res:
            break
        best, best_res = cand, res
    return best


def weymouth_violation(F, pi_m, pi_n, C, pi_m_max, flow_floor=DEFAULT_FLOW_FLOOR):
    """Per-pipeline violation of F|F| = C^2 (pi_m^2 - pi_n^2), vectorized.

    For |F| >= flow_floor this is |C sqrt(drop) / |F| - 1| where drop is the
    squared-pressure difference taken along the flow direction; below the floor
    it falls back to the absolute residual normalized by C^2 pi_max(m)^2.
    """
    F, pi_m, pi_n, C = (np.asarray(a, float) for a in (F, pi_m, pi_n, C))
    dsq = pi_m**2 - pi_n**2
    big = np.abs(F) >= flow_floor
    oriented = np.where(F >= 0, dsq, -dsq)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.abs(C * np.sqrt(np.maximum(oriented, 0.0)) / np.abs(F) - 1.0)
    small = np.abs(F * np.abs(F) - C**2 * dsq) / (C**2 * np.asarray(pi_m_max, float) ** 2)
    return np.where(big, ratio, small)


def evaluate_solution(instance: ProblemInstance, x, flow_floor: float = DEFAULT_FLOW_FLOOR) -> FeasibilityReport:
    """Check a candidate against the original nonconvex model."""
    x = np.asarray(x.values if isinstance(x, SolutionVector) else x, dtype=float)
    if x.shape != (instance.n_vars,):
        raise ValueError(f"solution has {x.size} entries, instance has {instance.n_vars} variables")
    net = instance.network
    m, n = net.pipeline_ends()
    C = np.array([p.weymouth_coefficient for p in net.pipelines])
    pmax = net.pi_max[m]
    viol = np.zeros(instance.F.shape)
    for t in range(instance.horizon):
        pr = x[instance.pi[t]]
        viol[t] = weymouth_violation(x[instance.F[t]], pr[m], pr[n], C, pmax, flow_floor)

    residuals: dict[str, float] = {}
    for k, name in enumerate(instance.var_names):
        lo = instance.lb[k] - x[k]
        hi = x[k] - instance.ub[k]
        if np.isfinite(instance.lb[k]) or np.isfinite(instance.ub[k]):
            residuals[f"bound:{name}"] = float(max(lo, hi, 0.0))
    for row in instance.rows:
        residuals[row.name] = row.residual(x)
    xi = float(viol.max()) if viol.size else 0.0
    return FeasibilityReport(
        xi=xi,
        max_linear_residual=max(residuals.values(), default=0.0),
        pipeline_violation=viol,
        residuals=residuals,
    )


def report_json(report: FeasibilityReport, solution: SolutionVector) -> str:
    return json.dumps({"solution": solution.to_json(), "feasibility": report.to_json()}, indent=2) + "\n"
