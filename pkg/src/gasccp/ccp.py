"""Penalty convex-concave procedure for optimal gas flow.

Each iteration solves a second-order cone subproblem linearized at the current
pressures, measures the worst Weymouth violation of the result and, if it is
still above ``zeta0``, relinearizes at the new pressures with a larger penalty.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .model import DEFAULT_FLOW_FLOOR, ProblemInstance, SolutionVector, evaluate_solution, polish_linear
from .socp import LinearizationPoint, assemble_subproblem, solve

__all__ = [
    "CcpConfig",
    "CcpResult",
    "IterationRecord",
    "warm_start_from_pressures",
    "cold_start",
    "run_ccp",
    "penalty_schedule",
]

log = logging.getLogger(__name__)

CONVERGED = "converged"
ITERATION_LIMIT = "iteration-limit"
SUBPROBLEM_FAILED = "subproblem-failed"


@dataclass(frozen=True)
class CcpConfig:
    zeta0: float = 1e-3
    tau1: float = 1.0
    tau_max: float = 1000.0
    kappa: float = 2.0
    max_iterations: int = 50
    flow_floor: float = DEFAULT_FLOW_FLOOR
    solver_tol: float = 1e-6

    def __post_init__(self):
        if not self.zeta0 > 0:
            raise ValueError("zeta0 must be positive")
        if not self.tau1 > 0:
            raise ValueError("tau1 must be positive")
        if not self.kappa > 1:
            raise ValueError("kappa must exceed 1")
        if self.tau_max < self.tau1:
            raise ValueError("tau_max must be >= tau1")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")

    def replace(self, **changes) -> "CcpConfig":
        return CcpConfig(**{**asdict(self), **changes})


def penalty_schedule(config: CcpConfig, iterations: int) -> list[float]:
    """tau_k = min(kappa^(k-1) tau1, tau_max) for k = 1..iterations."""
    taus, tau = [], config.tau1
    for _ in range(iterations):
        taus.append(tau)
        tau = min(config.kappa * tau, config.tau_max)
    return taus


@dataclass
class IterationRecord:
    iteration: int
    tau: float
    xi: float
    objective: float
    penalized_objective: float
    max_slack: float


@dataclass
class CcpResult:
    solution: SolutionVector | None
    iterations: int
    xi: float
    status: str
    trace: list[IterationRecord] = field(default_factory=list)
    direction_suspect: np.ndarray | None = None
    message: str = ""

    @property
    def converged(self) -> bool:
        return self.status == CONVERGED

    @property
    def objective(self) -> float:
        return self.solution.objective if self.solution is not None else float("nan")

    def to_json(self) -> dict:
        return {
            "status": self.status,
            "iterations": self.iterations,
            "xi": self.xi,
            "objective": self.objective,
            "message": self.message,
            "trace": [asdict(r) for r in self.trace],
            "direction_suspect": [] if self.direction_suspect is None else self.direction_suspect.tolist(),
            "solution": None if self.solution is None else self.solution.to_json(),
        }


def _oriented_flow(pi_m, pi_n, C):
    return C * np.sqrt(np.maximum(pi_m**2 - pi_n**2, 0.0))


def warm_start_from_pressures(instance: ProblemInstance, predicted) -> LinearizationPoint:
    """Linearization point from predicted nodal pressures.

    Pressures are clamped into their bounds; each pipeline is oriented from the
    higher to the lower predicted pressure (ties go to the file's from-node and
    are flagged low-confidence) and F_0 follows from the Weymouth relation.
    """
    pr = np.atleast_2d(np.asarray(predicted, float))
    if pr.shape != instance.pi.shape or np.isnan(pr).any():
        raise ValueError(f"prediction must cover every node and slot, shape {instance.pi.shape}")
    net = instance.network
    pr = np.clip(pr, net.pi_min, net.pi_max)
    m, n = net.pipeline_ends()
    C = np.array([p.weymouth_coefficient for p in net.pipelines])
    orient = np.where(pr[:, m] >= pr[:, n], 1, -1)
    tie = pr[:, m] == pr[:, n]
    hi = np.where(orient > 0, pr[:, m], pr[:, n])
    lo = np.where(orient > 0, pr[:, n], pr[:, m])
    return LinearizationPoint(pr, orient, _oriented_flow(hi, lo, C), tie)


def cold_start(instance: ProblemInstance, seed) -> LinearizationPoint:
    """Uniform random pressures within bounds, file-order flow directions."""
    rng = np.random.default_rng(seed)
    net = instance.network
    pr = rng.uniform(net.pi_min, net.pi_max, size=instance.pi.shape)
    m, n = net.pipeline_ends()
    C = np.array([p.weymouth_coefficient for p in net.pipelines])
    orient = np.ones(instance.F.shape, int)
    return LinearizationPoint(pr, orient, _oriented_flow(pr[:, m], pr[:, n], C))


def _relinearize(instance: ProblemInstance, point: LinearizationPoint, x: np.ndarray) -> LinearizationPoint:
    net = instance.network
    pr = np.clip(x[instance.pi], net.pi_min, net.pi_max)
    C = np.array([p.weymouth_coefficient for p in net.pipelines])
    flow = np.zeros_like(point.flow)
    for t in range(instance.horizon):
        hi, lo = point.ends(instance, t)
        flow[t] = _oriented_flow(pr[t, hi], pr[t, lo], C)
    return LinearizationPoint(pr, point.orientation.copy(), flow, point.low_confidence)


def _direction_suspect(instance, point, x, config: CcpConfig, gap_tol: float = 1e-4) -> np.ndarray:
    flags = np.zeros(instance.F.shape, bool)
    for t in range(instance.horizon):
        hi, lo = point.ends(instance, t)
        pr = x[instance.pi[t]]
        flags[t] = (np.abs(x[instance.F[t]]) < config.flow_floor) & (pr[hi] > pr[lo] + gap_tol)
    return flags


def run_ccp(instance: ProblemInstance, start: LinearizationPoint, config: CcpConfig = CcpConfig()) -> CcpResult:
    point = start
    tau = config.tau1
    trace: list[IterationRecord] = []
    x = None
    xi = float("inf")
    for k in range(1, config.max_iterations + 1):
        prog = assemble_subproblem(instance, point, tau)
        sol = solve(prog, tol=config.solver_tol)
        if not sol.ok:
            log.debug("subproblem failed at iteration %d: %s", k, sol.message)
            return CcpResult(
                None if x is None else SolutionVector.of(instance, x), k, xi, SUBPROBLEM_FAILED, trace,
                message=f"iteration {k}: {sol.status} ({sol.message})",
            )
        x = polish_linear(instance, sol.x[: instance.n_vars])
        slack = sol.x[prog.slack]
        xi = evaluate_solution(instance, x, config.flow_floor).xi
        trace.append(
            IterationRecord(k, tau, xi, float(instance.objective @ x), sol.objective, float(slack.max(initial=0.0)))
        )
        if xi < config.zeta0:
            return CcpResult(
                SolutionVector.of(instance, x), k, xi, CONVERGED, trace,
                direction_suspect=_direction_suspect(instance, point, x, config),
            )
        point = _relinearize(instance, point, x)
        tau = min(config.kappa * tau, config.tau_max)
    return CcpResult(
        SolutionVector.of(instance, x), config.max_iterations, xi, ITERATION_LIMIT, trace,
        direction_suspect=_direction_suspect(instance, point, x, config),
        message=f"xi = {xi:.3e} after {config.max_iterations} iterations",
    )
