"""Standard-form second-order cone programs and the CCP subproblem.

The solver contract is :func:`solve`; the numerical backend is Clarabel, but
optimality is always certified by recomputing primal/dual residuals and the
duality gap here from the returned primal-dual pair.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

__all__ = [
    "ConicProgram",
    "ConicSolution",
    "LinearizationPoint",
    "assemble_subproblem",
    "solve",
    "kkt_residuals",
    "linearized_lower_bounds",
]

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
NUMERICAL_FAILURE = "numerical-failure"


@dataclass
class ConicProgram:
    """minimize c'x  s.t.  A_eq x = b_eq, A_in x <= b_in, lb <= x <= ub,
    and ||x[tail]|| <= x[head] for every cone (head, tail)."""

    c: np.ndarray
    A_eq: sp.csr_matrix
    b_eq: np.ndarray
    A_in: sp.csr_matrix
    b_in: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    cones: list[tuple[int, list[int]]] = field(default_factory=list)
    names: list[str] | None = None
    eq_names: list[str] | None = None
    in_names: list[str] | None = None
    # bookkeeping for CCP subproblems
    n_original: int | None = None
    slack: np.ndarray | None = None

    def __post_init__(self):
        n = len(self.c)
        self.c = np.asarray(self.c, float)
        self.A_eq = sp.csr_matrix(self.A_eq, shape=(len(self.b_eq), n))
        self.A_in = sp.csr_matrix(self.A_in, shape=(len(self.b_in), n))
        self.b_eq = np.asarray(self.b_eq, float)
        self.b_in = np.asarray(self.b_in, float)
        self.lb = np.asarray(self.lb, float)
        self.ub = np.asarray(self.ub, float)
        for head, tail in self.cones:
            if not self.lb[head] >= 0:
                raise ValueError(f"cone head x[{head}] needs a nonnegative lower bound")

    @property
    def n(self) -> int:
        return len(self.c)

    def to_text(self) -> str:
        """One line per objective/row/bound/cone, for dump-and-inspect."""
        names = self.names or [f"x{k}" for k in range(self.n)]

        def expr(row) -> str:
            row = row.tocoo()
            return " ".join(f"{v:+.12g}*{names[j]}" for j, v in zip(row.col, row.data)) or "0"

        out = io.StringIO()
        obj = " ".join(f"{v:+.12g}*{names[j]}" for j, v in enumerate(self.c) if v != 0.0)
        out.write(f"minimize {obj or '0'}\n")
        for k in range(self.A_eq.shape[0]):
            label = self.eq_names[k] if self.eq_names else f"eq{k}"
            out.write(f"{label}: {expr(self.A_eq[k])} == {self.b_eq[k]:.12g}\n")
        for k in range(self.A_in.shape[0]):
            label = self.in_names[k] if self.in_names else f"in{k}"
            out.write(f"{label}: {expr(self.A_in[k])} <= {self.b_in[k]:.12g}\n")
        for j in range(self.n):
            if np.isfinite(self.lb[j]) or np.isfinite(self.ub[j]):
                out.write(f"bound: {self.lb[j]:.12g} <= {names[j]} <= {self.ub[j]:.12g}\n")
        for head, tail in self.cones:
            out.write(f"cone: ||({', '.join(names[t] for t in tail)})|| <= {names[head]}\n")
        return out.getvalue()


@dataclass
class ConicSolution:
    x: np.ndarray
    objective: float
    status: str
    tolerance: float  # worst relative KKT residual achieved
    residuals: dict = field(default_factory=dict)
    iterations: int = 0
    message: str = ""

    @property
    def ok(self) -> bool:
        return self.status == OPTIMAL


def _stacked(p: ConicProgram):
    """(A, b, n_eq, n_lin, cone sizes) with rows ordered: equalities,
    inequalities, finite lower bounds, finite upper bounds, cones. Cached on
    the program."""
    cached = p.__dict__.get("_stack_cache")
    if cached is not None:
        return cached
    lo = np.flatnonzero(np.isfinite(p.lb))
    hi = np.flatnonzero(np.isfinite(p.ub))
    cone_idx = np.array([k for head, tail in p.cones for k in (head, *tail)], dtype=int)
    sel_cols = np.concatenate([lo, hi, cone_idx])
    sel_vals = np.concatenate([-np.ones(lo.size), np.ones(hi.size), -np.ones(cone_idx.size)])
    sel = sp.csr_matrix((sel_vals, (np.arange(sel_cols.size), sel_cols)), shape=(sel_cols.size, p.n))
    A = sp.vstack([p.A_eq, p.A_in, sel], format="csc")
    b = np.concatenate([p.b_eq, p.b_in, -p.lb[lo], p.ub[hi], np.zeros(cone_idx.size)])
    out = (A, b, p.A_eq.shape[0], p.A_in.shape[0] + lo.size + hi.size, [1 + len(t) for _, t in p.cones])
    p.__dict__["_stack_cache"] = out
    return out


def _clarabel_form(p: ConicProgram):
    import clarabel

    A, b, n_eq, n_lin, sizes = _stacked(p)
    cones = []
    if n_eq:
        cones.append(clarabel.ZeroConeT(n_eq))
    if n_lin:
        cones.append(clarabel.NonnegativeConeT(n_lin))
    cones.extend(clarabel.SecondOrderConeT(s) for s in sizes)
    return A, b, cones


def kkt_residuals(p: ConicProgram, x: np.ndarray, z: np.ndarray | None = None) -> dict:
    """Relative primal infeasibility, dual infeasibility and duality gap.

    ``z`` is the stacked dual vector in the order equalities, inequalities,
    lower bounds, upper bounds, cones (as produced by :func:`solve`).
    Without ``z`` only the primal residual is returned.
    """
    x = np.asarray(x, float)
    viol = [0.0]
    if p.A_eq.shape[0]:
        viol.append(np.max(np.abs(p.A_eq @ x - p.b_eq)))
    if p.A_in.shape[0]:
        viol.append(np.max(np.maximum(p.A_in @ x - p.b_in, 0.0)))
    with np.errstate(invalid="ignore"):
        viol.append(np.max(np.maximum(p.lb - x, 0.0), initial=0.0))
        viol.append(np.max(np.maximum(x - p.ub, 0.0), initial=0.0))
    for head, tail in p.cones:
        viol.append(max(np.linalg.norm(x[tail]) - x[head], 0.0))
    scale = 1.0 + max(
        np.max(np.abs(p.b_eq), initial=0.0),
        np.max(np.abs(p.b_in), initial=0.0),
        np.max(np.abs(x), initial=0.0),
    )
    out = {"primal": float(max(viol)) / scale, "primal_abs": float(max(viol))}
    if z is None:
        return out
    A, b, k, n_lin, sizes = _stacked(p)
    ATz = A.T @ z
    cx, bz = float(p.c @ x), float(b @ z)
    out["dual"] = float(np.max(np.abs(p.c + ATz), initial=0.0)) / (1.0 + np.max(np.abs(p.c), initial=0.0))
    out["gap"] = abs(cx + bz) / (1.0 + abs(cx) + abs(bz))
    # dual cone membership: z >= 0 on linear rows, z in SOC on cone blocks
    dviol = [0.0, float(np.max(np.maximum(-z[k:k + n_lin], 0.0), initial=0.0))]
    k += n_lin
    for size in sizes:
        blk = z[k:k + size]
        dviol.append(max(np.linalg.norm(blk[1:]) - blk[0], 0.0))
        k += size
    out["dual"] = max(out["dual"], max(dviol) / (1.0 + np.max(np.abs(p.c), initial=0.0)))
    return out


# settings tried in order until the recomputed KKT residuals meet the tolerance
_FALLBACKS = ({}, {"equilibrate_enable": False}, {"max_step_fraction": 0.9})


def _clarabel_solve(program: ConicProgram, tol: float, max_iter: int, overrides: dict):
    import clarabel

    A, b, cones = _clarabel_form(program)
    settings = clarabel.DefaultSettings()
    settings.verbose = False
    settings.max_iter = max_iter
    settings.max_threads = 1
    inner = min(tol, 1e-8) * 1e-2
    settings.tol_gap_abs = inner
    settings.tol_gap_rel = inner
    settings.tol_feas = inner
    settings.tol_ktratio = 1e-8
    settings.reduced_tol_gap_abs = tol
    settings.reduced_tol_gap_rel = tol
    settings.reduced_tol_feas = tol
    for key, value in overrides.items():
        setattr(settings, key, value)
    P = sp.csc_matrix((program.n, program.n))
    return clarabel.DefaultSolver(P, program.c, A, b, cones, settings).solve()


def solve(program: ConicProgram, tol: float = 1e-8, max_iter: int = 200) -> ConicSolution:
    """Solve a conic program; ``optimal`` is reported only when the
    recomputed relative KKT residuals are all within ``tol``."""
    best = None
    for overrides in _FALLBACKS:
        result = _clarabel_solve(program, tol, max_iter, overrides)
        status = str(result.status)
        x = np.asarray(result.x, float)
        if status in ("PrimalInfeasible", "AlmostPrimalInfeasible"):
            return ConicSolution(x, np.nan, INFEASIBLE, np.inf, iterations=result.iterations, message=status)
        if status not in ("Solved", "AlmostSolved", "MaxIterations", "InsufficientProgress"):
            cand = ConicSolution(x, np.nan, NUMERICAL_FAILURE, np.inf, iterations=result.iterations, message=status)
        else:
            res = kkt_residuals(program, x, np.asarray(result.z, float))
            achieved = max(res["primal"], res["dual"], res["gap"])
            state = OPTIMAL if achieved <= tol else NUMERICAL_FAILURE
            cand = ConicSolution(
                x, float(program.c @ x), state, achieved, res, result.iterations,
                message=status if state == OPTIMAL else f"{status}: KKT residual {achieved:.2e} > {tol:.0e}",
            )
        if best is None or cand.tolerance < best.tolerance:
            best = cand
        if best.ok:
            break
    return best


@dataclass
class LinearizationPoint:
    """Where the reverse side of each Weymouth constraint is linearized.

    ``pressures`` is (T, n_nodes); ``orientation`` is (T, n_pipes) with +1 when
    the file's from-node is the high-pressure side and -1 otherwise;
    ``flow`` is the oriented flow F_0 >= 0 per pipeline and slot.
    """

    pressures: np.ndarray
    orientation: np.ndarray
    flow: np.ndarray
    low_confidence: np.ndarray | None = None

    def __post_init__(self):
        self.pressures = np.atleast_2d(np.asarray(self.pressures, float))
        self.orientation = np.atleast_2d(np.asarray(self.orientation, int))
        self.flow = np.atleast_2d(np.asarray(self.flow, float))
        if self.low_confidence is None:
            self.low_confidence = np.zeros(self.orientation.shape, bool)
        if np.any(self.flow < 0):
            raise ValueError("oriented linearization flows must be nonnegative")
        if not np.all(np.isin(self.orientation, (-1, 1))):
            raise ValueError("orientation entries must be +1 or -1")

    def ends(self, instance, t: int):
        """(high, low) node indices per pipeline for slot t."""
        m, n = instance.network.pipeline_ends()
        o = self.orientation[t]
        return np.where(o > 0, m, n), np.where(o > 0, n, m)

    def to_json(self) -> dict:
        return {
            "pressures": self.pressures.tolist(),
            "orientation": self.orientation.tolist(),
            "flow": self.flow.tolist(),
        }


def linearized_lower_bounds(pi_low0, flow0, C, pi_low, flow):
    """First-order underestimators of pi_low^2 and flow^2 / C^2 at the point."""
    lin_p = 2.0 * pi_low0 * pi_low - pi_low0**2
    lin_f = (2.0 * flow0 * flow - flow0**2) / C**2
    return lin_p, lin_f


def assemble_subproblem(instance, point: LinearizationPoint, tau: float) -> ConicProgram:
    """Penalized convex subproblem around a linearization point.

    For every pipeline and slot, with h/l the high/low pressure ends and
    f = o*F >= 0 the oriented flow:

      cone      ||(pi_l, f/C)|| <= pi_h
      epigraph  u >= pi_h^2 / kappa  as  ||(pi_h, b)|| <= a, a - b = kappa, u = a + b
      reverse   kappa*u - (2 pi_l0 pi_l - pi_l0^2) - (2 f0 f - f0^2)/C^2 <= s,  s >= 0

    and tau * sum(s) is added to the cost.
    """
    if not tau > 0:
        raise ValueError("penalty weight tau must be positive")
    T = instance.horizon
    P = instance.F.shape[1]
    if point.pressures.shape != instance.pi.shape or point.orientation.shape != (T, P) or point.flow.shape != (T, P):
        raise ValueError("linearization point does not cover every pipeline and slot")
    n0 = instance.n_vars
    net = instance.network
    C = np.array([p.weymouth_coefficient for p in net.pipelines])
    pmax = net.pi_max

    lb, ub = instance.lb.copy(), instance.ub.copy()
    n_extra = 4 * T * P
    lb = np.concatenate([lb, np.zeros(n_extra)])
    ub = np.concatenate([ub, np.full(n_extra, np.inf)])
    lb[n0 + 3 * T * P + np.arange(T * P)] = -np.inf  # b is free
    names = list(instance.var_names)
    c = np.concatenate([instance.objective, np.zeros(n_extra)])

    A_eq, b_eq, eq_names = instance.equalities()
    A_in, b_in, in_names = instance.inequalities()
    eq_rows, in_rows = [], []
    eq_rhs, in_rhs = [], []
    eq_lbl, in_lbl = [], []
    cones = []
    slack = np.zeros((T, P), int)

    def idx(block, t, k):
        return n0 + block * T * P + t * P + k

    for block, tag in enumerate(("s", "y", "a", "b")):
        for t in range(T):
            for k, p in enumerate(net.pipelines):
                suffix = f"{p.id}" if T == 1 else f"{p.id},t={t + 1}"
                names.append(f"{tag}[{suffix}]")

    for t in range(T):
        hi, lo = point.ends(instance, t)
        for k, p in enumerate(net.pipelines):
            o = point.orientation[t, k]
            fv = instance.F[t, k]
            if o > 0:
                lb[fv] = max(lb[fv], 0.0)
            else:
                ub[fv] = min(ub[fv], 0.0)
            s, y, a, bb = (idx(j, t, k) for j in range(4))
            slack[t, k] = s
            c[s] = tau
            ph, pl = instance.pi[t, hi[k]], instance.pi[t, lo[k]]
            kappa = pmax[hi[k]]
            pl0 = point.pressures[t, lo[k]]
            f0 = point.flow[t, k]
            label = names[s][2:-1]
            # y = o F / C
            eq_rows.append({y: 1.0, fv: -o / C[k]})
            eq_rhs.append(0.0)
            eq_lbl.append(f"scaled_flow[{label}]")
            eq_rows.append({a: 1.0, bb: -1.0})
            eq_rhs.append(kappa)
            eq_lbl.append(f"epigraph[{label}]")
            in_rows.append({a: kappa, bb: kappa, pl: -2.0 * pl0, fv: -2.0 * f0 * o / C[k] ** 2, s: -1.0})
            in_rhs.append(-(pl0**2) - f0**2 / C[k] ** 2)
            in_lbl.append(f"reverse[{label}]")
            cones.append((ph, [pl, y]))
            cones.append((a, [ph, bb]))

    def stack(A, rows, n):
        if not rows:
            return sp.csr_matrix(A, shape=(A.shape[0], n))
        data, ri, ci = [], [], []
        for r, d in enumerate(rows):
            for j, v in d.items():
                ri.append(r)
                ci.append(j)
                data.append(v)
        extra = sp.csr_matrix((data, (ri, ci)), shape=(len(rows), n))
        return sp.vstack([sp.csr_matrix(A, shape=(A.shape[0], n)), extra], format="csr")

    n = n0 + n_extra
    return ConicProgram(
        c=c,
        A_eq=stack(A_eq, eq_rows, n),
        b_eq=np.concatenate([b_eq, eq_rhs]),
        A_in=stack(A_in, in_rows, n),
        b_in=np.concatenate([b_in, in_rhs]),
        lb=lb,
        ub=ub,
        cones=cones,
        names=names,
        eq_names=list(eq_names) + eq_lbl,
        in_names=list(in_names) + in_lbl,
        n_original=n0,
        slack=slack,
    )
