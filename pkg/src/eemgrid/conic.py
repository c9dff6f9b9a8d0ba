"""Small convex solver front-end: quadratic objective, equalities, boxes and SOCs.

The interior-point work is delegated to Clarabel; this module owns the
problem format, the status contract and an independent feasibility check.
"""

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import clarabel
import numpy as np
import scipy.sparse as sp

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
MAX_ITER = "max_iter"

_STATUS = {
    "Solved": OPTIMAL,
    "PrimalInfeasible": INFEASIBLE,
    "AlmostPrimalInfeasible": INFEASIBLE,
    "DualInfeasible": UNBOUNDED,
    "AlmostDualInfeasible": UNBOUNDED,
}


class AffineRow(NamedTuple):
    """The affine form ``sum(coef[k] * z[idx[k]]) + const``."""

    idx: tuple
    coef: tuple
    const: float = 0.0

    def value(self, z):
        return float(sum(c * z[i] for i, c in zip(self.idx, self.coef)) + self.const)


@dataclass(frozen=True)
class SOCBlock:
    """``||body(z)||_2 <= head(z)``."""

    head: AffineRow
    body: tuple

    def slack(self, z):
        return self.head.value(z) - math.sqrt(sum(r.value(z) ** 2 for r in self.body))


@dataclass(eq=False)
class ConicProblem:
    """minimize  c0 + c.z + sum(h_diag * z**2)
    subject to  A z = b,  G z <= g,  lb <= z <= ub,  every SOC block.
    """

    n_vars: int
    c: np.ndarray
    h_diag: np.ndarray
    A: sp.csr_matrix
    b: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    cones: list = field(default_factory=list)
    c0: float = 0.0
    G: sp.csr_matrix = None
    g: np.ndarray = None

    def __post_init__(self):
        n = self.n_vars
        self.c = np.asarray(self.c, dtype=float).reshape(n)
        self.h_diag = np.asarray(self.h_diag, dtype=float).reshape(n)
        self.A = sp.csr_matrix(self.A, shape=(len(np.atleast_1d(self.b)), n)) if self.A is not None \
            else sp.csr_matrix((0, n))
        self.b = np.asarray(self.b, dtype=float).reshape(self.A.shape[0])
        self.lb = np.asarray(self.lb, dtype=float).reshape(n)
        self.ub = np.asarray(self.ub, dtype=float).reshape(n)
        if self.G is None:
            self.G = sp.csr_matrix((0, n))
            self.g = np.zeros(0)
        else:
            self.G = sp.csr_matrix(self.G, shape=(len(np.atleast_1d(self.g)), n))
            self.g = np.asarray(self.g, dtype=float).reshape(self.G.shape[0])

    def validate(self):
        if np.any(self.h_diag < 0):
            raise ValueError("h_diag must be nonnegative for a convex objective")
        if np.any(self.lb > self.ub):
            bad = int(np.flatnonzero(self.lb > self.ub)[0])
            raise ValueError(f"lb > ub for variable {bad}")
        for k, cone in enumerate(self.cones):
            for row in (cone.head, *cone.body):
                if any(i < 0 or i >= self.n_vars for i in row.idx):
                    raise ValueError(f"cone {k} references a variable outside 0..{self.n_vars - 1}")
        return self

    @property
    def n_eq(self):
        return self.A.shape[0]

    def objective(self, z):
        z = np.asarray(z, dtype=float)
        return float(self.c0 + self.c @ z + self.h_diag @ (z * z))

    def violation(self, z):
        """Largest absolute violation of any constraint at ``z``."""
        z = np.asarray(z, dtype=float)
        worst = 0.0
        if self.n_eq:
            worst = max(worst, float(np.abs(self.A @ z - self.b).max()))
        if self.G.shape[0]:
            worst = max(worst, float(np.max(self.G @ z - self.g, initial=0.0)))
        worst = max(worst, float(np.max(self.lb - z, initial=0.0)),
                    float(np.max(z - self.ub, initial=0.0)))
        for cone in self.cones:
            worst = max(worst, -cone.slack(z))
        return worst


@dataclass(frozen=True, eq=False)
class ConicSolution:
    z: np.ndarray
    objective: float
    status: str
    primal_residual: float
    dual_residual: float
    gap: float
    iterations: int
    max_violation: float = float("nan")

    @property
    def optimal(self):
        return self.status == OPTIMAL


def _clarabel_data(prob):
    """Translate to Clarabel's  min 1/2 x'Px + q'x  s.t.  Ax + s = b, s in K."""
    n = prob.n_vars
    blocks_A, blocks_b, cones = [], [], []

    fixed = np.flatnonzero(prob.lb == prob.ub)
    free_eq = prob.A
    n_zero = free_eq.shape[0] + len(fixed)
    if n_zero:
        rows = [free_eq]
        if len(fixed):
            rows.append(sp.csr_matrix((np.ones(len(fixed)), (np.arange(len(fixed)), fixed)),
                                      shape=(len(fixed), n)))
        blocks_A.append(sp.vstack(rows))
        blocks_b.append(np.concatenate([prob.b, prob.lb[fixed]]))
        cones.append(clarabel.ZeroConeT(n_zero))

    loose = prob.lb != prob.ub
    lo = np.flatnonzero(loose & np.isfinite(prob.lb))
    hi = np.flatnonzero(loose & np.isfinite(prob.ub))
    n_nonneg = len(lo) + len(hi) + prob.G.shape[0]
    if n_nonneg:
        rows_lo = sp.csr_matrix((-np.ones(len(lo)), (np.arange(len(lo)), lo)), shape=(len(lo), n))
        rows_hi = sp.csr_matrix((np.ones(len(hi)), (np.arange(len(hi)), hi)), shape=(len(hi), n))
        blocks_A.append(sp.vstack([rows_lo, rows_hi, prob.G]))
        blocks_b.append(np.concatenate([-prob.lb[lo], prob.ub[hi], prob.g]))
        cones.append(clarabel.NonnegativeConeT(n_nonneg))

    if prob.cones:
        data, ri, ci, consts = [], [], [], []
        r = 0
        for cone in prob.cones:
            rows = (cone.head, *cone.body)
            for row in rows:
                for i, cf in zip(row.idx, row.coef):
                    ri.append(r)
                    ci.append(i)
                    data.append(-cf)
                consts.append(row.const)
                r += 1
            cones.append(clarabel.SecondOrderConeT(len(rows)))
        blocks_A.append(sp.csr_matrix((data, (ri, ci)), shape=(r, n)))
        blocks_b.append(np.asarray(consts, dtype=float))

    A = sp.vstack(blocks_A).tocsc() if blocks_A else sp.csc_matrix((0, n))
    b = np.concatenate(blocks_b) if blocks_b else np.zeros(0)
    P = sp.diags(2.0 * prob.h_diag, format="csc")
    return P, prob.c.copy(), A, b, cones


def solve(prob, tol=1e-8, max_iter=200, reduced_tol=None, gap_tol=None):
    """Solve a :class:`ConicProblem` with a primal-dual interior-point method.

    ``status == "optimal"`` is only reported when the solver certifies
    convergence at ``tol``; infeasibility and unboundedness come from the
    solver's certificates and anything else is reported as ``"max_iter"``
    together with the residuals reached.

    With ``reduced_tol`` set, a run that stalls short of ``tol`` but whose
    iterate is certified feasible at ``reduced_tol`` (and within ten times
    the gap target) also counts as optimal. This keeps
    the most accurate iterate instead of restarting at a looser target.
    """
    prob.validate()
    n = prob.n_vars
    P, q, A, b, cones = _clarabel_data(prob)
    settings = clarabel.DefaultSettings()
    settings.verbose = False
    settings.max_iter = int(max_iter)
    gap_tol = tol if gap_tol is None else gap_tol
    settings.tol_gap_abs = gap_tol
    settings.tol_gap_rel = gap_tol
    settings.tol_feas = tol
    settings.presolve_enable = False
    if min(tol, gap_tol) < 1e-9:
        # default refinement stalls the KKT solves short of very tight targets
        settings.iterative_refinement_reltol = 1e-14
        settings.iterative_refinement_abstol = 1e-14
        settings.iterative_refinement_max_iter = 30
    status_map = _STATUS
    if reduced_tol is not None:
        settings.reduced_tol_feas = reduced_tol
        # the gap test stays near its full target: it is what bounds cone slack
        settings.reduced_tol_gap_abs = 10 * gap_tol
        settings.reduced_tol_gap_rel = 10 * gap_tol
        status_map = {**_STATUS, "AlmostSolved": OPTIMAL}
    res = clarabel.DefaultSolver(P, q, A, b, cones, settings).solve()

    status = status_map.get(str(res.status), MAX_ITER)
    z = np.asarray(res.x, dtype=float) if len(res.x) == n else np.full(n, np.nan)
    if status == OPTIMAL:
        obj = prob.objective(z)
        obj_dual = float(res.obj_val_dual) + prob.c0
        gap_abs = abs(obj - obj_dual)
        gap = min(gap_abs, gap_abs / max(1.0, abs(obj)))
        viol = prob.violation(z)
    else:
        obj = float("nan") if status != UNBOUNDED else -float("inf")
        gap = float("nan")
        viol = float("nan")
    return ConicSolution(
        z=z,
        objective=obj,
        status=status,
        primal_residual=float(res.r_prim),
        dual_residual=float(res.r_dual),
        gap=gap,
        iterations=int(res.iterations),
        max_violation=viol,
    )


# -- text dump ----------------------------------------------------------------

def _fmt(v):
    return repr(float(v))


def _row_text(row):
    terms = " ".join(f"{i}:{_fmt(c)}" for i, c in zip(row.idx, row.coef))
    return f"{terms} + {_fmt(row.const)}" if terms else f"+ {_fmt(row.const)}"


def dump_problem(prob):
    """Serialize a problem as text.

    Field order: header, ``n_vars``, ``c0``, ``c``, ``h``, ``lb``, ``ub``;
    then one ``eq`` line per equality row (``i:coef ... = rhs``), one ``le``
    line per inequality row (``i:coef ... <= rhs``) and one ``soc`` line per cone (``head | body_1 | body_2 ...``, each an affine
    row ``i:coef ... + const``).
    """
    lines = ["conic-problem 1",
             f"n_vars {prob.n_vars}",
             f"c0 {_fmt(prob.c0)}",
             "c " + " ".join(map(_fmt, prob.c)),
             "h " + " ".join(map(_fmt, prob.h_diag)),
             "lb " + " ".join(map(_fmt, prob.lb)),
             "ub " + " ".join(map(_fmt, prob.ub))]
    A = prob.A.tocsr()
    for k in range(A.shape[0]):
        lo, hi = A.indptr[k], A.indptr[k + 1]
        terms = " ".join(f"{i}:{_fmt(c)}" for i, c in zip(A.indices[lo:hi], A.data[lo:hi]))
        lines.append(f"eq {terms} = {_fmt(prob.b[k])}")
    G = prob.G.tocsr()
    for k in range(G.shape[0]):
        lo, hi = G.indptr[k], G.indptr[k + 1]
        terms = " ".join(f"{i}:{_fmt(c)}" for i, c in zip(G.indices[lo:hi], G.data[lo:hi]))
        lines.append(f"le {terms} <= {_fmt(prob.g[k])}")
    for cone in prob.cones:
        lines.append("soc " + " | ".join(_row_text(r) for r in (cone.head, *cone.body)))
    return "\n".join(lines) + "\n"


def _parse_row(text):
    lhs, const = text.rsplit("+ ", 1)
    idx, coef = [], []
    for term in lhs.split():
        i, c = term.split(":")
        idx.append(int(i))
        coef.append(float(c))
    return AffineRow(tuple(idx), tuple(coef), float(const))


def load_problem(text):
    """Inverse of :func:`dump_problem`."""
    lines = text.strip().splitlines()
    if not lines or not lines[0].startswith("conic-problem"):
        raise ValueError("not a conic-problem dump")
    head = {}
    eqs, les, cones = [], [], []
    for line in lines[1:]:
        key, _, rest = line.partition(" ")
        if key in ("eq", "le"):
            terms, rhs = rest.rsplit("<=" if key == "le" else "=", 1)
            row = {}
            for term in terms.split():
                i, c = term.split(":")
                row[int(i)] = float(c)
            (eqs if key == "eq" else les).append((row, float(rhs)))
        elif key == "soc":
            rows = [_parse_row(part.strip()) for part in rest.split("|")]
            cones.append(SOCBlock(rows[0], tuple(rows[1:])))
        else:
            head[key] = rest
    n = int(head["n_vars"])
    vec = lambda k: np.array([float(v) for v in head[k].split()]) if head[k] else np.zeros(0)

    def matrix(rows):
        ri, ci, data = [], [], []
        for k, (row, _) in enumerate(rows):
            for i, c in row.items():
                ri.append(k)
                ci.append(i)
                data.append(c)
        return sp.csr_matrix((data, (ri, ci)), shape=(len(rows), n)), np.array([r for _, r in rows])

    A, b = matrix(eqs)
    G, g = matrix(les)
    return ConicProblem(n, vec("c"), vec("h"), A, b, vec("lb"), vec("ub"), cones,
                        float(head["c0"]), G, g)
