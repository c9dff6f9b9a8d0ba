"""Per-slot primal subproblems over the branch-flow (SOCP) and LinDistFlow (QP) models.

Both builders minimise the slot Lagrangian

    pi0 * p0 + pif * sum [pg - pc]_+ + sum nu * (pg^2 + qg^2) + sum (xi_u - xi_l) * v

over the instantaneous feasible set (solar limits, inverter hard limits,
wide voltage limits). Prices enter in cents/kWh times p.u. power.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import conic
from .conic import AffineRow, ConicProblem, SOCBlock
from .exceptions import InfeasibleSlotError, SolverError

BFM = "bfm"
LDF = "ldf"
ELL_FLOOR = 1e-8
# Interior-point slack on the relaxed cones scales with the duality gap at
# termination, so the SOCP is driven to a much smaller gap than feasibility
# tolerance to keep it well under the 1e-5 exactness budget.
BFM_TOL = 1e-10
BFM_GAP_TOL = 1e-12
REDUCED_TOL = 1e-9
# (feasibility, gap) targets tried in order when a solve stalls
FALLBACK_TOLS = ((1e-9, 1e-12), (1e-8, 1e-10), (1e-8, 1e-8))


@dataclass(frozen=True)
class LimitsProfile:
    """Squared-voltage windows and the inverter overload ratio.

    ``[v_l, v_u]`` must hold on average, ``[v_l_wide, v_u_wide]`` at every
    slot. ``overload_factor=None`` takes the per-bus hard limit from the
    feeder data; a number sets ``s_bar = overload_factor * s``.
    """

    v_l: float = 0.9604
    v_u: float = 1.0404
    v_l_wide: float = 0.9409
    v_u_wide: float = 1.0609
    overload_factor: object = None

    def __post_init__(self):
        if not self.v_l_wide <= self.v_l < self.v_u <= self.v_u_wide:
            raise ValueError(
                "voltage limits must satisfy v_l_wide <= v_l < v_u <= v_u_wide, got "
                f"{self.v_l_wide}, {self.v_l}, {self.v_u}, {self.v_u_wide}")
        if self.overload_factor is not None and self.overload_factor < 1:
            raise ValueError("overload_factor must be >= 1")

    def s_bar(self, tree):
        if self.overload_factor is None:
            return np.asarray(tree.s_bar_pu)
        return self.overload_factor * np.asarray(tree.s_pu)

    def tightened(self):
        """Instantaneous limits equal to the average ones (the deterministic problem)."""
        return LimitsProfile(self.v_l, self.v_u, self.v_l, self.v_u, overload_factor=1.0)

    def to_dict(self):
        return {"v_l": self.v_l, "v_u": self.v_u, "v_l_wide": self.v_l_wide,
                "v_u_wide": self.v_u_wide, "overload_factor": self.overload_factor}


@dataclass(frozen=True, eq=False)
class DualState:
    nu: np.ndarray
    xi_lower: np.ndarray
    xi_upper: np.ndarray

    def __post_init__(self):
        for name in ("nu", "xi_lower", "xi_upper"):
            a = np.array(getattr(self, name), dtype=float)
            if np.any(a < 0) or not np.all(np.isfinite(a)):
                raise ValueError(f"dual {name} must be finite and nonnegative")
            a.flags.writeable = False
            object.__setattr__(self, name, a)

    @classmethod
    def zeros(cls, n_buses):
        z = np.zeros(n_buses)
        return cls(z, z, z)

    def norm(self):
        return float(np.sqrt(np.sum(self.nu ** 2) + np.sum(self.xi_lower ** 2)
                             + np.sum(self.xi_upper ** 2)))

    def as_vector(self):
        return np.concatenate([self.nu, self.xi_lower, self.xi_upper])


@dataclass(frozen=True, eq=False)
class Setpoints:
    p_g: np.ndarray
    q_g: np.ndarray

    def apparent_sq(self):
        return self.p_g ** 2 + self.q_g ** 2


@dataclass(frozen=True, eq=False)
class SubproblemSolution:
    setpoints: Setpoints
    P: np.ndarray
    Q: np.ndarray
    v_model: np.ndarray
    ell: object
    surplus_aux: np.ndarray
    objective: float
    cost: float
    p0: float
    exactness_gap: object
    model: str
    surplus: np.ndarray
    iterations: int
    solver: object = field(default=None, repr=False)


def surplus_partition(slot):
    """Boolean mask of buses whose available solar meets their own load."""
    return np.asarray(slot.pg_max) >= np.asarray(slot.p_c)


class _Layout:
    """Index bookkeeping for the stacked decision vector."""

    def __init__(self, n_lines, surplus_idx, with_ell):
        self.N = n_lines
        blocks = ["pg", "qg", "P", "Q", "v"] + (["ell"] if with_ell else [])
        self.start = {name: k * n_lines for k, name in enumerate(blocks)}
        self.n_core = len(blocks) * n_lines
        self.surplus_idx = np.asarray(surplus_idx, dtype=int)  # bus indices owning a t variable
        self.n_vars = self.n_core + len(self.surplus_idx)

    def __call__(self, block, bus):
        # bus is a canonical index >= 1
        return self.start[block] + bus - 1

    def block(self, z, name):
        s = self.start[name]
        out = np.zeros(self.N + 1)
        out[1:] = z[s:s + self.N]
        return out


def idle_lines(tree, slot):
    """Mask of lines whose whole downstream subtree has no load, solar, capacitor or inverter.

    Such lines carry exactly zero flow at any optimum; in the relaxation they
    would otherwise keep a small spurious current (losses there are nearly
    free), so the builders pin their flows to zero.
    """
    active = ((np.asarray(slot.p_c) != 0) | (np.asarray(slot.q_c) != 0)
              | (np.asarray(slot.pg_max) != 0) | (np.asarray(tree.q_cap_pu) != 0)
              | np.asarray(tree.has_inverter))
    busy = active.copy()
    for k in range(tree.n_buses - 1, 0, -1):
        if busy[k]:
            busy[tree.parent[k]] = True
    idle = ~busy
    idle[0] = False
    return idle


def _check_inputs(tree, slot, dual):
    n = tree.n_buses
    for name in ("p_c", "q_c", "pg_max"):
        if len(getattr(slot, name)) != n:
            raise ValueError(f"slot.{name} has length {len(getattr(slot, name))}, feeder has {n} buses")
    for name in ("nu", "xi_lower", "xi_upper"):
        if len(getattr(dual, name)) != n:
            raise ValueError(f"dual.{name} has length {len(getattr(dual, name))}, feeder has {n} buses")


def _assemble(tree, slot, dual, limits, pi0, pif, v0, model):
    _check_inputs(tree, slot, dual)
    with_ell = model == BFM
    N = tree.n_lines
    pc = np.asarray(slot.p_c)
    qc = np.asarray(slot.q_c)
    pgmax = np.asarray(slot.pg_max)
    qcap = np.asarray(tree.q_cap_pu)
    r, x = np.asarray(tree.r_pu), np.asarray(tree.x_pu)
    s_bar = limits.s_bar(tree)
    surplus = surplus_partition(slot)
    surplus[0] = False
    idle = idle_lines(tree, slot)
    lay = _Layout(N, np.flatnonzero(surplus), with_ell)
    nv = lay.n_vars
    par = tree.parent

    c = np.zeros(nv)
    h = np.zeros(nv)
    lb = np.full(nv, -np.inf)
    ub = np.full(nv, np.inf)
    rows, cols, vals, rhs = [], [], [], []
    eq = 0

    def put(row, col, val):
        rows.append(row)
        cols.append(col)
        vals.append(val)

    cones = []
    for n in range(1, N + 1):
        ipg, iqg, iP, iQ, iv = (lay(b, n) for b in ("pg", "qg", "P", "Q", "v"))
        il = lay("ell", n) if with_ell else None
        a = par[n]

        # nodal active balance: pg - sum_children P + P - r*ell = pc
        put(eq, ipg, 1.0)
        put(eq, iP, 1.0)
        for k in tree.children[n]:
            put(eq, lay("P", k), -1.0)
        if with_ell:
            put(eq, il, -r[n])
        rhs.append(pc[n])
        eq += 1
        # nodal reactive balance with the capacitor as a constant injection
        put(eq, iqg, 1.0)
        put(eq, iQ, 1.0)
        for k in tree.children[n]:
            put(eq, lay("Q", k), -1.0)
        if with_ell:
            put(eq, il, -x[n])
        rhs.append(qc[n] - qcap[n])
        eq += 1
        # voltage drop along line n
        put(eq, iv, 1.0)
        put(eq, iP, 2.0 * r[n])
        put(eq, iQ, 2.0 * x[n])
        if with_ell:
            put(eq, il, -(r[n] ** 2 + x[n] ** 2))
        if a == 0:
            rhs.append(v0)
        else:
            put(eq, lay("v", a), -1.0)
            rhs.append(0.0)
        eq += 1

        lb[iv], ub[iv] = limits.v_l_wide, limits.v_u_wide
        if surplus[n]:
            lb[ipg], ub[ipg] = 0.0, pgmax[n]
        else:
            lb[ipg] = ub[ipg] = pgmax[n]
        if s_bar[n] > 0:
            cones.append(SOCBlock(AffineRow((), (), float(s_bar[n])),
                                  (AffineRow((ipg,), (1.0,)), AffineRow((iqg,), (1.0,)))))
        else:
            lb[iqg] = ub[iqg] = 0.0

        c[ipg] = -pi0
        c[iv] = dual.xi_upper[n] - dual.xi_lower[n]
        h[ipg] = h[iqg] = dual.nu[n]

        if idle[n]:
            lb[iP] = ub[iP] = lb[iQ] = ub[iQ] = 0.0
        if with_ell:
            lb[il] = 0.0
            if idle[n]:
                ub[il] = 0.0
            c[il] = pi0 * r[n]
            # ||(2P, 2Q, v_a - ell)|| <= v_a + ell
            if a == 0:
                head = AffineRow((il,), (1.0,), v0)
                tail = AffineRow((il,), (-1.0,), v0)
            else:
                ia = lay("v", a)
                head = AffineRow((ia, il), (1.0, 1.0))
                tail = AffineRow((ia, il), (1.0, -1.0))
            cones.append(SOCBlock(head, (AffineRow((iP,), (2.0,)), AffineRow((iQ,), (2.0,)), tail)))
        else:
            h[iP] = h[iQ] = pi0 * r[n]

    # epigraph of [pg - pc]_+ on surplus buses: t >= 0, pg - t <= pc
    g_rows, g_cols, g_vals, g_rhs = [], [], [], []
    for k, n in enumerate(lay.surplus_idx):
        it = lay.n_core + k
        lb[it] = 0.0
        c[it] = pif
        g_rows += [k, k]
        g_cols += [lay("pg", n), it]
        g_vals += [1.0, -1.0]
        g_rhs.append(pc[n])

    A = sp.csr_matrix((vals, (rows, cols)), shape=(eq, nv))
    G = sp.csr_matrix((g_vals, (g_rows, g_cols)), shape=(len(g_rhs), nv))
    prob = ConicProblem(nv, c, h, A, np.asarray(rhs), lb, ub, cones,
                        c0=pi0 * float(pc[1:].sum()), G=G, g=np.asarray(g_rhs))
    prob.layout = lay
    prob.surplus = surplus
    return prob


def build_bfm(tree, slot, dual, limits, pi0=None, pif=None, v0=1.0):
    """Assemble the relaxed branch-flow subproblem as a :class:`ConicProblem`.

    Variables are stacked as ``[pg, qg, P, Q, v, ell]`` over the non-root
    buses followed by one epigraph variable per surplus bus. Prices default
    to the slot's own.
    """
    pi0 = slot.price_main if pi0 is None else pi0
    pif = slot.price_fit if pif is None else pif
    return _assemble(tree, slot, dual, limits, pi0, pif, v0, BFM)


def build_ldf(tree, slot, dual, limits, pi0=None, pif=None, v0=1.0):
    """Assemble the LinDistFlow subproblem: linear model, losses ~ r*(P^2 + Q^2)."""
    pi0 = slot.price_main if pi0 is None else pi0
    pif = slot.price_fit if pif is None else pif
    return _assemble(tree, slot, dual, limits, pi0, pif, v0, LDF)


def exactness_gap(tree, v, ell, P, Q, floor=ELL_FLOOR):
    """max over loaded lines of 1 - (P^2 + Q^2) / (v_parent * ell)."""
    vpar = v[tree.parent[1:]]
    ell_ = ell[1:]
    mask = ell_ > floor
    if not np.any(mask):
        return 0.0
    rel = 1.0 - (P[1:][mask] ** 2 + Q[1:][mask] ** 2) / (vpar[mask] * ell_[mask])
    return float(max(rel.max(), 0.0))


def solve_slot(tree, slot, dual, limits, model=BFM, v0=1.0, tol=None, max_iter=200):
    """Solve one slot's subproblem and unpack setpoints, flows and voltages.

    ``tol=None`` uses ``BFM_TOL`` (gap ``BFM_GAP_TOL``) for the SOCP and
    1e-8 for the QP. If the
    solver stalls short of ``tol`` an iterate certified at
    ``REDUCED_TOL`` is accepted; failing that the solve is retried at each
    looser ``FALLBACK_TOLS`` entry in turn.

    Raises
    ------
    InfeasibleSlotError
        When the solver certifies the slot infeasible.
    SolverError
        For any other non-optimal termination.
    """
    model = model.lower()
    if model not in (BFM, LDF):
        raise ValueError(f"unknown grid model {model!r}")
    builder = build_bfm if model == BFM else build_ldf
    prob = builder(tree, slot, dual, limits, v0=v0)
    gap_tol = None
    if tol is None:
        tol, gap_tol = (BFM_TOL, BFM_GAP_TOL) if model == BFM else (1e-8, None)
    res = conic.solve(prob, tol=tol, max_iter=max_iter, reduced_tol=max(tol, REDUCED_TOL),
                      gap_tol=gap_tol)
    for loose, loose_gap in FALLBACK_TOLS:
        if res.status != conic.MAX_ITER or loose < tol:
            break
        res = conic.solve(prob, tol=loose, max_iter=max_iter, reduced_tol=loose,
                          gap_tol=max(loose_gap, gap_tol or tol))
    if res.status == conic.INFEASIBLE:
        raise InfeasibleSlotError(f"slot {slot.t}: {model.upper()} subproblem is infeasible",
                                  status=res.status, slot=slot.t)
    if res.status != conic.OPTIMAL:
        raise SolverError(f"slot {slot.t}: solver stopped with status {res.status} "
                          f"(primal {res.primal_residual:.2e}, dual {res.dual_residual:.2e})",
                          status=res.status, slot=slot.t)

    lay = prob.layout
    z = res.z
    pg = lay.block(z, "pg")
    qg = lay.block(z, "qg")
    P = lay.block(z, "P")
    Q = lay.block(z, "Q")
    v = lay.block(z, "v")
    v[0] = v0
    t = np.zeros(tree.n_buses)
    t[lay.surplus_idx] = z[lay.n_core:]
    root_children = list(tree.children[0])
    if model == BFM:
        ell = lay.block(z, "ell")
        p0 = float(P[root_children].sum())
        gap = exactness_gap(tree, v, ell, P, Q)
    else:
        ell = None
        r = np.asarray(tree.r_pu)
        p0 = float(np.sum(slot.p_c[1:] - pg[1:]) + np.sum(r * (P ** 2 + Q ** 2)))
        gap = None
    cost = slot.price_main * p0 + slot.price_fit * float(t.sum())
    return SubproblemSolution(
        setpoints=Setpoints(pg, qg), P=P, Q=Q, v_model=v, ell=ell, surplus_aux=t,
        objective=res.objective, cost=cost, p0=p0, exactness_gap=gap, model=model,
        surplus=prob.surplus, iterations=res.iterations, solver=res,
    )
