"""Exact radial AC power flow in branch-flow variables (backward/forward sweep)."""

from dataclasses import dataclass

import numpy as np

from .exceptions import ConvergenceError, VoltageCollapseError


@dataclass(frozen=True, eq=False)
class PFSolution:
    """Converged branch-flow state; line quantities are indexed by child bus."""

    v: np.ndarray
    ell: np.ndarray
    P: np.ndarray
    Q: np.ndarray
    p0: float
    q0: float
    residual: float
    iterations: int
    line_r: np.ndarray

    @property
    def losses(self):
        return float(self.line_r @ self.ell)


def branch_flow_residual(tree, p, q, v, ell, P, Q):
    """Max absolute violation of the four branch-flow equation families."""
    par = tree.parent
    r, x = tree.r_pu, tree.x_pu
    n = tree.n_buses
    childP = np.zeros(n)
    childQ = np.zeros(n)
    np.add.at(childP, par[1:], P[1:])
    np.add.at(childQ, par[1:], Q[1:])
    s = slice(1, None)
    vpar = v[par[1:]]
    res_p = p[s] - (childP[s] - (P[s] - r[s] * ell[s]))
    res_q = q[s] - (childQ[s] - (Q[s] - x[s] * ell[s]))
    res_v = v[s] - (vpar - 2 * (r[s] * P[s] + x[s] * Q[s]) + (r[s] ** 2 + x[s] ** 2) * ell[s])
    res_l = ell[s] * vpar - (P[s] ** 2 + Q[s] ** 2)
    if n == 1:
        return 0.0
    return float(max(np.abs(res_p).max(), np.abs(res_q).max(),
                     np.abs(res_v).max(), np.abs(res_l).max()))


def solve_radial_acpf(tree, p, q, v0=1.0, tol=1e-10, max_iter=100):
    """Solve the branch-flow equations for given net injections.

    Parameters
    ----------
    tree : FeederTree
    p, q : array_like
        Net active/reactive injections per bus in p.u. (generation minus
        consumption); the root entry is ignored.
    v0 : float
        Squared substation voltage in p.u.^2.
    tol : float
        Stop once successive squared voltages change by less than ``tol``
        and every equation family holds to ``tol``.

    Raises
    ------
    VoltageCollapseError
        If a squared voltage becomes non-positive during the sweep.
    ConvergenceError
        If the iteration has not converged after ``max_iter`` sweeps.
    """
    if not v0 > 0:
        raise ValueError("v0 must be positive")
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    n = tree.n_buses
    par = tree.parent
    r, x = tree.r_pu, tree.x_pu
    z2 = r ** 2 + x ** 2
    v = np.full(n, float(v0))
    ell = np.zeros(n)
    P = np.zeros(n)
    Q = np.zeros(n)
    residual = np.inf
    for it in range(1, max_iter + 1):
        # backward: accumulate sending-end flows leaf to root
        P[:] = 0.0
        Q[:] = 0.0
        for k in range(n - 1, 0, -1):
            P[k] += -p[k] + r[k] * ell[k]
            Q[k] += -q[k] + x[k] * ell[k]
            P[par[k]] += P[k]
            Q[par[k]] += Q[k]
        P[0] = Q[0] = 0.0
        # forward: voltages and currents root to leaf
        v_old = v.copy()
        for k in range(1, n):
            va = v[par[k]]
            v[k] = va - 2.0 * (r[k] * P[k] + x[k] * Q[k]) + z2[k] * ell[k]
            if not v[k] > 0:
                raise VoltageCollapseError(
                    f"squared voltage at bus {tree.labels[k]} fell to {v[k]:.4g} (iteration {it})")
            ell[k] = (P[k] ** 2 + Q[k] ** 2) / va
        if not np.all(np.isfinite(v)):
            raise ConvergenceError("power flow diverged to non-finite values")
        dv = float(np.max(np.abs(v - v_old)))
        if dv < tol:
            residual = branch_flow_residual(tree, p, q, v, ell, P, Q)
            if residual <= tol:
                break
    else:
        raise ConvergenceError(
            f"backward/forward sweep did not converge in {max_iter} iterations "
            f"(last residual {residual:.3g}); loading may be beyond solvability")
    root_children = list(tree.children[0])
    return PFSolution(
        v=v, ell=ell, P=P.copy(), Q=Q.copy(),
        p0=float(P[root_children].sum()), q0=float(Q[root_children].sum()),
        residual=residual, iterations=it, line_r=np.asarray(r),
    )


def substation_energy_identity(sol, p):
    """|p0 - (losses - sum of net injections)|, i.e. the substation energy balance gap."""
    p = np.asarray(p, dtype=float)
    return abs(sol.p0 - (-p[1:].sum() + sol.losses))
