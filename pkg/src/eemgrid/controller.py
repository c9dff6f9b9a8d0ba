"""Online controllers: the ergodic dual-subgradient manager and two baselines.

The functional core (``eem_step``, ``dem_step``, ``no_control_step``,
``run_horizon``) works on plain dataclasses. The estimator classes at the
bottom wrap it in the scikit-learn idiom: ``fit`` consumes a slot sequence,
``partial_fit`` continues from the learned multipliers, ``predict`` returns
setpoints for new slots without updating them.
"""

from dataclasses import dataclass, field, replace

import numpy as np
from sklearn.base import BaseEstimator

from . import acpf
from .exceptions import EEMError
from .subproblem import BFM, LDF, DualState, LimitsProfile, Setpoints, solve_slot
from .validation import check_choice, check_dual, check_limits, check_slots, check_step_size

EEM = "eem"
DEM = "dem"
NOCONTROL = "nocontrol"
MODES = {EEM, DEM, NOCONTROL}
MODELS = {BFM, LDF}


@dataclass(frozen=True)
class ControllerConfig:
    mode: str = EEM
    model: str = BFM
    step_size: float = 0.1
    limits: LimitsProfile = field(default_factory=LimitsProfile)
    horizon: int = None
    v0: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "mode", check_choice(self.mode, "mode", MODES))
        object.__setattr__(self, "model", check_choice(self.model, "model", MODELS))
        object.__setattr__(self, "limits", check_limits(self.limits))
        if self.mode == EEM:
            check_step_size(self.step_size)
        if self.horizon is not None and self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if not self.v0 > 0:
            raise ValueError("v0 must be positive")

    @property
    def label(self):
        if self.mode == NOCONTROL:
            return "NoControl"
        tag = f"{self.mode.upper()}-{self.model.upper()}"
        return f"{tag}(mu={self.step_size:g})" if self.mode == EEM else tag

    def to_dict(self):
        return {"mode": self.mode, "model": self.model, "step_size": self.step_size,
                "limits": self.limits.to_dict(), "horizon": self.horizon, "v0": self.v0}


@dataclass(frozen=True, eq=False)
class SlotRecord:
    """What happened in one slot.

    ``cost`` is the slot objective ``pi0 * p0 + pif * sum(surplus)`` in
    cents/kWh times p.u.; metrics turns it into dollars. ``p0`` is the
    model substation power for EEM/DEM and the AC one for NoControl.
    """

    t: int
    setpoints: Setpoints
    v_model: object
    v_ac: np.ndarray
    cost: float
    p0: float
    p0_ac: float
    surplus_injection: float
    price_main: float
    price_fit: float
    dual: object
    curtailment: np.ndarray
    exactness_gap: object
    iterations: int
    objective: float = float("nan")


@dataclass(eq=False)
class Trajectory:
    config: ControllerConfig
    records: list = field(default_factory=list)
    terminal_dual: object = None

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __getitem__(self, k):
        return self.records[k]

    def stack(self, name):
        """Stack a per-record array attribute into an (n_slots, ...) array."""
        return np.array([getattr(r, name) for r in self.records])


def dual_update(dual, sol, limits, mu, s_rating):
    """Projected subgradient step on the three multiplier families.

    ``s_rating`` holds the per-bus inverter ratings ``s_n`` entering the
    average apparent-power constraint; the root entry is ignored.
    """
    sp_ = sol.setpoints
    v = sol.v_model
    g_nu = sp_.p_g ** 2 + sp_.q_g ** 2 - np.asarray(s_rating) ** 2
    g_lo = limits.v_l - v
    g_hi = v - limits.v_u
    for g in (g_nu, g_lo, g_hi):
        g[0] = 0.0
    return DualState(
        np.maximum(dual.nu + mu * g_nu, 0.0),
        np.maximum(dual.xi_lower + mu * g_lo, 0.0),
        np.maximum(dual.xi_upper + mu * g_hi, 0.0),
    )


def _apply(tree, slot, pg, qg, v0):
    p = pg - slot.p_c
    q = qg + np.asarray(tree.q_cap_pu) - slot.q_c
    return acpf.solve_radial_acpf(tree, p, q, v0=v0)


def _record(tree, slot, sol, dual, v0):
    pf = _apply(tree, slot, sol.setpoints.p_g, sol.setpoints.q_g, v0)
    curt = np.asarray(slot.pg_max) - sol.setpoints.p_g
    curt[0] = 0.0
    return SlotRecord(
        t=slot.t, setpoints=sol.setpoints, v_model=sol.v_model, v_ac=pf.v,
        cost=sol.cost, p0=sol.p0, p0_ac=pf.p0, surplus_injection=float(sol.surplus_aux.sum()),
        price_main=slot.price_main, price_fit=slot.price_fit, dual=dual,
        curtailment=np.maximum(curt, 0.0), exactness_gap=sol.exactness_gap,
        iterations=sol.iterations, objective=sol.objective,
    )


def eem_step(tree, slot, dual, cfg):
    """Solve at the incoming multipliers, then step them. Returns (record, new dual)."""
    sol = solve_slot(tree, slot, dual, cfg.limits, model=cfg.model, v0=cfg.v0)
    new = dual_update(dual, sol, cfg.limits, cfg.step_size, tree.s_pu)
    return _record(tree, slot, sol, new, cfg.v0), new


def dem_step(tree, slot, cfg):
    """Solve the slot with zero multipliers and the tight limits imposed outright."""
    zero = DualState.zeros(tree.n_buses)
    sol = solve_slot(tree, slot, zero, cfg.limits.tightened(), model=cfg.model, v0=cfg.v0)
    return _record(tree, slot, sol, None, cfg.v0)


def no_control_step(tree, slot, v0=1.0):
    """Inject all available solar at unity power factor and evaluate with AC power flow."""
    pg = np.array(slot.pg_max, dtype=float)
    pg[0] = 0.0
    qg = np.zeros(tree.n_buses)
    pf = _apply(tree, slot, pg, qg, v0)
    surplus = float(np.maximum(pg[1:] - slot.p_c[1:], 0.0).sum())
    cost = slot.price_main * pf.p0 + slot.price_fit * surplus
    return SlotRecord(
        t=slot.t, setpoints=Setpoints(pg, qg), v_model=None, v_ac=pf.v, cost=cost,
        p0=pf.p0, p0_ac=pf.p0, surplus_injection=surplus, price_main=slot.price_main,
        price_fit=slot.price_fit, dual=None, curtailment=np.zeros(tree.n_buses),
        exactness_gap=None, iterations=pf.iterations, objective=cost,
    )


def run_horizon(tree, scenario, cfg, dual0=None, on_record=None):
    """Run ``cfg`` over the first ``cfg.horizon`` slots of ``scenario``.

    ``on_record`` is called with each record as soon as it exists. If a
    slot fails, the exception is re-raised with the trajectory so far
    attached as ``exc.partial``.
    """
    slots = list(scenario)
    horizon = cfg.horizon or len(slots)
    if len(slots) < horizon:
        raise ValueError(f"scenario has {len(slots)} slots, horizon needs {horizon}")
    dual = check_dual(dual0, tree.n_buses)
    traj = Trajectory(cfg)
    try:
        for slot in slots[:horizon]:
            if cfg.mode == EEM:
                rec, dual = eem_step(tree, slot, dual, cfg)
            elif cfg.mode == DEM:
                rec = dem_step(tree, slot, cfg)
            else:
                rec = no_control_step(tree, slot, cfg.v0)
            traj.records.append(rec)
            if on_record is not None:
                on_record(rec)
    except EEMError as exc:
        traj.terminal_dual = dual if cfg.mode == EEM else None
        exc.partial = traj
        raise
    traj.terminal_dual = dual if cfg.mode == EEM else None
    return traj


def compute_H(tree, limits):
    """Sum over non-root buses of s_bar^2 + 2 (v_u_wide - v_l_wide)^2."""
    s_bar = limits.s_bar(tree)[1:]
    width = limits.v_u_wide - limits.v_l_wide
    return float(np.sum(s_bar ** 2 + 2.0 * width ** 2))


# -- estimator interface ------------------------------------------------------

class _ManagerBase(BaseEstimator):
    _mode = None

    def _config(self):
        return ControllerConfig(mode=self._mode, model=self.model,
                                step_size=getattr(self, "step_size", 0.1),
                                limits=check_limits(self.limits), v0=self.v0)

    def _tree(self):
        if self.feeder is None:
            raise ValueError(f"{type(self).__name__} needs a feeder")
        return self.feeder

    def fit(self, X, y=None):
        """Run the controller over the slot sequence ``X``."""
        tree = self._tree()
        slots = check_slots(X, tree)
        self.config_ = self._config()
        self.trajectory_ = run_horizon(tree, slots, self.config_)
        self.n_slots_seen_ = len(slots)
        return self

    def predict(self, X):
        """Setpoints for each slot as an array of shape (n_slots, n_buses, 2)."""
        traj = self._peek(X)
        return np.stack([np.column_stack([r.setpoints.p_g, r.setpoints.q_g]) for r in traj])

    def _peek(self, X):
        self._check_fitted()
        tree = self._tree()
        return run_horizon(tree, check_slots(X, tree), self.config_)

    def _check_fitted(self):
        if not hasattr(self, "config_"):
            raise AttributeError(f"this {type(self).__name__} instance is not fitted yet; call fit first")

    def score(self, X, y=None):
        """Negative mean slot cost (cents/kWh times p.u.) on ``X``; higher is better."""
        return -float(np.mean([r.cost for r in self._peek(X)]))


class ErgodicEnergyManager(_ManagerBase):
    """Stochastic dual-subgradient manager that enforces limits on average.

    Parameters
    ----------
    feeder : FeederTree
    model : {"bfm", "ldf"}
        Grid model inside each slot's subproblem.
    step_size : float
        Constant subgradient step for the multipliers.
    limits : LimitsProfile or dict, optional
    v0 : float
        Squared substation voltage.

    Attributes
    ----------
    dual_ : DualState
        Multipliers after the last slot seen.
    trajectory_ : Trajectory
        Record of the most recent ``fit`` or ``partial_fit`` call.
    """

    _mode = EEM

    def __init__(self, feeder=None, model=BFM, step_size=0.1, limits=None, v0=1.0):
        self.feeder = feeder
        self.model = model
        self.step_size = step_size
        self.limits = limits
        self.v0 = v0

    def fit(self, X, y=None):
        super().fit(X, y)
        self.dual_ = self.trajectory_.terminal_dual
        return self

    def partial_fit(self, X, y=None):
        """Continue the multiplier sequence from ``dual_`` over more slots."""
        tree = self._tree()
        slots = check_slots(X, tree)
        if not hasattr(self, "config_"):
            self.config_ = self._config()
            self.dual_ = DualState.zeros(tree.n_buses)
            self.n_slots_seen_ = 0
        self.trajectory_ = run_horizon(tree, slots, self.config_, dual0=self.dual_)
        self.dual_ = self.trajectory_.terminal_dual
        self.n_slots_seen_ += len(slots)
        return self

    def _peek(self, X):
        # solve at the frozen multipliers, leaving dual_ untouched
        self._check_fitted()
        tree = self._tree()
        cfg = self.config_
        traj = Trajectory(cfg)
        for slot in check_slots(X, tree):
            sol = solve_slot(tree, slot, self.dual_, cfg.limits, model=cfg.model, v0=cfg.v0)
            traj.records.append(_record(tree, slot, sol, self.dual_, cfg.v0))
        traj.terminal_dual = self.dual_
        return traj


class DeterministicEnergyManager(_ManagerBase):
    """Per-slot optimal dispatch with the tight limits enforced every slot."""

    _mode = DEM

    def __init__(self, feeder=None, model=BFM, limits=None, v0=1.0):
        self.feeder = feeder
        self.model = model
        self.limits = limits
        self.v0 = v0


class NoControlManager(_ManagerBase):
    """Full solar injection at unity power factor, no optimisation."""

    _mode = NOCONTROL

    def __init__(self, feeder=None, limits=None, v0=1.0):
        self.feeder = feeder
        self.limits = limits
        self.v0 = v0

    def _config(self):
        return ControllerConfig(mode=NOCONTROL, limits=check_limits(self.limits), v0=self.v0)


def make_controller(cfg, feeder):
    """Estimator matching a :class:`ControllerConfig`."""
    if cfg.mode == EEM:
        return ErgodicEnergyManager(feeder, cfg.model, cfg.step_size, cfg.limits, cfg.v0)
    if cfg.mode == DEM:
        return DeterministicEnergyManager(feeder, cfg.model, cfg.limits, cfg.v0)
    return NoControlManager(feeder, cfg.limits, cfg.v0)


def with_step(cfg, mu):
    return replace(cfg, step_size=mu)
