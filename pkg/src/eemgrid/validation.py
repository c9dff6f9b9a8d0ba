"""Input checks shared by the estimators and the CLI."""

import numbers

import numpy as np

from .exceptions import ScenarioError
from .scenario import SlotData
from .subproblem import DualState, LimitsProfile


def check_slot(slot, tree):
    """Return ``slot`` after verifying its shape against ``tree`` and its values."""
    if not isinstance(slot, SlotData):
        raise TypeError(f"expected SlotData, got {type(slot).__name__}")
    for name in ("p_c", "q_c", "pg_max"):
        a = getattr(slot, name)
        if a.shape != (tree.n_buses,):
            raise ScenarioError(
                f"slot {slot.t}: {name} has shape {a.shape}, expected ({tree.n_buses},)")
    return slot.validate()


def check_slots(slots, tree):
    slots = list(slots)
    if not slots:
        raise ScenarioError("empty slot sequence")
    return [check_slot(s, tree) for s in slots]


def check_dual(dual, n_buses):
    if dual is None:
        return DualState.zeros(n_buses)
    if not isinstance(dual, DualState):
        raise TypeError(f"expected DualState, got {type(dual).__name__}")
    if dual.nu.shape != (n_buses,):
        raise ValueError(f"dual state has {dual.nu.shape[0]} buses, feeder has {n_buses}")
    return dual


def check_limits(limits):
    if limits is None:
        return LimitsProfile()
    if isinstance(limits, dict):
        return LimitsProfile(**limits)
    if not isinstance(limits, LimitsProfile):
        raise TypeError(f"expected LimitsProfile, got {type(limits).__name__}")
    return limits


def check_step_size(mu):
    if not isinstance(mu, numbers.Real) or not np.isfinite(mu) or mu <= 0:
        raise ValueError(f"step_size must be a positive finite number, got {mu!r}")
    return float(mu)


def check_choice(value, name, options):
    v = str(value).lower()
    if v not in options:
        raise ValueError(f"{name} must be one of {sorted(options)}, got {value!r}")
    return v
