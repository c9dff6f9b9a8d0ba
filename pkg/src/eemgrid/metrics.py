"""Dollar costs, running-average feasibility and voltage statistics for trajectories.

Controllers work in cents/kWh times p.u. power; this module is the single
place where that becomes dollars.
"""

import csv
import json
import math
from dataclasses import asdict, dataclass

import numpy as np

DEFAULT_SLOT_S = 30.0
DEFAULT_RETAIL_PRICE = 30.0  # cents/kWh; assumed, no experiment fixes it
COMPLIANCE_WINDOW = 20  # slots, i.e. 10 minutes at 30 s
VOLTAGE_TOL = 1e-6  # p.u.^2 slack before a limit counts as violated

SLOT_CSV_COLUMNS = (
    "t", "mode", "model", "cost_usd", "time_avg_cost_usd_per_h", "p0_pu",
    "curtailment_pu_total", "v_min_ac", "v_max_ac", "v_min_model", "v_max_model",
    "dual_norm", "exactness_gap", "solver_iters",
)
TRUNCATION_MARKER = "#TRUNCATED"


def _to_usd(cents_times_pu, dt_s, s_base_mva):
    # cents/kWh * p.u. -> $/kWh * kW (1 MVA = 1000 kW) * hours
    return cents_times_pu / 100.0 * 1000.0 * s_base_mva * dt_s / 3600.0


def slot_cost(record, slot=None, dt_s=DEFAULT_SLOT_S, s_base_mva=1.0):
    """Dollar cost of one slot: main-grid purchase plus the feed-in payments."""
    pi0 = record.price_main if slot is None else slot.price_main
    pif = record.price_fit if slot is None else slot.price_fit
    return _to_usd(pi0 * record.p0 + pif * record.surplus_injection, dt_s, s_base_mva)


def prefix_mean(values):
    values = np.asarray(values, dtype=float)
    return np.cumsum(values) / np.arange(1, len(values) + 1)


def slot_costs(trajectory, dt_s=DEFAULT_SLOT_S, s_base_mva=1.0):
    return np.array([slot_cost(r, dt_s=dt_s, s_base_mva=s_base_mva) for r in trajectory])


def time_avg_cost(trajectory, dt_s=DEFAULT_SLOT_S, s_base_mva=1.0):
    """Running mean of the slot cost expressed as a $/h rate."""
    if len(trajectory) == 0:
        raise ValueError("empty trajectory")
    return prefix_mean(slot_costs(trajectory, dt_s, s_base_mva)) * (3600.0 / dt_s)


def _voltages(trajectory, kind):
    if kind == "model" and trajectory[0].v_model is not None:
        return trajectory.stack("v_model")
    return trajectory.stack("v_ac")


def ergodic_feasibility(trajectory, tree, limits, voltage="model"):
    """Running-average constraint residuals at every prefix.

    Returns a dict of (n_slots, n_buses) arrays: ``apparent`` is the excess
    of the average squared inverter output over ``s_n^2``; ``lower`` and
    ``upper`` are the distances of the average squared voltage below ``v_l``
    and above ``v_u``. The root column is always zero.
    """
    if len(trajectory) == 0:
        raise ValueError("empty trajectory")
    steps = np.arange(1, len(trajectory) + 1)[:, None]
    app = np.array([r.setpoints.apparent_sq() for r in trajectory])
    v = _voltages(trajectory, voltage)
    avg_app = np.cumsum(app, axis=0) / steps
    avg_v = np.cumsum(v, axis=0) / steps
    out = {
        "apparent": np.maximum(avg_app - np.asarray(tree.s_pu) ** 2, 0.0),
        "lower": np.maximum(limits.v_l - avg_v, 0.0),
        "upper": np.maximum(avg_v - limits.v_u, 0.0),
    }
    for a in out.values():
        a[:, 0] = 0.0
    return out


def final_feasibility_residual(trajectory, tree, limits):
    """Largest final-prefix residual over buses and constraint families."""
    res = ergodic_feasibility(trajectory, tree, limits)
    return float(max(a[-1].max() for a in res.values()))


def customer_cost(slot, setpoints, price_retail=DEFAULT_RETAIL_PRICE, dt_s=DEFAULT_SLOT_S,
                  s_base_mva=1.0):
    """Per-bus customer bill: retail price on deficits minus feed-in credit on surplus."""
    net = np.asarray(setpoints.p_g) - np.asarray(slot.p_c)
    deficit = np.maximum(-net, 0.0)
    surplus = np.maximum(net, 0.0)
    out = _to_usd(price_retail * deficit - slot.price_fit * surplus, dt_s, s_base_mva)
    out[0] = 0.0
    return out


def utility_cost(slot, record, price_retail=DEFAULT_RETAIL_PRICE, dt_s=DEFAULT_SLOT_S,
                 s_base_mva=1.0):
    """Utility's slot cost: purchases and feed-in payments minus retail revenue."""
    net = (np.asarray(record.setpoints.p_g) - np.asarray(slot.p_c))[1:]
    cents = (slot.price_main * record.p0 + slot.price_fit * np.maximum(net, 0.0).sum()
             - price_retail * np.maximum(-net, 0.0).sum())
    return _to_usd(cents, dt_s, s_base_mva)


def violation_stats(trajectory, limits, window=COMPLIANCE_WINDOW, tol=VOLTAGE_TOL):
    """Tight-limit violations measured on AC voltages.

    ``fraction`` is the share of slots where any bus leaves ``[v_l, v_u]``;
    ``worst_window_compliance`` is the lowest share of clean slots over all
    windows of ``window`` consecutive slots (the whole run if shorter).
    Excursions up to ``tol`` are treated as solver noise, not violations.
    """
    v = trajectory.stack("v_ac")[:, 1:]
    bad = ((v < limits.v_l - tol) | (v > limits.v_u + tol)).any(axis=1)
    n = len(bad)
    w = min(window, n)
    clean = np.convolve(~bad, np.ones(w), mode="valid") / w
    return {
        "fraction": float(bad.mean()),
        "n_violating_slots": int(bad.sum()),
        "worst_window_compliance": float(clean.min()),
        "window_slots": int(w),
    }


@dataclass
class RunSummary:
    label: str
    mode: str
    model: str
    n_slots: int
    time_avg_cost_series: list
    total_cost: float
    final_time_avg_cost: float
    feasibility_residuals: dict
    violation_fraction: float
    worst_window_compliance: float
    total_curtailment: float
    grid_avg_voltage_series: list
    max_exactness_gap: object

    def to_dict(self):
        return asdict(self)


def summarize(trajectory, tree, dt_s=DEFAULT_SLOT_S, s_base_mva=None):
    """Collect the headline quantities of a trajectory into a :class:`RunSummary`.

    Curtailment is reported in kWh and voltages as magnitudes in p.u.
    """
    s_base = tree.s_base if s_base_mva is None else s_base_mva
    cfg = trajectory.config
    costs = slot_costs(trajectory, dt_s, s_base)
    series = time_avg_cost(trajectory, dt_s, s_base)
    res = ergodic_feasibility(trajectory, tree, cfg.limits)
    viol = violation_stats(trajectory, cfg.limits)
    curt = sum(float(r.curtailment.sum()) for r in trajectory) * 1000.0 * s_base * dt_s / 3600.0
    v_ac = trajectory.stack("v_ac")[:, 1:]
    gaps = [r.exactness_gap for r in trajectory if r.exactness_gap is not None]
    return RunSummary(
        label=cfg.label, mode=cfg.mode, model=cfg.model, n_slots=len(trajectory),
        time_avg_cost_series=series.tolist(), total_cost=float(costs.sum()),
        final_time_avg_cost=float(series[-1]),
        feasibility_residuals={k: a[-1].tolist() for k, a in res.items()},
        violation_fraction=viol["fraction"],
        worst_window_compliance=viol["worst_window_compliance"],
        total_curtailment=curt,
        grid_avg_voltage_series=np.sqrt(v_ac).mean(axis=1).tolist(),
        max_exactness_gap=max(gaps) if gaps else None,
    )


def _fmt(x):
    if x is None:
        return ""
    if isinstance(x, float):
        return "nan" if math.isnan(x) else repr(x)
    return str(x)


class SlotCsvWriter:
    """Streams per-slot rows; ``abort`` appends a marker row so partial files are recognisable."""

    def __init__(self, fh, mode, model, dt_s=DEFAULT_SLOT_S, s_base_mva=1.0):
        self.fh = fh
        self.mode = mode
        self.model = model
        self.dt_s = dt_s
        self.s_base = s_base_mva
        self._w = csv.writer(fh, lineterminator="\n")
        self._w.writerow(SLOT_CSV_COLUMNS)
        self._sum = 0.0
        self._n = 0

    def write(self, rec):
        cost = slot_cost(rec, dt_s=self.dt_s, s_base_mva=self.s_base)
        self._sum += cost
        self._n += 1
        vm = rec.v_model
        self._w.writerow([_fmt(x) for x in (
            rec.t, self.mode, self.model, cost, self._sum / self._n * 3600.0 / self.dt_s,
            rec.p0, float(rec.curtailment.sum()),
            float(rec.v_ac[1:].min()), float(rec.v_ac[1:].max()),
            None if vm is None else float(vm[1:].min()),
            None if vm is None else float(vm[1:].max()),
            None if rec.dual is None else rec.dual.norm(),
            rec.exactness_gap, rec.iterations,
        )])

    def abort(self, reason):
        self._w.writerow([TRUNCATION_MARKER, reason] + [""] * (len(SLOT_CSV_COLUMNS) - 2))
        self.fh.flush()


def write_slot_csv(trajectory, path, dt_s=DEFAULT_SLOT_S, s_base_mva=1.0):
    cfg = trajectory.config
    with open(path, "w", newline="") as fh:
        w = SlotCsvWriter(fh, cfg.mode, cfg.model, dt_s, s_base_mva)
        for rec in trajectory:
            w.write(rec)


def read_slot_csv(path):
    """Rows of a per-slot CSV as dicts; a truncation marker row ends the read."""
    rows = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            if row["t"] == TRUNCATION_MARKER:
                break
            rows.append(row)
    return rows


def write_summary_json(summary, path):
    with open(path, "w") as fh:
        json.dump(summary.to_dict(), fh, indent=2)
        fh.write("\n")
