"""Experiment configuration, bundled presets and the replica runner behind the CLI."""

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import metrics
from .controller import ControllerConfig, run_horizon
from .feeder import SCE56_EXPERIMENT_OVERRIDES, builtin_sce56, load_feeder
from .scenario import PriceSchedule, SyntheticConfig, TraceConfig, gen_synthetic, load_trace
from .subproblem import LimitsProfile


@dataclass
class ExperimentConfig:
    """Everything one CLI invocation needs.

    ``feeder`` is ``{"builtin": "sce56", "overrides": {...}}`` or
    ``{"path": ..., "overrides": {...}}``. Replica ``r`` draws its synthetic
    scenario with seed ``seed + r``; every controller sees the same draws.
    """

    name: str = "custom"
    feeder: dict = field(default_factory=lambda: {"builtin": "sce56"})
    scenario: object = field(default_factory=SyntheticConfig)
    controllers: list = field(default_factory=lambda: [ControllerConfig()])
    replicas: int = 1
    seed: int = 0
    output_dir: str = None

    def __post_init__(self):
        if self.replicas < 1:
            raise ValueError("replicas must be >= 1")
        if not self.controllers:
            raise ValueError("at least one controller is required")
        if isinstance(self.scenario, TraceConfig):
            for p in (self.scenario.load_csv, self.scenario.solar_csv, self.scenario.bus_mapping):
                if p is not None and not Path(p).is_file():
                    raise FileNotFoundError(f"trace file not found: {p}")
            if self.replicas != 1:
                raise ValueError("trace scenarios are deterministic; use replicas = 1")
        path = self.feeder.get("path")
        if path is not None and not Path(path).is_file():
            raise FileNotFoundError(f"feeder file not found: {path}")

    def build_feeder(self):
        overrides = _int_keys(self.feeder.get("overrides"))
        if "path" in self.feeder:
            return load_feeder(self.feeder["path"], overrides)
        name = self.feeder.get("builtin", "sce56")
        if name != "sce56":
            raise ValueError(f"unknown builtin feeder {name!r}")
        return builtin_sce56(overrides)

    def scenario_for(self, tree, replica):
        if isinstance(self.scenario, TraceConfig):
            return load_trace(tree, self.scenario)
        return gen_synthetic(tree, replace(self.scenario, seed=self.seed + replica))

    def to_dict(self):
        scen = dict(vars(self.scenario))
        scen["kind"] = "trace" if isinstance(self.scenario, TraceConfig) else "synthetic"
        scen["prices"] = dict(vars(self.scenario.prices))
        scen.pop("seed", None)
        return {"name": self.name, "feeder": self.feeder, "scenario": scen,
                "controllers": [c.to_dict() for c in self.controllers],
                "replicas": self.replicas, "seed": self.seed, "output_dir": self.output_dir}


def _int_keys(overrides):
    if not overrides:
        return None
    return {int(k): v for k, v in overrides.items()}


def _tuple(v):
    return tuple(v) if isinstance(v, list) else v


def _prices(d):
    if d is None:
        return PriceSchedule()
    if "market_period_s" in d:
        return PriceSchedule.market(d["main"], d.get("fit", 15.0), d["market_period_s"],
                                    d.get("slot_s", 30), d.get("zero_fit", False))
    return PriceSchedule(**{k: _tuple(v) for k, v in d.items()})


def _controller(d):
    d = dict(d)
    if "limits" in d and isinstance(d["limits"], dict):
        d["limits"] = LimitsProfile(**d["limits"])
    return ControllerConfig(**d)


_SCENARIO_KEYS = {"synthetic": set(SyntheticConfig.__dataclass_fields__),
                  "trace": set(TraceConfig.__dataclass_fields__)}


def config_from_dict(doc):
    """Build an :class:`ExperimentConfig` from a parsed JSON document.

    A ``"preset"`` key starts from that preset and overlays the other keys.
    """
    doc = dict(doc)
    base = preset(doc.pop("preset")) if "preset" in doc else ExperimentConfig()
    kw = {}
    for key in ("name", "feeder", "replicas", "seed", "output_dir"):
        if key in doc:
            kw[key] = doc.pop(key)
    if "scenario" in doc:
        s = dict(doc.pop("scenario"))
        kind = s.pop("kind", "synthetic")
        if kind not in _SCENARIO_KEYS:
            raise ValueError(f"unknown scenario kind {kind!r}")
        unknown = set(s) - _SCENARIO_KEYS[kind]
        if unknown:
            raise ValueError(f"unknown {kind} scenario keys: {sorted(unknown)}")
        s["prices"] = _prices(s.get("prices"))
        kw["scenario"] = SyntheticConfig(**s) if kind == "synthetic" else TraceConfig(**s)
    if "controllers" in doc:
        kw["controllers"] = [_controller(c) for c in doc.pop("controllers")]
    if doc:
        raise ValueError(f"unknown config keys: {sorted(doc)}")
    return replace(base, **kw)


def load_config(path):
    with open(path) as fh:
        return config_from_dict(json.load(fh))


# -- presets ------------------------------------------------------------------

def _sce56_experiment():
    return {"builtin": "sce56",
            "overrides": {str(k): v for k, v in SCE56_EXPERIMENT_OVERRIDES.items()}}


def _fig2():
    return ExperimentConfig(
        name="fig2", feeder=_sce56_experiment(),
        scenario=SyntheticConfig(0.4, 0.8, 0.05, n_slots=120),
        controllers=[ControllerConfig("eem", "bfm", 0.1), ControllerConfig("dem", "bfm")])


def _fig3():
    return ExperimentConfig(
        name="fig3", feeder=_sce56_experiment(),
        scenario=SyntheticConfig(0.4, 0.8, 0.05, n_slots=60),
        controllers=[ControllerConfig("eem", "bfm", mu) for mu in (0.1, 0.2, 0.3)],
        replicas=20)


def _fig456():
    # synthetic stand-in for the trace-driven runs: longer horizon, daytime solar bump
    return ExperimentConfig(
        name="fig4-6-synthetic", feeder=_sce56_experiment(),
        scenario=SyntheticConfig(0.4, 0.8, 0.05, n_slots=600, solar_shape="bell"),
        controllers=[ControllerConfig("eem", "bfm", 0.25), ControllerConfig("eem", "ldf", 0.25),
                     ControllerConfig("dem", "bfm"), ControllerConfig("nocontrol")])


PRESETS = {"fig2": _fig2, "fig3": _fig3, "fig4-6-synthetic": _fig456}


def preset(name):
    try:
        return PRESETS[name]()
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None


# -- runner -------------------------------------------------------------------

@dataclass
class RunResult:
    replica: int
    index: int
    controller: ControllerConfig
    summary: object = None
    trajectory: object = None
    error: str = None


def _run_replica(cfg, replica, out_dir=None, keep_trajectory=False):
    """Run every controller on one replica's scenario; returns a list of RunResult."""
    tree = cfg.build_feeder()
    slots = cfg.scenario_for(tree, replica)
    results = []
    for k, ctl in enumerate(cfg.controllers):
        res = RunResult(replica, k, ctl)
        fh = writer = None
        if out_dir is not None:
            stem = _stem(k, ctl, replica if cfg.replicas > 1 else None)
            fh = open(Path(out_dir) / f"{stem}.csv", "w", newline="")
            writer = metrics.SlotCsvWriter(fh, ctl.mode, ctl.model, s_base_mva=tree.s_base)
        try:
            traj = run_horizon(tree, slots, ctl, on_record=writer.write if writer else None)
            res.summary = metrics.summarize(traj, tree)
            if keep_trajectory:
                res.trajectory = traj
            if out_dir is not None:
                metrics.write_summary_json(res.summary, Path(out_dir) / f"{stem}.summary.json")
        except Exception as exc:
            res.error = f"{type(exc).__name__}: {exc}"
            if writer is not None:
                writer.abort(res.error)
        finally:
            if fh is not None:
                fh.close()
        results.append(res)
    return results


def _stem(k, ctl, replica):
    label = ctl.label.lower().replace("(", "_").replace(")", "").replace("=", "")
    stem = f"{k:02d}_{label}"
    return stem if replica is None else f"{stem}_r{replica:03d}"


def run_experiment(cfg, out_dir=None, jobs=1, keep_trajectory=False):
    """Run all replicas (in parallel when ``jobs > 1``) and return RunResults in order."""
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
    reps = range(cfg.replicas)
    if jobs > 1 and cfg.replicas > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(_run_replica, cfg, r, out_dir, keep_trajectory) for r in reps]
            chunks = [f.result() for f in futures]
    else:
        chunks = [_run_replica(cfg, r, out_dir, keep_trajectory) for r in reps]
    return [res for chunk in chunks for res in chunk]


def comparison_table(cfg, results):
    """Per-controller mean over replicas of final $/h rate, total $, curtailment, violations."""
    rows = []
    for k, ctl in enumerate(cfg.controllers):
        mine = [r for r in results if r.index == k]
        ok = [r.summary for r in mine if r.error is None]
        row = {"controller": ctl.label, "replicas_ok": len(ok), "replicas_failed": len(mine) - len(ok)}
        if ok:
            final = np.array([s.final_time_avg_cost for s in ok])
            row.update(
                mean_final_cost_usd_per_h=float(final.mean()),
                stderr_final_cost=float(final.std(ddof=1) / math.sqrt(len(ok))) if len(ok) > 1 else 0.0,
                mean_total_cost_usd=float(np.mean([s.total_cost for s in ok])),
                mean_curtailment_kwh=float(np.mean([s.total_curtailment for s in ok])),
                mean_violation_fraction=float(np.mean([s.violation_fraction for s in ok])),
            )
        rows.append(row)
    return rows


def format_table(rows):
    cols = ["controller", "mean_final_cost_usd_per_h", "stderr_final_cost", "mean_total_cost_usd",
            "mean_curtailment_kwh", "mean_violation_fraction", "replicas_ok", "replicas_failed"]
    head = ["controller", "final $/h", "stderr", "total $", "curtail kWh", "viol frac", "ok", "failed"]
    body = []
    for r in rows:
        line = []
        for c in cols:
            v = r.get(c, "")
            line.append(f"{v:.4f}" if isinstance(v, float) else str(v))
        body.append(line)
    widths = [max(len(h), *(len(b[i]) for b in body)) for i, h in enumerate(head)]
    fmt = "  ".join(f"{{:<{w}}}" for w in widths)
    return "\n".join([fmt.format(*head)] + [fmt.format(*b) for b in body])
