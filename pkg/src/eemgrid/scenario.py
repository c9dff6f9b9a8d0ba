"""Per-slot exogenous data: synthetic Gaussian scenarios and replayed trace CSVs."""

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import ScenarioError


@dataclass(frozen=True, eq=False)
class SlotData:
    """One control period's loads, available solar and prices.

    Vectors are per canonical bus index (root entry 0) in p.u.; prices are
    in cents per kWh.
    """

    t: int
    p_c: np.ndarray
    q_c: np.ndarray
    pg_max: np.ndarray
    price_main: float
    price_fit: float
    zero_fit: bool = False

    def __post_init__(self):
        for name in ("p_c", "q_c", "pg_max"):
            a = np.asarray(getattr(self, name), dtype=float)
            a.flags.writeable = False
            object.__setattr__(self, name, a)

    def validate(self):
        for name in ("p_c", "q_c", "pg_max"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ScenarioError(f"slot {self.t}: non-finite entries in {name}")
        if np.any(self.p_c < 0) or np.any(self.pg_max < 0):
            raise ScenarioError(f"slot {self.t}: negative load or available solar")
        if not (math.isfinite(self.price_main) and self.price_main > 0):
            raise ScenarioError(f"slot {self.t}: main-grid price must be positive")
        if not math.isfinite(self.price_fit) or self.price_fit < 0:
            raise ScenarioError(f"slot {self.t}: invalid FIT price {self.price_fit}")
        if self.price_fit == 0 and not self.zero_fit:
            raise ScenarioError(
                f"slot {self.t}: zero FIT price requires the explicit zero_fit policy flag")
        return self


@dataclass(frozen=True)
class PriceSchedule:
    """Constant or block-wise constant prices in cents/kWh.

    ``main`` and ``fit`` are scalars or sequences of block values; each block
    lasts ``block_slots`` slots (10 for a 5-minute market with 30 s slots)
    and the sequence repeats when the horizon is longer.
    """

    main: object = 30.0
    fit: object = 15.0
    block_slots: int = 1
    zero_fit: bool = False

    @classmethod
    def market(cls, main, fit=15.0, market_period_s=300, slot_s=30, zero_fit=False):
        if market_period_s % slot_s:
            raise ScenarioError("market period must be a multiple of the slot duration")
        return cls(main=main, fit=fit, block_slots=market_period_s // slot_s, zero_fit=zero_fit)


def price_schedule(spec, n_slots):
    """Expand a :class:`PriceSchedule` into per-slot ``(main, fit)`` arrays."""
    if isinstance(spec, dict):
        spec = PriceSchedule(**spec)
    if spec.block_slots < 1:
        raise ScenarioError("block_slots must be >= 1")

    def expand(values):
        vals = np.atleast_1d(np.asarray(values, dtype=float))
        idx = (np.arange(n_slots) // spec.block_slots) % len(vals)
        return vals[idx]

    main = expand(spec.main)
    fit = expand(spec.fit)
    if np.any(~np.isfinite(main)) or np.any(main <= 0):
        raise ScenarioError("main-grid prices must be positive")
    if np.any(~np.isfinite(fit)) or np.any(fit < 0):
        raise ScenarioError("FIT prices must be finite and nonnegative")
    if np.any(fit == 0) and not spec.zero_fit:
        raise ScenarioError("non-positive FIT price; set zero_fit=True for the zero-FIT policy")
    return main, fit


@dataclass(frozen=True)
class SyntheticConfig:
    load_fraction: float = 0.4
    gen_fraction: float = 0.8
    noise_std_fraction: float = 0.05
    seed: int = 0
    n_slots: int = 120
    prices: PriceSchedule = field(default_factory=PriceSchedule)
    solar_shape: str = "flat"

    def validate(self):
        for name in ("load_fraction", "gen_fraction"):
            if not 0 <= getattr(self, name) <= 1:
                raise ScenarioError(f"{name} must lie in [0, 1]")
        if self.noise_std_fraction < 0:
            raise ScenarioError("noise_std_fraction must be nonnegative")
        if self.n_slots < 1:
            raise ScenarioError("n_slots must be >= 1")
        if self.solar_shape not in ("flat", "bell"):
            raise ScenarioError(f"unknown solar_shape {self.solar_shape!r}")
        return self


def _solar_envelope(shape, n_slots):
    if shape == "flat":
        return np.ones(n_slots)
    # half-sine over the horizon, peaking mid-run
    phase = (np.arange(n_slots) + 0.5) / n_slots
    return 0.6 + 0.4 * np.sin(np.pi * phase)


def nominal_profile(tree, load_fraction, gen_fraction):
    """Nominal (p_c, q_c, pg_max) vectors in p.u."""
    p_c = load_fraction * np.asarray(tree.peak_p_pu)
    q_c = p_c * tree.reactive_ratio
    pg = gen_fraction * np.asarray(tree.pv_pu)
    return p_c, q_c, pg


def gen_synthetic(tree, cfg):
    """Draw ``cfg.n_slots`` slots of nominal-plus-Gaussian loads and solar.

    Each slot draws the load noise vector then the solar noise vector from a
    single ``numpy.random.default_rng(cfg.seed)`` stream, so a seed fixes the
    whole sequence. Negative draws are clamped to zero and reactive load
    follows the bus power factor.
    """
    cfg.validate()
    p_nom, _, g_nom = nominal_profile(tree, cfg.load_fraction, cfg.gen_fraction)
    ratio = np.asarray(tree.reactive_ratio)
    rng = np.random.default_rng(cfg.seed)
    main, fit = price_schedule(cfg.prices, cfg.n_slots)
    env = _solar_envelope(cfg.solar_shape, cfg.n_slots)
    sd = cfg.noise_std_fraction
    slots = []
    for t in range(cfg.n_slots):
        eps_c = rng.standard_normal(tree.n_buses) * (sd * p_nom)
        eps_g = rng.standard_normal(tree.n_buses) * (sd * g_nom)
        p_c = np.maximum(p_nom + eps_c, 0.0)
        pg = np.maximum(env[t] * g_nom + eps_g, 0.0)
        p_c[0] = pg[0] = 0.0
        slots.append(SlotData(t, p_c, p_c * ratio, pg, float(main[t]), float(fit[t]),
                              zero_fit=cfg.prices.zero_fit).validate())
    return slots


# -- trace replay -----------------------------------------------------------

@dataclass(frozen=True)
class TraceConfig:
    load_csv: str
    solar_csv: str
    source_resolution: int = 60
    solar_resolution: int = 5
    target_resolution: int = 30
    aggregation_group: int = 10
    bus_mapping: object = None
    load_scale: float = 1.0
    prices: PriceSchedule = field(default_factory=PriceSchedule)
    n_slots: object = None


def read_trace_csv(path):
    """Parse a ``timestamp_s,<source ids...>`` CSV into (timestamps, ids, kW matrix)."""
    path = Path(path)
    try:
        with path.open(newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise ScenarioError(f"{path}: {exc}") from exc
    if not rows or len(rows[0]) < 2 or rows[0][0].strip() != "timestamp_s":
        raise ScenarioError(f"{path}: header must start with 'timestamp_s' plus source columns")
    ids = [c.strip() for c in rows[0][1:]]
    ts, vals = [], []
    for k, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(ids) + 1:
            raise ScenarioError(f"{path}:{k}: expected {len(ids) + 1} fields, got {len(row)}")
        try:
            ts.append(int(row[0]))
            vals.append([float(v) for v in row[1:]])
        except ValueError as exc:
            raise ScenarioError(f"{path}:{k}: {exc}") from exc
    ts = np.asarray(ts, dtype=np.int64)
    if len(ts) == 0:
        raise ScenarioError(f"{path}: no data rows")
    if np.any(np.diff(ts) <= 0):
        raise ScenarioError(f"{path}: timestamps are not strictly increasing")
    return ts, ids, np.asarray(vals, dtype=float)


def read_mapping_csv(path):
    mapping = {}
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:2]] != ["source_id", "bus_id"]:
            raise ScenarioError(f"{path}: header must be 'source_id,bus_id'")
        for row in reader:
            if row:
                mapping[row[0].strip()] = int(row[1])
    return mapping


def resample(ts, values, target):
    """Bring samples onto a ``target``-second grid starting at ``ts[0]``.

    Finer data are block-averaged; coarser data are linearly interpolated.
    """
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    step = int(np.min(np.diff(ts))) if len(ts) > 1 else target
    if step < target and target % step == 0 and np.all(np.diff(ts) == step):
        k = target // step
        n = len(ts) // k
        out = values[: n * k].reshape(n, k, -1).mean(axis=1)
        return ts[0] + target * np.arange(n), out
    grid = np.arange(ts[0], ts[-1] + 1, target)
    out = np.column_stack([np.interp(grid, ts, values[:, j]) for j in range(values.shape[1])])
    return grid, out


def aggregate_groups(matrix, group):
    """Average consecutive column blocks of size ``group`` (last block may be short)."""
    matrix = np.asarray(matrix, dtype=float)
    cols = [matrix[:, i:i + group].mean(axis=1) for i in range(0, matrix.shape[1], group)]
    return np.column_stack(cols)


def _normalize(curves):
    peak = curves.max(axis=0)
    out = np.zeros_like(curves)
    nz = peak > 0
    out[:, nz] = curves[:, nz] / peak[nz]
    return out


def _bus_curves(tree, ids, data, mapping, group, wanted, kind):
    """Average sources per bus; without a mapping, cycle group curves over buses."""
    curves = np.zeros((data.shape[0], tree.n_buses))
    if mapping is None:
        groups = aggregate_groups(data, group)
        for j, bus in enumerate(wanted):
            curves[:, bus] = groups[:, j % groups.shape[1]]
        return curves
    members = {}
    for col, sid in enumerate(ids):
        if sid in mapping:
            try:
                bus = tree.index_of(mapping[sid])
            except KeyError:
                raise ScenarioError(f"{kind} source {sid!r} mapped to unknown bus {mapping[sid]}") from None
            members.setdefault(bus, []).append(col)
    unmapped = [tree.labels[b] for b in wanted if b not in members]
    if unmapped:
        raise ScenarioError(f"unmapped {kind} bus(es) {unmapped}")
    for bus, cols in members.items():
        curves[:, bus] = data[:, cols].mean(axis=1)
    return curves


def load_trace(tree, cfg):
    """Replay load and solar traces onto the feeder.

    Loads are interpolated (or averaged) to the target resolution, averaged
    per bus group, normalized to a daily maximum of one and scaled by the
    bus peak active load; solar curves are aggregated likewise and scaled by
    the PV nameplate.
    """
    mapping = cfg.bus_mapping
    if isinstance(mapping, (str, Path)):
        mapping = read_mapping_csv(mapping)
    lt, lids, ldata = read_trace_csv(cfg.load_csv)
    st, sids, sdata = read_trace_csv(cfg.solar_csv)
    for name, ts, res in (("load", lt, cfg.source_resolution), ("solar", st, cfg.solar_resolution)):
        if res and len(ts) > 1 and np.any(np.diff(ts) % res):
            raise ScenarioError(f"{name} timestamps are not on a {res} s grid")
    lt, ldata = resample(lt, ldata, cfg.target_resolution)
    st, sdata = resample(st, sdata, cfg.target_resolution)
    n = min(len(lt), len(st))
    if cfg.n_slots is not None:
        if cfg.n_slots > n:
            raise ScenarioError(f"traces cover {n} slots, {cfg.n_slots} requested")
        n = cfg.n_slots
    ldata, sdata = ldata[:n], sdata[:n]
    if np.any(~np.isfinite(ldata)) or np.any(~np.isfinite(sdata)):
        raise ScenarioError("NaN after interpolation")

    loads = _normalize(_bus_curves(tree, lids, ldata, mapping, cfg.aggregation_group,
                                   tree.load_buses, "load"))
    solar = _normalize(_bus_curves(tree, sids, sdata, mapping, 1, tree.pv_buses, "solar"))
    p_nom = cfg.load_scale * np.asarray(tree.peak_p_pu)
    ratio = np.asarray(tree.reactive_ratio)
    pv = np.asarray(tree.pv_pu)
    main, fit = price_schedule(cfg.prices, n)
    slots = []
    for t in range(n):
        p_c = loads[t] * p_nom
        pg = solar[t] * pv
        p_c[0] = pg[0] = 0.0
        slots.append(SlotData(t, p_c, p_c * ratio, pg, float(main[t]), float(fit[t]),
                              zero_fit=cfg.prices.zero_fit).validate())
    return slots


def write_trace(slots, tree, directory, slot_s=30):
    """Write a slot sequence as load/solar trace CSVs (kW) plus a mapping file."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    kw = 1000.0 * tree.s_base
    paths = {}
    for kind, attr, buses in (("load", "p_c", tree.load_buses), ("solar", "pg_max", tree.pv_buses)):
        path = directory / f"{kind}.csv"
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["timestamp_s"] + [f"{kind}_{tree.labels[b]}" for b in buses])
            for s in slots:
                vec = getattr(s, attr)
                w.writerow([s.t * slot_s] + [repr(float(vec[b] * kw)) for b in buses])
        paths[kind] = path
    mpath = directory / "mapping.csv"
    with mpath.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["source_id", "bus_id"])
        for b in tree.load_buses:
            w.writerow([f"load_{tree.labels[b]}", tree.labels[b]])
        for b in tree.pv_buses:
            w.writerow([f"solar_{tree.labels[b]}", tree.labels[b]])
    paths["mapping"] = mpath
    return paths
