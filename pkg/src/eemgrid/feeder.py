"""Radial single-phase feeder model, JSON ingestion and the bundled SCE 56-bus data."""

import copy
import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .exceptions import FeederValidationError

_BUS_KEYS = ("peak_load_mva", "power_factor", "shunt_mvar", "pv_mw", "s_mva", "s_bar_mva")

# Bus 3 is printed as 30 MVA; 0.30 MVA keeps the 40% loading cases solvable.
SCE56_EXPERIMENT_OVERRIDES = {3: {"peak_load_mva": 0.30}}


@dataclass(frozen=True)
class BusSpec:
    id: int
    peak_load: float = 0.0
    power_factor: float = 1.0
    shunt_capacitor: float = 0.0
    pv_nameplate: float = 0.0
    inverter_rating: float = 0.0
    overload_rating: float = 0.0
    suspect: bool = False

    def validate(self):
        if not self.peak_load >= 0:
            raise FeederValidationError(f"bus {self.id}: negative peak load {self.peak_load}")
        if not 0 < self.power_factor <= 1:
            raise FeederValidationError(
                f"bus {self.id}: power factor {self.power_factor} outside (0, 1]")
        if not self.shunt_capacitor >= 0:
            raise FeederValidationError(f"bus {self.id}: negative shunt capacitor")
        if not self.pv_nameplate >= 0:
            raise FeederValidationError(f"bus {self.id}: negative PV nameplate")
        if not self.inverter_rating >= 0:
            raise FeederValidationError(f"bus {self.id}: negative inverter rating")
        if self.overload_rating < self.inverter_rating:
            raise FeederValidationError(
                f"bus {self.id}: overload rating s_bar={self.overload_rating} "
                f"below inverter rating s={self.inverter_rating}")
        if self.pv_nameplate > 0 and self.inverter_rating <= 0:
            raise FeederValidationError(f"bus {self.id}: PV installed without an inverter rating")

    @property
    def reactive_ratio(self):
        """tan(arccos(pf)), the q/p ratio of the bus load."""
        return math.tan(math.acos(self.power_factor))


@dataclass(frozen=True)
class LineSpec:
    from_bus: int
    to_bus: int
    r: float
    x: float

    def validate(self):
        if self.from_bus == self.to_bus:
            raise FeederValidationError(f"line ({self.from_bus},{self.to_bus}) is a self-loop")
        if not (self.r >= 0 and self.x >= 0):
            raise FeederValidationError(
                f"line ({self.from_bus},{self.to_bus}): negative impedance r={self.r}, x={self.x}")


def _readonly(a):
    a = np.asarray(a, dtype=float).copy()
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class FeederTree:
    """Radial feeder in canonical order (root at index 0, ``parent[n] < n``).

    All per-bus arrays have length ``n_buses``; entry 0 is the substation.
    Line ``n`` connects ``parent[n]`` to ``n`` so line quantities are indexed
    by their child bus and the root entry is zero.
    """

    labels: tuple
    parent: np.ndarray
    children: tuple
    r_pu: np.ndarray
    x_pu: np.ndarray
    v_base: float
    s_base: float
    bus_specs: tuple
    name: str = ""
    suspect_rows: tuple = field(default=())

    @property
    def n_buses(self):
        return len(self.labels)

    @property
    def n_lines(self):
        return self.n_buses - 1

    @property
    def z_base(self):
        return self.v_base ** 2 / self.s_base

    @property
    def label_map(self):
        """Original bus id -> canonical index."""
        return {lab: i for i, lab in enumerate(self.labels)}

    def index_of(self, label):
        try:
            return self.label_map[label]
        except KeyError:
            raise KeyError(f"unknown bus id {label!r}") from None

    def _bus_array(self, attr, scale=1.0):
        return _readonly([getattr(b, attr) / scale for b in self.bus_specs])

    @property
    def peak_p_pu(self):
        """Peak active load per bus (peak apparent power times power factor)."""
        return _readonly([b.peak_load * b.power_factor / self.s_base for b in self.bus_specs])

    @property
    def reactive_ratio(self):
        return _readonly([b.reactive_ratio for b in self.bus_specs])

    @property
    def q_cap_pu(self):
        return self._bus_array("shunt_capacitor", self.s_base)

    @property
    def pv_pu(self):
        return self._bus_array("pv_nameplate", self.s_base)

    @property
    def s_pu(self):
        return self._bus_array("inverter_rating", self.s_base)

    @property
    def s_bar_pu(self):
        return self._bus_array("overload_rating", self.s_base)

    @property
    def has_inverter(self):
        return np.array([b.overload_rating > 0 for b in self.bus_specs])

    @property
    def load_buses(self):
        return [i for i, b in enumerate(self.bus_specs) if b.peak_load > 0]

    @property
    def pv_buses(self):
        return [i for i, b in enumerate(self.bus_specs) if b.pv_nameplate > 0]

    @property
    def capacitor_buses(self):
        return [i for i, b in enumerate(self.bus_specs) if b.shunt_capacitor > 0]

    @property
    def suspect_buses(self):
        return [b.id for b in self.bus_specs if b.suspect]

    def depth(self):
        d = np.zeros(self.n_buses, dtype=int)
        for n in range(1, self.n_buses):
            d[n] = d[self.parent[n]] + 1
        return d

    def path_to_root(self, n):
        """Canonical indices from ``n`` up to and including the root."""
        path = [int(n)]
        while path[-1] > 0:
            path.append(int(self.parent[path[-1]]))
        return path

    def summary(self):
        return {
            "name": self.name,
            "n_buses": self.n_buses,
            "n_lines": self.n_lines,
            "v_base_kv": self.v_base,
            "s_base_mva": self.s_base,
            "pv_buses": [self.labels[i] for i in self.pv_buses],
            "capacitor_buses": [self.labels[i] for i in self.capacitor_buses],
            "load_buses": len(self.load_buses),
            "r_pu_range": [float(self.r_pu[1:].min()), float(self.r_pu[1:].max())] if self.n_lines else [],
            "x_pu_range": [float(self.x_pu[1:].min()), float(self.x_pu[1:].max())] if self.n_lines else [],
            "max_depth": int(self.depth().max()),
            "suspect_buses": self.suspect_buses,
            "suspect_rows": list(self.suspect_rows),
        }


def topological_order(tree_or_edges, root=None):
    """Order buses so that every parent precedes its children.

    Accepts a :class:`FeederTree` (returns canonical indices, which are
    already ordered) or an iterable of ``(from, to)`` edges together with
    the root label. Ties at equal depth are broken by ascending id.
    """
    if isinstance(tree_or_edges, FeederTree):
        tree = tree_or_edges
        depth = tree.depth()
        return sorted(range(tree.n_buses), key=lambda n: (depth[n], tree.labels[n]))

    adj = {}
    for a, b in tree_or_edges:
        adj.setdefault(a, []).append(b)
        adj.setdefault(b, []).append(a)
    if root is None:
        raise ValueError("root is required when ordering a raw edge list")
    depth = {root: 0}
    frontier = [root]
    while frontier:
        nxt = []
        for u in frontier:
            for w in adj.get(u, ()):
                if w not in depth:
                    depth[w] = depth[u] + 1
                    nxt.append(w)
        frontier = nxt
    return sorted(depth, key=lambda n: (depth[n], n))


def _check_topology(bus_ids, root, lines):
    """Validate the edge set; returns the parent label of every non-root bus."""
    known = set(bus_ids)
    seen = set()
    for ln in lines:
        for end in (ln.from_bus, ln.to_bus):
            if end not in known:
                raise FeederValidationError(
                    f"line ({ln.from_bus},{ln.to_bus}) references unknown bus {end}")
        key = frozenset((ln.from_bus, ln.to_bus))
        if key in seen:
            raise FeederValidationError(f"duplicate edge ({ln.from_bus},{ln.to_bus})")
        seen.add(key)

    # union-find pinpoints the edge that closes a cycle
    uf = {b: b for b in bus_ids}

    def find(a):
        while uf[a] != a:
            uf[a] = uf[uf[a]]
            a = uf[a]
        return a

    for ln in lines:
        ra, rb = find(ln.from_bus), find(ln.to_bus)
        if ra == rb:
            raise FeederValidationError(f"cycle detected at edge ({ln.from_bus},{ln.to_bus})")
        uf[ra] = rb

    adj = {b: [] for b in bus_ids}
    for ln in lines:
        adj[ln.from_bus].append(ln.to_bus)
        adj[ln.to_bus].append(ln.from_bus)
    parent = {root: None}
    stack = [root]
    while stack:
        u = stack.pop()
        for w in adj[u]:
            if w not in parent:
                parent[w] = u
                stack.append(w)
    missing = sorted(b for b in bus_ids if b not in parent)
    if missing:
        raise FeederValidationError(f"disconnected bus(es) {missing} unreachable from root {root}")
    return parent


def build_tree(buses, lines, v_base, s_base, name="", suspect_rows=()):
    """Validate raw bus/line specs and assemble a canonical :class:`FeederTree`.

    ``buses`` is a list of ``(BusSpec, is_root)`` pairs; ``lines`` a list of
    :class:`LineSpec` with ohmic impedances.
    """
    if not (v_base > 0 and s_base > 0):
        raise FeederValidationError("v_base and s_base must be positive")
    roots = [b.id for b, is_root in buses if is_root]
    if not roots:
        raise FeederValidationError("missing root: exactly one bus must be flagged as root")
    if len(roots) > 1:
        raise FeederValidationError(f"multiple roots {roots}")
    root = roots[0]
    specs = {}
    for b, _ in buses:
        if b.id in specs:
            raise FeederValidationError(f"duplicate bus id {b.id}")
        b.validate()
        specs[b.id] = b
    for ln in lines:
        ln.validate()
    # a wrong edge count always trips one of the named topology errors
    parent_label = _check_topology(list(specs), root, lines)

    order = topological_order([(ln.from_bus, ln.to_bus) for ln in lines], root=root)
    if len(specs) == 1:
        order = [root]
    index = {lab: i for i, lab in enumerate(order)}
    n = len(order)
    parent = np.full(n, -1, dtype=int)
    r_pu = np.zeros(n)
    x_pu = np.zeros(n)
    z_base = v_base ** 2 / s_base
    by_pair = {frozenset((ln.from_bus, ln.to_bus)): ln for ln in lines}
    children = [[] for _ in range(n)]
    for lab in order[1:]:
        i = index[lab]
        p = index[parent_label[lab]]
        parent[i] = p
        children[p].append(i)
        ln = by_pair[frozenset((lab, parent_label[lab]))]
        r_pu[i] = ln.r / z_base
        x_pu[i] = ln.x / z_base
    parent.flags.writeable = False
    return FeederTree(
        labels=tuple(order),
        parent=parent,
        children=tuple(tuple(c) for c in children),
        r_pu=_readonly(r_pu),
        x_pu=_readonly(x_pu),
        v_base=float(v_base),
        s_base=float(s_base),
        bus_specs=tuple(specs[lab] for lab in order),
        name=name,
        suspect_rows=tuple(suspect_rows),
    )


def _apply_overrides(doc, overrides):
    if not overrides:
        return doc
    doc = copy.deepcopy(doc)
    by_id = {b["id"]: b for b in doc["buses"]}
    for bus_id, fields in overrides.items():
        key = int(bus_id)
        if key not in by_id:
            raise FeederValidationError(f"override for unknown bus {bus_id}")
        for k, v in fields.items():
            if k not in _BUS_KEYS:
                raise FeederValidationError(f"override field {k!r} is not a bus attribute")
            by_id[key][k] = v
        by_id[key].setdefault("overridden", []).extend(sorted(fields))
    return doc


def feeder_from_dict(doc, overrides=None):
    """Build a feeder from the parsed JSON document (see :func:`load_feeder`)."""
    try:
        doc = _apply_overrides(doc, overrides)
        buses = []
        for b in doc["buses"]:
            spec = BusSpec(
                id=b["id"],
                peak_load=float(b.get("peak_load_mva", 0.0)),
                power_factor=float(b.get("power_factor", 1.0)),
                shunt_capacitor=float(b.get("shunt_mvar", 0.0)),
                pv_nameplate=float(b.get("pv_mw", 0.0)),
                inverter_rating=float(b.get("s_mva", 0.0)),
                overload_rating=float(b.get("s_bar_mva", b.get("s_mva", 0.0))),
                suspect=bool(b.get("suspect", False)),
            )
            buses.append((spec, bool(b.get("root", False))))
        lines = [LineSpec(ln["from"], ln["to"], float(ln["r_ohm"]), float(ln["x_ohm"]))
                 for ln in doc["lines"]]
        v_base = float(doc["v_base_kv"])
        s_base = float(doc["s_base_mva"])
    except (KeyError, TypeError) as exc:
        raise FeederValidationError(f"feeder document does not match the schema: {exc!r}") from exc
    return build_tree(buses, lines, v_base, s_base, name=doc.get("name", ""),
                      suspect_rows=tuple(doc.get("suspect_rows", ())))


def load_feeder(path, overrides=None):
    """Read a feeder JSON file and return a validated, per-unit :class:`FeederTree`.

    Parameters
    ----------
    path : str or Path
        JSON file with ``v_base_kv``, ``s_base_mva``, ``buses`` and ``lines``.
    overrides : dict, optional
        ``{bus_id: {field: value}}`` replacements applied before validation,
        e.g. to correct data flagged ``suspect`` in the file.
    """
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise FeederValidationError(f"{path}: invalid JSON ({exc})") from exc
    return feeder_from_dict(doc, overrides)


def sce56_document():
    text = resources.files("eemgrid").joinpath("data/sce56.json").read_text()
    return json.loads(text)


def builtin_sce56(overrides=None):
    """The bundled SCE 56-bus feeder (12 kV, 1 MVA base) as printed.

    Bus 3 (30 MVA) and bus 33 (printed twice) carry ``suspect`` flags. Pass
    ``overrides=SCE56_EXPERIMENT_OVERRIDES`` for the corrected load used by
    the experiment presets.
    """
    return feeder_from_dict(sce56_document(), overrides)
