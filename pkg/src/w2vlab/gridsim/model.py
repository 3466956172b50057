"""Grid model container, its JSON file schema, and synthetic grid builders.

Grid file schema (JSON)::

    {
      "name": "desk100",
      "base_mva": 100.0,
      "buses":      [{"id": 0, "kind": "slack|PV|PQ", "pd": MW, "qd": MVAr,
                      "vset": p.u., "x": km, "y": km}, ...],
      "branches":   [{"from": 0, "to": 1, "r": p.u., "x": p.u., "b": p.u.,
                      "rating": MVA}, ...],
      "generators": [{"bus": 0, "kind": "conventional|wind|solar",
                      "capacity": MW, "location": id, "pf": 1.0}, ...],
      "locations":  [{"id": 0, "x": km, "y": km}, ...]
    }

Bus ids must be ``0..n-1`` in file order; ``location`` is required for wind
and solar units. ``pf`` is the power factor of a renewable unit (reactive
injection ``P * tan(acos(pf))``, positive = injecting).
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components, minimum_spanning_tree

from ..weatherfield import nearest_location_mapping

BUS_KINDS = ("slack", "PV", "PQ")
GEN_KINDS = ("conventional", "wind", "solar")


class GridError(ValueError):
    """Invalid grid model or an input inconsistent with it."""


@dataclass(frozen=True)
class Generator:
    bus: int
    kind: str
    capacity: float
    location: int | None = None
    pf: float = 1.0


@dataclass(frozen=True, eq=False)
class GridModel:
    bus_kind: tuple
    pd: np.ndarray
    qd: np.ndarray
    vset: np.ndarray
    branch_from: np.ndarray
    branch_to: np.ndarray
    r: np.ndarray
    x: np.ndarray
    b: np.ndarray
    rating: np.ndarray
    generators: tuple = ()
    bus_coords: np.ndarray | None = None
    location_coords: np.ndarray | None = None
    location_ids: np.ndarray | None = None
    base_mva: float = 100.0
    name: str = "grid"

    def __post_init__(self):
        for attr in ("pd", "qd", "vset", "r", "x", "b", "rating"):
            object.__setattr__(self, attr, np.asarray(getattr(self, attr), dtype=np.float64))
        for attr in ("branch_from", "branch_to"):
            object.__setattr__(self, attr, np.asarray(getattr(self, attr), dtype=np.int64))
        object.__setattr__(self, "bus_kind", tuple(self.bus_kind))
        object.__setattr__(self, "generators", tuple(self.generators))
        if self.bus_coords is not None:
            object.__setattr__(self, "bus_coords", np.asarray(self.bus_coords, dtype=np.float64))
        if self.location_coords is not None:
            object.__setattr__(self, "location_coords", np.asarray(self.location_coords, dtype=np.float64))
            ids = self.location_ids if self.location_ids is not None else np.arange(len(self.location_coords))
            object.__setattr__(self, "location_ids", np.asarray(ids, dtype=np.int64))
        self.validate()

    @property
    def n_bus(self) -> int:
        return len(self.bus_kind)

    @property
    def n_branch(self) -> int:
        return len(self.branch_from)

    @cached_property
    def slack(self) -> int:
        return self.bus_kind.index("slack")

    @cached_property
    def pv(self) -> np.ndarray:
        return np.array([i for i, k in enumerate(self.bus_kind) if k == "PV"], dtype=np.int64)

    @cached_property
    def pq(self) -> np.ndarray:
        return np.array([i for i, k in enumerate(self.bus_kind) if k == "PQ"], dtype=np.int64)

    def validate(self):
        n = self.n_bus
        if any(k not in BUS_KINDS for k in self.bus_kind):
            raise GridError(f"bus kinds must be in {BUS_KINDS}")
        if self.bus_kind.count("slack") != 1:
            raise GridError(f"exactly one slack bus required, found {self.bus_kind.count('slack')}")
        for attr in ("pd", "qd", "vset"):
            if len(getattr(self, attr)) != n:
                raise GridError(f"{attr} has length {len(getattr(self, attr))}, expected {n}")
        m = self.n_branch
        for attr in ("branch_to", "r", "x", "b", "rating"):
            if len(getattr(self, attr)) != m:
                raise GridError(f"branch field {attr} has wrong length")
        if m and (self.branch_from.min() < 0 or self.branch_to.min() < 0
                  or self.branch_from.max() >= n or self.branch_to.max() >= n):
            raise GridError("branch endpoint out of range")
        if np.any(self.r < 0):
            raise GridError("branch resistance must be >= 0")
        if np.any(self.x <= 0):
            raise GridError("branch reactance must be > 0")
        if not self.is_connected():
            raise GridError("grid graph is not connected")
        loc_ids = set() if self.location_ids is None else set(int(i) for i in self.location_ids)
        for g in self.generators:
            if g.kind not in GEN_KINDS:
                raise GridError(f"generator kind {g.kind!r} not in {GEN_KINDS}")
            if not (0 <= g.bus < n):
                raise GridError(f"generator bus {g.bus} out of range")
            if g.kind != "conventional" and (g.location is None or int(g.location) not in loc_ids):
                raise GridError(f"{g.kind} generator at bus {g.bus} has invalid weather location {g.location}")

    def is_connected(self) -> bool:
        n = self.n_bus
        if n == 1:
            return True
        adj = coo_matrix((np.ones(self.n_branch), (self.branch_from, self.branch_to)), shape=(n, n))
        count, _ = connected_components(adj, directed=False)
        return count == 1

    @cached_property
    def ybus(self) -> np.ndarray:
        """Dense bus admittance matrix (p.u.), pi-model branches, no taps."""
        n = self.n_bus
        Y = np.zeros((n, n), dtype=np.complex128)
        ys = 1.0 / (self.r + 1j * self.x)
        ysh = 0.5j * self.b
        f, t = self.branch_from, self.branch_to
        np.add.at(Y, (f, f), ys + ysh)
        np.add.at(Y, (t, t), ys + ysh)
        np.add.at(Y, (f, t), -ys)
        np.add.at(Y, (t, f), -ys)
        return Y

    def generators_of(self, kind: str) -> list[Generator]:
        return [g for g in self.generators if g.kind == kind]

    # -- file I/O -----------------------------------------------------------
    def to_dict(self) -> dict:
        buses = []
        for i in range(self.n_bus):
            rec = {"id": i, "kind": self.bus_kind[i], "pd": float(self.pd[i]), "qd": float(self.qd[i]),
                   "vset": float(self.vset[i])}
            if self.bus_coords is not None:
                rec["x"], rec["y"] = (float(v) for v in self.bus_coords[i])
            buses.append(rec)
        branches = [
            {"from": int(self.branch_from[k]), "to": int(self.branch_to[k]), "r": float(self.r[k]),
             "x": float(self.x[k]), "b": float(self.b[k]), "rating": float(self.rating[k])}
            for k in range(self.n_branch)
        ]
        gens = [{"bus": g.bus, "kind": g.kind, "capacity": float(g.capacity),
                 "location": None if g.location is None else int(g.location), "pf": float(g.pf)}
                for g in self.generators]
        locs = []
        if self.location_coords is not None:
            locs = [{"id": int(i), "x": float(c[0]), "y": float(c[1])}
                    for i, c in zip(self.location_ids, self.location_coords)]
        return {"name": self.name, "base_mva": float(self.base_mva), "buses": buses,
                "branches": branches, "generators": gens, "locations": locs}

    @classmethod
    def from_dict(cls, d: dict) -> "GridModel":
        buses = d["buses"]
        if [b_["id"] for b_ in buses] != list(range(len(buses))):
            raise GridError("bus ids must be 0..n-1 in file order")
        coords = None
        if buses and all("x" in b_ and "y" in b_ for b_ in buses):
            coords = np.array([[b_["x"], b_["y"]] for b_ in buses])
        br = d["branches"]
        locs = d.get("locations") or []
        return cls(
            bus_kind=tuple(b_["kind"] for b_ in buses),
            pd=[b_.get("pd", 0.0) for b_ in buses],
            qd=[b_.get("qd", 0.0) for b_ in buses],
            vset=[b_.get("vset", 1.0) for b_ in buses],
            branch_from=[e["from"] for e in br],
            branch_to=[e["to"] for e in br],
            r=[e["r"] for e in br],
            x=[e["x"] for e in br],
            b=[e.get("b", 0.0) for e in br],
            rating=[e.get("rating", np.inf) for e in br],
            generators=tuple(Generator(g["bus"], g["kind"], g["capacity"], g.get("location"), g.get("pf", 1.0))
                             for g in d.get("generators", [])),
            bus_coords=coords,
            location_coords=np.array([[l_["x"], l_["y"]] for l_ in locs]) if locs else None,
            location_ids=np.array([l_["id"] for l_ in locs]) if locs else None,
            base_mva=d.get("base_mva", 100.0),
            name=d.get("name", "grid"),
        )

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=1))
        return path

    @classmethod
    def load(cls, path) -> "GridModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def two_bus_case(load_mw: float = 40.0, rating_mw: float = 30.0, x_pu: float = 0.05) -> GridModel:
    """Two buses, one line: conventional slack at bus 0; load plus a RES unit at bus 1."""
    return GridModel(
        bus_kind=("slack", "PQ"),
        pd=[0.0, load_mw], qd=[0.0, 0.0], vset=[1.0, 1.0],
        branch_from=[0], branch_to=[1], r=[0.0], x=[x_pu], b=[0.0], rating=[rating_mw],
        generators=(Generator(0, "conventional", 200.0), Generator(1, "wind", 100.0, 0)),
        bus_coords=np.array([[0.0, 0.0], [50.0, 0.0]]),
        location_coords=np.array([[50.0, 0.0]]),
        name="two-bus",
    )


@dataclass
class ReferenceGridConfig:
    n_buses: int = 100
    n_locations: int = 25
    area_km: float = 400.0
    n_conventional: int = 10
    n_wind: int = 14
    n_solar: int = 6
    wind_capacity_mw: tuple = (120.0, 200.0)
    solar_capacity_mw: tuple = (40.0, 80.0)
    load_mw: tuple = (10.0, 35.0)
    load_power_factor: float = 0.95
    wind_power_factor: float = 0.97
    x_per_km: float = 0.0005
    r_over_x: float = 0.2
    b_per_km: float = 0.0008
    extra_edge_fraction: float = 0.4
    conventional_margin: float = 1.3
    seed: int = 7
    extra: dict = field(default_factory=dict)


def lattice_locations(n_locations: int, area_km: float) -> np.ndarray:
    side = int(np.ceil(np.sqrt(n_locations)))
    step = area_km / side
    pts = [((i + 0.5) * step, (j + 0.5) * step) for j in range(side) for i in range(side)]
    return np.array(pts[:n_locations])


def build_reference_grid(cfg: ReferenceGridConfig | None = None) -> GridModel:
    """Meshed synthetic transmission grid with weather-coupled units.

    Topology is a Euclidean minimum spanning tree plus extra nearest-neighbour
    chords. Wind units sit in the west (the windy side), solar in the south.
    """
    cfg = cfg or ReferenceGridConfig()
    rng = np.random.default_rng(cfg.seed)
    n = cfg.n_buses
    coords = rng.uniform(0.02, 0.98, size=(n, 2)) * cfg.area_km
    centre = np.array([cfg.area_km / 2, cfg.area_km / 2])
    slack = int(np.argmin(((coords - centre) ** 2).sum(1)))

    d = np.sqrt(((coords[:, None] - coords[None]) ** 2).sum(-1))
    mst = minimum_spanning_tree(d).tocoo()
    edges = {tuple(sorted((int(i), int(j)))) for i, j in zip(mst.row, mst.col)}
    order = np.argsort(d, axis=1)
    for i in range(n):
        if rng.random() < cfg.extra_edge_fraction:
            for j in order[i, 1:]:
                e = tuple(sorted((i, int(j))))
                if e not in edges:
                    edges.add(e)
                    break
    edges = sorted(edges)
    f = np.array([e[0] for e in edges])
    t = np.array([e[1] for e in edges])
    length = np.maximum(d[f, t], 5.0)
    x = cfg.x_per_km * length
    r = cfg.r_over_x * x
    b = cfg.b_per_km * length

    others = [i for i in range(n) if i != slack]
    west = sorted(others, key=lambda i: coords[i, 0])
    wind_buses = west[: cfg.n_wind]
    rest = [i for i in others if i not in wind_buses]
    south = sorted(rest, key=lambda i: coords[i, 1])
    solar_buses = south[: cfg.n_solar]
    rest = [i for i in rest if i not in solar_buses]
    conv_buses = list(rng.choice(rest, size=cfg.n_conventional - 1, replace=False))

    kinds = ["PQ"] * n
    kinds[slack] = "slack"
    for i in conv_buses:
        kinds[i] = "PV"
    pd = rng.uniform(*cfg.load_mw, size=n)
    for i in wind_buses + solar_buses:
        pd[i] *= 0.3
    qd = pd * np.tan(np.arccos(cfg.load_power_factor))
    vset = np.ones(n)
    vset[slack] = 1.03
    for i in conv_buses:
        vset[i] = rng.uniform(1.0, 1.03)

    locs = lattice_locations(cfg.n_locations, cfg.area_km)
    bus_loc = nearest_location_mapping(coords, locs)
    gens = []
    conv_cap = cfg.conventional_margin * pd.sum() * 1.35 / cfg.n_conventional
    for i in [slack] + conv_buses:
        gens.append(Generator(int(i), "conventional", float(conv_cap)))
    for i in wind_buses:
        gens.append(Generator(int(i), "wind", float(rng.uniform(*cfg.wind_capacity_mw)), int(bus_loc[i]),
                              cfg.wind_power_factor))
    for i in solar_buses:
        gens.append(Generator(int(i), "solar", float(rng.uniform(*cfg.solar_capacity_mw)), int(bus_loc[i])))

    rating = np.full(len(edges), 400.0)
    return GridModel(
        bus_kind=tuple(kinds), pd=pd, qd=qd, vset=vset,
        branch_from=f, branch_to=t, r=r, x=x, b=b, rating=rating,
        generators=tuple(gens), bus_coords=coords, location_coords=locs,
        location_ids=np.arange(len(locs)), name=f"desk{n}",
    )
