"""Demand nodes, candidate facilities and the neighborhoods built around them.

Distances are great-circle (haversine) distances in meters. A facility's
demand neighborhood holds the demand nodes within ``R0`` of it; its
competitor neighborhood holds the other facilities within ``R1``.
Both balls are closed (``<=``).
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

EARTH_RADIUS_M = 6_371_000.0

# Coincident facility/demand points are clamped to this distance before d**-beta.
MIN_DISTANCE_M = 1.0

_DEMAND_COLUMNS = ("id", "lat", "lon", "population")
_FACILITY_COLUMNS = ("id", "lat", "lon", "route_order")
_RESERVED_FACILITY_COLUMNS = set(_FACILITY_COLUMNS) | {"weight"}


class IngestionError(ValueError):
    """Raised when an instance file is malformed."""


def _check_coord(lat: float, lon: float) -> None:
    if not (-90.0 <= lat <= 90.0) or not (-180.0 <= lon <= 180.0):
        raise ValueError(f"coordinate out of range: ({lat}, {lon})")


def haversine_distance(a: Sequence[float], b: Sequence[float]) -> float:
    """Great-circle distance in meters between two ``(lat, lon)`` points."""
    lat1, lon1 = float(a[0]), float(a[1])
    lat2, lon2 = float(b[0]), float(b[1])
    _check_coord(lat1, lon1)
    _check_coord(lat2, lon2)
    phi1, phi2 = math.radians(lat1), math.radians(lat2)
    dphi = phi2 - phi1
    dlmb = math.radians(lon2 - lon1)
    h = math.sin(dphi / 2) ** 2 + math.cos(phi1) * math.cos(phi2) * math.sin(dlmb / 2) ** 2
    return 2 * EARTH_RADIUS_M * math.asin(min(1.0, math.sqrt(h)))


def haversine_matrix(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """Pairwise distances (meters) between ``(n, 2)`` and ``(m, 2)`` lat/lon arrays."""
    src = np.asarray(src, dtype=float).reshape(-1, 2)
    dst = np.asarray(dst, dtype=float).reshape(-1, 2)
    phi1 = np.radians(src[:, 0])[:, None]
    phi2 = np.radians(dst[:, 0])[None, :]
    dlmb = np.radians(dst[:, 1])[None, :] - np.radians(src[:, 1])[:, None]
    h = np.sin((phi2 - phi1) / 2) ** 2 + np.cos(phi1) * np.cos(phi2) * np.sin(dlmb / 2) ** 2
    return 2 * EARTH_RADIUS_M * np.arcsin(np.minimum(1.0, np.sqrt(h)))


def destination_point(lat: float, lon: float, bearing: float, distance: float) -> tuple[float, float]:
    """Point reached from ``(lat, lon)`` after ``distance`` meters on ``bearing`` radians."""
    phi1 = math.radians(lat)
    lmb1 = math.radians(lon)
    delta = distance / EARTH_RADIUS_M
    phi2 = math.asin(
        math.sin(phi1) * math.cos(delta) + math.cos(phi1) * math.sin(delta) * math.cos(bearing)
    )
    lmb2 = lmb1 + math.atan2(
        math.sin(bearing) * math.sin(delta) * math.cos(phi1),
        math.cos(delta) - math.sin(phi1) * math.sin(phi2),
    )
    lon2 = (math.degrees(lmb2) + 540.0) % 360.0 - 180.0
    return math.degrees(phi2), lon2


@dataclass(frozen=True)
class DemandNode:
    id: str
    lat: float
    lon: float
    population: float

    def __post_init__(self) -> None:
        _check_coord(self.lat, self.lon)
        if not self.population >= 0:
            raise ValueError(f"demand node {self.id!r}: population must be >= 0")


@dataclass(frozen=True)
class FacilityCandidate:
    id: str
    lat: float
    lon: float
    route_order: int
    attributes: dict = field(default_factory=dict)
    weight: float | None = None

    def __post_init__(self) -> None:
        _check_coord(self.lat, self.lon)
        if self.weight is not None and not (0.0 < self.weight <= 1.0):
            raise ValueError(f"facility {self.id!r}: weight must lie in (0, 1]")


@dataclass(frozen=True, eq=False)
class SpatialModel:
    """Facilities, demand nodes, distances and neighborhoods of one instance.

    ``facilities`` are kept in route order. ``distances[j, k]`` is the
    distance in meters from facility ``j`` to demand node ``k`` and
    ``facility_distances`` the facility-to-facility matrix.
    """

    facilities: tuple[FacilityCandidate, ...]
    demand_nodes: tuple[DemandNode, ...]
    r0: float
    r1: float
    distances: np.ndarray
    facility_distances: np.ndarray
    demand_neighborhoods: tuple[np.ndarray, ...]
    competitor_neighborhoods: tuple[np.ndarray, ...]

    @property
    def n_facilities(self) -> int:
        return len(self.facilities)

    @property
    def n_demand(self) -> int:
        return len(self.demand_nodes)

    def distance(self, j: int, k: int) -> float:
        return float(self.distances[j, k])

    def demand_neighborhood(self, j: int) -> np.ndarray:
        return self.demand_neighborhoods[j]

    def competitor_neighborhood(self, j: int) -> np.ndarray:
        return self.competitor_neighborhoods[j]

    def max_competitors(self, j: int) -> int:
        return int(self.competitor_neighborhoods[j].size)

    @property
    def competitor_counts(self) -> np.ndarray:
        return np.array([c.size for c in self.competitor_neighborhoods], dtype=int)

    @property
    def populations(self) -> np.ndarray:
        return np.array([d.population for d in self.demand_nodes], dtype=float)

    def weights(self, default: float | None = None) -> np.ndarray:
        """Facility weights as an array; missing weights fall back to ``default``."""
        out = []
        for f in self.facilities:
            if f.weight is None:
                if default is None:
                    raise ValueError(f"facility {f.id!r} has no weight assigned")
                out.append(default)
            else:
                out.append(f.weight)
        return np.array(out, dtype=float)

    def with_weights(self, weights: Iterable[float]) -> "SpatialModel":
        weights = list(weights)
        if len(weights) != self.n_facilities:
            raise ValueError("one weight per facility is required")
        facilities = tuple(replace(f, weight=float(w)) for f, w in zip(self.facilities, weights))
        return replace(self, facilities=facilities)

    def coverage_mask(self) -> np.ndarray:
        """Boolean ``(|F|, |D|)`` matrix: demand node ``k`` lies in ``A_j``."""
        mask = np.zeros((self.n_facilities, self.n_demand), dtype=bool)
        for j, members in enumerate(self.demand_neighborhoods):
            mask[j, members] = True
        return mask


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


def build_model(
    facilities: Sequence[FacilityCandidate],
    demand_nodes: Sequence[DemandNode],
    r0: float,
    r1: float,
) -> SpatialModel:
    """Compute distances and neighborhoods for raw facility and demand records."""
    facilities = tuple(sorted(facilities, key=lambda f: f.route_order))
    orders = [f.route_order for f in facilities]
    if orders != list(range(1, len(facilities) + 1)):
        raise IngestionError("route_order values must be a permutation of 1..|F|")
    ids = [f.id for f in facilities]
    if len(set(ids)) != len(ids):
        raise IngestionError("duplicate facility id")
    demand_nodes = tuple(demand_nodes)
    d_ids = [d.id for d in demand_nodes]
    if len(set(d_ids)) != len(d_ids):
        raise IngestionError("duplicate demand node id")

    fac_xy = np.array([(f.lat, f.lon) for f in facilities], dtype=float).reshape(-1, 2)
    dem_xy = np.array([(d.lat, d.lon) for d in demand_nodes], dtype=float).reshape(-1, 2)
    dist = haversine_matrix(fac_xy, dem_xy) if len(demand_nodes) else np.zeros((len(facilities), 0))
    fdist = haversine_matrix(fac_xy, fac_xy)
    np.fill_diagonal(fdist, 0.0)
    model = SpatialModel(
        facilities=facilities,
        demand_nodes=demand_nodes,
        r0=float(r0),
        r1=float(r1),
        distances=_frozen(dist),
        facility_distances=_frozen(fdist),
        demand_neighborhoods=(),
        competitor_neighborhoods=(),
    )
    return build_neighborhoods(model, r0, r1)


def build_neighborhoods(model: SpatialModel, r0: float, r1: float) -> SpatialModel:
    """Rebuild ``A_j`` (demand within ``r0``) and ``F_j`` (facilities within ``r1``)."""
    if r0 < 0 or r1 < 0:
        raise ValueError("radii must be non-negative")
    within = model.distances <= r0
    demand = tuple(_frozen(np.flatnonzero(row)) for row in within)
    close = model.facility_distances <= r1
    np.fill_diagonal(close, False)
    # Facility distances are symmetric by construction; enforce it so F_j stays reflexive
    close = close & close.T
    competitors = tuple(_frozen(np.flatnonzero(row)) for row in close)
    return replace(
        model,
        r0=float(r0),
        r1=float(r1),
        demand_neighborhoods=demand,
        competitor_neighborhoods=competitors,
    )


def perturb_instance(
    model: SpatialModel,
    max_offset: float,
    weight_range: tuple[float, float] = (0.0, 1.0),
    seed: int | None = None,
) -> SpatialModel:
    """Randomly displace every point by at most ``max_offset`` meters and redraw weights.

    Offsets are uniform over the disk of radius ``max_offset``. Weights are
    drawn uniformly from the half-open interval ``(low, high]``.
    """
    if max_offset < 0:
        raise ValueError("max_offset must be >= 0")
    low, high = weight_range
    if not (0.0 <= low < high <= 1.0):
        raise ValueError("weight_range must satisfy 0 <= low < high <= 1")
    rng = np.random.default_rng(seed)

    def shift(lat: float, lon: float) -> tuple[float, float]:
        r = max_offset * math.sqrt(rng.random())
        theta = 2 * math.pi * rng.random()
        if r == 0.0:
            return lat, lon
        return destination_point(lat, lon, theta, r)

    facilities = []
    for f in model.facilities:
        lat, lon = shift(f.lat, f.lon)
        w = high - (high - low) * rng.random()
        facilities.append(replace(f, lat=lat, lon=lon, weight=w))
    demand = []
    for d in model.demand_nodes:
        lat, lon = shift(d.lat, d.lon)
        demand.append(replace(d, lat=lat, lon=lon))
    return build_model(facilities, demand, model.r0, model.r1)


# --- ingestion -------------------------------------------------------------


def _number(value, what: str, record: str) -> float:
    try:
        out = float(value)
    except (TypeError, ValueError):
        raise IngestionError(f"{record}: non-numeric {what} {value!r}") from None
    if not math.isfinite(out):
        raise IngestionError(f"{record}: non-finite {what} {value!r}")
    return out


def _read_rows(source: str | Path, required: Sequence[str]) -> list[dict]:
    path = Path(source)
    suffix = path.suffix.lower()
    if suffix in (".geojson", ".json"):
        with open(path) as fh:
            doc = json.load(fh)
        if doc.get("type") != "FeatureCollection":
            raise IngestionError(f"{path}: expected a GeoJSON FeatureCollection")
        rows = []
        for n, feat in enumerate(doc.get("features", []), start=1):
            props = dict(feat.get("properties") or {})
            geom = feat.get("geometry") or {}
            if geom.get("type") != "Point":
                raise IngestionError(f"{path}: feature {n} is not a Point")
            lon, lat = geom["coordinates"][:2]
            props.setdefault("lat", lat)
            props.setdefault("lon", lon)
            rows.append(props)
        columns = set().union(*(r.keys() for r in rows)) if rows else set(required)
    else:
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            columns = set(reader.fieldnames or [])
            rows = list(reader)
    missing = [c for c in required if c not in columns]
    if missing:
        raise IngestionError(f"{path}: missing column(s) {', '.join(missing)}")
    for n, row in enumerate(rows, start=1):
        for c in required:
            if c not in row:
                raise IngestionError(f"{path}: record {n} lacks {c!r}")
    return rows


def read_demand(source: str | Path) -> list[DemandNode]:
    rows = _read_rows(source, _DEMAND_COLUMNS)
    seen = set()
    out = []
    for n, row in enumerate(rows, start=1):
        rid = str(row["id"])
        record = f"demand record {n} (id={rid!r})"
        if rid in seen:
            raise IngestionError(f"{record}: duplicate id")
        seen.add(rid)
        lat = _number(row["lat"], "lat", record)
        lon = _number(row["lon"], "lon", record)
        pop = _number(row["population"], "population", record)
        try:
            out.append(DemandNode(rid, lat, lon, pop))
        except ValueError as exc:
            raise IngestionError(f"{record}: {exc}") from None
    return out


def read_facilities(source: str | Path) -> list[FacilityCandidate]:
    rows = _read_rows(source, _FACILITY_COLUMNS)
    if not rows:
        raise IngestionError(f"{source}: no facilities")
    seen = set()
    out = []
    for n, row in enumerate(rows, start=1):
        rid = str(row["id"])
        record = f"facility record {n} (id={rid!r})"
        if rid in seen:
            raise IngestionError(f"{record}: duplicate id")
        seen.add(rid)
        lat = _number(row["lat"], "lat", record)
        lon = _number(row["lon"], "lon", record)
        order = _number(row["route_order"], "route_order", record)
        if order != int(order):
            raise IngestionError(f"{record}: route_order must be an integer")
        attrs = {}
        for key, value in row.items():
            if key in _RESERVED_FACILITY_COLUMNS:
                continue
            v = _number(value, f"attribute {key!r}", record)
            if v < 0:
                raise IngestionError(f"{record}: attribute {key!r} must be >= 0")
            attrs[key] = v
        weight = None
        if row.get("weight") not in (None, ""):
            weight = _number(row["weight"], "weight", record)
        try:
            out.append(FacilityCandidate(rid, lat, lon, int(order), attrs, weight))
        except ValueError as exc:
            raise IngestionError(f"{record}: {exc}") from None
    return out


def load_instance(
    demand_source: str | Path,
    facility_source: str | Path,
    r0: float = 500.0,
    r1: float = 400.0,
) -> SpatialModel:
    """Read demand and facility files (CSV or GeoJSON) and build the model."""
    demand = read_demand(demand_source)
    facilities = read_facilities(facility_source)
    return build_model(facilities, demand, r0, r1)


def write_instance(model: SpatialModel, demand_path: str | Path, facility_path: str | Path) -> None:
    """Write the model back out as the two CSV files ``load_instance`` reads."""
    with open(demand_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(_DEMAND_COLUMNS)
        for d in model.demand_nodes:
            w.writerow([d.id, repr(d.lat), repr(d.lon), repr(d.population)])
    attr_names = sorted({k for f in model.facilities for k in f.attributes})
    has_weight = any(f.weight is not None for f in model.facilities)
    with open(facility_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(_FACILITY_COLUMNS) + attr_names + (["weight"] if has_weight else []))
        for f in model.facilities:
            row = [f.id, repr(f.lat), repr(f.lon), f.route_order]
            row += [repr(float(f.attributes.get(a, 0.0))) for a in attr_names]
            if has_weight:
                row.append("" if f.weight is None else repr(f.weight))
            w.writerow(row)
