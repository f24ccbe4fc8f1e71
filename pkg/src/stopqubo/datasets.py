"""Bundled synthetic corridor: 49 stops along a northbound route, 135 demand areas.

The real route data is not redistributed here. The generator reproduces
its shape: stop spacing mostly above the 400 m competition radius with a
minority of close pairs (so no stop has more than two competitors), and
demand-area centroids within a few hundred meters of the route, each
reachable from at least two stops within 500 m.

Regenerate the CSV files with ``python -m stopqubo.datasets``.
"""
from __future__ import annotations

import math
from importlib import resources
from pathlib import Path

import numpy as np

from .spatial import (
    EARTH_RADIUS_M,
    DemandNode,
    FacilityCandidate,
    SpatialModel,
    build_model,
    load_instance,
    write_instance,
)

CORRIDOR_SEED = 21
ORIGIN = (49.2050, -123.0420)

# Route waypoints in local meters (east, north).
_WAYPOINTS = np.array(
    [(0.0, 0.0), (0.0, 8000.0), (-2500.0, 10500.0), (-2500.0, 17000.0), (-4200.0, 18700.0), (-4200.0, 40000.0)]
)


def _to_latlon(east: float, north: float) -> tuple[float, float]:
    lat0, lon0 = ORIGIN
    lat = lat0 + math.degrees(north / EARTH_RADIUS_M)
    lon = lon0 + math.degrees(east / (EARTH_RADIUS_M * math.cos(math.radians(lat0))))
    return lat, lon


def _along(s: float) -> tuple[np.ndarray, np.ndarray]:
    """Position and unit tangent at arc length ``s`` along the waypoint polyline."""
    for a, b in zip(_WAYPOINTS[:-1], _WAYPOINTS[1:]):
        seg = b - a
        length = float(np.hypot(*seg))
        if s <= length:
            t = seg / length
            return a + s * t, t
        s -= length
    raise ValueError("arc length past the end of the route")


def make_corridor(
    n_facilities: int = 49,
    n_demand: int = 135,
    seed: int = CORRIDOR_SEED,
    r0: float = 500.0,
    r1: float = 400.0,
    close_fraction: float = 0.1,
) -> SpatialModel:
    """Generate a corridor instance; facility weights are left unassigned."""
    rng = np.random.default_rng(seed)
    while True:
        gaps = np.where(
            rng.random(n_facilities - 1) < close_fraction,
            rng.uniform(260.0, 390.0, n_facilities - 1),
            rng.uniform(410.0, 560.0, n_facilities - 1),
        )
        arc = np.concatenate([[0.0], np.cumsum(gaps)])
        stops = np.array([_along(s)[0] for s in arc])
        diff = stops[:, None, :] - stops[None, :, :]
        close = np.hypot(diff[..., 0], diff[..., 1]) <= r1
        np.fill_diagonal(close, False)
        if close.sum(axis=1).max() <= 2:
            break
    length = arc[-1]

    centroids = []
    while len(centroids) < n_demand:
        s = rng.uniform(0.0, length)
        pos, tangent = _along(s)
        normal = np.array([-tangent[1], tangent[0]])
        c = pos + rng.uniform(-380.0, 380.0) * normal
        reach = np.hypot(*(stops - c).T)
        if (reach <= r0 - 5.0).sum() >= 2:
            centroids.append(c)

    demand = []
    for k, c in enumerate(centroids):
        lat, lon = _to_latlon(*c)
        demand.append(DemandNode(f"DA{k + 1:03d}", lat, lon, float(rng.integers(350, 901))))

    facilities = []
    for j, pos in enumerate(stops):
        reach = np.hypot(*(np.array(centroids) - pos).T)
        nearby = sum(d.population for d, r in zip(demand, reach) if r <= r0)
        boardings = round(nearby * rng.uniform(1.5, 3.0) + rng.uniform(300.0, 1500.0))
        connected = int(rng.choice([1, 1, 1, 2, 2, 3, 4]))
        landmarks = int(rng.poisson(4.0))
        lat, lon = _to_latlon(*pos)
        facilities.append(
            FacilityCandidate(
                f"S{j + 1:02d}",
                lat,
                lon,
                j + 1,
                {"demand": float(boardings), "connectedness": float(connected), "landmarks": float(landmarks)},
            )
        )
    return build_model(facilities, demand, r0, r1)


def corridor_paths() -> tuple[Path, Path]:
    """Paths of the bundled ``(demand, facilities)`` CSV files."""
    root = resources.files("stopqubo") / "data"
    return Path(str(root / "corridor_demand.csv")), Path(str(root / "corridor_facilities.csv"))


def load_corridor(r0: float = 500.0, r1: float = 400.0) -> SpatialModel:
    demand, facilities = corridor_paths()
    return load_instance(demand, facilities, r0, r1)


CORRIDOR_CRITERIA = ("demand", "connectedness", "landmarks")
CORRIDOR_PRIORITIES = (0.45, 0.3, 0.25)


if __name__ == "__main__":
    demand_path, facility_path = corridor_paths()
    write_instance(make_corridor(), demand_path, facility_path)
    print(f"wrote {demand_path} and {facility_path}")
