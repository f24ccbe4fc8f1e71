"""Random instance generators shared by the test modules."""
from __future__ import annotations

import math

import numpy as np

from stopqubo.qubo import ModelParams, QuboMatrix, build_partitioned, make_route_partition, partition_for_p
from stopqubo.spatial import EARTH_RADIUS_M, DemandNode, FacilityCandidate, build_model, destination_point

BASE = (49.25, -123.10)


def route_model(n_fac, n_dem, seed, r0=500.0, r1=400.0, spacing=(250.0, 600.0), spread=400.0):
    """Facilities along a meandering line, demand scattered around it, random weights."""
    rng = np.random.default_rng(seed)
    lat, lon = BASE
    heading = rng.uniform(0, 2 * math.pi)
    pts = []
    for _ in range(n_fac):
        pts.append((lat, lon))
        heading += rng.uniform(-0.4, 0.4)
        lat, lon = destination_point(lat, lon, heading, rng.uniform(*spacing))
    facilities = [
        FacilityCandidate(f"F{j + 1}", la, lo, j + 1, {"demand": float(rng.integers(1, 100))}, float(rng.uniform(0.05, 1)))
        for j, (la, lo) in enumerate(pts)
    ]
    demand = []
    for k in range(n_dem):
        la, lo = pts[rng.integers(n_fac)]
        la, lo = destination_point(la, lo, rng.uniform(0, 2 * math.pi), spread * math.sqrt(rng.random()))
        demand.append(DemandNode(f"D{k + 1}", la, lo, float(rng.integers(50, 1000))))
    return build_model(facilities, demand, r0, r1)


def partitioned_qubo(n, seed, batch=5):
    """Route-partitioned penalized QUBO of a random route model with ``n`` facilities."""
    rng = np.random.default_rng(seed)
    model = route_model(n, 3 * n, seed)
    batch = min(batch, n)
    quota = int(rng.integers(1, batch + 1))
    part = make_route_partition(n, batch, quota)
    return model, build_partitioned(model, model.weights(), ModelParams(part.p), part)


def proportional_qubo(n, p, seed, batch=5):
    model = route_model(n, 3 * n, seed)
    part = partition_for_p(n, p, batch)
    return model, build_partitioned(model, model.weights(), ModelParams(p), part)


def random_symmetric(n, seed, scale=10.0):
    rng = np.random.default_rng(seed)
    a = rng.normal(scale=scale, size=(n, n))
    return QuboMatrix((a + a.T) / 2, float(rng.normal()))


def chain_model(spacing=350.0, n=3):
    """Facilities due north of each other ``spacing`` meters apart, one demand node beside each, unit weights."""
    lat0, lon = 49.0, -123.0
    fac = [FacilityCandidate(f"S{j + 1}", lat0 + math.degrees(j * spacing / EARTH_RADIUS_M), lon, j + 1, {}, 1.0)
           for j in range(n)]
    dem = [DemandNode(f"D{j}", f.lat, f.lon + 0.003 * (j % 2 * 2 - 1), 400.0 + 100 * j) for j, f in enumerate(fac)]
    return build_model(fac, dem, 500.0, 400.0)
