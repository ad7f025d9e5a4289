"""Per-cluster quadrature construction.

Geomasked clusters get a weighted partitioning-around-medoids scheme over the
populated, urbanicity-matched cells of their region; jittered clusters get a
ring scheme around the observed point.  Every scheme carries raw weights
``alpha`` and normalized weights ``omega`` (sum 1), the only quantities the
likelihood consumes.

Scheme construction for distinct (region, urbanicity) pairs is independent;
schemes are immutable once built.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.spatial import ConvexHull, QhullError
from scipy.spatial.distance import cdist

from .errors import DataError
from .grid import FineGrid, Raster, TransformSpec, cell_at, nearest_populated_cell

K_GEOMASK_DEFAULT = 100
URBAN_RING_RADII = (0.6, 1.4)     # km; outer band edge is the 2 km jitter cap
RURAL_RING_RADII = (1.5, 3.5, 7.5)
POINTS_PER_RING = 5


@dataclass(eq=False)
class IntegrationScheme:
    """Quadrature points (fine-grid cell indices), weights, and the zone map.

    ``assignment`` maps support cell -> zone index for geomask schemes and is
    None for jitter schemes.
    """

    points: np.ndarray
    alpha: np.ndarray
    omega: np.ndarray
    assignment: Optional[dict] = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=int)
        self.alpha = np.asarray(self.alpha, dtype=float)
        self.omega = np.asarray(self.omega, dtype=float)
        k = self.points.size
        if self.alpha.size != k or self.omega.size != k or k == 0:
            raise ValueError("points, alpha, omega must be non-empty and equally long")
        if np.any(self.omega < 0) or np.any(self.alpha < 0):
            raise ValueError("scheme weights must be non-negative")
        if abs(self.omega.sum() - 1.0) > 1e-12:
            raise ValueError("omega must sum to 1 within 1e-12")
        for a in (self.points, self.alpha, self.omega):
            a.setflags(write=False)

    @property
    def k(self) -> int:
        return self.points.size


def scheme_to_json(scheme: IntegrationScheme) -> str:
    return json.dumps(
        {
            "points": [int(i) for i in scheme.points],
            "alpha": list(map(float, scheme.alpha)),
            "omega": list(map(float, scheme.omega)),
        }
    )


def scheme_from_json(text: str) -> IntegrationScheme:
    doc = json.loads(text)
    return IntegrationScheme(
        points=np.asarray(doc["points"], dtype=int),
        alpha=np.asarray(doc["alpha"], dtype=float),
        omega=np.asarray(doc["omega"], dtype=float),
    )


def _diameter(xy: np.ndarray) -> float:
    """Max pairwise Euclidean distance."""
    n = xy.shape[0]
    if n <= 1:
        return 0.0
    pts = xy
    if n > 1500:
        try:
            pts = xy[ConvexHull(xy).vertices]
        except QhullError:
            pass  # degenerate (e.g. collinear) inputs: fall through to brute force
    d = cdist(pts, pts)
    return float(d.max())


def transform_points(grid: FineGrid, spec: TransformSpec, cells) -> np.ndarray:
    """Feature rows (lambda_mix * rescaled coords, covariates) for ``cells``.

    Coordinates are centered and rescaled by 1/diameter of the cell set
    before the lambda_mix multiplier, so the spatial block is dimensionless.
    With lambda_mix = 0 the features reduce to the covariate vectors alone.
    """
    cells = np.asarray(cells, dtype=int)
    if cells.size == 0:
        raise ValueError("cells must be non-empty")
    xy = grid.coords[cells]
    centered = xy - xy.mean(axis=0)
    diam = _diameter(xy)
    scaled = centered / diam if diam > 0 else np.zeros_like(centered)
    return np.hstack([spec.lambda_mix * scaled, grid.covariates[cells]])


def weighted_pam(features, weights, K: int, rng=None):
    """Weighted K-medoids by PAM: greedy BUILD then best-improvement SWAP.

    Minimizes sum_k sum_{i in zone k} weights_i * ||x_i - medoid_k||^2 over
    medoid subsets of the rows with positive weight.  Returns
    (medoid row indices, assignment row -> medoid position, objective).
    The result is swap-local-optimal: no single medoid/non-medoid exchange
    lowers the objective.  Deterministic; ties break toward lower indices
    (``rng`` is accepted for interface uniformity and unused).
    """
    X = np.asarray(features, dtype=float)
    w = np.asarray(weights, dtype=float)
    n = X.shape[0]
    if w.shape != (n,):
        raise ValueError("weights must match the number of feature rows")
    if np.any(w < 0):
        raise ValueError("weights must be non-negative")
    candidates = np.flatnonzero(w > 0)
    if not isinstance(K, (int, np.integer)) or K <= 0:
        raise ValueError("K must be a positive integer")
    if K > candidates.size:
        raise ValueError(
            f"K = {K} exceeds the {candidates.size} rows with positive weight"
        )

    D = cdist(X, X, "sqeuclidean")

    # BUILD: first medoid minimizes the total weighted cost, later ones give
    # the largest objective reduction.
    cost0 = w @ D[:, candidates]
    medoids = [int(candidates[np.argmin(cost0)])]
    d1 = D[:, medoids[0]].copy()
    in_set = np.zeros(n, dtype=bool)
    in_set[medoids[0]] = True
    while len(medoids) < K:
        free = candidates[~in_set[candidates]]
        reduction = w @ np.maximum(d1[:, None] - D[:, free], 0.0)
        pick = int(free[np.argmax(reduction)])
        medoids.append(pick)
        in_set[pick] = True
        d1 = np.minimum(d1, D[:, pick])

    medoids = np.asarray(medoids, dtype=int)
    k = medoids.size

    def _nearest(meds):
        dm = D[:, meds]
        n1 = np.argmin(dm, axis=1)
        d1 = dm[np.arange(n), n1]
        if k > 1:
            part = np.partition(dm, 1, axis=1)
            d2 = part[:, 1]
        else:
            d2 = np.full(n, np.inf)
        return n1, d1, d2

    # SWAP: apply the single best improving swap until none exists.
    while True:
        n1, d1, d2 = _nearest(medoids)
        objective = float(w @ d1)
        tol = 1e-10 * (1.0 + abs(objective))
        best_delta = -tol
        best = None
        member = np.zeros(n, dtype=bool)
        member[medoids] = True
        for h in candidates:
            if member[h]:
                continue
            dh = D[:, h]
            base = w * np.minimum(dh - d1, 0.0)
            base_sum = base.sum()
            # removing medoid j reassigns its zone to min(dh, second nearest)
            remove_adj = np.bincount(n1, weights=base, minlength=k)
            add_adj = np.bincount(n1, weights=w * (np.minimum(dh, d2) - d1), minlength=k)
            deltas = base_sum - remove_adj + add_adj
            j = int(np.argmin(deltas))
            if deltas[j] < best_delta:
                best_delta = float(deltas[j])
                best = (j, int(h))
        if best is None:
            break
        medoids = medoids.copy()
        medoids[best[0]] = best[1]

    n1, d1, _ = _nearest(medoids)
    n1 = n1.copy()
    n1[medoids] = np.arange(k)  # each medoid belongs to its own zone
    d1 = d1.copy()
    d1[medoids] = 0.0
    return medoids, n1, float(w @ d1)


def build_geomask_scheme(grid: FineGrid, region: int, urban: bool, K: int,
                         spec: TransformSpec, rng=None) -> IntegrationScheme:
    """Quadrature over a geomask region restricted to one urbanicity class.

    Support cells are the populated cells of the region with matching
    urbanicity; PAM runs with population weights on the transformed features.
    alpha_k is the zone population divided by the medoid's population, and
    omega_k is the zone population share.  If the support has at most K
    cells, every cell becomes its own point with omega proportional to its
    population, which makes the scheme exact.
    """
    support = np.flatnonzero((grid.region == region) & (grid.urban == bool(urban)))
    if support.size == 0:
        raise DataError(
            f"no cells of requested urbanicity in region {region}"
        )
    q = grid.population[support]
    if support.size <= K:
        omega = q / q.sum()
        assignment = {int(c): i for i, c in enumerate(support)}
        return IntegrationScheme(support, np.ones(support.size), omega, assignment)

    feats = transform_points(grid, spec, support)
    med_local, assign_local, _ = weighted_pam(feats, q, K, rng)
    zone_pop = np.bincount(assign_local, weights=q, minlength=K)
    alpha = zone_pop / q[med_local]
    omega = zone_pop / zone_pop.sum()
    assignment = {int(support[i]): int(assign_local[i]) for i in range(support.size)}
    return IntegrationScheme(support[med_local], alpha, omega, assignment)


def _jitter_band_masses(urban: bool, r_max: float, r_near: float, r_far: float,
                        p_far: float, radii) -> list:
    """Prior mass of each radial band [edge_j, edge_j+1] around the observed point.

    Band edges sit at the ring radii.  The jitter radius is uniform, so a
    band [a, b] inside the jitter cap has mass (b - a) / cap; the rural outer
    band (beyond r_near) carries the entire far-mixture mass p_far.
    """
    if urban:
        edges = [0.0, *radii, r_max]
        return [(b - a) / r_max for a, b in zip(edges[:-1], edges[1:])]
    inner = list(radii[:-1])
    edges = [0.0, *inner, r_near]
    masses = [(1.0 - p_far) * (b - a) / r_near for a, b in zip(edges[:-1], edges[1:])]
    masses.append(p_far)
    return masses


def build_jitter_scheme(observed, urban: bool, grid: FineGrid, admin2: Raster,
                        *, ring_radii=None, points_per_ring: int = POINTS_PER_RING,
                        r_max: float = 2.0, r_near: float = 5.0, r_far: float = 10.0,
                        p_far: float = 0.01) -> IntegrationScheme:
    """Ring quadrature for a jittered cluster around its observed point.

    Urban default: the center plus rings of 5 at radii 0.6 and 1.4 km (K=11);
    rural: center plus rings of 5 at 1.5, 3.5, 7.5 km (K=16).  Consecutive
    rings are offset by pi/5.  Each ring splits its band mass equally among
    its points.  Candidates are snapped to their containing populated cell;
    unpopulated cells and cells across the observed point's Admin2 boundary
    get weight 0, duplicates merge by summing.  Final omega is proportional
    to alpha times the cell population.
    """
    if admin2.rowcol_at(observed) is None:
        raise DataError("observed point lies outside the raster")
    radii = tuple(ring_radii) if ring_radii is not None else (
        URBAN_RING_RADII if urban else RURAL_RING_RADII
    )
    masses = _jitter_band_masses(urban, r_max, r_near, r_far, p_far, radii)

    candidates = [(tuple(observed), masses[0])]
    for j, r in enumerate(radii):
        share = masses[j + 1] / points_per_ring
        for i in range(points_per_ring):
            ang = 2.0 * math.pi * i / points_per_ring + j * math.pi / points_per_ring
            candidates.append(
                ((observed[0] + r * math.cos(ang), observed[1] + r * math.sin(ang)), share)
            )

    a2_obs = admin2.value_at(observed)
    merged: dict = {}
    for pt, mass in candidates:
        cell = cell_at(grid, pt)
        if cell is None:
            continue
        a2 = admin2.value_at(pt)
        if a2 is None or a2 != a2_obs:
            continue
        merged[cell] = merged.get(cell, 0.0) + mass

    if not merged:
        cell = cell_at(grid, observed)
        if cell is None:
            cell = nearest_populated_cell(grid, observed)
        return IntegrationScheme(np.array([cell]), np.array([1.0]), np.array([1.0]))

    points = np.fromiter(merged.keys(), dtype=int)
    alpha = np.fromiter(merged.values(), dtype=float)
    omega = alpha * grid.population[points]
    omega = omega / omega.sum()
    return IntegrationScheme(points, alpha, omega)


def single_cell_scheme(cell: int) -> IntegrationScheme:
    """Degenerate one-point scheme used when a position is taken as known."""
    return IntegrationScheme(np.array([int(cell)]), np.array([1.0]), np.array([1.0]))
