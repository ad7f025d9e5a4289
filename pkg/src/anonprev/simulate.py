"""Synthetic ground-truth generator.

Builds covariate surfaces by spectral synthesis (seedable sums of random
cosines), a population surface, thresholded urbanicity, rectangular region
and Admin2 tilings, a BYM2 risk field drawn from the model, and stratified
PPS cluster surveys with jitter or geomask anonymization.  Every quantity
the model later estimates is returned as hidden truth.

Replicate simulations are independent given independent rng streams.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import expit

from .errors import ConfigError, DataError
from .grid import FineGrid, Raster, TransformSpec, build_fine_grid
from .model import ClusterRecord, LatentField, ModelParams, eta_cells
from .positional import AnonymizationModel, sample_anonymized
from .priors import StructuredPrecision, sample_structured, scaled_structured_precision

COVARIATE_TRANSFORMS = ["identity", "log1p", "sqrt", "identity", "log1p"]
COVARIATE_NORMALIZE = [False, True, True, True, True]


@dataclass
class SimulationConfig:
    """Knobs for the synthetic world and surveys."""

    n_rows: int = 30
    n_cols: int = 30
    cell_size: float = 2.0
    x_origin: float = 0.0
    y_origin: float = 0.0
    region_rows: int = 3
    region_cols: int = 3
    admin2_rows: int = 6
    admin2_cols: int = 6
    urban_fraction: float = 0.25
    length_scale: float = 8.0  # km, covariate field smoothness
    beta: np.ndarray = field(
        default_factory=lambda: np.array([-1.24, 1.03, -0.05, 0.05, 0.02, 0.44])
    )
    tau: float = 2.0
    phi: float = 0.8
    sigma_eps_sq: float = 1.0
    clusters_per_stratum: int = 11
    households_jittered: int = 25
    households_geomasked: int = 16
    lambda_mix: float = 0.0
    urban_radius_km: float = 2.0
    rural_radius_near_km: float = 5.0
    rural_radius_far_km: float = 10.0
    rural_far_prob: float = 0.01
    constrain_admin2: bool = True

    def __post_init__(self):
        self.beta = np.asarray(self.beta, dtype=float)
        if self.n_rows <= 0 or self.n_cols <= 0 or self.cell_size <= 0:
            raise ConfigError("raster dimensions and cell size must be positive")
        if self.admin2_rows % self.region_rows or self.admin2_cols % self.region_cols:
            raise ConfigError("admin2 tiling must nest within the region tiling")
        if not 0 < self.urban_fraction < 1:
            raise ConfigError("urban_fraction must lie in (0, 1)")
        if self.tau <= 0 or self.sigma_eps_sq < 0 or not 0 <= self.phi <= 1:
            raise ConfigError("true parameters outside support")
        if self.beta.size != 6:
            raise ConfigError("beta must have 6 entries (intercept + 5 covariates)")

    @property
    def n_regions(self) -> int:
        return self.region_rows * self.region_cols


@dataclass(eq=False)
class SimulatedWorld:
    """Fine grid, rasters, true parameters/latents, and the true risk field."""

    grid: FineGrid
    rasters: dict
    params: ModelParams
    latent: LatentField
    risk: np.ndarray  # per populated cell, nugget excluded
    structured: StructuredPrecision
    adjacency: list
    config: SimulationConfig


@dataclass
class ClusterTruth:
    """Hidden truth for one simulated cluster."""

    cell: int
    x: float
    y: float
    region: int
    risk: float
    epsilon: float


def _spectral_field(cfg: SimulationConfig, rng: np.random.Generator,
                    n_waves: int = 48) -> np.ndarray:
    """Smooth mean-0 sd-1 field over cell centers via random cosine mixtures."""
    rows, cols = np.divmod(np.arange(cfg.n_rows * cfg.n_cols), cfg.n_cols)
    xs = cfg.x_origin + (cols + 0.5) * cfg.cell_size
    ys = cfg.y_origin + (rows + 0.5) * cfg.cell_size
    pts = np.column_stack([xs, ys])
    freq = rng.normal(0.0, 1.0 / cfg.length_scale, size=(n_waves, 2))
    phase = rng.uniform(0.0, 2.0 * math.pi, size=n_waves)
    f = math.sqrt(2.0 / n_waves) * np.cos(pts @ freq.T + phase).sum(axis=1)
    f = (f - f.mean()) / f.std()
    return f


def _label_raster(cfg: SimulationConfig, tiles_r: int, tiles_c: int) -> np.ndarray:
    rows, cols = np.divmod(np.arange(cfg.n_rows * cfg.n_cols), cfg.n_cols)
    tile_r = rows * tiles_r // cfg.n_rows
    tile_c = cols * tiles_c // cfg.n_cols
    return (tile_r * tiles_c + tile_c).astype(float)


def region_adjacency(region_rows: int, region_cols: int) -> list:
    """Rook adjacency of the rectangular region tiling."""
    adj = [[] for _ in range(region_rows * region_cols)]
    for r in range(region_rows):
        for c in range(region_cols):
            i = r * region_cols + c
            if r + 1 < region_rows:
                adj[i].append(i + region_cols)
                adj[i + region_cols].append(i)
            if c + 1 < region_cols:
                adj[i].append(i + 1)
                adj[i + 1].append(i)
    return adj


def simulate_world(config: SimulationConfig, rng: np.random.Generator) -> SimulatedWorld:
    """Draw covariates, population, latents, and the true risk field."""
    cfg = config

    def raster(vals):
        return Raster(cfg.n_rows, cfg.n_cols, cfg.x_origin, cfg.y_origin,
                      cfg.cell_size, -9999.0, vals)

    pop_field = _spectral_field(cfg, rng)
    population = np.exp(1.2 * pop_field) * 100.0  # positive everywhere: connected support
    # threshold population within each region so every stratum has urban cells
    region_labels = _label_raster(cfg, cfg.region_rows, cfg.region_cols).astype(int)
    urban = np.zeros_like(population)
    for r in range(cfg.n_regions):
        in_r = region_labels == r
        threshold = np.quantile(population[in_r], 1.0 - cfg.urban_fraction)
        urban[in_r & (population >= threshold)] = 1.0

    access = np.exp(0.8 * _spectral_field(cfg, rng)) * 30.0
    elevation = (_spectral_field(cfg, rng) + 3.0) ** 2 * 50.0
    distance = _spectral_field(cfg, rng)

    rasters = {
        "population": raster(population),
        "urbanicity": raster(urban),
        "access": raster(access),
        "elevation": raster(elevation),
        "distance": raster(distance),
        "regions": raster(region_labels.astype(float)),
        "admin2": raster(_label_raster(cfg, cfg.admin2_rows, cfg.admin2_cols)),
    }

    transforms = TransformSpec(
        transforms=list(COVARIATE_TRANSFORMS),
        normalize=list(COVARIATE_NORMALIZE),
        lambda_mix=cfg.lambda_mix,
    )
    grid = build_fine_grid(
        [rasters["urbanicity"], rasters["access"], rasters["elevation"],
         rasters["distance"], rasters["population"]],
        rasters["population"], rasters["urbanicity"], rasters["regions"],
        rasters["admin2"], transforms,
    )

    adjacency = region_adjacency(cfg.region_rows, cfg.region_cols)
    structured = scaled_structured_precision(adjacency)
    w = sample_structured(structured, rng)
    v = rng.standard_normal(cfg.n_regions)
    latent = LatentField(w=w, v=v)
    params = ModelParams(beta=cfg.beta.copy(), tau=cfg.tau, phi=cfg.phi,
                         sigma_eps_sq=cfg.sigma_eps_sq)
    risk = expit(eta_cells(params, latent, grid, np.arange(grid.n_cells)))
    return SimulatedWorld(grid=grid, rasters=rasters, params=params, latent=latent,
                          risk=risk, structured=structured, adjacency=adjacency,
                          config=cfg)


def _pps_without_replacement(q: np.ndarray, m: int, rng: np.random.Generator):
    """Sequential PPS draws with renormalization.

    Inclusion probabilities are approximated by draw-by-draw accumulation of
    each unit's selection chance up to and including the draw that takes it.
    """
    remaining = q.astype(float).copy()
    acc = np.zeros_like(remaining)
    chosen = []
    for _ in range(m):
        total = remaining.sum()
        probs = remaining / total
        acc += probs
        pick = int(rng.choice(remaining.size, p=probs))
        chosen.append(pick)
        remaining[pick] = 0.0
    chosen = np.asarray(chosen, dtype=int)
    return chosen, np.clip(acc[chosen], 1e-12, 1.0)


def simulate_survey(world: SimulatedWorld, design: str, config: SimulationConfig,
                    rng: np.random.Generator):
    """Sample one survey: stratified PPS cluster selection plus anonymization.

    Strata are (region, urbanicity); within each, ``clusters_per_stratum``
    cells are drawn without replacement with probability proportional to
    population.  Returns (records, hidden truth).  Geomasked records expose
    only region and urbanicity; jittered ones expose the displaced point.
    """
    if design not in ("jittered", "geomasked"):
        raise ConfigError(f"unknown survey design {design!r}")
    grid = world.grid
    cfg = config
    n_house = cfg.households_jittered if design == "jittered" else cfg.households_geomasked

    urban_model = AnonymizationModel.jitter_urban(cfg.urban_radius_km, cfg.constrain_admin2)
    rural_model = AnonymizationModel.jitter_rural(
        cfg.rural_radius_near_km, cfg.rural_radius_far_km, cfg.rural_far_prob,
        cfg.constrain_admin2,
    )
    geo_model = AnonymizationModel.geomask()

    records, truths = [], []
    for region in range(grid.n_regions):
        for urban in (True, False):
            eligible = np.flatnonzero((grid.region == region) & (grid.urban == urban))
            if eligible.size < cfg.clusters_per_stratum:
                raise DataError(
                    f"stratum (region {region}, {'urban' if urban else 'rural'}) has "
                    f"{eligible.size} eligible cells < {cfg.clusters_per_stratum} requested"
                )
            cells, incl = _pps_without_replacement(
                grid.population[eligible], cfg.clusters_per_stratum, rng
            )
            for cell_local, pi in zip(cells, incl):
                cell = int(eligible[cell_local])
                center = tuple(grid.coords[cell])
                eps = rng.normal(0.0, math.sqrt(cfg.sigma_eps_sq))
                eta = math.log(world.risk[cell] / (1.0 - world.risk[cell]))
                p = expit(eta + eps)
                y = int(rng.binomial(n_house, p))
                urb_tag = "U" if urban else "R"
                weight = 1.0 / float(pi)
                if design == "jittered":
                    model = urban_model if urban else rural_model
                    obs = sample_anonymized(model, center, grid, rng)
                    obs_region = grid.region_raster.value_at(obs)
                    rec = ClusterRecord(y, n_house, urb_tag, "jittered",
                                        int(round(obs_region)), observed=obs,
                                        weight=weight)
                else:
                    label = sample_anonymized(geo_model, center, grid, rng)
                    rec = ClusterRecord(y, n_house, urb_tag, "geomasked", int(label),
                                        weight=weight)
                records.append(rec)
                truths.append(ClusterTruth(cell=cell, x=center[0], y=center[1],
                                           region=region, risk=float(world.risk[cell]),
                                           epsilon=float(eps)))
    return records, truths


def true_areal_prevalence(world: SimulatedWorld) -> np.ndarray:
    """Population-weighted true risk per region."""
    grid = world.grid
    num = np.bincount(grid.region, weights=grid.population * world.risk,
                      minlength=grid.n_regions)
    den = np.bincount(grid.region, weights=grid.population, minlength=grid.n_regions)
    return num / den
