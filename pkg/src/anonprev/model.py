"""The hierarchical model: linear predictor, BYM2 field, cluster nugget, and
the position-marginalized binomial likelihood.

The position prior (proportional to population, urbanicity-constrained for
geomasked clusters) is fully absorbed into each scheme's normalized weights,
so the likelihood only ever sees ``omega``.  The cluster nugget is
marginalized by Gauss-Hermite quadrature rather than sampled, which shrinks
the MCMC state by one dimension per cluster while targeting the identical
marginal likelihood.

Likelihood terms across clusters are independent given the parameters;
evaluation uses numpy reductions (pairwise summation), so results are
deterministic.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np
from scipy.special import gammaln, logsumexp

from .errors import ConfigError, DataError, NumericError, ParseError
from .grid import FineGrid, cell_at, nearest_populated_cell
from .integration import (
    IntegrationScheme,
    build_geomask_scheme,
    build_jitter_scheme,
    single_cell_scheme,
)
from .priors import (
    PriorSet,
    pc_phi_log_density,
    pc_precision_log_density,
    pc_variance_log_density,
    structured_log_density,
)

SURVEY_JITTERED = "jittered"
SURVEY_GEOMASKED = "geomasked"

APPROACHES = ("ignore-jitter", "correct-jitter", "naive-geomask-draw", "full")

DEFAULT_GH_ORDER = 25


@dataclass
class ModelParams:
    """Fixed effects and variance parameters (beta includes the intercept)."""

    beta: np.ndarray
    tau: float
    phi: float
    sigma_eps_sq: float

    def __post_init__(self):
        self.beta = np.asarray(self.beta, dtype=float)

    def in_support(self) -> bool:
        return (
            self.tau > 0
            and self.sigma_eps_sq > 0
            and 0.0 <= self.phi <= 1.0
            and bool(np.all(np.isfinite(self.beta)))
        )


@dataclass
class LatentField:
    """Structured (sum-to-zero) and unstructured region effects."""

    w: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=float)
        self.v = np.asarray(self.v, dtype=float)


@dataclass
class ClusterRecord:
    """One surveyed cluster.

    ``observed`` holds the anonymized coordinates for jittered records and is
    None for geomasked ones, whose anonymized position is just ``region``.
    ``region`` is always set (for jittered records it is the region of the
    observed point) and doubles as the stratum label together with
    ``urbanicity``.
    """

    y: int
    n: int
    urbanicity: str  # "U" | "R"
    survey: str      # "jittered" | "geomasked"
    region: int
    observed: Optional[tuple] = None
    weight: float = 1.0
    scheme: Optional[IntegrationScheme] = None

    def __post_init__(self):
        if not 0 <= self.y <= self.n or self.n < 1:
            raise DataError(f"invalid counts y={self.y}, n={self.n}")
        if self.urbanicity not in ("U", "R"):
            raise DataError(f"urbanicity must be 'U' or 'R', got {self.urbanicity!r}")
        if self.survey not in (SURVEY_JITTERED, SURVEY_GEOMASKED):
            raise DataError(f"unknown survey tag {self.survey!r}")
        if self.survey == SURVEY_JITTERED and self.observed is None:
            raise DataError("jittered record needs observed coordinates")


@lru_cache(maxsize=16)
def _gauss_hermite(order: int):
    x, w = np.polynomial.hermite.hermgauss(order)
    logw = np.log(w) - 0.5 * math.log(math.pi)
    return x, logw


def _u_values(params: ModelParams, latent: LatentField, regions: np.ndarray) -> np.ndarray:
    mix = math.sqrt(params.phi) * latent.w + math.sqrt(1.0 - params.phi) * latent.v
    return mix[regions] / math.sqrt(params.tau)


def eta_cells(params: ModelParams, latent: LatentField, grid: FineGrid, cells) -> np.ndarray:
    """Linear predictor at several fine-grid cells."""
    cells = np.asarray(cells, dtype=int)
    xb = params.beta[0] + grid.covariates[cells] @ params.beta[1:]
    return xb + _u_values(params, latent, grid.region[cells])


def linear_predictor(params: ModelParams, latent: LatentField, grid: FineGrid,
                     cell: int) -> float:
    """eta(cell) = [1, d(cell)] . beta + (sqrt(phi) w + sqrt(1-phi) v)_A / sqrt(tau)."""
    return float(eta_cells(params, latent, grid, [cell])[0])


def binomial_logcoef(y: int, n: int) -> float:
    return float(gammaln(n + 1) - gammaln(y + 1) - gammaln(n - y + 1))


def cluster_log_lik(record: ClusterRecord, params: ModelParams, latent: LatentField,
                    grid: FineGrid, gh_order: int = DEFAULT_GH_ORDER) -> float:
    """Position- and nugget-marginalized binomial log likelihood of one cluster.

    log integral N(eps; 0, sigma_eps^2) sum_k omega_k Bin(y | n, expit(eta_k + eps)) d eps,
    with the eps integral evaluated by Gauss-Hermite quadrature of the stated
    order and everything combined by log-sum-exp.
    """
    if record.scheme is None:
        raise DataError("record carries no integration scheme")
    if gh_order < 1:
        raise ValueError("gh_order must be >= 1")
    eta = eta_cells(params, latent, grid, record.scheme.points)
    if not np.all(np.isfinite(eta)):
        raise NumericError("non-finite linear predictor at a scheme point")

    x, gh_logw = _gauss_hermite(gh_order)
    z = eta[:, None] + math.sqrt(2.0 * params.sigma_eps_sq) * x[None, :]
    log_p = -np.logaddexp(0.0, -z)
    log_q = -np.logaddexp(0.0, z)
    with np.errstate(divide="ignore"):
        log_omega = np.log(record.scheme.omega)
    terms = (
        log_omega[:, None]
        + gh_logw[None, :]
        + record.y * log_p
        + (record.n - record.y) * log_q
    )
    return binomial_logcoef(record.y, record.n) + float(logsumexp(terms))


def joint_log_posterior(params: ModelParams, latent: LatentField,
                        data: Sequence[ClusterRecord], priors: PriorSet,
                        grid: FineGrid, gh_order: int = DEFAULT_GH_ORDER) -> float:
    """Unnormalized log posterior; -inf outside the parameter support.

    Sum of cluster log likelihoods, the scaled-structured density of w on its
    non-null space, standard normal densities for v, and the PC priors on
    tau, phi, and the nugget variance.  beta carries a flat improper prior
    (contributing 0) unless ``priors.beta_variance`` is set.
    """
    R = priors.structured.n_regions
    if latent.w.shape != (R,) or latent.v.shape != (R,):
        raise ConfigError("latent field length does not match the region graph")
    if not (params.tau > 0 and params.sigma_eps_sq > 0 and 0.0 < params.phi < 1.0):
        return -math.inf
    if not np.all(np.isfinite(latent.w)) or not np.all(np.isfinite(latent.v)):
        return -math.inf

    lp = structured_log_density(latent.w, priors.structured)
    lp += float(-0.5 * np.sum(latent.v ** 2) - 0.5 * R * math.log(2 * math.pi))
    lp += pc_precision_log_density(params.tau, priors.tau)
    lp += pc_phi_log_density(params.phi, priors.phi)
    lp += pc_variance_log_density(params.sigma_eps_sq, priors.sigma_eps)
    if priors.beta_variance is not None:
        var = priors.beta_variance
        lp += float(
            -0.5 * np.sum(params.beta ** 2) / var
            - 0.5 * params.beta.size * math.log(2 * math.pi * var)
        )
    if not math.isfinite(lp):
        return -math.inf
    for rec in data:
        lp += cluster_log_lik(rec, params, latent, grid, gh_order)
    return float(lp)


def attach_schemes(records: Sequence[ClusterRecord], grid: FineGrid, *,
                   approach: str = "full", k_geomask: int = 100,
                   ring_radii_urban=None, ring_radii_rural=None,
                   points_per_ring: int = 5,
                   r_max: float = 2.0, r_near: float = 5.0, r_far: float = 10.0,
                   p_far: float = 0.01,
                   rng: Optional[np.random.Generator] = None,
                   true_cells: Optional[Sequence[int]] = None) -> list:
    """Return copies of ``records`` with integration schemes attached.

    ``approach`` chooses the positional treatment: 'ignore-jitter' and
    'naive-geomask-draw' place clusters at single cells (the observed cell,
    or one drawn proportional to population within the region); the
    correcting approaches marginalize with ring or PAM schemes.  Geomask
    schemes are built once per (region, urbanicity) pair and shared.
    ``true_cells`` disables anonymization entirely (simulation hook).
    """
    if approach not in APPROACHES:
        raise ConfigError(f"unknown approach {approach!r}; expected one of {APPROACHES}")
    naive = approach in ("ignore-jitter", "naive-geomask-draw")
    geomask_cache: dict = {}
    out = []
    for i, rec in enumerate(records):
        if true_cells is not None:
            out.append(replace(rec, scheme=single_cell_scheme(true_cells[i])))
            continue
        if rec.survey == SURVEY_JITTERED:
            if naive:
                cell = cell_at(grid, rec.observed)
                if cell is None:
                    cell = nearest_populated_cell(grid, rec.observed)
                scheme = single_cell_scheme(cell)
            else:
                scheme = build_jitter_scheme(
                    rec.observed, rec.urbanicity == "U", grid, grid.admin2_raster,
                    ring_radii=ring_radii_urban if rec.urbanicity == "U" else ring_radii_rural,
                    points_per_ring=points_per_ring,
                    r_max=r_max, r_near=r_near, r_far=r_far, p_far=p_far,
                )
        else:
            if naive:
                if rng is None:
                    raise ConfigError("naive geomask placement needs an rng")
                support = np.flatnonzero(grid.region == rec.region)
                if support.size == 0:
                    raise DataError(f"region {rec.region} has no populated cells")
                q = grid.population[support]
                cell = int(rng.choice(support, p=q / q.sum()))
                scheme = single_cell_scheme(cell)
            else:
                key = (rec.region, rec.urbanicity)
                if key not in geomask_cache:
                    geomask_cache[key] = build_geomask_scheme(
                        grid, rec.region, rec.urbanicity == "U", k_geomask,
                        grid.transforms, rng,
                    )
                scheme = geomask_cache[key]
        out.append(replace(rec, scheme=scheme))
    return out


CLUSTER_CSV_HEADER = ["survey", "y", "n", "urbanicity", "x", "y", "region", "weight"]


def write_clusters_csv(records: Sequence[ClusterRecord], path) -> None:
    """Cluster data CSV: survey, y, n, urbanicity, x, y, region (+ weight).

    Coordinate columns are empty for geomasked records and the region column
    is empty for jittered ones; columns are positional (the successes column
    and the northing column share the name 'y').
    """
    with open(path, "w", newline="", encoding="ascii") as fh:
        writer = csv.writer(fh)
        writer.writerow(CLUSTER_CSV_HEADER)
        for rec in records:
            if rec.survey == SURVEY_JITTERED:
                x, yc = "%.17g" % rec.observed[0], "%.17g" % rec.observed[1]
                region = ""
            else:
                x, yc, region = "", "", str(rec.region)
            writer.writerow(
                [rec.survey, rec.y, rec.n, rec.urbanicity, x, yc, region,
                 "%.17g" % rec.weight]
            )


def read_clusters_csv(path, grid: Optional[FineGrid] = None) -> list:
    """Parse a cluster CSV (columns by position; see write_clusters_csv).

    Jittered records get their region label from the region raster at the
    observed point, which requires ``grid``.
    """
    def bad(lineno, msg):
        return ParseError(f"{path}: line {lineno}: {msg}")

    records = []
    with open(path, newline="", encoding="ascii") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or len(header) < 7:
            raise bad(1, "missing or short header")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) < 7:
                raise bad(lineno, f"expected >= 7 columns, found {len(row)}")
            survey, y, n, urb, x, yc, region = row[:7]
            weight = float(row[7]) if len(row) > 7 and row[7] != "" else 1.0
            try:
                y_i, n_i = int(y), int(n)
            except ValueError:
                raise bad(lineno, "non-integer counts") from None
            if survey == SURVEY_JITTERED:
                try:
                    obs = (float(x), float(yc))
                except ValueError:
                    raise bad(lineno, "non-numeric coordinates") from None
                if grid is None:
                    raise ConfigError("reading jittered records requires the fine grid")
                r = grid.region_raster.value_at(obs)
                if r is None:
                    raise DataError(f"{path}: line {lineno}: observed point outside raster")
                records.append(ClusterRecord(y_i, n_i, urb, survey, int(round(r)),
                                             observed=obs, weight=weight))
            else:
                try:
                    reg = int(region)
                except ValueError:
                    raise bad(lineno, "non-integer region") from None
                records.append(ClusterRecord(y_i, n_i, urb, survey, reg, weight=weight))
    return records
