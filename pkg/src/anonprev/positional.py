"""Anonymization models: jitter and geomask log-densities plus forward samplers.

Densities are unnormalized with the constant of proportionality fixed at 1
(all downstream uses renormalize per cluster, so the constant cancels).
Density evaluation is stateless; samplers need one rng per worker.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DataError, NumericError
from .grid import FineGrid, Raster, cell_at

JITTER_URBAN = "jitter_urban"
JITTER_RURAL = "jitter_rural"
GEOMASK = "geomask"

_MAX_REJECTIONS = 10_000


@dataclass(frozen=True)
class AnonymizationModel:
    """Jitter (urban/rural) or geomask anonymization.

    Urban jitter displaces by a uniform angle and a uniform radius up to
    ``r_max``.  Rural jitter draws the radius from U(0, r_near) with
    probability 1 - p_far and from U(0, r_far) otherwise.  If
    ``constrain_admin2`` is set, displacements may not cross the Admin2
    boundary of the true location.
    """

    variant: str
    r_max: float = 2.0
    r_near: float = 5.0
    r_far: float = 10.0
    p_far: float = 0.01
    constrain_admin2: bool = True

    def __post_init__(self):
        if self.variant not in (JITTER_URBAN, JITTER_RURAL, GEOMASK):
            raise ValueError(f"unknown anonymization variant {self.variant!r}")
        if self.r_max <= 0 or self.r_near <= 0 or self.r_far <= self.r_near:
            raise ValueError("require 0 < r_max and 0 < r_near < r_far")
        if not 0 <= self.p_far <= 1:
            raise ValueError("p_far must lie in [0, 1]")

    @staticmethod
    def jitter_urban(r_max: float = 2.0, constrain_admin2: bool = True) -> "AnonymizationModel":
        return AnonymizationModel(JITTER_URBAN, r_max=r_max, constrain_admin2=constrain_admin2)

    @staticmethod
    def jitter_rural(r_near: float = 5.0, r_far: float = 10.0, p_far: float = 0.01,
                     constrain_admin2: bool = True) -> "AnonymizationModel":
        return AnonymizationModel(JITTER_RURAL, r_near=r_near, r_far=r_far, p_far=p_far,
                                  constrain_admin2=constrain_admin2)

    @staticmethod
    def geomask() -> "AnonymizationModel":
        return AnonymizationModel(GEOMASK)


def jitter_log_density(model: AnonymizationModel, s, t, admin2: Raster) -> float:
    """Log density of observing jittered point ``s`` given true point ``t``.

    Urban:  log[ I{A2[s]=A2[t]} * I{|s-t| < r_max} / |s-t| ].
    Rural:  the same radial kernel times the two-component mixture indicator
    (1 - p_far) I{|s-t| < r_near} + p_far I{|s-t| < r_far}.

    The 1/|s-t| kernel is singular at s = t; there the distance is clamped to
    half a raster cell, so the returned value is always finite or -inf.
    """
    if model.variant == GEOMASK:
        raise ValueError("jitter_log_density called with a geomask model")
    d = math.hypot(s[0] - t[0], s[1] - t[1])
    if d == 0.0:
        d = admin2.cell_size / 2.0
    if model.constrain_admin2:
        a_s = admin2.value_at(s)
        a_t = admin2.value_at(t)
        if a_s is None or a_t is None or a_s != a_t:
            return -math.inf
    if model.variant == JITTER_URBAN:
        if d >= model.r_max:
            return -math.inf
        return -math.log(d)
    mix = 0.0
    if d < model.r_near:
        mix += 1.0 - model.p_far
    if d < model.r_far:
        mix += model.p_far
    if mix == 0.0:
        return -math.inf
    return math.log(mix) - math.log(d)


def geomask_log_density(region_of_s: int, t, grid: FineGrid) -> float:
    """Log indicator that ``t`` lies in geomask region ``region_of_s``.

    The support is restricted to populated cells: a point in an unpopulated
    or out-of-raster cell has log density -inf.
    """
    if not 0 <= region_of_s < grid.n_regions:
        raise ValueError(f"region index {region_of_s} out of range")
    idx = cell_at(grid, t)
    if idx is None:
        return -math.inf
    return 0.0 if int(grid.region[idx]) == region_of_s else -math.inf


def sample_anonymized(model: AnonymizationModel, t, grid: FineGrid, rng: np.random.Generator):
    """Anonymize true location ``t``: a displaced point for jitter models, the
    region label for geomasking.

    Jittered points that leave the raster or cross the Admin2 boundary of
    ``t`` are rejected and redrawn, matching the re-displacement practice for
    boundary crossings.
    """
    cell = cell_at(grid, t)
    if cell is None:
        raise DataError("true location does not lie in a populated cell")
    if model.variant == GEOMASK:
        return int(grid.region[cell])

    admin2 = grid.admin2_raster
    a_t = admin2.value_at(t) if model.constrain_admin2 else None
    for _ in range(_MAX_REJECTIONS):
        theta = rng.uniform(0.0, 2.0 * math.pi)
        if model.variant == JITTER_URBAN:
            radius = rng.uniform(0.0, model.r_max)
        else:
            far = rng.uniform() < model.p_far
            radius = rng.uniform(0.0, model.r_far if far else model.r_near)
        s = (t[0] + radius * math.cos(theta), t[1] + radius * math.sin(theta))
        if admin2.rowcol_at(s) is None:
            continue
        if model.constrain_admin2 and admin2.value_at(s) != a_t:
            continue
        return s
    raise NumericError(
        f"jitter rejected {_MAX_REJECTIONS} consecutive draws (degenerate Admin2 geometry)"
    )
