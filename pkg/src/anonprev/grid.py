"""Raster I/O, fine-grid construction, covariate transforms, and cell lookup.

Coordinates are planar easting/northing in kilometers; no geodesy anywhere.
Cells are half-open squares [x, x + cell_size) x [y, y + cell_size), so a
point on a shared edge resolves to the cell with the larger row/column
index.  Raster values are stored row-major with row 0 the *southernmost*
row (the ASCII file format stores the top row first; reader and writer flip
accordingly).

All types here are immutable after construction and safe to share across
parallel workers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, DataError, ParseError

TRANSFORM_TAGS = ("identity", "log1p", "sqrt")

_HEADER_KEYS = ("ncols", "nrows", "xllcorner", "yllcorner", "cellsize", "NODATA_value")


@dataclass(eq=False)
class Raster:
    """Rectangular grid of cell values with a geotransform.

    ``values`` is a flat row-major array of length ``n_rows * n_cols`` with
    row 0 adjacent to ``y_origin`` (the lower-left corner).
    """

    n_rows: int
    n_cols: int
    x_origin: float
    y_origin: float
    cell_size: float
    nodata: float
    values: np.ndarray

    def __post_init__(self):
        if self.n_rows <= 0 or self.n_cols <= 0:
            raise ValueError("raster dimensions must be positive")
        if self.cell_size <= 0:
            raise ValueError("cell_size must be positive")
        vals = np.ascontiguousarray(np.asarray(self.values, dtype=float).reshape(-1))
        if vals.size != self.n_rows * self.n_cols:
            raise ValueError(
                f"values length {vals.size} != n_rows*n_cols = {self.n_rows * self.n_cols}"
            )
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    def grid2d(self) -> np.ndarray:
        """Read-only (n_rows, n_cols) view, row 0 southernmost."""
        return self.values.reshape(self.n_rows, self.n_cols)

    def rowcol_at(self, point) -> Optional[tuple[int, int]]:
        """(row, col) of the cell containing ``point``, or None outside the raster."""
        col = math.floor((point[0] - self.x_origin) / self.cell_size)
        row = math.floor((point[1] - self.y_origin) / self.cell_size)
        if 0 <= row < self.n_rows and 0 <= col < self.n_cols:
            return row, col
        return None

    def value_at(self, point) -> Optional[float]:
        rc = self.rowcol_at(point)
        if rc is None:
            return None
        return float(self.values[rc[0] * self.n_cols + rc[1]])

    def cell_center(self, row: int, col: int) -> tuple[float, float]:
        return (
            self.x_origin + (col + 0.5) * self.cell_size,
            self.y_origin + (row + 0.5) * self.cell_size,
        )

    def same_geotransform(self, other: "Raster") -> bool:
        return (
            self.n_rows == other.n_rows
            and self.n_cols == other.n_cols
            and self.x_origin == other.x_origin
            and self.y_origin == other.y_origin
            and self.cell_size == other.cell_size
        )


def load_ascii_grid(path) -> Raster:
    """Parse an ASCII grid file.

    Format: header lines ``ncols``, ``nrows``, ``xllcorner``, ``yllcorner``,
    ``cellsize``, ``NODATA_value`` followed by ``nrows`` whitespace-separated
    rows of ``ncols`` floats, top row first.
    """
    with open(path, "r", encoding="ascii") as fh:
        lines = fh.read().splitlines()

    header = {}
    for i, key in enumerate(_HEADER_KEYS):
        lineno = i + 1
        if i >= len(lines):
            raise ParseError(f"{path}: line {lineno}: missing header '{key}'")
        parts = lines[i].split()
        if len(parts) != 2 or parts[0].lower() != key.lower():
            raise ParseError(f"{path}: line {lineno}: expected header '{key}'")
        try:
            header[key] = int(parts[1]) if key in ("ncols", "nrows") else float(parts[1])
        except ValueError:
            raise ParseError(
                f"{path}: line {lineno}: non-numeric value {parts[1]!r} for '{key}'"
            ) from None

    n_rows, n_cols = header["nrows"], header["ncols"]
    if n_rows <= 0 or n_cols <= 0:
        raise ParseError(f"{path}: line 1: non-positive raster dimensions")

    data_lines = lines[len(_HEADER_KEYS):]
    while data_lines and not data_lines[-1].strip():
        data_lines.pop()
    if len(data_lines) != n_rows:
        raise ParseError(
            f"{path}: line {len(_HEADER_KEYS) + len(data_lines) + 1}: "
            f"expected {n_rows} data rows, found {len(data_lines)}"
        )

    rows = []
    for r, line in enumerate(data_lines):
        lineno = len(_HEADER_KEYS) + 1 + r
        toks = line.split()
        if len(toks) != n_cols:
            raise ParseError(
                f"{path}: line {lineno}: expected {n_cols} values, found {len(toks)}"
            )
        try:
            rows.append([float(t) for t in toks])
        except ValueError:
            raise ParseError(f"{path}: line {lineno}: non-numeric token") from None

    values = np.asarray(rows[::-1], dtype=float).reshape(-1)  # file is top row first
    return Raster(
        n_rows=n_rows,
        n_cols=n_cols,
        x_origin=header["xllcorner"],
        y_origin=header["yllcorner"],
        cell_size=header["cellsize"],
        nodata=header["NODATA_value"],
        values=values,
    )


def write_ascii_grid(raster: Raster, path) -> None:
    """Write ``raster`` in the ASCII grid format, 17 significant digits per value."""
    g = raster.grid2d()
    with open(path, "w", encoding="ascii") as fh:
        fh.write(f"ncols {raster.n_cols}\n")
        fh.write(f"nrows {raster.n_rows}\n")
        fh.write("xllcorner %.17g\n" % raster.x_origin)
        fh.write("yllcorner %.17g\n" % raster.y_origin)
        fh.write("cellsize %.17g\n" % raster.cell_size)
        fh.write("NODATA_value %.17g\n" % raster.nodata)
        for r in range(raster.n_rows - 1, -1, -1):
            fh.write(" ".join("%.17g" % v for v in g[r]))
            fh.write("\n")


@dataclass
class TransformSpec:
    """Per-covariate transform and normalization plan.

    ``normalize[j]`` is False for binary covariates, which must carry the
    identity transform and are never centered or scaled.  ``means``/``sds``
    (sample sd, ddof=1) are filled in by :func:`build_fine_grid` from the
    populated cells.  ``lambda_mix`` is the dimensionless multiplier applied
    to rescaled coordinates when building integration features.
    """

    transforms: list
    normalize: list
    lambda_mix: float = 0.0
    means: Optional[np.ndarray] = None
    sds: Optional[np.ndarray] = None

    def __post_init__(self):
        if len(self.transforms) != len(self.normalize):
            raise ConfigError("transforms and normalize must have equal length")
        for j, tag in enumerate(self.transforms):
            if tag not in TRANSFORM_TAGS:
                raise ConfigError(f"unknown transform tag {tag!r} for covariate {j}")
            if not self.normalize[j] and tag != "identity":
                raise ConfigError(
                    f"covariate {j}: binary (unnormalized) covariates must use identity"
                )
        if self.lambda_mix < 0:
            raise ConfigError("lambda_mix must be >= 0")

    @property
    def n_covariates(self) -> int:
        return len(self.transforms)


def _apply_transform(tag: str, x: np.ndarray, name: str) -> np.ndarray:
    if tag == "identity":
        return x
    if tag == "log1p":
        if np.any(x <= -1):
            raise DataError(f"covariate {name}: log1p transform requires values > -1")
        return np.log1p(x)
    if tag == "sqrt":
        if np.any(x < 0):
            raise DataError(f"covariate {name}: sqrt transform requires values >= 0")
        return np.sqrt(x)
    raise ConfigError(f"unknown transform tag {tag!r}")


@dataclass(eq=False)
class FineGrid:
    """The populated cells of a raster stack: domain of all quadrature.

    One entry per cell with population > 0.  Covariates are stored after
    transformation and normalization.  ``cell_lookup`` maps a flat raster
    index to a fine-grid index (-1 where unpopulated).
    """

    coords: np.ndarray       # (N, 2) cell centers, km
    covariates: np.ndarray   # (N, p)
    population: np.ndarray   # (N,)
    urban: np.ndarray        # (N,) bool
    region: np.ndarray       # (N,) int, geomask-region labels
    admin2: np.ndarray       # (N,) int
    n_rows: int
    n_cols: int
    x_origin: float
    y_origin: float
    cell_size: float
    cell_lookup: np.ndarray  # (n_rows * n_cols,) int
    region_raster: Raster
    admin2_raster: Raster
    transforms: TransformSpec

    def __post_init__(self):
        if np.any(self.population <= 0):
            raise DataError("fine grid contains a non-positive population cell")
        for arr in (self.coords, self.covariates, self.population, self.urban,
                    self.region, self.admin2, self.cell_lookup):
            arr.setflags(write=False)

    @property
    def n_cells(self) -> int:
        return self.coords.shape[0]

    @property
    def n_covariates(self) -> int:
        return self.covariates.shape[1]

    @property
    def n_regions(self) -> int:
        return int(self.region.max()) + 1

    @property
    def n_admin2(self) -> int:
        return int(self.admin2.max()) + 1


def _int_labels(raster: Raster, mask: np.ndarray, what: str) -> np.ndarray:
    vals = raster.values[mask]
    if np.any(vals == raster.nodata):
        idx = int(np.flatnonzero(vals == raster.nodata)[0])
        raise DataError(f"{what} raster has nodata on populated cell #{idx}")
    labels = np.rint(vals).astype(int)
    if np.any(np.abs(vals - labels) > 1e-9) or np.any(labels < 0):
        raise DataError(f"{what} raster must hold non-negative integer labels")
    return labels


def build_fine_grid(covariates: Sequence[Raster], population: Raster,
                    urbanicity: Raster, regions: Raster, admin2: Raster,
                    transforms: TransformSpec) -> FineGrid:
    """Assemble the fine grid from a raster stack.

    Keeps exactly the cells with population > 0, transforms each covariate,
    then normalizes it with mean/sd computed over those cells; the fitted
    constants are stored back into ``transforms``.
    """
    rasters = list(covariates) + [urbanicity, regions, admin2]
    for r in rasters:
        if not population.same_geotransform(r):
            raise ConfigError("raster geotransforms do not match the population raster")
    if len(covariates) != transforms.n_covariates:
        raise ConfigError(
            f"{len(covariates)} covariate rasters but TransformSpec declares "
            f"{transforms.n_covariates}"
        )

    pop_vals = population.values
    mask = (pop_vals != population.nodata) & (pop_vals > 0)
    if not np.any(mask):
        raise DataError("population raster has no populated cells")
    flat_idx = np.flatnonzero(mask)
    rows, cols = np.divmod(flat_idx, population.n_cols)

    n = flat_idx.size
    p = len(covariates)
    cov = np.empty((n, p))
    means = np.zeros(p)
    sds = np.ones(p)
    for j, raster in enumerate(covariates):
        raw = raster.values[flat_idx]
        bad = np.flatnonzero(raw == raster.nodata)
        if bad.size:
            r, c = rows[bad[0]], cols[bad[0]]
            raise DataError(
                f"covariate {j} has nodata on populated cell (row {r}, col {c})"
            )
        col = _apply_transform(transforms.transforms[j], raw, str(j))
        if transforms.normalize[j]:
            mu = float(np.mean(col))
            sd = float(np.std(col, ddof=1)) if n > 1 else 0.0
            if not np.isfinite(sd) or sd <= 0:
                raise DataError(f"covariate {j}: zero standard deviation over populated cells")
            col = (col - mu) / sd
            means[j], sds[j] = mu, sd
        cov[:, j] = col
    transforms.means = means
    transforms.sds = sds

    urb_vals = urbanicity.values[flat_idx]
    if np.any(urb_vals == urbanicity.nodata):
        raise DataError("urbanicity raster has nodata on a populated cell")
    urban = urb_vals != 0

    region = _int_labels(regions, mask, "region")
    adm2 = _int_labels(admin2, mask, "admin2")

    xs = population.x_origin + (cols + 0.5) * population.cell_size
    ys = population.y_origin + (rows + 0.5) * population.cell_size
    coords = np.column_stack([xs, ys])

    lookup = np.full(population.n_rows * population.n_cols, -1, dtype=int)
    lookup[flat_idx] = np.arange(n)

    return FineGrid(
        coords=coords,
        covariates=cov,
        population=pop_vals[flat_idx].astype(float),
        urban=urban,
        region=region,
        admin2=adm2,
        n_rows=population.n_rows,
        n_cols=population.n_cols,
        x_origin=population.x_origin,
        y_origin=population.y_origin,
        cell_size=population.cell_size,
        cell_lookup=lookup,
        region_raster=regions,
        admin2_raster=admin2,
        transforms=transforms,
    )


def cell_at(grid: FineGrid, point) -> Optional[int]:
    """Index of the populated cell whose square contains ``point``; None otherwise."""
    col = math.floor((point[0] - grid.x_origin) / grid.cell_size)
    row = math.floor((point[1] - grid.y_origin) / grid.cell_size)
    if not (0 <= row < grid.n_rows and 0 <= col < grid.n_cols):
        return None
    idx = grid.cell_lookup[row * grid.n_cols + col]
    return int(idx) if idx >= 0 else None


def nearest_populated_cell(grid: FineGrid, point) -> int:
    """Fine-grid index of the populated cell whose center is closest to ``point``."""
    d = grid.coords - np.asarray(point, dtype=float)
    return int(np.argmin(np.einsum("ij,ij->i", d, d)))
