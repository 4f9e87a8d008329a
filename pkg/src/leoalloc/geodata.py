"""Fixed geographic cell grid and population attachment."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .config import ConfigError, GridSpec


class IngestionError(ValueError):
    """Raised for unreadable or inconsistent population rasters."""


@dataclass(frozen=True)
class Cell:
    cell_id: int
    center: tuple[float, float]
    corners: tuple[tuple[float, float], ...]
    area: float
    total_population: float
    active_fraction: float
    active_users: float


@dataclass(frozen=True)
class CellGrid:
    """Row-major lattice of cell centres, north to south then west to east.

    Per-cell quantities are stored as parallel arrays indexed by ``cell_id``;
    :meth:`cell` materialises a :class:`Cell` record when one is needed.
    """

    spec: GridSpec
    n_rows: int
    n_cols: int
    center_lat: np.ndarray
    center_lon: np.ndarray
    area_km2: np.ndarray
    total_population: np.ndarray
    active_fraction: np.ndarray

    @property
    def n_cells(self) -> int:
        return len(self.center_lat)

    @property
    def active_users(self) -> np.ndarray:
        return self.active_fraction * self.total_population

    @property
    def populated_ids(self) -> np.ndarray:
        return np.flatnonzero(self.active_users > 0)

    def row_col(self, cell_id):
        return np.divmod(cell_id, self.n_cols)

    def cell_id(self, row, col):
        return np.asarray(row) * self.n_cols + np.asarray(col)

    def cell(self, cell_id: int) -> Cell:
        h = self.spec.resolution / 2.0
        lat, lon = float(self.center_lat[cell_id]), float(self.center_lon[cell_id])
        corners = (
            (lat + h, lon - h), (lat + h, lon + h),
            (lat - h, lon - h), (lat - h, lon + h),
        )
        return Cell(
            cell_id=int(cell_id),
            center=(lat, lon),
            corners=corners,
            area=float(self.area_km2[cell_id]),
            total_population=float(self.total_population[cell_id]),
            active_fraction=float(self.active_fraction[cell_id]),
            active_users=float(self.active_users[cell_id]),
        )

    def with_population(self, population, alpha: float | np.ndarray | None = None) -> CellGrid:
        population = np.asarray(population, dtype=float)
        if population.shape != (self.n_cells,):
            raise IngestionError(
                f"population has shape {population.shape}, expected ({self.n_cells},)"
            )
        if np.any(population < 0) or not np.all(np.isfinite(population)):
            raise IngestionError("population values must be finite and non-negative")
        frac = self.active_fraction if alpha is None else np.broadcast_to(
            np.asarray(alpha, dtype=float), (self.n_cells,)
        ).copy()
        return replace(self, total_population=population, active_fraction=frac)

    def with_alpha(self, alpha) -> CellGrid:
        return self.with_population(self.total_population, alpha)


def _axis(lo: float, hi: float, res: float) -> int:
    n = (hi - lo) / res
    k = int(math.floor(n + 1e-9))
    return k + 1


def build_grid(spec: GridSpec, alpha: float = 1.0) -> CellGrid:
    """Lattice of centres spaced ``resolution`` apart, both boundary lines included."""
    n_rows = _axis(spec.lat_min, spec.lat_max, spec.resolution)
    n_cols = _axis(spec.lon_min, spec.lon_max, spec.resolution)
    if n_rows < 1 or n_cols < 1:
        raise ConfigError("grid specification yields no cells")
    lats = spec.lat_max - spec.resolution * np.arange(n_rows)
    lons = spec.lon_min + spec.resolution * np.arange(n_cols)
    lat = np.repeat(lats, n_cols)
    lon = np.tile(lons, n_rows)
    r_km = 6371.0
    h = np.radians(spec.resolution / 2.0)
    la = np.radians(lat)
    area = r_km**2 * (2 * h) * np.abs(np.sin(la + h) - np.sin(la - h))
    n = n_rows * n_cols
    return CellGrid(
        spec=spec,
        n_rows=n_rows,
        n_cols=n_cols,
        center_lat=lat,
        center_lon=lon,
        area_km2=area,
        total_population=np.zeros(n),
        active_fraction=np.full(n, float(alpha)),
    )


# -- raster ingestion ---------------------------------------------------------

_ESRI_KEYS = ("ncols", "nrows", "xllcorner", "yllcorner", "cellsize")


def read_esri_ascii(path: str | Path) -> tuple[dict, np.ndarray]:
    """Parse an ESRI ASCII grid; returns (header, values) with NODATA as NaN."""
    path = Path(path)
    header: dict[str, float] = {}
    with open(path) as fh:
        lines = fh.readlines()
    i = 0
    while i < len(lines):
        parts = lines[i].split()
        if not parts:
            i += 1
            continue
        key = parts[0].lower()
        if key[0].isalpha():
            if len(parts) != 2:
                raise IngestionError(f"{path}:{i + 1}: malformed header line {lines[i]!r}")
            try:
                header[key] = float(parts[1])
            except ValueError:
                raise IngestionError(f"{path}:{i + 1}: non-numeric header value") from None
            i += 1
        else:
            break
    for k in ("xllcenter", "yllcenter"):
        if k in header:
            header[k.replace("center", "corner")] = header.pop(k) - header.get("cellsize", 0) / 2
    missing = [k for k in _ESRI_KEYS if k not in header]
    if missing:
        raise IngestionError(f"{path}: missing header keys {missing}")
    nrows, ncols = int(header["nrows"]), int(header["ncols"])
    rows = []
    for j, line in enumerate(lines[i:]):
        if not line.strip():
            continue
        try:
            row = [float(v) for v in line.split()]
        except ValueError:
            raise IngestionError(f"{path}: row {len(rows)} (line {i + j + 1}): non-numeric value") from None
        if len(row) != ncols:
            raise IngestionError(
                f"{path}: row {len(rows)} (line {i + j + 1}) has {len(row)} values, expected {ncols}"
            )
        rows.append(row)
    if len(rows) != nrows:
        raise IngestionError(f"{path}: found {len(rows)} data rows, header says {nrows}")
    values = np.array(rows, dtype=float)
    nodata = header.get("nodata_value")
    if nodata is not None:
        values[values == nodata] = np.nan
    bad = np.argwhere(values < 0)
    if len(bad):
        r, c = bad[0]
        raise IngestionError(f"{path}: negative population at row {r}, col {c}")
    return header, values


def write_esri_ascii(path: str | Path, grid: CellGrid, values, nodata: float = -9999.0,
                     fmt: str = "{:.6g}") -> None:
    """Write per-cell values on the grid lattice; NaN becomes NODATA."""
    v = np.asarray(values, dtype=float).reshape(grid.n_rows, grid.n_cols)
    res = grid.spec.resolution
    with open(path, "w") as fh:
        fh.write(f"ncols {grid.n_cols}\n")
        fh.write(f"nrows {grid.n_rows}\n")
        fh.write(f"xllcorner {grid.spec.lon_min - res / 2:.10g}\n")
        fh.write(f"yllcorner {grid.spec.lat_max - (grid.n_rows - 0.5) * res:.10g}\n")
        fh.write(f"cellsize {res:.10g}\n")
        fh.write(f"NODATA_value {nodata:g}\n")
        for row in v:
            fh.write(" ".join(fmt.format(nodata if np.isnan(x) else x) for x in row))
            fh.write("\n")


def _sample_esri(grid: CellGrid, header: dict, values: np.ndarray, path) -> np.ndarray:
    cs = header["cellsize"]
    nrows, ncols = values.shape
    top = header["yllcorner"] + nrows * cs
    row = np.floor((top - grid.center_lat) / cs + 1e-9).astype(int)
    col = np.floor((grid.center_lon - header["xllcorner"]) / cs + 1e-9).astype(int)
    outside = (row < 0) | (row >= nrows) | (col < 0) | (col >= ncols)
    if outside.any():
        i = int(np.flatnonzero(outside)[0])
        raise IngestionError(
            f"{path}: raster does not cover cell {i} at "
            f"({grid.center_lat[i]:.4f}, {grid.center_lon[i]:.4f}) -> row {row[i]}, col {col[i]}"
        )
    pop = values[row, col]
    return np.nan_to_num(pop, nan=0.0)


def _sample_csv(grid: CellGrid, path) -> np.ndarray:
    lat, lon, val = [], [], []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"lat", "lon", "population"} <= set(reader.fieldnames):
            raise IngestionError(f"{path}: expected columns lat,lon,population")
        for n, rec in enumerate(reader, start=2):
            try:
                la, lo, v = float(rec["lat"]), float(rec["lon"]), float(rec["population"])
            except (TypeError, ValueError):
                raise IngestionError(f"{path}:{n}: malformed record {rec}") from None
            if v < 0:
                raise IngestionError(f"{path}:{n}: negative population {v}")
            lat.append(la)
            lon.append(lo)
            val.append(v if np.isfinite(v) else 0.0)
    if not val:
        raise IngestionError(f"{path}: no records")
    tree = cKDTree(np.column_stack([lat, lon]))
    dist, idx = tree.query(np.column_stack([grid.center_lat, grid.center_lon]))
    pop = np.asarray(val)[idx]
    # a centre with no record within half a cell is treated as missing
    pop[dist > grid.spec.resolution / 2 + 1e-9] = 0.0
    return pop


def load_population(grid: CellGrid, raster_source: str | Path, alpha: float | None = None) -> CellGrid:
    """Fill ``total_population`` by nearest-neighbour sampling at cell centres.

    ``raster_source`` is an ESRI ASCII grid (``.asc``) or a ``lat,lon,population`` CSV.
    NODATA and missing values map to zero.
    """
    path = Path(raster_source)
    if not path.exists():
        raise IngestionError(f"{path}: population raster not found")
    if path.suffix.lower() == ".csv":
        pop = _sample_csv(grid, path)
    else:
        header, values = read_esri_ascii(path)
        pop = _sample_esri(grid, header, values, path)
    return grid.with_population(pop, alpha)


def synthesize_population(grid: CellGrid, seed: int, model: str = "lognormal", **params) -> CellGrid:
    """Deterministic synthetic population (non-negative integers).

    Models
    ------
    uniform
        ``n`` people in every cell.
    lognormal
        ``exp(mu + sigma * Z)`` with ``Z`` a unit-variance Gaussian field,
        optionally smoothed over ``correlation_cells`` cells; a fraction
        ``zero_fraction`` of cells (lowest field values) is emptied.
    clustered
        ``k`` Gaussian hotspots of height ``peak`` and width ``width_cells``
        over a ``background`` level, centres at least ``min_separation_cells`` apart.
    """
    rng = np.random.default_rng(seed)
    shape = (grid.n_rows, grid.n_cols)
    if model == "uniform":
        pop = np.full(shape, float(params.get("n", 100)))
    elif model == "lognormal":
        mu = float(params.get("mu", 10.0))
        sigma = float(params.get("sigma", 1.0))
        corr = float(params.get("correlation_cells", 0.0))
        zero_fraction = float(params.get("zero_fraction", 0.0))
        z = rng.standard_normal(shape)
        if corr > 0:
            z = ndimage.gaussian_filter(z, corr, mode="reflect")
            z = (z - z.mean()) / z.std()
        pop = np.exp(mu + sigma * z)
        if zero_fraction > 0:
            # empty regions follow a separate smooth field so they form blobs
            m = rng.standard_normal(shape)
            if corr > 0:
                m = ndimage.gaussian_filter(m, corr, mode="reflect")
            pop[m <= np.quantile(m, zero_fraction)] = 0.0
    elif model == "clustered":
        k = int(params.get("k", 5))
        peak = float(params.get("peak", 1e5))
        width = float(params.get("width_cells", 2.0))
        background = float(params.get("background", 0.0))
        min_sep = float(params.get("min_separation_cells", 4 * width))
        centres = _hotspot_centres(rng, shape, k, min_sep)
        rr, cc = np.indices(shape)
        pop = np.full(shape, background)
        for r0, c0 in centres:
            pop += peak * np.exp(-((rr - r0) ** 2 + (cc - c0) ** 2) / (2 * width**2))
    else:
        raise ConfigError(f"unknown synthetic population model {model!r}")
    pop = np.floor(pop + 0.5)
    return grid.with_population(pop.ravel())


def _hotspot_centres(rng, shape, k, min_sep, max_tries=10000):
    centres: list[tuple[int, int]] = []
    tries = 0
    while len(centres) < k:
        tries += 1
        if tries > max_tries:
            raise ConfigError(f"cannot place {k} hotspots {min_sep} cells apart on a {shape} grid")
        r, c = int(rng.integers(shape[0])), int(rng.integers(shape[1]))
        if all((r - r0) ** 2 + (c - c0) ** 2 >= min_sep**2 for r0, c0 in centres):
            centres.append((r, c))
    return centres


def hotspot_centres(grid: CellGrid, seed: int, k: int = 5, width_cells: float = 2.0,
                    min_separation_cells: float | None = None):
    """The hotspot centres :func:`synthesize_population` would use (for tests)."""
    rng = np.random.default_rng(seed)
    sep = 4 * width_cells if min_separation_cells is None else min_separation_cells
    return _hotspot_centres(rng, (grid.n_rows, grid.n_cols), k, sep)
