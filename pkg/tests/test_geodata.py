from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from leoalloc.config import ConfigError, GridSpec
from leoalloc.geodata import (
    IngestionError,
    build_grid,
    hotspot_centres,
    load_population,
    read_esri_ascii,
    synthesize_population,
    write_esri_ascii,
)

EUROPE = GridSpec(40.0, 55.0, 5.0, 30.0, 0.25)


def test_europe_grid_has_6161_cells():
    g = build_grid(EUROPE)
    assert (g.n_rows, g.n_cols) == (61, 101)
    assert g.n_cells == 6161


def test_small_box_is_three_by_three():
    g = build_grid(GridSpec(10.0, 11.0, 20.0, 21.0, 0.5))
    assert g.n_cells == 9
    assert set(g.center_lat) == {10.0, 10.5, 11.0}
    assert set(g.center_lon) == {20.0, 20.5, 21.0}


def test_row_major_north_to_south_west_to_east():
    g = build_grid(GridSpec(10.0, 11.0, 20.0, 21.0, 0.5))
    assert g.center_lat[0] == 11.0 and g.center_lon[0] == 20.0
    assert g.center_lat[1] == 11.0 and g.center_lon[1] == 20.5
    assert g.center_lat[3] == 10.5 and g.center_lon[3] == 20.0


@given(
    lat0=st.floats(-60, 50), lon0=st.floats(-170, 150),
    nr=st.integers(1, 12), nc=st.integers(1, 12),
    res=st.sampled_from([0.1, 0.25, 0.5, 1.0]),
)
@settings(max_examples=60, deadline=None)
def test_spacing_is_resolution_and_ids_biject(lat0, lon0, nr, nc, res):
    spec = GridSpec(lat0, lat0 + nr * res, lon0, lon0 + nc * res, res)
    g = build_grid(spec)
    assert (g.n_rows, g.n_cols) == (nr + 1, nc + 1)
    lat = g.center_lat.reshape(g.n_rows, g.n_cols)
    lon = g.center_lon.reshape(g.n_rows, g.n_cols)
    np.testing.assert_allclose(-np.diff(lat, axis=0), res, rtol=1e-9, atol=1e-9)
    np.testing.assert_allclose(np.diff(lon, axis=1), res, rtol=1e-9, atol=1e-9)
    ids = np.arange(g.n_cells)
    r, c = g.row_col(ids)
    np.testing.assert_array_equal(g.cell_id(r, c), ids)


def test_build_grid_is_pure():
    a, b = build_grid(EUROPE), build_grid(EUROPE)
    np.testing.assert_array_equal(a.center_lat, b.center_lat)
    np.testing.assert_array_equal(a.area_km2, b.area_km2)


def test_empty_box_rejected():
    with pytest.raises(ConfigError):
        GridSpec(10.0, 10.0, 0.0, 1.0, 0.5)


def test_cell_record_and_spherical_area():
    g = build_grid(GridSpec(0.0, 1.0, 0.0, 1.0, 1.0))
    c = g.cell(0)
    assert c.center == (1.0, 0.0)
    assert len(c.corners) == 4
    # 1 deg x 1 deg patch on the sphere: R^2 * dlon * (sin(lat2) - sin(lat1))
    expect = 6371.0**2 * np.radians(1.0) * (np.sin(np.radians(1.5)) - np.sin(np.radians(0.5)))
    assert c.area == pytest.approx(expect, rel=1e-12)


def test_uniform_population():
    g = synthesize_population(build_grid(GridSpec(0, 2, 0, 2, 0.5)), seed=0, model="uniform", n=100)
    assert np.all(g.total_population == 100)


def test_lognormal_determinism():
    g = build_grid(GridSpec(0, 5, 0, 5, 0.25))
    kw = dict(mu=8.0, sigma=1.2, correlation_cells=2, zero_fraction=0.1)
    a = synthesize_population(g, 1, "lognormal", **kw).total_population
    b = synthesize_population(g, 1, "lognormal", **kw).total_population
    c = synthesize_population(g, 2, "lognormal", **kw).total_population
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)
    assert np.all(a >= 0) and np.all(a == np.floor(a))


def _strict_local_maxima(z):
    out = []
    for i in range(z.shape[0]):
        for j in range(z.shape[1]):
            nb = [z[a, b] for a in range(max(i - 1, 0), min(i + 2, z.shape[0]))
                  for b in range(max(j - 1, 0), min(j + 2, z.shape[1])) if (a, b) != (i, j)]
            if all(z[i, j] > v for v in nb):
                out.append((i, j))
    return out


@pytest.mark.parametrize("seed", [0, 1, 7])
def test_clustered_has_k_maxima_at_centres(seed):
    g = build_grid(GridSpec(0, 12, 0, 12, 0.25))
    p = synthesize_population(g, seed, "clustered", k=5, peak=1e5, width_cells=2.0)
    z = p.total_population.reshape(g.n_rows, g.n_cols)
    maxima = _strict_local_maxima(z)
    assert sorted(maxima) == sorted(hotspot_centres(g, seed, k=5, width_cells=2.0))


def test_unknown_model():
    with pytest.raises(ConfigError):
        synthesize_population(build_grid(EUROPE), 0, "fractal")


def _grid_2x3():
    return build_grid(GridSpec(0.0, 1.0, 0.0, 2.0, 1.0))


def test_esri_round_trip_and_alpha_product(tmp_path):
    g = _grid_2x3()
    pop = np.array([1000, 0, 5, 7, 8, 9], dtype=float)
    path = tmp_path / "pop.asc"
    write_esri_ascii(path, g, pop)
    g2 = load_population(g, path, alpha=1e-3)
    np.testing.assert_array_equal(g2.total_population, pop)
    assert g2.active_users[0] == pytest.approx(1.0)
    assert g2.active_users.sum() == pytest.approx(1e-3 * pop.sum())
    np.testing.assert_array_equal(g2.populated_ids, [0, 2, 3, 4, 5])


def test_nodata_maps_to_zero(tmp_path):
    g = _grid_2x3()
    pop = np.array([1.0, np.nan, 3.0, 4.0, np.nan, 6.0])
    path = tmp_path / "pop.asc"
    write_esri_ascii(path, g, pop)
    g2 = load_population(g, path)
    np.testing.assert_array_equal(g2.total_population, [1, 0, 3, 4, 0, 6])


def test_all_zero_raster_has_no_populated_cells(tmp_path):
    g = _grid_2x3()
    path = tmp_path / "z.asc"
    write_esri_ascii(path, g, np.zeros(6))
    assert len(load_population(g, path).populated_ids) == 0


def _write(path, text):
    path.write_text(text)
    return path


def test_malformed_row_reports_position(tmp_path):
    p = _write(tmp_path / "bad.asc",
               "ncols 3\nnrows 2\nxllcorner 0\nyllcorner 0\ncellsize 1\n1 2 3\n4 5\n")
    with pytest.raises(IngestionError, match="row 1"):
        read_esri_ascii(p)


def test_negative_value_rejected(tmp_path):
    p = _write(tmp_path / "neg.asc",
               "ncols 2\nnrows 1\nxllcorner 0\nyllcorner 0\ncellsize 1\n1 -2\n")
    with pytest.raises(IngestionError, match="col 1"):
        read_esri_ascii(p)


def test_missing_header_key(tmp_path):
    p = _write(tmp_path / "h.asc", "ncols 2\nnrows 1\ncellsize 1\n1 2\n")
    with pytest.raises(IngestionError, match="missing header"):
        read_esri_ascii(p)


def test_bounds_mismatch(tmp_path):
    g = build_grid(GridSpec(0.0, 5.0, 0.0, 5.0, 1.0))
    p = _write(tmp_path / "small.asc",
               "ncols 2\nnrows 2\nxllcorner -0.5\nyllcorner -0.5\ncellsize 1\n1 1\n1 1\n")
    with pytest.raises(IngestionError, match="does not cover"):
        load_population(g, p)


def test_missing_file(tmp_path):
    with pytest.raises(IngestionError):
        load_population(_grid_2x3(), tmp_path / "nope.asc")


def test_csv_ingestion(tmp_path):
    g = _grid_2x3()
    lines = ["lat,lon,population"]
    for la, lo, v in zip(g.center_lat, g.center_lon, [10, 20, 30, 40, 50, 60]):
        lines.append(f"{la},{lo},{v}")
    p = _write(tmp_path / "pop.csv", "\n".join(lines[:-1]) + "\n")  # last cell absent
    g2 = load_population(g, p)
    np.testing.assert_array_equal(g2.total_population, [10, 20, 30, 40, 50, 0])


def test_csv_bad_columns(tmp_path):
    p = _write(tmp_path / "pop.csv", "y,x,n\n1,2,3\n")
    with pytest.raises(IngestionError, match="columns"):
        load_population(_grid_2x3(), p)


def test_negative_population_array_rejected():
    with pytest.raises(IngestionError):
        _grid_2x3().with_population(-np.ones(6))
