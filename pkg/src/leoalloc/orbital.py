"""Walker-delta constellation geometry on a spherical, rotating Earth."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .config import ConfigError, ConstellationConfig


class SatelliteId(NamedTuple):
    plane_index: int
    in_plane_index: int
    flat_id: int


@dataclass(frozen=True)
class OrbitalElements:
    """Initial elements of circular orbits, one entry per satellite (radians)."""

    raan: np.ndarray
    anomaly: np.ndarray
    inclination: float
    radius: float
    mean_motion: float
    earth_rotation_rate: float
    epoch: float
    sats_per_plane: int

    def __len__(self) -> int:
        return len(self.raan)

    def satellite_id(self, flat_id: int) -> SatelliteId:
        p, m = divmod(int(flat_id), self.sats_per_plane)
        return SatelliteId(p, m, int(flat_id))


@dataclass(frozen=True)
class GeometrySnapshot:
    slot_index: int
    epoch_time: float
    positions: np.ndarray  # (S, 3) Earth-fixed, metres
    visible_set: np.ndarray  # flat ids, ascending


def build_constellation(cfg: ConstellationConfig) -> OrbitalElements:
    """Lay out a Walker-delta shell.

    Plane ``p`` has RAAN ``360 p / P``; satellite ``m`` of plane ``p`` starts at
    argument of latitude ``360 m / (S/P) + p * phasing`` degrees.
    """
    if cfg.total_satellites % cfg.orbital_planes:
        raise ConfigError("total_satellites must be divisible by orbital_planes")
    n = cfg.sats_per_plane
    plane = np.repeat(np.arange(cfg.orbital_planes), n)
    slot = np.tile(np.arange(n), cfg.orbital_planes)
    raan = np.radians(360.0 * plane / cfg.orbital_planes)
    anomaly = np.radians(360.0 * slot / n + plane * cfg.inter_plane_phasing)
    return OrbitalElements(
        raan=raan,
        anomaly=anomaly,
        inclination=np.radians(cfg.inclination),
        radius=cfg.orbit_radius,
        mean_motion=2.0 * np.pi / cfg.period,
        earth_rotation_rate=cfg.earth_rotation_rate,
        epoch=cfg.epoch,
        sats_per_plane=n,
    )


def propagate(elements: OrbitalElements, t: float) -> np.ndarray:
    """Earth-fixed Cartesian positions (S, 3) at ``t`` seconds after the epoch."""
    if t < 0:
        raise ValueError(f"propagation time must be >= 0, got {t}")
    ta = elements.epoch + t
    u = elements.anomaly + elements.mean_motion * ta
    cos_o, sin_o = np.cos(elements.raan), np.sin(elements.raan)
    cos_u, sin_u = np.cos(u), np.sin(u)
    ci, si = np.cos(elements.inclination), np.sin(elements.inclination)
    x = cos_o * cos_u - sin_o * sin_u * ci
    y = sin_o * cos_u + cos_o * sin_u * ci
    z = sin_u * si
    # inertial -> Earth-fixed: rotate by -omega_E * t about the pole
    th = -elements.earth_rotation_rate * ta
    c, s = np.cos(th), np.sin(th)
    xe = c * x - s * y
    ye = s * x + c * y
    return elements.radius * np.stack([xe, ye, z], axis=-1)


def geodetic_to_ecef(lat, lon, radius: float) -> np.ndarray:
    """Degrees on a sphere of ``radius`` to Cartesian (..., 3)."""
    la, lo = np.radians(lat), np.radians(lon)
    cl = np.cos(la)
    return radius * np.stack([cl * np.cos(lo), cl * np.sin(lo), np.sin(la)], axis=-1)


def subsatellite_point(positions: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Geocentric latitude/longitude (degrees) under each satellite."""
    positions = np.asarray(positions, dtype=float)
    r = np.linalg.norm(positions, axis=-1)
    lat = np.degrees(np.arcsin(positions[..., 2] / r))
    lon = np.degrees(np.arctan2(positions[..., 1], positions[..., 0]))
    return lat, lon


def elevation_angle(sat_position, ground_point, earth_radius: float = 6371e3):
    """Elevation (degrees) of satellite(s) seen from ground point(s).

    ``ground_point`` is ``(lat, lon)`` in degrees on the sphere. Broadcasting
    follows numpy rules over the leading axes of both arguments.
    """
    sat = np.asarray(sat_position, dtype=float)
    if np.any(np.linalg.norm(sat, axis=-1) < earth_radius):
        raise ValueError("satellite position lies below the Earth surface")
    lat, lon = ground_point
    g = geodetic_to_ecef(lat, lon, earth_radius)
    up = g / earth_radius
    los = sat - g
    dist = np.linalg.norm(los, axis=-1)
    sin_el = np.einsum("...k,...k->...", los, up) / dist
    return np.degrees(np.arcsin(np.clip(sin_el, -1.0, 1.0)))


def elevation_matrix(positions: np.ndarray, lat, lon, earth_radius: float) -> np.ndarray:
    """Elevation (degrees), shape (n_sats, n_points)."""
    g = geodetic_to_ecef(np.asarray(lat), np.asarray(lon), earth_radius)
    up = g / earth_radius
    # los.up = p.up - R ; |los|^2 = |p|^2 - 2 p.g + R^2
    pu = positions @ up.T
    p2 = np.einsum("ij,ij->i", positions, positions)[:, None]
    dist = np.sqrt(np.maximum(p2 - 2.0 * earth_radius * pu + earth_radius**2, 0.0))
    sin_el = (pu - earth_radius) / np.where(dist > 0, dist, 1.0)
    return np.degrees(np.arcsin(np.clip(sin_el, -1.0, 1.0)))


def visible_satellites(
    positions: np.ndarray,
    grid,
    elevation_mask: float,
    earth_radius: float = 6371e3,
    service_area: tuple[float, float, float, float] | None = None,
) -> np.ndarray:
    """Flat ids of satellites seen above ``elevation_mask`` from >= 1 cell centre.

    With ``service_area=(lat_min, lat_max, lon_min, lon_max)`` a satellite must
    additionally have its sub-satellite point inside that box.
    """
    positions = np.asarray(positions, dtype=float)
    ids = np.arange(len(positions))
    if service_area is not None:
        lat_min, lat_max, lon_min, lon_max = service_area
        slat, slon = subsatellite_point(positions)
        inside = (slat >= lat_min) & (slat <= lat_max) & (slon >= lon_min) & (slon <= lon_max)
        ids = ids[inside]
    if len(ids) == 0:
        return ids
    lat, lon = grid.center_lat, grid.center_lon
    el = elevation_matrix(positions[ids], lat, lon, earth_radius)
    return ids[(el >= elevation_mask).any(axis=1)]


def snapshot(
    elements: OrbitalElements,
    slot_index: int,
    slot_duration: float,
    grid,
    elevation_mask: float,
    earth_radius: float,
    service_area=None,
) -> GeometrySnapshot:
    t = slot_index * slot_duration
    pos = propagate(elements, t)
    vis = visible_satellites(pos, grid, elevation_mask, earth_radius, service_area)
    return GeometrySnapshot(slot_index, t, pos, vis)


def cell_points(cell_lat, cell_lon, half_res: float, earth_radius: float) -> np.ndarray:
    """Centre and four corners of each cell, Cartesian, shape (n, 5, 3)."""
    lat = np.asarray(cell_lat, dtype=float)[:, None]
    lon = np.asarray(cell_lon, dtype=float)[:, None]
    dlat = np.array([0.0, half_res, half_res, -half_res, -half_res])
    dlon = np.array([0.0, -half_res, half_res, -half_res, half_res])
    return geodetic_to_ecef(lat + dlat, lon + dlon, earth_radius)


def max_distance_to_cell(sat_position, points: np.ndarray) -> np.ndarray:
    """Worst-case slant range from satellite(s) to cell(s).

    ``points`` holds each cell's centre and corners, shape (..., 5, 3) as made
    by :func:`cell_points`; the result is the max over those points.
    """
    sat = np.asarray(sat_position, dtype=float)
    d = np.linalg.norm(points - sat[..., None, :], axis=-1)
    return d.max(axis=-1)


def write_ephemeris_csv(path: str | Path, snapshots) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["slot", "flat_id", "x_m", "y_m", "z_m"])
        for snap in snapshots:
            for i, (x, y, z) in enumerate(snap.positions):
                w.writerow([snap.slot_index, i, f"{x:.3f}", f"{y:.3f}", f"{z:.3f}"])
