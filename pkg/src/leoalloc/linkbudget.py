"""Worst-case link budget, nominal rates and the handover penalty."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import ConfigError, LinkConfig, TimingConfig


@dataclass(frozen=True)
class HandoverModel:
    handover_cost: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.handover_cost < 1.0:
            raise ConfigError("handover_cost must lie in [0, 1)")


@dataclass(frozen=True)
class RateTable:
    """Sparse per-slot rate table over (satellite, populated cell) pairs.

    Entries exist for pairs linkable at the slot start; ``rho_min`` is zero for
    pairs that lose the link by the slot end.
    """

    slot_index: int
    sat: np.ndarray  # flat satellite ids
    cell: np.ndarray  # cell ids
    distance: np.ndarray  # d_k, metres
    rho: np.ndarray  # rate at slot start, bit/s
    rho_next: np.ndarray  # rate at slot end, bit/s
    visible_sats: np.ndarray = None

    @property
    def rho_min(self) -> np.ndarray:
        return min_rate(self.rho, self.rho_next)

    def __len__(self) -> int:
        return len(self.sat)

    def usable(self) -> RateTable:
        """Only the pairs with a positive slot-minimum rate."""
        keep = self.rho_min > 0
        return RateTable(
            self.slot_index, self.sat[keep], self.cell[keep], self.distance[keep],
            self.rho[keep], self.rho_next[keep], self.visible_sats,
        )

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["slot", "sat_id", "cell_id", "d_m", "rho_bps", "rho_min_bps"])
            for s, c, d, r, rm in zip(self.sat, self.cell, self.distance, self.rho, self.rho_min):
                w.writerow([self.slot_index, int(s), int(c), f"{d:.3f}", f"{r:.6g}", f"{rm:.6g}"])


def path_loss(distance, cfg: LinkConfig):
    """Linear attenuation: free-space loss times atmospheric and pointing losses."""
    d = np.asarray(distance, dtype=float)
    if np.any(d <= 0):
        raise ValueError("distance must be positive")
    return (4.0 * np.pi * d * cfg.carrier_frequency) ** 2 / cfg.speed_of_light**2 \
        * cfg.atmospheric_loss * cfg.pointing_loss


def snr(distance, cfg: LinkConfig):
    return cfg.tx_power * cfg.sat_antenna_gain * cfg.user_antenna_gain / (
        path_loss(distance, cfg) * cfg.noise_power
    )


def nominal_rate(distance, cfg: LinkConfig):
    """Shannon rate (bit/s) at the worst-case distance."""
    return cfg.bandwidth * np.log2(1.0 + snr(distance, cfg))


def min_rate(rho_start, rho_end):
    return np.minimum(rho_start, rho_end)


def per_user_throughput(frames, rho_min, users, timing: TimingConfig):
    """Per-user rate when ``frames`` frames are shared evenly by ``users`` users."""
    users = np.asarray(users, dtype=float)
    if np.any(users <= 0):
        raise ValueError("per-user throughput is undefined for cells without users")
    return timing.frame_duration / (timing.slot_duration * users) * np.asarray(frames) * rho_min


def handover_penalty(prev_frames, model: HandoverModel):
    """``h_cost`` for pairs not served in the previous slot, 0 otherwise."""
    prev = np.asarray(prev_frames)
    return np.where(prev > 0, 0.0, model.handover_cost)
