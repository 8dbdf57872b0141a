"""Link budget, SNR map generation, per-robot rates, and QoS clamping.

Every scheduler consumes the same SnrMap: a [num_robots x num_rbs] matrix of
linear SNR values derived from uniformly placed robots, a log-distance path
loss, and an optional per-RB Rayleigh fading term.  Rates use the Shannon
capacity of each RB at equal bandwidth B / num_rbs.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .configs import SchedulingConfig
from .rng import RngStream


@dataclass(frozen=True)
class RadioParams:
    """Link budget defaults sized so SNRs span roughly 0-40 dB over a 100 m
    cell, keeping scheduling instances non-degenerate."""

    tx_power_dbm: float = 23.0
    noise_dbm_per_rb: float = -101.0
    pathloss_ref_db: float = 40.0
    pathloss_exponent: float = 3.0
    fading: str = "none"  # "none" | "rayleigh"

    def __post_init__(self):
        if self.pathloss_exponent < 2:
            raise ValueError("pathloss_exponent must be >= 2")
        if not math.isfinite(self.noise_dbm_per_rb):
            raise ValueError("noise_dbm_per_rb must be finite")
        if self.fading not in ("none", "rayleigh"):
            raise ValueError("fading must be 'none' or 'rayleigh'")


@dataclass(frozen=True)
class SnrMap:
    """Per-robot, per-RB linear SNR plus placement and buffer state.

    Robot ids are 1-based; row ``i`` holds robot ``i + 1``.
    """

    values: np.ndarray                # [num_robots, num_rbs], linear SNR
    robot_positions: np.ndarray       # [num_robots, 2], meters
    buffer_nonempty: np.ndarray       # [num_robots], bool

    def __post_init__(self):
        if not np.all(np.isfinite(self.values)) or np.any(self.values <= 0):
            raise ValueError("SNR values must be positive and finite")
        if self.values.shape[0] != len(self.robot_positions) or \
                self.values.shape[0] != len(self.buffer_nonempty):
            raise ValueError("SnrMap dimensions disagree")

    @property
    def num_robots(self) -> int:
        return self.values.shape[0]

    @property
    def num_rbs(self) -> int:
        return self.values.shape[1]

    def eligible_ids(self) -> list[int]:
        """1-based ids of robots with a non-empty buffer, ascending."""
        return [i + 1 for i in range(self.num_robots) if self.buffer_nonempty[i]]


def path_loss_db(distance_m: float, params: RadioParams) -> float:
    """Log-distance path loss: ref loss at 1 m plus 10*n*log10(d)."""
    if distance_m <= 0:
        raise ValueError("distance_m must be > 0")
    return params.pathloss_ref_db + 10.0 * params.pathloss_exponent * math.log10(distance_m)


def generate_snr_map(cfg: SchedulingConfig, params: RadioParams, rng: RngStream) -> SnrMap:
    """Draw robot placement, buffers, and the per-RB linear SNR matrix.

    Positions are uniform over the disk of cfg.cell_radius_m; with
    fading="rayleigh" each (robot, RB) gets an i.i.d. unit-mean power fade.
    """
    n, m = cfg.num_robots, cfg.num_rbs
    radii = cfg.cell_radius_m * np.sqrt(rng.random(n))
    angles = rng.uniform(0.0, 2.0 * math.pi, n)
    positions = np.column_stack([radii * np.cos(angles), radii * np.sin(angles)])

    # Robots at the exact center would have an undefined path loss; the
    # draw is measure-zero but clamp to 1 m anyway.
    distances = np.maximum(np.hypot(positions[:, 0], positions[:, 1]), 1.0)
    pl_db = params.pathloss_ref_db + 10.0 * params.pathloss_exponent * np.log10(distances)
    snr_db = params.tx_power_dbm - pl_db - params.noise_dbm_per_rb
    snr = np.power(10.0, snr_db / 10.0)[:, None] * np.ones((1, m))
    if params.fading == "rayleigh":
        snr = snr * rng.exponential(1.0, (n, m))

    buffers = rng.random(n) < cfg.buffer_occupancy_prob
    return SnrMap(values=snr, robot_positions=positions, buffer_nonempty=buffers)


def rb_rate_matrix(snr: SnrMap, cfg: SchedulingConfig) -> np.ndarray:
    """Per-(robot, RB) Shannon rate in bits/s at bandwidth B / num_rbs."""
    rb_bw = cfg.bandwidth_hz / cfg.num_rbs
    return rb_bw * np.log2(1.0 + snr.values)


def robot_rate(alloc: Sequence[int], snr: SnrMap, cfg: SchedulingConfig, robot: int) -> float:
    """Rate of one robot under an allocation; 0 if its buffer is empty.

    ``alloc`` is the RB-owner vector (1-based robot ids).  Raises on an
    unknown robot id.
    """
    if not 1 <= robot <= snr.num_robots:
        raise ValueError(f"unknown robot id {robot}")
    if not snr.buffer_nonempty[robot - 1]:
        return 0.0
    rates = rb_rate_matrix(snr, cfg)
    return float(sum(rates[robot - 1, b] for b, owner in enumerate(alloc) if owner == robot))


def rate_vector(alloc: Sequence[int], snr: SnrMap, cfg: SchedulingConfig) -> np.ndarray:
    """Per-robot rates (bits/s) under an allocation; empty buffers give 0."""
    rates = rb_rate_matrix(snr, cfg)
    out = np.zeros(snr.num_robots)
    for b, owner in enumerate(alloc):
        if 1 <= owner <= snr.num_robots:
            out[owner - 1] += rates[owner - 1, b]
    out[~snr.buffer_nonempty] = 0.0
    return out


def clamp_qos(rates_bps: np.ndarray, min_rate_bps: float) -> np.ndarray:
    """Zero every rate below the QoS threshold; others pass through."""
    rates = np.asarray(rates_bps, dtype=float)
    return np.where(rates < min_rate_bps, 0.0, rates)


# ---------------------------------------------------------------------------
# CSV export/import so external schedulers can consume identical inputs.

SNR_CSV_HEADER = ["robot", "rb", "snr_linear"]


def snr_map_to_csv(snr: SnrMap) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SNR_CSV_HEADER)
    for i in range(snr.num_robots):
        for b in range(snr.num_rbs):
            writer.writerow([i + 1, b + 1, repr(float(snr.values[i, b]))])
    return buf.getvalue()


def snr_map_from_csv(text: str,
                     robot_positions: Optional[np.ndarray] = None,
                     buffer_nonempty: Optional[np.ndarray] = None) -> SnrMap:
    """Rebuild an SnrMap from the CSV export.

    Positions/buffers are not part of the CSV; absent, positions default to
    the origin and all buffers to non-empty.
    """
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    if header != SNR_CSV_HEADER:
        raise ValueError(f"unexpected CSV header {header!r}")
    entries = [(int(r), int(b), float(v)) for r, b, v in reader]
    n = max(e[0] for e in entries)
    m = max(e[1] for e in entries)
    values = np.zeros((n, m))
    for r, b, v in entries:
        values[r - 1, b - 1] = v
    if robot_positions is None:
        robot_positions = np.zeros((n, 2))
    if buffer_nonempty is None:
        buffer_nonempty = np.ones(n, dtype=bool)
    return SnrMap(values=values, robot_positions=robot_positions,
                  buffer_nonempty=np.asarray(buffer_nonempty, dtype=bool))
