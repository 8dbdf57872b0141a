"""Environment-aware channel construction from scene geometry.

Paths are the line of sight plus single specular reflections off vertical
building facades.  Reflection points come from the image method: mirror
the BS across the facade plane, intersect the mirror-to-user segment with
the plane, and accept the point only when it lies inside the facade
rectangle; Fermat's principle makes that the unique stationary path, which
an independent grid search over the facade (no mirror math) can confirm.

Channels are narrowband over a half-wavelength ULA aligned with the x
axis: h[n] = sum_l g_l * exp(-j*pi*n*sin(aod_l)), with per-path complex
gain (lambda / (4*pi*len)) * Gamma^bounces * exp(-j*2*pi*len/lambda).

Two data-driven baselines share the interface: nearest-neighbor lookup in
a channel-knowledge map and an affine per-scatterer regression.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from importlib import resources
from typing import Optional, Sequence

import numpy as np

from .configs import Box, ChannelSceneConfig, ScenarioConfig, scenario_from_dict

SPEED_OF_LIGHT = 299792458.0

Vec3 = np.ndarray


class DegenerateGeometry(ValueError):
    """Endpoint on the reflecting plane: the image method is undefined."""


@dataclass(frozen=True)
class Facade:
    """One vertical rectangle of a building, with its outward normal.

    axis is the coordinate the plane fixes ("x" or "y"); u is the other
    horizontal coordinate, spanning urange; z spans [0, height].
    """

    facade_id: str
    building: int
    axis: str
    offset: float
    normal: tuple[float, float, float]
    urange: tuple[float, float]
    height: float

    def point_on_plane(self) -> np.ndarray:
        if self.axis == "x":
            return np.array([self.offset, self.urange[0], 0.0])
        return np.array([self.urange[0], self.offset, 0.0])

    def uaxis(self) -> np.ndarray:
        """In-plane horizontal unit tangent."""
        if self.axis == "x":
            return np.array([0.0, 1.0, 0.0])
        return np.array([1.0, 0.0, 0.0])

    def embed(self, u: float, z: float) -> np.ndarray:
        """Map facade coordinates (u, z) to a 3D point."""
        if self.axis == "x":
            return np.array([self.offset, u, z])
        return np.array([u, self.offset, z])

    def coords(self, p: Sequence[float]) -> tuple[float, float]:
        """(u, z) facade coordinates of a 3D point assumed on the plane."""
        if self.axis == "x":
            return float(p[1]), float(p[2])
        return float(p[0]), float(p[2])


def enumerate_facades(cfg: ChannelSceneConfig) -> tuple[Facade, ...]:
    """All side facades, building by building, in a fixed face order."""
    out = []
    for i, b in enumerate(cfg.buildings):
        out.append(Facade(f"b{i}:xmin", i, "x", b.x[0], (-1.0, 0.0, 0.0),
                          b.y, b.height))
        out.append(Facade(f"b{i}:xmax", i, "x", b.x[1], (1.0, 0.0, 0.0),
                          b.y, b.height))
        out.append(Facade(f"b{i}:ymin", i, "y", b.y[0], (0.0, -1.0, 0.0),
                          b.x, b.height))
        out.append(Facade(f"b{i}:ymax", i, "y", b.y[1], (0.0, 1.0, 0.0),
                          b.x, b.height))
    return tuple(out)


def _signed_distance(p: Sequence[float], facade: Facade) -> float:
    n = np.asarray(facade.normal)
    return float(np.dot(np.asarray(p, dtype=float) - facade.point_on_plane(), n))


_ON_PLANE_TOL = 1e-12


def mirror_reflection_point(bs: Sequence[float], user: Sequence[float],
                            facade: Facade) -> Optional[np.ndarray]:
    """Specular reflection point on a facade by the image method.

    Returns None when no single-bounce path off this facade exists: either
    endpoint strictly behind the plane, or the stationary point outside the
    facade rectangle.  An endpoint lying on the plane itself is degenerate
    and raises instead of guessing.
    """
    bs = np.asarray(bs, dtype=float)
    user = np.asarray(user, dtype=float)
    d_bs = _signed_distance(bs, facade)
    d_user = _signed_distance(user, facade)
    if abs(d_bs) < _ON_PLANE_TOL or abs(d_user) < _ON_PLANE_TOL:
        raise DegenerateGeometry(
            f"endpoint on facade plane {facade.facade_id}")
    if d_bs < 0.0 or d_user < 0.0:
        return None
    n = np.asarray(facade.normal)
    mirrored = bs - 2.0 * d_bs * n
    # Segment mirrored->user crosses the plane at t in (0, 1).
    t = d_bs / (d_bs + d_user)
    q = mirrored + t * (user - mirrored)
    u, z = facade.coords(q)
    if not (facade.urange[0] <= u <= facade.urange[1]):
        return None
    if not (0.0 <= z <= facade.height):
        return None
    return q


def reflection_residual(bs: Sequence[float], user: Sequence[float],
                        q: Sequence[float], facade: Facade) -> float:
    """Law-of-reflection defect at q: ||reflect(incoming) - outgoing||.

    Zero (to rounding) exactly when incidence and departure angles match
    about the facade normal, i.e. when q is a true specular point.
    """
    bs = np.asarray(bs, dtype=float)
    user = np.asarray(user, dtype=float)
    q = np.asarray(q, dtype=float)
    n = np.asarray(facade.normal)
    d_in = q - bs
    d_out = user - q
    d_in = d_in / np.linalg.norm(d_in)
    d_out = d_out / np.linalg.norm(d_out)
    reflected = d_in - 2.0 * np.dot(d_in, n) * n
    return float(np.linalg.norm(reflected - d_out))


def is_blocked(p: Sequence[float], q: Sequence[float],
               buildings: Sequence[Box]) -> bool:
    """True when the open segment p->q passes through any box interior.

    Touching a face, edge, or vertex does not block; the test is strict, so
    a reflection leg ending on its own facade is never self-blocked.
    """
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    d = q - p
    for b in buildings:
        lo = np.array([b.x[0], b.y[0], 0.0])
        hi = np.array([b.x[1], b.y[1], b.height])
        t0, t1 = 0.0, 1.0
        hit = True
        for ax in range(3):
            if abs(d[ax]) < 1e-15:
                if not (lo[ax] < p[ax] < hi[ax]):
                    hit = False
                    break
                continue
            ta = (lo[ax] - p[ax]) / d[ax]
            tb = (hi[ax] - p[ax]) / d[ax]
            if ta > tb:
                ta, tb = tb, ta
            t0 = max(t0, ta)
            t1 = min(t1, tb)
            if t0 >= t1:
                hit = False
                break
        if hit and t1 - t0 > 1e-12 and t1 > 1e-12 and t0 < 1.0 - 1e-12:
            return True
    return False


# ---------------------------------------------------------------------------
# Path tracing


@dataclass(frozen=True)
class Path:
    """One propagation path from BS to user."""

    kind: str                      # "los" or "reflection"
    facade_id: Optional[str]
    length_m: float
    delay_s: float
    gain: complex
    aod_rad: float                 # departure azimuth, arcsin of x-component
    aoa_rad: float                 # arrival azimuth at the user, same convention
    points: tuple[tuple[float, float, float], ...]

    @property
    def slot(self) -> str:
        return self.facade_id if self.facade_id is not None else "los"


def classify_scatterers(cfg: ChannelSceneConfig,
                        user: Sequence[float]) -> dict[str, str]:
    """Status of every facade for a given user.

    "active"          single-bounce specular path exists and is clear
    "behind_plane"    BS or user on the back side of the facade plane
    "outside_extent"  stationary point misses the facade rectangle
    "blocked"         a leg of the path is occluded by some building
    """
    out: dict[str, str] = {}
    for facade in enumerate_facades(cfg):
        try:
            q = mirror_reflection_point(cfg.bs_pos, user, facade)
        except DegenerateGeometry:
            out[facade.facade_id] = "behind_plane"
            continue
        if q is None:
            d_bs = _signed_distance(cfg.bs_pos, facade)
            d_user = _signed_distance(user, facade)
            out[facade.facade_id] = ("behind_plane"
                                     if d_bs < 0 or d_user < 0
                                     else "outside_extent")
        elif (is_blocked(cfg.bs_pos, q, cfg.buildings)
              or is_blocked(q, user, cfg.buildings)):
            out[facade.facade_id] = "blocked"
        else:
            out[facade.facade_id] = "active"
    return out


def _direction_angles(a: np.ndarray, b: np.ndarray) -> float:
    """arcsin of the x-component of the unit vector a->b (ULA along x)."""
    d = b - a
    d = d / np.linalg.norm(d)
    return float(np.arcsin(np.clip(d[0], -1.0, 1.0)))


def _path_gain(cfg: ChannelSceneConfig, length: float, bounces: int) -> complex:
    lam = SPEED_OF_LIGHT / cfg.carrier_hz
    amp = (lam / (4.0 * math.pi * length)) * (cfg.reflection_coeff ** bounces)
    return amp * np.exp(-2j * math.pi * length / lam)


def trace_paths(cfg: ChannelSceneConfig, user: Sequence[float]) -> list[Path]:
    """LoS plus all clear single-reflection paths, in facade order."""
    bs = np.asarray(cfg.bs_pos, dtype=float)
    user = np.asarray(user, dtype=float)
    paths: list[Path] = []

    if not is_blocked(bs, user, cfg.buildings):
        length = float(np.linalg.norm(user - bs))
        paths.append(Path(
            kind="los", facade_id=None, length_m=length,
            delay_s=length / SPEED_OF_LIGHT,
            gain=_path_gain(cfg, length, 0),
            aod_rad=_direction_angles(bs, user),
            aoa_rad=_direction_angles(user, bs),
            points=(tuple(bs), tuple(user))))

    for facade in enumerate_facades(cfg):
        try:
            q = mirror_reflection_point(bs, user, facade)
        except DegenerateGeometry:
            # Grazing incidence (endpoint on the plane): no specular energy.
            continue
        if q is None:
            continue
        if is_blocked(bs, q, cfg.buildings) or is_blocked(q, user, cfg.buildings):
            continue
        length = float(np.linalg.norm(q - bs) + np.linalg.norm(user - q))
        paths.append(Path(
            kind="reflection", facade_id=facade.facade_id, length_m=length,
            delay_s=length / SPEED_OF_LIGHT,
            gain=_path_gain(cfg, length, 1),
            aod_rad=_direction_angles(bs, q),
            aoa_rad=_direction_angles(user, q),
            points=(tuple(bs), tuple(float(v) for v in q), tuple(user))))
    return paths


def synthesize_channel(cfg: ChannelSceneConfig,
                       paths: Sequence[Path]) -> np.ndarray:
    """Narrowband ULA response: h[n] = sum_l g_l exp(-j pi n sin(aod_l))."""
    h = np.zeros(cfg.num_antennas, dtype=complex)
    n = np.arange(cfg.num_antennas)
    for p in paths:
        h += p.gain * np.exp(-1j * math.pi * n * math.sin(p.aod_rad))
    return h


NMSE_FLOOR_DB = -150.0


def nmse_db(h_true: np.ndarray, h_pred: np.ndarray) -> float:
    """10 log10(||h_t - h_p||^2 / ||h_t||^2), floored at -150 dB."""
    h_true = np.asarray(h_true)
    h_pred = np.asarray(h_pred)
    num = float(np.sum(np.abs(h_true - h_pred) ** 2))
    den = float(np.sum(np.abs(h_true) ** 2))
    if num == 0.0:
        return NMSE_FLOOR_DB
    if den == 0.0:
        return math.inf
    return max(NMSE_FLOOR_DB, 10.0 * math.log10(num / den))


# ---------------------------------------------------------------------------
# Geometry-driven predictor (two stages, both overridable for diagnostics)


def geometry_predictor(cfg: ChannelSceneConfig, user: Sequence[float],
                       stage1_labels: Optional[Sequence[str]] = None,
                       stage2_offset: float = 0.0) -> np.ndarray:
    """Predict the channel from scene geometry alone.

    Stage 1 decides which facades scatter (and whether LoS exists); stage 2
    places each reflection point and synthesizes the channel.  The
    diagnostic knobs expose each stage's sensitivity: stage1_labels
    overrides the active-path list with slot names ("los" or facade ids),
    and stage2_offset slides every reflection point along the facade's
    horizontal tangent by that many meters (clamped to the facade), leaving
    stage 1 intact.  Defaults reproduce trace_paths exactly.
    """
    bs = np.asarray(cfg.bs_pos, dtype=float)
    user = np.asarray(user, dtype=float)
    facades = {f.facade_id: f for f in enumerate_facades(cfg)}

    if stage1_labels is None:
        slots = [p.slot for p in trace_paths(cfg, user)]
    else:
        slots = list(stage1_labels)

    paths: list[Path] = []
    for slot in slots:
        if slot == "los":
            length = float(np.linalg.norm(user - bs))
            paths.append(Path(
                kind="los", facade_id=None, length_m=length,
                delay_s=length / SPEED_OF_LIGHT,
                gain=_path_gain(cfg, length, 0),
                aod_rad=_direction_angles(bs, user),
                aoa_rad=_direction_angles(user, bs),
                points=(tuple(bs), tuple(user))))
            continue
        facade = facades[slot]
        try:
            q = mirror_reflection_point(bs, user, facade)
        except DegenerateGeometry:
            continue
        if q is None:
            continue
        if stage2_offset != 0.0:
            u, z = facade.coords(q)
            u = float(np.clip(u + stage2_offset,
                              facade.urange[0], facade.urange[1]))
            q = facade.embed(u, z)
        length = float(np.linalg.norm(q - bs) + np.linalg.norm(user - q))
        paths.append(Path(
            kind="reflection", facade_id=slot, length_m=length,
            delay_s=length / SPEED_OF_LIGHT,
            gain=_path_gain(cfg, length, 1),
            aod_rad=_direction_angles(bs, q),
            aoa_rad=_direction_angles(user, q),
            points=(tuple(bs), tuple(float(v) for v in q), tuple(user))))
    return synthesize_channel(cfg, paths)


# ---------------------------------------------------------------------------
# Channel-knowledge-map baselines


@dataclass(frozen=True)
class CkmDataset:
    """Sampled channel knowledge: user positions, true channels, and the
    per-sample path decomposition keyed by slot."""

    positions: np.ndarray            # [N, 3]
    channels: np.ndarray             # [N, num_antennas] complex
    paths: tuple[dict[str, Path], ...]


def build_ckm(cfg: ChannelSceneConfig,
              positions: Sequence[Sequence[float]]) -> CkmDataset:
    pos = np.asarray(positions, dtype=float)
    chans = []
    path_rows = []
    for p in pos:
        paths = trace_paths(cfg, p)
        chans.append(synthesize_channel(cfg, paths))
        path_rows.append({pp.slot: pp for pp in paths})
    return CkmDataset(positions=pos, channels=np.asarray(chans),
                      paths=tuple(path_rows))


def nn_ckm_predict(ckm: CkmDataset, query: Sequence[float]) -> np.ndarray:
    """Channel of the nearest stored position; ties go to the lower index."""
    if len(ckm.positions) == 0:
        raise ValueError("empty channel map")
    q = np.asarray(query, dtype=float)
    d2 = np.sum((ckm.positions - q) ** 2, axis=1)
    return ckm.channels[int(np.argmin(d2))].copy()


@dataclass(frozen=True)
class LinearGcp:
    """Affine-in-position regression of per-slot path parameters.

    For each slot the presence indicator, sin(aod), log amplitude, and the
    cosine/sine of the gain phase are each fit as w . [x, y, 1] by least
    squares.  Slots predicted absent contribute nothing.
    """

    num_antennas: int
    slots: tuple[str, ...]
    weights: dict[str, np.ndarray]   # [5 targets, 3] per slot


def fit_linear_gcp(cfg: ChannelSceneConfig, ckm: CkmDataset) -> LinearGcp:
    slots = sorted({s for row in ckm.paths for s in row})
    design = np.column_stack([ckm.positions[:, 0], ckm.positions[:, 1],
                              np.ones(len(ckm.positions))])
    weights: dict[str, np.ndarray] = {}
    for slot in slots:
        present = np.array([slot in row for row in ckm.paths])
        w = np.zeros((5, 3))
        # Under 3 samples the affine fits are rank-deficient; leave the slot
        # all-zero so prediction never invents a path from it.
        if present.sum() >= 3:
            w[0] = np.linalg.lstsq(design, present.astype(float), rcond=None)[0]
            sub = design[present]
            gains = np.array([row[slot].gain for row, keep
                              in zip(ckm.paths, present) if keep])
            sin_aod = np.array([math.sin(row[slot].aod_rad) for row, keep
                                in zip(ckm.paths, present) if keep])
            targets = [sin_aod,
                       np.log(np.abs(gains)),
                       np.cos(np.angle(gains)),
                       np.sin(np.angle(gains))]
            for k, tgt in enumerate(targets, start=1):
                w[k] = np.linalg.lstsq(sub, tgt, rcond=None)[0]
        weights[slot] = w
    return LinearGcp(num_antennas=cfg.num_antennas, slots=tuple(slots),
                     weights=weights)


def linear_gcp_predict(model: LinearGcp, query: Sequence[float]) -> np.ndarray:
    x = np.array([float(query[0]), float(query[1]), 1.0])
    h = np.zeros(model.num_antennas, dtype=complex)
    n = np.arange(model.num_antennas)
    for slot in model.slots:
        w = model.weights[slot]
        presence = float(w[0] @ x)
        if presence < 0.5:
            continue
        sin_aod = float(np.clip(w[1] @ x, -1.0, 1.0))
        amp = math.exp(float(w[2] @ x))
        phase = math.atan2(float(w[4] @ x), float(w[3] @ x))
        h += amp * np.exp(1j * phase) * np.exp(-1j * math.pi * n * sin_aod)
    return h


# ---------------------------------------------------------------------------
# Independent check: grid search over the facade, no mirror math


def grid_search_reflection_oracle(bs: Sequence[float], user: Sequence[float],
                                  facade: Facade,
                                  resolution: float = 0.01
                                  ) -> Optional[np.ndarray]:
    """Minimize |bs-q| + |q-user| over a facade grid.

    Pure path-length search at the given resolution (a coarse sweep plus a
    fine window around its argmin; the objective is convex on the plane, so
    the refinement cannot change basins).  Returns the minimizing grid
    point, or None when the minimum sits on the facade boundary (no
    interior stationary point) or an endpoint is not strictly in front.
    """
    bs = np.asarray(bs, dtype=float)
    user = np.asarray(user, dtype=float)
    if _signed_distance(bs, facade) <= 0 or _signed_distance(user, facade) <= 0:
        return None

    u0, u1 = facade.urange
    z0, z1 = 0.0, facade.height

    def total_length(us: np.ndarray, zs: np.ndarray) -> np.ndarray:
        if facade.axis == "x":
            pts = np.stack([np.full(us.size, facade.offset),
                            us, zs], axis=1)
        else:
            pts = np.stack([us, np.full(us.size, facade.offset),
                            zs], axis=1)
        return (np.linalg.norm(pts - bs, axis=1)
                + np.linalg.norm(pts - user, axis=1))

    def sweep(ulo, uhi, zlo, zhi, step):
        us = np.arange(ulo, uhi + step / 2, step)
        zs = np.arange(zlo, zhi + step / 2, step)
        uu, zz = np.meshgrid(us, zs, indexing="ij")
        lengths = total_length(uu.ravel(), zz.ravel()).reshape(uu.shape)
        i, j = np.unravel_index(np.argmin(lengths), lengths.shape)
        return float(us[i]), float(zs[j])

    coarse = max(resolution, min(u1 - u0, z1 - z0, 1.0) / 4)
    ub, zb = sweep(u0, u1, z0, z1, coarse)
    ub, zb = sweep(max(u0, ub - 2 * coarse), min(u1, ub + 2 * coarse),
                   max(z0, zb - 2 * coarse), min(z1, zb + 2 * coarse),
                   resolution)

    if (ub - u0 < resolution / 2 or u1 - ub < resolution / 2
            or zb - z0 < resolution / 2 or z1 - zb < resolution / 2):
        return None
    return facade.embed(ub, zb)


# ---------------------------------------------------------------------------
# Bundled scenes


def load_fixture_scene(index: int) -> ScenarioConfig:
    """One of the four bundled channel scenes (1-based index)."""
    if index not in (1, 2, 3, 4):
        raise ValueError("fixture scenes are numbered 1 to 4")
    text = (resources.files("autocomm.data.scenes")
            .joinpath(f"scene{index}.json").read_text(encoding="utf-8"))
    return scenario_from_dict(json.loads(text))
