"""Deterministic multipath oracle: line of sight plus single-bounce image-method
reflections off vertical building facades.

Each path carries an amplitude gain from free-space spreading over the
unfolded path length (minus a fixed loss per bounce), a carrier phase set
by its delay, and the zenith/azimuth angles at which it leaves the
transmitter.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .ckm_store import Dataset, encode_triple
from .scene import Point3, Scene, as_point, los_visible

C = 299_792_458.0
TWO_PI = 2.0 * math.pi


class Path(NamedTuple):
    gain_db: float
    phase_rad: float
    delay_s: float
    zenith_rad: float
    azimuth_rad: float
    bounces: int = 0


@dataclass(frozen=True)
class PathSet:
    tx: Point3
    rx: Point3
    paths: tuple = ()

    def __len__(self):
        return len(self.paths)

    def __iter__(self):
        return iter(self.paths)


@dataclass(frozen=True)
class OracleConfig:
    max_reflections: int = 1
    reflection_loss_db: float = 6.0
    noise_floor_dbm: float = -100.0
    tx_power_dbm: float = 30.0

    def __post_init__(self):
        if self.max_reflections not in (0, 1):
            raise ValueError("max_reflections must be 0 or 1")
        if self.reflection_loss_db < 0:
            raise ValueError("reflection_loss_db must be >= 0")


def free_space_gain_db(d, f):
    """Friis gain ``-20 log10(4 pi d f / c)`` in dB."""
    d_arr = np.asarray(d, dtype=np.float64)
    f_arr = np.asarray(f, dtype=np.float64)
    if np.any(~(d_arr > 0)) or np.any(~(f_arr > 0)):
        raise ValueError("distance and frequency must be positive")
    g = -20.0 * np.log10(4.0 * np.pi * d_arr * f_arr / C)
    return float(g) if g.ndim == 0 else g


def _fsg(d: float, f: float) -> float:
    return -20.0 * math.log10(4.0 * math.pi * d * f / C)


def _departure_angles(dx: float, dy: float, dz: float) -> tuple:
    r = math.sqrt(dx * dx + dy * dy + dz * dz)
    theta = math.acos(max(-1.0, min(1.0, dz / r)))
    phi = math.atan2(dy, dx)
    if phi <= -math.pi:
        phi = math.pi
    return theta, phi


def _make_path(length: float, first_leg: tuple, bounces: int, scene: Scene,
               cfg: OracleConfig) -> Path:
    delay = length / C
    gain = _fsg(length, scene.carrier_hz) - bounces * cfg.reflection_loss_db
    phase = (-TWO_PI * scene.carrier_hz * delay) % TWO_PI
    if phase >= TWO_PI:
        phase = 0.0
    theta, phi = _departure_angles(*first_leg)
    return Path(gain, phase, delay, theta, phi, bounces)


def _facades(box):
    """Vertical faces as (axis, plane coordinate, outward sign, other-axis span)."""
    lo, hi = box.min_corner, box.max_corner
    return (
        (0, lo.x, -1.0, lo.y, hi.y),
        (0, hi.x, 1.0, lo.y, hi.y),
        (1, lo.y, -1.0, lo.x, hi.x),
        (1, hi.y, 1.0, lo.x, hi.x),
    )


def specular_point(tx: Point3, rx: Point3, axis: int, plane: float) -> tuple:
    """Image-method reflection point on the vertical plane ``x|y = plane``.

    Returns ``(point, image_of_tx)``; both nodes must be on the same side.
    """
    t = list(tx)
    t[axis] = 2.0 * plane - t[axis]
    image = Point3(*t)
    r_ax, i_ax = rx[axis], image[axis]
    s = (plane - i_ax) / (r_ax - i_ax)
    p = [image[c] + s * (rx[c] - image[c]) for c in range(3)]
    p[axis] = plane
    return Point3(*p), image


def trace_paths(scene: Scene, tx, rx, cfg: Optional[OracleConfig] = None) -> PathSet:
    """All detectable LoS and single-bounce paths from ``tx`` to ``rx``,
    strongest first."""
    cfg = cfg or OracleConfig()
    tx = as_point(tx)
    rx = as_point(rx)
    if tx == rx:
        raise ValueError("tx and rx coincide")
    if not (scene.in_bounds(tx) and scene.in_bounds(rx)):
        raise ValueError(f"link {tx} -> {rx} leaves the scene bounds")

    paths = []
    if los_visible(scene, tx, rx):
        d = rx - tx
        paths.append(_make_path(d.norm(), (d.x, d.y, d.z), 0, scene, cfg))

    if cfg.max_reflections >= 1:
        for box in scene.buildings:
            h = box.height
            for axis, plane, sign, lo, hi in _facades(box):
                if (tx[axis] - plane) * sign <= 0.0 or (rx[axis] - plane) * sign <= 0.0:
                    continue
                p, image = specular_point(tx, rx, axis, plane)
                other = p[1 - axis]
                if not (lo <= other <= hi and 0.0 <= p.z <= h):
                    continue
                if not (los_visible(scene, tx, p) and los_visible(scene, p, rx)):
                    continue
                length = (rx - image).norm()
                leg = p - tx
                paths.append(_make_path(length, (leg.x, leg.y, leg.z), 1, scene, cfg))

    floor = cfg.noise_floor_dbm - cfg.tx_power_dbm
    kept = [p for p in paths if p.gain_db >= floor]
    kept.sort(key=lambda p: -p.gain_db)
    return PathSet(tx, rx, tuple(kept))


def narrowband_gain_db(ps, f: float) -> float:
    """Power gain (dB) of the coherent path sum at frequency ``f``.

    Returns ``-inf`` for an empty path set or when the paths cancel to within
    numerical noise.
    """
    paths = ps.paths if isinstance(ps, PathSet) else ps
    if not paths:
        return -math.inf
    re = im = mag = 0.0
    for p in paths:
        a = 10.0 ** (p.gain_db / 20.0)
        ang = -TWO_PI * f * p.delay_s
        re += a * math.cos(ang)
        im += a * math.sin(ang)
        mag += a
    amp = math.hypot(re, im)
    if amp <= 1e-12 * mag:
        return -math.inf
    return 20.0 * math.log10(amp)


def link_gains_db(ps, band_plan: Sequence[float]) -> np.ndarray:
    return np.array([narrowband_gain_db(ps, f) for f in band_plan])


def sample_cgm(scene: Scene, tx_locs, rx_locs, cfg: Optional[OracleConfig] = None) -> Dataset:
    """One row per (tx, rx) pair with the per-band gains; coincident pairs are skipped."""
    cfg = cfg or OracleConfig()
    tx_locs = [as_point(p) for p in tx_locs]
    rx_locs = [as_point(p) for p in rx_locs]
    if not tx_locs or not rx_locs:
        raise ValueError("location lists must be non-empty")
    keys, vals = [], []
    for t in tx_locs:
        for r in rx_locs:
            if t == r:
                continue
            ps = trace_paths(scene, t, r, cfg)
            keys.append((t.x, t.y, r.x, r.y))
            vals.append(link_gains_db(ps, scene.band_plan))
    meta = _meta(scene, cfg, tx_height=tx_locs[0].z, rx_height=rx_locs[0].z)
    return Dataset("cgm", np.array(keys).reshape(-1, 4),
                   np.array(vals).reshape(-1, scene.n_bands), meta)


def sample_cpm(scene: Scene, rx_locs, cfg: Optional[OracleConfig] = None) -> Dataset:
    """One row per receiver with the three strongest paths from the base station."""
    cfg = cfg or OracleConfig()
    if scene.bs_location is None:
        raise ValueError("scene has no bs_location; CPM sampling needs one")
    rx_locs = [as_point(p) for p in rx_locs]
    if not rx_locs:
        raise ValueError("location lists must be non-empty")
    bs = scene.bs_location
    keys = np.array([(r.x, r.y) for r in rx_locs])
    vals = np.array([encode_triple(trace_paths(scene, bs, r, cfg).paths) for r in rx_locs])
    meta = _meta(scene, cfg, tx_height=bs.z, rx_height=rx_locs[0].z)
    meta["bs_location"] = list(bs)
    return Dataset("cpm", keys, vals, meta)


def sample_dataset(scene: Scene, tx_locs, rx_locs, cfg: Optional[OracleConfig] = None,
                   kind: str = "cgm") -> Dataset:
    if kind == "cgm":
        return sample_cgm(scene, tx_locs, rx_locs, cfg)
    if kind == "cpm":
        return sample_cpm(scene, rx_locs, cfg)
    raise ValueError(f"unknown dataset kind {kind!r}")


def _meta(scene: Scene, cfg: OracleConfig, tx_height: float, rx_height: float) -> dict:
    return {
        "tx_height": float(tx_height),
        "rx_height": float(rx_height),
        "carrier_hz": scene.carrier_hz,
        "band_plan": list(scene.band_plan),
        "band_gain": "coherent sum of path phasors",
        "oracle": {
            "max_reflections": cfg.max_reflections,
            "reflection_loss_db": cfg.reflection_loss_db,
            "noise_floor_dbm": cfg.noise_floor_dbm,
            "tx_power_dbm": cfg.tx_power_dbm,
        },
    }
