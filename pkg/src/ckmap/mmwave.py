"""mmWave analog beam selection with a uniform planar array at the base station.

Element ``(m_y, m_z)`` sits at flat index ``m_y * n_z + m_z``. The steering
phase of a path with zenith ``theta`` and azimuth ``phi`` is
``2*pi*spacing*(m_y*u + m_z*v)`` with spatial frequencies
``u = sin(theta)*sin(phi)`` and ``v = cos(theta)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence

import numpy as np

from .ckm_store import FIELDS_PER_PATH, N_PATHS, TableCKM, query, slot_present
from .propagation import OracleConfig, trace_paths
from .scene import Point3, Scene, as_point


class CoverageError(RuntimeError):
    pass


@dataclass(frozen=True)
class UpaGeometry:
    n_y: int
    n_z: int
    spacing: float = 0.5  # wavelengths

    def __post_init__(self):
        if self.n_y < 1 or self.n_z < 1:
            raise ValueError("array needs at least one element per axis")

    @property
    def n_elements(self) -> int:
        return self.n_y * self.n_z


def _steering(geom: UpaGeometry, u, v) -> np.ndarray:
    u = np.atleast_1d(np.asarray(u, dtype=np.float64))
    v = np.atleast_1d(np.asarray(v, dtype=np.float64))
    my = np.repeat(np.arange(geom.n_y), geom.n_z)
    mz = np.tile(np.arange(geom.n_z), geom.n_y)
    ph = 2.0 * np.pi * geom.spacing * (u[:, None] * my[None, :] + v[:, None] * mz[None, :])
    return np.exp(1j * ph) / math.sqrt(geom.n_elements)


def spatial_freqs(theta, phi):
    theta = np.asarray(theta, dtype=np.float64)
    phi = np.asarray(phi, dtype=np.float64)
    return np.sin(theta) * np.sin(phi), np.cos(theta)


def upa_response(geom: UpaGeometry, theta: float, phi: float) -> np.ndarray:
    """Unit-norm transmit array response towards (zenith, azimuth)."""
    if not 0.0 <= theta <= math.pi:
        raise ValueError("zenith angle must lie in [0, pi]")
    u, v = spatial_freqs(theta, phi)
    return _steering(geom, u, v)[0]


@dataclass
class BeamCodebook:
    geometry: UpaGeometry
    beams: np.ndarray  # (B, n_elements), unit-norm rows
    grid: np.ndarray  # (B, 2) spatial frequencies (u, v)

    def __len__(self):
        return self.beams.shape[0]

    @property
    def u_step(self) -> float:
        return 1.0 / (2 * self.geometry.n_y)

    @property
    def v_step(self) -> float:
        return 1.0 / (2 * self.geometry.n_z)


def codebook_axis(n: int) -> np.ndarray:
    """4n samples on [-1, 1) at step 1/(2n), offset by half a step."""
    return -1.0 + (np.arange(4 * n) + 0.5) / (2 * n)


def build_codebook(geom: UpaGeometry) -> BeamCodebook:
    """Beams on the (u, v) grid; beam index = iu * 4*n_z + iv."""
    uu, vv = np.meshgrid(codebook_axis(geom.n_y), codebook_axis(geom.n_z), indexing="ij")
    grid = np.column_stack([uu.ravel(), vv.ravel()])
    return BeamCodebook(geom, _steering(geom, grid[:, 0], grid[:, 1]), grid)


def multipath_channel(gains_db, phases, thetas, phis, geom: UpaGeometry) -> np.ndarray:
    """Sum of path phasors, each scaled by the full (unnormalised) array response."""
    gains_db = np.asarray(gains_db, dtype=np.float64)
    if gains_db.size == 0:
        return np.zeros(geom.n_elements, dtype=complex)
    amp = 10.0 ** (gains_db / 20.0) * np.exp(1j * np.asarray(phases, dtype=np.float64))
    u, v = spatial_freqs(thetas, phis)
    a = _steering(geom, u, v) * math.sqrt(geom.n_elements)
    h = np.zeros(geom.n_elements, dtype=complex)
    for l in range(amp.size):
        h += amp[l] * a[l]
    return h


def pathset_channel(ps, geom: UpaGeometry) -> np.ndarray:
    """Narrowband carrier-frequency channel from every traced path."""
    paths = ps.paths if hasattr(ps, "paths") else ps
    return multipath_channel(
        [p.gain_db for p in paths], [p.phase_rad for p in paths],
        [p.zenith_rad for p in paths], [p.azimuth_rad for p in paths], geom,
    )


def reconstruct_channel(triple, geom: UpaGeometry) -> np.ndarray:
    """Channel rebuilt from a CPM value vector (absent slots contribute nothing)."""
    t = np.asarray(triple, dtype=np.float64).reshape(N_PATHS, FIELDS_PER_PATH)
    keep = slot_present(t.ravel())
    t = t[keep]
    return multipath_channel(t[:, 0], t[:, 1], t[:, 2], t[:, 3], geom)


@dataclass(frozen=True)
class BeamChoice:
    index: int
    no_signal: bool = False


def select_beam(codebook: BeamCodebook, h) -> BeamChoice:
    """Beam maximising ``|w^H h|``; ties to the lowest index."""
    h = np.asarray(h, dtype=complex).ravel()
    if h.shape[0] != codebook.beams.shape[1]:
        raise ValueError("channel length does not match the array")
    if not np.any(h):
        return BeamChoice(0, True)
    resp = np.abs(codebook.beams.conj() @ h)
    return BeamChoice(int(np.argmax(resp)))


def beamformed_rate(h_true, w, p_over_n: float) -> float:
    """``log2(1 + p_over_n * |w^H h|^2)`` in bits/s/Hz."""
    g = np.vdot(np.asarray(w, dtype=complex), np.asarray(h_true, dtype=complex))
    return float(np.log2(1.0 + p_over_n * abs(g) ** 2))


def default_p_over_n(ref_gain_db: float = 0.0, n_elements: int = 100, target_rate: float = 10.0) -> float:
    """SNR scale giving ``target_rate`` for a single path of ``ref_gain_db`` seen
    by a matched beam of ``n_elements`` antennas."""
    return (2.0 ** target_rate - 1.0) / (n_elements * 10.0 ** (ref_gain_db / 10.0))


def perturb_location(loc, mean_err: float, rng: np.random.Generator) -> Point3:
    """Horizontal displacement: uniform bearing, Rayleigh radius with mean ``mean_err``.

    Always consumes two draws from ``rng`` so streams stay aligned across
    error levels.
    """
    if mean_err < 0:
        raise ValueError("mean_err must be >= 0")
    loc = as_point(loc)
    psi = rng.uniform(0.0, 2.0 * math.pi)
    r = rng.rayleigh(1.0) * mean_err * math.sqrt(2.0 / math.pi)
    if mean_err == 0:
        return loc
    return Point3(loc.x + r * math.cos(psi), loc.y + r * math.sin(psi), loc.z)


def location_based_triple(bs: Point3, ue: Point3) -> np.ndarray:
    """Single line-of-sight path assumed from geometry alone (0 dB, zero phase)."""
    d = ue - bs
    r = d.norm()
    theta = math.acos(max(-1.0, min(1.0, d.z / r)))
    phi = math.atan2(d.y, d.x)
    t = np.full(N_PATHS * FIELDS_PER_PATH, np.nan)
    t[0::FIELDS_PER_PATH] = -np.inf
    t[0:4] = (0.0, 0.0, theta, phi)
    return t


@dataclass(frozen=True)
class BeamExperimentConfig:
    n_y_list: tuple = (2, 5, 10, 20)
    n_z: int = 10
    errors: tuple = (0.0, 1.0, 5.0)
    n_locations: int = 200
    ue_height: float = 1.5
    # SNR scale: 10 bit/s/Hz for a single path of ref_gain_db on a 100-element matched beam
    ref_gain_db: float = -90.0
    p_over_n: Optional[float] = None
    # when the map predicts no path at the reported location: "nearest" re-queries
    # the closest stored location that has one, "none" keeps the no-signal beam
    cpm_fallback: str = "nearest"

    def snr_scale(self) -> float:
        if self.p_over_n is not None:
            return float(self.p_over_n)
        return default_p_over_n(self.ref_gain_db)


@dataclass
class BeamReport:
    locations: np.ndarray
    # rates[scheme][(n_y, err)] -> per-location rates; perfect uses err = 0
    rates: Dict[str, Dict[tuple, np.ndarray]] = field(default_factory=dict)
    n_paths: Optional[np.ndarray] = None

    def average(self, scheme: str, n_y: int, err: float = 0.0) -> float:
        return float(np.mean(self.rates[scheme][(n_y, float(err))]))


def draw_ue_locations(scene: Scene, n: int, seed: int, oracle: Optional[OracleConfig] = None,
                      height: float = 1.5):
    """Uniform UE drops that see at least one path from the base station."""
    if scene.bs_location is None:
        raise ValueError("scene has no bs_location")
    rng = np.random.default_rng(seed)
    xmin, ymin, xmax, ymax = scene.bounds
    locs, pathsets = [], []
    draws = 0
    while len(locs) < n:
        if draws >= 100 * n:
            raise CoverageError(f"only {len(locs)} of {n} UE drops have a detectable path")
        draws += 1
        p = Point3(float(rng.uniform(xmin, xmax)), float(rng.uniform(ymin, ymax)), height)
        if p == scene.bs_location:
            continue
        ps = trace_paths(scene, scene.bs_location, p, oracle)
        if len(ps) == 0:
            continue
        locs.append(p)
        pathsets.append(ps)
    return locs, pathsets


def _cpm_predict(cpm: TableCKM, q: Point3, fallback: str) -> np.ndarray:
    t = query(cpm, (q.x, q.y))
    if fallback == "none" or slot_present(t).any():
        return t
    if fallback != "nearest":
        raise ValueError(f"unknown CPM fallback {fallback!r}")
    covered = np.flatnonzero(slot_present(cpm.values)[:, 0])
    if covered.size == 0:
        return t
    d = np.hypot(cpm.keys[covered, 0] - q.x, cpm.keys[covered, 1] - q.y)
    return cpm.values[covered[int(np.argmin(d))]].copy()


def run_beam_experiment(scene: Scene, cpm: TableCKM, cfg: Optional[BeamExperimentConfig] = None,
                        seed: int = 0, oracle: Optional[OracleConfig] = None,
                        locations: Optional[Sequence] = None) -> BeamReport:
    """Perfect-CSI, CPM-based and location-based beam selection, all scored on
    the oracle channel.

    UE drops come from ``seed`` unless ``locations`` is given. Localisation
    errors at location ``i`` use the stream ``(seed, i)`` for every error level.
    """
    cfg = cfg or BeamExperimentConfig()
    if cpm is None or cpm.kind != "cpm":
        raise ValueError("beam experiment needs a channel path map")
    bs = scene.bs_location
    if bs is None:
        raise ValueError("scene has no bs_location")
    if locations is None:
        locs, pathsets = draw_ue_locations(scene, cfg.n_locations, seed, oracle, cfg.ue_height)
    else:
        locs = [as_point(p) for p in locations]
        pathsets = [trace_paths(scene, bs, p, oracle) for p in locs]
    p_over_n = cfg.snr_scale()
    errors = [float(e) for e in cfg.errors]

    # per-location, per-error predictions do not depend on the array size
    cpm_triples, loc_triples = [], []
    for i, ue in enumerate(locs):
        row_c, row_l = [], []
        for e in errors:
            q = perturb_location(ue, e, np.random.default_rng((seed, i)))
            row_c.append(_cpm_predict(cpm, q, cfg.cpm_fallback))
            row_l.append(location_based_triple(bs, q))
        cpm_triples.append(row_c)
        loc_triples.append(row_l)

    report = BeamReport(np.array([tuple(p) for p in locs]),
                        {"perfect": {}, "cpm": {}, "location": {}},
                        np.array([len(ps) for ps in pathsets]))
    for n_y in cfg.n_y_list:
        geom = UpaGeometry(int(n_y), cfg.n_z)
        cb = build_codebook(geom)
        n_loc = len(locs)
        perf = np.empty(n_loc)
        cpm_r = np.empty((len(errors), n_loc))
        loc_r = np.empty((len(errors), n_loc))
        for i, ps in enumerate(pathsets):
            h = pathset_channel(ps, geom)
            perf[i] = beamformed_rate(h, cb.beams[select_beam(cb, h).index], p_over_n)
            for ei in range(len(errors)):
                w = cb.beams[select_beam(cb, reconstruct_channel(cpm_triples[i][ei], geom)).index]
                cpm_r[ei, i] = beamformed_rate(h, w, p_over_n)
                w = cb.beams[select_beam(cb, reconstruct_channel(loc_triples[i][ei], geom)).index]
                loc_r[ei, i] = beamformed_rate(h, w, p_over_n)
        report.rates["perfect"][(int(n_y), 0.0)] = perf
        for ei, e in enumerate(errors):
            report.rates["cpm"][(int(n_y), e)] = cpm_r[ei]
            report.rates["location"][(int(n_y), e)] = loc_r[ei]
    return report
