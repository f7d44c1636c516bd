"""Table-based channel knowledge maps with inverse-distance-weighted KNN queries.

Two map kinds share one store:

* ``cgm`` (channel gain map): key ``(tx_x, tx_y, rx_x, rx_y)``, value = one
  gain in dB per sub-band.
* ``cpm`` (channel path map): key ``(ue_x, ue_y)``, value = gain (dB), phase,
  zenith AoD and azimuth AoD of the three strongest paths (12 numbers).

Missing data is encoded in the value vector itself: a gain of ``-inf`` means
"no link" (CGM) or "no path in this slot" (CPM); the three angles of an
absent CPM slot are NaN.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

N_PATHS = 3
FIELDS_PER_PATH = 4
CPM_VALUE_DIM = N_PATHS * FIELDS_PER_PATH
# export value for "no detectable path" in azimuth maps, drawn as sin(phi) = 2
NO_PATH_SIN_AZIMUTH = 2.0
_EXACT_TOL = 1e-9

KEY_DIMS = {"cgm": 4, "cpm": 2}


class CkmError(ValueError):
    pass


def cpm_columns() -> list:
    cols = []
    for l in range(1, N_PATHS + 1):
        cols += [f"gain_db_{l}", f"phase_rad_{l}", f"zenith_rad_{l}", f"azimuth_rad_{l}"]
    return cols


def cgm_columns(n_bands: int) -> list:
    return [f"gain_db_{n}" for n in range(1, n_bands + 1)]


KEY_COLUMNS = {"cgm": ["tx_x", "tx_y", "rx_x", "rx_y"], "cpm": ["ue_x", "ue_y"]}


@dataclass
class Dataset:
    """Rows of location keys and channel-knowledge values, plus map metadata.

    ``meta`` carries what the keys leave implicit: node heights
    (``tx_height``/``rx_height``), ``band_plan`` and ``carrier_hz``.
    """

    kind: str
    keys: np.ndarray
    values: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KEY_DIMS:
            raise CkmError(f"unknown map kind {self.kind!r}")
        self.keys = np.asarray(self.keys, dtype=np.float64).reshape(-1, KEY_DIMS[self.kind])
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or self.values.shape[0] != self.keys.shape[0]:
            raise CkmError(
                f"key/value row mismatch: {self.keys.shape} vs {self.values.shape}"
            )
        if self.kind == "cpm" and self.values.shape[1] != CPM_VALUE_DIM:
            raise CkmError(f"CPM rows need {CPM_VALUE_DIM} values, got {self.values.shape[1]}")

    def __len__(self):
        return self.keys.shape[0]

    @property
    def columns(self) -> list:
        if self.kind == "cpm":
            return KEY_COLUMNS["cpm"] + cpm_columns()
        return KEY_COLUMNS["cgm"] + cgm_columns(self.values.shape[1])

    def subset(self, idx) -> "Dataset":
        return Dataset(self.kind, self.keys[idx], self.values[idx], dict(self.meta))


def encode_triple(paths) -> np.ndarray:
    """Pack the three strongest paths into a CPM value vector.

    ``paths`` is any sequence of objects with ``gain_db``, ``phase_rad``,
    ``zenith_rad`` and ``azimuth_rad`` attributes, strongest first.
    """
    v = empty_triple()
    for l, p in enumerate(paths[:N_PATHS]):
        v[l * 4 : l * 4 + 4] = (p.gain_db, p.phase_rad, p.zenith_rad, p.azimuth_rad)
    return v


def empty_triple() -> np.ndarray:
    v = np.full(CPM_VALUE_DIM, np.nan)
    v[0::FIELDS_PER_PATH] = -np.inf
    return v


def slot_present(values: np.ndarray) -> np.ndarray:
    """Per-slot presence flags of one or many CPM value vectors."""
    g = np.asarray(values)[..., 0::FIELDS_PER_PATH]
    return np.isfinite(g)


@dataclass
class TableCKM:
    kind: str
    keys: np.ndarray
    values: np.ndarray
    knn_k: int = 3
    idw_power: float = 2.0
    meta: dict = field(default_factory=dict)

    @property
    def key_dim(self) -> int:
        return self.keys.shape[1]

    @property
    def value_dim(self) -> int:
        return self.values.shape[1]

    def __len__(self):
        return self.keys.shape[0]


def build_table_ckm(dataset: Dataset, kind: Optional[str] = None, knn_k: int = 3,
                    idw_power: float = 2.0) -> TableCKM:
    """Store a sampled dataset as a queryable map.

    Rows with identical keys are collapsed, the last one winning; surviving
    entries keep the order of their winning rows.
    """
    kind = kind or dataset.kind
    if kind != dataset.kind:
        raise CkmError(f"dataset is {dataset.kind!r}, requested {kind!r}")
    if len(dataset) == 0:
        raise CkmError("cannot build a map from an empty dataset")
    if dataset.keys.shape[1] != KEY_DIMS[kind]:
        raise CkmError(f"{kind} keys must be {KEY_DIMS[kind]}-D")
    if knn_k < 1:
        raise CkmError("knn_k must be >= 1")
    if idw_power <= 0:
        raise CkmError("idw_power must be positive")

    last = {}
    for i, k in enumerate(map(tuple, dataset.keys)):
        last[k] = i
    keep = np.array(sorted(last.values()), dtype=np.intp)
    meta = dict(dataset.meta)
    meta.update(
        {
            "interpolation": "idw-knn",
            "gain_averaging": "dB-domain",
            "angle_averaging": "circular (phase, azimuth); linear (zenith)",
            "missing_path_rule": "slot present iff >= ceil(k/2) neighbours have it",
        }
    )
    return TableCKM(
        kind=kind,
        keys=np.ascontiguousarray(dataset.keys[keep]),
        values=np.ascontiguousarray(dataset.values[keep]),
        knn_k=int(knn_k),
        idw_power=float(idw_power),
        meta=meta,
    )


def nearest_neighbors(dist: np.ndarray, k: int) -> np.ndarray:
    """Indices of the ``k`` smallest distances; ties go to the lower index.

    Same result as ``np.argsort(dist, kind="stable")[:k]`` without sorting
    the whole array.
    """
    m = dist.shape[0]
    if k >= m:
        return np.argsort(dist, kind="stable")
    part = np.argpartition(dist, k - 1)[:k]
    kth = dist[part].max()
    cand = np.flatnonzero(dist <= kth)
    order = np.argsort(dist[cand], kind="stable")
    return cand[order[:k]]


def _circular_mean(angles: np.ndarray, w: np.ndarray) -> float:
    z = np.sum(w * np.exp(1j * angles))
    return float(np.angle(z))


def _blend(ckm: TableCKM, nbr_vals: np.ndarray, w: np.ndarray) -> np.ndarray:
    if ckm.kind == "cgm":
        ok = np.isfinite(nbr_vals)
        wm = np.where(ok, w[:, None], 0.0)
        den = wm.sum(axis=0)
        num = (wm * np.where(ok, nbr_vals, 0.0)).sum(axis=0)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(den > 0, num / den, -np.inf)

    out = np.empty(ckm.value_dim)
    need = math.ceil(len(w) / 2)
    present = slot_present(nbr_vals)
    for l in range(N_PATHS):
        m = present[:, l]
        s = l * FIELDS_PER_PATH
        if m.sum() < need:
            out[s] = -np.inf
            out[s + 1 : s + 4] = np.nan
            continue
        wl = w[m]
        vl = nbr_vals[m, s : s + 4]
        wsum = np.sum(wl)
        out[s] = np.sum(wl * vl[:, 0]) / wsum
        out[s + 1] = np.mod(_circular_mean(vl[:, 1], wl), 2 * np.pi)
        if out[s + 1] >= 2 * np.pi:
            out[s + 1] = 0.0
        out[s + 2] = np.sum(wl * vl[:, 2]) / wsum
        az = _circular_mean(vl[:, 3], wl)
        out[s + 3] = np.pi if az <= -np.pi else az
    return out


def _query_from_dist(ckm: TableCKM, dist: np.ndarray) -> np.ndarray:
    i0 = int(np.argmin(dist))
    if dist[i0] < _EXACT_TOL:
        return ckm.values[i0].copy()
    k = min(ckm.knn_k, len(ckm))
    nb = nearest_neighbors(dist, k)
    w = 1.0 / dist[nb] ** ckm.idw_power
    return _blend(ckm, ckm.values[nb], w)


def query(ckm: TableCKM, key) -> np.ndarray:
    """Channel knowledge at ``key`` by IDW over the ``knn_k`` nearest entries.

    A key within 1e-9 m of a stored key returns the stored vector unchanged.
    """
    if len(ckm) == 0:
        raise CkmError("query on an empty map")
    q = np.asarray(key, dtype=np.float64).reshape(-1)
    if q.shape[0] != ckm.key_dim:
        raise CkmError(f"key must be {ckm.key_dim}-D, got {q.shape[0]}")
    dist = np.sqrt(_sqdist(ckm.keys, q[None, :])[0])
    return _query_from_dist(ckm, dist)


def _sqdist(keys: np.ndarray, q: np.ndarray) -> np.ndarray:
    # (B, M); accumulated per coordinate so single and batched queries agree bitwise
    acc = np.zeros((q.shape[0], keys.shape[0]))
    for c in range(keys.shape[1]):
        diff = q[:, c : c + 1] - keys[None, :, c]
        acc += diff * diff
    return acc


def query_many(ckm: TableCKM, keys, chunk: int = 64) -> np.ndarray:
    """Row-wise :func:`query` over an ``(M, key_dim)`` array."""
    if len(ckm) == 0:
        raise CkmError("query on an empty map")
    q = np.asarray(keys, dtype=np.float64).reshape(-1, ckm.key_dim)
    out = np.empty((q.shape[0], ckm.value_dim))
    for s in range(0, q.shape[0], chunk):
        d = np.sqrt(_sqdist(ckm.keys, q[s : s + chunk]))
        for r in range(d.shape[0]):
            out[s + r] = _query_from_dist(ckm, d[r])
    return out


def slot_index(ckm_kind: str, slot) -> int:
    """Resolve a value slot given as an index or a column name.

    CPM names: ``gain_db_1`` .. ``azimuth_rad_3``, short forms ``gain1``,
    ``phase2``, ``zenith1``, ``azimuth1`` ...; CGM names: ``gain_db_<n>``.
    """
    if isinstance(slot, (int, np.integer)):
        return int(slot)
    s = str(slot)
    if s.isdigit():
        return int(s)
    if ckm_kind == "cpm":
        cols = cpm_columns()
        if s in cols:
            return cols.index(s)
        short = {"gain": 0, "phase": 1, "zenith": 2, "azimuth": 3}
        for name, off in short.items():
            if s.startswith(name) and s[len(name) :].isdigit():
                l = int(s[len(name) :])
                if 1 <= l <= N_PATHS:
                    return (l - 1) * FIELDS_PER_PATH + off
    elif s.startswith("gain_db_") and s[8:].isdigit():
        return int(s[8:]) - 1
    raise CkmError(f"unknown slot {slot!r} for a {ckm_kind} map")


def is_azimuth_slot(ckm_kind: str, idx: int) -> bool:
    return ckm_kind == "cpm" and idx % FIELDS_PER_PATH == 3


def export_grid(ckm: TableCKM, region: Sequence[float], resolution: float, slot,
                tx_xy: Optional[Sequence[float]] = None):
    """Evaluate one value slot on a regular grid of cell centres.

    Returns ``(xs, ys, grid)`` with ``grid[j, i]`` at ``(xs[i], ys[j])``.
    Azimuth slots are exported as ``sin(azimuth)``, with 2.0 where no path is
    present. CGM maps need the transmitter pinned via ``tx_xy``.
    """
    if not resolution > 0:
        raise CkmError("resolution must be positive")
    idx = slot_index(ckm.kind, slot)
    if not 0 <= idx < ckm.value_dim:
        raise CkmError(f"slot {slot!r} out of range")
    x0, y0, x1, y1 = (float(v) for v in region)
    nx = int(round((x1 - x0) / resolution))
    ny = int(round((y1 - y0) / resolution))
    if nx < 1 or ny < 1:
        raise CkmError("region smaller than one grid cell")
    xs = x0 + (np.arange(nx) + 0.5) * resolution
    ys = y0 + (np.arange(ny) + 0.5) * resolution
    gx, gy = np.meshgrid(xs, ys)
    pts = np.column_stack([gx.ravel(), gy.ravel()])
    if ckm.kind == "cgm":
        if tx_xy is None:
            raise CkmError("CGM grid export needs a pinned transmitter (tx_xy)")
        pts = np.column_stack([np.tile(np.asarray(tx_xy, float), (pts.shape[0], 1)), pts])
    vals = query_many(ckm, pts)[:, idx]
    if is_azimuth_slot(ckm.kind, idx):
        vals = np.where(np.isnan(vals), NO_PATH_SIN_AZIMUTH, np.sin(vals))
    return xs, ys, vals.reshape(ny, nx)
