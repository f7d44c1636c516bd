"""D2D sub-band assignment: sum rate, greedy and exhaustive assignment, and the
perfect-CSI / CGM / fitted path-loss comparison."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional, Sequence

import numpy as np

from .ckm_store import TableCKM, query_many
from .plfit import PlModel, predict_pl
from .propagation import OracleConfig, link_gains_db, trace_paths
from .scene import Point3, Scene, random_outdoor_point

BRUTE_FORCE_LIMIT = 10 ** 7


class ConfigError(ValueError):
    pass


class SizeError(ValueError):
    pass


def dbm_to_watt(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


@dataclass
class D2dProblem:
    tx: np.ndarray  # (K, 3)
    rx: np.ndarray  # (K, 3)
    n_bands: int
    tx_power_dbm: float = 20.0
    noise_dbm: float = -90.0

    def __post_init__(self):
        self.tx = np.asarray(self.tx, dtype=np.float64).reshape(-1, 3)
        self.rx = np.asarray(self.rx, dtype=np.float64).reshape(-1, 3)
        if self.tx.shape != self.rx.shape or self.tx.shape[0] < 1:
            raise ValueError("need K >= 1 matching tx/rx locations")
        if self.n_bands < 1:
            raise ValueError("need at least one sub-band")

    @property
    def n_pairs(self) -> int:
        return self.tx.shape[0]

    @property
    def power(self) -> float:
        return dbm_to_watt(self.tx_power_dbm)

    @property
    def noise(self) -> float:
        return dbm_to_watt(self.noise_dbm)


def _check(problem: D2dProblem, gains: np.ndarray) -> np.ndarray:
    g = np.asarray(gains, dtype=np.float64)
    k, n = problem.n_pairs, problem.n_bands
    if g.shape != (k, k, n):
        raise ValueError(f"gain tensor must be {(k, k, n)}, got {g.shape}")
    return g


def per_pair_rates(problem: D2dProblem, assignment, gains, active=None) -> np.ndarray:
    """Shannon rate of each pair under co-channel interference.

    ``gains[j, k, n]`` is the linear power gain from transmitter ``j`` to
    receiver ``k`` on band ``n``. Pairs outside ``active`` neither transmit
    nor count.
    """
    g = _check(problem, gains)
    a = np.asarray(assignment, dtype=np.intp)
    k = problem.n_pairs
    act = np.ones(k, bool) if active is None else np.asarray(active, bool)
    p, s2 = problem.power, problem.noise
    ks = np.arange(k)
    # sel[j, k] = g[j, k, a[k]]
    sel = g[:, ks, a]
    same = (a[:, None] == a[None, :]) & act[:, None] & act[None, :]
    np.fill_diagonal(same, False)
    interf = p * np.sum(np.where(same, sel, 0.0), axis=0)
    rates = np.log2(1.0 + p * sel[ks, ks] / (s2 + interf))
    return np.where(act, rates, 0.0)


def sum_rate(problem: D2dProblem, assignment, gains, active=None) -> float:
    """Sum rate in bits/s/Hz (unit bandwidth per sub-band)."""
    return float(np.sum(per_pair_rates(problem, assignment, gains, active)))


def greedy_assign(problem: D2dProblem, predicted_gains, order: Optional[Sequence[int]] = None) -> np.ndarray:
    """Assign pairs one at a time, each to the band maximising the sum rate of
    the pairs assigned so far (ties to the lowest band)."""
    g = _check(problem, predicted_gains)
    k, n = problem.n_pairs, problem.n_bands
    order = list(range(k)) if order is None else [int(i) for i in order]
    if sorted(order) != list(range(k)):
        raise ValueError("order must be a permutation of the pair indices")
    a = np.zeros(k, dtype=np.intp)
    active = np.zeros(k, bool)
    for kk in order:
        active[kk] = True
        best_band, best_rate = 0, -math.inf
        for band in range(n):
            a[kk] = band
            r = sum_rate(problem, a, g, active)
            if r > best_rate:
                best_band, best_rate = band, r
        a[kk] = best_band
    return a


def _batch_rates(problem: D2dProblem, g: np.ndarray, assigns: np.ndarray) -> np.ndarray:
    k = problem.n_pairs
    p, s2 = problem.power, problem.noise
    ks = np.arange(k)
    gt = np.moveaxis(g, 2, 0)  # (N, K, K)
    sel = gt[assigns[:, None, :], ks[None, :, None], ks[None, None, :]]  # (B, j, k)
    same = assigns[:, :, None] == assigns[:, None, :]
    same[:, ks, ks] = False
    interf = p * np.sum(np.where(same, sel, 0.0), axis=1)
    sig = p * sel[:, ks, ks]
    return np.sum(np.log2(1.0 + sig / (s2 + interf)), axis=1)


def brute_force_assign(problem: D2dProblem, gains, chunk: int = 4096):
    """Exhaustive optimum over all N**K assignments.

    Returns ``(assignment, sum_rate)``; ties go to the lexicographically
    smallest assignment.
    """
    g = _check(problem, gains)
    k, n = problem.n_pairs, problem.n_bands
    total = n ** k
    if total > BRUTE_FORCE_LIMIT:
        raise SizeError(f"N**K = {n}**{k} exceeds the brute-force limit {BRUTE_FORCE_LIMIT}")
    place = n ** np.arange(k - 1, -1, -1)
    best_idx, best_rate = 0, -math.inf
    for s in range(0, total, chunk):
        idx = np.arange(s, min(s + chunk, total))
        assigns = (idx[:, None] // place[None, :]) % n
        rates = _batch_rates(problem, g, assigns)
        j = int(np.argmax(rates))
        if rates[j] > best_rate:
            best_idx, best_rate = int(idx[j]), float(rates[j])
    best = (best_idx // place) % n
    return best.astype(np.intp), sum_rate(problem, best, g)


# ---------------------------------------------------------------- experiment

Predictor = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class D2dConfig:
    n_pairs: int = 30
    pair_distance: tuple = (5.0, 20.0)
    height: float = 1.5
    tx_power_dbm: float = 20.0
    noise_dbm: float = -90.0


def draw_problem(scene: Scene, cfg: D2dConfig, rng: np.random.Generator) -> D2dProblem:
    """Random outdoor transmitters, each with a receiver at a random bearing and
    a distance drawn uniformly from ``cfg.pair_distance``."""
    tx, rx = [], []
    dmin, dmax = cfg.pair_distance
    while len(tx) < cfg.n_pairs:
        t = random_outdoor_point(scene, rng, cfg.height)
        for _ in range(100):
            r = float(rng.uniform(dmin, dmax))
            psi = float(rng.uniform(0.0, 2.0 * math.pi))
            q = Point3(t.x + r * math.cos(psi), t.y + r * math.sin(psi), cfg.height)
            if scene.in_bounds(q) and not scene.inside_building(q):
                tx.append(t)
                rx.append(q)
                break
    return D2dProblem(np.array(tx), np.array(rx), scene.n_bands, cfg.tx_power_dbm, cfg.noise_dbm)


def db_to_linear(g_db) -> np.ndarray:
    g = np.asarray(g_db, dtype=np.float64)
    with np.errstate(over="ignore"):
        return np.where(np.isneginf(g), 0.0, 10.0 ** (g / 10.0))


def true_gain_tensor(scene: Scene, problem: D2dProblem, oracle: Optional[OracleConfig] = None) -> np.ndarray:
    """Oracle gains in dB, shape (K, K, N); ``-inf`` where no path exists."""
    k = problem.n_pairs
    out = np.empty((k, k, problem.n_bands))
    for j in range(k):
        for kk in range(k):
            ps = trace_paths(scene, problem.tx[j], problem.rx[kk], oracle)
            out[j, kk] = link_gains_db(ps, scene.band_plan)
    return out


def _all_links(problem: D2dProblem):
    k = problem.n_pairs
    jj, kk = np.meshgrid(np.arange(k), np.arange(k), indexing="ij")
    return problem.tx[jj.ravel(), :2], problem.rx[kk.ravel(), :2]


def predicted_gain_tensor(problem: D2dProblem, predictor: Predictor) -> np.ndarray:
    """Apply ``predictor(tx_xy, rx_xy) -> gains_db`` to all K*K links."""
    txy, rxy = _all_links(problem)
    g = np.asarray(predictor(txy, rxy), dtype=np.float64)
    k = problem.n_pairs
    return g.reshape(k, k, problem.n_bands)


def cgm_predictor(ckm: TableCKM) -> Predictor:
    if ckm is None:
        raise ConfigError("CGM predictor requested but no channel gain map was built")
    if ckm.kind != "cgm":
        raise ConfigError(f"expected a CGM, got a {ckm.kind} map")

    def predict(txy, rxy):
        return query_many(ckm, np.column_stack([txy, rxy]))

    return predict


def mlp_predictor(model) -> Predictor:
    from .mlp import forward

    if model is None:
        raise ConfigError("DNN CGM predictor requested but no model was trained")

    def predict(txy, rxy):
        return forward(model, np.column_stack([txy, rxy]))

    return predict


def plfit_predictor(model: PlModel, band_plan, tx_height: float, rx_height: float) -> Predictor:
    if model is None:
        raise ConfigError("path-loss predictor requested but no model was fitted")
    bands = np.asarray(band_plan, dtype=np.float64)

    def predict(txy, rxy):
        d = np.sqrt(np.sum((rxy - txy) ** 2, axis=1) + (rx_height - tx_height) ** 2)
        d = np.maximum(d, 1e-3)
        return predict_pl(model, d[:, None], bands[None, :])

    return predict


@dataclass
class SchemeResult:
    assignment: np.ndarray
    true_sum_rate: float
    predicted_gains_db: np.ndarray


@dataclass
class D2dReport:
    true_gains_db: np.ndarray
    schemes: Dict[str, SchemeResult] = field(default_factory=dict)

    def rates(self) -> Dict[str, float]:
        return {name: r.true_sum_rate for name, r in self.schemes.items()}


def run_d2d_experiment(scene: Scene, problem: D2dProblem, predictors: Dict[str, Optional[Predictor]],
                       oracle: Optional[OracleConfig] = None, order=None,
                       true_gains_db: Optional[np.ndarray] = None) -> D2dReport:
    """Greedy assignment driven by each predictor, scored on oracle gains.

    ``predictors`` maps a scheme name to a predictor; the name ``"perfect"``
    (value ``None``) uses the oracle gains themselves.
    """
    g_true_db = true_gains_db if true_gains_db is not None else true_gain_tensor(scene, problem, oracle)
    g_true = db_to_linear(g_true_db)
    report = D2dReport(true_gains_db=g_true_db)
    for name, pred in predictors.items():
        if pred is None:
            if name != "perfect":
                raise ConfigError(f"predictor {name!r} is not trained")
            g_pred_db = g_true_db
        else:
            g_pred_db = predicted_gain_tensor(problem, pred)
        a = greedy_assign(problem, db_to_linear(g_pred_db), order)
        report.schemes[name] = SchemeResult(a, sum_rate(problem, a, g_true), g_pred_db)
    return report


def enumerate_assignments(n_pairs: int, n_bands: int):
    """All assignments in lexicographic order (small problems only)."""
    return itertools.product(range(n_bands), repeat=n_pairs)
