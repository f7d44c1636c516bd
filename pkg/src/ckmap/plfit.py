"""Distance/frequency path-loss model fitted by ordinary least squares.

    gain_db = -(beta + 10*alpha*log10(d) + 10*gamma*log10(f / f_ref))

with ``f_ref`` the lowest frequency in the training data.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class PlFitError(ValueError):
    pass


@dataclass(frozen=True)
class PlModel:
    alpha: float
    beta: float
    gamma: float
    f_ref: float
    rms: float = 0.0
    n_rows: int = 0

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "beta": self.beta,
            "gamma": self.gamma,
            "f_ref_hz": self.f_ref,
            "residual_rms_db": self.rms,
            "n_rows": self.n_rows,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "PlModel":
        return cls(float(doc["alpha"]), float(doc["beta"]), float(doc["gamma"]),
                   float(doc["f_ref_hz"]), float(doc.get("residual_rms_db", 0.0)),
                   int(doc.get("n_rows", 0)))


def solve_pivoted(a: np.ndarray, b: np.ndarray, names=None, rel_tol: float = 1e-12) -> np.ndarray:
    """Gaussian elimination with partial pivoting for a small square system."""
    a = np.array(a, dtype=np.float64)
    b = np.array(b, dtype=np.float64)
    n = a.shape[0]
    names = names or [f"column {i}" for i in range(n)]
    perm = list(range(n))
    scale = np.max(np.abs(a)) if a.size else 0.0
    for c in range(n):
        p = c + int(np.argmax(np.abs(a[c:, c])))
        if abs(a[p, c]) <= rel_tol * scale:
            raise PlFitError(f"rank-deficient design: {names[perm[c]]} is not identifiable")
        if p != c:
            a[[c, p]] = a[[p, c]]
            b[[c, p]] = b[[p, c]]
        for r in range(c + 1, n):
            f = a[r, c] / a[c, c]
            a[r, c:] -= f * a[c, c:]
            b[r] -= f * b[c]
    x = np.zeros(n)
    for r in range(n - 1, -1, -1):
        x[r] = (b[r] - a[r, r + 1 :] @ x[r + 1 :]) / a[r, r]
    return x


def _distinct(v: np.ndarray, rel: float = 1e-9) -> int:
    v = np.sort(v)
    if v.size == 0:
        return 0
    return 1 + int(np.sum(np.diff(v) > rel * max(abs(v[-1]), 1.0)))


def fit_pathloss(d, f, gain_db, fit_gamma: bool = True) -> PlModel:
    """Least-squares fit of (alpha, beta, gamma); rows with ``-inf`` gain are dropped.

    With ``fit_gamma=False`` the frequency term is left out (gamma = 0).
    """
    d = np.asarray(d, dtype=np.float64).ravel()
    f = np.broadcast_to(np.asarray(f, dtype=np.float64), d.shape).ravel()
    g = np.asarray(gain_db, dtype=np.float64).ravel()
    if not (d.shape == g.shape):
        raise PlFitError("d, f and gain_db must have matching lengths")
    ok = np.isfinite(g)
    d, f, g = d[ok], f[ok], g[ok]
    if np.any(d <= 0) or np.any(f <= 0):
        raise PlFitError("distances and frequencies must be positive")
    if d.size < 3:
        raise PlFitError(f"need at least 3 usable rows, got {d.size}")
    if _distinct(d) < 2:
        raise PlFitError("rank-deficient design: distance column has a single value")
    if fit_gamma and _distinct(f) < 2:
        raise PlFitError("rank-deficient design: frequency column has a single value")

    f_ref = float(f.min())
    cols = [np.ones_like(d), 10.0 * np.log10(d)]
    names = ["intercept (beta)", "distance (alpha)"]
    if fit_gamma:
        cols.append(10.0 * np.log10(f / f_ref))
        names.append("frequency (gamma)")
    a = -np.column_stack(cols)
    # equilibrate columns before forming the normal equations
    s = np.sqrt(np.sum(a * a, axis=0))
    an = a / s
    coef = solve_pivoted(an.T @ an, an.T @ g, names) / s
    beta, alpha = coef[0], coef[1]
    gamma = coef[2] if fit_gamma else 0.0
    resid = g - a @ coef
    return PlModel(float(alpha), float(beta), float(gamma), f_ref,
                   float(np.sqrt(np.mean(resid ** 2))), int(d.size))


def predict_pl(model: PlModel, d, f):
    """Gain in dB predicted at distance ``d`` (m) and frequency ``f`` (Hz)."""
    d_arr = np.asarray(d, dtype=np.float64)
    if np.any(~(d_arr > 0)):
        raise ValueError("distance must be positive")
    g = -(model.beta + 10.0 * model.alpha * np.log10(d_arr)
          + 10.0 * model.gamma * np.log10(np.asarray(f, dtype=np.float64) / model.f_ref))
    return float(g) if np.ndim(g) == 0 else g


def link_distances(keys: np.ndarray, tx_height: float, rx_height: float) -> np.ndarray:
    """3-D distances for CGM keys ``(tx_x, tx_y, rx_x, rx_y)`` at fixed heights."""
    keys = np.asarray(keys, dtype=np.float64).reshape(-1, 4)
    dx = keys[:, 2] - keys[:, 0]
    dy = keys[:, 3] - keys[:, 1]
    dz = rx_height - tx_height
    return np.sqrt(dx * dx + dy * dy + dz * dz)


def fit_dataset(dataset, fit_gamma=None) -> PlModel:
    """Fit on every (row, band) entry of a CGM dataset."""
    meta = dataset.meta
    bands = np.asarray(meta["band_plan"], dtype=np.float64)
    d = link_distances(dataset.keys, meta.get("tx_height", 1.5), meta.get("rx_height", 1.5))
    dd = np.repeat(d, bands.size)
    ff = np.tile(bands, d.size)
    if fit_gamma is None:
        fit_gamma = bands.size > 1
    return fit_pathloss(dd, ff, dataset.values.ravel(), fit_gamma=fit_gamma)
