"""Independent reference computations shared by the unit and acceptance tests.

Each one recomputes a library result by a different route (plain loops, full
sorts, finite differences) so agreement is meaningful.
"""

import cmath
import math

import numpy as np

from ckmap import mlp
from ckmap.mlp import MlpPlan


def brute_query(keys, vals, kind, q, k, p):
    """Independent oracle: full sort of all distances, then per-slot rules."""
    d = [math.dist(q, key) for key in keys]
    order = sorted(range(len(d)), key=lambda i: (d[i], i))
    if d[order[0]] < 1e-9:
        return vals[order[0]].copy()
    nb = order[:k]
    w = [1.0 / d[i] ** p for i in nb]
    if kind == "cgm":
        out = []
        for c in range(vals.shape[1]):
            pairs = [(wi, vals[i, c]) for wi, i in zip(w, nb) if np.isfinite(vals[i, c])]
            out.append(sum(a * b for a, b in pairs) / sum(a for a, _ in pairs) if pairs else -np.inf)
        return np.array(out)
    out = []
    for l in range(3):
        pres = [(wi, vals[i, 4 * l: 4 * l + 4]) for wi, i in zip(w, nb) if np.isfinite(vals[i, 4 * l])]
        if len(pres) < math.ceil(k / 2):
            out += [-np.inf, np.nan, np.nan, np.nan]
            continue
        ws = sum(a for a, _ in pres)
        g = sum(a * v[0] for a, v in pres) / ws
        ph = math.atan2(sum(a * math.sin(v[1]) for a, v in pres), sum(a * math.cos(v[1]) for a, v in pres))
        ze = sum(a * v[2] for a, v in pres) / ws
        az = math.atan2(sum(a * math.sin(v[3]) for a, v in pres), sum(a * math.cos(v[3]) for a, v in pres))
        out += [g, ph % (2 * math.pi), ze, az]
    return np.array(out)


def _near_kink(net, x, tol=1e-3):
    _, _, pres = mlp._forward_norm(net, (x - net.x_mean) / net.x_std)
    return any(np.any(np.abs(p) < tol) for p in pres[:-1])


def gradient_check(seed, plan=(3, 7, 5, 2), n=6, h=1e-5):
    """Central differences against backprop; returns the worst relative error."""
    rng = np.random.default_rng(seed)
    net = mlp.init(MlpPlan(plan), seed)
    net.biases = [rng.normal(scale=0.3, size=b.shape) for b in net.biases]
    x = rng.normal(size=(n, plan[0]))
    y = rng.normal(size=(n, plan[-1]))
    assert not _near_kink(net, x)
    _, grads = mlp.loss_and_grad(net, x, y)
    worst = 0.0
    for li in range(len(net.weights)):
        for pi, p in enumerate((net.weights[li], net.biases[li])):
            g = grads[li][pi]
            for idx in np.ndindex(p.shape):
                old = p[idx]
                p[idx] = old + h
                if _near_kink(net, x):
                    p[idx] = old
                    continue
                lp, _ = mlp.loss_and_grad(net, x, y)
                p[idx] = old - h
                lm, _ = mlp.loss_and_grad(net, x, y)
                p[idx] = old
                num = (lp - lm) / (2 * h)
                denom = max(abs(num), abs(g[idx]), 1e-8)
                worst = max(worst, abs(num - g[idx]) / denom)
    return worst


def sinr_oracle(problem, a, g):
    p = 10 ** ((problem.tx_power_dbm - 30) / 10)
    s2 = 10 ** ((problem.noise_dbm - 30) / 10)
    tot = 0.0
    for k in range(problem.n_pairs):
        i = sum(p * g[j, k, a[k]] for j in range(problem.n_pairs) if j != k and a[j] == a[k])
        tot += math.log2(1 + p * g[k, k, a[k]] / (s2 + i))
    return tot


def steering_oracle(n_y, n_z, theta, phi):
    # element-wise, independent of the vectorised builder
    out = []
    for my in range(n_y):
        for mz in range(n_z):
            ph = math.pi * (my * math.sin(theta) * math.sin(phi) + mz * math.cos(theta))
            out.append(cmath.exp(1j * ph) / math.sqrt(n_y * n_z))
    return np.array(out)
