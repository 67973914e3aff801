"""Shared generators and the finite-difference oracle for the test suite."""

import numpy as np
from gruwe.data import EventSequence, IrregularSeries
from gruwe.params import GruweParams


def random_params(task, D, H, out, seed, decay_scale=0.5):
    """Parameters with every tensor randomized, decay weights of both signs."""
    params = GruweParams.init(task, D, H, out, seed)
    rng = np.random.default_rng(1000 + seed)
    for p in params:
        p.value[...] = rng.normal(scale=0.6, size=p.shape)
    params["w_gamma"].value[...] = rng.normal(scale=decay_scale, size=H)
    params["b_gamma"].value[...] = rng.normal(scale=decay_scale, size=H)
    return params


def random_series(rng, n, D, p_miss=0.3, scale=1.0):
    times = np.cumsum(rng.uniform(0.1, 1.0, size=n))
    mask = (rng.random((n, D)) >= p_miss).astype(float)
    values = rng.normal(scale=scale, size=(n, D)) * mask
    return IrregularSeries(times, values, mask)


def random_events(rng, n, K, gap=0.7):
    times = np.cumsum(rng.uniform(0.2, 2.0, size=n) * gap)
    types = rng.integers(K, size=n)
    return EventSequence(times, types, float(times[-1] + rng.uniform(0.1, 1.5)))


def numeric_grads(loss_fn, params, step=1e-5):
    """Central finite differences of ``loss_fn(params)`` for every entry."""
    out = {}
    for p in params:
        g = np.zeros_like(p.value)
        flat, gflat = p.value.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + step
            up = loss_fn(params)
            flat[i] = keep - step
            down = loss_fn(params)
            flat[i] = keep
            gflat[i] = (up - down) / (2 * step)
        out[p.name] = g
    return out


def max_relative_error(analytic, numeric, floor=1e-8):
    """Largest per-tensor ||a - n|| / max(||a||, ||n||, floor)."""
    worst = 0.0
    for name, n in numeric.items():
        a = analytic[name]
        denom = max(np.linalg.norm(a), np.linalg.norm(n), floor)
        worst = max(worst, float(np.linalg.norm(a - n) / denom))
    return worst


def constant_tpp(K, H, rates, seed=0):
    """A tpp model whose intensities are the constants ``rates``."""
    from gruwe.numerics import softplus_inverse

    params = GruweParams.init("tpp", K, H, K, seed)
    params["w_lambda"].value[...] = 0.0
    params["b_lambda"].value[...] = softplus_inverse(np.asarray(rates, dtype=float))
    return params
