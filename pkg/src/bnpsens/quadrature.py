"""Fixed-node quadrature for expectations under a normal distribution.

All stick expectations in this package are 1-D integrals of the form
E[f(x)] with x ~ N(loc, scale^2).  They are computed with a two-panel
Gauss-Legendre rule on [loc - HALF_WIDTH*scale, loc + HALF_WIDTH*scale],
split at x = 0.  The split keeps each panel inside a region where the
logistic-type integrands used here are smooth, which gives geometric
convergence in the node count; 30 nodes per panel already agree with a
100-node rule to better than 1e-8 for scales up to 3.

The node/weight tables are plain numpy arrays, so the same rule can be
evaluated either with numpy (public helpers) or inside a JAX-traced
objective (see :mod:`bnpsens.objective`).
"""

from functools import lru_cache

import numpy as np

# Integration half-width in standard deviations.  The normal tail mass
# beyond 8.5 sigma is ~1e-17, below the accuracy of the rule itself.
HALF_WIDTH = 8.5

_LOG_2PI = np.log(2.0 * np.pi)


@lru_cache(maxsize=None)
def panel_rule(n_nodes: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes and weights on [-1, 1] for one panel."""
    if n_nodes < 2:
        raise ValueError(f"n_nodes must be >= 2, got {n_nodes}")
    nodes, weights = np.polynomial.legendre.leggauss(n_nodes)
    return nodes, weights


def normal_nodes_weights(loc, scale, n_nodes: int):
    """Quadrature nodes and weights for E[f(x)], x ~ N(loc, scale^2).

    Returns arrays ``x`` and ``w`` such that ``sum(w * f(x))``
    approximates the expectation.  ``loc`` and ``scale`` may be scalars
    or equal-length vectors; in the vector case the returned arrays have
    shape (len(loc), 2 * n_nodes).
    """
    loc = np.asarray(loc, dtype=float)
    scale = np.asarray(scale, dtype=float)
    if np.any(scale <= 0):
        raise ValueError("scale must be positive")
    t, gl_w = panel_rule(n_nodes)
    loc_b = loc[..., None]
    scale_b = scale[..., None]
    lo = loc_b - HALF_WIDTH * scale_b
    hi = loc_b + HALF_WIDTH * scale_b
    mid = np.clip(0.0, lo, hi)
    xs, ws = [], []
    for a, b in ((lo, mid), (mid, hi)):
        center = 0.5 * (b + a)
        half = 0.5 * (b - a)
        x = center + half * t
        logpdf = -0.5 * _LOG_2PI - np.log(scale_b) - 0.5 * ((x - loc_b) / scale_b) ** 2
        xs.append(x)
        ws.append(half * gl_w * np.exp(logpdf))
    return np.concatenate(xs, axis=-1), np.concatenate(ws, axis=-1)


def expect_under_normal(f, loc, scale, n_nodes: int):
    """Approximate E[f(x)] for x ~ N(loc, scale^2) with the panel rule."""
    x, w = normal_nodes_weights(loc, scale, n_nodes)
    return np.sum(w * f(x), axis=-1)
