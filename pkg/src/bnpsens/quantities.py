"""Posterior cluster-count summaries.

Three routes to "how many clusters does the posterior use":

* an exact closed form for the expected number of occupied clusters
  under independent categorical assignments,
* Monte-Carlo draws of the assignments, which additionally support a
  strict occupancy threshold ("more than t points"), and
* a predictive count for a hypothetical new dataset of ``n_new`` points,
  built from stick draws and the binomial tail formula, with the
  binomial coefficients evaluated in log space.

Thresholds are strict (``count > t``): at t = 0 the thresholded count
reduces exactly to the number of occupied clusters, which is what makes
the closed form usable as an oracle for the MC path.

All Monte-Carlo paths draw in fixed-size blocks whose generators are
spawned from one master seed, so results are bit-for-bit reproducible
and independent of how blocks are partitioned across workers.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import expit, gammaln, logsumexp, xlog1py, xlogy

from .model import Dataset, ModelSpec
from .variational import GlobalParams, Responsibilities, optimal_responsibilities

_BLOCK = 256  # draws per seeded block; fixed so partitioning cannot change results


@dataclass(frozen=True)
class ClusterCountQuery:
    """What to count and how to estimate it.

    ``threshold`` is strict: a cluster counts when more than ``threshold``
    points land in it.  ``n_new`` is the hypothetical dataset size for
    predictive counts and is ignored in-sample.
    """

    threshold: int = 0
    mode: str = "in_sample"
    n_new: Optional[int] = None
    n_mc: int = 1000
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("in_sample", "predictive"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.threshold < 0:
            raise ValueError("threshold must be nonnegative")
        if self.n_mc < 1:
            raise ValueError("n_mc must be >= 1")
        if self.mode == "predictive" and (self.n_new is None or self.n_new < 1):
            raise ValueError("predictive mode requires n_new >= 1")


@dataclass(frozen=True)
class CountEstimate:
    value: float
    mc_stderr: float
    method: str

    def __post_init__(self):
        if self.method not in ("monte_carlo", "closed_form"):
            raise ValueError(f"unknown method {self.method!r}")
        if not (self.value >= 0.0 and self.mc_stderr >= 0.0):
            raise ValueError("estimate and stderr must be nonnegative")


# ---------------------------------------------------------------------------
# closed form
# ---------------------------------------------------------------------------

def distinct_clusters_closed(resp) -> float:
    """Exact E[number of occupied clusters] = sum_k (1 - prod_n (1 - r_nk))."""
    r = resp.r if isinstance(resp, Responsibilities) else np.atleast_2d(np.asarray(resp, dtype=float))
    with np.errstate(divide="ignore"):
        log_empty = np.sum(np.log1p(-np.minimum(r, 1.0)), axis=0)
    return float(np.sum(-np.expm1(log_empty)))


# ---------------------------------------------------------------------------
# seeded block plumbing
# ---------------------------------------------------------------------------

def _block_sizes(n_total: int):
    sizes = [_BLOCK] * (n_total // _BLOCK)
    if n_total % _BLOCK:
        sizes.append(n_total % _BLOCK)
    return sizes


def _run_blocks(worker, n_total: int, seed: int, n_workers: int) -> np.ndarray:
    """Evaluate ``worker(generator, n_draws)`` per block and concatenate in order."""
    sizes = _block_sizes(n_total)
    children = np.random.SeedSequence(seed).spawn(len(sizes))
    jobs = [(np.random.default_rng(c), b) for c, b in zip(children, sizes)]
    if n_workers > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            parts = list(pool.map(lambda jb: worker(*jb), jobs))
    else:
        parts = [worker(*jb) for jb in jobs]
    return np.concatenate(parts)


def _summarize(vals: np.ndarray) -> CountEstimate:
    value = float(vals.mean())
    stderr = 0.0 if vals.size < 2 else float(vals.std(ddof=1) / np.sqrt(vals.size))
    return CountEstimate(value=value, mc_stderr=stderr, method="monte_carlo")


# ---------------------------------------------------------------------------
# in-sample Monte Carlo
# ---------------------------------------------------------------------------

def clusters_mc(eta: GlobalParams, data: Dataset, query: ClusterCountQuery,
                model: Optional[ModelSpec] = None, n_quad: int = 30,
                cov_floor: float = 0.0, n_workers: int = 1) -> CountEstimate:
    """MC estimate of the strict-thresholded in-sample cluster count.

    Draws assignments z ~ q(z | eta) ``n_mc`` times and averages
    sum_k 1{#(z = k) > threshold}.  Reproducible bit-for-bit given
    (seed, n_mc), regardless of ``n_workers``.
    """
    if query.mode != "in_sample":
        raise ValueError("clusters_mc handles in_sample queries only")
    if model is not None:
        n_quad, cov_floor = model.n_quad, model.cov_floor
    r = optimal_responsibilities(eta, data, n_quad=n_quad, cov_floor=cov_floor).r
    n, K = r.shape
    cum = np.cumsum(r, axis=1)
    cum[:, -1] = 1.0

    def worker(rng, n_draws):
        u = rng.random((n_draws, n))
        z = (u[:, :, None] > cum[None, :, :]).sum(axis=2)
        flat = (z + K * np.arange(n_draws)[:, None]).ravel()
        counts = np.bincount(flat, minlength=n_draws * K).reshape(n_draws, K)
        return (counts > query.threshold).sum(axis=1).astype(float)

    vals = _run_blocks(worker, query.n_mc, query.seed, n_workers)
    return _summarize(vals)


# ---------------------------------------------------------------------------
# predictive counts
# ---------------------------------------------------------------------------

def predictive_count_given_weights(weights, n_new: int, threshold: int) -> np.ndarray:
    """sum_k P(Binomial(n_new, pi_k) > threshold) for given weight vectors.

    ``weights`` is one probability vector or a batch of them; returns one
    value per vector.  The binomial CDF is accumulated in log space.
    """
    w = np.atleast_2d(np.asarray(weights, dtype=float))
    if threshold >= n_new:
        return np.zeros(w.shape[0])
    i = np.arange(threshold + 1, dtype=float)
    log_binom = gammaln(n_new + 1.0) - gammaln(i + 1.0) - gammaln(n_new - i + 1.0)
    terms = (log_binom
             + xlogy(i, w[:, :, None])
             + xlog1py(n_new - i, -w[:, :, None]))
    log_cdf = logsumexp(terms, axis=2)
    contrib = np.clip(-np.expm1(log_cdf), 0.0, 1.0)
    return contrib.sum(axis=1)


def clusters_predictive(eta: GlobalParams, query: ClusterCountQuery,
                        n_workers: int = 1) -> CountEstimate:
    """MC-over-sticks estimate of the predictive thresholded cluster count.

    Each draw samples the free sticks from their logit-normals, forms
    the K weights (final stick pinned at 1), and evaluates the exact
    binomial tail for ``n_new`` future points; the stick draws are the
    only Monte-Carlo element.
    """
    if query.mode != "predictive":
        raise ValueError("clusters_predictive handles predictive queries only")
    loc, scale = eta.stick_loc, eta.stick_scale
    K = eta.K

    def worker(rng, n_draws):
        x = rng.standard_normal((n_draws, K - 1)) * scale + loc
        nu = np.concatenate([expit(x), np.ones((n_draws, 1))], axis=1)
        keep = np.cumprod(1.0 - nu[:, :-1], axis=1)
        weights = nu.copy()
        weights[:, 1:] *= keep
        return predictive_count_given_weights(weights, query.n_new, query.threshold)

    vals = _run_blocks(worker, query.n_mc, query.seed, n_workers)
    return _summarize(vals)


def expected_cluster_count(eta: GlobalParams, data: Optional[Dataset],
                           query: ClusterCountQuery,
                           model: Optional[ModelSpec] = None,
                           n_workers: int = 1) -> CountEstimate:
    """Cluster-count summary at the given parameters (the map eta -> g).

    Dispatches on ``query.mode``.  Accepts any valid parameters — refit
    optima and linear extrapolations alike — so the only linearized step
    in a sensitivity comparison is the parameter prediction itself.
    """
    if query.mode == "in_sample":
        if data is None:
            raise ValueError("in_sample queries need the dataset")
        return clusters_mc(eta, data, query, model=model, n_workers=n_workers)
    return clusters_predictive(eta, query, n_workers=n_workers)
