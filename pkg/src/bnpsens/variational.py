"""Variational family: unconstrained global parameters, logit-normal stick
moments, and the closed-form optimal responsibilities.

The family is

    q(nu_k)      = logit-normal(stick_loc_k, stick_scale_k)   k = 1..K-1
    q(mu_k, Sigma_k) = delta functions at the parameterized values
    q(z_n)       = Categorical(r_n)

with the final stick pinned at nu_K = 1 so the K weights sum to one at
the truncation level.  Covariances are parameterized by a packed
lower-triangular Cholesky factor with log-diagonal, so every flat vector
maps to a valid state.
"""

from dataclasses import dataclass
from typing import Tuple

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import expit, logit  # noqa: F401  (logit re-exported for callers)

from .model import Dataset
from .quadrature import normal_nodes_weights

_LOG_2PI = np.log(2.0 * np.pi)
_HALF_LOG_2PI_E = 0.5 * (np.log(2.0 * np.pi) + 1.0)


def tril_size(dim: int) -> int:
    """Number of entries in a packed lower triangle of a dim x dim matrix."""
    return dim * (dim + 1) // 2


def param_count(K: int, dim: int) -> int:
    """Length of the flat parameter vector for K clusters in dim dimensions."""
    return 2 * (K - 1) + K * dim + K * tril_size(dim)


@dataclass(frozen=True)
class GlobalParams:
    """Unconstrained variational parameters for the global latents.

    Attributes
    ----------
    stick_loc : (K-1,) array
        Normal location of each free stick in the logit coordinate.
    stick_log_scale : (K-1,) array
        Log of the normal scale of each free stick.
    means : (K, D) array
        Cluster means (delta-function variational posteriors).
    cov_chol : (K, D(D+1)/2) array
        Packed lower-triangular Cholesky factors, row-major, with the
        diagonal stored as its log; Sigma_k = L_k L_k^T (before any
        covariance floor the model spec applies).
    """

    stick_loc: np.ndarray
    stick_log_scale: np.ndarray
    means: np.ndarray
    cov_chol: np.ndarray

    def __post_init__(self):
        loc = np.asarray(self.stick_loc, dtype=float).ravel()
        lsc = np.asarray(self.stick_log_scale, dtype=float).ravel()
        means = np.atleast_2d(np.asarray(self.means, dtype=float))
        chol = np.atleast_2d(np.asarray(self.cov_chol, dtype=float))
        K, D = means.shape
        if loc.shape != (K - 1,) or lsc.shape != (K - 1,):
            raise ValueError(f"expected {K - 1} free sticks for K={K} clusters, "
                             f"got loc {loc.shape}, log_scale {lsc.shape}")
        if chol.shape != (K, tril_size(D)):
            raise ValueError(f"cov_chol must be {K} x {tril_size(D)}, got {chol.shape}")
        for name, arr in (("stick_loc", loc), ("stick_log_scale", lsc),
                          ("means", means), ("cov_chol", chol)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains non-finite entries")
        object.__setattr__(self, "stick_loc", loc)
        object.__setattr__(self, "stick_log_scale", lsc)
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "cov_chol", chol)

    @property
    def K(self) -> int:
        return self.means.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @property
    def stick_scale(self) -> np.ndarray:
        return np.exp(self.stick_log_scale)


@dataclass(frozen=True)
class Responsibilities:
    """Soft assignments r[n, k] of each point to each cluster."""

    r: np.ndarray

    def __post_init__(self):
        r = np.atleast_2d(np.asarray(self.r, dtype=float))
        if np.any(r < 0.0):
            raise ValueError("responsibilities must be nonnegative")
        row_sums = r.sum(axis=1)
        if np.max(np.abs(row_sums - 1.0)) > 1e-12:
            raise ValueError("responsibility rows must sum to 1 within 1e-12")
        object.__setattr__(self, "r", r)


@dataclass(frozen=True)
class StickMoments:
    """Quadrature moments of the K-1 free sticks and their total entropy."""

    e_log_nu: np.ndarray
    e_log_1m_nu: np.ndarray
    entropy: float

    def __post_init__(self):
        a = np.asarray(self.e_log_nu, dtype=float).ravel()
        b = np.asarray(self.e_log_1m_nu, dtype=float).ravel()
        if a.shape != b.shape:
            raise ValueError("moment vectors must have equal length")
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b)) and np.isfinite(self.entropy)):
            raise ValueError("stick moments must be finite")
        object.__setattr__(self, "e_log_nu", a)
        object.__setattr__(self, "e_log_1m_nu", b)


# ---------------------------------------------------------------------------
# Flat-vector plumbing
# ---------------------------------------------------------------------------

def flatten(eta: GlobalParams) -> np.ndarray:
    """Concatenate [stick_loc, stick_log_scale, means, cov_chol] row-major."""
    return np.concatenate([eta.stick_loc, eta.stick_log_scale,
                           eta.means.ravel(), eta.cov_chol.ravel()])


def unflatten(vec, K: int, dim: int) -> GlobalParams:
    """Inverse of :func:`flatten` for the given shape; exact round-trip."""
    vec = np.asarray(vec, dtype=float).ravel()
    expected = param_count(K, dim)
    if vec.shape[0] != expected:
        raise ValueError(f"expected vector of length {expected} for K={K}, D={dim}, "
                         f"got {vec.shape[0]}")
    kf = K - 1
    pieces = np.split(vec, np.cumsum([kf, kf, K * dim]))
    return GlobalParams(stick_loc=pieces[0], stick_log_scale=pieces[1],
                        means=pieces[2].reshape(K, dim),
                        cov_chol=pieces[3].reshape(K, tril_size(dim)))


def pack_cholesky(L: np.ndarray) -> np.ndarray:
    """Pack a lower-triangular factor row-major, taking log of the diagonal."""
    L = np.asarray(L, dtype=float)
    d = L.shape[0]
    if np.any(np.diag(L) <= 0):
        raise ValueError("Cholesky diagonal must be positive")
    rows, cols = np.tril_indices(d)
    packed = L[rows, cols].copy()
    packed[rows == cols] = np.log(np.diag(L))
    return packed


def unpack_cholesky(packed, dim: int) -> np.ndarray:
    """Rebuild the lower-triangular factor, exponentiating the diagonal."""
    packed = np.asarray(packed, dtype=float).ravel()
    if packed.shape[0] != tril_size(dim):
        raise ValueError(f"expected {tril_size(dim)} packed entries, got {packed.shape[0]}")
    L = np.zeros((dim, dim))
    rows, cols = np.tril_indices(dim)
    L[rows, cols] = packed
    L[np.diag_indices(dim)] = np.exp(np.diag(L))
    return L


def cluster_covariances(eta: GlobalParams, cov_floor: float = 0.0) -> np.ndarray:
    """Implied covariances Sigma_k = L_k L_k^T + cov_floor * I, shape (K, D, D)."""
    out = np.empty((eta.K, eta.dim, eta.dim))
    eye = np.eye(eta.dim)
    for k in range(eta.K):
        L = unpack_cholesky(eta.cov_chol[k], eta.dim)
        out[k] = L @ L.T + cov_floor * eye
    return out


# ---------------------------------------------------------------------------
# Stick moments
# ---------------------------------------------------------------------------

def _log_sigmoid(x: np.ndarray) -> np.ndarray:
    return -np.logaddexp(0.0, -x)


def stick_moments(loc: float, scale: float, n_quad: int = 30) -> Tuple[float, float, float]:
    """Moments of one logit-normal stick by quadrature.

    For x ~ N(loc, scale^2) and nu = sigmoid(x), returns
    (E[log nu], E[log(1 - nu)], entropy of nu).  The entropy uses the
    change-of-variables identity
    H(nu) = 0.5 log(2 pi e scale^2) + E[log nu] + E[log(1 - nu)].

    Parameters
    ----------
    loc, scale : float
        Normal parameters in the logit coordinate; scale must be positive.
    n_quad : int
        Quadrature nodes (>= 2).
    """
    x, w = normal_nodes_weights(loc, scale, n_quad)
    e_log_nu = float(np.dot(w, _log_sigmoid(x)))
    e_log_1m = float(np.dot(w, _log_sigmoid(-x)))
    entropy = _HALF_LOG_2PI_E + np.log(scale) + e_log_nu + e_log_1m
    return e_log_nu, e_log_1m, float(entropy)


def all_stick_moments(eta: GlobalParams, n_quad: int = 30) -> StickMoments:
    """Moments of every free stick; entropy is summed over sticks."""
    if eta.K == 1:
        return StickMoments(np.zeros(0), np.zeros(0), 0.0)
    x, w = normal_nodes_weights(eta.stick_loc, eta.stick_scale, n_quad)
    e_log_nu = np.sum(w * _log_sigmoid(x), axis=1)
    e_log_1m = np.sum(w * _log_sigmoid(-x), axis=1)
    entropy = np.sum(_HALF_LOG_2PI_E + eta.stick_log_scale + e_log_nu + e_log_1m)
    return StickMoments(e_log_nu, e_log_1m, float(entropy))


def expected_log_weights(moments: StickMoments) -> np.ndarray:
    """E[log pi_k] for k = 1..K from the stick moments (final stick pinned at 1).

    E[log pi_k] = E[log nu_k] + sum_{j<k} E[log(1 - nu_j)], with
    log nu_K = 0 for the pinned final stick.
    """
    e_log_nu = np.append(moments.e_log_nu, 0.0)
    prefix = np.concatenate([[0.0], np.cumsum(moments.e_log_1m_nu)])
    return e_log_nu + prefix


# ---------------------------------------------------------------------------
# Responsibilities
# ---------------------------------------------------------------------------

def log_assignment_scores(eta: GlobalParams, data: Dataset,
                          n_quad: int = 30, cov_floor: float = 0.0) -> np.ndarray:
    """Per-point, per-cluster scores s[n, k] = E[log pi_k] + log N(y_n | mu_k, Sigma_k)."""
    pts = data.points
    if pts.shape[1] != eta.dim:
        raise ValueError(f"data dimension {pts.shape[1]} does not match parameters ({eta.dim})")
    e_log_pi = expected_log_weights(all_stick_moments(eta, n_quad))
    covs = cluster_covariances(eta, cov_floor)
    scores = np.empty((pts.shape[0], eta.K))
    for k in range(eta.K):
        chol = np.linalg.cholesky(covs[k])
        z = solve_triangular(chol, (pts - eta.means[k]).T, lower=True)
        scores[:, k] = (e_log_pi[k] - 0.5 * eta.dim * _LOG_2PI
                        - np.sum(np.log(np.diag(chol))) - 0.5 * np.sum(z * z, axis=0))
    return scores


def softmax_rows(scores: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max-shift stabilization (shift-invariant)."""
    s = np.atleast_2d(np.asarray(scores, dtype=float))
    s = s - s.max(axis=1, keepdims=True)
    r = np.exp(s)
    r /= r.sum(axis=1, keepdims=True)
    return r


def optimal_responsibilities(eta: GlobalParams, data: Dataset,
                             n_quad: int = 30, cov_floor: float = 0.0) -> Responsibilities:
    """Closed-form optimal soft assignments r[n, k] = softmax_k(s[n, k]).

    This is the exact minimizer of the KL over row-stochastic assignment
    matrices at fixed global parameters; rows are normalized with
    log-sum-exp stabilization.
    """
    s = log_assignment_scores(eta, data, n_quad=n_quad, cov_floor=cov_floor)
    return Responsibilities(softmax_rows(s))
