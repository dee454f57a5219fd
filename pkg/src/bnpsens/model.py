"""Generative model: stick-breaking weights, stick prior, Gaussian clusters.

Everything here is an exact log-density evaluated in log space.  These
functions validate their inputs and are the reference surface for the
JAX-traced objective assembly, which re-uses the same formulas on
batched arrays (see :mod:`bnpsens.objective`).
"""

from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
from scipy.special import multigammaln

_LOG_2PI = np.log(2.0 * np.pi)


# ---------------------------------------------------------------------------
# Specs and containers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Dataset:
    """An N x D matrix of observations.

    Rows are data points, columns are measured features.  All entries
    must be finite.
    """

    points: np.ndarray
    column_names: tuple = ()

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        if pts.ndim != 2 or pts.shape[0] < 1 or pts.shape[1] < 1:
            raise ValueError(f"points must be an N x D matrix with N, D >= 1, got shape {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise ValueError("points contain non-finite entries")
        object.__setattr__(self, "points", pts)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]


@dataclass(frozen=True)
class StickPriorSpec:
    """Prior on one stick fraction: Beta(1, alpha), optionally tilted.

    ``log_tilt`` is the log of a positive multiplicative perturbation of
    the base density, and ``delta`` in [0, 1] interpolates between the
    base prior (0) and the fully tilted prior (1).  The tilted density
    is used unnormalized; its normalizer is constant in the variational
    parameters (see :func:`bnpsens.perturbations.contaminated_log_prior`
    for the normalized version).
    """

    alpha: float
    log_tilt: Optional[Callable] = None
    delta: float = 0.0

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if not 0.0 <= self.delta <= 1.0:
            raise ValueError(f"delta must lie in [0, 1], got {self.delta}")


@dataclass(frozen=True)
class NiwPriorSpec:
    """Normal-inverse-Wishart prior on one cluster's (mean, covariance)."""

    prior_mean: np.ndarray
    mean_scale: float
    dof: float
    scale_matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.prior_mean, dtype=float).ravel()
        s = np.asarray(self.scale_matrix, dtype=float)
        d = m.shape[0]
        if self.mean_scale <= 0:
            raise ValueError("mean_scale must be positive")
        if not self.dof > d - 1:
            raise ValueError(f"dof must exceed D - 1 = {d - 1}, got {self.dof}")
        if s.shape != (d, d):
            raise ValueError(f"scale_matrix must be {d} x {d}, got {s.shape}")
        if not np.allclose(s, s.T, atol=1e-10):
            raise ValueError("scale_matrix must be symmetric")
        try:
            np.linalg.cholesky(s)
        except np.linalg.LinAlgError as exc:
            raise ValueError("scale_matrix must be positive definite") from exc
        object.__setattr__(self, "prior_mean", m)
        object.__setattr__(self, "scale_matrix", s)

    @property
    def dim(self) -> int:
        return self.prior_mean.shape[0]


@dataclass(frozen=True)
class ClusterParams:
    """One Gaussian cluster: mean vector and SPD covariance."""

    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.mean, dtype=float).ravel()
        c = np.asarray(self.covariance, dtype=float)
        if c.shape != (m.shape[0], m.shape[0]):
            raise ValueError(f"covariance must be {m.shape[0]} x {m.shape[0]}, got {c.shape}")
        if not np.allclose(c, c.T, atol=1e-10):
            raise ValueError("covariance must be symmetric")
        object.__setattr__(self, "mean", m)
        object.__setattr__(self, "covariance", c)


@dataclass(frozen=True)
class ModelSpec:
    """Truncated model settings: component count, priors, numerics.

    ``cov_floor``, when positive, is added to every parameterized cluster
    covariance (Sigma = L L^T + cov_floor * I).  The inverse-Wishart prior
    already keeps covariances away from singularity, so the floor defaults
    to zero: a positive floor lets the Cholesky factor of a tight cluster
    collapse onto it, which leaves flat directions in the objective and a
    singular Hessian at the optimum.
    """

    K: int
    alpha0: float
    niw: NiwPriorSpec
    n_quad: int = 30
    cov_floor: float = 0.0

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if self.alpha0 <= 0:
            raise ValueError("alpha0 must be positive")
        if self.n_quad < 2:
            raise ValueError("n_quad must be >= 2")
        if self.cov_floor < 0:
            raise ValueError("cov_floor must be nonnegative")

    @classmethod
    def for_data(cls, data: Dataset, K: int, alpha0: float,
                 mean_scale: float = 0.1, dof_extra: float = 3.0,
                 n_quad: int = 30, cov_floor: float = 0.0) -> "ModelSpec":
        """Default dispersed conjugate prior built from data moments."""
        pts = data.points
        cov = np.cov(pts, rowvar=False, ddof=1)
        cov = np.atleast_2d(cov)
        niw = NiwPriorSpec(prior_mean=pts.mean(axis=0), mean_scale=mean_scale,
                           dof=data.dim + dof_extra, scale_matrix=cov)
        return cls(K=K, alpha0=alpha0, niw=niw, n_quad=n_quad, cov_floor=cov_floor)

    def with_alpha(self, alpha0: float) -> "ModelSpec":
        return replace(self, alpha0=alpha0)


# ---------------------------------------------------------------------------
# Log densities
# ---------------------------------------------------------------------------

def sticks_to_weights(nu) -> np.ndarray:
    """Mixture weights from stick fractions: w_k = nu_k * prod_{j<k}(1 - nu_j).

    Each fraction must lie in (0, 1].  The output is a sub-probability
    vector; appending a final fraction of 1 makes it sum to one exactly.
    """
    nu = np.asarray(nu, dtype=float)
    if nu.ndim != 1 or nu.size < 1:
        raise ValueError("nu must be a nonempty vector")
    if np.any(nu <= 0.0) or np.any(nu > 1.0):
        raise ValueError("stick fractions must lie in (0, 1]")
    remaining = np.concatenate([[1.0], np.cumprod(1.0 - nu[:-1])])
    return nu * remaining


def log_stick_prior(nu: float, spec: StickPriorSpec) -> float:
    """Log density of one stick fraction under Beta(1, alpha), tilted.

    Returns log(alpha) + (alpha - 1) log(1 - nu) + delta * log_tilt(nu).
    Unnormalized whenever delta > 0: the tilt normalizer does not depend
    on the variational parameters and is handled separately.
    """
    nu = float(nu)
    if not 0.0 < nu < 1.0:
        raise ValueError(f"stick fraction must lie strictly inside (0, 1), got {nu}")
    out = np.log(spec.alpha) + (spec.alpha - 1.0) * np.log1p(-nu)
    if spec.delta != 0.0 and spec.log_tilt is not None:
        out = out + spec.delta * float(spec.log_tilt(nu))
    return float(out)


def log_gaussian(y, params: ClusterParams) -> float:
    """Multivariate normal log density of one observation."""
    y = np.asarray(y, dtype=float).ravel()
    mean, cov = params.mean, params.covariance
    if y.shape != mean.shape:
        raise ValueError(f"observation has dimension {y.shape[0]}, cluster has {mean.shape[0]}")
    chol = np.linalg.cholesky(cov)  # raises LinAlgError if not PD
    z = _solve_lower(chol, y - mean)
    d = y.shape[0]
    return float(-0.5 * d * _LOG_2PI - np.sum(np.log(np.diag(chol))) - 0.5 * np.dot(z, z))


def _solve_lower(chol: np.ndarray, b: np.ndarray) -> np.ndarray:
    from scipy.linalg import solve_triangular
    return solve_triangular(chol, b, lower=True)


def log_conjugate_prior(params: ClusterParams, spec: NiwPriorSpec) -> float:
    """Normal-inverse-Wishart log density of one cluster's parameters.

    log N(mean | prior_mean, covariance / mean_scale)
    + log IW(covariance | scale_matrix, dof).
    """
    d = spec.dim
    if params.mean.shape[0] != d:
        raise ValueError("cluster dimension does not match prior dimension")
    chol = np.linalg.cholesky(params.covariance)
    logdet = 2.0 * np.sum(np.log(np.diag(chol)))

    z = _solve_lower(chol, params.mean - spec.prior_mean)
    log_normal = (-0.5 * d * _LOG_2PI + 0.5 * d * np.log(spec.mean_scale)
                  - 0.5 * logdet - 0.5 * spec.mean_scale * np.dot(z, z))

    w = _solve_lower(chol, spec.scale_matrix)
    trace_term = np.trace(_solve_lower(chol, w.T))  # tr(Psi Sigma^-1)
    sign, logdet_psi = np.linalg.slogdet(spec.scale_matrix)
    log_iw = (0.5 * spec.dof * logdet_psi - 0.5 * spec.dof * d * np.log(2.0)
              - multigammaln(0.5 * spec.dof, d)
              - 0.5 * (spec.dof + d + 1.0) * logdet - 0.5 * trace_term)
    return float(log_normal + log_iw)
