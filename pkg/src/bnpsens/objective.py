"""Profiled KL objective: negative ELBO with responsibilities at their
closed-form optimum.

The per-point responsibilities enter through the identity

    sum_k r_nk s_nk - sum_k r_nk log r_nk  =  logsumexp_k s_nk
                                              at  r_n = softmax(s_n),

so substituting the optimal assignments turns the data and categorical-
entropy terms into one log-sum-exp per observation, and differentiating
the result automatically applies the envelope theorem.

:class:`KLAssembly` builds the whole objective as a single JAX-traced
function of the flat parameter vector with the prior concentration and
the perturbation size as traced scalars, then caches jitted evaluators
for values, gradients, Hessians, and mixed second derivatives.  The
companion :func:`kl_with_responsibilities` recomputes the unprofiled KL
with explicit responsibilities through the plain numpy modules; the two
routes agreeing at the optimal responsibilities is a standing test.

Values are negative ELBOs: equal to the true KL divergence up to the
additive log-evidence constant (and the dropped delta-function entropy
constants), which no derivative ever sees.
"""

import jax
import jax.numpy as jnp
import numpy as np
from jax.scipy.linalg import solve_triangular as jax_solve_triangular
from jax.scipy.special import logsumexp, multigammaln

from .model import ClusterParams, Dataset, ModelSpec, StickPriorSpec, log_conjugate_prior
from .quadrature import HALF_WIDTH, expect_under_normal, panel_rule
from .variational import (
    GlobalParams,
    Responsibilities,
    all_stick_moments,
    cluster_covariances,
    flatten,
    log_assignment_scores,
    param_count,
    tril_size,
    unflatten,
)

_LOG_2PI = np.log(2.0 * np.pi)
_HALF_LOG_2PI_E = 0.5 * (np.log(2.0 * np.pi) + 1.0)


class ObjectiveError(ArithmeticError):
    """The objective evaluated to a non-finite value."""


def _log_sigmoid(x):
    return -jnp.logaddexp(0.0, -x)


class KLAssembly:
    """Compiled profiled-KL evaluator for one (data, model) pair.

    Parameters
    ----------
    data : Dataset
    model : ModelSpec
        Supplies K, the conjugate prior, quadrature size, covariance
        floor, and the base concentration ``alpha0``.
    log_tilt : callable, optional
        Log of a multiplicative stick-prior perturbation, evaluated on
        stick fractions in (0, 1).  Must be JAX-traceable.  Required for
        the ``delta`` direction; the tilt normalizer is constant in the
        parameters and deliberately excluded.

    All evaluators accept the flat parameter vector and keyword scalars
    ``alpha`` (defaults to ``model.alpha0``) and ``delta`` (defaults to
    0); both are traced, so one compilation serves every setting.
    """

    def __init__(self, data: Dataset, model: ModelSpec, log_tilt=None):
        self.data = data
        self.model = model
        self.log_tilt = log_tilt
        K, D = model.K, data.dim
        self.K, self.D = K, D

        points = jnp.asarray(data.points)
        t, gw = panel_rule(model.n_quad)
        t, gw = jnp.asarray(t), jnp.asarray(gw)
        rows, cols = np.tril_indices(D)
        diag_slots = np.flatnonzero(rows == cols)
        rows, cols = jnp.asarray(rows), jnp.asarray(cols)
        niw = model.niw
        prior_mean = jnp.asarray(niw.prior_mean)
        psi_chol = jnp.asarray(np.linalg.cholesky(niw.scale_matrix))
        logdet_psi = float(np.linalg.slogdet(niw.scale_matrix)[1])
        # constant part of the inverse-Wishart normalizer, per cluster
        iw_const = (0.5 * niw.dof * logdet_psi - 0.5 * niw.dof * D * np.log(2.0)
                    - multigammaln(0.5 * niw.dof, D))
        kappa, dof = niw.mean_scale, niw.dof
        floor = model.cov_floor
        kf = K - 1
        n_mean = K * D

        def split(x):
            loc = x[:kf]
            lsc = x[kf:2 * kf]
            means = x[2 * kf:2 * kf + n_mean].reshape(K, D)
            packed = x[2 * kf + n_mean:].reshape(K, tril_size(D))
            return loc, lsc, means, packed

        def stick_rule(loc, scale):
            lo = (loc - HALF_WIDTH * scale)[:, None]
            hi = (loc + HALF_WIDTH * scale)[:, None]
            mid = jnp.clip(0.0, lo, hi)
            xs, ws = [], []
            for a, b in ((lo, mid), (mid, hi)):
                center = 0.5 * (b + a)
                half = 0.5 * (b - a)
                x = center + half * t
                logpdf = (-0.5 * _LOG_2PI - jnp.log(scale)[:, None]
                          - 0.5 * ((x - loc[:, None]) / scale[:, None]) ** 2)
                xs.append(x)
                ws.append(half * gw * jnp.exp(logpdf))
            return jnp.concatenate(xs, axis=1), jnp.concatenate(ws, axis=1)

        def kl(x, alpha, delta):
            loc, lsc, means, packed = split(x)
            scale = jnp.exp(lsc)

            # stick moments by quadrature in the logit coordinate
            xq, wq = stick_rule(loc, scale)
            e_log_nu = jnp.sum(wq * _log_sigmoid(xq), axis=1)
            e_log_1m = jnp.sum(wq * _log_sigmoid(-xq), axis=1)
            e_log_pi = (jnp.concatenate([e_log_nu, jnp.zeros(1)])
                        + jnp.concatenate([jnp.zeros(1), jnp.cumsum(e_log_1m)]))

            # cluster covariances and their factors
            L = jnp.zeros((K, D, D)).at[:, rows, cols].set(packed)
            L = L.at[:, rows[diag_slots], cols[diag_slots]].set(
                jnp.exp(packed[:, diag_slots]))
            sigma = L @ jnp.swapaxes(L, 1, 2) + floor * jnp.eye(D)
            chol = jnp.linalg.cholesky(sigma)
            logdet = 2.0 * jnp.sum(jnp.log(jnp.diagonal(chol, axis1=1, axis2=2)), axis=1)

            # per-point, per-cluster scores and the profiled data term
            diffs = points.T[None, :, :] - means[:, :, None]          # (K, D, N)
            z = jax_solve_triangular(chol, diffs, lower=True)
            quad = jnp.sum(z * z, axis=1)                             # (K, N)
            scores = (e_log_pi[:, None] - 0.5 * D * _LOG_2PI
                      - 0.5 * logdet[:, None] - 0.5 * quad)
            data_term = jnp.sum(logsumexp(scores, axis=0))

            # stick prior, optionally tilted (normalizer dropped: constant in x)
            stick_prior = kf * jnp.log(alpha) + (alpha - 1.0) * jnp.sum(e_log_1m)
            if log_tilt is not None:
                tilt = jnp.sum(wq * log_tilt(jax.nn.sigmoid(xq)))
                stick_prior = stick_prior + delta * tilt

            # conjugate prior on the delta-function cluster parameters
            dm = means - prior_mean
            zm = jax_solve_triangular(chol, dm[:, :, None], lower=True)[:, :, 0]
            log_n = (-0.5 * D * _LOG_2PI + 0.5 * D * jnp.log(kappa) - 0.5 * logdet
                     - 0.5 * kappa * jnp.sum(zm * zm, axis=1))
            w = jax_solve_triangular(chol, jnp.broadcast_to(psi_chol, (K, D, D)),
                                     lower=True)
            trace_term = jnp.sum(w * w, axis=(1, 2))
            log_iw = iw_const - 0.5 * (dof + D + 1.0) * logdet - 0.5 * trace_term
            niw_term = jnp.sum(log_n + log_iw)

            stick_entropy = jnp.sum(_HALF_LOG_2PI_E + lsc + e_log_nu + e_log_1m)

            return -(data_term + stick_prior + niw_term + stick_entropy)

        self._kl = kl
        self._value = jax.jit(kl)
        self._value_grad = jax.jit(jax.value_and_grad(kl))
        self._hessian = jax.jit(jax.jacfwd(jax.grad(kl, argnums=0), argnums=0))
        self._cross_alpha = jax.jit(jax.jacfwd(jax.grad(kl, argnums=0), argnums=1))
        self._cross_delta = jax.jit(jax.jacfwd(jax.grad(kl, argnums=0), argnums=2))

    # -- evaluators ---------------------------------------------------------

    @property
    def n_params(self) -> int:
        return param_count(self.K, self.D)

    def _args(self, x, alpha, delta):
        x = np.asarray(x, dtype=float).ravel()
        if x.shape[0] != self.n_params:
            raise ValueError(f"expected parameter vector of length {self.n_params}, "
                             f"got {x.shape[0]}")
        a = self.model.alpha0 if alpha is None else float(alpha)
        return jnp.asarray(x), a, float(delta)

    def value(self, x, alpha=None, delta=0.0) -> float:
        val = float(self._value(*self._args(x, alpha, delta)))
        if not np.isfinite(val):
            raise ObjectiveError("objective overflowed at "
                                 + self._offending_component(x))
        return val

    def value_and_grad(self, x, alpha=None, delta=0.0):
        v, g = self._value_grad(*self._args(x, alpha, delta))
        return float(v), np.asarray(g)

    def hessian(self, x, alpha=None, delta=0.0) -> np.ndarray:
        h = np.asarray(self._hessian(*self._args(x, alpha, delta)))
        return 0.5 * (h + h.T)

    def cross_alpha(self, x, alpha=None, delta=0.0) -> np.ndarray:
        """d^2 KL / dx d(alpha), shape (P,)."""
        return np.asarray(self._cross_alpha(*self._args(x, alpha, delta)))

    def cross_delta(self, x, alpha=None, delta=0.0) -> np.ndarray:
        """d^2 KL / dx d(delta), shape (P,); requires a log_tilt."""
        if self.log_tilt is None:
            raise ValueError("assembly was built without a log_tilt; "
                             "the delta direction is undefined")
        return np.asarray(self._cross_delta(*self._args(x, alpha, delta)))

    # -- scalar fields for the derivative engine -----------------------------

    def alpha_field(self):
        """f(x, eps) = KL at concentration alpha0 + eps[0] (delta = 0)."""
        base = self.model.alpha0

        def field(x, eps):
            return self._kl(x, base + eps[0], 0.0)

        return field

    def delta_field(self):
        """f(x, eps) = KL at delta = eps[0], base concentration."""
        if self.log_tilt is None:
            raise ValueError("assembly was built without a log_tilt; "
                             "the delta direction is undefined")
        base = self.model.alpha0

        def field(x, eps):
            return self._kl(x, base, eps[0])

        return field

    # -- failure diagnosis ----------------------------------------------------

    def _offending_component(self, x) -> str:
        try:
            eta = unflatten(np.asarray(x, dtype=float), self.K, self.D)
        except ValueError:
            return "the parameter vector (wrong shape)"
        for k in range(self.K):
            if not np.all(np.isfinite(eta.means[k])) or \
               not np.all(np.isfinite(eta.cov_chol[k])):
                return f"component {k}"
            with np.errstate(over="ignore", invalid="ignore"):
                diag = np.exp(eta.cov_chol[k][np.flatnonzero(
                    np.tril_indices(self.D)[0] == np.tril_indices(self.D)[1])])
            if not np.all(np.isfinite(diag)):
                return f"component {k}"
        for j in range(self.K - 1):
            if not (np.isfinite(eta.stick_loc[j]) and np.isfinite(eta.stick_log_scale[j])):
                return f"stick {j}"
            with np.errstate(over="ignore"):
                if not np.isfinite(np.exp(eta.stick_log_scale[j])):
                    return f"stick {j}"
        return "an unidentified term"


def profiled_kl(eta: GlobalParams, data: Dataset, model: ModelSpec,
                pert: StickPriorSpec) -> float:
    """Negative ELBO at the closed-form optimal responsibilities.

    Convenience wrapper that builds a fresh :class:`KLAssembly`; for
    repeated evaluation (optimization, sweeps) construct the assembly
    once and reuse its jitted evaluators.
    """
    asm = KLAssembly(data, model, log_tilt=pert.log_tilt)
    return asm.value(flatten(eta), alpha=pert.alpha, delta=pert.delta)


def kl_with_responsibilities(eta: GlobalParams, resp, data: Dataset,
                             model: ModelSpec, pert: StickPriorSpec) -> float:
    """Unprofiled KL (negative ELBO) at explicit responsibilities.

    Plain-numpy route through the model and variational modules, kept
    independent of the traced assembly.  Minimized over row-stochastic
    ``resp`` exactly at ``optimal_responsibilities``.
    """
    r = resp.r if isinstance(resp, Responsibilities) else np.atleast_2d(np.asarray(resp, dtype=float))
    s = log_assignment_scores(eta, data, n_quad=model.n_quad, cov_floor=model.cov_floor)
    if r.shape != s.shape:
        raise ValueError(f"responsibilities have shape {r.shape}, expected {s.shape}")
    sm = all_stick_moments(eta, model.n_quad)

    r_log_r = np.where(r > 0.0, r * np.log(np.where(r > 0.0, r, 1.0)), 0.0)
    data_term = float(np.sum(r * s) - np.sum(r_log_r))

    stick_prior = (model.K - 1) * np.log(pert.alpha) + (pert.alpha - 1.0) * sm.e_log_1m_nu.sum()
    if pert.log_tilt is not None and pert.delta != 0.0:
        from scipy.special import expit
        tilt = expect_under_normal(lambda xv: np.asarray(pert.log_tilt(expit(xv))),
                                   eta.stick_loc, eta.stick_scale, model.n_quad)
        stick_prior += pert.delta * float(np.sum(tilt))

    covs = cluster_covariances(eta, model.cov_floor)
    niw_term = sum(log_conjugate_prior(ClusterParams(eta.means[k], covs[k]), model.niw)
                   for k in range(model.K))

    return float(-(data_term + stick_prior + niw_term + sm.entropy))
