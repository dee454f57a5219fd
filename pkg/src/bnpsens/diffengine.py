"""Derivative contract for scalar objectives f(x, eps).

Exact first and second derivatives of a twice-differentiable scalar
field come from automatic differentiation (JAX), so they carry no
step-size truncation error and repeated evaluation is bitwise
reproducible.  Central finite differences appear only inside
:func:`fd_check` as an independent validation oracle.

The field ``f`` must accept ``(x, eps)`` as arrays and be traceable by
JAX (pure, built from jax/numpy-compatible operations).
"""

from dataclasses import dataclass

import jax
import jax.numpy as jnp
import numpy as np

__all__ = [
    "DerivativeError",
    "DerivativePack",
    "FdCheckReport",
    "gradient",
    "hessian",
    "cross_derivative",
    "derivatives",
    "fd_check",
]

# Central differences lose to roundoff once the step gets tiny: the
# second-difference error grows like eps_machine / step^2.  Below this
# step the report is flagged as untrustworthy.
ROUNDOFF_STEP = 1e-8


class DerivativeError(RuntimeError):
    """A derivative evaluation produced a non-finite entry."""


def _as_jnp(x):
    return jnp.asarray(x, dtype=jnp.float64)


def _checked(arr, what: str) -> np.ndarray:
    arr = np.asarray(arr, dtype=float)
    if not np.all(np.isfinite(arr)):
        idx = tuple(int(i) for i in np.argwhere(~np.isfinite(arr))[0])
        coord = idx[0] if len(idx) == 1 else idx
        raise DerivativeError(f"{what} has non-finite entry at coordinate {coord}")
    return arr


def gradient(f, x, eps) -> np.ndarray:
    """First derivative of f with respect to x at (x, eps)."""
    g = jax.jit(jax.grad(f, argnums=0))(_as_jnp(x), _as_jnp(eps))
    return _checked(g, "gradient")


def hessian(f, x, eps) -> np.ndarray:
    """Second derivative of f with respect to x, symmetrized before return.

    Built as the forward-mode Jacobian of the reverse-mode gradient and
    returned as (M + M^T)/2 so downstream factorizations see an exactly
    symmetric matrix.
    """
    h = jax.jit(jax.jacfwd(jax.grad(f, argnums=0), argnums=0))(_as_jnp(x), _as_jnp(eps))
    h = np.asarray(h, dtype=float)
    return _checked(0.5 * (h + h.T), "hessian")


def cross_derivative(f, x, eps) -> np.ndarray:
    """Mixed second derivative d^2 f / dx d(eps)^T, shape (len(x), len(eps))."""
    c = jax.jit(jax.jacfwd(jax.grad(f, argnums=0), argnums=1))(_as_jnp(x), _as_jnp(eps))
    c = np.asarray(c, dtype=float)
    return _checked(c.reshape(np.size(x), np.size(eps)), "cross derivative")


@dataclass(frozen=True)
class DerivativePack:
    """Gradient, Hessian, and cross derivative of a field at one point."""

    gradient: np.ndarray
    hessian: np.ndarray
    cross: np.ndarray

    def __post_init__(self):
        h = self.hessian
        denom = max(1.0, float(np.max(np.abs(h))))
        if np.max(np.abs(h - h.T)) / denom > 1e-8:
            raise ValueError("hessian is not symmetric to 1e-8 relative")
        for name in ("gradient", "hessian", "cross"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"{name} contains non-finite entries")


def derivatives(f, x, eps) -> DerivativePack:
    """All three derivative blocks at (x, eps)."""
    return DerivativePack(gradient=gradient(f, x, eps),
                          hessian=hessian(f, x, eps),
                          cross=cross_derivative(f, x, eps))


@dataclass(frozen=True)
class FdCheckReport:
    """Worst-case scaled discrepancies between AD and central differences.

    Discrepancies are measured as |ad - fd| / max(1, |ad|), so they read
    as absolute error for small derivatives and relative error for large
    ones.  ``roundoff_dominated`` flags steps so small that the finite
    differences themselves are dominated by floating-point cancellation;
    discrepancies in that regime say nothing about the AD values.
    """

    step: float
    grad_discrepancy: float
    hessian_discrepancy: float
    cross_discrepancy: float
    roundoff_dominated: bool


def _scaled_gap(ad, fd) -> float:
    ad = np.asarray(ad, dtype=float)
    fd = np.asarray(fd, dtype=float)
    return float(np.max(np.abs(ad - fd)) / max(1.0, np.max(np.abs(ad))))


def fd_check(f, x, eps, step: float = 1e-5, n_probes: int = 4) -> FdCheckReport:
    """Validate AD derivatives of f against central finite differences.

    The gradient is checked coordinate by coordinate.  Second-order
    blocks are checked along ``n_probes`` fixed random direction pairs
    (u, v) by comparing u^T H v and u^T C w against four-point central
    differences of f; the second-order step is sqrt(step), the usual
    balance of truncation against cancellation for second differences.

    Parameters
    ----------
    f : callable
        Scalar field f(x, eps), JAX-traceable.
    x, eps : arrays
        Evaluation point.
    step : float
        Central-difference step for the gradient; must be positive.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    x = np.asarray(x, dtype=float).ravel()
    eps = np.asarray(eps, dtype=float).ravel()

    # the FD sweeps evaluate f thousands of times; compile when possible
    try:
        f_fast = jax.jit(f)
        f_fast(_as_jnp(x), _as_jnp(eps))
    except Exception:
        f_fast = f

    def fval(xv, ev):
        return float(f_fast(_as_jnp(xv), _as_jnp(ev)))

    g_ad = gradient(f, x, eps)
    g_fd = np.empty_like(x)
    for i in range(x.size):
        d = np.zeros_like(x)
        d[i] = step
        g_fd[i] = (fval(x + d, eps) - fval(x - d, eps)) / (2.0 * step)
    grad_gap = _scaled_gap(g_ad, g_fd)

    h_ad = hessian(f, x, eps)
    c_ad = cross_derivative(f, x, eps)
    h2 = np.sqrt(step)
    rng = np.random.default_rng(202400)
    hess_gap = 0.0
    cross_gap = 0.0
    for _ in range(n_probes):
        u = rng.normal(size=x.size)
        u /= np.linalg.norm(u)
        v = rng.normal(size=x.size)
        v /= np.linalg.norm(v)
        fd_uv = (fval(x + h2 * (u + v), eps) - fval(x + h2 * (u - v), eps)
                 - fval(x - h2 * (u - v), eps) + fval(x - h2 * (u + v), eps)) / (4.0 * h2 * h2)
        hess_gap = max(hess_gap, _scaled_gap(u @ h_ad @ v, fd_uv))

        w = rng.normal(size=eps.size)
        w /= np.linalg.norm(w)
        fd_uw = (fval(x + h2 * u, eps + h2 * w) - fval(x + h2 * u, eps - h2 * w)
                 - fval(x - h2 * u, eps + h2 * w) + fval(x - h2 * u, eps - h2 * w)) / (4.0 * h2 * h2)
        cross_gap = max(cross_gap, _scaled_gap(u @ c_ad @ w, fd_uw))

    return FdCheckReport(step=float(step), grad_discrepancy=grad_gap,
                         hessian_discrepancy=hess_gap, cross_discrepancy=cross_gap,
                         roundoff_dominated=bool(step < ROUNDOFF_STEP))
