"""Multiplicative tilts of the stick-breaking prior.

A perturbation is a log tilt ``log phi`` on (0, 1); the contaminated
stick prior at strength ``delta`` is

    p_c(nu) ∝ p0(nu) * phi(nu)**delta,       p0 = Beta(1, alpha).

The objective consumes the *unnormalized* tilt (the normalizer is
constant in the variational parameters); the normalized density here is
for reporting, plotting and endpoint checks.  Built-in tilts cover the
common cases — swapping the concentration, an exponential tilt, and a
swap to a general Beta — and arbitrary tilts can be loaded from a
two-column table with monotone-cubic interpolation.

All tilt callables are written with ``jax.numpy`` so they can be traced
inside the jitted objective, but accept plain floats/arrays as well.
"""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping

import jax.numpy as jnp
import numpy as np
from scipy.integrate import IntegrationWarning, quad
from scipy.interpolate import PchipInterpolator
from scipy.special import betaln
import warnings

_GRID_SIZE = 1000  # interior validation grid


@dataclass(frozen=True)
class Perturbation:
    """A named multiplicative tilt of the stick prior.

    ``log_tilt`` maps stick values in (0, 1) to log phi; it must be
    finite on the open interval and vectorized over arrays.
    """

    name: str
    log_tilt: Callable
    params: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        grid = np.arange(1, _GRID_SIZE + 1) / (_GRID_SIZE + 1.0)
        with np.errstate(all="ignore"):
            vals = np.asarray(self.log_tilt(grid), dtype=float)
        if vals.shape != grid.shape:
            raise ValueError(f"log_tilt of {self.name!r} is not elementwise")
        if not np.all(np.isfinite(vals)):
            bad = grid[np.flatnonzero(~np.isfinite(vals))[0]]
            raise ValueError(
                f"log_tilt of {self.name!r} is not finite at nu={bad:.6f}")


# ---------------------------------------------------------------------------
# built-in tilts
# ---------------------------------------------------------------------------

def prior_swap(alpha0: float, alpha1: float) -> Perturbation:
    """Tilt whose delta=1 endpoint swaps Beta(1, alpha0) for Beta(1, alpha1)."""
    log_ratio = float(np.log(alpha1 / alpha0))
    diff = float(alpha1 - alpha0)

    def log_tilt(nu):
        return log_ratio + diff * jnp.log1p(-nu)

    return Perturbation(name=f"prior_swap({alpha1:g})", log_tilt=log_tilt,
                        params={"alpha0": float(alpha0), "alpha1": float(alpha1)})


def exp_tilt(c: float) -> Perturbation:
    """Exponential tilt phi(nu) = exp(c * nu)."""
    c = float(c)

    def log_tilt(nu):
        return c * jnp.asarray(nu)

    return Perturbation(name=f"exp_tilt({c:g})", log_tilt=log_tilt,
                        params={"c": c})


def beta_swap(a: float, b: float, alpha0: float) -> Perturbation:
    """Tilt whose delta=1 endpoint swaps Beta(1, alpha0) for Beta(a, b)."""
    const = float(-betaln(a, b) - np.log(alpha0))
    a1, b_shift = float(a - 1.0), float(b - alpha0)

    def log_tilt(nu):
        nu = jnp.asarray(nu)
        return const + a1 * jnp.log(nu) + b_shift * jnp.log1p(-nu)

    return Perturbation(name=f"beta_swap({a:g},{b:g})", log_tilt=log_tilt,
                        params={"a": float(a), "b": float(b),
                                "alpha0": float(alpha0)})


def builtin_perturbations(alpha0: float, alpha1: float = None, c: float = 2.0,
                          a: float = 2.0, b: float = 3.0):
    """The shipped tilt catalog for a model with concentration ``alpha0``."""
    if alpha1 is None:
        alpha1 = alpha0 + 2.0
    return [prior_swap(alpha0, alpha1), exp_tilt(c), beta_swap(a, b, alpha0)]


# ---------------------------------------------------------------------------
# tabulated tilts
# ---------------------------------------------------------------------------

def load_tabulated(path, name: str = None) -> Perturbation:
    """Load a tilt from a two-column table of (nu, log phi) rows.

    Stick values must be strictly increasing and lie strictly inside
    (0, 1); values between knots use monotone cubic (PCHIP)
    interpolation and values beyond the knots clamp to the endpoints.
    The interpolant is evaluated with jax primitives so it remains
    usable inside the jitted objective.
    """
    path = Path(path)
    table = np.loadtxt(path, dtype=float, ndmin=2)
    if table.ndim != 2 or table.shape[1] != 2:
        raise ValueError(f"{path}: expected two columns (nu, log phi)")
    if table.shape[0] < 2:
        raise ValueError(f"{path}: need at least two rows to interpolate")
    if not np.all(np.isfinite(table)):
        row = int(np.flatnonzero(~np.all(np.isfinite(table), axis=1))[0])
        raise ValueError(f"{path}: non-finite entry in table row {row + 1}")
    knots, logs = table[:, 0], table[:, 1]
    if np.any(knots <= 0.0) or np.any(knots >= 1.0):
        raise ValueError(f"{path}: stick values must lie strictly in (0, 1)")
    if np.any(np.diff(knots) <= 0.0):
        row = int(np.flatnonzero(np.diff(knots) <= 0.0)[0])
        raise ValueError(
            f"{path}: stick values must be strictly increasing "
            f"(violated between table rows {row + 1} and {row + 2})")

    coef = jnp.asarray(PchipInterpolator(knots, logs).c)
    xs = jnp.asarray(knots)
    last = len(knots) - 2

    def log_tilt(nu):
        v = jnp.clip(jnp.asarray(nu), knots[0], knots[-1])
        idx = jnp.clip(jnp.searchsorted(xs, v, side="right") - 1, 0, last)
        dv = v - xs[idx]
        return ((coef[0, idx] * dv + coef[1, idx]) * dv + coef[2, idx]) * dv \
            + coef[3, idx]

    return Perturbation(name=name or path.stem, log_tilt=log_tilt,
                        params={"n_knots": float(len(knots))})


# ---------------------------------------------------------------------------
# contaminated prior density
# ---------------------------------------------------------------------------

def log_normalizer(alpha: float, pert: Perturbation, delta: float) -> float:
    """log Z(delta) = log ∫ Beta(nu | 1, alpha) phi(nu)^delta dnu.

    Adaptive quadrature on (0, 1) to absolute tolerance 1e-10; raises if
    the integrator reports trouble.  This constant never enters the
    objective — it shifts the KL by (K-1)·log Z with zero gradient.
    """
    if not 0.0 <= delta <= 1.0:
        raise ValueError("delta must lie in [0, 1]")
    if delta == 0.0:
        return 0.0  # the base prior is already normalized
    log_alpha = np.log(alpha)

    def integrand(nu):
        return float(np.exp(log_alpha + (alpha - 1.0) * np.log1p(-nu)
                            + delta * float(pert.log_tilt(nu))))

    with warnings.catch_warnings():
        warnings.simplefilter("error", IntegrationWarning)
        try:
            z, abserr = quad(integrand, 0.0, 1.0, epsabs=1e-10, limit=200)
        except IntegrationWarning as exc:
            raise ArithmeticError(
                f"normalizer quadrature failed for {pert.name!r} "
                f"at delta={delta:g}: {exc}") from exc
    if not (z > 0.0 and np.isfinite(z)):
        raise ArithmeticError(
            f"normalizer for {pert.name!r} at delta={delta:g} is not positive")
    return float(np.log(z))


def contaminated_log_prior(nu, alpha: float, pert: Perturbation,
                           delta: float):
    """Normalized log density of the delta-contaminated stick prior."""
    nu = np.asarray(nu, dtype=float)
    if np.any(nu <= 0.0) or np.any(nu >= 1.0):
        raise ValueError("stick values must lie strictly in (0, 1)")
    log_z = log_normalizer(alpha, pert, delta)
    vals = (np.log(alpha) + (alpha - 1.0) * np.log1p(-nu)
            + delta * np.asarray(pert.log_tilt(nu), dtype=float) - log_z)
    return vals if vals.ndim else float(vals)
