"""Linear response at a converged optimum.

At a verified local optimum x* of the profiled KL, the implicit function
theorem gives, for any scalar perturbation coordinate eps,

    d x*(eps) / d eps  =  -H^{-1} c,     c := d^2 KL / dx d(eps),

with H the Hessian in x at (x*, 0).  This module computes H once,
Cholesky-factorizes it, builds the mixed-derivative column c for
concentration shifts (eps = alpha - alpha0) and for multiplicative
stick-prior perturbations (eps = delta), and extrapolates

    x*(eps)  ~  x* - H^{-1} c eps

at the cost of one triangular solve per direction.  Direction columns
are stored as the KL cross-derivative c itself; for the concentration
direction -c equals the derivative in alpha of the expected stick
log-prior gradient, so columns touch only stick coordinates.
"""

from dataclasses import dataclass, field
from typing import Callable, List, Optional, Tuple

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.special import expit

from .model import Dataset, ModelSpec
from .objective import KLAssembly
from .optimizer import FitResult
from .quadrature import normal_nodes_weights
from .variational import GlobalParams, flatten, unflatten

__all__ = [
    "PerturbationDirection",
    "SensitivityPack",
    "build_pack",
    "alpha_direction",
    "functional_direction",
    "extrapolate",
    "extrapolate_flat",
]


@dataclass(frozen=True)
class PerturbationDirection:
    """One registered perturbation: its kind and mixed-derivative column."""

    kind: str  # "alpha_shift" or "functional"
    column: np.ndarray
    log_tilt: Optional[Callable] = None
    name: str = ""

    def __post_init__(self):
        if self.kind not in ("alpha_shift", "functional"):
            raise ValueError(f"unknown direction kind {self.kind!r}")
        col = np.asarray(self.column, dtype=float).ravel()
        if not np.all(np.isfinite(col)):
            raise ValueError("direction column contains non-finite entries")
        object.__setattr__(self, "column", col)


@dataclass(frozen=True)
class SensitivityPack:
    """Factorized curvature at a converged optimum, shared by all directions.

    Immutable apart from the registry of named directions; concurrent
    extrapolations against one pack are safe.
    """

    eta_base: GlobalParams
    hessian: np.ndarray
    hessian_factor: Tuple[np.ndarray, bool]
    base_alpha: float
    registered: List[Tuple[str, np.ndarray]] = field(default_factory=list)

    @property
    def base_flat(self) -> np.ndarray:
        return flatten(self.eta_base)

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        """H^{ -1} rhs via the cached Cholesky factor."""
        return cho_solve(self.hessian_factor, np.asarray(rhs, dtype=float))

    def register(self, name: str, direction: PerturbationDirection) -> None:
        self.registered.append((name, direction.column))


def build_pack(fit: FitResult, data: Dataset, model: ModelSpec,
               assembly: Optional[KLAssembly] = None) -> SensitivityPack:
    """Hessian-factorized sensitivity state from a converged fit.

    Reuses the Hessian stored on the fit when present, otherwise
    recomputes it through the compiled assembly.  An indefinite Hessian
    is an error: the optimum fails second-order conditions and no
    linear-response statement holds there.
    """
    if not fit.converged:
        raise ValueError("sensitivity requires a converged fit")
    if fit.hessian is not None:
        hess = np.asarray(fit.hessian, dtype=float)
    else:
        asm = assembly if assembly is not None else KLAssembly(data, model)
        hess = asm.hessian(flatten(fit.eta_opt))
    hess = 0.5 * (hess + hess.T)
    try:
        factor = cho_factor(hess, lower=True)
    except np.linalg.LinAlgError as exc:
        raise ValueError("optimum fails second-order conditions: "
                         "Hessian is not positive definite") from exc
    return SensitivityPack(eta_base=fit.eta_opt, hessian=hess,
                           hessian_factor=factor, base_alpha=model.alpha0)


def alpha_direction(pack: SensitivityPack, data: Dataset, model: ModelSpec,
                    assembly: Optional[KLAssembly] = None) -> PerturbationDirection:
    """Mixed-derivative column for a shift of the concentration parameter.

    The stick prior is the only term involving alpha, so entries in the
    mean and covariance blocks are exactly zero.
    """
    asm = assembly if assembly is not None else KLAssembly(data, model)
    col = asm.cross_alpha(pack.base_flat, alpha=pack.base_alpha)
    direction = PerturbationDirection(kind="alpha_shift", column=col, name="alpha")
    pack.register("alpha", direction)
    return direction


def _locate_bad_node(log_tilt, eta: GlobalParams, n_quad: int) -> str:
    x, _ = normal_nodes_weights(eta.stick_loc, eta.stick_scale, n_quad)
    vals = np.asarray(log_tilt(expit(x)), dtype=float)
    bad = np.argwhere(~np.isfinite(vals))
    if bad.size:
        j, i = bad[0]
        return (f"log_tilt is non-finite at quadrature node {i} of stick {j} "
                f"(x={x[j, i]:.6g}, nu={expit(x[j, i]):.6g})")
    return "the tilt quadrature produced a non-finite column"


def functional_direction(pack: SensitivityPack, log_tilt: Callable,
                         data: Dataset, model: ModelSpec,
                         name: Optional[str] = None,
                         assembly: Optional[KLAssembly] = None) -> PerturbationDirection:
    """Mixed-derivative column for a multiplicative stick-prior perturbation.

    ``log_tilt`` is the log of the positive multiplier on the stick
    prior density; the perturbation's normalizer is constant in the
    variational parameters and never enters.  The column is the
    eta-gradient of the quadrature expectation of
    sum_k log_tilt(nu_k), negated (KL orientation).
    """
    if assembly is None or assembly.log_tilt is not log_tilt:
        assembly = KLAssembly(data, model, log_tilt=log_tilt)
    col = assembly.cross_delta(pack.base_flat, alpha=pack.base_alpha)
    if not np.all(np.isfinite(col)):
        raise ValueError(_locate_bad_node(log_tilt, pack.eta_base, model.n_quad))
    label = name if name is not None else getattr(log_tilt, "__name__", "functional")
    direction = PerturbationDirection(kind="functional", column=col,
                                      log_tilt=log_tilt, name=label)
    pack.register(label, direction)
    return direction


def extrapolate_flat(pack: SensitivityPack, direction: PerturbationDirection,
                     epsilon: float) -> np.ndarray:
    """Linear prediction of the optimal flat vector at perturbation size epsilon."""
    return pack.base_flat - pack.solve(direction.column) * float(epsilon)


def extrapolate(pack: SensitivityPack, direction: PerturbationDirection,
                epsilon: float) -> GlobalParams:
    """Linear prediction of the optimum at perturbation size epsilon.

    epsilon is (alpha - alpha0) for concentration shifts and delta for
    functional perturbations; epsilon = 0 returns the base optimum
    exactly.
    """
    eta = pack.eta_base
    return unflatten(extrapolate_flat(pack, direction, epsilon), eta.K, eta.dim)
