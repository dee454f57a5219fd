"""Functional perturbations of the stick-breaking prior density.

Beyond moving the scalar concentration, the stick prior can be tilted
by any positive function phi(nu): the perturbed prior is proportional
to p0(nu) * phi(nu)^delta, with delta interpolating from the base prior
(0) to the full tilt (1).  Each tilt yields a sensitivity direction
from the same factorized Hessian as the alpha analysis, so probing many
"what if the prior looked like this instead" questions costs one linear
solve each.

Shown here: the built-in tilt catalog, the exactness of the full
prior-swap tilt (refitting at delta=1 lands on the direct refit at the
swapped concentration), and a custom tilt loaded from a two-column
table.

Run time: around a minute.
"""

import tempfile
from pathlib import Path

import numpy as np

from bnpsens import (
    ClusterCountQuery,
    Dataset,
    KLAssembly,
    ModelSpec,
    StickPriorSpec,
    build_pack,
    builtin_perturbations,
    expected_cluster_count,
    extrapolate,
    flatten,
    functional_direction,
    initialize,
    load_tabulated,
    optimize,
    prior_swap,
)

# ---------------------------------------------------------------------
# Data, model, base fit, sensitivity pack.
# ---------------------------------------------------------------------
rng = np.random.default_rng(3)
centers = np.array([[0.0, 0.0], [4.0, 0.0], [2.0, 3.5]])
points = np.concatenate([
    c + rng.standard_normal((30, 2)) * 0.45 for c in centers])
data = Dataset(points=points)

alpha0 = 2.0
model = ModelSpec.for_data(data, K=10, alpha0=alpha0)
assembly = KLAssembly(data, model)
base = optimize(initialize(data, model, seed=0), data, model,
                tol=1e-8, assembly=assembly)
pack = build_pack(base, data, model, assembly=assembly)

query = ClusterCountQuery(threshold=0, n_mc=2000, seed=9)
g_base = expected_cluster_count(base.eta_opt, data, query, model=model).value
print(f"base fit: converged={base.converged}, count={g_base:.3f}\n")

# ---------------------------------------------------------------------
# The built-in catalog: a swap toward another concentration, an
# exponential tilt, and a Beta-shaped reweighting.  For each, compare
# the linear prediction against a refit at half strength.
# ---------------------------------------------------------------------
delta = 0.5
for pert in builtin_perturbations(alpha0):
    tilted = KLAssembly(data, model, log_tilt=pert.log_tilt)
    direction = functional_direction(pack, pert.log_tilt, data, model,
                                     name=pert.name, assembly=tilted)
    g_lin = expected_cluster_count(
        extrapolate(pack, direction, delta), data, query, model=model).value
    refit = optimize(base.eta_opt, data, model,
                     pert=StickPriorSpec(alpha=alpha0, log_tilt=pert.log_tilt,
                                         delta=delta),
                     tol=1e-8, assembly=tilted)
    g_ref = expected_cluster_count(refit.eta_opt, data, query,
                                   model=model).value
    print(f"{pert.name:16s} delta={delta}: linear {g_lin - g_base:+.4f}, "
          f"refit {g_ref - g_base:+.4f} (change in count vs base)")

# ---------------------------------------------------------------------
# Exactness of the full swap: refitting under the prior-swap tilt at
# delta = 1 is the same optimization problem as refitting directly at
# the swapped concentration, so the optima coincide to solver tolerance.
# ---------------------------------------------------------------------
alpha1 = 4.0
swap = prior_swap(alpha0, alpha1)
tilted = KLAssembly(data, model, log_tilt=swap.log_tilt)
via_tilt = optimize(base.eta_opt, data, model,
                    pert=StickPriorSpec(alpha=alpha0, log_tilt=swap.log_tilt,
                                        delta=1.0),
                    tol=1e-9, assembly=tilted)
direct = optimize(base.eta_opt, data, model,
                  pert=StickPriorSpec(alpha=alpha1),
                  tol=1e-9, assembly=assembly)
gap = np.max(np.abs(flatten(via_tilt.eta_opt) - flatten(direct.eta_opt)))
print(f"\nfull swap to alpha={alpha1}: tilt refit vs direct refit differ by "
      f"{gap:.2e} (max coordinate)")

# ---------------------------------------------------------------------
# Custom tilts load from a two-column table (nu, log phi); the loader
# fits a monotone cubic through the knots so the tilt stays smooth and
# differentiable.  This one nudges mass toward larger stick fractions.
# ---------------------------------------------------------------------
nu_knots = np.linspace(0.02, 0.98, 25)
table = np.column_stack([nu_knots, 0.8 * (nu_knots - 0.5)])
with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "tilt.txt"
    np.savetxt(path, table)
    custom = load_tabulated(path, name="toward-big-sticks")

tilted = KLAssembly(data, model, log_tilt=custom.log_tilt)
direction = functional_direction(pack, custom.log_tilt, data, model,
                                 name=custom.name, assembly=tilted)
g_lin = expected_cluster_count(
    extrapolate(pack, direction, 1.0), data, query, model=model).value
print(f"tabulated tilt {custom.name!r} at delta=1: "
      f"predicted count change {g_lin - g_base:+.4f}")
