"""Experiment orchestration: sweeps, reports, plots.

The two experiment shapes are a concentration sweep (fit at a few
centers, refit across a grid of concentrations, compare against the
linear prediction from each center) and a functional-perturbation sweep
(one fit and pack at strength zero, refits across perturbation
strengths).  Both produce a :class:`SweepReport`.

Reproducibility contract: everything that lands in ``report.csv``, the
manifest and the SVG plots is a deterministic function of the
configuration (including its seed), so repeated runs are byte-identical.
Wall-clock measurements are inherently non-reproducible and therefore go
to a sibling ``timings.csv`` instead of the report proper.

Timing attribution: a report row holds both a refit estimate and a
linear estimate.  The refit optimization for a grid point is amortized
over that grid point's rows, and each refit summary evaluation over the
centers sharing it, so summing a wall-time column over all rows
recovers the total cost of that strategy; the linear column is measured
per row (solve + extrapolate + summary).
"""

import hashlib
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .datasets import load_csv, load_iris
from .model import Dataset, ModelSpec, StickPriorSpec
from .objective import KLAssembly
from .optimizer import initialize, optimize
from .perturbations import (Perturbation, beta_swap, contaminated_log_prior,
                            exp_tilt, load_tabulated, prior_swap)
from .quantities import ClusterCountQuery, expected_cluster_count
from .sensitivity import (alpha_direction, build_pack, extrapolate,
                          functional_direction)

_DEFAULT_ALPHA_GRID = tuple(0.5 * v for v in range(1, 31))


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ExperimentConfig:
    """Everything a sweep needs, with every default surfaced.

    ``data_path`` may be the literal ``"iris"`` for the bundled fixture.
    ``phi`` names a built-in tilt (``prior_swap``, ``exp_tilt``,
    ``beta_swap``) or ``tabulated`` with ``phi_path`` pointing at a
    two-column (nu, log phi) table; ``phi_params`` supplies its scalars.
    ``n_new = 0`` means "use the dataset size" for predictive queries.

    The experiment defaults (standardized features, ``mean_scale`` 1.0)
    differ from the library's dispersed-prior defaults: they put the
    iris run in the regime where the posterior cluster count responds to
    the stick prior instead of saturating the truncation, which is the
    regime the sweep figures are about.
    """

    data_path: str = "iris"
    standardize: bool = True
    k: int = 30
    alpha0: float = 8.0
    alpha_grid: tuple = _DEFAULT_ALPHA_GRID
    alpha0_centers: tuple = (3.0, 8.0, 13.0)
    phi: str = "exp_tilt"
    phi_params: tuple = (("c", 2.0),)
    phi_path: str = ""
    delta_grid: tuple = (0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.7, 1.0)
    thresholds: tuple = (0,)
    modes: tuple = ("in_sample",)
    n_new: int = 0
    n_mc: int = 1000
    seed: int = 0
    n_quad: int = 30
    cov_floor: float = 0.0
    mean_scale: float = 1.0
    dof_extra: float = 3.0
    tol: float = 1e-6
    n_workers: int = 1
    output_dir: str = "results"

    def __post_init__(self):
        for name in ("alpha_grid", "alpha0_centers", "delta_grid",
                     "thresholds", "modes"):
            if not getattr(self, name):
                raise ValueError(f"{name} must be nonempty")
        if not (self.tol > 0 and self.cov_floor >= 0 and self.mean_scale > 0):
            raise ValueError("tolerances and scales must be positive")
        if self.k < 1 or self.n_mc < 1 or self.n_quad < 2 or self.n_workers < 1:
            raise ValueError("k, n_mc, n_quad and n_workers must be positive")
        if any(a <= 0 for a in self.alpha_grid + self.alpha0_centers + (self.alpha0,)):
            raise ValueError("concentrations must be positive")
        if any(not 0.0 <= d <= 1.0 for d in self.delta_grid):
            raise ValueError("delta_grid entries must lie in [0, 1]")
        if any(t < 0 for t in self.thresholds):
            raise ValueError("thresholds must be nonnegative")
        bad = [m for m in self.modes if m not in ("in_sample", "predictive")]
        if bad:
            raise ValueError(f"unknown mode(s): {', '.join(bad)}")


_LIST_FIELDS = {
    "alpha_grid": float, "alpha0_centers": float, "delta_grid": float,
    "thresholds": int, "modes": str,
}
_SCALAR_FIELDS = {
    "data_path": str, "standardize": bool, "k": int, "alpha0": float,
    "phi": str, "phi_path": str, "n_new": int, "n_mc": int, "seed": int,
    "n_quad": int, "cov_floor": float, "mean_scale": float,
    "dof_extra": float, "tol": float, "n_workers": int, "output_dir": str,
}


def _coerce(key: str, raw: str):
    raw = raw.strip()
    if key in _LIST_FIELDS:
        cast = _LIST_FIELDS[key]
        return tuple(cast(tok.strip()) for tok in raw.split(",") if tok.strip())
    if key == "phi_params":
        pairs = []
        for tok in raw.split(","):
            tok = tok.strip()
            if not tok:
                continue
            name, _, val = tok.partition("=")
            if not _:
                raise ValueError(f"phi_params entry {tok!r} is not name=value")
            pairs.append((name.strip(), float(val)))
        return tuple(pairs)
    if key in _SCALAR_FIELDS:
        cast = _SCALAR_FIELDS[key]
        if cast is bool:
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError(f"{key} must be a boolean, got {raw!r}")
        return cast(raw)
    raise ValueError(f"unknown configuration key {key!r}")


def parse_config(path=None, overrides=()) -> ExperimentConfig:
    """Read a ``key = value`` text file and apply command-line overrides.

    Lines are ``key = value``; ``#`` starts a comment; list values are
    comma-separated.  ``overrides`` is an iterable of ``key=value``
    strings applied after the file.
    """
    settings = {}
    if path is not None:
        for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, val = line.partition("=")
            if not sep:
                raise ValueError(f"{path}: line {lineno} is not key = value")
            settings[key.strip()] = val
    for item in overrides:
        key, sep, val = item.partition("=")
        if not sep:
            raise ValueError(f"override {item!r} is not key=value")
        settings[key.strip()] = val
    kwargs = {k: _coerce(k, v) for k, v in settings.items()}
    return ExperimentConfig(**kwargs)


def config_hash(config: ExperimentConfig) -> str:
    """Stable hash of the full configuration (first 16 hex digits)."""
    parts = []
    for f in sorted(fields(config), key=lambda f: f.name):
        parts.append(f"{f.name}={getattr(config, f.name)!r}")
    digest = hashlib.sha256("\n".join(parts).encode()).hexdigest()
    return digest[:16]


def make_perturbation(config: ExperimentConfig) -> Perturbation:
    """Build the configured tilt."""
    params = dict(config.phi_params)
    if config.phi == "prior_swap":
        return prior_swap(config.alpha0, params["alpha1"])
    if config.phi == "exp_tilt":
        return exp_tilt(params.get("c", 2.0))
    if config.phi == "beta_swap":
        return beta_swap(params.get("a", 2.0), params.get("b", 3.0),
                         config.alpha0)
    if config.phi == "tabulated":
        if not config.phi_path:
            raise ValueError("phi = tabulated requires phi_path")
        return load_tabulated(config.phi_path)
    raise ValueError(f"unknown perturbation {config.phi!r}")


def load_config_data(config: ExperimentConfig) -> Dataset:
    if config.data_path == "iris":
        return load_iris(standardize=config.standardize)
    return load_csv(config.data_path, standardize=config.standardize)


# ---------------------------------------------------------------------------
# report containers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SweepRow:
    """One (center, grid point, threshold, mode) comparison.

    The wall columns time the production of the candidate optimum only
    (a warm-started refit vs. a factorized linear solve); the summary
    computation common to both is excluded.
    """

    center: float
    epsilon: float
    threshold: int
    mode: str
    refit_value: float
    refit_stderr: float
    linear_value: float
    linear_stderr: float
    refit_converged: bool
    refit_wall_s: float = 0.0
    linear_wall_s: float = 0.0


@dataclass(frozen=True)
class SweepReport:
    """Rows plus run metadata; the artifact behind every figure."""

    kind: str  # "alpha" or "phi"
    rows: tuple
    metadata: dict
    prior_table: Optional[dict] = None
    config: Optional[ExperimentConfig] = None

    def __post_init__(self):
        if self.kind not in ("alpha", "phi"):
            raise ValueError(f"unknown sweep kind {self.kind!r}")

    @property
    def all_converged(self) -> bool:
        return all(r.refit_converged for r in self.rows)

    def center_mae(self) -> dict:
        """Mean absolute linear-vs-refit error per center (converged rows)."""
        out = {}
        for row in self.rows:
            if not row.refit_converged:
                continue
            out.setdefault(row.center, []).append(
                abs(row.linear_value - row.refit_value))
        return {c: float(np.mean(v)) for c, v in sorted(out.items())}


def _row_seed(master: int, grid_index: int, t_index: int, m_index: int) -> int:
    seq = np.random.SeedSequence((master, grid_index, t_index, m_index))
    return int(seq.generate_state(1)[0])


def _queries(config: ExperimentConfig, data: Dataset, grid_index: int):
    """The (threshold, mode, query) triples for one grid point."""
    n_new = config.n_new if config.n_new > 0 else data.n
    out = []
    for ti, t in enumerate(config.thresholds):
        for mi, mode in enumerate(config.modes):
            q = ClusterCountQuery(
                threshold=t, mode=mode,
                n_new=n_new if mode == "predictive" else None,
                n_mc=config.n_mc,
                seed=_row_seed(config.seed, grid_index, ti, mi))
            out.append((t, mode, q))
    return out


def _count(eta, data, query, model, n_workers):
    return expected_cluster_count(eta, data, query, model=model,
                                  n_workers=n_workers)


def _base_metadata(config: ExperimentConfig, data: Dataset, kind: str) -> dict:
    return {
        "kind": kind,
        "config_hash": config_hash(config),
        "seed": config.seed,
        "version": __version__,
        "n_points": data.n,
        "dim": data.dim,
    }


# ---------------------------------------------------------------------------
# concentration sweep
# ---------------------------------------------------------------------------

def run_alpha_sweep(config: ExperimentConfig,
                    data: Optional[Dataset] = None) -> SweepReport:
    """Fit at each center, refit across the grid, compare linear vs refit.

    One fit and sensitivity pack per center; one refit per grid
    concentration (warm-started from the nearest center and shared by
    all centers); one row per (center, grid value, threshold, mode).
    Unconverged refits are flagged on their rows and the sweep
    continues.
    """
    if data is None:
        data = load_config_data(config)
    base_model = ModelSpec.for_data(data, config.k, alpha0=config.alpha0,
                                    mean_scale=config.mean_scale,
                                    dof_extra=config.dof_extra,
                                    n_quad=config.n_quad,
                                    cov_floor=config.cov_floor)
    assembly = KLAssembly(data, base_model)
    init = initialize(data, base_model, seed=config.seed)

    centers = {}
    for c in config.alpha0_centers:
        model_c = base_model.with_alpha(c)
        fit = optimize(init, data, model_c, tol=config.tol, assembly=assembly)
        if not fit.converged:
            raise ArithmeticError(f"center fit at alpha0={c:g} did not converge")
        pack = build_pack(fit, data, model_c, assembly=assembly)
        direction = alpha_direction(pack, data, model_c, assembly=assembly)
        centers[c] = (model_c, fit, pack, direction)

    def nearest_center(alpha):
        return min(config.alpha0_centers, key=lambda c: (abs(c - alpha), c))

    def refit_at(gi_alpha):
        gi, alpha = gi_alpha
        c = nearest_center(alpha)
        start = time.perf_counter()
        if alpha == c:
            fit = centers[c][1]  # the center fit is the refit at epsilon 0
        else:
            fit = optimize(centers[c][1].eta_opt, data,
                           base_model.with_alpha(alpha),
                           pert=StickPriorSpec(alpha=alpha),
                           tol=config.tol, assembly=assembly)
        return gi, fit, time.perf_counter() - start

    jobs = list(enumerate(config.alpha_grid))
    if config.n_workers > 1:
        with ThreadPoolExecutor(max_workers=config.n_workers) as pool:
            done = list(pool.map(refit_at, jobs))
    else:
        done = [refit_at(j) for j in jobs]
    refits = {gi: (fit, wall) for gi, fit, wall in done}

    n_centers = len(config.alpha0_centers)
    n_queries = len(config.thresholds) * len(config.modes)
    rows = []
    for gi, alpha in jobs:
        refit, refit_opt_wall = refits[gi]
        for t, mode, query in _queries(config, data, gi):
            refit_est = _count(refit.eta_opt, data, query, base_model,
                               config.n_workers)
            for c in config.alpha0_centers:
                _, fit_c, pack, direction = centers[c]
                start = time.perf_counter()
                eta_lin = extrapolate(pack, direction, alpha - c)
                lin_wall = time.perf_counter() - start
                lin_est = _count(eta_lin, data, query, base_model,
                                 config.n_workers)
                rows.append(SweepRow(
                    center=c, epsilon=alpha, threshold=t, mode=mode,
                    refit_value=refit_est.value,
                    refit_stderr=refit_est.mc_stderr,
                    linear_value=lin_est.value,
                    linear_stderr=lin_est.mc_stderr,
                    refit_converged=refit.converged,
                    refit_wall_s=refit_opt_wall / (n_centers * n_queries),
                    linear_wall_s=lin_wall))
    meta = _base_metadata(config, data, "alpha")
    return SweepReport(kind="alpha", rows=tuple(rows), metadata=meta,
                       config=config)


# ---------------------------------------------------------------------------
# functional sweep
# ---------------------------------------------------------------------------

def _prior_density_table(config: ExperimentConfig,
                         pert: Perturbation) -> dict:
    """Base vs contaminated stick-prior densities on an interior grid."""
    grid = np.linspace(0.0025, 0.9975, 399)
    table = {"nu": grid,
             "p_base": np.exp(contaminated_log_prior(grid, config.alpha0,
                                                     pert, 0.0))}
    for d in config.delta_grid:
        if d == 0.0:
            continue
        table[f"p_delta_{d:g}"] = np.exp(
            contaminated_log_prior(grid, config.alpha0, pert, d))
    return table


def run_functional_sweep(config: ExperimentConfig,
                         data: Optional[Dataset] = None) -> SweepReport:
    """One pack at strength zero; refits across the strength grid.

    The report's epsilon column is the contamination strength delta.
    Also tabulates the base and contaminated prior densities for the
    density panels.
    """
    if data is None:
        data = load_config_data(config)
    pert = make_perturbation(config)
    model = ModelSpec.for_data(data, config.k, alpha0=config.alpha0,
                               mean_scale=config.mean_scale,
                               dof_extra=config.dof_extra,
                               n_quad=config.n_quad,
                               cov_floor=config.cov_floor)
    assembly = KLAssembly(data, model, log_tilt=pert.log_tilt)

    init = initialize(data, model, seed=config.seed)
    base_fit = optimize(init, data, model, tol=config.tol, assembly=assembly)
    if not base_fit.converged:
        raise ArithmeticError("the strength-zero fit did not converge")
    pack = build_pack(base_fit, data, model, assembly=assembly)
    direction = functional_direction(pack, pert.log_tilt, data, model,
                                     name=pert.name, assembly=assembly)

    def refit_at(gi_delta):
        gi, delta = gi_delta
        start = time.perf_counter()
        if delta == 0.0:
            fit = base_fit
        else:
            fit = optimize(base_fit.eta_opt, data, model,
                           pert=StickPriorSpec(alpha=config.alpha0,
                                               log_tilt=pert.log_tilt,
                                               delta=delta),
                           tol=config.tol, assembly=assembly)
        return gi, fit, time.perf_counter() - start

    jobs = list(enumerate(config.delta_grid))
    if config.n_workers > 1:
        with ThreadPoolExecutor(max_workers=config.n_workers) as pool:
            done = list(pool.map(refit_at, jobs))
    else:
        done = [refit_at(j) for j in jobs]
    refits = {gi: (fit, wall) for gi, fit, wall in done}

    n_queries = len(config.thresholds) * len(config.modes)
    rows = []
    for gi, delta in jobs:
        refit, refit_opt_wall = refits[gi]
        for t, mode, query in _queries(config, data, gi):
            refit_est = _count(refit.eta_opt, data, query, model,
                               config.n_workers)
            refit_wall = refit_opt_wall / n_queries
            start = time.perf_counter()
            eta_lin = extrapolate(pack, direction, delta)
            lin_wall = time.perf_counter() - start
            lin_est = _count(eta_lin, data, query, model, config.n_workers)
            rows.append(SweepRow(
                center=config.alpha0, epsilon=delta, threshold=t, mode=mode,
                refit_value=refit_est.value, refit_stderr=refit_est.mc_stderr,
                linear_value=lin_est.value, linear_stderr=lin_est.mc_stderr,
                refit_converged=refit.converged,
                refit_wall_s=refit_wall, linear_wall_s=lin_wall))
    meta = _base_metadata(config, data, "phi")
    meta["perturbation"] = pert.name
    return SweepReport(kind="phi", rows=tuple(rows), metadata=meta,
                       prior_table=_prior_density_table(config, pert),
                       config=config)


# ---------------------------------------------------------------------------
# emission
# ---------------------------------------------------------------------------

_COLUMNS = ("center", "epsilon", "threshold", "mode", "refit_value",
            "refit_stderr", "linear_value", "linear_stderr", "refit_converged")
_TIMING_COLUMNS = ("center", "epsilon", "threshold", "mode", "refit_wall_s",
                   "linear_wall_s")


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def emit_report(report: SweepReport, output_dir) -> dict:
    """Write report.csv, timings.csv, manifest.json and the SVG plots.

    Everything except ``timings.csv`` is a deterministic function of the
    configuration and seed.  Returns a name -> path map.
    """
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {}

    lines = [f"# {key}: {_fmt(report.metadata[key])}"
             for key in sorted(report.metadata)]
    lines.append(",".join(_COLUMNS))
    for row in report.rows:
        lines.append(",".join(_fmt(getattr(row, col)) for col in _COLUMNS))
    report_path = out / "report.csv"
    report_path.write_text("\n".join(lines) + "\n")
    paths["report"] = report_path

    tlines = [",".join(_TIMING_COLUMNS)]
    for row in report.rows:
        tlines.append(",".join(_fmt(getattr(row, col))
                               for col in _TIMING_COLUMNS))
    timings_path = out / "timings.csv"
    timings_path.write_text("\n".join(tlines) + "\n")
    paths["timings"] = timings_path

    manifest = {"metadata": {k: report.metadata[k]
                             for k in sorted(report.metadata)},
                "config": None if report.config is None
                else {f.name: getattr(report.config, f.name)
                      for f in fields(report.config)},
                "rows": len(report.rows),
                "columns": list(_COLUMNS),
                "versions": _library_versions()}
    manifest_path = out / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True)
                             + "\n")
    paths["manifest"] = manifest_path

    if report.prior_table is not None:
        cols = list(report.prior_table)
        plines = [",".join(cols)]
        n = len(report.prior_table[cols[0]])
        for i in range(n):
            plines.append(",".join(repr(float(report.prior_table[c][i]))
                                   for c in cols))
        prior_path = out / "prior_density.csv"
        prior_path.write_text("\n".join(plines) + "\n")
        paths["prior_density"] = prior_path

    for name, path in _emit_plots(report, out).items():
        paths[name] = path
    return paths


def _library_versions() -> dict:
    import jax
    import matplotlib
    import scipy
    return {"bnpsens": __version__, "numpy": np.__version__,
            "scipy": scipy.__version__, "jax": jax.__version__,
            "matplotlib": matplotlib.__version__}


def _emit_plots(report: SweepReport, out: Path) -> dict:
    import matplotlib
    from matplotlib.figure import Figure

    xlabel = ("concentration" if report.kind == "alpha"
              else "perturbation strength")
    groups = {}
    for row in report.rows:
        groups.setdefault((row.center, row.threshold, row.mode), []).append(row)

    paths = {}
    salt = str(report.metadata.get("config_hash", "bnpsens"))
    with matplotlib.rc_context({"svg.hashsalt": salt}):
        for (center, t, mode), rows in sorted(groups.items()):
            rows = sorted(rows, key=lambda r: r.epsilon)
            x = [r.epsilon for r in rows]
            fig = Figure(figsize=(5.0, 3.4))
            ax = fig.add_subplot(111)
            ax.errorbar(x, [r.refit_value for r in rows],
                        yerr=[r.refit_stderr for r in rows],
                        marker="o", markersize=3.5, capsize=2,
                        label="refit", color="#1f77b4")
            ax.errorbar(x, [r.linear_value for r in rows],
                        yerr=[r.linear_stderr for r in rows],
                        marker="s", markersize=3.5, capsize=2,
                        label="linear", color="#d62728", linestyle="--")
            bad = [r.epsilon for r in rows if not r.refit_converged]
            if bad:
                for xv in bad:
                    ax.axvline(xv, color="0.7", linestyle=":", linewidth=0.8)
            if report.kind == "alpha":
                ax.axvline(center, color="0.4", linewidth=0.8)
            ax.set_xlabel(xlabel)
            ax.set_ylabel(f"E[# clusters with > {t} points] ({mode})")
            ax.set_title(f"center {center:g}")
            ax.legend(frameon=False, fontsize=9)
            fig.tight_layout()
            name = f"sweep_{report.kind}_c{center:g}_t{t}_{mode}"
            path = out / f"{name}.svg"
            fig.savefig(path, format="svg", metadata={"Date": None})
            paths[name] = path
    return paths


def read_report(path) -> SweepReport:
    """Parse an emitted report.csv back into a SweepReport.

    If a sibling ``timings.csv`` exists its wall times are merged in, so
    the round trip reproduces the emitted report exactly.
    """
    path = Path(path)
    metadata = {}
    rows = []
    header = None
    for line in path.read_text().splitlines():
        if line.startswith("#"):
            key, _, val = line[1:].partition(":")
            metadata[key.strip()] = _parse_meta(key.strip(), val.strip())
            continue
        if header is None:
            header = line.split(",")
            if header != list(_COLUMNS):
                raise ValueError(f"{path}: unexpected columns {header}")
            continue
        vals = line.split(",")
        rows.append(dict(zip(header, vals)))
    if header is None:
        raise ValueError(f"{path}: no header row")
    kind = metadata.get("kind")

    timings = {}
    tpath = path.with_name("timings.csv")
    if tpath.exists():
        tlines = tpath.read_text().splitlines()
        for line in tlines[1:]:
            vals = line.split(",")
            key = (vals[0], vals[1], vals[2], vals[3])
            timings[key] = (float(vals[4]), float(vals[5]))

    parsed = []
    for raw in rows:
        key = (raw["center"], raw["epsilon"], raw["threshold"], raw["mode"])
        refit_wall, lin_wall = timings.get(key, (0.0, 0.0))
        parsed.append(SweepRow(
            center=float(raw["center"]), epsilon=float(raw["epsilon"]),
            threshold=int(raw["threshold"]), mode=raw["mode"],
            refit_value=float(raw["refit_value"]),
            refit_stderr=float(raw["refit_stderr"]),
            linear_value=float(raw["linear_value"]),
            linear_stderr=float(raw["linear_stderr"]),
            refit_converged=raw["refit_converged"] == "true",
            refit_wall_s=refit_wall, linear_wall_s=lin_wall))
    return SweepReport(kind=kind, rows=tuple(parsed), metadata=metadata)


def _parse_meta(key: str, val: str):
    if key in ("seed", "n_points", "dim"):
        return int(val)
    return val
