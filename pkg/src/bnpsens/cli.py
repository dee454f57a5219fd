"""Command-line surface.

Subcommands: ``fit``, ``sweep-alpha``, ``sweep-phi``,
``check-derivatives``, ``report``.  Configuration comes from an optional
``key = value`` text file plus repeatable ``--set key=value`` overrides;
every field of :class:`bnpsens.harness.ExperimentConfig` is settable
that way.  The process exits 0 only if every fit involved converged.
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .diffengine import fd_check
from .harness import (ExperimentConfig, config_hash, emit_report,
                      load_config_data, make_perturbation, parse_config,
                      read_report, run_alpha_sweep, run_functional_sweep)
from .model import ModelSpec
from .objective import KLAssembly
from .optimizer import initialize, optimize
from .quantities import ClusterCountQuery, expected_cluster_count
from .variational import flatten


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bnpsens",
        description="Variational stick-breaking mixtures and prior "
                    "sensitivity of cluster-count summaries.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", default=None,
                       help="key = value configuration file")
        p.add_argument("--set", dest="overrides", action="append", default=[],
                       metavar="KEY=VALUE",
                       help="override one configuration key (repeatable)")
        p.add_argument("--output-dir", default=None,
                       help="where to write artifacts (overrides config)")

    p = sub.add_parser("fit", help="fit once at the base concentration")
    add_common(p)

    p = sub.add_parser("sweep-alpha",
                       help="refit vs linear across a concentration grid")
    add_common(p)

    p = sub.add_parser("sweep-phi",
                       help="refit vs linear across perturbation strengths")
    add_common(p)

    p = sub.add_parser("check-derivatives",
                       help="compare AD derivatives against finite differences")
    add_common(p)
    p.add_argument("--step", type=float, default=1e-6,
                   help="central-difference step (default 1e-6)")
    p.add_argument("--threshold", type=float, default=1e-5,
                   help="largest acceptable discrepancy (default 1e-5)")

    p = sub.add_parser("report",
                       help="summarize an emitted report.csv and re-render plots")
    p.add_argument("path", help="path to a report.csv")
    p.add_argument("--output-dir", default=None,
                   help="re-render the SVG plots here")
    return parser


def _load_config(args) -> ExperimentConfig:
    overrides = list(args.overrides)
    if args.output_dir is not None:
        overrides.append(f"output_dir={args.output_dir}")
    return parse_config(args.config, overrides)


def _model_for(config: ExperimentConfig, data):
    return ModelSpec.for_data(data, config.k, alpha0=config.alpha0,
                              mean_scale=config.mean_scale,
                              dof_extra=config.dof_extra,
                              n_quad=config.n_quad,
                              cov_floor=config.cov_floor)


def _cmd_fit(args) -> int:
    config = _load_config(args)
    data = load_config_data(config)
    model = _model_for(config, data)
    init = initialize(data, model, seed=config.seed)
    fit = optimize(init, data, model, tol=config.tol)
    print(f"data: {config.data_path} (N={data.n}, D={data.dim}), "
          f"K={config.k}, alpha0={config.alpha0:g}")
    print(f"kl={fit.kl_value:.10g} grad_norm={fit.grad_norm:.3e} "
          f"min_eig={fit.hessian_min_eig:.3e} iterations={fit.iterations} "
          f"converged={fit.converged}")

    summary = {"kl": fit.kl_value, "grad_norm": fit.grad_norm,
               "hessian_min_eig": fit.hessian_min_eig,
               "iterations": fit.iterations, "converged": fit.converged,
               "config_hash": config_hash(config), "counts": {}}
    n_new = config.n_new if config.n_new > 0 else data.n
    for mode in config.modes:
        for t in config.thresholds:
            query = ClusterCountQuery(
                threshold=t, mode=mode,
                n_new=n_new if mode == "predictive" else None,
                n_mc=config.n_mc, seed=config.seed)
            est = expected_cluster_count(fit.eta_opt, data, query, model=model,
                                         n_workers=config.n_workers)
            print(f"E[# clusters > {t} points] ({mode}) = "
                  f"{est.value:.4f} +- {est.mc_stderr:.4f}")
            summary["counts"][f"{mode}_t{t}"] = [est.value, est.mc_stderr]

    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "fit.json").write_text(json.dumps(summary, indent=2, sort_keys=True)
                                  + "\n")
    np.savez(out / "fit_params.npz",
             stick_loc=fit.eta_opt.stick_loc,
             stick_log_scale=fit.eta_opt.stick_log_scale,
             means=fit.eta_opt.means,
             cov_chol=fit.eta_opt.cov_chol)
    print(f"wrote {out / 'fit.json'} and {out / 'fit_params.npz'}")
    return 0 if fit.converged else 1


def _print_sweep(report, paths) -> None:
    n_bad = sum(not r.refit_converged for r in report.rows)
    print(f"{report.kind} sweep: {len(report.rows)} rows, "
          f"{n_bad} unconverged refit row(s)")
    for center, mae in report.center_mae().items():
        print(f"  center {center:g}: mean |linear - refit| = {mae:.4f}")
    print(f"wrote {paths['report']}")


def _cmd_sweep(args, runner) -> int:
    config = _load_config(args)
    report = runner(config)
    paths = emit_report(report, config.output_dir)
    _print_sweep(report, paths)
    return 0 if report.all_converged else 1


def _cmd_check_derivatives(args) -> int:
    config = _load_config(args)
    data = load_config_data(config)
    model = _model_for(config, data)
    tilt = make_perturbation(config).log_tilt
    assembly = KLAssembly(data, model, log_tilt=tilt)
    x0 = flatten(initialize(data, model, seed=config.seed))

    worst = 0.0
    roundoff = False
    for label, field, eps in (("concentration", assembly.alpha_field(), [0.0]),
                              ("strength", assembly.delta_field(), [0.25])):
        rep = fd_check(field, x0, np.asarray(eps), step=args.step)
        print(f"{label}: grad={rep.grad_discrepancy:.3e} "
              f"hessian={rep.hessian_discrepancy:.3e} "
              f"cross={rep.cross_discrepancy:.3e} "
              f"roundoff_dominated={rep.roundoff_dominated}")
        worst = max(worst, rep.grad_discrepancy, rep.hessian_discrepancy,
                    rep.cross_discrepancy)
        roundoff = roundoff or rep.roundoff_dominated
    if roundoff:
        print("warning: step is small enough that roundoff dominates")
    ok = worst <= args.threshold and not roundoff
    print(f"worst discrepancy {worst:.3e} "
          f"{'<=' if ok else '>'} threshold {args.threshold:g}")
    return 0 if ok else 1


def _cmd_report(args) -> int:
    report = read_report(args.path)
    print(f"kind: {report.kind}   rows: {len(report.rows)}   "
          f"config: {report.metadata.get('config_hash', '?')}")
    for center, mae in report.center_mae().items():
        print(f"  center {center:g}: mean |linear - refit| = {mae:.4f}")
    refit_total = sum(r.refit_wall_s for r in report.rows)
    lin_total = sum(r.linear_wall_s for r in report.rows)
    if refit_total > 0:
        print(f"  wall time: refit {refit_total:.2f}s, linear {lin_total:.2f}s "
              f"({100.0 * lin_total / refit_total:.1f}%)")
    n_bad = sum(not r.refit_converged for r in report.rows)
    if n_bad:
        print(f"  {n_bad} unconverged refit row(s)")
    if args.output_dir is not None:
        from .harness import _emit_plots
        out = Path(args.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        for name, path in _emit_plots(report, out).items():
            print(f"wrote {path}")
    return 0 if report.all_converged else 1


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    handlers = {
        "fit": _cmd_fit,
        "sweep-alpha": lambda a: _cmd_sweep(a, run_alpha_sweep),
        "sweep-phi": lambda a: _cmd_sweep(a, run_functional_sweep),
        "check-derivatives": _cmd_check_derivatives,
        "report": _cmd_report,
    }
    try:
        return handlers[args.command](args)
    except (ValueError, OSError, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
