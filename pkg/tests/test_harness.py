"""Tests for experiment orchestration, reports and plots."""

import dataclasses
import hashlib
import json
import xml.etree.ElementTree as ET

import numpy as np
import pytest

import bnpsens.harness as harness
from bnpsens.harness import (
    ExperimentConfig,
    SweepReport,
    SweepRow,
    config_hash,
    emit_report,
    make_perturbation,
    parse_config,
    read_report,
    run_alpha_sweep,
    run_functional_sweep,
)


@pytest.fixture(scope="module")
def blob_csv(tmp_path_factory):
    rng = np.random.default_rng(0)
    pts = np.vstack([rng.normal([0.0, 0.0], 0.3, (20, 2)),
                     rng.normal([3.0, 3.0], 0.4, (25, 2))])
    path = tmp_path_factory.mktemp("data") / "blobs.csv"
    path.write_text("x,y\n" + "\n".join(f"{a:.17g},{b:.17g}" for a, b in pts))
    return path


@pytest.fixture(scope="module")
def alpha_config(blob_csv):
    return ExperimentConfig(
        data_path=str(blob_csv), k=5, alpha0=2.0,
        alpha_grid=(1.5, 2.0, 2.5, 3.0), alpha0_centers=(1.5, 2.5),
        thresholds=(0, 1), n_mc=300, seed=4)


@pytest.fixture(scope="module")
def alpha_report(alpha_config):
    return run_alpha_sweep(alpha_config)


@pytest.fixture(scope="module")
def alpha_out(alpha_report, tmp_path_factory):
    out = tmp_path_factory.mktemp("alpha_out")
    paths = emit_report(alpha_report, out)
    return out, paths


@pytest.fixture(scope="module")
def phi_config(blob_csv):
    return ExperimentConfig(
        data_path=str(blob_csv), k=5, alpha0=2.0,
        phi="prior_swap", phi_params=(("alpha1", 3.0),),
        delta_grid=(0.0, 0.5, 1.0), thresholds=(0,), n_mc=300, seed=4)


@pytest.fixture(scope="module")
def phi_report(phi_config):
    return run_functional_sweep(phi_config)


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

class TestConfig:
    def test_defaults_cover_reference_experiment(self):
        cfg = ExperimentConfig()
        assert cfg.alpha_grid == tuple(0.5 * v for v in range(1, 31))
        assert cfg.alpha0_centers == (3.0, 8.0, 13.0)
        assert cfg.k == 30 and cfg.n_mc == 1000
        assert cfg.data_path == "iris"
        assert cfg.standardize and cfg.mean_scale == 1.0

    def test_validation(self):
        with pytest.raises(ValueError, match="nonempty"):
            ExperimentConfig(alpha_grid=())
        with pytest.raises(ValueError, match="positive"):
            ExperimentConfig(tol=0.0)
        with pytest.raises(ValueError, match="mode"):
            ExperimentConfig(modes=("in_sample", "smode"))
        with pytest.raises(ValueError, match="delta_grid"):
            ExperimentConfig(delta_grid=(0.0, 1.5))
        with pytest.raises(ValueError, match="concentrations"):
            ExperimentConfig(alpha_grid=(1.0, -2.0))
        with pytest.raises(ValueError, match="thresholds"):
            ExperimentConfig(thresholds=(-1,))

    def test_parse_config_file_and_overrides(self, tmp_path):
        path = tmp_path / "exp.cfg"
        path.write_text(
            "# comment line\n"
            "k = 7\n"
            "alpha_grid = 1.0, 2.0   # trailing comment\n"
            "thresholds = 0, 2\n"
            "modes = in_sample, predictive\n"
            "phi_params = a=2, b=4\n"
            "standardize = true\n")
        cfg = parse_config(path, overrides=["seed=9", "k=8"])
        assert cfg.k == 8  # override beats the file
        assert cfg.alpha_grid == (1.0, 2.0)
        assert cfg.thresholds == (0, 2)
        assert cfg.modes == ("in_sample", "predictive")
        assert cfg.phi_params == (("a", 2.0), ("b", 4.0))
        assert cfg.standardize is True
        assert cfg.seed == 9

    def test_parse_config_errors(self, tmp_path):
        path = tmp_path / "bad.cfg"
        path.write_text("k 7\n")
        with pytest.raises(ValueError, match="line 1"):
            parse_config(path)
        path.write_text("unknown_knob = 3\n")
        with pytest.raises(ValueError, match="unknown_knob"):
            parse_config(path)
        with pytest.raises(ValueError, match="override"):
            parse_config(None, overrides=["seed"])
        path.write_text("phi_params = 2.0\n")
        with pytest.raises(ValueError, match="name=value"):
            parse_config(path)

    def test_hash_stable_and_sensitive(self):
        a = ExperimentConfig()
        b = ExperimentConfig()
        assert config_hash(a) == config_hash(b)
        for change in (dict(seed=1), dict(k=31), dict(alpha0=8.5),
                       dict(thresholds=(1,)), dict(phi_params=(("c", 2.5),))):
            assert config_hash(dataclasses.replace(a, **change)) != config_hash(a)

    def test_make_perturbation_dispatch(self):
        cfg = ExperimentConfig(phi="prior_swap", phi_params=(("alpha1", 9.0),))
        assert make_perturbation(cfg).name == "prior_swap(9)"
        cfg = ExperimentConfig(phi="beta_swap", phi_params=())
        assert make_perturbation(cfg).name == "beta_swap(2,3)"
        cfg = ExperimentConfig(phi="tabulated")
        with pytest.raises(ValueError, match="phi_path"):
            make_perturbation(cfg)
        cfg = ExperimentConfig(phi="mystery")
        with pytest.raises(ValueError, match="mystery"):
            make_perturbation(cfg)


# ---------------------------------------------------------------------------
# concentration sweep
# ---------------------------------------------------------------------------

class TestAlphaSweep:
    def test_row_layout(self, alpha_config, alpha_report):
        cfg = alpha_config
        want = (len(cfg.alpha0_centers) * len(cfg.alpha_grid)
                * len(cfg.thresholds) * len(cfg.modes))
        assert len(alpha_report.rows) == want
        keys = {(r.center, r.epsilon, r.threshold, r.mode)
                for r in alpha_report.rows}
        assert len(keys) == want  # one row per combination

    def test_all_converged(self, alpha_report):
        assert alpha_report.all_converged

    def test_zero_epsilon_rows_identical(self, alpha_report):
        # at a grid point equal to the center the refit is the base fit
        # and the linear prediction is exact, including the MC seed
        rows = [r for r in alpha_report.rows if r.epsilon == r.center]
        assert rows
        for r in rows:
            assert r.refit_value == r.linear_value
            assert r.refit_stderr == r.linear_stderr

    def test_refit_columns_shared_across_centers(self, alpha_report):
        by_key = {}
        for r in alpha_report.rows:
            by_key.setdefault((r.epsilon, r.threshold, r.mode), set()).add(
                (r.refit_value, r.refit_stderr))
        for key, vals in by_key.items():
            assert len(vals) == 1, key

    def test_linear_tracks_refit_nearby(self, alpha_report):
        # half a unit from the center the linear prediction should agree
        # to within a few MC standard errors plus curvature slack
        for r in alpha_report.rows:
            if abs(r.epsilon - r.center) <= 0.5:
                slack = 3.0 * np.hypot(r.refit_stderr, r.linear_stderr) + 0.05
                assert abs(r.linear_value - r.refit_value) <= slack

    def test_unconverged_refit_flagged_not_fatal(self, alpha_config,
                                                 monkeypatch):
        real_optimize = harness.optimize

        def sabotage(init, data, model, pert=None, **kwargs):
            fit = real_optimize(init, data, model, pert=pert, **kwargs)
            if pert is not None and pert.alpha == 3.0:
                fit = dataclasses.replace(fit, converged=False)
            return fit

        monkeypatch.setattr(harness, "optimize", sabotage)
        cfg = dataclasses.replace(alpha_config, thresholds=(0,), n_mc=50)
        report = run_alpha_sweep(cfg)
        assert not report.all_converged
        flagged = [r for r in report.rows if not r.refit_converged]
        assert flagged and all(r.epsilon == 3.0 for r in flagged)
        # converged rows are unaffected
        assert any(r.refit_converged for r in report.rows)

    def test_mae_summary(self, alpha_report, alpha_config):
        mae = alpha_report.center_mae()
        assert set(mae) == set(alpha_config.alpha0_centers)
        assert all(v >= 0.0 for v in mae.values())


# ---------------------------------------------------------------------------
# functional sweep
# ---------------------------------------------------------------------------

class TestFunctionalSweep:
    def test_zero_delta_identical(self, phi_report):
        rows = [r for r in phi_report.rows if r.epsilon == 0.0]
        assert rows
        for r in rows:
            assert r.refit_value == r.linear_value
            assert r.refit_stderr == r.linear_stderr

    def test_prior_table_present(self, phi_report):
        table = phi_report.prior_table
        assert table is not None
        from scipy.stats import beta as beta_dist
        np.testing.assert_allclose(
            table["p_base"], beta_dist.pdf(table["nu"], 1, 2.0), atol=1e-10)
        assert "p_delta_1" in table
        # the delta=1 contaminated prior for this swap is Beta(1, 3)
        np.testing.assert_allclose(
            table["p_delta_1"], beta_dist.pdf(table["nu"], 1, 3.0), atol=1e-8)

    def test_swap_refit_matches_alpha_refit(self, phi_report, alpha_report):
        # cross-experiment oracle: the prior-swap refit at full strength
        # is the same posterior as the concentration-grid refit at alpha1
        swap_row = next(r for r in phi_report.rows
                        if r.epsilon == 1.0 and r.threshold == 0)
        alpha_row = next(r for r in alpha_report.rows
                         if r.epsilon == 3.0 and r.threshold == 0)
        slack = 3.0 * np.hypot(swap_row.refit_stderr, alpha_row.refit_stderr)
        assert abs(swap_row.refit_value - alpha_row.refit_value) <= slack

    def test_metadata_names_perturbation(self, phi_report):
        assert phi_report.metadata["perturbation"] == "prior_swap(3)"
        assert phi_report.kind == "phi"


# ---------------------------------------------------------------------------
# emission
# ---------------------------------------------------------------------------

class TestEmission:
    def test_report_round_trip(self, alpha_report, alpha_out):
        _, paths = alpha_out
        back = read_report(paths["report"])
        assert back.rows == alpha_report.rows
        assert back.metadata == alpha_report.metadata
        assert back.kind == alpha_report.kind

    def test_svg_well_formed(self, alpha_out):
        out, paths = alpha_out
        svgs = sorted(out.glob("*.svg"))
        assert len(svgs) == 4  # 2 centers x 2 thresholds x 1 mode
        for svg in svgs:
            root = ET.parse(svg).getroot()
            assert root.tag.endswith("svg")

    def test_manifest_contents(self, alpha_report, alpha_out, alpha_config):
        _, paths = alpha_out
        manifest = json.loads(paths["manifest"].read_text())
        assert manifest["metadata"]["config_hash"] == config_hash(alpha_config)
        assert manifest["config"]["k"] == alpha_config.k
        assert manifest["rows"] == len(alpha_report.rows)
        assert set(manifest["versions"]) >= {"bnpsens", "numpy", "scipy", "jax"}

    def test_timings_separate_from_report(self, alpha_out):
        out, paths = alpha_out
        text = paths["report"].read_text()
        assert "wall" not in text
        ttext = paths["timings"].read_text()
        assert ttext.splitlines()[0].endswith("refit_wall_s,linear_wall_s")

    def test_repeat_run_byte_identical(self, alpha_config, alpha_out,
                                       tmp_path):
        out1, paths1 = alpha_out
        report2 = run_alpha_sweep(alpha_config)
        emit_report(report2, tmp_path)
        for name in ("report.csv", "manifest.json"):
            assert (tmp_path / name).read_bytes() == (out1 / name).read_bytes()
        for svg in out1.glob("*.svg"):
            assert (tmp_path / svg.name).read_bytes() == svg.read_bytes()
        # timings are measurements, not outputs under test

    def test_prior_density_emitted(self, phi_report, tmp_path):
        paths = emit_report(phi_report, tmp_path)
        lines = paths["prior_density"].read_text().splitlines()
        assert lines[0].split(",")[0] == "nu"
        assert len(lines) == 1 + len(phi_report.prior_table["nu"])

    def test_unwritable_path_errors(self, alpha_report):
        with pytest.raises(OSError):
            emit_report(alpha_report, "/proc/definitely/not/writable")

    def test_read_report_rejects_garbage(self, tmp_path):
        bad = tmp_path / "report.csv"
        bad.write_text("# kind: alpha\nwrong,columns\n")
        with pytest.raises(ValueError, match="columns"):
            read_report(bad)

    def test_worker_count_does_not_change_results(self, alpha_config,
                                                  alpha_report):
        cfg = dataclasses.replace(alpha_config, n_workers=3)
        report = run_alpha_sweep(cfg)
        stripped = [dataclasses.replace(r, refit_wall_s=0.0, linear_wall_s=0.0)
                    for r in report.rows]
        base = [dataclasses.replace(r, refit_wall_s=0.0, linear_wall_s=0.0)
                for r in alpha_report.rows]
        assert stripped == base
