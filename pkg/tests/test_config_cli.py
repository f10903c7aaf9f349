"""Config parsing and the command line front end.

CLI tests call main() in-process with a shrunken config (coarse quadrature,
short chain, small panel) so they exercise plumbing and file contracts, not
numerics; numerical claims live in the per-module tests and the acceptance
suite.
"""

from __future__ import annotations

import hashlib
import json
import math
from pathlib import Path

import numpy as np
import pytest

from bonusmalus.cli import main
from bonusmalus.config import EXAMPLE_CONFIG, config_sha256, load_config


def _write(tmp_path: Path, text: str, name: str = "run.ini") -> Path:
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


def _patched(old: str, new: str) -> str:
    # guard against silent drift of the worked example
    assert old in EXAMPLE_CONFIG
    return EXAMPLE_CONFIG.replace(old, new)


SMALL = (
    EXAMPLE_CONFIG.replace("order = 512", "order = 64")
    .replace("subjects = 10000", "subjects = 400")
    .replace("years = 5", "years = 3")
    .replace("burn_in = 300", "burn_in = 50")
    .replace("iterations = 60000", "iterations = 800")
    .replace("burn_in = 20000", "burn_in = 200")
    .replace("thin = 5", "thin = 4")
    .replace("seed = 0", "seed = 1")
)


@pytest.fixture()
def small_cfg(tmp_path):
    return _write(tmp_path, SMALL)


class TestLoadConfig:
    def test_worked_example_round_trip(self, tmp_path):
        cfg = load_config(_write(tmp_path, EXAMPLE_CONFIG))
        coeffs = cfg.params.coeffs
        assert tuple(coeffs.labels) == (
            "Intercept", "City", "County", "School", "Town", "Village",
            "Coverage2", "Coverage3",
        )
        assert tuple(coeffs.baselines) == ("Miscellaneous", "Coverage1")
        np.testing.assert_array_equal(
            coeffs.beta1, [-2.767, 0.597, 1.907, 0.411, -1.351, -0.012, 1.247, 2.139]
        )
        np.testing.assert_array_equal(
            coeffs.beta2, [8.829, -0.036, 0.341, -0.173, 0.497, 0.316, 0.180, -0.027]
        )
        assert cfg.params.psi2 == 1.0 / 0.670
        assert cfg.params.effects.sigma1 == math.sqrt(0.992)
        assert cfg.params.effects.sigma2 == math.sqrt(0.293)
        assert cfg.params.effects.rho == -0.447

        labels = [rc.label for rc in cfg.portfolio.classes]
        assert len(labels) == 18
        assert labels[0] == "Miscellaneous:Coverage1"
        assert "County:Coverage3" in labels
        np.testing.assert_allclose(
            cfg.portfolio.classes[0].weight, 0.0503 * 0.3340, rtol=1e-12
        )
        assert abs(cfg.portfolio.weights.sum() - 1.0) < 1e-12

        assert (cfg.rule.z, cfg.rule.h) == (10, 1)
        assert cfg.quad.order1 == 512
        assert cfg.quad.scheme == "tensor2d"
        assert (cfg.sim.subjects, cfg.sim.years) == (10000, 5)
        assert (cfg.sim.seed, cfg.sim.burn_in) == (20260815, 300)
        assert cfg.sim.rule == cfg.rule
        assert (cfg.mcmc.iterations, cfg.mcmc.burn_in, cfg.mcmc.thin) == (60000, 20000, 5)
        assert cfg.mcmc.seed == 0
        # no [priors] section: diffuse defaults sized to the design
        np.testing.assert_array_equal(cfg.priors.A1, 100.0 * np.eye(8))
        np.testing.assert_array_equal(cfg.priors.a2, np.zeros(8))
        assert cfg.entity_levels == (
            "Miscellaneous", "City", "County", "School", "Town", "Village"
        )
        assert cfg.coverage_levels == ("Coverage1", "Coverage2", "Coverage3")

    @pytest.mark.parametrize(
        ("old", "new", "message"),
        [
            ("[effects]\n", "[fx]\n", r"missing the \[effects\] section"),
            ("inv_psi2 = 0.670", "inv_psi2 = 0.670\npsi2 = 1.4925", "not both"),
            ("inv_psi2 = 0.670", "", "needs psi2 or inv_psi2"),
            ("inv_psi2 = 0.670", "inv_psi2 = -2.0", "inv_psi2 must be positive"),
            (
                "labels = Intercept, City, County, School, Town, Village, Coverage2, Coverage3",
                "labels =",
                "labels must be a nonempty list",
            ),
            ("beta1 = -2.767", "beta1 = -2.767, oops", "comma-separated float list"),
            ("rho = -0.447", "", "needs sigma1_sq, sigma2_sq, and rho"),
            ("sigma2_sq = 0.293", "sigma2_sq = -0.293", "variances must be positive"),
            (
                "entity_levels = Miscellaneous, City, County, School, Town, Village",
                "entity_levels =",
                "needs entity_levels and coverage_levels",
            ),
            (
                "coverage_weights = 0.3340, 0.3320, 0.3340",
                "coverage_weights = 0.5, 0.5",
                "match their level lists",
            ),
        ],
    )
    def test_errors_name_section_and_key(self, tmp_path, old, new, message):
        path = _write(tmp_path, _patched(old, new))
        with pytest.raises(ValueError, match=message):
            load_config(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ValueError, match="cannot read config file"):
            load_config(tmp_path / "absent.ini")

    def test_joint_weights_length_names_expected_count(self, tmp_path):
        text = _patched(
            "entity_weights = 0.0503, 0.0966, 0.1147, 0.3642, 0.1690, 0.2052",
            "joint_weights = 0.5, 0.3, 0.2",
        ).replace("coverage_weights = 0.3340, 0.3320, 0.3340\n", "")
        with pytest.raises(ValueError, match="18 entries"):
            load_config(_write(tmp_path, text))

    def test_joint_weights_override_product_assumption(self, tmp_path):
        w = np.arange(1.0, 19.0)
        w /= w.sum()
        text = _patched(
            "entity_weights = 0.0503, 0.0966, 0.1147, 0.3642, 0.1690, 0.2052",
            "joint_weights = " + ", ".join(repr(float(v)) for v in w),
        ).replace("coverage_weights = 0.3340, 0.3320, 0.3340\n", "")
        cfg = load_config(_write(tmp_path, text))
        np.testing.assert_allclose(cfg.portfolio.weights, w, rtol=1e-14)

    def test_optional_sections_override_defaults(self, tmp_path):
        text = EXAMPLE_CONFIG + (
            "step_beta1 = 0.07\n"
            "step_latent = 0.9\n"
            "adapt_interval = 50\n"
            "fix_rho = -0.3\n"
            "prior_only = true\n"
            "\n[priors]\n"
            "normal_variance = 25\n"
            "c0 = 3.0\nd0 = 2.0\ne0 = 0.1\nf0 = 2.5\ng0 = 0.2\nh0 = 1.5\n"
        )
        cfg = load_config(_write(tmp_path, text))
        assert cfg.mcmc.step_beta1 == 0.07
        assert cfg.mcmc.step_latent == 0.9
        assert cfg.mcmc.adapt_interval == 50
        assert cfg.mcmc.fix_rho == -0.3
        assert cfg.mcmc.prior_only is True
        np.testing.assert_array_equal(cfg.priors.A1, 25.0 * np.eye(8))
        np.testing.assert_array_equal(cfg.priors.A2, 25.0 * np.eye(8))
        assert (cfg.priors.c0, cfg.priors.d0) == (3.0, 2.0)
        assert (cfg.priors.e0, cfg.priors.f0) == (0.1, 2.5)
        assert (cfg.priors.g0, cfg.priors.h0) == (0.2, 1.5)

    def test_fix_rho_none_token_means_free(self, tmp_path):
        cfg = load_config(_write(tmp_path, EXAMPLE_CONFIG + "fix_rho = none\n"))
        assert cfg.mcmc.fix_rho is None

    def test_config_sha256_matches_raw_bytes(self, tmp_path):
        path = _write(tmp_path, EXAMPLE_CONFIG)
        assert config_sha256(path) == hashlib.sha256(path.read_bytes()).hexdigest()
        other = _write(tmp_path, EXAMPLE_CONFIG + "# note\n", name="other.ini")
        assert config_sha256(other) != config_sha256(path)


class TestCli:
    def test_example_config_subcommand_prints_loadable_config(self, tmp_path, capsys):
        assert main(["example-config"]) == 0
        text = capsys.readouterr().out
        assert text == EXAMPLE_CONFIG
        load_config(_write(tmp_path, text))

    def test_version_flag(self):
        with pytest.raises(SystemExit) as err:
            main(["--version"])
        assert err.value.code == 0

    def test_missing_required_flag_is_usage_error(self):
        with pytest.raises(SystemExit) as err:
            main(["relativities"])
        assert err.value.code == 2

    def test_relativities_writes_one_csv_pair_per_rule(self, small_cfg, tmp_path):
        out = tmp_path / "rel"
        code = main([
            "relativities", "--config", str(small_cfg), "--out", str(out),
            "--rule", "10:1", "--rule", "6:2",
        ])
        assert code == 0
        names = sorted(p.name for p in out.iterdir())
        assert names == [
            "hmse_z10_h1.csv", "hmse_z6_h2.csv", "manifest.json",
            "relativities_z10_h1.csv", "relativities_z6_h2.csv",
        ]
        lines = (out / "relativities_z6_h2.csv").read_text().splitlines()
        assert lines[0] == "level,p,r_dep,r_indep,r_tan"
        assert len(lines) == 1 + 6
        audit = (out / "hmse_z10_h1.csv").read_text().splitlines()
        assert audit[0] == "vector,hmse,hmse_normalized,balance_lhs,balance_rhs,balance_gap"
        assert [row.split(",")[0] for row in audit[1:]] == ["r_dep", "r_indep", "r_tan"]

        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["command"] == "relativities"
        assert manifest["input_sha256"] == config_sha256(small_cfg)
        assert manifest["seed"] is None
        assert manifest["outputs"] == [n for n in names if n != "manifest.json"]
        assert set(manifest["versions"]) == {"bonusmalus", "numpy", "scipy", "python"}

    def test_relativities_default_penalty_sweep(self, small_cfg, tmp_path):
        out = tmp_path / "sweep"
        assert main(["relativities", "--config", str(small_cfg), "--out", str(out)]) == 0
        names = {p.name for p in out.iterdir()}
        assert {
            "relativities_z10_h1.csv",
            "relativities_z10_h2.csv",
            "relativities_z10_h3.csv",
        } <= names

    def test_rho_sweep_keeps_rho_free_columns_bit_identical(self, small_cfg, tmp_path):
        out = tmp_path / "rho"
        code = main([
            "relativities", "--config", str(small_cfg), "--out", str(out),
            "--rule", "8:1", "--rho-sweep=-0.8,0,0.4",
        ])
        assert code == 0
        tables = {}
        for tag in ("-0.8", "0", "0.4"):
            rows = (out / f"relativities_z8_h1_rho{tag}.csv").read_text().splitlines()[1:]
            tables[tag] = [row.split(",") for row in rows]
            assert len(tables[tag]) == 8
        for tag in ("0", "0.4"):
            for got, ref in zip(tables[tag], tables["-0.8"]):
                assert got[1] == ref[1]  # P(L = l) never depends on rho
                assert got[3] == ref[3]  # repr strings, so equality is bitwise
                assert got[4] == ref[4]
        r_dep = {tag: [row[2] for row in rows] for tag, rows in tables.items()}
        assert r_dep["-0.8"] != r_dep["0"] != r_dep["0.4"]

    @pytest.mark.parametrize(
        ("argv_extra", "fragment"),
        [
            (["--rule", "10"], "expects z:h"),
            (["--rule", "10:x"], "expects integers z:h"),
            (["--rho-sweep=a,b"], "comma-separated reals"),
        ],
    )
    def test_bad_flag_values_exit_two(self, small_cfg, tmp_path, capsys, argv_extra, fragment):
        out = tmp_path / "bad"
        code = main(["relativities", "--config", str(small_cfg), "--out", str(out)] + argv_extra)
        assert code == 2
        assert fragment in capsys.readouterr().err

    def test_missing_section_exits_two_naming_it(self, tmp_path, capsys):
        broken = _write(tmp_path, _patched("[effects]\n", "[fx]\n"), name="broken.ini")
        code = main(["relativities", "--config", str(broken), "--out", str(tmp_path / "o")])
        assert code == 2
        assert "[effects]" in capsys.readouterr().err

    def test_hmse_user_vector_must_match_rule_length(self, small_cfg, tmp_path, capsys):
        out = tmp_path / "h"
        code = main(["hmse", "--config", str(small_cfg), "--out", str(out), "--r", "1.0,1.0,1.0"])
        assert code == 2
        assert "z=10" in capsys.readouterr().err

    def test_hmse_audits_computed_vectors_by_default(self, small_cfg, tmp_path):
        out = tmp_path / "h2"
        assert main(["hmse", "--config", str(small_cfg), "--out", str(out)]) == 0
        rows = (out / "hmse.csv").read_text().splitlines()
        assert [r.split(",")[0] for r in rows] == ["vector", "r_dep", "r_indep", "r_tan"]
        dep = rows[1].split(",")
        rhs, gap = float(dep[4]), float(dep[5])
        assert gap <= 1e-8 * rhs  # the dependence-aware vector balances by construction
        hmse_vals = [float(r.split(",")[1]) for r in rows[1:]]
        assert hmse_vals[0] <= min(hmse_vals[1:])

    def test_hmse_user_vector_row(self, small_cfg, tmp_path):
        out = tmp_path / "h3"
        vec = ",".join(["1.0"] * 10)
        assert main(["hmse", "--config", str(small_cfg), "--out", str(out), "--r", vec]) == 0
        rows = (out / "hmse.csv").read_text().splitlines()
        assert len(rows) == 2
        assert rows[1].startswith("user,")
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["outputs"] == ["hmse.csv"]

    def test_moments_row_per_class_statistic(self, small_cfg, tmp_path):
        out = tmp_path / "m"
        assert main(["moments", "--config", str(small_cfg), "--out", str(out)]) == 0
        rows = (out / "moments.csv").read_text().splitlines()
        assert rows[0] == "class,statistic,value"
        assert len(rows) == 1 + 18 * 19  # 18 classes, 19 statistics each
        classes = {r.split(",")[0] for r in rows[1:]}
        assert len(classes) == 18
        assert "County:Coverage3" in classes

    def test_simulate_then_estimate_pipeline(self, small_cfg, tmp_path):
        sim_out = tmp_path / "sim"
        code = main(["simulate", "--config", str(small_cfg), "--out", str(sim_out), "--seed", "7"])
        assert code == 0
        panel_path = sim_out / "panel.csv"
        manifest = json.loads((sim_out / "manifest.json").read_text())
        assert manifest["seed"] == 7
        assert manifest["outputs"] == ["panel.csv"]
        panel_bytes = panel_path.read_bytes()

        sum_out = tmp_path / "sum"
        assert main(["summarize", "--panel", str(panel_path), "--out", str(sum_out)]) == 0
        names = sorted(p.name for p in sum_out.iterdir())
        assert names == [
            "manifest.json", "summary_by_level.csv",
            "summary_frequency_by_year.csv", "summary_totals.csv",
        ]
        digest = hashlib.sha256(panel_bytes).hexdigest()
        assert json.loads((sum_out / "manifest.json").read_text())["input_sha256"] == digest

        est_out = tmp_path / "est"
        code = main([
            "estimate", "--config", str(small_cfg), "--panel", str(panel_path),
            "--out", str(est_out), "--seed", "3", "--hpd", "--predict",
        ])
        assert code == 0
        kept = (800 - 200) // 4
        draws = (est_out / "draws.csv").read_text().splitlines()
        assert len(draws) == 1 + kept
        summary = (est_out / "posterior_summary.csv").read_text().splitlines()
        assert summary[0] == "parameter,median,std_error,lower95,upper95"
        assert {r.split(",")[0] for r in summary[1:]} >= {
            "rho", "inv_psi2", "sigma1_sq", "sigma2_sq",
        }
        diag = json.loads((est_out / "diagnostics.json").read_text())
        assert diag["draws"] == kept
        assert math.isfinite(diag["dic"])
        assert diag["acceptance"]
        assert all(0.0 <= v <= 1.0 for v in diag["acceptance"].values())
        totals = (est_out / "predictive_totals.csv").read_text().splitlines()
        assert totals[0] == "total"
        assert len(totals) == 1 + kept
        manifest = json.loads((est_out / "manifest.json").read_text())
        assert manifest["seed"] == 3
        assert manifest["outputs"] == [
            "diagnostics.json", "draws.csv", "posterior_summary.csv",
            "predictive_totals.csv",
        ]
        # no command mutates its inputs
        assert panel_path.read_bytes() == panel_bytes

    def test_simulate_rerun_is_bit_identical(self, small_cfg, tmp_path):
        out1, out2 = tmp_path / "a", tmp_path / "b"
        assert main(["simulate", "--config", str(small_cfg), "--out", str(out1)]) == 0
        assert main(["simulate", "--config", str(small_cfg), "--out", str(out2)]) == 0
        assert (out1 / "panel.csv").read_bytes() == (out2 / "panel.csv").read_bytes()
        assert (out1 / "manifest.json").read_bytes() == (out2 / "manifest.json").read_bytes()

    def test_numerical_failure_exits_one(self, small_cfg, tmp_path, monkeypatch, capsys):
        def blow_up(*args, **kwargs):
            raise FloatingPointError("synthetic overflow")

        monkeypatch.setattr("bonusmalus.cli.relativity_table", blow_up)
        code = main([
            "relativities", "--config", str(small_cfg), "--out", str(tmp_path / "o"),
            "--rule", "10:1",
        ])
        assert code == 1
        assert "synthetic overflow" in capsys.readouterr().err
