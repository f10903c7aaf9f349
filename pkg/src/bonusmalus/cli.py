"""Command line front end.

Every subcommand that produces files also drops a ``manifest.json`` next to
them recording the tool versions, the SHA-256 of the input config (or
panel), the seed in effect, and the list of outputs.  Outputs are
deterministic given their inputs, so re-running a command from its manifest
reproduces the files byte for byte.

Exit codes: 0 on success, 2 on a configuration or validation failure
(including bad flags), 1 on a runtime or numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import platform
import sys
from pathlib import Path

import numpy as np
import scipy

import bonusmalus
from bonusmalus.chain import TransitionRule
from bonusmalus.config import EXAMPLE_CONFIG, config_sha256, load_config
from bonusmalus.effects import EffectsSpec
from bonusmalus.estimate import (
    dic,
    run_mcmc,
    summarize_posterior,
    write_draws_csv,
)
from bonusmalus.moments import write_moments_csv
from bonusmalus.portfolio import ingest_panel, summarize_panel, write_panel_csv
from bonusmalus.relativity import balance_check, hmse, relativity_table
from bonusmalus.simulate import (
    posterior_predictive_total,
    simulate_panel,
    write_totals_csv,
)


def _write_manifest(out_dir: Path, command: str, source_hash: str, seed, outputs) -> Path:
    manifest = {
        "command": command,
        "input_sha256": source_hash,
        "seed": seed,
        "versions": {
            "bonusmalus": bonusmalus.__version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "python": platform.python_version(),
        },
        "outputs": sorted(p.name for p in outputs),
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _out_dir(raw: str) -> Path:
    path = Path(raw)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _parse_rule(token: str) -> TransitionRule:
    parts = token.split(":")
    if len(parts) != 2:
        raise ValueError(f"--rule expects z:h (e.g. 10:2), got {token!r}")
    try:
        z, h = int(parts[0]), int(parts[1])
    except ValueError:
        raise ValueError(f"--rule expects integers z:h, got {token!r}") from None
    return TransitionRule(z, h)


def _rule_tag(rule: TransitionRule) -> str:
    return f"z{rule.z}_h{rule.h}"


def _cmd_example_config(args) -> int:
    sys.stdout.write(EXAMPLE_CONFIG)
    return 0


def _write_rule_outputs(cfg, rule, effects, out: Path, suffix: str) -> list[Path]:
    table = relativity_table(cfg.portfolio, effects, rule, cfg.quad)
    table_path = out / f"relativities_{suffix}.csv"
    table.write_csv(table_path)
    audit_path = out / f"hmse_{suffix}.csv"
    with open(audit_path, "w", encoding="utf-8") as fh:
        fh.write("vector,hmse,hmse_normalized,balance_lhs,balance_rhs,balance_gap\n")
        for name, r in (("r_dep", table.r_dep), ("r_indep", table.r_indep), ("r_tan", table.r_tan)):
            raw = hmse(cfg.portfolio, effects, rule, cfg.quad, r)
            norm = hmse(cfg.portfolio, effects, rule, cfg.quad, r, normalized=True)
            lhs, rhs, gap = balance_check(cfg.portfolio, effects, rule, cfg.quad, r)
            fh.write(f"{name},{raw!r},{norm!r},{lhs!r},{rhs!r},{gap!r}\n")
    return [table_path, audit_path]


def _cmd_relativities(args) -> int:
    cfg = load_config(args.config)
    if args.rule:
        rules = [_parse_rule(tok) for tok in args.rule]
    else:
        # default sweep: drop one level per clean year, charge 1, 2, or 3
        z = cfg.rule.z
        rules = [TransitionRule(z, h) for h in (1, 2, 3) if h <= z - 1]
    base = cfg.params.effects
    if args.rho_sweep:
        try:
            rhos = [float(tok) for tok in args.rho_sweep.split(",") if tok.strip()]
        except ValueError:
            raise ValueError(f"--rho-sweep expects comma-separated reals, got {args.rho_sweep!r}") from None
        effect_grid = [(f"_rho{r:g}", EffectsSpec(base.sigma1, base.sigma2, r)) for r in rhos]
    else:
        effect_grid = [("", base)]
    out = _out_dir(args.out)
    written = []
    for rule in rules:
        for rho_tag, effects in effect_grid:
            written.extend(_write_rule_outputs(cfg, rule, effects, out, _rule_tag(rule) + rho_tag))
    _write_manifest(out, "relativities", config_sha256(args.config), None, written)
    return 0


def _cmd_hmse(args) -> int:
    cfg = load_config(args.config)
    rule = _parse_rule(args.rule) if args.rule else cfg.rule
    out = _out_dir(args.out)
    path = out / "hmse.csv"
    if args.r is not None:
        r = np.array([float(tok) for tok in args.r.split(",") if tok.strip()])
        if r.shape != (rule.z,):
            raise ValueError(
                f"--r needs exactly z={rule.z} comma-separated values, got {r.shape[0]}"
            )
        vectors = [("user", r)]
    else:
        table = relativity_table(cfg.portfolio, cfg.params.effects, rule, cfg.quad)
        vectors = [("r_dep", table.r_dep), ("r_indep", table.r_indep), ("r_tan", table.r_tan)]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("vector,hmse,hmse_normalized,balance_lhs,balance_rhs,balance_gap\n")
        for name, vec in vectors:
            raw = hmse(cfg.portfolio, cfg.params.effects, rule, cfg.quad, vec)
            norm = hmse(cfg.portfolio, cfg.params.effects, rule, cfg.quad, vec, normalized=True)
            lhs, rhs, gap = balance_check(cfg.portfolio, cfg.params.effects, rule, cfg.quad, vec)
            fh.write(f"{name},{raw!r},{norm!r},{lhs!r},{rhs!r},{gap!r}\n")
    _write_manifest(out, "hmse", config_sha256(args.config), None, [path])
    return 0


def _cmd_moments(args) -> int:
    cfg = load_config(args.config)
    out = _out_dir(args.out)
    path = out / "moments.csv"
    write_moments_csv(cfg.params, cfg.portfolio, path)
    _write_manifest(out, "moments", config_sha256(args.config), None, [path])
    return 0


def _cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    sim = cfg.sim if args.seed is None else cfg.sim.with_seed(args.seed)
    panel = simulate_panel(cfg.params, cfg.portfolio, sim)
    out = _out_dir(args.out)
    path = out / "panel.csv"
    write_panel_csv(panel, path)
    _write_manifest(out, "simulate", config_sha256(args.config), sim.seed, [path])
    return 0


def _cmd_summarize(args) -> int:
    panel = ingest_panel(args.panel)
    summary = summarize_panel(panel)
    out = _out_dir(args.out)
    written = summary.write_csv(out)
    digest = hashlib.sha256(Path(args.panel).read_bytes()).hexdigest()
    _write_manifest(out, "summarize", digest, None, written)
    return 0


def _cmd_estimate(args) -> int:
    cfg = load_config(args.config)
    panel = ingest_panel(args.panel)
    mcmc = cfg.mcmc if args.seed is None else cfg.mcmc.with_seed(args.seed)
    sample = run_mcmc(
        panel,
        cfg.priors,
        mcmc,
        labels=cfg.params.coeffs.labels,
        baselines=cfg.params.coeffs.baselines,
    )
    out = _out_dir(args.out)
    draws_path = out / "draws.csv"
    write_draws_csv(sample, draws_path)
    summary_path = out / "posterior_summary.csv"
    with open(summary_path, "w", encoding="utf-8") as fh:
        fh.write("parameter,median,std_error,lower95,upper95\n")
        for row in summarize_posterior(sample, hpd=args.hpd):
            fh.write(
                f"{row['parameter']},{row['median']!r},{row['std_error']!r},"
                f"{row['lower95']!r},{row['upper95']!r}\n"
            )
    diag_path = out / "diagnostics.json"
    diag = {
        "dic": dic(sample, panel),
        "acceptance": {k: round(v, 4) for k, v in sample.acceptance.items()},
        "draws": len(sample),
    }
    diag_path.write_text(json.dumps(diag, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    written = [draws_path, summary_path, diag_path]
    if args.predict:
        draws = [sample.params_at(j) for j in range(len(sample))]
        totals = posterior_predictive_total(draws, cfg.portfolio, cfg.sim)
        totals_path = out / "predictive_totals.csv"
        write_totals_csv(totals, totals_path)
        written.append(totals_path)
    _write_manifest(out, "estimate", config_sha256(args.config), mcmc.seed, written)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bonusmalus",
        description="Relativities, moments, simulation, and estimation for a "
        "frequency-severity experience rating model with dependent random effects.",
    )
    parser.add_argument("--version", action="version", version=bonusmalus.__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("example-config", help="print a complete worked config file")
    p.set_defaults(func=_cmd_example_config)

    p = sub.add_parser(
        "relativities",
        help="per-level premiums with their error audit, one CSV pair per rule",
    )
    p.add_argument("--config", required=True, help="INI run configuration")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument(
        "--rule",
        action="append",
        metavar="Z:H",
        help="transition rule as levels:penalty; repeatable; default tries "
        "penalties 1, 2, 3 at the configured level count",
    )
    p.add_argument(
        "--rho-sweep",
        metavar="A,B,C",
        help="recompute with these dependence values, all else fixed",
    )
    p.set_defaults(func=_cmd_relativities)

    p = sub.add_parser("hmse", help="mean square error and balance audit of a relativity vector")
    p.add_argument("--config", required=True, help="INI run configuration")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--rule", metavar="Z:H", help="transition rule (default from config)")
    p.add_argument("--r", help="comma-separated relativity vector; default audits computed vectors")
    p.set_defaults(func=_cmd_hmse)

    p = sub.add_parser("moments", help="closed-form moments and correlations per class")
    p.add_argument("--config", required=True, help="INI run configuration")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_moments)

    p = sub.add_parser("simulate", help="draw a synthetic claims panel")
    p.add_argument("--config", required=True, help="INI run configuration")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, help="override the configured simulation seed")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("summarize", help="descriptive tables for a claims panel")
    p.add_argument("--panel", required=True, help="claims panel CSV")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_summarize)

    p = sub.add_parser("estimate", help="posterior sampling from a claims panel")
    p.add_argument("--config", required=True, help="INI run configuration")
    p.add_argument("--panel", required=True, help="claims panel CSV")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, help="override the configured chain seed")
    p.add_argument(
        "--hpd",
        action="store_true",
        help="report highest-density intervals instead of equal-tailed ones",
    )
    p.add_argument(
        "--predict",
        action="store_true",
        help="also emit next-year portfolio totals, one per posterior draw",
    )
    p.set_defaults(func=_cmd_estimate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ArithmeticError, RuntimeError, np.linalg.LinAlgError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
