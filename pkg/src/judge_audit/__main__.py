import argparse
import copy
import logging
import os
import sys
import traceback
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np
import yaml

from . import __version__
from .calibration import split_calibration_effect
from .constants import DEFAULTS, ROUTING_CSV_HEADERS, THREADS_ENV_VAR
from .dataset import dump_pointwise, load_pairwise, load_pointwise
from .decision_metrics import audit
from .errors import ConfigError, JudgeAuditError, MetricUndefinedError
from .inference import (
    OUTCOME_MODELS,
    BootstrapConfig,
    aipw_value,
    apply_design,
    dr_recovery,
    margin_ranked_design,
    neyman_allocation,
    uniform_design,
)
from .labs.routing import (
    adaptive_resampling_sim,
    budget_sweep,
    compute_outcomes,
    gain_decomposition,
    resolve_policy,
    voi_diagnostics,
    RoutingPolicy,
)
from .labs.simulation import (
    GaussianConfig,
    discretization_sweep,
    generate_gaussian,
    nonidentifiability_pair,
    recovery_requirements,
)
from .pairwise_audit import (
    bestofk_with_borda,
    confidence_calibration,
    pairwise_stats,
    preference_covariance_decomposition,
    preferences_from_pointwise,
)
from .reporting import (
    config_markdown,
    markdown_table,
    run_metadata,
    to_jsonable,
    write_csv,
    write_json,
    write_markdown,
)
from .utils import top_two_margin

logger = logging.getLogger("judge_audit")

DEFAULT_CONFIG = Path("config.yaml")


def load_config(config_path: Optional[Path]) -> Dict[str, Any]:
    """Load and parse the YAML (or JSON) configuration file.

    Without an explicit path the default ``config.yaml`` is optional.
    """
    path = config_path or DEFAULT_CONFIG
    try:
        with open(path, "r", encoding="utf-8") as f:
            config = yaml.safe_load(f)
    except FileNotFoundError:
        if config_path is None:
            return {}
        raise ConfigError(f"configuration file not found: {config_path}")
    except yaml.YAMLError as e:
        raise ConfigError(f"error parsing configuration {path}: {e}")
    if config is None:
        return {}
    if not isinstance(config, dict):
        raise ConfigError(f"configuration {path} must be a mapping of sections")
    return config


def _merge(base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
    merged = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def resolve_section(
    config: Dict[str, Any], section: str, flags: Dict[str, Any]
) -> Dict[str, Any]:
    """Defaults < config file section < command-line flags (flags left unset are ignored)."""
    settings = _merge(DEFAULTS.get(section, {}), config.get(section) or {})
    return _merge(settings, {k: v for k, v in flags.items() if v is not None})


def _bootstrap_settings(config: Dict[str, Any], args: argparse.Namespace, resamples: Optional[int]):
    settings = resolve_section(config, "bootstrap", {"resamples": resamples, "seed": args.seed})
    return settings, BootstrapConfig.from_dict(settings, threads=args.threads)


def _require_file(path: Path) -> Path:
    if not path.is_file():
        raise FileNotFoundError(f"no such input: {path}")
    return path


def _prepare_out(args: argparse.Namespace) -> Path:
    args.out.mkdir(parents=True, exist_ok=True)
    return args.out


def _report(out: Path, stem: str, payload: Dict[str, Any], markdown: Optional[str], title: str) -> List[str]:
    write_json(payload, out / f"{stem}.json")
    written = [f"{stem}.json"]
    if markdown is not None:
        write_markdown(markdown + config_markdown(payload["meta"]), out / f"{stem}.md", title=title)
        written.append(f"{stem}.md")
    return written


# --------------------------------------------------------------------------
# Commands


def cmd_audit(args: argparse.Namespace, config: Dict[str, Any]) -> int:
    settings = resolve_section(
        config, "audit", {"format": args.format, "unbounded": args.unbounded or None}
    )
    source = _require_file(args.input)
    ds = load_pointwise(source, format=settings["format"], unbounded=bool(settings["unbounded"]))
    resolved: Dict[str, Any] = {"audit": settings}
    cfg = None
    if args.bootstrap:
        resolved["bootstrap"], cfg = _bootstrap_settings(config, args, args.bootstrap)
    report = audit(ds, cfg)
    meta = run_metadata("audit", resolved, [source])
    out = _prepare_out(args)
    written = _report(out, "report", {"meta": meta, "report": report.to_dict()}, report.to_markdown(), "Judge audit")
    print(f"Processed {source.name} -> {', '.join(written)} ({ds.n_prompts} prompts, {ds.n_records} records)")
    return 0


def cmd_pairwise(args: argparse.Namespace, config: Dict[str, Any]) -> int:
    settings = resolve_section(
        config, "pairwise", {"bins": args.bins, "from_pointwise": args.from_pointwise or None}
    )
    source = _require_file(args.input)
    inputs = [source]
    if settings.get("from_pointwise"):
        pw = preferences_from_pointwise(load_pointwise(source, unbounded=args.unbounded))
    else:
        pw = load_pairwise(source)

    stats = pairwise_stats(pw)
    result: Dict[str, Any] = {"stats": stats.to_dict()}
    sections = ["## Pairwise agreement", "", stats.to_markdown()]
    if any(r.stated_prob_a is not None for r in pw.records):
        try:
            table = confidence_calibration(pw, settings["bins"])
            result["calibration"] = table.to_dict()
            sections += ["## Stated-probability calibration", "", table.to_markdown()]
        except MetricUndefinedError as exc:
            result["calibration"] = {"reason": str(exc)}
    try:
        covariance = preference_covariance_decomposition(pw)
        result["preference_covariance"] = covariance.to_dict()
        sections += ["## Preference covariance", "", markdown_table([covariance.to_dict()], list(vars(covariance)))]
    except MetricUndefinedError as exc:
        result["preference_covariance"] = {"reason": str(exc)}
    if args.borda:
        pointwise_path = _require_file(args.borda)
        inputs.append(pointwise_path)
        selection = bestofk_with_borda(load_pointwise(pointwise_path, unbounded=args.unbounded), pw)
        result["borda"] = selection.to_dict()
        borda_row = dict(vars(selection.values), recovery=selection.recovery,
                         prompt_coverage=selection.prompt_coverage,
                         round_robin_coverage=selection.round_robin_coverage)
        sections += ["## Best-of-k with Borda aggregation", "", markdown_table([borda_row], list(borda_row))]

    meta = run_metadata("pairwise", {"pairwise": settings}, inputs)
    out = _prepare_out(args)
    written = _report(out, "pairwise", {"meta": meta, **result}, "\n".join(sections), "Pairwise audit")
    print(f"Processed {source.name} -> {', '.join(written)} ({len(pw)} pairs)")
    return 0


def _design_for(mode: str, ds, budget: float):
    arrays = ds.arrays
    if mode == "uniform":
        return uniform_design(arrays.n_prompts, budget)
    if mode == "margin":
        return margin_ranked_design(top_two_margin(arrays.judge, arrays.mask), budget)
    if mode == "neyman":
        # oracle spread is unknown before querying; judge-score spread stands in for it
        spread = np.nanstd(arrays.judge, axis=1)
        return neyman_allocation(spread, budget)
    raise ConfigError(f"unknown budget mode {mode!r}")


def cmd_estimate(args: argparse.Namespace, config: Dict[str, Any]) -> int:
    settings = resolve_section(
        config,
        "estimate",
        {"budget_mode": args.budget_mode, "budget": args.budget, "outcome_model": args.outcome_model},
    )
    source = _require_file(args.input)
    ds = load_pointwise(source, unbounded=args.unbounded)
    boot_settings, cfg = _bootstrap_settings(config, args, args.bootstrap)
    mode = settings["budget_mode"]
    design = None
    if mode != "observed":
        design = _design_for(mode, ds, float(settings["budget"]))
        ds = apply_design(ds, design, seed=cfg.seed)

    model_name = settings["outcome_model"]
    if model_name == "none":
        model = None
    elif model_name in OUTCOME_MODELS:
        model = OUTCOME_MODELS[model_name]()
    else:
        raise ConfigError(f"unknown outcome model {model_name!r}")

    estimate = dr_recovery(ds, model, cfg, bootstrap=bool(args.bootstrap))
    values = {
        selector: aipw_value(ds, selector, model)
        for selector in ("random", "judge", "oracle_best")
    }
    result = {
        "recovery": estimate.to_dict(),
        "values": values,
        "design": None if design is None else {
            "kind": design.kind,
            "budget": design.budget,
            "mean_query_prob": float(design.query_prob.mean()),
        },
    }
    resolved = {"estimate": settings, "bootstrap": boot_settings}
    meta = run_metadata("estimate", resolved, [source])
    rows = [
        {"quantity": "recovery", "point": estimate.point, "lo": estimate.lo, "hi": estimate.hi},
        *({"quantity": f"value ({k})", "point": v} for k, v in values.items()),
    ]
    markdown = markdown_table(rows, ["quantity", "point", "lo", "hi"])
    markdown += f"\nEffective sample size: {estimate.ess:.1f} over {estimate.n_labeled} labeled prompts\n"
    out = _prepare_out(args)
    written = _report(out, "estimate", {"meta": meta, **result}, markdown, "Doubly robust estimate")
    print(f"Processed {source.name} -> {', '.join(written)} ({estimate.n_labeled} labeled prompts)")
    return 0


def _gaussian_config(settings: Dict[str, Any], seed: int, **overrides: Any) -> GaussianConfig:
    keys = ("rho", "n_candidates", "n_prompts", "quantize_bins")
    base = {k: settings[k] for k in keys if k in settings}
    base.update(overrides)
    return GaussianConfig(seed=seed, **base)


def cmd_simulate(args: argparse.Namespace, config: Dict[str, Any]) -> int:
    kind = args.kind
    sim_config = (config.get("simulate") or {})
    flags = {
        "rho": args.rho,
        "n_prompts": args.n_prompts,
        "n_candidates": args.n_candidates,
        "quantize_bins": args.quantize_bins,
        "bins": args.bins,
        "targets": args.targets,
        "target_r": args.target_r,
        "rho_within_1": args.rho_1,
        "rho_within_2": args.rho_2,
    }
    settings = _merge(DEFAULTS["simulate"][kind], sim_config.get(kind) or {})
    settings = _merge(settings, {k: v for k, v in flags.items() if v is not None and k in DEFAULTS["simulate"][kind]})
    seed = args.seed if args.seed is not None else int(settings.get("seed", 0))
    settings["seed"] = seed
    out = _prepare_out(args)
    meta = run_metadata(f"simulate {kind}", {"simulate": {kind: settings}})

    if kind == "gaussian":
        ds = generate_gaussian(_gaussian_config(settings, seed), threads=args.threads)
        dump_pointwise(ds, out / "dataset.jsonl")
        write_json({"meta": meta, "n_prompts": ds.n_prompts, "n_records": ds.n_records}, out / "gaussian.json")
        print(f"Simulated gaussian -> dataset.jsonl, gaussian.json ({ds.n_records} records)")
        return 0

    if kind == "discretize":
        cfg = _gaussian_config(settings, seed, quantize_bins=None)
        rows = discretization_sweep(cfg, settings["bins"], threads=args.threads)
        table = [
            {"bins": r.label, "p_eff": r.p_eff, "recovery": r.recovery, "judge_tie_rate": r.judge_tie_rate}
            for r in rows
        ]
        headers = ["bins", "p_eff", "recovery", "judge_tie_rate"]
        write_csv(table, out / "discretization.csv", headers)
        _report(out, "discretization", {"meta": meta, "rows": table}, markdown_table(table, headers), "Discretization sweep")
        print(f"Simulated discretize -> discretization.csv, discretization.json ({len(table)} rows)")
        return 0

    if kind == "requirements":
        cfg = _gaussian_config(settings, seed)
        rows = recovery_requirements(settings["targets"], cfg, tol=float(settings["tol"]), threads=args.threads)
        table = [vars(r) for r in rows]
        headers = ["target", "rho", "recovery", "p_eff", "iterations"]
        write_csv(table, out / "requirements.csv", headers)
        _report(out, "requirements", {"meta": meta, "rows": table}, markdown_table(table, headers), "Recovery requirements")
        print(f"Simulated requirements -> requirements.csv, requirements.json ({len(table)} targets)")
        return 0

    if kind == "nonident":
        cfg = _gaussian_config(settings, seed)
        pair = nonidentifiability_pair(
            float(settings["target_r"]),
            float(settings["rho_within_1"]),
            float(settings["rho_within_2"]),
            cfg,
            between_share=settings.get("between_share"),
            threads=args.threads,
        )
        for name, dgp in (("dgp_1.jsonl", pair.config_1), ("dgp_2.jsonl", pair.config_2)):
            dump_pointwise(generate_gaussian(dgp, threads=args.threads), out / name)
        rows = [dict(dgp="1", **vars(pair.stats_1)), dict(dgp="2", **vars(pair.stats_2))]
        markdown = markdown_table(rows, ["dgp", "global_r", "within_r", "recovery"])
        _report(out, "nonident", {"meta": meta, **pair.to_dict()}, markdown, "Non-identifiability pair")
        print("Simulated nonident -> dgp_1.jsonl, dgp_2.jsonl, nonident.json")
        return 0

    raise ConfigError(f"unknown simulation {kind!r}")


def cmd_route(args: argparse.Namespace, config: Dict[str, Any]) -> int:
    settings = resolve_section(
        config,
        "route",
        {"policies": args.policies, "budgets": args.budgets, "gain_bins": args.gain_bins},
    )
    source = _require_file(args.input)
    ds = load_pointwise(source, unbounded=args.unbounded)
    outcomes = compute_outcomes(ds)

    policies: List[RoutingPolicy] = []
    skipped: Dict[str, str] = {}
    for spec in settings["policies"]:
        policy = resolve_policy(spec)
        if policy.kind == "random" and args.seed is not None:
            policy = RoutingPolicy(policy.name, "random", seed=args.seed)
        if policy.kind == "rank_by":
            values = outcomes.features.get(policy.feature)
            if values is None or np.isnan(values).any():
                skipped[policy.name] = f"feature {policy.feature!r} absent for some prompts"
                logger.warning("skipping policy %s: %s", policy.name, skipped[policy.name])
                continue
        policies.append(policy)

    results = budget_sweep(outcomes, policies, settings["budgets"])
    rows = [r.to_row() for r in results]
    out = _prepare_out(args)
    write_csv(rows, out / "routing.csv", ROUTING_CSV_HEADERS)

    result: Dict[str, Any] = {"sweep": rows, "skipped_policies": skipped}
    sections = ["## Budget sweep", "", markdown_table(rows, ROUTING_CSV_HEADERS)]
    try:
        decomposition = gain_decomposition(outcomes, "margin", int(settings["gain_bins"]))
        result["gain_decomposition"] = decomposition.to_dict()
        bin_rows = [vars(b) for b in decomposition.bins]
        sections += ["## Gain decomposition by margin", "",
                     markdown_table(bin_rows, ["low", "high", "count", "p_wrong", "gap_given_wrong", "mean_gain"])]
    except MetricUndefinedError as exc:
        result["gain_decomposition"] = {"reason": str(exc)}
    result["voi"] = voi_diagnostics(outcomes, int(settings["gain_bins"])).to_dict()
    if args.adaptive:
        adaptive = settings["adaptive"]
        outcome = adaptive_resampling_sim(
            ds, float(adaptive["margin_threshold"]), int(adaptive["k_max"])
        )
        result["adaptive"] = outcome.to_dict()
        sections += ["## Adaptive resampling", "", markdown_table([outcome.to_dict()], list(outcome.to_dict()))]

    meta = run_metadata("route", {"route": settings}, [source])
    written = _report(out, "routing", {"meta": meta, **result}, "\n".join(sections), "Routing analysis")
    print(f"Processed {source.name} -> routing.csv, {', '.join(written)} ({len(rows)} rows)")
    return 0


def cmd_calibrate(args: argparse.Namespace, config: Dict[str, Any]) -> int:
    split_seed = args.split_seed if args.split_seed is not None else args.seed
    settings = resolve_section(
        config, "calibrate", {"split_seed": split_seed, "fit_fraction": args.fit_fraction}
    )
    source = _require_file(args.input)
    ds = load_pointwise(source, unbounded=args.unbounded)
    split = split_calibration_effect(ds, int(settings["split_seed"]), float(settings["fit_fraction"]))
    meta = run_metadata("calibrate", {"calibrate": settings}, [source])
    out = _prepare_out(args)
    written = _report(out, "calibration", {"meta": meta, **split.to_dict()}, split.effect.to_markdown(), "Calibration effect")
    print(f"Processed {source.name} -> {', '.join(written)} ({split.n_eval_prompts} evaluation prompts)")
    return 0


COMMANDS: Dict[str, Callable[[argparse.Namespace, Dict[str, Any]], int]] = {
    "audit": cmd_audit,
    "pairwise": cmd_pairwise,
    "estimate": cmd_estimate,
    "simulate": cmd_simulate,
    "route": cmd_route,
    "calibrate": cmd_calibrate,
}


# --------------------------------------------------------------------------
# Argument parsing


def _default_threads() -> int:
    raw = os.environ.get(THREADS_ENV_VAR, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _common_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument(
        "-c", "--config",
        type=Path,
        default=None,
        help="YAML or JSON configuration file (default: ./config.yaml when present)",
    )
    common.add_argument(
        "-o", "--out",
        type=Path,
        default=Path("results"),
        help="Output directory for reports (default: results)",
    )
    common.add_argument("--seed", type=int, default=None, help="Random seed (overrides the config)")
    common.add_argument(
        "--threads",
        type=int,
        default=_default_threads(),
        help=f"Worker threads; results do not depend on it (default: ${THREADS_ENV_VAR} or 1)",
    )
    common.add_argument("-v", "--verbose", action="store_true", help="Enable verbose output")
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _common_parser()
    parser = argparse.ArgumentParser(
        prog="judge-audit",
        description="Audit whether a proxy judge's scores are useful for best-of-n selection",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    commands = parser.add_subparsers(dest="command", required=True)

    p = commands.add_parser("audit", parents=[common], help="Decision-validity metrics for a pointwise file")
    p.add_argument("input", type=Path, help="Pointwise JSONL or CSV file")
    p.add_argument("--format", choices=["jsonl", "csv"], default=None, help="Input format (default: by suffix)")
    p.add_argument("--bootstrap", type=int, default=None, metavar="N", help="Cluster-bootstrap resamples for 95%% CIs")
    p.add_argument("--unbounded", action="store_true", help="Accept scores outside [0, 1] (simulated data)")

    p = commands.add_parser("pairwise", parents=[common], help="Best-of-2 agreement and confidence calibration")
    p.add_argument("input", type=Path, help="Pairwise file, or pointwise file with --from-pointwise")
    p.add_argument("--bins", type=float, nargs="+", default=None, help="Stated-probability bin edges")
    p.add_argument("--from-pointwise", action="store_true", help="Derive preferences from pointwise scores")
    p.add_argument("--borda", type=Path, default=None, metavar="POINTWISE",
                   help="Aggregate the pairwise edges by Borda count for best-of-k on this pointwise file")
    p.add_argument("--unbounded", action="store_true", help="Accept pointwise scores outside [0, 1]")

    p = commands.add_parser("estimate", parents=[common], help="Doubly robust recovery under partial oracle labels")
    p.add_argument("input", type=Path, help="Pointwise file (partially labeled, or fully labeled with --budget-mode)")
    p.add_argument("--budget-mode", choices=["observed", "uniform", "margin", "neyman"], default=None,
                   help="Use the file's labels, or mask a fully labeled file with an allocation design")
    p.add_argument("--budget", type=float, default=None, help="Mean query probability for simulated masks")
    p.add_argument("--outcome-model", choices=["none", *OUTCOME_MODELS], default=None,
                   help="Outcome model for the augmentation term")
    p.add_argument("--bootstrap", type=int, default=None, metavar="N", help="Attach a cluster-bootstrap cross-check")
    p.add_argument("--unbounded", action="store_true", help="Accept scores outside [0, 1]")

    p = commands.add_parser("simulate", parents=[common], help="Gaussian simulations and theoretical baselines")
    p.add_argument("kind", choices=["gaussian", "discretize", "requirements", "nonident"])
    p.add_argument("--rho", type=float, default=None, help="Within-prompt judge/oracle correlation")
    p.add_argument("--n-prompts", type=int, default=None)
    p.add_argument("--n-candidates", type=int, default=None)
    p.add_argument("--quantize-bins", type=int, default=None)
    p.add_argument("--bins", type=lambda s: None if s == "continuous" else int(s), nargs="+", default=None,
                   help="Discretization settings, e.g. continuous 100 20 10 5")
    p.add_argument("--targets", type=float, nargs="+", default=None, help="Target recoveries")
    p.add_argument("--target-r", type=float, default=None, help="Shared global correlation")
    p.add_argument("--rho-1", type=float, default=None, help="Within correlation of the first DGP")
    p.add_argument("--rho-2", type=float, default=None, help="Within correlation of the second DGP")

    p = commands.add_parser("route", parents=[common], help="Oracle routing under a query budget")
    p.add_argument("input", type=Path, help="Labeled pointwise file")
    p.add_argument("--policies", nargs="+", default=None, help="Policy presets or feature:NAME[:asc|desc]")
    p.add_argument("--budgets", type=float, nargs="+", default=None, help="Budgets in [0, 1]")
    p.add_argument("--gain-bins", type=int, default=None, help="Equal-count margin bins")
    p.add_argument("--adaptive", action="store_true", help="Also simulate adaptive top-2 resampling")
    p.add_argument("--unbounded", action="store_true", help="Accept scores outside [0, 1]")

    p = commands.add_parser("calibrate", parents=[common], help="Isotonic calibration ablation")
    p.add_argument("input", type=Path, help="Labeled pointwise file")
    p.add_argument("--split-seed", type=int, default=None, help="Seed of the fit/evaluation prompt split")
    p.add_argument("--fit-fraction", type=float, default=None, help="Share of prompts used to fit")
    p.add_argument("--unbounded", action="store_true", help="Accept scores outside [0, 1]")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Main entry point for the judge-audit CLI."""
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        if args.threads < 1:
            raise ConfigError(f"--threads must be at least 1, got {args.threads}")
        config = load_config(args.config)
        if args.verbose:
            print(f"Loaded configuration from {args.config or DEFAULT_CONFIG}", file=sys.stderr)
        return COMMANDS[args.command](args, config)
    except (JudgeAuditError, FileNotFoundError) as err:
        print(f"Error: {err}", file=sys.stderr)
        if args.verbose:
            traceback.print_exc()
        return 2
    except Exception as e:
        print(f"Internal error: {e}", file=sys.stderr)
        if args.verbose:
            traceback.print_exc()
        return 1


if __name__ == "__main__":
    sys.exit(main())
