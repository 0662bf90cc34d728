"""
Argparse command surface.

Every command reads one experiment config, writes its outputs plus a
``<out>.manifest.json`` run manifest, and prints a short human-readable
table. ``run`` maps toolkit errors to exit codes.
"""

import argparse
import logging
import os

import numpy as np
from pydantic import ValidationError

from src.environment.episode import (
    EnvConfig,
    Policy,
    never_act_policy,
    random_policy,
)
from src.environment.evaluation import CostReport, evaluate_policy
from src.environment.factory import build_env_config
from src.heuristics.rules import (
    HeuristicRule,
    SearchProtocol,
    grid_search,
    heuristic_policy,
    save_search,
)
from src.learning.ddmac import DdmacPolicy, load_checkpoint, save_checkpoint, train
from src.models.correlation import fit_loadings
from src.models.discretization import unmaintained_failure_curve
from src.models.model_store import (
    ModelBundle,
    build_models,
    check_bundle_matches,
    correlation_spec_from_config,
    load_model_file,
    load_or_build,
    save_model_file,
)
from src.reliability.resistance import ResistanceTable
from src.reliability.system import (
    MAX_ENUMERATED_ELEMENTS,
    FrameSystem,
    intact_failure_report,
    sei_ranking,
)
from src.utils.artifacts import RunManifest, Stopwatch, read_csv, write_csv
from src.utils.errors import ConfigError, NumericalError, TrainingDivergedError
from src.utils.experiment_config import ExperimentConfig, load_experiment_config

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_NUMERIC = 3

COMPARE_COLUMNS = (
    "policy",
    "campaign",
    "inspection",
    "repair",
    "failure",
    "total",
    "stderr",
    "n_episodes",
)
SEI_COLUMNS = ("hotspot", "element", "sei", "dn_ni", "dn_i", "r_ni")


class UsageError(ConfigError):
    """A command-line argument combination that cannot be run."""


def format_table(columns: tuple[str, ...] | list[str], rows: list[tuple]) -> str:
    """Fixed-width text table with numbers to 4 significant figures."""

    def cell(value: object) -> str:
        if isinstance(value, (float, np.floating)):
            return f"{float(value):.4g}"
        return str(value)

    text_rows = [[cell(v) for v in row] for row in rows]
    widths = [
        max(len(str(c)), *(len(r[i]) for r in text_rows)) if text_rows else len(str(c))
        for i, c in enumerate(columns)
    ]
    lines = ["  ".join(str(c).rjust(w) for c, w in zip(columns, widths))]
    lines.extend("  ".join(v.rjust(w) for v, w in zip(r, widths)) for r in text_rows)
    return "\n".join(lines)


def _write_manifest(
    out: str,
    command: str,
    config: ExperimentConfig,
    seeds: dict[str, int],
    artifacts: list[str],
    settings: dict,
    watch: Stopwatch,
) -> RunManifest:
    manifest = RunManifest(
        command=command,
        config_hash=config.config_hash,
        seeds=seeds,
        artifacts=artifacts,
        toolkit_version=settings.get("app_version", "unknown"),
        timings=watch.timings,
    )
    manifest.save(f"{out}.manifest.json")
    return manifest


def _bundle(
    args: argparse.Namespace, config: ExperimentConfig, settings: dict
) -> ModelBundle:
    """The model file given with ``--model``, else a cached or freshly built model."""
    if getattr(args, "model", None):
        bundle = load_model_file(args.model)
        check_bundle_matches(bundle, config)
        return bundle
    return load_or_build(config, settings.get("cache_dir"), settings.get("threads", 1))


def _env(
    args: argparse.Namespace, config: ExperimentConfig, settings: dict
) -> EnvConfig:
    max_elements = settings.get("max_enumerated_elements", MAX_ENUMERATED_ELEMENTS)
    return build_env_config(config, _bundle(args, config, settings), max_elements)


def _episodes(args: argparse.Namespace, config: ExperimentConfig) -> int:
    n = args.episodes if args.episodes is not None else config.evaluation.n_episodes
    if n < 1:
        raise UsageError(f"--episodes must be >= 1, got {n}")
    return n


def _reference_rule(config: ExperimentConfig) -> HeuristicRule:
    ref = config.heuristics.reference_rule
    if ref is None:
        raise UsageError("config has no heuristics.reference_rule; pass --rule")
    return HeuristicRule(ref.delta_ins, ref.n_ins)


def _policy_from_args(args: argparse.Namespace, env: EnvConfig) -> tuple[str, Policy]:
    chosen = [bool(args.checkpoint), bool(args.rule), bool(args.baseline)]
    if sum(chosen) != 1:
        raise UsageError("choose exactly one of --checkpoint, --rule or --baseline")
    if args.checkpoint:
        artifact = load_checkpoint(args.checkpoint, expected_env_hash=env.config_hash)
        return f"ddmac:{os.path.basename(args.checkpoint)}", DdmacPolicy(
            artifact, greedy=args.greedy
        )
    if args.rule:
        rule = HeuristicRule(*args.rule)
        return f"rule{rule}", heuristic_policy(rule)
    if args.baseline == "never":
        return "never-act", never_act_policy
    return "random", random_policy


def _report_row(name: str, report: CostReport) -> tuple:
    return (
        name,
        report.campaign,
        report.inspection,
        report.repair,
        report.failure,
        report.mean_cost,
        report.stderr,
        report.n_episodes,
    )


# --- Commands ---


def cmd_model_build(args: argparse.Namespace, settings: dict) -> int:
    config = load_experiment_config(args.config)
    watch = Stopwatch()
    watch.start("build")
    bundle = build_models(config, threads=settings.get("threads", 1))
    watch.stop("build")
    save_model_file(args.out, bundle)
    model = bundle.model
    seed = getattr(config.discretization, "seed", 0)
    _write_manifest(
        args.out,
        "model build",
        config,
        {"discretization": seed},
        [args.out],
        settings,
        watch,
    )
    print(
        format_table(
            ("model_hash", "n_crack", "n_rate", "n_hyper", "n_cells", "fit_residual"),
            [
                (
                    bundle.model_hash[:12],
                    model.n_crack,
                    model.n_rate,
                    bundle.structure.n_hyper,
                    bundle.structure.n_cells,
                    bundle.structure.fit_residual,
                )
            ],
        )
    )
    return EXIT_OK


def cmd_fit_correlation(args: argparse.Namespace, settings: dict) -> int:
    config = load_experiment_config(args.config)
    watch = Stopwatch()
    watch.start("fit")
    structure = fit_loadings(correlation_spec_from_config(config))
    watch.stop("fit")
    n_hyper = structure.n_hyper
    columns = ("component", *(f"loading_{k}" for k in range(n_hyper)), "residual_sd")
    rows = [
        (i, *structure.loadings[i], structure.residual_sd()[i])
        for i in range(structure.n_components)
    ]
    write_csv(args.out, columns, rows)
    seeds = {"fit": getattr(config.correlation, "fit_seed", 0)}
    _write_manifest(
        args.out, "model fit-correlation", config, seeds, [args.out], settings, watch
    )
    print(format_table(columns, rows))
    print(f"max |correlation residual|: {structure.fit_residual:.4g}")
    return EXIT_OK


def cmd_train(args: argparse.Namespace, settings: dict) -> int:
    config = load_experiment_config(args.config)
    env = _env(args, config, settings)
    training = config.training
    if args.episodes is not None:
        if args.episodes < 1:
            raise UsageError(f"--episodes must be >= 1, got {args.episodes}")
        training = training.model_copy(update={"episodes": args.episodes})
    watch = Stopwatch()
    watch.start("train")
    try:
        result = train(
            env,
            training,
            seed=args.seed,
            curves_path=args.curves,
            threads=settings.get("threads", 1),
        )
    except TrainingDivergedError as e:
        logger.error(f"Training diverged: {e}; diagnostics {e.diagnostics}")
        raise
    watch.stop("train")
    save_checkpoint(args.out, result.artifact)
    artifacts = [args.out] + ([args.curves] if args.curves else [])
    seeds = {"train": args.seed}
    _write_manifest(args.out, "train", config, seeds, artifacts, settings, watch)
    final = result.curves[-1] if result.curves else (0, float("nan"), 0.0, 0.0)
    print(
        format_table(
            ("episodes", "final_mean_cost", "epsilon", "mean_is_weight"),
            [(training.episodes, final[1], final[2], result.mean_importance_weight)],
        )
    )
    return EXIT_OK


def cmd_heuristics_search(args: argparse.Namespace, settings: dict) -> int:
    config = load_experiment_config(args.config)
    env = _env(args, config, settings)
    h = config.heuristics
    protocol = SearchProtocol(
        stage1_realizations=args.stage1 or h.stage1_realizations,
        shortlist=h.shortlist,
        stage2_realizations=args.stage2 or h.stage2_realizations,
    )
    watch = Stopwatch()
    watch.start("search")
    result = grid_search(
        env,
        protocol,
        seed=args.seed,
        delta_grid=h.delta_grid,
        n_ins_grid=h.n_ins_grid,
        threads=settings.get("threads", 1),
    )
    watch.stop("search")
    save_search(args.out, result)
    _write_manifest(
        args.out,
        "heuristics search",
        config,
        {"search": args.seed},
        [args.out],
        settings,
        watch,
    )
    print(
        format_table(
            ("delta_ins", "n_ins", "mean_cost", "stderr", "n_episodes"),
            [
                (
                    r.rule.delta_ins,
                    r.rule.n_ins,
                    r.report.mean_cost,
                    r.report.stderr,
                    r.report.n_episodes,
                )
                for r in result.stage2
            ],
        )
    )
    if h.reference_rule is not None:
        print(f"reference rule: {_reference_rule(config)}")
    return EXIT_OK


def cmd_evaluate(args: argparse.Namespace, settings: dict) -> int:
    config = load_experiment_config(args.config)
    n_episodes = _episodes(args, config)
    env = _env(args, config, settings)
    name, policy = _policy_from_args(args, env)
    watch = Stopwatch()
    watch.start("evaluate")
    report = evaluate_policy(
        policy,
        env,
        n_episodes,
        seed=args.seed,
        threads=settings.get("threads", 1),
        log_dir=args.episodes_log,
    )
    watch.stop("evaluate")
    rows = [_report_row(name, report)]
    artifacts = []
    if args.out:
        write_csv(args.out, COMPARE_COLUMNS, rows)
        artifacts.append(args.out)
    if args.episodes_log:
        artifacts.append(args.episodes_log)
    if artifacts:
        manifest_base = args.out or os.path.join(args.episodes_log, "evaluate")
        _write_manifest(
            manifest_base,
            "evaluate",
            config,
            {"evaluate": args.seed},
            artifacts,
            settings,
            watch,
        )
    print(format_table(COMPARE_COLUMNS, rows))
    return EXIT_OK


def cmd_compare(args: argparse.Namespace, settings: dict) -> int:
    """Both policies face the same episode seeds."""
    config = load_experiment_config(args.config)
    n_episodes = _episodes(args, config)
    env = _env(args, config, settings)
    artifact = load_checkpoint(args.checkpoint, expected_env_hash=env.config_hash)
    rule = HeuristicRule(*args.rule) if args.rule else _reference_rule(config)
    threads = settings.get("threads", 1)
    watch = Stopwatch()
    watch.start("compare")
    policies: list[tuple[str, Policy]] = [
        ("ddmac", DdmacPolicy(artifact, greedy=args.greedy)),
        (f"rule{rule}", heuristic_policy(rule)),
    ]
    rows = [
        _report_row(name, evaluate_policy(policy, env, n_episodes, args.seed, threads))
        for name, policy in policies
    ]
    watch.stop("compare")
    artifacts = []
    if args.out:
        write_csv(args.out, COMPARE_COLUMNS, rows)
        artifacts.append(args.out)
        _write_manifest(
            args.out,
            "compare",
            config,
            {"compare": args.seed},
            artifacts,
            settings,
            watch,
        )
    print(format_table(COMPARE_COLUMNS, rows))
    saving = 1.0 - rows[0][5] / rows[1][5] if rows[1][5] > 0 else float("nan")
    print(f"relative saving of ddmac over the rule: {saving:.4g}")
    return EXIT_OK


def _action_histograms(log_dir: str, n_components: int) -> np.ndarray:
    """Per-component action counts summed over every episode log in ``log_dir``."""
    counts = np.zeros((n_components, 3), dtype=int)
    files = sorted(f for f in os.listdir(log_dir) if f.endswith(".csv"))
    if not files:
        raise UsageError(f"no episode logs found in {log_dir}")
    for name in files:
        for row in read_csv(os.path.join(log_dir, name)):
            counts[int(row["component"]), int(row["action"])] += 1
    return counts


def _with_resistance_table(system: FrameSystem, path: str) -> FrameSystem:
    """The frame with its resistance replaced by the table at ``path``."""
    try:
        table = ResistanceTable.load(path)
    except OSError as e:
        raise ConfigError(f"cannot read resistance table {path}: {e}") from e
    try:
        return FrameSystem(
            element_map=system.element_map,
            resistance=table,
            load=system.load,
            max_elements=system.max_elements,
        )
    except ValueError as e:
        raise ConfigError(f"resistance table {path} does not fit the frame: {e}") from e


def cmd_sei(args: argparse.Namespace, settings: dict) -> int:
    watch = Stopwatch()
    config = load_experiment_config(args.config)
    env = _env(args, config, settings)
    watch.start("sei")
    system = env.system
    if not isinstance(system, FrameSystem):
        raise ConfigError("single element importance needs a frame system")
    if args.table:
        system = _with_resistance_table(system, args.table)
    if args.p_fail is not None:
        p_hot = np.full(env.n_components, args.p_fail)
    else:
        year = args.year if args.year is not None else env.horizon_years
        curve = unmaintained_failure_curve(env.bundle.model, year)
        p_hot = np.full(env.n_components, curve[year])
    ranking = sei_ranking(p_hot, system)
    watch.stop("sei")
    counts = (
        _action_histograms(args.episodes_log, env.n_components)
        if args.episodes_log
        else np.zeros((env.n_components, 3), dtype=int)
    )
    element_of = {
        h: e for e, hotspots in enumerate(system.element_map) for h in hotspots
    }
    rows = [(h, element_of[h], sei, *counts[h]) for h, sei in ranking]
    write_csv(args.out, SEI_COLUMNS, rows)
    _write_manifest(
        args.out, "reliability sei", config, {}, [args.out], settings, watch
    )
    print(format_table(SEI_COLUMNS, rows))
    report = intact_failure_report(p_hot, system)
    print(
        f"intact-frame failure probability {report['intact_tail']:.4g}, "
        f"with hotspot failures {report['q_weighted']:.4g}"
    )
    return EXIT_OK


# --- Parser ---


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative integer, got {text}")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="detpomdp",
        description=(
            "Inspection and maintenance planning for deteriorating "
            "multi-component systems"
        ),
    )
    parser.add_argument("--verbose", action="store_true", help="log at DEBUG level")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, seed: bool, model: bool = True) -> None:
        p.add_argument("--config", required=True, help="experiment config (JSON)")
        if seed:
            p.add_argument("--seed", type=int, required=True, help="root random seed")
        if model:
            p.add_argument(
                "--model", help="prebuilt model file (default: cache or build)"
            )

    model = sub.add_parser("model", help="deterioration models")
    model_sub = model.add_subparsers(dest="model_command", required=True)
    p = model_sub.add_parser("build", help="build and store the model file")
    common(p, seed=False, model=False)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_model_build)
    p = model_sub.add_parser("fit-correlation", help="fit hyperparameter loadings")
    common(p, seed=False, model=False)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit_correlation)

    p = sub.add_parser("train", help="train actor-critic policies")
    common(p, seed=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--curves", help="training curve CSV")
    p.add_argument("--episodes", type=int, help="override the configured episode count")
    p.set_defaults(func=cmd_train)

    heuristics = sub.add_parser("heuristics", help="heuristic decision rules")
    h_sub = heuristics.add_subparsers(dest="heuristics_command", required=True)
    p = h_sub.add_parser("search", help="two-stage grid search")
    common(p, seed=True)
    p.add_argument("--out", required=True)
    p.add_argument("--stage1", type=_positive_int, help="override stage-1 realizations")
    p.add_argument("--stage2", type=_positive_int, help="override stage-2 realizations")
    p.set_defaults(func=cmd_heuristics_search)

    p = sub.add_parser("evaluate", help="evaluate one policy")
    common(p, seed=True)
    p.add_argument("--checkpoint")
    p.add_argument("--rule", type=int, nargs=2, metavar=("DELTA_INS", "N_INS"))
    p.add_argument("--baseline", choices=("never", "random"))
    p.add_argument(
        "--greedy", action="store_true", help="take each actor's most likely action"
    )
    p.add_argument("--episodes", type=int)
    p.add_argument(
        "--episodes-log", dest="episodes_log", help="directory for per-episode CSVs"
    )
    p.add_argument("--out", help="cost report CSV")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("compare", help="trained policy against a heuristic rule")
    common(p, seed=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--rule", type=int, nargs=2, metavar=("DELTA_INS", "N_INS"))
    p.add_argument("--greedy", action="store_true")
    p.add_argument("--episodes", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_compare)

    reliability = sub.add_parser("reliability", help="system reliability analyses")
    r_sub = reliability.add_subparsers(dest="reliability_command", required=True)
    p = r_sub.add_parser("sei", help="single element importance per hotspot")
    common(p, seed=False)
    p.add_argument("--out", required=True)
    p.add_argument(
        "--p-fail", dest="p_fail", type=float, help="hotspot failure probability"
    )
    p.add_argument(
        "--year", type=int, help="use the unmaintained failure probability of this year"
    )
    p.add_argument(
        "--table", help="resistance table file overriding the configured resistance"
    )
    p.add_argument("--episodes-log", dest="episodes_log")
    p.set_defaults(func=cmd_sei)
    return parser


def run(argv: list[str] | None, settings: dict | None = None) -> int:
    """Parses ``argv``, runs the command and returns the process exit code."""
    settings = settings or {}
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    if args.verbose:
        logging.getLogger().setLevel(logging.DEBUG)
    try:
        return args.func(args, settings)
    except (ConfigError, ValidationError) as e:
        logger.error(f"Configuration error: {e}")
        return EXIT_CONFIG
    except NumericalError as e:
        logger.error(f"Numerical failure: {e}", exc_info=True)
        return EXIT_NUMERIC
    except Exception as e:
        logger.critical(f"An unhandled error occurred: {e}", exc_info=True)
        return EXIT_FAILURE
