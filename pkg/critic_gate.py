"""Command-line entry point: run suites, build critic datasets, generate suites, evaluate and inspect logs."""
import argparse
import sys
from pathlib import Path

import pandas as pd
from loguru import logger

from lib import reporter
from lib.backends import build_backend
from lib.config import RunManifest, build_filter_config, build_run_config, load_config_file, read_manifest_label
from lib.datagen import run_pipeline
from lib.errors import ConfigError, CriticGateError
from lib.metrics import summarize_runs, uplift_report
from lib.models import describe_action, read_trajectories, render_history, write_trajectories
from lib.orchestrator import run_suite
from lib.suites import generate_suite, load_suite, write_suite

# --- Configuration ---
TRAJECTORY_LOG = "trajectories.jsonl"
SUMMARY_FILE = "summary.json"
MANIFEST_FILE = "run.json"
EXIT_OK = 0
EXIT_ERROR = 1
EXIT_ABORTED = 2


def setup_logging(verbose=False, quiet=False):
    logger.remove()
    level = "DEBUG" if verbose else "WARNING" if quiet else "INFO"
    logger.add(sys.stderr, level=level, format="<level>{level: <8}</level> {message}")


def _run_overrides(args):
    return {
        "suite": args.suite,
        "actor": args.actor,
        "critic": args.critic,
        "gate_policy": args.gate_policy,
        "runs_per_task": args.runs,
        "seed": args.seed,
        "output_dir": args.output_dir,
        "concurrency": args.concurrency,
        "label": args.label,
        "error_rate": args.error_rate,
        "compliance": args.compliance,
        "horizon": args.horizon,
    }


def _backends(config, suite):
    programs = suite.actor_programs(config.error_rate, config.error_modes, config.compliance)
    endpoint = config.endpoint
    actor = build_backend(
        config.actor, "actor", programs=programs, base_url=endpoint.base_url,
        temperature=endpoint.actor_temperature, timeout=endpoint.timeout, max_in_flight=endpoint.max_in_flight,
    )
    critic = build_backend(
        config.critic, "critic", base_url=endpoint.base_url,
        temperature=endpoint.critic_temperature, timeout=endpoint.timeout, max_in_flight=endpoint.max_in_flight,
    )
    return actor, critic


def cmd_run(args):
    """Runs every task of a suite and writes trajectories, summary and manifest."""
    config = build_run_config(load_config_file(args.config), _run_overrides(args))
    suite = load_suite(config.suite)
    actor, critic = _backends(config, suite)

    trajectories = run_suite(
        suite.tasks, actor, critic, suite.make_environment,
        runs=config.runs_per_task, seed_base=config.seed, gate_policy=config.gate_policy,
        concurrency=config.concurrency, horizon=config.horizon,
    )
    output_dir = Path(config.output_dir)
    write_trajectories(output_dir / TRAJECTORY_LOG, trajectories)
    manifest = RunManifest(label=config.method_label, config=config)
    (output_dir / MANIFEST_FILE).write_text(manifest.model_dump_json(indent=2) + "\n", encoding="utf-8")
    summary = summarize_runs(config.method_label, trajectories)
    (output_dir / SUMMARY_FILE).write_text(summary.model_dump_json(indent=2) + "\n", encoding="utf-8")

    print(reporter.format_summary(summary))
    print(f"Trajectories written to: {output_dir / TRAJECTORY_LOG}")
    if summary.aborted:
        logger.warning("{} episodes aborted", summary.aborted)
        return EXIT_ABORTED
    return EXIT_OK


def cmd_datagen(args):
    """Filters hard tasks, collects actor-critic runs and writes the supervision dataset."""
    file_values = load_config_file(args.config)
    filter_config = build_filter_config(
        file_values, {"k": args.k, "psi": args.psi, "seed_base": args.seed_base, "strict": args.strict},
    )
    config = build_run_config(file_values, _run_overrides(args))
    if config.critic == "none":
        raise ConfigError("datagen needs a critic backend (--critic)")
    suite = load_suite(config.suite)
    actor, critic = _backends(config, suite)

    stats = run_pipeline(
        suite.tasks, actor, critic, suite.make_environment, filter_config, config.output_dir,
        concurrency=config.concurrency, gate_policy=config.gate_policy,
    )
    print(reporter.format_stats(stats))
    print(f"Dataset written to: {Path(config.output_dir) / 'dataset.jsonl'}")
    return EXIT_OK


def cmd_gen_suite(args):
    """Writes a seeded, validated fixture corpus."""
    fixtures = generate_suite(args.env, args.n, args.seed, difficulty=args.difficulty)
    write_suite(args.output, fixtures)
    print(f"Wrote {len(fixtures)} {args.env} tasks to {args.output}")
    return EXIT_OK


def _resolve_log(path):
    path = Path(path)
    if path.is_dir():
        return path / TRAJECTORY_LOG, read_manifest_label(path) or path.name
    if not path.is_file():
        raise ConfigError(f"log {path} does not exist")
    return path, read_manifest_label(path.parent) or path.stem


def cmd_eval(args):
    """Prints a summary for one log, or an uplift report comparing two."""
    if len(args.logs) > 2:
        raise ConfigError("eval takes one log (summary) or two logs (baseline, treated)")
    summaries = []
    for log in args.logs:
        path, label = _resolve_log(log)
        summaries.append(summarize_runs(label, read_trajectories(path)))

    if len(summaries) == 1:
        print(reporter.format_summary(summaries[0]))
        return EXIT_OK

    report = uplift_report(summaries[0], summaries[1])
    print(reporter.format_uplift_report(report))
    if args.json:
        Path(args.json).parent.mkdir(parents=True, exist_ok=True)
        Path(args.json).write_text(report.model_dump_json(indent=2) + "\n", encoding="utf-8")
        print(f"Report written to: {args.json}")
    if args.html:
        reporter.generate_html_report(report, args.html)
        print(f"Report successfully generated: {args.html}")
    return EXIT_OK


def cmd_inspect(args):
    """Prints the transcript and intervention table of matching trajectories."""
    path, _ = _resolve_log(args.log)
    matches = [
        t for t in read_trajectories(path)
        if (args.task_id is None or t.task_id == args.task_id) and (args.seed is None or t.seed == args.seed)
    ]
    if not matches:
        print("No matching trajectories.")
        return EXIT_OK
    for trajectory in matches:
        print(f"=== {trajectory.task_id} (seed {trajectory.seed}, {trajectory.environment_id}) ===")
        print(render_history(trajectory))
        rows = [
            {
                "turn": record.turn_index,
                "gate": record.gate,
                "verdict": record.verdict.decision if record.verdict else "-",
                "proposal": describe_action(record.proposal),
                "executed": describe_action(record.final_action),
            }
            for record in trajectory.records if record.gate
        ]
        if rows:
            print(pd.DataFrame(rows).set_index("turn").to_string())
        reward = trajectory.reward.value if trajectory.reward else None
        print(f"Termination: {trajectory.termination}  Reward: {reward}\n")
    return EXIT_OK


def _add_run_flags(parser):
    parser.add_argument("--config", help="YAML configuration file")
    parser.add_argument("--suite", help="task suite (JSONL fixtures)")
    parser.add_argument("--actor", help="scripted | endpoint:<model> | replay:<dir>:<model>")
    parser.add_argument("--critic", help="none | oracle | endpoint:<model> | replay:<dir>:<model>")
    parser.add_argument("--gate-policy", choices=["state_mutating", "final_recommendation", "always", "never"])
    parser.add_argument("--runs", type=int, help="episodes per task")
    parser.add_argument("--seed", type=int, help="base seed; episode k uses seed + k")
    parser.add_argument("--output-dir")
    parser.add_argument("--concurrency", type=int)
    parser.add_argument("--label", help="method label for reports")
    parser.add_argument("--error-rate", type=float, help="scripted actor per-turn error probability")
    parser.add_argument("--compliance", choices=["complies_with_guidance", "ignores_guidance"])
    parser.add_argument("--horizon", type=int, help="override every task's horizon")


def build_parser():
    parser = argparse.ArgumentParser(prog="critic_gate", description=__doc__)
    parser.add_argument("--verbose", action="store_true", help="debug logging")
    parser.add_argument("--quiet", action="store_true", help="warnings and errors only")
    commands = parser.add_subparsers(dest="command", required=True)

    run = commands.add_parser("run", help="run a task suite")
    _add_run_flags(run)
    run.set_defaults(handler=cmd_run)

    datagen = commands.add_parser("datagen", help="build a critic supervision dataset")
    _add_run_flags(datagen)
    datagen.add_argument("--k", type=int, help="runs per task for filtering and collection")
    datagen.add_argument("--psi", type=int, help="failures needed to call a task hard")
    datagen.add_argument("--seed-base", type=int)
    datagen.add_argument("--strict", action="store_const", const=True, default=None,
                         help="keep only tasks whose every actor-critic run succeeded")
    datagen.set_defaults(handler=cmd_datagen)

    gen_suite = commands.add_parser("gen-suite", help="generate a seeded task suite")
    gen_suite.add_argument("--env", required=True, choices=["retail", "travel"])
    gen_suite.add_argument("--n", type=int, required=True)
    gen_suite.add_argument("--difficulty", type=int, default=2, choices=[2, 3, 4])
    gen_suite.add_argument("--seed", type=int, default=0)
    gen_suite.add_argument("--output", required=True)
    gen_suite.set_defaults(handler=cmd_gen_suite)

    evaluate = commands.add_parser("eval", help="summarize one log or compare two")
    evaluate.add_argument("logs", nargs="+", help="trajectory log files or run directories")
    evaluate.add_argument("--json", help="write the uplift report as JSON")
    evaluate.add_argument("--html", help="write the uplift report as HTML")
    evaluate.set_defaults(handler=cmd_eval)

    inspect = commands.add_parser("inspect", help="print transcripts from a log")
    inspect.add_argument("log")
    inspect.add_argument("--task-id")
    inspect.add_argument("--seed", type=int)
    inspect.set_defaults(handler=cmd_inspect)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    setup_logging(args.verbose, args.quiet)
    try:
        return args.handler(args)
    except CriticGateError as exc:
        print(f"ERROR: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
