"""Command-line interface: init, resolve, report, eval.

``init`` scores and blocks a records CSV and writes the initial partition
distribution; ``resolve`` runs the full refinement loop against the chosen
oracle; ``report`` re-renders tables and figures from a finished run
directory; ``eval`` benchmarks selection strategies on synthetic data.

Configuration precedence is flags > config file (flat JSON) > defaults.
Exit codes: 0 success, 1 configuration error, 2 input error, 3 oracle
transport failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Sequence

from .core import Partition, Record, RecordPair, entropy, records_by_id
from .errors import (
    ComponentTooLargeError,
    ConfigError,
    InputError,
    OracleTransportError,
    PairprobeError,
)
from .evaluation import (
    STRATEGIES,
    SweepConfig,
    run_sweep,
    synthetic_corpus,
)
from .oracle import (
    LOW_THETA_WARNING,
    GroundTruth,
    OracleProfile,
    RemoteOracle,
    ScriptedOracle,
    SimulatedOracle,
    estimate_accuracy,
    parse_verdict,
)
from .priors import (
    MatcherConfig,
    initial_distribution,
    load_pair_scores,
    score_pairs,
)
from .refine import StopPolicy, run_loop
from .reporting import (
    load_distribution,
    read_entropy_curve_csv,
    read_eval_csv,
    render_entropy_curve,
    render_eval_report,
    write_distribution,
    write_entropy_curve_csv,
    write_eval_csv,
    write_top_partitions,
    write_trace_jsonl,
)
from .selection import Budget, CostModel, build_question, candidate_questions

ORACLE_KINDS = ("simulated", "scripted", "remote")


def load_records(path: str | Path) -> list[Record]:
    """Read a records CSV: header with an ``id`` column, other columns become attributes.

    Values are trimmed of surrounding whitespace. Duplicate ids and rows
    whose width disagrees with the header are reported with line numbers.
    """
    path = Path(path)
    if not path.exists():
        raise InputError(f"{path}: no such file")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header:
            raise InputError(f"{path}: empty or malformed file (no header row)")
        header = [h.strip() for h in header]
        if "id" not in header:
            raise InputError(f"{path}: header has no 'id' column")
        id_at = header.index("id")
        records: list[Record] = []
        seen: set[str] = set()
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise InputError(
                    f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}"
                )
            values = [v.strip() for v in row]
            rid = values[id_at]
            if not rid:
                raise InputError(f"{path}:{lineno}: empty id")
            if rid in seen:
                raise InputError(f"{path}:{lineno}: duplicate id {rid!r}")
            seen.add(rid)
            attributes = tuple(
                (name, values[i]) for i, name in enumerate(header) if i != id_at
            )
            records.append(Record(id=rid, attributes=attributes))
    if not records:
        raise InputError(f"{path}: no data rows")
    return records


def save_records(records: Sequence[Record], path: str | Path) -> None:
    """Inverse of load_records for records sharing one attribute schema."""
    header = ["id", *records[0].attribute_names]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for record in records:
            writer.writerow([record.id, *(value for _, value in record.attributes)])


def load_truth(path: str | Path, records: Sequence[Record]) -> GroundTruth:
    """Ground-truth CSV with ``id`` and ``entity`` columns, grouping ids into clusters."""
    path = Path(path)
    groups: dict[str, list[str]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if not reader.fieldnames or "id" not in reader.fieldnames or "entity" not in reader.fieldnames:
            raise InputError(f"{path}: expected columns id,entity")
        for row in reader:
            groups.setdefault(row["entity"].strip(), []).append(row["id"].strip())
    universe = {r.id for r in records}
    labeled = {rid for cluster in groups.values() for rid in cluster}
    if labeled != universe:
        raise InputError(
            f"{path}: truth labels do not cover the dataset exactly "
            f"(missing={sorted(universe - labeled)}, unknown={sorted(labeled - universe)})"
        )
    return GroundTruth(Partition.from_clusters(groups.values()))


@dataclass
class RunConfig:
    """Everything a run needs; every field has a CLI flag and a config-file key."""

    records: str = ""
    out: str = "out"
    tau: float = 0.5
    default_prob: float = 0.05
    component_cap: int = 8
    max_entries: int = 64
    similarity: str = "edit"
    chars_per_token: float = 4.0
    answer_allowance: int = 5
    oracle: str = "simulated"
    theta: float = 0.9
    seed: int = 0
    budget: int = 1000
    questions_per_iteration: int = 1
    min_entropy_drop: float = 1e-3
    max_iterations: int = 20
    parallelism: int = 1
    topk: int = 10
    scores: list[str] = field(default_factory=list)
    no_builtin: bool = False
    initial: str = ""
    truth: str = ""
    script: str = ""
    template: str = ""
    estimate_theta: str = ""
    base_url: str = "https://api.openai.com/v1"
    model: str = "gpt-4"
    api_key_env: str = "PAIRPROBE_API_KEY"
    retries: int = 2

    def __post_init__(self) -> None:
        if self.oracle not in ORACLE_KINDS:
            raise ConfigError(f"oracle must be one of {ORACLE_KINDS}, got {self.oracle!r}")
        if not 0.0 < self.theta < 1.0:
            raise ConfigError(f"theta must lie strictly in (0, 1), got {self.theta}")
        if self.budget < 0:
            raise ConfigError("budget must be >= 0")
        if self.topk < 1:
            raise ConfigError("topk must be >= 1")

    def cost_model(self) -> CostModel:
        return CostModel(
            chars_per_token=self.chars_per_token, answer_allowance=self.answer_allowance
        )

    def stop_policy(self) -> StopPolicy:
        return StopPolicy(
            min_entropy_drop=self.min_entropy_drop, max_iterations=self.max_iterations
        )


def _merge_config(args: argparse.Namespace, defaults: RunConfig) -> RunConfig:
    file_values: dict[str, Any] = {}
    if getattr(args, "config", None):
        config_path = Path(args.config)
        if not config_path.exists():
            raise ConfigError(f"{config_path}: no such config file")
        try:
            file_values = json.loads(config_path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{config_path}: invalid JSON: {exc}") from exc
        if not isinstance(file_values, dict):
            raise ConfigError(f"{config_path}: config must be a flat JSON object")
    known = {f.name for f in fields(RunConfig)}
    unknown = set(file_values) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    merged: dict[str, Any] = {}
    for f in fields(RunConfig):
        flag_value = getattr(args, f.name, None)
        if flag_value is not None:
            merged[f.name] = flag_value
        elif f.name in file_values:
            merged[f.name] = file_values[f.name]
        else:
            merged[f.name] = getattr(defaults, f.name)
    return RunConfig(**merged)


def _load_template(config: RunConfig) -> str | None:
    if not config.template:
        return None
    path = Path(config.template)
    if not path.exists():
        raise InputError(f"{path}: no such template file")
    return path.read_text(encoding="utf-8")


def _build_initial(config: RunConfig, records: Sequence[Record]):
    sources = []
    if not config.no_builtin:
        if len(records) >= 2 and records[0].attribute_names:
            names = records[0].attribute_names
            matcher = MatcherConfig.uniform(names, kind=config.similarity)
            sources.append(score_pairs(records, matcher))
        else:
            sources.append([])  # nothing to score; every record is its own component
    for score_path in config.scores:
        sources.append(load_pair_scores(score_path))
    if not sources:
        raise ConfigError("--no-builtin requires at least one --scores file")
    try:
        return initial_distribution(
            records,
            sources,
            tau=config.tau,
            default_prob=config.default_prob,
            max_entries=config.max_entries,
            component_cap=config.component_cap,
        )
    except ComponentTooLargeError as exc:
        raise ConfigError(f"{exc} (current tau: {config.tau})") from exc


def _build_oracle(config: RunConfig, records: Sequence[Record], cost_model: CostModel):
    if config.theta < LOW_THETA_WARNING:
        print(
            f"warning: theta={config.theta} is close to coin-flipping; "
            "answers will barely move the distribution",
            file=sys.stderr,
        )
    if config.oracle == "simulated":
        if not config.truth:
            raise ConfigError("simulated oracle needs --truth (id,entity CSV)")
        truth = load_truth(config.truth, records)
        return SimulatedOracle(truth, theta=config.theta, seed=config.seed), truth
    if config.oracle == "scripted":
        if not config.script:
            raise ConfigError("scripted oracle needs --script (id_a,id_b,verdict CSV)")
        return ScriptedOracle.from_csv(config.script), None
    profile = OracleProfile(
        theta=config.theta,
        base_url=config.base_url,
        model=config.model,
        api_key_env=config.api_key_env,
        seed=config.seed,
        retries=config.retries,
    )
    return RemoteOracle(profile, cost_model=cost_model), None


def _estimate_theta(config: RunConfig, oracle, records, template, cost_model) -> float:
    index = records_by_id(records)
    sample = []
    with open(config.estimate_theta, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        needed = {"id_a", "id_b", "verdict"}
        if not reader.fieldnames or not needed <= set(reader.fieldnames):
            raise InputError(f"{config.estimate_theta}: expected columns id_a,id_b,verdict")
        for row in reader:
            pair = RecordPair(row["id_a"].strip(), row["id_b"].strip())
            question = build_question(pair, index, template, cost_model)
            sample.append((question, parse_verdict(row["verdict"])))
    if not sample:
        raise InputError(f"{config.estimate_theta}: no sample rows")
    theta = estimate_accuracy(oracle, sample)
    print(f"estimated oracle accuracy from {len(sample)} sample questions: {theta:.4f}")
    return theta


def cmd_init(config: RunConfig) -> int:
    records = load_records(config.records)
    dist = _build_initial(config, records)
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    write_distribution(out / "initial_distribution.json", dist)
    write_top_partitions(out / "top_partitions.txt", dist.top_partitions(config.topk))
    bits = entropy(dist)
    print(f"records: {len(records)}")
    print(f"components: {len(dist.components)}")
    print(f"initial entropy: {bits:.6f} bits")
    print(f"wrote {out / 'initial_distribution.json'} and {out / 'top_partitions.txt'}")
    return 0


def cmd_resolve(config: RunConfig) -> int:
    records = load_records(config.records)
    if config.initial:
        dist = load_distribution(config.initial)
        if dist.universe != frozenset(r.id for r in records):
            raise InputError("--initial distribution universe does not match the records CSV")
    else:
        dist = _build_initial(config, records)
    template = _load_template(config)
    cost_model = config.cost_model()
    oracle, _ = _build_oracle(config, records, cost_model)

    theta = config.theta
    if config.estimate_theta:
        theta = _estimate_theta(config, oracle, records, template, cost_model)

    index = records_by_id(records)
    candidates = candidate_questions(dist, index, template, cost_model)
    final, trace = run_loop(
        dist,
        candidates,
        oracle,
        theta=theta,
        budget=Budget(total=config.budget),
        stop=config.stop_policy(),
        questions_per_iteration=config.questions_per_iteration,
        parallelism=config.parallelism,
    )
    answered = sum(len(row.answers) for row in trace.iterations)
    failed = sum(len(row.failed_pairs) for row in trace.iterations)
    if failed and not answered:
        raise OracleTransportError(
            f"oracle produced no usable answers ({failed} questions failed)"
        )

    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    write_distribution(out / "final_distribution.json", final)
    write_top_partitions(out / "final_top_partitions.txt", final.top_partitions(config.topk))
    write_trace_jsonl(out / "question_log.jsonl", trace)
    curve = trace.entropy_curve()
    write_entropy_curve_csv(out / "entropy_curve.csv", curve)
    render_entropy_curve(out / "entropy_curve.png", curve)

    print(f"iterations: {len(trace.iterations)} ({trace.halt_reason})")
    print(f"entropy: {trace.initial_entropy:.6f} -> {trace.final_entropy:.6f} bits")
    print(f"tokens spent: {trace.tokens_spent} of {trace.budget_total}")
    print(f"wrote reports to {out}/")
    return 0


def cmd_report(config: RunConfig) -> int:
    run_dir = Path(config.out)
    if not run_dir.exists():
        raise InputError(f"{run_dir}: no such run directory")
    produced = []
    curve_csv = run_dir / "entropy_curve.csv"
    if curve_csv.exists():
        curve = read_entropy_curve_csv(curve_csv)
        render_entropy_curve(run_dir / "entropy_curve.png", curve)
        produced.append("entropy_curve.png")
    eval_csv = run_dir / "eval_report.csv"
    if eval_csv.exists():
        render_eval_report(run_dir / "eval_report.png", read_eval_csv(eval_csv))
        produced.append("eval_report.png")
    for name in ("final_distribution.json", "initial_distribution.json"):
        dist_path = run_dir / name
        if dist_path.exists():
            dist = load_distribution(dist_path)
            table = "final_top_partitions.txt" if name.startswith("final") else "top_partitions.txt"
            write_top_partitions(run_dir / table, dist.top_partitions(config.topk))
            produced.append(table)
    if not produced:
        raise InputError(f"{run_dir}: nothing to report on (no run artifacts found)")
    print(f"rendered: {', '.join(produced)}")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    try:
        budgets = tuple(int(b) for b in args.budgets.split(","))
    except ValueError as exc:
        raise ConfigError(f"--budgets must be comma-separated integers: {exc}") from exc
    if any(b < 0 for b in budgets):
        raise ConfigError("budgets must be >= 0")
    strategies = tuple(s.strip() for s in args.strategies.split(","))
    if args.theta == 1.0 and not args.allow_perfect:
        raise ConfigError("theta=1 requires --allow-perfect")
    sweep = SweepConfig(
        n_entities=args.entities,
        dup_min=args.dups_min,
        dup_max=args.dups_max,
        noise_rate=args.noise,
        tau=args.tau,
        theta=args.theta,
        budgets=budgets,
        strategies=strategies,
        n_seeds=args.seeds,
        allow_perfect=args.allow_perfect,
    )
    rows = run_sweep(sweep)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_eval_csv(out / "eval_report.csv", rows)
    render_eval_report(out / "eval_report.png", rows)
    print(f"{'budget':>8} {'strategy':>12} {'F1':>8} {'entropy':>9} {'tokens':>9}")
    for row in rows:
        print(
            f"{row.budget:>8} {row.strategy:>12} {row.f1_mean:>8.4f} "
            f"{row.entropy_mean:>9.4f} {row.tokens_mean:>9.1f}"
        )
    print(f"wrote {out / 'eval_report.csv'} and {out / 'eval_report.png'}")
    return 0


def cmd_synth(args: argparse.Namespace) -> int:
    records, truth = synthetic_corpus(
        args.entities, args.dups_min, args.dups_max, args.noise, args.seed
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_records(records, out / "records.csv")
    cluster_of = {
        rid: i
        for i, cluster in enumerate(sorted(truth.true_partition.canonical_key))
        for rid in cluster
    }
    with open(out / "truth.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "entity"])
        for record in records:
            writer.writerow([record.id, f"e{cluster_of[record.id]}"])
    print(f"wrote {out / 'records.csv'} and {out / 'truth.csv'} ({len(records)} records)")
    return 0


class _Parser(argparse.ArgumentParser):
    # Usage mistakes are configuration errors: exit 1, not argparse's 2.
    def error(self, message: str) -> None:  # type: ignore[override]
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="flat JSON config file; flags override it")
    parser.add_argument("--records", help="records CSV with an id column")
    parser.add_argument("--out", help="output directory (default: out)")
    parser.add_argument("--tau", type=float, help="pair score threshold (default 0.5)")
    parser.add_argument("--default-prob", dest="default_prob", type=float,
                        help="co-cluster probability for unscored in-component pairs")
    parser.add_argument("--component-cap", dest="component_cap", type=int,
                        help="max records per blocking component (default 8)")
    parser.add_argument("--max-entries", dest="max_entries", type=int,
                        help="max partitions kept per component (default 64)")
    parser.add_argument("--similarity", choices=("edit", "token"),
                        help="attribute similarity kind for the builtin matcher")
    parser.add_argument("--scores", action="append",
                        help="imported pair-score CSV (id_a,id_b,probability); repeatable")
    parser.add_argument("--no-builtin", dest="no_builtin", action="store_const", const=True,
                        help="skip the builtin matcher, use only imported scores")
    parser.add_argument("--topk", type=int, help="partitions shown in tables (default 10)")


def _add_oracle_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--oracle", choices=ORACLE_KINDS, help="oracle implementation")
    parser.add_argument("--theta", type=float, help="expected oracle accuracy in (0,1)")
    parser.add_argument("--seed", type=int, help="seed for the simulated oracle")
    parser.add_argument("--truth", help="ground-truth CSV (id,entity) for the simulated oracle")
    parser.add_argument("--script", help="scripted answers CSV (id_a,id_b,verdict)")
    parser.add_argument("--estimate-theta", dest="estimate_theta",
                        help="labeled sample CSV (id_a,id_b,verdict) to estimate accuracy")
    parser.add_argument("--template", help="prompt template file")
    parser.add_argument("--chars-per-token", dest="chars_per_token", type=float,
                        help="token estimate divisor (default 4.0)")
    parser.add_argument("--answer-allowance", dest="answer_allowance", type=int,
                        help="flat answer tokens added per question (default 5)")
    parser.add_argument("--budget", type=int, help="total token budget")
    parser.add_argument("--questions-per-iteration", dest="questions_per_iteration",
                        type=int, help="questions per loop iteration (default 1)")
    parser.add_argument("--min-entropy-drop", dest="min_entropy_drop", type=float,
                        help="stop when an iteration reduces entropy less than this")
    parser.add_argument("--max-iterations", dest="max_iterations", type=int,
                        help="iteration cap (default 20)")
    parser.add_argument("--parallelism", type=int,
                        help="concurrent oracle asks within one iteration (default 1)")
    parser.add_argument("--base-url", dest="base_url", help="remote endpoint base URL")
    parser.add_argument("--model", help="remote model identifier")
    parser.add_argument("--api-key-env", dest="api_key_env",
                        help="environment variable holding the API key")
    parser.add_argument("--retries", type=int, help="transport retries (default 2)")
    parser.add_argument("--initial", help="initial distribution JSON from a prior init run")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="pairprobe", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p_init = sub.add_parser("init", help="score, block, and enumerate the initial distribution")
    _add_common(p_init)

    p_resolve = sub.add_parser("resolve", help="refine the distribution by asking the oracle")
    _add_common(p_resolve)
    _add_oracle_flags(p_resolve)

    p_report = sub.add_parser("report", help="re-render tables and figures for a run directory")
    p_report.add_argument("--out", required=True, help="run directory to render")
    p_report.add_argument("--topk", type=int, help="partitions shown in tables (default 10)")

    p_eval = sub.add_parser("eval", help="benchmark strategies on synthetic corpora")
    p_eval.add_argument("--out", default="out-eval", help="output directory")
    p_eval.add_argument("--entities", type=int, default=15)
    p_eval.add_argument("--dups-min", dest="dups_min", type=int, default=2)
    p_eval.add_argument("--dups-max", dest="dups_max", type=int, default=3)
    p_eval.add_argument("--noise", type=float, default=0.2)
    p_eval.add_argument("--tau", type=float, default=0.5)
    p_eval.add_argument("--theta", type=float, default=0.9)
    p_eval.add_argument("--allow-perfect", dest="allow_perfect", action="store_true",
                        help="permit theta=1 (noiseless simulator)")
    p_eval.add_argument("--budgets", default="0,500,1000,2000",
                        help="comma-separated token budgets")
    p_eval.add_argument("--strategies", default=",".join(STRATEGIES),
                        help=f"comma-separated subset of {STRATEGIES}")
    p_eval.add_argument("--seeds", type=int, default=20, help="number of seeds to average")

    p_synth = sub.add_parser("synth", help="write a synthetic records CSV with ground truth")
    p_synth.add_argument("--out", default="out-synth")
    p_synth.add_argument("--entities", type=int, default=15)
    p_synth.add_argument("--dups-min", dest="dups_min", type=int, default=2)
    p_synth.add_argument("--dups-max", dest="dups_max", type=int, default=3)
    p_synth.add_argument("--noise", type=float, default=0.2)
    p_synth.add_argument("--seed", type=int, default=0)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "eval":
            return cmd_eval(args)
        if args.command == "synth":
            return cmd_synth(args)
        config = _merge_config(args, RunConfig())
        if args.command == "init":
            if not config.records:
                raise ConfigError("init needs --records")
            return cmd_init(config)
        if args.command == "resolve":
            if not config.records:
                raise ConfigError("resolve needs --records")
            return cmd_resolve(config)
        if args.command == "report":
            return cmd_report(config)
        raise ConfigError(f"unknown command {args.command!r}")
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1
    except InputError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return 2
    except OracleTransportError as exc:
        print(f"oracle transport failure: {exc}", file=sys.stderr)
        return 3
    except PairprobeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
