"""Report files: partition tables, distribution JSON, trace JSONL, CSV, figures.

Every writer is deterministic for identical inputs: JSON keys are sorted,
entries are emitted in canonical order, and figures are rendered through the
Agg backend with pinned metadata so repeated runs produce byte-identical
files.
"""
from __future__ import annotations

import csv
import json
from dataclasses import asdict
from pathlib import Path
from typing import Sequence

from .core import Partition, PartitionDistribution, ProductDistribution
from .errors import InputError
from .evaluation import EvalRow
from .refine import RefinementTrace


def format_partition(partition: Partition) -> str:
    return " ".join("{" + ",".join(cluster) + "}" for cluster in partition.canonical_key)


def write_top_partitions(
    path: str | Path, ranked: Sequence[tuple[Partition, float]]
) -> None:
    """Human-readable top-k table: rank, probability, cluster sets."""
    lines = [f"{'rank':>4}  {'probability':>12}  clusters"]
    for rank, (partition, prob) in enumerate(ranked, start=1):
        lines.append(f"{rank:>4}  {prob:>12.6f}  {format_partition(partition)}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def distribution_to_dict(dist: ProductDistribution | PartitionDistribution) -> dict:
    if isinstance(dist, PartitionDistribution):
        dist = ProductDistribution(components=(dist,))
    return {
        "components": [
            {
                "universe": sorted(component.universe),
                "entries": [
                    {"clusters": [list(c) for c in partition.canonical_key], "probability": prob}
                    for partition, prob in component.sorted_entries()
                ],
            }
            for component in dist.components
        ]
    }


def write_distribution(path: str | Path, dist) -> None:
    Path(path).write_text(
        json.dumps(distribution_to_dict(dist), indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )


def load_distribution(path: str | Path) -> ProductDistribution:
    try:
        blob = json.loads(Path(path).read_text(encoding="utf-8"))
        components = []
        for comp in blob["components"]:
            universe = frozenset(comp["universe"])
            entries = tuple(
                (
                    Partition(
                        universe=universe,
                        clusters=frozenset(frozenset(c) for c in entry["clusters"]),
                    ),
                    float(entry["probability"]),
                )
                for entry in comp["entries"]
            )
            components.append(PartitionDistribution(universe=universe, entries=entries))
    except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
        raise InputError(f"{path}: not a valid distribution file: {exc}") from exc
    return ProductDistribution(components=tuple(components))


def _answer_dict(answer) -> dict:
    return {
        "id_a": answer.pair.a,
        "id_b": answer.pair.b,
        "verdict": answer.verdict.value,
        "tokens_billed": answer.tokens_billed,
        "raw": answer.raw,
    }


def write_trace_jsonl(path: str | Path, trace: RefinementTrace) -> None:
    """One object per iteration, then a final summary object."""
    lines = []
    for row in trace.iterations:
        lines.append(
            json.dumps(
                {
                    "iteration": row.index,
                    "questions": [
                        {"id_a": q.pair.a, "id_b": q.pair.b, "cost": q.cost, "prompt": q.prompt}
                        for q in row.questions
                    ],
                    "answers": [_answer_dict(a) for a in row.answers],
                    "failed_pairs": [[p.a, p.b] for p in row.failed_pairs],
                    "entropy_before": row.entropy_before,
                    "entropy_after": row.entropy_after,
                    "tokens_spent_cumulative": row.tokens_spent_cumulative,
                },
                sort_keys=True,
            )
        )
    lines.append(
        json.dumps(
            {
                "summary": {
                    "initial_entropy": trace.initial_entropy,
                    "final_entropy": trace.final_entropy,
                    "iterations": len(trace.iterations),
                    "halt_reason": trace.halt_reason,
                    "tokens_spent": trace.tokens_spent,
                    "budget_total": trace.budget_total,
                }
            },
            sort_keys=True,
        )
    )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_entropy_curve_csv(path: str | Path, curve: Sequence[tuple[int, float]]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["cumulative_tokens", "entropy_bits"])
        for tokens, bits in curve:
            writer.writerow([tokens, repr(bits)])


def read_entropy_curve_csv(path: str | Path) -> list[tuple[int, float]]:
    curve = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["cumulative_tokens", "entropy_bits"]:
            raise InputError(f"{path}: expected header cumulative_tokens,entropy_bits")
        for row in reader:
            if row:
                curve.append((int(row[0]), float(row[1])))
    return curve


def write_eval_csv(path: str | Path, rows: Sequence[EvalRow]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        fields = list(EvalRow.__dataclass_fields__)
        writer.writerow(fields)
        for row in rows:
            data = asdict(row)
            writer.writerow([data[f] for f in fields])


def read_eval_csv(path: str | Path) -> list[EvalRow]:
    rows = []
    fields = list(EvalRow.__dataclass_fields__)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != fields:
            raise InputError(f"{path}: unexpected eval report header")
        for raw in reader:
            rows.append(
                EvalRow(
                    budget=int(raw["budget"]),
                    strategy=raw["strategy"],
                    precision_mean=float(raw["precision_mean"]),
                    precision_std=float(raw["precision_std"]),
                    recall_mean=float(raw["recall_mean"]),
                    recall_std=float(raw["recall_std"]),
                    f1_mean=float(raw["f1_mean"]),
                    f1_std=float(raw["f1_std"]),
                    entropy_mean=float(raw["entropy_mean"]),
                    entropy_std=float(raw["entropy_std"]),
                    tokens_mean=float(raw["tokens_mean"]),
                    tokens_std=float(raw["tokens_std"]),
                    seeds=int(raw["seeds"]),
                )
            )
    return rows


def _pyplot():
    import matplotlib

    matplotlib.use("Agg", force=False)
    import matplotlib.pyplot as plt

    return plt


_SAVEFIG_KWARGS = dict(dpi=150, metadata={"Software": None})


def render_entropy_curve(path: str | Path, curve: Sequence[tuple[int, float]]) -> None:
    """Uncertainty-reduction curve: entropy against cumulative tokens spent."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot([c[0] for c in curve], [c[1] for c in curve], marker="o")
    ax.set_xlabel("cumulative tokens spent")
    ax.set_ylabel("entropy (bits)")
    ax.set_title("Uncertainty reduction")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, **_SAVEFIG_KWARGS)
    plt.close(fig)


def render_eval_report(path: str | Path, rows: Sequence[EvalRow]) -> None:
    """F1 and final entropy against budget, one line per strategy."""
    plt = _pyplot()
    strategies = sorted({row.strategy for row in rows})
    fig, (ax_f1, ax_h) = plt.subplots(1, 2, figsize=(10, 4))
    for strategy in strategies:
        cells = sorted((r for r in rows if r.strategy == strategy), key=lambda r: r.budget)
        budgets = [c.budget for c in cells]
        ax_f1.errorbar(
            budgets,
            [c.f1_mean for c in cells],
            yerr=[c.f1_std for c in cells],
            marker="o",
            capsize=3,
            label=strategy,
        )
        ax_h.errorbar(
            budgets,
            [c.entropy_mean for c in cells],
            yerr=[c.entropy_std for c in cells],
            marker="o",
            capsize=3,
            label=strategy,
        )
    ax_f1.set_xlabel("budget (tokens)")
    ax_f1.set_ylabel("pairwise F1 (mean over seeds)")
    ax_f1.grid(True, alpha=0.3)
    ax_f1.legend()
    ax_h.set_xlabel("budget (tokens)")
    ax_h.set_ylabel("final entropy (bits, mean)")
    ax_h.grid(True, alpha=0.3)
    ax_h.legend()
    fig.tight_layout()
    fig.savefig(path, **_SAVEFIG_KWARGS)
    plt.close(fig)
