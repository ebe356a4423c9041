"""Machine-difficulty and bias measurement over exported MCQ items.

Three probes stand in for human evaluation at desk scale:

* machine_accuracy: how often a relevance scorer, acting as the
  attacker, picks the gold choice by argmax (ties count as incorrect);
* lambda_sweep: rerun the whole pipeline across a tradeoff grid and
  report attacker accuracy plus the matched relevance/similarity means;
* frequency_prior_probe: predict from per-response gold rates alone,
  without ever reading the query.  On well-matched output every response
  is gold once and a distractor K times, so the probe converges to
  chance at 1/(K+1).
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Callable, Sequence

from .matcher import MCQItem, MatchConfig
from .pipeline import RunResult, run_match
from .scoring import ScorerSpec, relevance_overlap
from .corpus import Token


class DiagnosticsError(ValueError):
    """Raised for unusable probe inputs."""


RelScorer = Callable[[Sequence[Token], Sequence[Token]], float]


def overlap_attacker(eps: float = 1e-6) -> RelScorer:
    """The pipeline's own built-in relevance scorer as an attacker."""
    return lambda query, choice: relevance_overlap(query, choice, eps)


def machine_accuracy(items: Sequence[MCQItem], scorer: RelScorer) -> float:
    """Fraction of items where the scorer's argmax choice is gold.

    Ties never count as correct: a scorer with no opinion must score zero,
    not chance.
    """
    if not items:
        raise DiagnosticsError("machine_accuracy needs at least one item")
    hits = 0
    for item in items:
        scores = [scorer(item.query, choice) for choice in item.choices]
        top = max(scores)
        if scores.count(top) == 1 and scores.index(top) == item.gold_index:
            hits += 1
    return hits / len(items)


def canonical_choice_text(tokens: Sequence[Token]) -> str:
    """Choice text with tags collapsed to their class names."""
    return " ".join(t.tag_class if t.kind == "tag" else t.text for t in tokens)


def frequency_prior_probe(train_items: Sequence[MCQItem],
                          eval_items: Sequence[MCQItem],
                          feature: Callable[[Sequence[Token]], object] | None = None,
                          ) -> float:
    """Accuracy of predicting gold from per-response gold rates alone.

    Builds a (times gold / times appearing) table over the train items'
    choices, then on each eval item predicts the choice with the highest
    rate (unseen -> 0.0, ties -> first choice).  ``feature`` customizes how
    a choice is keyed; the default is its class-canonical text.
    """
    if not train_items or not eval_items:
        raise DiagnosticsError("probe needs non-empty train and eval items")
    key = feature or canonical_choice_text
    counts: dict[object, list[int]] = {}
    for item in train_items:
        for pos, choice in enumerate(item.choices):
            entry = counts.setdefault(key(choice), [0, 0])
            entry[0] += pos == item.gold_index
            entry[1] += 1
    rates = {k: g / s for k, (g, s) in counts.items()}
    hits = 0
    for item in eval_items:
        choice_rates = [rates.get(key(c), 0.0) for c in item.choices]
        if choice_rates.index(max(choice_rates)) == item.gold_index:
            hits += 1
    return hits / len(eval_items)


@dataclass(frozen=True)
class SweepRow:
    lambda_: float
    machine_accuracy: float
    mean_gold_distractor_similarity: float
    mean_distractor_relevance: float


def _matched_means(result: RunResult) -> tuple[float, float]:
    sim_sum = rel_sum = 0.0
    count = 0
    for br in result.buckets:
        index = {r.id: pos for pos, r in enumerate(br.bucket.members)}
        for dset in br.distractor_sets:
            i = index[dset.query_id]
            for d in dset.distractors:
                j = index[d.source_id]
                sim_sum += float(br.similarity.values[i, j])
                rel_sum += float(br.relevance.values[i, j])
                count += 1
    return sim_sum / count, rel_sum / count


def lambda_sweep(records, grid: Sequence[float], config: MatchConfig,
                 rel_spec: ScorerSpec | None = None,
                 sim_spec: ScorerSpec | None = None,
                 attacker: RelScorer | None = None,
                 jobs: int = 1) -> list[SweepRow]:
    """Full pipeline rerun per lambda (same seed); one row per grid point."""
    if not grid:
        raise DiagnosticsError("lambda grid is empty")
    attacker = attacker or overlap_attacker(config.eps)
    rows = []
    for lam in grid:
        try:
            result = run_match(records, config.with_lambda(lam),
                               rel_spec=rel_spec, sim_spec=sim_spec, jobs=jobs)
        except ValueError as exc:
            raise DiagnosticsError(f"lambda={lam}: {exc}") from exc
        sim_mean, rel_mean = _matched_means(result)
        rows.append(SweepRow(
            lambda_=float(lam),
            machine_accuracy=machine_accuracy(result.items, attacker),
            mean_gold_distractor_similarity=sim_mean,
            mean_distractor_relevance=rel_mean,
        ))
    return rows


SWEEP_COLUMNS = ("lambda", "machine_accuracy",
                 "mean_gold_distractor_similarity", "mean_distractor_relevance")


def format_sweep_table(rows: Sequence[SweepRow]) -> str:
    """Plain-text report, one row per sweep point."""
    lines = ["\t".join(SWEEP_COLUMNS)]
    for r in rows:
        lines.append("\t".join([
            repr(r.lambda_), repr(r.machine_accuracy),
            repr(r.mean_gold_distractor_similarity),
            repr(r.mean_distractor_relevance)]))
    return "\n".join(lines) + "\n"


def format_sweep_csv(rows: Sequence[SweepRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SWEEP_COLUMNS)
    for r in rows:
        writer.writerow([r.lambda_, r.machine_accuracy,
                         r.mean_gold_distractor_similarity,
                         r.mean_distractor_relevance])
    return buf.getvalue()
