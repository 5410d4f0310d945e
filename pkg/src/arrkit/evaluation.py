"""Scoring for generated answers and ranked retrieval runs.

Two families of metrics:

* title inclusion — does a gold paragraph title appear in the generated
  answer? Aggregated as micro precision/recall/F1 over all (example,
  answer) pairs, plus a per-example hit rate (an example counts as hit
  when at least one of its gold titles is found).
* ranked retrieval — recall@k, precision@k, and mean average precision
  over ranked candidate lists with known relevant ids.

Conventions for empty denominators, chosen so every metric stays in
[0, 1]: precision with zero predictions is 0, and average precision
with zero retrieved relevant ids is 0.

Exact-match accuracy over option letters is provided as plumbing for
multiple-choice tasks; it is a lower bound on any human grading of free
text and is labeled as such.
"""

from __future__ import annotations

import csv
import json
import re
import unicodedata
from dataclasses import dataclass, field
from pathlib import Path
from typing import Hashable, Iterable, Optional, Sequence, Union

from .errors import EmptyCorpusError, MalformedRecordError

_WHITESPACE_RUN = re.compile(r"\s+")

# zero-denominator conventions, echoed into every report
CONVENTIONS = {
    "empty_prediction_precision": 0.0,
    "zero_hit_average_precision": 0.0,
}


@dataclass(frozen=True)
class EvalExample:
    """One scoring unit: a query and its gold paragraph titles."""

    id: Union[int, str]
    query: str
    gold_titles: frozenset[str]

    def __post_init__(self) -> None:
        object.__setattr__(self, "gold_titles", frozenset(self.gold_titles))
        if not self.gold_titles:
            raise ValueError(f"example {self.id!r} has no gold titles")


@dataclass(frozen=True)
class RankedRun:
    """One query's ranked candidate ids plus the ids that count as relevant."""

    query_id: Union[int, str]
    ranked_ids: tuple[Hashable, ...]
    relevant_ids: frozenset[Hashable]

    def __post_init__(self) -> None:
        object.__setattr__(self, "ranked_ids", tuple(self.ranked_ids))
        object.__setattr__(self, "relevant_ids", frozenset(self.relevant_ids))
        if len(set(self.ranked_ids)) != len(self.ranked_ids):
            raise ValueError(f"run {self.query_id!r} has duplicate ranked ids")


@dataclass
class MetricsReport:
    """All computed metrics; fields stay None when their inputs were absent."""

    n_examples: int
    micro_precision: Optional[float] = None
    micro_recall: Optional[float] = None
    micro_f1: Optional[float] = None
    example_hit_rate: Optional[float] = None
    recall_at_k: dict[int, float] = field(default_factory=dict)
    precision_at_k: dict[int, float] = field(default_factory=dict)
    map_score: Optional[float] = None

    def to_dict(self) -> dict:
        return {
            "n_examples": self.n_examples,
            "micro_precision": self.micro_precision,
            "micro_recall": self.micro_recall,
            "micro_f1": self.micro_f1,
            "example_hit_rate": self.example_hit_rate,
            "recall_at_k": {str(k): v for k, v in sorted(self.recall_at_k.items())},
            "precision_at_k": {str(k): v for k, v in sorted(self.precision_at_k.items())},
            "map_score": self.map_score,
        }


def normalize_for_match(text: str) -> str:
    """NFKC, whitespace runs collapsed to single spaces, ends stripped."""
    return _WHITESPACE_RUN.sub(" ", unicodedata.normalize("NFKC", text)).strip()


def extract_titles(answer: str, catalog: Iterable[str], strict: bool = False) -> set[str]:
    """Return every catalog title found inside the answer.

    Matching is normalized substring inclusion (both sides through
    ``normalize_for_match``); ``strict=True`` switches to raw substring
    for sensitivity checks. Output is always a subset of the catalog.
    """
    titles = set(catalog)
    if not titles:
        raise ValueError("catalog must be nonempty")
    if strict:
        return {title for title in titles if title and title in answer}
    haystack = normalize_for_match(answer)
    found = set()
    for title in titles:
        needle = normalize_for_match(title)
        # a title that normalizes to nothing would match every answer
        if needle and needle in haystack:
            found.add(title)
    return found


def micro_f1(
    examples: Sequence[EvalExample],
    answers: Sequence[str],
    catalog: Iterable[str],
    strict: bool = False,
) -> MetricsReport:
    """Micro precision/recall/F1 of title inclusion, plus per-example hit rate.

    Predictions for each example are ``extract_titles(answer, catalog)``;
    true positives are predictions that are also gold. F1 is the
    harmonic mean of micro precision and micro recall (0 when both are 0).
    """
    if len(examples) != len(answers):
        raise ValueError(f"got {len(answers)} answers for {len(examples)} examples")
    if not examples:
        raise ValueError("no examples")
    catalog = set(catalog)
    tp = 0
    n_predicted = 0
    n_gold = 0
    hits = 0
    for example, answer in zip(examples, answers):
        predicted = extract_titles(answer, catalog, strict=strict)
        correct = len(predicted & example.gold_titles)
        tp += correct
        n_predicted += len(predicted)
        n_gold += len(example.gold_titles)
        if correct:
            hits += 1
    precision = tp / n_predicted if n_predicted else 0.0
    recall = tp / n_gold
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return MetricsReport(
        n_examples=len(examples),
        micro_precision=precision,
        micro_recall=recall,
        micro_f1=f1,
        example_hit_rate=hits / len(examples),
    )


def per_example_title_rows(
    examples: Sequence[EvalExample],
    answers: Sequence[str],
    catalog: Iterable[str],
    strict: bool = False,
) -> list[dict]:
    """One row per example for error analysis (CSV-ready)."""
    if len(examples) != len(answers):
        raise ValueError(f"got {len(answers)} answers for {len(examples)} examples")
    catalog = set(catalog)
    rows = []
    for example, answer in zip(examples, answers):
        predicted = extract_titles(answer, catalog, strict=strict)
        correct = predicted & example.gold_titles
        rows.append(
            {
                "id": example.id,
                "n_gold": len(example.gold_titles),
                "n_predicted": len(predicted),
                "n_correct": len(correct),
                "hit": int(bool(correct)),
                "missed_titles": "|".join(sorted(example.gold_titles - predicted)),
            }
        )
    return rows


def write_rows_csv(rows: Sequence[dict], path: Union[str, Path]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()) if rows else ["id"])
        writer.writeheader()
        writer.writerows(rows)


def recall_at_k(runs: Sequence[RankedRun], k: int) -> float:
    """Fraction of runs with at least one relevant id in the top k."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if not runs:
        raise ValueError("no runs")
    hits = sum(1 for run in runs if set(run.ranked_ids[:k]) & run.relevant_ids)
    return hits / len(runs)


def precision_at_k(run: RankedRun, k: int) -> float:
    """|relevant in top k| / k for one run."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    return len(set(run.ranked_ids[:k]) & run.relevant_ids) / k


def mean_precision_at_k(runs: Sequence[RankedRun], k: int) -> float:
    if not runs:
        raise ValueError("no runs")
    return sum(precision_at_k(run, k) for run in runs) / len(runs)


def average_precision(run: RankedRun) -> float:
    """Mean of precision@rank over the ranks where a relevant id appears,
    divided by the total number of relevant ids; 0 when nothing relevant
    was retrieved. The run must have at least one relevant id."""
    if not run.relevant_ids:
        raise ValueError(f"run {run.query_id!r} has no relevant ids")
    found = 0
    precision_sum = 0.0
    for rank, candidate in enumerate(run.ranked_ids, start=1):
        if candidate in run.relevant_ids:
            found += 1
            precision_sum += found / rank
    if found == 0:
        return 0.0
    return precision_sum / len(run.relevant_ids)


def mean_average_precision(runs: Sequence[RankedRun]) -> float:
    if not runs:
        raise ValueError("no runs")
    return sum(average_precision(run) for run in runs) / len(runs)


def ranked_metrics(runs: Sequence[RankedRun], ks: Sequence[int]) -> MetricsReport:
    """recall@k and mean precision@k for every k in ``ks``, plus MAP."""
    return MetricsReport(
        n_examples=len(runs),
        recall_at_k={k: recall_at_k(runs, k) for k in ks},
        precision_at_k={k: mean_precision_at_k(runs, k) for k in ks},
        map_score=mean_average_precision(runs),
    )


def exact_match_accuracy(predictions: Sequence[str], golds: Sequence[str]) -> float:
    """Exact-match fraction over normalized option letters.

    Normalization is NFKC + strip + uppercase, so " a" matches "A".
    For free-text answers this is a lower bound on graded accuracy,
    nothing more.
    """
    if len(predictions) != len(golds):
        raise ValueError(f"got {len(predictions)} predictions for {len(golds)} golds")
    if not predictions:
        raise ValueError("no examples")
    matches = sum(
        1
        for pred, gold in zip(predictions, golds)
        if unicodedata.normalize("NFKC", pred).strip().upper()
        == unicodedata.normalize("NFKC", gold).strip().upper()
    )
    return matches / len(predictions)


@dataclass(frozen=True)
class GoldRecord:
    """One line of a gold file; carries titles, relevant ids, or both."""

    id: Union[int, str]
    query: str
    gold_titles: Optional[tuple[str, ...]] = None
    relevant_ids: Optional[tuple[int, ...]] = None


def load_gold(path: Union[str, Path]) -> list[GoldRecord]:
    """Read a gold JSONL file.

    Each line needs "id" plus "gold_titles" (list of strings) and/or
    "relevant_ids" (list of ints); "query" is optional and defaults to
    empty. Line numbers are reported on malformed records.
    """
    records: list[GoldRecord] = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                data = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MalformedRecordError(line_no, f"invalid JSON: {exc.msg}") from exc
            if not isinstance(data, dict) or "id" not in data:
                raise MalformedRecordError(line_no, "record must be an object with an 'id'")
            titles = data.get("gold_titles")
            relevant = data.get("relevant_ids")
            if titles is None and relevant is None:
                raise MalformedRecordError(
                    line_no, "record needs 'gold_titles' or 'relevant_ids'"
                )
            if titles is not None and (
                not isinstance(titles, list) or not all(isinstance(t, str) for t in titles)
            ):
                raise MalformedRecordError(line_no, "'gold_titles' must be a list of strings")
            if relevant is not None and (
                not isinstance(relevant, list)
                or not all(isinstance(r, int) and not isinstance(r, bool) for r in relevant)
            ):
                raise MalformedRecordError(line_no, "'relevant_ids' must be a list of ints")
            query = data.get("query", "")
            if not isinstance(query, str):
                raise MalformedRecordError(line_no, "'query' must be a string")
            records.append(
                GoldRecord(
                    id=data["id"],
                    query=query,
                    gold_titles=tuple(titles) if titles is not None else None,
                    relevant_ids=tuple(relevant) if relevant is not None else None,
                )
            )
    if not records:
        raise EmptyCorpusError(f"no records in {path}")
    return records
