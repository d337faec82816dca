"""Dataset records, answer metrics, and published-result consistency checks.

Records are consumed in one canonical JSON-lines schema (one object per
line): ``image`` (path or id), ``question``, ``answer`` (gold),
``answer_type`` ("open" | "closed"), ``dataset``, ``split``
("train" | "val" | "test"), and an optional ``id``.  Converters for the
native benchmark formats live in boxttt.datasets.

Closed questions are scored by normalized exact match; open questions by
keyword recall: the fraction of the gold answer's content words that
appear in the prediction.
"""

from __future__ import annotations

import json
import string
import warnings
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

from .errors import DataError

OPEN = "open"
CLOSED = "closed"
ANSWER_TYPES = (OPEN, CLOSED)
SPLITS = ("train", "val", "test")

# Deliberately small, fixed list: recall should hinge on content words
# ("left", "lobe"), never on glue words.
DEFAULT_STOPWORDS = frozenset(
    "a an the of in on at is are was were be been to and or with for it this that".split()
)

_PUNCT_TABLE = str.maketrans({c: " " for c in string.punctuation})


@dataclass(frozen=True)
class QARecord:
    image: str
    question: str
    answer: str
    answer_type: str
    dataset: str
    split: str
    id: str | None = None

    def __post_init__(self):
        if self.answer_type not in ANSWER_TYPES:
            raise ValueError(
                f"answer_type must be one of {ANSWER_TYPES}, got {self.answer_type!r}"
            )
        if self.split not in SPLITS:
            raise ValueError(f"split must be one of {SPLITS}, got {self.split!r}")
        for name in ("image", "question", "answer"):
            if not getattr(self, name).strip():
                raise ValueError(f"record field {name!r} must be non-empty")

    def to_json(self) -> dict:
        record = {
            "image": self.image,
            "question": self.question,
            "answer": self.answer,
            "answer_type": self.answer_type,
            "dataset": self.dataset,
            "split": self.split,
        }
        if self.id is not None:
            record["id"] = self.id
        return record


_REQUIRED_FIELDS = ("image", "question", "answer", "answer_type", "dataset", "split")


def load_dataset(path: str | Path, dataset: str | None = None) -> list[QARecord]:
    """Read canonical JSON-lines records, reporting errors by line number."""
    path = Path(path)
    records: list[QARecord] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            if not isinstance(raw, dict):
                raise DataError(f"{path}:{lineno}: expected a JSON object")
            missing = [f for f in _REQUIRED_FIELDS if f not in raw]
            if missing:
                raise DataError(
                    f"{path}:{lineno}: missing fields {', '.join(missing)}"
                )
            if dataset is not None and raw["dataset"] != dataset:
                continue
            try:
                record = QARecord(
                    image=str(raw["image"]),
                    question=str(raw["question"]),
                    answer=str(raw["answer"]),
                    answer_type=str(raw["answer_type"]),
                    dataset=str(raw["dataset"]),
                    split=str(raw["split"]),
                    id=None if raw.get("id") is None else str(raw["id"]),
                )
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from exc
            records.append(record)
    if not records:
        warnings.warn(f"no records loaded from {path}", stacklevel=2)
    return records


def save_dataset(path: str | Path, records: Iterable[QARecord]) -> int:
    count = 0
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record.to_json(), separators=(",", ":")) + "\n")
            count += 1
    return count


def normalize_answer(text: str) -> str:
    """Lowercase, trim, and strip terminal punctuation ("Yes." -> "yes")."""
    return text.strip().lower().rstrip(string.punctuation + " ")


def _content_tokens(text: str, stopwords: frozenset[str]) -> list[str]:
    tokens = text.lower().translate(_PUNCT_TABLE).split()
    seen: list[str] = []
    for tok in tokens:
        if tok and tok not in stopwords and tok not in seen:
            seen.append(tok)
    return seen


def closed_accuracy(predictions: Sequence[str], golds: Sequence[str]) -> float:
    """Fraction of normalized exact matches."""
    if len(predictions) != len(golds):
        raise ValueError(
            f"got {len(predictions)} predictions for {len(golds)} golds"
        )
    if not golds:
        raise ValueError("cannot score an empty set of closed questions")
    hits = sum(
        normalize_answer(p) == normalize_answer(g)
        for p, g in zip(predictions, golds)
    )
    return hits / len(golds)


def open_recall(
    prediction: str,
    gold: str,
    stopwords: frozenset[str] = DEFAULT_STOPWORDS,
) -> float:
    """Fraction of gold content words that appear in the prediction.

    When every gold token is a stopword, the full token set is used
    instead so the metric stays defined.
    """
    if not gold.strip():
        raise ValueError("gold answer must be non-empty")
    keywords = _content_tokens(gold, stopwords)
    if not keywords:
        keywords = _content_tokens(gold, frozenset())
    predicted = set(_content_tokens(prediction, frozenset()))
    return sum(k in predicted for k in keywords) / len(keywords)


def mean_open_recall(
    predictions: Sequence[str],
    golds: Sequence[str],
    stopwords: frozenset[str] = DEFAULT_STOPWORDS,
) -> float:
    if len(predictions) != len(golds):
        raise ValueError(
            f"got {len(predictions)} predictions for {len(golds)} golds"
        )
    if not golds:
        raise ValueError("cannot score an empty set of open questions")
    return sum(open_recall(p, g, stopwords) for p, g in zip(predictions, golds)) / len(
        golds
    )


@dataclass(frozen=True)
class MetricReport:
    """Scores for one (dataset, model, condition) cell."""

    dataset: str
    model: str
    condition: str
    open_recall: float | None
    closed_accuracy: float | None
    open_count: int
    closed_count: int

    def __post_init__(self):
        for name in ("open_recall", "closed_accuracy"):
            value = getattr(self, name)
            if value is not None and not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {value}")

    def to_json(self) -> dict:
        return {
            "dataset": self.dataset,
            "model": self.model,
            "condition": self.condition,
            "open_recall": self.open_recall,
            "closed_accuracy": self.closed_accuracy,
            "open_count": self.open_count,
            "closed_count": self.closed_count,
        }


def compute_report(
    records: Sequence[QARecord],
    predictions: Sequence[str],
    model: str,
    condition: str,
    stopwords: frozenset[str] = DEFAULT_STOPWORDS,
) -> MetricReport:
    """Score predictions against their records, split by answer type."""
    if len(records) != len(predictions):
        raise ValueError(
            f"got {len(predictions)} predictions for {len(records)} records"
        )
    if not records:
        raise ValueError("cannot score an empty record list")
    datasets = sorted({r.dataset for r in records})
    dataset = datasets[0] if len(datasets) == 1 else "+".join(datasets)
    open_pairs = [(p, r.answer) for p, r in zip(predictions, records) if r.answer_type == OPEN]
    closed_pairs = [
        (p, r.answer) for p, r in zip(predictions, records) if r.answer_type == CLOSED
    ]
    recall = None
    if open_pairs:
        preds, golds = zip(*open_pairs)
        recall = mean_open_recall(preds, golds, stopwords)
    accuracy = None
    if closed_pairs:
        preds, golds = zip(*closed_pairs)
        accuracy = closed_accuracy(preds, golds)
    return MetricReport(
        dataset=dataset,
        model=model,
        condition=condition,
        open_recall=recall,
        closed_accuracy=accuracy,
        open_count=len(open_pairs),
        closed_count=len(closed_pairs),
    )


def dataset_statistics(records: Sequence[QARecord]) -> dict:
    """Per-split counts: images, QA pairs, open, closed."""
    stats: dict[str, dict] = {}
    for record in records:
        bucket = stats.setdefault(
            record.split, {"images": set(), "qa": 0, "open": 0, "closed": 0}
        )
        bucket["images"].add(record.image)
        bucket["qa"] += 1
        bucket[record.answer_type] += 1
    return {
        split: {
            "images": len(bucket["images"]),
            "qa": bucket["qa"],
            "open": bucket["open"],
            "closed": bucket["closed"],
        }
        for split, bucket in sorted(stats.items())
    }


@dataclass(frozen=True)
class CellDelta:
    """One native-vs-adapted comparison from the published transcription."""

    model: str
    dataset: str
    metric: str
    source: str
    native: float
    adapted: float

    @property
    def delta(self) -> float:
        return round(self.adapted - self.native, 2)

    def to_json(self) -> dict:
        return {
            "model": self.model,
            "dataset": self.dataset,
            "metric": self.metric,
            "source": self.source,
            "native": self.native,
            "adapted": self.adapted,
            "delta": self.delta,
        }


@dataclass(frozen=True)
class TableCheck:
    deltas: tuple[CellDelta, ...]
    problems: tuple[str, ...]

    @property
    def ok(self) -> bool:
        return not self.problems


def load_published_results(path: str | Path | None = None) -> dict:
    """Load the transcription of the reported benchmark tables."""
    if path is not None:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    with resources.files("boxttt.data").joinpath("published_results.json").open(
        "r", encoding="utf-8"
    ) as fh:
        return json.load(fh)


def check_result_table(results: dict | None = None) -> TableCheck:
    """Cross-check the transcribed result tables.

    Produces one delta per (model, dataset, metric) cell pair — the main
    grid plus the full-vs-native ablation rows — and verifies every
    arithmetic claim recorded alongside the tables.  Missing cells and
    failed claims are reported as problems rather than raised.
    """
    if results is None:
        results = load_published_results()
    deltas: list[CellDelta] = []
    problems: list[str] = []

    for model, per_dataset in results.get("main_results", {}).items():
        for dataset, metrics in per_dataset.items():
            for metric in ("open", "closed"):
                cell = metrics.get(metric)
                if cell is None or "native" not in cell or "adapted" not in cell:
                    problems.append(f"main_results[{model}][{dataset}][{metric}]: missing")
                    continue
                deltas.append(
                    CellDelta(
                        model=model,
                        dataset=dataset,
                        metric=metric,
                        source="main",
                        native=float(cell["native"]),
                        adapted=float(cell["adapted"]),
                    )
                )

    for model, rows in results.get("ablation", {}).items():
        by_config = {row["config"]: row for row in rows}
        missing = {"full", "native"} - set(by_config)
        if missing:
            problems.append(f"ablation[{model}]: missing configs {sorted(missing)}")
            continue
        for metric in ("open", "closed"):
            deltas.append(
                CellDelta(
                    model=model,
                    dataset=results.get("ablation_dataset", "vqa-rad"),
                    metric=metric,
                    source="ablation:full-vs-native",
                    native=float(by_config["native"][metric]),
                    adapted=float(by_config["full"][metric]),
                )
            )

    lookup = {
        (d.model, d.dataset, d.metric, d.source): d for d in deltas
    }
    for claim in results.get("claims", []):
        kind = claim.get("kind")
        if kind == "delta":
            key = (claim["model"], claim["dataset"], claim["metric"], claim.get("source", "main"))
            cell = lookup.get(key)
            if cell is None:
                problems.append(f"claim {claim['name']}: cell {key} missing")
            elif abs(cell.delta - claim["value"]) > claim.get("tolerance", 0.005):
                problems.append(
                    f"claim {claim['name']}: recomputed delta {cell.delta} "
                    f"!= recorded {claim['value']}"
                )
        elif kind == "mean-delta":
            cells = [
                d
                for d in deltas
                if d.model == claim["model"]
                and d.metric == claim["metric"]
                and d.source == "main"
            ]
            if not cells:
                problems.append(f"claim {claim['name']}: no cells for {claim['model']}")
                continue
            mean = sum(d.delta for d in cells) / len(cells)
            if abs(mean - claim["value"]) > claim.get("tolerance", 0.005):
                problems.append(
                    f"claim {claim['name']}: recomputed mean {mean:.4f} "
                    f"!= recorded {claim['value']}"
                )
        elif kind == "ablation-margin":
            rows = {r["config"]: r for r in results.get("ablation", {}).get(claim["model"], [])}
            if claim["config_a"] not in rows or claim["config_b"] not in rows:
                problems.append(f"claim {claim['name']}: ablation rows missing")
                continue
            margin = round(
                rows[claim["config_a"]][claim["metric"]]
                - rows[claim["config_b"]][claim["metric"]],
                2,
            )
            if abs(margin - claim["value"]) > claim.get("tolerance", 0.005):
                problems.append(
                    f"claim {claim['name']}: recomputed margin {margin} "
                    f"!= recorded {claim['value']}"
                )
        else:
            problems.append(f"claim {claim.get('name', '?')}: unknown kind {kind!r}")

    return TableCheck(deltas=tuple(deltas), problems=tuple(problems))


def check_split_statistics(
    records: Sequence[QARecord],
    dataset: str,
    split: str,
    results: dict | None = None,
) -> list[str]:
    """Compare ingested split counts with the recorded dataset statistics."""
    if results is None:
        results = load_published_results()
    expected = results.get("dataset_statistics", {}).get(dataset, {}).get(split)
    if expected is None:
        return [f"no recorded statistics for {dataset}/{split}"]
    actual = dataset_statistics([r for r in records if r.dataset == dataset]).get(split)
    if actual is None:
        return [f"no ingested records for {dataset}/{split}"]
    problems = []
    for key in ("images", "qa", "open", "closed"):
        if key in expected and actual[key] != expected[key]:
            problems.append(
                f"{dataset}/{split} {key}: ingested {actual[key]}, "
                f"recorded {expected[key]}"
            )
    return problems
