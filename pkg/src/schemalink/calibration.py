"""Entity-type relevance calibration.

Types differ in how predictive they are of the right tables. When training
questions with gold tables exist, each type gets a weight proportional to the
squared area under its table-level recall curve, normalized so the weights sum
to the number of types. An optional entropy-guided adjustment damps keywords
whose match distribution is diffuse; it ships OFF by default because it buys
little in practice.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

from .catalog import EntityType
from .errors import CalibrationError, IndexFileError
from .index import RetrievalHit

WEIGHTS_FORMAT_VERSION = 1
DEFAULT_N_MAX = 50
DEFAULT_TRAINING_SAMPLES = 200
AUC_INTEGRATION = "rectangle_mean"


@dataclass
class RecallCurve:
    """Macro-averaged recall of gold tables among the top N, for N in [1, n_max]."""

    entity_type: EntityType | None
    points: list[float]
    question_count: int


@dataclass
class CalibrationWeights:
    """Per-type score multipliers and the AUC values that produced them."""

    weights: dict[EntityType, float]
    aucs: dict[EntityType, float]
    n_max: int = DEFAULT_N_MAX
    training_sample_count: int = 0

    def weight(self, entity_type: EntityType) -> float:
        return self.weights.get(entity_type, 1.0)

    @classmethod
    def uniform(cls, types: Sequence[EntityType] = ()) -> "CalibrationWeights":
        return cls(weights={t: 1.0 for t in types}, aucs={}, training_sample_count=0)


@dataclass
class EntropyStats:
    """Per-(keyword, type) match distributions and entropies, plus type means."""

    alpha: float
    distributions: dict[tuple[str, EntityType], list[tuple[str, float]]] = field(default_factory=dict)
    entropies: dict[tuple[str, EntityType], float] = field(default_factory=dict)
    mean_entropy: dict[EntityType, float] = field(default_factory=dict)


def recall_curve(
    per_question_rankings: Sequence[tuple[Sequence[str], set[str]]],
    n_max: int,
    entity_type: EntityType | None = None,
) -> RecallCurve:
    """Average per-question recall-at-N over a training sample.

    Each item pairs one ranked table list ("db.table" strings) with that
    question's non-empty gold table set.
    """
    if not per_question_rankings:
        raise CalibrationError("cannot compute a recall curve from zero questions")
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    totals = [0.0] * n_max
    for ranked, gold in per_question_rankings:
        if not gold:
            raise CalibrationError("every training question needs a non-empty gold set")
        found = 0
        in_gold = [table in gold for table in ranked[:n_max]]
        for n in range(n_max):
            if n < len(in_gold) and in_gold[n]:
                found += 1
            totals[n] += found / len(gold)
    count = len(per_question_rankings)
    return RecallCurve(
        entity_type=entity_type,
        points=[total / count for total in totals],
        question_count=count,
    )


def auc(curve: RecallCurve) -> float:
    """Area under the recall curve, normalized to [0, 1] (mean of the points)."""
    if not curve.points:
        raise ValueError("recall curve has no points")
    return sum(curve.points) / len(curve.points)


def entity_type_weights(
    aucs: Mapping[EntityType, float],
    n_max: int = DEFAULT_N_MAX,
    training_sample_count: int = 0,
) -> CalibrationWeights:
    """Weights proportional to squared AUC, normalized to sum to the type count.

    Squaring amplifies differences between types so the consistently
    predictive ones dominate. Raises CalibrationError when every AUC is zero;
    callers should fall back to uniform weights.
    """
    if not aucs:
        raise ValueError("aucs must be non-empty")
    squares = {t: value * value for t, value in aucs.items()}
    denom = sum(squares.values())
    if denom == 0.0:
        raise CalibrationError("all AUC values are zero; calibration is degenerate")
    scale = len(aucs) / denom
    return CalibrationWeights(
        weights={t: square * scale for t, square in squares.items()},
        aucs=dict(aucs),
        n_max=n_max,
        training_sample_count=training_sample_count,
    )


def apply_type_weights(
    hits: Sequence[RetrievalHit], weights: CalibrationWeights | None
) -> list[RetrievalHit]:
    """Scale each hit's calibrated score by its entity type's weight.

    Unknown types keep weight 1.0. Order within a type is preserved (positive
    scaling never reorders). A None weights object means uniform weights.
    """
    if weights is None:
        return list(hits)
    return [
        hit.with_calibrated(hit.calibrated_score * weights.weight(hit.entity_type))
        for hit in hits
    ]


def entropy_stats(hits: Sequence[RetrievalHit], alpha: float) -> EntropyStats:
    """Softmax match distributions and entropies per (keyword, entity type)."""
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    groups: dict[tuple[str, EntityType], list[RetrievalHit]] = {}
    for hit in hits:
        groups.setdefault((hit.query_text, hit.entity_type), []).append(hit)

    stats = EntropyStats(alpha=alpha)
    by_type: dict[EntityType, list[float]] = {}
    for key, group in groups.items():
        scaled = [alpha * hit.raw_score for hit in group]
        peak = max(scaled)
        exps = [math.exp(s - peak) for s in scaled]
        total = sum(exps)
        probs = [e / total for e in exps]
        entropy = -sum(p * math.log(p) for p in probs if p > 0.0)
        stats.distributions[key] = [
            (hit.entity_id, p) for hit, p in zip(group, probs)
        ]
        stats.entropies[key] = entropy
        by_type.setdefault(key[1], []).append(entropy)
    stats.mean_entropy = {
        etype: sum(values) / len(values) for etype, values in by_type.items()
    }
    return stats


def apply_entropy_calibration(
    hits: Sequence[RetrievalHit], alpha: float = 1.0
) -> list[RetrievalHit]:
    """Damp keywords whose matches are diffuse for their entity type.

    Per (keyword, type) group the raw scores define a softmax distribution
    whose entropy measures how focused the keyword is; scores are multiplied
    by sigmoid(alpha * (mean type entropy - group entropy)), so a group at
    exactly the mean entropy is halved.
    """
    stats = entropy_stats(hits, alpha)
    out = []
    for hit in hits:
        entropy = stats.entropies[(hit.query_text, hit.entity_type)]
        mean = stats.mean_entropy[hit.entity_type]
        multiplier = _sigmoid(alpha * (mean - entropy))
        out.append(hit.with_calibrated(hit.raw_score * multiplier))
    return out


def _sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    ex = math.exp(x)
    return ex / (1.0 + ex)


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------

def save_weights(weights: CalibrationWeights, path: str | Path) -> None:
    doc = {
        "version": WEIGHTS_FORMAT_VERSION,
        "n_max": weights.n_max,
        "training_sample_count": weights.training_sample_count,
        "auc_integration": AUC_INTEGRATION,
        "aucs": {t.value: v for t, v in weights.aucs.items()},
        "weights": {t.value: v for t, v in weights.weights.items()},
    }
    Path(path).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


def load_weights(path: str | Path) -> CalibrationWeights:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise IndexFileError(f"cannot read weights file {path}: {exc}") from exc
    if doc.get("version") != WEIGHTS_FORMAT_VERSION:
        raise IndexFileError(
            f"weights file {path} has version {doc.get('version')!r}, "
            f"expected {WEIGHTS_FORMAT_VERSION}"
        )
    return CalibrationWeights(
        weights={EntityType(k): float(v) for k, v in doc["weights"].items()},
        aucs={EntityType(k): float(v) for k, v in doc.get("aucs", {}).items()},
        n_max=int(doc.get("n_max", DEFAULT_N_MAX)),
        training_sample_count=int(doc.get("training_sample_count", 0)),
    )
