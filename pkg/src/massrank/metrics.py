"""Evaluation metrics: recall, retrieval gender balance, two-image
two-caption compositionality scores, foil pairwise accuracy, color-bias
statistics, and recall/bias Pareto frontiers.

All comparisons are strict (ties fail), matching the chance baselines the
metrics are calibrated against, and every matrix-consuming metric depends
only on score comparisons, so it is invariant under strictly increasing
transforms.  Aggregation uses exactly-rounded summation (``math.fsum``)
so results are well-defined down to the last bit and can be compared
exactly against independent reference implementations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .errors import EmptyDatasetError, InvalidInputError, MissingEntryError
from .ranking import ScoreMatrix, rank, two_stage_rerank

GENDERS = frozenset({"masculine", "feminine", "neutral", "unknown", "both"})
MIXED_POLICIES = ("both", "neither")
NO_TAG = "No-Tag"
REST_TAG = "Rest"


# ---------------------------------------------------------------------------
# dataset records


@dataclass(frozen=True)
class QueryRecord:
    id: str
    gold: frozenset[str]
    gender: str = "neutral"

    def __post_init__(self) -> None:
        _check_id(self.id, "query id")
        if not self.gold:
            raise InvalidInputError(f"query {self.id!r} has an empty gold set")
        _check_gender(self.gender)


@dataclass(frozen=True)
class CandidateRecord:
    id: str
    gender: str = "neutral"

    def __post_init__(self) -> None:
        _check_id(self.id, "candidate id")
        _check_gender(self.gender)


@dataclass(frozen=True)
class RetrievalDataset:
    """Queries with gold candidates and gender labels on both sides."""

    direction: str
    queries: tuple[QueryRecord, ...]
    candidates: tuple[CandidateRecord, ...]

    def __post_init__(self) -> None:
        if self.direction not in ("text-to-image", "image-to-text"):
            raise InvalidInputError(f"unknown direction {self.direction!r}")
        qids = [q.id for q in self.queries]
        cids = [c.id for c in self.candidates]
        if len(set(qids)) != len(qids):
            raise InvalidInputError("duplicate query ids")
        if len(set(cids)) != len(cids):
            raise InvalidInputError("duplicate candidate ids")
        known = set(cids)
        for q in self.queries:
            stray = q.gold - known
            if stray:
                raise InvalidInputError(f"query {q.id!r} gold ids not in candidates: {sorted(stray)}")

    def candidate_ids(self) -> list[str]:
        return [c.id for c in self.candidates]

    def gender_of(self) -> dict[str, str]:
        return {c.id: c.gender for c in self.candidates}


@dataclass(frozen=True)
class WinogroundSample:
    """Two images and two captions; gold pairing is (i0,c0) and (i1,c1)."""

    id: str
    i0: str
    i1: str
    c0: str
    c1: str
    tags: frozenset[str] = frozenset()

    def __post_init__(self) -> None:
        if self.i0 == self.i1:
            raise InvalidInputError(f"sample {self.id!r}: i0 and i1 must differ")
        if self.c0 == self.c1:
            raise InvalidInputError(f"sample {self.id!r}: c0 and c1 must differ")


@dataclass(frozen=True)
class FoilSample:
    """A true caption paired against a minimally altered foil."""

    image: str
    caption_true: str
    caption_foil: str
    category: str = ""

    def __post_init__(self) -> None:
        if self.caption_true == self.caption_foil:
            raise InvalidInputError("caption_true and caption_foil must differ")


@dataclass(frozen=True)
class ColorSample:
    """Scores for a true grayscale caption and its natural-color foil."""

    image: str
    fruit_type: str
    score_true: float
    score_adv: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.score_true) and math.isfinite(self.score_adv)):
            raise InvalidInputError(f"scores for {self.image!r} must be finite")


@dataclass(frozen=True)
class ParetoPoint:
    label: str
    recall: float
    bias: float

    def __post_init__(self) -> None:
        if not (0.0 <= self.recall <= 1.0):
            raise InvalidInputError(f"recall {self.recall!r} outside [0, 1]")
        if not (-1.0 <= self.bias <= 1.0):
            raise InvalidInputError(f"bias {self.bias!r} outside [-1, 1]")


def _check_id(value: str, what: str) -> None:
    if not isinstance(value, str) or not value:
        raise InvalidInputError(f"{what} must be a non-empty string")


def _check_gender(value: str) -> None:
    if value not in GENDERS:
        raise InvalidInputError(f"unknown gender label {value!r}")


# ---------------------------------------------------------------------------
# retrieval metrics

TwoStage = tuple[ScoreMatrix, int]


def _top_ids(
    scores: ScoreMatrix,
    query: str,
    k: int,
    pool: Sequence[str],
    two_stage: TwoStage | None,
) -> list[str]:
    if two_stage is None:
        return rank(scores, query, k, pool).ids()
    first, shortlist = two_stage
    return two_stage_rerank(first, scores, query, shortlist=shortlist, k=k, candidates=pool).ids()


def recall_at_k(
    scores: ScoreMatrix,
    ds: RetrievalDataset,
    k: int,
    two_stage: TwoStage | None = None,
) -> float:
    """Fraction of queries whose top-k retrieval intersects the gold set."""
    if not ds.queries:
        raise EmptyDatasetError("retrieval dataset has no queries")
    pool = ds.candidate_ids()
    hits = [
        float(any(cid in q.gold for cid in _top_ids(scores, q.id, k, pool, two_stage)))
        for q in ds.queries
    ]
    return math.fsum(hits) / len(hits)


def bias_at_k(
    scores: ScoreMatrix,
    ds: RetrievalDataset,
    k: int,
    absolute: bool = False,
    two_stage: TwoStage | None = None,
    mixed_policy: str = "both",
) -> float:
    """Mean gender skew (N_m - N_f) / (N_m + N_f) among top-k retrievals.

    Queries whose top-k contains no gendered item contribute 0.  Neutral
    and unknown labels count toward neither side; a "both" label counts
    toward both sides or neither, per ``mixed_policy``.  ``absolute``
    averages |skew| instead of the signed value.
    """
    if not ds.queries:
        raise EmptyDatasetError("retrieval dataset has no queries")
    if mixed_policy not in MIXED_POLICIES:
        raise InvalidInputError(f"mixed_policy must be one of {MIXED_POLICIES}")
    pool = ds.candidate_ids()
    gender = ds.gender_of()
    values = []
    for q in ds.queries:
        n_m = n_f = 0
        for cid in _top_ids(scores, q.id, k, pool, two_stage):
            label = gender[cid]
            if label == "masculine":
                n_m += 1
            elif label == "feminine":
                n_f += 1
            elif label == "both" and mixed_policy == "both":
                n_m += 1
                n_f += 1
        f = 0.0 if n_m + n_f == 0 else (n_m - n_f) / (n_m + n_f)
        values.append(abs(f) if absolute else f)
    return math.fsum(values) / len(values)


# ---------------------------------------------------------------------------
# compositionality metrics


def _passes_tag_filter(sample: WinogroundSample, tag_filter: frozenset[str] | None) -> bool:
    if tag_filter is None:
        return True
    if NO_TAG in tag_filter and not sample.tags:
        return True
    return bool(sample.tags & tag_filter)


def winoground_scores(
    scores: ScoreMatrix,
    samples: Iterable[WinogroundSample],
    tag_filter: Iterable[str] | None = None,
) -> dict:
    """Text / image / group pairing accuracy over two-image two-caption sets.

    Text is correct iff each image scores its own caption above the other
    caption; image is correct iff each caption scores its own image above
    the other image; group requires both.  All inequalities are strict, so
    ties fail.  ``tag_filter`` keeps samples sharing a tag with the filter
    set; the special tag "No-Tag" matches exactly the untagged samples.

    Returns fractions plus the integer counts behind them.
    """
    filt = frozenset(tag_filter) if tag_filter is not None else None
    n = text_ok = image_ok = group_ok = 0
    for sample in samples:
        if not _passes_tag_filter(sample, filt):
            continue
        n += 1
        s00 = scores.score(sample.i0, sample.c0)
        s01 = scores.score(sample.i0, sample.c1)
        s10 = scores.score(sample.i1, sample.c0)
        s11 = scores.score(sample.i1, sample.c1)
        text = s00 > s01 and s11 > s10
        image = s00 > s10 and s11 > s01
        text_ok += text
        image_ok += image
        group_ok += text and image
    if n == 0:
        raise EmptyDatasetError("no samples pass the tag filter")
    return {
        "text": text_ok / n,
        "image": image_ok / n,
        "group": group_ok / n,
        "n": n,
        "text_correct": text_ok,
        "image_correct": image_ok,
        "group_correct": group_ok,
    }


def winoground_tag_breakdown(scores: ScoreMatrix, samples: Sequence[WinogroundSample]) -> dict:
    """Full / No-Tag / Rest / per-tag summaries; empty categories skipped."""
    out = {"Full": winoground_scores(scores, samples)}
    tagged = [s for s in samples if s.tags]
    untagged = [s for s in samples if not s.tags]
    if untagged:
        out[NO_TAG] = winoground_scores(scores, samples, tag_filter={NO_TAG})
    if tagged:
        out[REST_TAG] = winoground_scores(scores, tagged)
    for tag in sorted({t for s in samples for t in s.tags}):
        out[tag] = winoground_scores(scores, samples, tag_filter={tag})
    return out


def pairwise_ranking_accuracy(
    scores: ScoreMatrix,
    foils: Iterable[FoilSample],
    category_filter: str | Iterable[str] | None = None,
) -> float:
    """Fraction of foil pairs where the true caption outscores the foil.

    Ties count as incorrect.
    """
    if isinstance(category_filter, str):
        category_filter = {category_filter}
    filt = frozenset(category_filter) if category_filter is not None else None
    n = correct = 0
    for foil in foils:
        if filt is not None and foil.category not in filt:
            continue
        n += 1
        correct += scores.score(foil.image, foil.caption_true) > scores.score(
            foil.image, foil.caption_foil
        )
    if n == 0:
        raise EmptyDatasetError("no foil samples pass the category filter")
    return correct / n


# ---------------------------------------------------------------------------
# color bias


def color_bias_stats(samples: Sequence[ColorSample]) -> dict:
    """Share of samples and of fruit types whose true-minus-adversarial
    score difference is negative (i.e. the language prior wins)."""
    if not samples:
        raise EmptyDatasetError("no color samples")
    diffs_by_type: dict[str, list[float]] = {}
    negative = 0
    for s in samples:
        diff = s.score_true - s.score_adv
        negative += diff < 0.0
        diffs_by_type.setdefault(s.fruit_type, []).append(diff)
    per_type_mean = {
        fruit: math.fsum(diffs) / len(diffs) for fruit, diffs in sorted(diffs_by_type.items())
    }
    biased_types = sum(mean < 0.0 for mean in per_type_mean.values())
    return {
        "biased_sample_ratio": negative / len(samples),
        "biased_type_ratio": biased_types / len(per_type_mean),
        "per_type_mean": per_type_mean,
    }


# ---------------------------------------------------------------------------
# Pareto frontier


def _dominates(p: ParetoPoint, q: ParetoPoint) -> bool:
    better_recall = p.recall >= q.recall
    better_bias = abs(p.bias) <= abs(q.bias)
    strict = p.recall > q.recall or abs(p.bias) < abs(q.bias)
    return better_recall and better_bias and strict


def pareto_frontier(points: Sequence[ParetoPoint]) -> list[ParetoPoint]:
    """Points not dominated in (recall up, |bias| down), deduped by label,
    sorted by recall descending."""
    if not points:
        raise EmptyDatasetError("no Pareto points")
    seen: set[str] = set()
    unique: list[ParetoPoint] = []
    for p in points:
        if p.label not in seen:
            seen.add(p.label)
            unique.append(p)
    frontier = [
        p for p in unique if not any(_dominates(q, p) for q in unique if q is not p)
    ]
    frontier.sort(key=lambda p: (-p.recall, abs(p.bias), p.label))
    return frontier
