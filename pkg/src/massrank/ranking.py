"""Ranking and two-stage retrieval over dense score matrices.

Rankings sort by score descending with ties broken by ascending candidate
id, so results are deterministic and invariant under any strictly
increasing transform of the scores.  The two-stage path mirrors the usual
retrieve-then-rerank setup: a first-stage matrix proposes a shortlist
(default 20) and a second-stage matrix orders it; candidates outside the
shortlist can never appear in the output.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import InvalidInputError, MissingEntryError

DEFAULT_SHORTLIST = 20


@dataclass(frozen=True)
class ScoreMatrix:
    """Dense query-by-candidate scores.

    Every (query, candidate) combination from the declared lists must be
    present and finite; sparse data is a hard error upstream because
    silently imputed scores would corrupt the bias metrics.
    """

    queries: tuple[str, ...]
    candidates: tuple[str, ...]
    values: np.ndarray

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=np.float64)
        if values.shape != (len(self.queries), len(self.candidates)):
            raise InvalidInputError(
                f"values shape {values.shape} does not match "
                f"{len(self.queries)} queries x {len(self.candidates)} candidates"
            )
        if values.size and not np.all(np.isfinite(values)):
            raise InvalidInputError("score matrix contains a non-finite entry")
        for name, ids in (("query", self.queries), ("candidate", self.candidates)):
            if len(set(ids)) != len(ids):
                raise InvalidInputError(f"duplicate {name} ids in score matrix")
            if any(not isinstance(i, str) or not i for i in ids):
                raise InvalidInputError(f"{name} ids must be non-empty strings")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "_qidx", {q: i for i, q in enumerate(self.queries)})
        object.__setattr__(self, "_cidx", {c: j for j, c in enumerate(self.candidates)})

    @classmethod
    def from_entries(
        cls,
        entries: Mapping[tuple[str, str], float],
        queries: Sequence[str] | None = None,
        candidates: Sequence[str] | None = None,
    ) -> "ScoreMatrix":
        if queries is None:
            queries = sorted({q for q, _ in entries})
        if candidates is None:
            candidates = sorted({c for _, c in entries})
        values = np.empty((len(queries), len(candidates)), dtype=np.float64)
        for i, q in enumerate(queries):
            for j, c in enumerate(candidates):
                try:
                    values[i, j] = entries[(q, c)]
                except KeyError:
                    raise MissingEntryError(
                        f"no score for query={q!r} candidate={c!r} (matrix must be dense)"
                    ) from None
        return cls(tuple(queries), tuple(candidates), values)

    def score(self, query: str, candidate: str) -> float:
        try:
            i = self._qidx[query]  # type: ignore[attr-defined]
        except KeyError:
            raise MissingEntryError(f"unknown query id {query!r}") from None
        try:
            j = self._cidx[candidate]  # type: ignore[attr-defined]
        except KeyError:
            raise MissingEntryError(
                f"no score for query={query!r} candidate={candidate!r}"
            ) from None
        return float(self.values[i, j])

    def has_query(self, query: str) -> bool:
        return query in self._qidx  # type: ignore[attr-defined]


@dataclass(frozen=True)
class Ranking:
    """Candidates for one query, strictly sorted by (score desc, id asc)."""

    query: str
    ordered: tuple[tuple[str, float], ...]

    def ids(self) -> list[str]:
        return [cid for cid, _ in self.ordered]


def rank(
    scores: ScoreMatrix,
    query: str,
    k: int,
    candidates: Iterable[str] | None = None,
) -> Ranking:
    """Top-k candidates for a query, optionally restricted to a pool.

    If k exceeds the candidate count, all candidates are returned.
    """
    if k < 1:
        raise InvalidInputError("k must be >= 1")
    if not scores.has_query(query):
        raise MissingEntryError(f"unknown query id {query!r}")
    pool = list(scores.candidates) if candidates is None else list(candidates)
    scored = [(cid, scores.score(query, cid)) for cid in pool]
    scored.sort(key=lambda item: (-item[1], item[0]))
    return Ranking(query=query, ordered=tuple(scored[:k]))


def two_stage_rerank(
    first: ScoreMatrix,
    second: ScoreMatrix,
    query: str,
    shortlist: int = DEFAULT_SHORTLIST,
    k: int = 1,
    candidates: Iterable[str] | None = None,
) -> Ranking:
    """Shortlist by first-stage scores, then order the subset by the second.

    The output is always a subset of the first-stage top-``shortlist``; a
    missing second-stage score for a shortlisted candidate is an error.
    """
    if shortlist < k:
        raise InvalidInputError(f"shortlist ({shortlist}) must be >= k ({k})")
    stage_one = rank(first, query, shortlist, candidates)
    return rank(second, query, k, stage_one.ids())
