"""Per-token marginal log-likelihood estimation.

The debiased score needs log p(x_t | x_<t), which a conditional captioning
model never exposes directly.  Three estimators are provided:

* ``null-image``      -- read the table row conditioned on the reserved
  "null" image (the adapter renders it as a black-filled input);
* ``mc-avg-log``      -- position-wise arithmetic mean of log-conditionals
  over sampled images, exactly the printed Monte-Carlo form;
* ``mc-log-mean-exp`` -- position-wise log of the (weighted) mean of
  probabilities, the mathematically consistent mixture estimate.  The two
  MC estimators differ by Jensen's inequality: avg-log <= log-mean-exp.

Sampling draws uniformly from a table's image pool, without replacement
while the pool suffices, seeded by a counter-based RNG split per caption
so results do not depend on scheduling order.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .dataio import NULL_IMAGE_ID, ConditionalTable
from .errors import (
    AlignmentError,
    EmptySampleError,
    InvalidInputError,
    MissingEntryError,
    WeightError,
)
from .similarity import as_logprobs

METHOD_NULL = "null-image"
METHOD_MC_AVG_LOG = "mc-avg-log"
METHOD_MC_LOG_MEAN_EXP = "mc-log-mean-exp"
METHODS = (METHOD_NULL, METHOD_MC_AVG_LOG, METHOD_MC_LOG_MEAN_EXP)

WEIGHT_SUM_TOLERANCE = 1e-9


@dataclass(frozen=True)
class MarginalEstimate:
    """A per-token marginal estimate plus how it was produced."""

    logp: np.ndarray
    method: str
    n_samples: int
    seed: int

    def __post_init__(self) -> None:
        if self.method not in METHODS:
            raise InvalidInputError(f"unknown marginal method {self.method!r}")
        if self.n_samples < 1:
            raise InvalidInputError("n_samples must be >= 1")


def null_marginal(table: ConditionalTable, text: str) -> MarginalEstimate:
    """The stored null-image conditional, verbatim."""
    if (NULL_IMAGE_ID, text) not in table.entries:
        raise MissingEntryError(f"table has no null-image entry for text id {text!r}")
    logp = np.array(table.conditional(NULL_IMAGE_ID, text), dtype=np.float64, copy=True)
    return MarginalEstimate(logp=logp, method=METHOD_NULL, n_samples=1, seed=0)


def _stack_samples(samples) -> np.ndarray:
    rows = [as_logprobs(s, what="sample log-probabilities") for s in samples]
    if not rows:
        raise EmptySampleError("at least one sample is required")
    length = rows[0].size
    for i, row in enumerate(rows):
        if row.size != length:
            raise AlignmentError(f"sample {i} has length {row.size}, expected {length}")
    if length == 0:
        raise EmptySampleError("samples must contain at least one token")
    return np.vstack(rows)


def mc_marginal_avg_log(samples, *, seed: int = 0) -> MarginalEstimate:
    """Position-wise mean of log-probabilities over the samples."""
    stacked = _stack_samples(samples)
    return MarginalEstimate(
        logp=stacked.mean(axis=0),
        method=METHOD_MC_AVG_LOG,
        n_samples=stacked.shape[0],
        seed=seed,
    )


def mc_marginal_log_mean_exp(samples, prior_weights=None, *, seed: int = 0) -> MarginalEstimate:
    """Position-wise log of the weighted mean of probabilities.

    Uniform weights when none are given; explicit weights must be positive
    and sum to 1 within 1e-9.
    """
    stacked = _stack_samples(samples)
    n = stacked.shape[0]
    if prior_weights is None:
        logp = logsumexp(stacked, axis=0) - np.log(n)
    else:
        w = np.asarray(prior_weights, dtype=np.float64)
        if w.ndim != 1 or w.size != n:
            raise WeightError(f"expected {n} weights, got shape {w.shape}")
        if not np.all(np.isfinite(w)) or np.any(w <= 0.0):
            raise WeightError("weights must be finite and strictly positive")
        if abs(float(w.sum()) - 1.0) > WEIGHT_SUM_TOLERANCE:
            raise WeightError(f"weights sum to {w.sum()!r}, expected 1 within {WEIGHT_SUM_TOLERANCE}")
        logp = logsumexp(stacked, axis=0, b=w[:, None])
    return MarginalEstimate(
        logp=np.asarray(logp, dtype=np.float64),
        method=METHOD_MC_LOG_MEAN_EXP,
        n_samples=n,
        seed=seed,
    )


def caption_rng(master_seed: int, text: str) -> np.random.Generator:
    """A counter-based RNG split deterministically per caption.

    The key mixes the master seed with a hash of the caption id, so the
    stream is a pure function of (seed, caption) and independent of the
    order in which captions are processed.
    """
    digest = hashlib.sha256(f"{master_seed}:{text}".encode("utf-8")).digest()
    key = int.from_bytes(digest[:16], "big")
    return np.random.Generator(np.random.Philox(key=key))


def draw_images(pool: list[str], n: int, rng: np.random.Generator) -> list[str]:
    """Uniform draw of image ids: without replacement while the pool lasts."""
    if not pool:
        raise EmptySampleError("image pool is empty")
    if n < 1:
        raise InvalidInputError("sample count must be >= 1")
    replace = n > len(pool)
    picked = rng.choice(len(pool), size=n, replace=replace)
    return [pool[int(i)] for i in picked]


def sample_marginal(
    table: ConditionalTable,
    text: str,
    method: str,
    n_samples: int,
    seed: int,
) -> MarginalEstimate:
    """Estimate the marginal for one caption from a conditional table.

    ``null-image`` ignores ``n_samples`` and ``seed``.  The MC methods draw
    from the table's non-null image pool and require a conditional row for
    every drawn (image, text) pair.
    """
    if method == METHOD_NULL:
        return null_marginal(table, text)
    if method not in (METHOD_MC_AVG_LOG, METHOD_MC_LOG_MEAN_EXP):
        raise InvalidInputError(f"unknown marginal method {method!r}")
    pool = table.image_ids(include_null=False)
    rng = caption_rng(seed, text)
    drawn = draw_images(pool, n_samples, rng)
    samples = [table.conditional(image, text) for image in drawn]
    if method == METHOD_MC_AVG_LOG:
        return mc_marginal_avg_log(samples, seed=seed)
    return mc_marginal_log_mean_exp(samples, seed=seed)
