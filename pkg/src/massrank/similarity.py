"""Image-text similarity functions.

Four scoring families:

* ``itc_score``      -- cosine similarity of separately-encoded embeddings.
* ``itm_score``      -- matching-classifier probability from a raw logit;
  ``itm_score_vqa`` is the variant that compares yes/no token log-probs.
* ``tl_score``       -- per-token likelihood aggregated over the caption,
  either as a mean of probabilities or a mean of log-probabilities.
* ``mass_score``     -- mean per-token log-ratio of an image-conditional
  against a text-only marginal, i.e. the average pointwise mutual
  information between the image and each token.  Subtracting the marginal
  removes the model's text-only prior from the conditional likelihood.

All functions are pure.  Token aggregation uses compensated summation
(``math.fsum``) so sequences up to ~10^4 tokens lose no meaningful
precision, and everything is computed in 64-bit floats.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    AlignmentError,
    DegenerateVectorError,
    DimensionError,
    EmptySequenceError,
    InvalidInputError,
)

# Log-probabilities may exceed zero by this much, to absorb rounding in
# adapter exports.  Anything larger is rejected.
LOGP_TOLERANCE = 1e-6

SCALE_COSINE = "cosine"
SCALE_PROBABILITY = "probability"
SCALE_PROB_MEAN = "prob-mean"
SCALE_LOGPROB_MEAN = "logprob-mean"
SCALE_LOGRATIO_MEAN = "logratio-mean"

SCALES = frozenset(
    {
        SCALE_COSINE,
        SCALE_PROBABILITY,
        SCALE_PROB_MEAN,
        SCALE_LOGPROB_MEAN,
        SCALE_LOGRATIO_MEAN,
    }
)

# Scales whose values are confined to a fixed interval.
_BOUNDS = {
    SCALE_COSINE: (-1.0, 1.0),
    SCALE_PROBABILITY: (0.0, 1.0),
    SCALE_PROB_MEAN: (0.0, 1.0),
}

TL_MODES = (SCALE_PROB_MEAN, SCALE_LOGPROB_MEAN)


@dataclass(frozen=True)
class ScoreValue:
    """A scalar similarity tagged with the scale it was computed on."""

    value: float
    scale: str

    def __post_init__(self) -> None:
        if self.scale not in SCALES:
            raise InvalidInputError(f"unknown score scale {self.scale!r}")
        if not math.isfinite(self.value):
            raise InvalidInputError(f"score value must be finite, got {self.value!r}")
        bounds = _BOUNDS.get(self.scale)
        if bounds is not None and not (bounds[0] <= self.value <= bounds[1]):
            raise InvalidInputError(
                f"{self.scale} score {self.value!r} outside [{bounds[0]}, {bounds[1]}]"
            )


def as_logprobs(values, *, what: str = "token log-probabilities") -> np.ndarray:
    """Validate and return a float64 array of per-token log-probabilities.

    Entries must be finite and at most ``LOGP_TOLERANCE`` above zero.
    Emptiness is not checked here; each operation enforces its own length
    precondition.
    """
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1:
        raise InvalidInputError(f"{what} must be one-dimensional, got shape {arr.shape}")
    if arr.size and not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{what} contain a non-finite entry")
    if arr.size and float(arr.max()) > LOGP_TOLERANCE:
        raise InvalidInputError(
            f"{what} contain {arr.max()!r} > {LOGP_TOLERANCE} (log of a probability)"
        )
    return arr


def _as_vector(values, what: str) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64).ravel()
    if arr.size == 0:
        raise InvalidInputError(f"{what} is empty")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{what} contains a non-finite entry")
    return arr


def itc_score(image_emb, text_emb) -> ScoreValue:
    """Cosine similarity of an image embedding and a text embedding.

    Raises DimensionError on mismatched dimensions and
    DegenerateVectorError when either vector has zero norm.
    """
    u = _as_vector(image_emb, "image embedding")
    v = _as_vector(text_emb, "text embedding")
    if u.size != v.size:
        raise DimensionError(f"embedding dims differ: {u.size} vs {v.size}")
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        raise DegenerateVectorError("cosine similarity undefined for zero-norm vectors")
    value = float(np.dot(u, v) / (nu * nv))
    # Floating rounding can push |value| a hair past 1.
    value = min(1.0, max(-1.0, value))
    return ScoreValue(value, SCALE_COSINE)


def itm_score(logit: float) -> ScoreValue:
    """Matching probability sigmoid(logit), stable for |logit| up to ~1e3."""
    z = float(logit)
    if not math.isfinite(z):
        raise InvalidInputError(f"ITM logit must be finite, got {z!r}")
    if z >= 0.0:
        value = 1.0 / (1.0 + math.exp(-z))
    else:
        ez = math.exp(z)
        value = ez / (1.0 + ez)
    return ScoreValue(value, SCALE_PROBABILITY)


def itm_score_vqa(logp_yes: float, logp_no: float) -> ScoreValue:
    """Matching probability from yes/no token log-probs.

    Computes exp(lp_yes) / (exp(lp_yes) + exp(lp_no)) in the stable
    sigmoid form, which depends only on the difference lp_yes - lp_no.
    """
    for name, lp in (("logp_yes", logp_yes), ("logp_no", logp_no)):
        lp = float(lp)
        if not math.isfinite(lp):
            raise InvalidInputError(f"{name} must be finite, got {lp!r}")
        if lp > LOGP_TOLERANCE:
            raise InvalidInputError(f"{name} is {lp!r} > {LOGP_TOLERANCE} (log of a probability)")
    return itm_score(float(logp_yes) - float(logp_no))


def tl_score(cond, mode: str) -> ScoreValue:
    """Aggregate per-token conditional log-probs into one likelihood score.

    ``mode`` must be given explicitly: "prob-mean" averages token
    probabilities, "logprob-mean" averages the log-probabilities.  The mode
    is recorded in the returned scale.
    """
    if mode not in TL_MODES:
        raise InvalidInputError(f"tl_score mode must be one of {TL_MODES}, got {mode!r}")
    logp = as_logprobs(cond)
    if logp.size == 0:
        raise EmptySequenceError("tl_score requires at least one token")
    if mode == SCALE_PROB_MEAN:
        value = math.fsum(math.exp(x) for x in logp) / logp.size
        # The +1e-6 logp tolerance could push the mean a hair above 1.
        value = min(1.0, max(0.0, value))
    else:
        value = math.fsum(logp) / logp.size
    return ScoreValue(value, mode)


def mass_score(cond, marginal) -> ScoreValue:
    """Mean per-token log-ratio of conditional over marginal log-probs.

    This is the average pointwise mutual information between the image and
    each token when both inputs are exact; with estimated marginals it is
    the debiased similarity used for re-ranking.
    """
    c = as_logprobs(cond, what="conditional log-probabilities")
    m = as_logprobs(marginal, what="marginal log-probabilities")
    if c.size != m.size:
        raise AlignmentError(f"conditional has {c.size} tokens but marginal has {m.size}")
    if c.size == 0:
        raise EmptySequenceError("mass_score requires at least one token")
    value = math.fsum(ci - mi for ci, mi in zip(c, m)) / c.size
    return ScoreValue(float(value), SCALE_LOGRATIO_MEAN)


def decompose_loglik(cond, marginal) -> tuple[float, float]:
    """Split a sequence log-likelihood into (linguistic, association) parts.

    ``linguistic`` is the text-only log-likelihood (sum of marginal terms);
    ``association`` is what the image adds (sum of per-token log-ratios).
    The two parts sum to the total conditional log-likelihood up to
    floating rounding.
    """
    c = as_logprobs(cond, what="conditional log-probabilities")
    m = as_logprobs(marginal, what="marginal log-probabilities")
    if c.size != m.size:
        raise AlignmentError(f"conditional has {c.size} tokens but marginal has {m.size}")
    linguistic = math.fsum(m)
    association = math.fsum(ci - mi for ci, mi in zip(c, m))
    return linguistic, association
