"""Exactly enumerable synthetic conditional language models.

A ToyModel stores an explicit next-token distribution for every reachable
prefix under every image, so conditionals, marginals, and per-token
log-ratios can be computed exactly by enumeration.  These models are the
ground truth against which the scoring and estimation paths are verified.

Two constructions matter beyond hand-built fixtures:

* ``random_model`` draws dense Dirichlet rows for property tests;
* ``make_biased_family`` builds pairs of images and captions where the
  mean-probability token-likelihood score provably prefers the caption
  favored by the language prior while the exact per-token log-ratio
  prefers the caption that matches the image.  This reproduces, at toy
  scale, the failure mode the debiased score exists to fix.

Exported tables place the enumerated marginal under the reserved "null"
image id (null-by-construction), so the null-image scoring path can be
tested for exact agreement with per-token mutual information.  How well a
real model's black-image conditional approximates its true marginal is an
empirical question outside this oracle's scope.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dataio import NULL_IMAGE_ID, ConditionalTable, TableEntry
from .errors import ConstructionError, InvalidInputError, ModelDomainError
from .metrics import FoilSample

ROW_SUM_TOLERANCE = 1e-12
MAX_VOCAB = 32
MAX_IMAGES = 16
MAX_LEN = 8

DEFAULT_END_TOKEN = "</s>"

# make_biased_family is infeasible for weak priors (see the construction
# notes in that function); below this strength we refuse outright.
MIN_PRIOR_STRENGTH = 0.6

Prefix = tuple[str, ...]


@dataclass(frozen=True)
class ToyModel:
    """A fully tabulated conditional language model.

    ``transitions`` maps each conditioning id to {prefix: probability row
    over vocab}.  Conditioning ids are the ``images`` plus, optionally,
    the reserved "null" id: a designated text-only conditioning that never
    participates in the prior or the marginal mixture.
    """

    vocab: tuple[str, ...]
    end_token: str
    images: tuple[str, ...]
    prior: np.ndarray
    transitions: dict[str, dict[Prefix, np.ndarray]]
    max_len: int

    def __post_init__(self) -> None:
        if not (1 <= len(self.vocab) <= MAX_VOCAB):
            raise InvalidInputError(f"vocab size must be in [1, {MAX_VOCAB}]")
        if len(set(self.vocab)) != len(self.vocab):
            raise InvalidInputError("vocab tokens must be unique")
        if self.end_token not in self.vocab:
            raise InvalidInputError("end token must be part of the vocab")
        if not (1 <= len(self.images) <= MAX_IMAGES):
            raise InvalidInputError(f"image count must be in [1, {MAX_IMAGES}]")
        if len(set(self.images)) != len(self.images):
            raise InvalidInputError("image ids must be unique")
        if NULL_IMAGE_ID in self.images:
            raise InvalidInputError(
                f"{NULL_IMAGE_ID!r} may appear in transitions but not in the image list"
            )
        if not (1 <= self.max_len <= MAX_LEN):
            raise InvalidInputError(f"max_len must be in [1, {MAX_LEN}]")
        prior = np.asarray(self.prior, dtype=np.float64)
        if prior.shape != (len(self.images),):
            raise InvalidInputError("prior length must match the image count")
        if np.any(prior < 0.0) or abs(float(prior.sum()) - 1.0) > ROW_SUM_TOLERANCE:
            raise InvalidInputError("prior must be nonnegative and sum to 1")
        object.__setattr__(self, "prior", prior)
        object.__setattr__(self, "_index", {tok: i for i, tok in enumerate(self.vocab)})
        extra = set(self.transitions) - set(self.images) - {NULL_IMAGE_ID}
        if extra:
            raise InvalidInputError(f"transitions for unknown conditioning ids {sorted(extra)}")
        for image in self.images:
            if image not in self.transitions:
                raise InvalidInputError(f"image {image!r} has no transition table")
        for image, rows in self.transitions.items():
            self._validate_rows(image, rows)

    def _validate_rows(self, image: str, rows: dict[Prefix, np.ndarray]) -> None:
        for prefix, row in rows.items():
            arr = np.asarray(row, dtype=np.float64)
            if arr.shape != (len(self.vocab),):
                raise InvalidInputError(
                    f"{image!r} prefix {prefix!r}: row length {arr.shape} != vocab size"
                )
            if np.any(arr < 0.0) or abs(float(arr.sum()) - 1.0) > ROW_SUM_TOLERANCE:
                raise InvalidInputError(f"{image!r} prefix {prefix!r}: row must sum to 1")
            rows[prefix] = arr
        # Every reachable (positive-probability, end-free) prefix shorter
        # than max_len needs a row.
        frontier: list[Prefix] = [()]
        while frontier:
            prefix = frontier.pop()
            if prefix not in rows:
                raise ModelDomainError(f"{image!r}: missing row for reachable prefix {prefix!r}")
            if len(prefix) + 1 >= self.max_len:
                continue
            row = rows[prefix]
            for tok, p in zip(self.vocab, row):
                if p > 0.0 and tok != self.end_token:
                    frontier.append(prefix + (tok,))

    def token_index(self, token: str) -> int:
        try:
            return self._index[token]  # type: ignore[attr-defined]
        except KeyError:
            raise ModelDomainError(f"unknown token {token!r}") from None

    def conditioning_ids(self) -> list[str]:
        return sorted(self.transitions)


def _check_text(model: ToyModel, text) -> tuple[str, ...]:
    tokens = tuple(text)
    if not tokens:
        raise ModelDomainError("text must contain at least one token")
    if len(tokens) > model.max_len:
        raise ModelDomainError(f"text length {len(tokens)} exceeds max_len {model.max_len}")
    for tok in tokens:
        model.token_index(tok)
    return tokens


def _step_prob(model: ToyModel, rows: dict[Prefix, np.ndarray], prefix: Prefix, token: str) -> float:
    """One next-token probability; the end token is absorbing.

    Once the end token has been emitted the process repeats it with
    probability 1, which makes the model a proper distribution over
    length-k token strings for every k (the normalization-by-enumeration
    invariant holds literally).
    """
    if prefix and prefix[-1] == model.end_token:
        return 1.0 if token == model.end_token else 0.0
    row = rows.get(prefix)
    if row is None:
        raise ModelDomainError(f"no transition row for prefix {prefix!r}")
    return float(row[model.token_index(token)])


def exact_conditional(model: ToyModel, image: str, text) -> np.ndarray:
    """Per-token log p(x_t | x_<t, image), read from the transition rows."""
    if image not in model.transitions:
        raise ModelDomainError(f"unknown image {image!r}")
    tokens = _check_text(model, text)
    rows = model.transitions[image]
    out = np.empty(len(tokens), dtype=np.float64)
    for t, tok in enumerate(tokens):
        prefix = tokens[:t]
        try:
            p = _step_prob(model, rows, prefix, tok)
        except ModelDomainError:
            raise ModelDomainError(
                f"image {image!r}: no transition row for prefix {prefix!r}"
            ) from None
        if p <= 0.0:
            raise ModelDomainError(
                f"image {image!r}: token {tok!r} has zero probability after {prefix!r}"
            )
        out[t] = math.log(p)
    return out


def exact_marginal(model: ToyModel, text) -> np.ndarray:
    """Per-token log p(x_t | x_<t) by exact posterior-weighted enumeration.

    Position t mixes the image conditionals with weights proportional to
    prior(c) * p(x_<t | c); the designated "null" conditioning, if any, is
    never part of the mixture.
    """
    tokens = _check_text(model, text)
    weights = model.prior.copy()
    out = np.empty(len(tokens), dtype=np.float64)
    for t, tok in enumerate(tokens):
        prefix = tokens[:t]
        total = float(weights.sum())
        if total <= 0.0:
            raise ModelDomainError(f"prefix {prefix!r} has zero probability under every image")
        step = np.zeros(len(model.images), dtype=np.float64)
        for i, image in enumerate(model.images):
            if weights[i] <= 0.0:
                continue
            step[i] = _step_prob(model, model.transitions[image], prefix, tok)
        mixed = float(np.dot(weights, step)) / total
        if mixed <= 0.0:
            raise ModelDomainError(f"token {tok!r} has zero marginal probability after {prefix!r}")
        out[t] = math.log(mixed)
        weights = weights * step
    return out


def exact_pmi(model: ToyModel, image: str, text) -> float:
    """Mean per-token log-ratio of conditional over marginal; exact."""
    cond = exact_conditional(model, image, text)
    marg = exact_marginal(model, text)
    return math.fsum(c - m for c, m in zip(cond, marg)) / cond.size


def sequence_logprob(model: ToyModel, image: str, text) -> float:
    """Total conditional log-likelihood of the sequence under one image."""
    return math.fsum(exact_conditional(model, image, text))


# ---------------------------------------------------------------------------
# export


def _text_embedding(model: ToyModel, tokens: tuple[str, ...]) -> np.ndarray:
    """Mean of one-hot token vectors; unit L1 mass, dimension |vocab|."""
    vec = np.zeros(len(model.vocab), dtype=np.float64)
    for tok in tokens:
        vec[model.token_index(tok)] += 1.0
    return vec / len(tokens)


def export_tables(
    model: ToyModel,
    captions,
    *,
    text_ids=None,
    null_source: str = "exact-marginal",
) -> ConditionalTable:
    """Materialize a conditional table for every (image, caption) pair.

    The reserved "null" row per caption is the enumerated marginal by
    default (null-by-construction); ``null_source="model"`` instead
    exports the model's designated "null" conditioning, which lets tests
    mimic an imperfect black-image stand-in.

    Embeddings and matching logits are synthesized deterministically so
    the cosine and classifier score paths have real inputs:
    image embedding = first transition row; text embedding = mean one-hot
    of the caption tokens; logit = total conditional log-likelihood minus
    the total marginal log-likelihood.
    """
    captions = [tuple(c) for c in captions]
    if text_ids is None:
        text_ids = [f"c{i:03d}" for i in range(len(captions))]
    text_ids = list(text_ids)
    if len(text_ids) != len(captions):
        raise InvalidInputError("text_ids must align one-to-one with captions")
    if len(set(text_ids)) != len(text_ids):
        raise InvalidInputError("text_ids must be unique")
    if null_source not in ("exact-marginal", "model"):
        raise InvalidInputError(f"unknown null_source {null_source!r}")
    if null_source == "model" and NULL_IMAGE_ID not in model.transitions:
        raise InvalidInputError('null_source="model" requires a designated "null" conditioning')

    table = ConditionalTable()
    for image in model.images:
        table.embeddings[image] = np.array(model.transitions[image][()], dtype=np.float64)
    for tid, tokens in zip(text_ids, captions):
        table.embeddings[tid] = _text_embedding(model, tokens)
        marg = exact_marginal(model, tokens)
        if null_source == "model":
            null_row = exact_conditional(model, NULL_IMAGE_ID, tokens)
        else:
            null_row = marg
        table.entries[(NULL_IMAGE_ID, tid)] = TableEntry(tokens, np.asarray(null_row))
        marg_total = math.fsum(marg)
        for image in model.images:
            cond = exact_conditional(model, image, tokens)
            table.entries[(image, tid)] = TableEntry(tokens, cond)
            table.itm[(image, tid)] = math.fsum(cond) - marg_total
    return table.validate()


def with_designated_null(model: ToyModel) -> ToyModel:
    """Attach a "null" conditioning whose rows are the enumerated marginal.

    The null rows mix the image rows with the exact prefix posterior, so
    the designated null conditional reproduces ``exact_marginal`` for
    every in-support text.  This models a perfect black-image stand-in;
    tests can perturb the rows to model an imperfect one.
    """
    if NULL_IMAGE_ID in model.transitions:
        raise InvalidInputError("model already has a designated null conditioning")
    null_rows: dict[Prefix, np.ndarray] = {}
    frontier: list[tuple[Prefix, np.ndarray]] = [((), model.prior.copy())]
    while frontier:
        prefix, weights = frontier.pop()
        total = float(weights.sum())
        if total <= 0.0:
            continue
        mixed = np.zeros(len(model.vocab), dtype=np.float64)
        for i, image in enumerate(model.images):
            if weights[i] > 0.0:
                mixed += weights[i] * model.transitions[image][prefix]
        mixed /= mixed.sum()  # keep the row sum exactly normalized
        null_rows[prefix] = mixed
        if len(prefix) + 1 >= model.max_len:
            continue
        for j, tok in enumerate(model.vocab):
            if tok == model.end_token or mixed[j] <= 0.0:
                continue
            step = np.array(
                [
                    float(model.transitions[image][prefix][j]) if weights[i] > 0.0 else 0.0
                    for i, image in enumerate(model.images)
                ]
            )
            frontier.append((prefix + (tok,), weights * step))
    transitions = {image: dict(rows) for image, rows in model.transitions.items()}
    transitions[NULL_IMAGE_ID] = null_rows
    return ToyModel(
        vocab=model.vocab,
        end_token=model.end_token,
        images=model.images,
        prior=model.prior.copy(),
        transitions=transitions,
        max_len=model.max_len,
    )


# ---------------------------------------------------------------------------
# random models


def _token_names(vocab_size: int, end_token: str) -> tuple[str, ...]:
    return tuple(f"w{i:02d}" for i in range(vocab_size - 1)) + (end_token,)


def random_model(
    n_images: int,
    vocab_size: int,
    max_len: int,
    seed: int,
    *,
    concentration: float = 1.0,
    end_token: str = DEFAULT_END_TOKEN,
) -> ToyModel:
    """A dense random model: every row Dirichlet, every token positive.

    Deterministic in ``seed`` (counter-based RNG).  Row probabilities are
    floored at 1e-9 and renormalized so every in-vocab continuation stays
    strictly inside the support.
    """
    if vocab_size < 2:
        raise InvalidInputError("vocab_size must be >= 2 (one token plus the end token)")
    rng = np.random.Generator(np.random.Philox(key=seed))
    vocab = _token_names(vocab_size, end_token)
    images = tuple(f"img{i:02d}" for i in range(n_images))

    def fresh_row() -> np.ndarray:
        row = rng.dirichlet(np.full(vocab_size, concentration))
        row = np.maximum(row, 1e-9)
        return row / row.sum()

    transitions: dict[str, dict[Prefix, np.ndarray]] = {}
    non_end = [tok for tok in vocab if tok != end_token]
    for image in images:
        rows: dict[Prefix, np.ndarray] = {}
        frontier: list[Prefix] = [()]
        while frontier:
            prefix = frontier.pop()
            rows[prefix] = fresh_row()
            if len(prefix) + 1 < max_len:
                frontier.extend(prefix + (tok,) for tok in non_end)
        transitions[image] = rows

    prior = np.full(n_images, 1.0 / n_images)
    return ToyModel(
        vocab=vocab,
        end_token=end_token,
        images=images,
        prior=prior,
        transitions=transitions,
        max_len=max_len,
    )


def sample_texts(model: ToyModel, n: int, seed: int) -> list[tuple[str, ...]]:
    """Sample caption token sequences from the model's own distribution.

    Walks are image-mixed (image drawn from the prior), stop at the end
    token or max_len, and are deduplicated best-effort.
    """
    rng = np.random.Generator(np.random.Philox(key=seed ^ 0x5EED))
    out: list[tuple[str, ...]] = []
    seen = set()
    attempts = 0
    while len(out) < n and attempts < 50 * n:
        attempts += 1
        image = model.images[int(rng.choice(len(model.images), p=model.prior))]
        rows = model.transitions[image]
        tokens: list[str] = []
        while len(tokens) < model.max_len:
            row = rows[tuple(tokens)]
            tok = model.vocab[int(rng.choice(len(model.vocab), p=row / row.sum()))]
            tokens.append(tok)
            if tok == model.end_token:
                break
        key = tuple(tokens)
        if key not in seen or attempts > 10 * n:
            seen.add(key)
            out.append(key)
    return out


# ---------------------------------------------------------------------------
# biased families


@dataclass(frozen=True)
class BiasedFamilySpec:
    """Parameters for the prior-versus-image foil construction."""

    prior_strength: float
    n_instances: int
    seed: int

    def __post_init__(self) -> None:
        if not (0.0 < self.prior_strength < 1.0):
            raise InvalidInputError("prior_strength must lie strictly between 0 and 1")
        if self.n_instances < 1:
            raise InvalidInputError("n_instances must be >= 1")


FAMILY_CATEGORY = "biased-family"

# Token names inside every family instance.  Caption A rides the language
# prior; caption B matches the second image.
_A1, _A2, _B1, _B2 = "a1", "a2", "b1", "b2"
FAMILY_CAPTION_A = (_A1, _A2)
FAMILY_CAPTION_B = (_B1, _B2)


def make_biased_family(spec: BiasedFamilySpec) -> list[tuple[ToyModel, FoilSample]]:
    """Instances where mean token probability and exact PMI disagree.

    Construction (s = prior_strength, per instance jitters eps_a, eps_b, h):

    * both images share the first-token row: p(a1) = s, p(b1) = 0.9(1-s),
      remainder on the end token -- the prior pushes a1 regardless of image;
    * image A continues caption A strongly (p(a2|a1) = s) and caption B
      weakly (eps_b); image B continues caption A weakly (eps_a) and
      caption B strongly (h).

    For image B this yields, exactly:

    * TL prob-mean prefers A   iff  s + eps_a > 0.9(1-s) + h;
    * sequence likelihood and mean PMI prefer B (the marginal at the shared
      first position cancels, and 2h/(eps_b+h) > 1 > 2*eps_a/(s+eps_a)).

    h is drawn inside the open interval where both hold with margin; the
    outcome is re-verified by enumeration and a ConstructionError is raised
    if the margins cannot be met (prior_strength < 0.6 is refused outright:
    the TL-flip interval for h closes as 1.9 s - 0.9 approaches zero).
    """
    s = spec.prior_strength
    if s < MIN_PRIOR_STRENGTH:
        raise ConstructionError(
            f"prior_strength {s} below the documented cutoff {MIN_PRIOR_STRENGTH}; "
            "the mean-probability flip is not constructible with useful margins"
        )
    vocab = (_A1, _A2, _B1, _B2, DEFAULT_END_TOKEN)
    out: list[tuple[ToyModel, FoilSample]] = []
    for idx in range(spec.n_instances):
        rng = np.random.Generator(np.random.Philox(key=(spec.seed << 20) ^ idx))
        eps_a = float(rng.uniform(0.01, 0.03))
        eps_b = float(rng.uniform(0.005, 0.02))
        h_max = 1.9 * s - 0.9 + eps_a - 0.02
        h_min = max(1.5 * s * eps_a / (0.9 * (1.0 - s)), 2.0 * eps_b)
        if not (h_min < h_max <= 0.98):
            raise ConstructionError(
                f"instance {idx}: no feasible continuation strength in "
                f"({h_min:.4f}, {h_max:.4f}) for prior_strength {s}"
            )
        h = float(h_min + rng.uniform(0.25, 0.75) * (h_max - h_min))

        prefix_id = f"fam{idx:04d}"
        img_a, img_b = f"{prefix_id}-imgA", f"{prefix_id}-imgB"
        first_row = _row(vocab, {_A1: s, _B1: 0.9 * (1.0 - s)})
        transitions = {
            img_a: {
                (): first_row,
                (_A1,): _row(vocab, {_A2: s}),
                (_B1,): _row(vocab, {_B2: eps_b}),
            },
            img_b: {
                (): first_row.copy(),
                (_A1,): _row(vocab, {_A2: eps_a}),
                (_B1,): _row(vocab, {_B2: h}),
            },
        }
        model = ToyModel(
            vocab=vocab,
            end_token=DEFAULT_END_TOKEN,
            images=(img_a, img_b),
            prior=np.array([0.5, 0.5]),
            transitions=transitions,
            max_len=2,
        )
        _verify_family_instance(model, img_b, idx)
        foil = FoilSample(
            image=img_b,
            caption_true=f"{prefix_id}-capB",
            caption_foil=f"{prefix_id}-capA",
            category=FAMILY_CATEGORY,
        )
        out.append((model, foil))
    return out


def _row(vocab: tuple[str, ...], masses: dict[str, float]) -> np.ndarray:
    """A probability row with the leftover mass on the end token."""
    row = np.zeros(len(vocab), dtype=np.float64)
    for tok, p in masses.items():
        if not (0.0 < p < 1.0):
            raise ConstructionError(f"mass for {tok!r} must lie in (0, 1), got {p}")
        row[vocab.index(tok)] = p
    rest = 1.0 - float(row.sum())
    if rest <= 0.0:
        raise ConstructionError(f"row masses {masses} exceed 1")
    row[vocab.index(DEFAULT_END_TOKEN)] = rest
    return row


def _verify_family_instance(model: ToyModel, img_b: str, idx: int) -> None:
    """Re-check the guaranteed orderings by exact enumeration."""
    margin = 1e-9
    cond_a = exact_conditional(model, img_b, FAMILY_CAPTION_A)
    cond_b = exact_conditional(model, img_b, FAMILY_CAPTION_B)
    tl_a = math.fsum(math.exp(x) for x in cond_a) / cond_a.size
    tl_b = math.fsum(math.exp(x) for x in cond_b) / cond_b.size
    pmi_a = exact_pmi(model, img_b, FAMILY_CAPTION_A)
    pmi_b = exact_pmi(model, img_b, FAMILY_CAPTION_B)
    if not (tl_a > tl_b + margin and pmi_b > pmi_a + margin):
        raise ConstructionError(
            f"instance {idx}: construction guarantees violated "
            f"(tl_a={tl_a}, tl_b={tl_b}, pmi_a={pmi_a}, pmi_b={pmi_b})"
        )


def export_family(instances) -> tuple[ConditionalTable, list[FoilSample]]:
    """Merge family instances into one dense cross-product table.

    Every instance's images are scored against every instance's captions
    (the caption token strings are shared, so any instance's model can
    condition on them), which keeps the downstream score matrix dense.
    Null rows always come from the caption's own instance.
    """
    table = ConditionalTable()
    foils: list[FoilSample] = []
    captions: list[tuple[str, tuple[str, ...], ToyModel]] = []
    for model, foil in instances:
        foils.append(foil)
        captions.append((foil.caption_foil, FAMILY_CAPTION_A, model))
        captions.append((foil.caption_true, FAMILY_CAPTION_B, model))

    for tid, tokens, owner in captions:
        marg = exact_marginal(owner, tokens)
        table.entries[(NULL_IMAGE_ID, tid)] = TableEntry(tokens, marg)
        table.embeddings[tid] = _text_embedding(owner, tokens)
        marg_total = math.fsum(marg)
        for model, _ in instances:
            for image in model.images:
                cond = exact_conditional(model, image, tokens)
                table.entries[(image, tid)] = TableEntry(tokens, cond)
                table.itm[(image, tid)] = math.fsum(cond) - marg_total
    for model, _ in instances:
        for image in model.images:
            table.embeddings[image] = np.array(model.transitions[image][()], dtype=np.float64)
    return table.validate(), foils


# ---------------------------------------------------------------------------
# model (de)serialization for the CLI


def model_to_obj(model: ToyModel) -> dict:
    return {
        "vocab": list(model.vocab),
        "end_token": model.end_token,
        "images": list(model.images),
        "prior": [float(x) for x in model.prior],
        "max_len": model.max_len,
        "transitions": {
            image: [
                [list(prefix), [float(x) for x in row]]
                for prefix, row in sorted(rows.items())
            ]
            for image, rows in sorted(model.transitions.items())
        },
    }


def model_from_obj(obj: dict) -> ToyModel:
    try:
        transitions = {
            image: {tuple(prefix): np.asarray(row, dtype=np.float64) for prefix, row in rows}
            for image, rows in obj["transitions"].items()
        }
        return ToyModel(
            vocab=tuple(obj["vocab"]),
            end_token=obj["end_token"],
            images=tuple(obj["images"]),
            prior=np.asarray(obj["prior"], dtype=np.float64),
            transitions=transitions,
            max_len=int(obj["max_len"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidInputError(f"malformed toy-model object: {exc}") from None
