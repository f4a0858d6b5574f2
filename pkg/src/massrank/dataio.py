"""File formats, validation, and provenance.

Everything the engine reads or writes goes through here:

* conditional token-logprob tables (line-delimited JSON records
  ``{image, text, tokens, logp}``) plus optional embedding
  (``{id, vec}``) and matching-head (``{image, text, logit}`` or
  ``{image, text, lp_yes, lp_no}``) sidecar files;
* score-matrix files (header line + ``{query, candidate, score}`` records);
* evaluation manifests (retrieval / winoground / foil / color);
* results documents carrying metric values and full provenance;
* ``.digest`` sidecars with sha256 content hashes.

The image identifier ``"null"`` is reserved protocol-wide for the
text-only (black image) conditioning; it may appear as an image id but
never as a text id, an embedding id, or a matching-head image id.

Loaders validate exhaustively and raise TableFormatError naming the
offending line; writers are atomic (temp file + rename) and serialize
floats with ``repr``, which round-trips 64-bit values exactly.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Mapping

import numpy as np

from .errors import MissingEntryError, TableFormatError
from .similarity import LOGP_TOLERANCE

NULL_IMAGE_ID = "null"

GENDER_LABELS = frozenset({"masculine", "feminine", "neutral", "unknown", "both"})
DIRECTIONS = frozenset({"text-to-image", "image-to-text"})

_SCORES_FORMAT = "massrank-scores"


# ---------------------------------------------------------------------------
# conditional tables


@dataclass(frozen=True)
class TableEntry:
    """Tokens and per-token conditional log-probs for one (image, text)."""

    tokens: tuple[str, ...]
    logp: np.ndarray

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, TableEntry)
            and self.tokens == other.tokens
            and np.array_equal(self.logp, other.logp)
        )


@dataclass
class ConditionalTable:
    """All model outputs needed to score (image, text) pairs.

    ``entries`` maps (image_id, text_id) to a TableEntry; the reserved
    image id "null" holds the text-only conditioning row.  ``embeddings``
    and ``itm`` are optional side tables for the ITC and ITM score paths
    (ITM values are either a float logit or a (lp_yes, lp_no) pair).
    """

    entries: dict[tuple[str, str], TableEntry] = field(default_factory=dict)
    embeddings: dict[str, np.ndarray] = field(default_factory=dict)
    itm: dict[tuple[str, str], float | tuple[float, float]] = field(default_factory=dict)

    def image_ids(self, *, include_null: bool = False) -> list[str]:
        ids = {img for img, _ in self.entries}
        if not include_null:
            ids.discard(NULL_IMAGE_ID)
        return sorted(ids)

    def text_ids(self) -> list[str]:
        return sorted({text for _, text in self.entries})

    def entry(self, image: str, text: str) -> TableEntry:
        try:
            return self.entries[(image, text)]
        except KeyError:
            raise MissingEntryError(f"no table entry for image={image!r} text={text!r}") from None

    def conditional(self, image: str, text: str) -> np.ndarray:
        return self.entry(image, text).logp

    def tokens_for(self, text: str) -> tuple[str, ...]:
        for (_, t), entry in self.entries.items():
            if t == text:
                return entry.tokens
        raise MissingEntryError(f"no table entry for text={text!r}")

    def embedding(self, item: str) -> np.ndarray:
        try:
            return self.embeddings[item]
        except KeyError:
            raise MissingEntryError(f"no embedding for id={item!r}") from None

    def itm_value(self, image: str, text: str) -> float | tuple[float, float]:
        try:
            return self.itm[(image, text)]
        except KeyError:
            raise MissingEntryError(f"no ITM entry for image={image!r} text={text!r}") from None

    def validate(self) -> "ConditionalTable":
        """Re-check every table invariant; raises TableFormatError."""
        seen_tokens: dict[str, tuple[str, ...]] = {}
        for (image, text), entry in self.entries.items():
            where = f"entry image={image!r} text={text!r}"
            _check_ids(image, text, where)
            _check_entry(entry.tokens, np.asarray(entry.logp), where)
            prev = seen_tokens.setdefault(text, entry.tokens)
            if prev != entry.tokens:
                raise TableFormatError(
                    f"{where}: tokens disagree with an earlier entry for the same text id"
                )
        _check_embeddings(self.embeddings, self.entries)
        for (image, text), value in self.itm.items():
            _check_itm(image, text, value, f"ITM entry image={image!r} text={text!r}")
        return self


def _check_ids(image: str, text: str, where: str) -> None:
    if not isinstance(image, str) or not image:
        raise TableFormatError(f"{where}: image id must be a non-empty string")
    if not isinstance(text, str) or not text:
        raise TableFormatError(f"{where}: text id must be a non-empty string")
    if text == NULL_IMAGE_ID:
        raise TableFormatError(f"{where}: reserved id {NULL_IMAGE_ID!r} used as a text id")


def _check_entry(tokens, logp: np.ndarray, where: str) -> None:
    if not isinstance(tokens, (list, tuple)) or len(tokens) == 0:
        raise TableFormatError(f"{where}: tokens must be a non-empty list")
    for tok in tokens:
        if not isinstance(tok, str) or not tok:
            raise TableFormatError(f"{where}: tokens must be non-empty strings")
    if logp.ndim != 1 or logp.size != len(tokens):
        raise TableFormatError(
            f"{where}: logp length {logp.size} does not match {len(tokens)} tokens"
        )
    if not np.all(np.isfinite(logp)):
        raise TableFormatError(f"{where}: logp contains a non-finite entry")
    if logp.size and float(logp.max()) > LOGP_TOLERANCE:
        raise TableFormatError(
            f"{where}: logp entry {logp.max()!r} > {LOGP_TOLERANCE} (log of a probability)"
        )


def _check_embeddings(embeddings: Mapping[str, np.ndarray], entries) -> None:
    image_ids = {img for img, _ in entries}
    text_ids = {text for _, text in entries}
    dims: dict[str, int] = {}
    for item, vec in embeddings.items():
        where = f"embedding id={item!r}"
        if not isinstance(item, str) or not item:
            raise TableFormatError(f"{where}: id must be a non-empty string")
        if item == NULL_IMAGE_ID:
            raise TableFormatError(f"{where}: reserved id {NULL_IMAGE_ID!r} may not carry an embedding")
        arr = np.asarray(vec, dtype=np.float64)
        if arr.ndim != 1 or arr.size == 0:
            raise TableFormatError(f"{where}: vector must be a non-empty 1-D array")
        if not np.all(np.isfinite(arr)):
            raise TableFormatError(f"{where}: vector contains a non-finite entry")
        if float(np.linalg.norm(arr)) == 0.0:
            raise TableFormatError(f"{where}: vector has zero norm")
        modality = "image" if item in image_ids else ("text" if item in text_ids else "other")
        prev = dims.setdefault(modality, arr.size)
        if prev != arr.size:
            raise TableFormatError(
                f"{where}: dim {arr.size} differs from {prev} within the {modality} modality"
            )


def _check_itm(image: str, text: str, value, where: str) -> None:
    _check_ids(image, text, where)
    if image == NULL_IMAGE_ID:
        raise TableFormatError(f"{where}: reserved id {NULL_IMAGE_ID!r} may not carry an ITM value")
    if isinstance(value, tuple):
        for name, lp in zip(("lp_yes", "lp_no"), value):
            if isinstance(lp, bool) or not isinstance(lp, (int, float)) or not math.isfinite(lp):
                raise TableFormatError(f"{where}: {name} must be a finite number")
            if lp > LOGP_TOLERANCE:
                raise TableFormatError(f"{where}: {name} {lp!r} > {LOGP_TOLERANCE}")
    else:
        if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
            raise TableFormatError(f"{where}: logit must be a finite number")


# ---------------------------------------------------------------------------
# line-delimited JSON plumbing


def _iter_json_lines(path: str | Path) -> Iterator[tuple[int, dict]]:
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise TableFormatError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
            if not isinstance(obj, dict):
                raise TableFormatError(f"{path}:{lineno}: expected a JSON object")
            yield lineno, obj


def _require(obj: dict, key: str, path, lineno: int):
    if key not in obj:
        raise TableFormatError(f"{path}:{lineno}: missing field {key!r}")
    return obj[key]


def _number_list(value, path, lineno: int, key: str) -> np.ndarray:
    if not isinstance(value, list):
        raise TableFormatError(f"{path}:{lineno}: {key!r} must be a list of numbers")
    for x in value:
        if isinstance(x, bool) or not isinstance(x, (int, float)):
            raise TableFormatError(f"{path}:{lineno}: {key!r} must contain only numbers")
    return np.asarray(value, dtype=np.float64)


def _finite_number(value, path, lineno: int, key: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
        raise TableFormatError(f"{path}:{lineno}: {key!r} must be a finite number")
    return float(value)


def dump_json_line(obj) -> str:
    """Canonical one-line JSON: sorted keys, no whitespace padding."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def write_text_atomic(path: str | Path, text: str, *, digest_sidecar: bool = True) -> None:
    """Write ``text`` to ``path`` atomically; optionally emit a .digest sidecar."""
    path = Path(path)
    tmp = path.with_name(path.name + f".tmp.{os.getpid()}")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)
    if digest_sidecar:
        digest = hashlib.sha256(text.encode("utf-8")).hexdigest()
        sidecar = path.with_name(path.name + ".digest")
        tmp = sidecar.with_name(sidecar.name + f".tmp.{os.getpid()}")
        tmp.write_text(f"{digest}  {path.name}\n", encoding="utf-8")
        os.replace(tmp, sidecar)


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


# ---------------------------------------------------------------------------
# table load/save


def load_table(
    path: str | Path,
    *,
    embeddings_path: str | Path | None = None,
    itm_path: str | Path | None = None,
) -> ConditionalTable:
    """Load and fully validate a conditional table plus optional sidecars."""
    entries: dict[tuple[str, str], TableEntry] = {}
    seen_tokens: dict[str, tuple[str, ...]] = {}
    for lineno, obj in _iter_json_lines(path):
        image = _require(obj, "image", path, lineno)
        text = _require(obj, "text", path, lineno)
        tokens = _require(obj, "tokens", path, lineno)
        logp_raw = _require(obj, "logp", path, lineno)
        where = f"{path}:{lineno}"
        if not isinstance(image, str) or not isinstance(text, str):
            raise TableFormatError(f"{where}: image and text ids must be strings")
        _check_ids(image, text, where)
        if not isinstance(tokens, list):
            raise TableFormatError(f"{where}: 'tokens' must be a list")
        logp = _number_list(logp_raw, path, lineno, "logp")
        _check_entry(tokens, logp, where)
        key = (image, text)
        if key in entries:
            raise TableFormatError(f"{where}: duplicate (image, text) key {key!r}")
        toks = tuple(tokens)
        prev = seen_tokens.setdefault(text, toks)
        if prev != toks:
            raise TableFormatError(
                f"{where}: tokens disagree with an earlier entry for text id {text!r}"
            )
        entries[key] = TableEntry(toks, logp)

    table = ConditionalTable(entries=entries)
    if embeddings_path is not None:
        table.embeddings = _load_embeddings(embeddings_path, entries)
    if itm_path is not None:
        table.itm = _load_itm(itm_path)
    return table.validate()


def _load_embeddings(path, entries) -> dict[str, np.ndarray]:
    out: dict[str, np.ndarray] = {}
    for lineno, obj in _iter_json_lines(path):
        item = _require(obj, "id", path, lineno)
        vec = _number_list(_require(obj, "vec", path, lineno), path, lineno, "vec")
        if not isinstance(item, str):
            raise TableFormatError(f"{path}:{lineno}: 'id' must be a string")
        if item in out:
            raise TableFormatError(f"{path}:{lineno}: duplicate embedding id {item!r}")
        out[item] = vec
    return out


def _load_itm(path) -> dict[tuple[str, str], float | tuple[float, float]]:
    out: dict[tuple[str, str], float | tuple[float, float]] = {}
    for lineno, obj in _iter_json_lines(path):
        image = _require(obj, "image", path, lineno)
        text = _require(obj, "text", path, lineno)
        if not isinstance(image, str) or not isinstance(text, str):
            raise TableFormatError(f"{path}:{lineno}: image and text ids must be strings")
        if ("lp_yes" in obj) != ("lp_no" in obj):
            raise TableFormatError(f"{path}:{lineno}: lp_yes and lp_no must appear together")
        value: float | tuple[float, float]
        if "lp_yes" in obj:
            value = (
                _finite_number(obj["lp_yes"], path, lineno, "lp_yes"),
                _finite_number(obj["lp_no"], path, lineno, "lp_no"),
            )
        elif "logit" in obj:
            value = _finite_number(obj["logit"], path, lineno, "logit")
        else:
            raise TableFormatError(f"{path}:{lineno}: need either 'logit' or 'lp_yes'/'lp_no'")
        key = (image, text)
        if key in out:
            raise TableFormatError(f"{path}:{lineno}: duplicate ITM key {key!r}")
        _check_itm(image, text, value, f"{path}:{lineno}")
        out[key] = value
    return out


def save_table(
    table: ConditionalTable,
    path: str | Path,
    *,
    embeddings_path: str | Path | None = None,
    itm_path: str | Path | None = None,
) -> None:
    """Write a table (and sidecars) in canonical order; byte-deterministic."""
    table.validate()
    lines = []
    for (image, text) in sorted(table.entries):
        entry = table.entries[(image, text)]
        lines.append(
            dump_json_line(
                {
                    "image": image,
                    "text": text,
                    "tokens": list(entry.tokens),
                    "logp": [float(x) for x in entry.logp],
                }
            )
        )
    write_text_atomic(path, "".join(line + "\n" for line in lines))

    if embeddings_path is not None:
        lines = [
            dump_json_line({"id": item, "vec": [float(x) for x in table.embeddings[item]]})
            for item in sorted(table.embeddings)
        ]
        write_text_atomic(embeddings_path, "".join(line + "\n" for line in lines))

    if itm_path is not None:
        lines = []
        for (image, text) in sorted(table.itm):
            value = table.itm[(image, text)]
            rec: dict = {"image": image, "text": text}
            if isinstance(value, tuple):
                rec["lp_yes"], rec["lp_no"] = float(value[0]), float(value[1])
            else:
                rec["logit"] = float(value)
            lines.append(dump_json_line(rec))
        write_text_atomic(itm_path, "".join(line + "\n" for line in lines))


# ---------------------------------------------------------------------------
# score-matrix files

def save_score_matrix(matrix, path: str | Path, *, provenance: dict | None = None) -> None:
    """Write a dense score matrix with a header line carrying provenance."""
    header = {
        "format": _SCORES_FORMAT,
        "version": 1,
        "queries": list(matrix.queries),
        "candidates": list(matrix.candidates),
        "provenance": provenance or {},
    }
    lines = [dump_json_line(header)]
    for i, q in enumerate(matrix.queries):
        for j, c in enumerate(matrix.candidates):
            lines.append(
                dump_json_line({"query": q, "candidate": c, "score": float(matrix.values[i, j])})
            )
    write_text_atomic(path, "".join(line + "\n" for line in lines))


def load_score_matrix(path: str | Path):
    """Load a score file into a (ScoreMatrix, provenance) pair.

    Files written by this package start with a header declaring the query
    and candidate lists; headerless record-only files are accepted, the
    lists then being the sorted unique ids.  Either way the matrix must be
    dense and every score finite.
    """
    from .ranking import ScoreMatrix

    records: dict[tuple[str, str], float] = {}
    header: dict | None = None
    for lineno, obj in _iter_json_lines(path):
        if header is None and obj.get("format") == _SCORES_FORMAT:
            header = obj
            continue
        query = _require(obj, "query", path, lineno)
        candidate = _require(obj, "candidate", path, lineno)
        score = _require(obj, "score", path, lineno)
        if not isinstance(query, str) or not isinstance(candidate, str):
            raise TableFormatError(f"{path}:{lineno}: query and candidate ids must be strings")
        value = _finite_number(score, path, lineno, "score")
        key = (query, candidate)
        if key in records:
            raise TableFormatError(f"{path}:{lineno}: duplicate score for {key!r}")
        records[key] = value

    if header is not None:
        queries = header.get("queries")
        candidates = header.get("candidates")
        if not isinstance(queries, list) or not isinstance(candidates, list):
            raise TableFormatError(f"{path}:1: header must declare 'queries' and 'candidates'")
        provenance = header.get("provenance") or {}
    else:
        if not records:
            raise TableFormatError(f"{path}: no score records")
        queries = sorted({q for q, _ in records})
        candidates = sorted({c for _, c in records})
        provenance = {}

    values = np.empty((len(queries), len(candidates)), dtype=np.float64)
    for i, q in enumerate(queries):
        for j, c in enumerate(candidates):
            try:
                values[i, j] = records.pop((q, c))
            except KeyError:
                raise TableFormatError(
                    f"{path}: missing score for query={q!r} candidate={c!r} (matrix must be dense)"
                ) from None
    if records:
        stray = next(iter(records))
        raise TableFormatError(f"{path}: score for undeclared pair {stray!r}")
    try:
        matrix = ScoreMatrix(tuple(queries), tuple(candidates), values)
    except Exception as exc:
        raise TableFormatError(f"{path}: {exc}") from None
    return matrix, provenance


# ---------------------------------------------------------------------------
# manifests


def load_retrieval_manifest(path: str | Path):
    """Load a retrieval manifest (single JSON object)."""
    from .metrics import CandidateRecord, QueryRecord, RetrievalDataset

    try:
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise TableFormatError(f"{path}: invalid JSON ({exc.msg})") from None
    if not isinstance(obj, dict):
        raise TableFormatError(f"{path}: manifest must be a JSON object")
    direction = obj.get("direction")
    if direction not in DIRECTIONS:
        raise TableFormatError(f"{path}: direction must be one of {sorted(DIRECTIONS)}")
    queries = []
    for q in obj.get("queries", []):
        if not isinstance(q, dict) or "id" not in q or "gold" not in q:
            raise TableFormatError(f"{path}: each query needs 'id' and 'gold'")
        queries.append(
            QueryRecord(
                id=q["id"],
                gold=frozenset(q["gold"]),
                gender=_gender(q.get("gender", "neutral"), path),
            )
        )
    candidates = []
    for c in obj.get("candidates", []):
        if not isinstance(c, dict) or "id" not in c:
            raise TableFormatError(f"{path}: each candidate needs 'id'")
        candidates.append(
            CandidateRecord(id=c["id"], gender=_gender(c.get("gender", "neutral"), path))
        )
    try:
        return RetrievalDataset(direction=direction, queries=tuple(queries), candidates=tuple(candidates))
    except Exception as exc:
        raise TableFormatError(f"{path}: {exc}") from None


def _gender(value, path) -> str:
    if value not in GENDER_LABELS:
        raise TableFormatError(f"{path}: unknown gender label {value!r}")
    return value


def load_winoground_manifest(path: str | Path):
    from .metrics import WinogroundSample

    samples = []
    for lineno, obj in _iter_json_lines(path):
        for key in ("id", "i0", "i1", "c0", "c1"):
            _require(obj, key, path, lineno)
        tags = obj.get("tags", [])
        if not isinstance(tags, list) or not all(isinstance(t, str) for t in tags):
            raise TableFormatError(f"{path}:{lineno}: 'tags' must be a list of strings")
        try:
            samples.append(
                WinogroundSample(
                    id=obj["id"],
                    i0=obj["i0"],
                    i1=obj["i1"],
                    c0=obj["c0"],
                    c1=obj["c1"],
                    tags=frozenset(tags),
                )
            )
        except Exception as exc:
            raise TableFormatError(f"{path}:{lineno}: {exc}") from None
    return samples


def load_foil_manifest(path: str | Path):
    from .metrics import FoilSample

    samples = []
    for lineno, obj in _iter_json_lines(path):
        for key in ("image", "caption_true", "caption_foil"):
            _require(obj, key, path, lineno)
        try:
            samples.append(
                FoilSample(
                    image=obj["image"],
                    caption_true=obj["caption_true"],
                    caption_foil=obj["caption_foil"],
                    category=obj.get("category", ""),
                )
            )
        except Exception as exc:
            raise TableFormatError(f"{path}:{lineno}: {exc}") from None
    return samples


def load_color_manifest(path: str | Path) -> list[dict]:
    """Color-bias manifest rows; scores are joined in later from a matrix."""
    rows = []
    for lineno, obj in _iter_json_lines(path):
        for key in ("image", "fruit_type", "caption_true", "caption_adv"):
            value = _require(obj, key, path, lineno)
            if not isinstance(value, str) or not value:
                raise TableFormatError(f"{path}:{lineno}: {key!r} must be a non-empty string")
        rows.append(obj)
    return rows


# ---------------------------------------------------------------------------
# results documents


def save_results(metrics: Mapping, provenance: Mapping, path: str | Path) -> None:
    doc = {"metrics": dict(metrics), "provenance": dict(provenance)}
    write_text_atomic(path, json.dumps(doc, sort_keys=True, indent=2, allow_nan=False) + "\n")


def load_results(path: str | Path) -> dict:
    try:
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise TableFormatError(f"{path}: invalid JSON ({exc.msg})") from None
    if not isinstance(obj, dict) or "metrics" not in obj or "provenance" not in obj:
        raise TableFormatError(f"{path}: results doc needs 'metrics' and 'provenance'")
    return obj
