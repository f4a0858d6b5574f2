"""Offline export: COCO-format captions to massrank conditional tables.

Reads a COCO caption file ({"images": [{"id", "file_name"}],
"annotations": [{"id", "image_id", "caption"}]}), scores captions against
images, and writes the engine's line-delimited table format with a null
row for every caption.  ``grid="full"`` scores every image against every
caption (what retrieval metrics need: the downstream score matrix must be
dense); ``grid="paired"`` scores only each annotation's own image.

Output is canonical -- rows sorted by (image, text id), compact JSON with
sorted keys, full-precision floats -- so repeated exports of the same
checkpoint and manifest are byte-identical.  A sha256 ``.digest`` sidecar
accompanies every file.

This checkpoint family exposes neither a joint embedding space nor a
matching head, so no embedding or matching sidecars are produced.
"""

from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path

from .model import NULL_IMAGE_ID, AdapterError, CaptioningScorer


def _dump(obj: dict) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def _write_with_digest(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + f".tmp.{os.getpid()}")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)
    digest = hashlib.sha256(text.encode("utf-8")).hexdigest()
    sidecar = path.with_name(path.name + ".digest")
    tmp = sidecar.with_name(sidecar.name + f".tmp.{os.getpid()}")
    tmp.write_text(f"{digest}  {path.name}\n", encoding="utf-8")
    os.replace(tmp, sidecar)


def load_coco(coco_json: str | Path, image_root: str | Path,
              limit_images: int | None = None,
              limit_captions: int | None = None):
    """-> (images: [(image_id, path)], captions: [(caption_id, text, image_id)])."""
    try:
        doc = json.loads(Path(coco_json).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise AdapterError(f"{coco_json}: invalid JSON ({exc.msg})") from None
    if not isinstance(doc, dict) or "images" not in doc or "annotations" not in doc:
        raise AdapterError(f"{coco_json}: need 'images' and 'annotations'")
    root = Path(image_root)
    images = []
    for rec in sorted(doc["images"], key=lambda r: str(r.get("id"))):
        if "id" not in rec or "file_name" not in rec:
            raise AdapterError(f"{coco_json}: image records need 'id' and 'file_name'")
        path = root / rec["file_name"]
        if not path.is_file():
            raise AdapterError(f"image file missing: {path}")
        images.append((f"img{rec['id']}", str(path)))
    if limit_images is not None:
        images = images[:limit_images]
    kept = {img_id for img_id, _ in images}
    captions = []
    for rec in sorted(doc["annotations"], key=lambda r: str(r.get("id"))):
        for key in ("id", "image_id", "caption"):
            if key not in rec:
                raise AdapterError(f"{coco_json}: annotation records need {key!r}")
        image_id = f"img{rec['image_id']}"
        if image_id in kept:
            captions.append((f"cap{rec['id']}", str(rec["caption"]), image_id))
    if limit_captions is not None:
        captions = captions[:limit_captions]
    if not images or not captions:
        raise AdapterError(f"{coco_json}: no usable images/captions after filtering")
    return images, captions


def export_table(
    scorer: CaptioningScorer,
    coco_json: str | Path,
    image_root: str | Path,
    out_table: str | Path,
    *,
    grid: str = "full",
    pairs_out: str | Path | None = None,
    manifest_out: str | Path | None = None,
    limit_images: int | None = None,
    limit_captions: int | None = None,
) -> dict:
    """Score and write the table; returns summary counts."""
    if grid not in ("full", "paired"):
        raise AdapterError(f"grid must be 'full' or 'paired', got {grid!r}")
    images, captions = load_coco(coco_json, image_root, limit_images, limit_captions)
    image_path = dict(images)

    rows = []
    for cap_id, text, own_image in captions:
        tokens, logp = scorer.token_logprobs(NULL_IMAGE_ID, text)
        rows.append({"image": NULL_IMAGE_ID, "text": cap_id, "tokens": tokens, "logp": logp})
        targets = [img_id for img_id, _ in images] if grid == "full" else [own_image]
        for img_id in targets:
            tokens, logp = scorer.token_logprobs(image_path[img_id], text)
            rows.append({"image": img_id, "text": cap_id, "tokens": tokens, "logp": logp})
    rows.sort(key=lambda r: (r["image"], r["text"]))
    out_table = Path(out_table)
    _write_with_digest(out_table, "".join(_dump(r) + "\n" for r in rows))

    if pairs_out is not None:
        pair_rows = [
            _dump({"image": img_id, "text": cap_id})
            for img_id, _ in images
            for cap_id, _, own in captions
            if grid == "full" or own == img_id
        ]
        _write_with_digest(Path(pairs_out), "".join(r + "\n" for r in pair_rows))

    if manifest_out is not None:
        manifest = {
            "direction": "text-to-image",
            "queries": [
                {"id": cap_id, "gold": [own_image]} for cap_id, _, own_image in captions
            ],
            "candidates": [{"id": img_id} for img_id, _ in images],
        }
        _write_with_digest(Path(manifest_out), json.dumps(manifest, sort_keys=True, indent=2) + "\n")

    return {
        "images": len(images),
        "captions": len(captions),
        "conditional_rows": sum(1 for r in rows if r["image"] != NULL_IMAGE_ID),
        "null_rows": sum(1 for r in rows if r["image"] == NULL_IMAGE_ID),
    }
