import json
import sys

import pytest
from PIL import Image

from massrank_adapter import make_tiny_checkpoint

# The engine is consumed strictly through its CLI (external interface).
ENGINE = [sys.executable, "-m", "massrank.cli"]


@pytest.fixture(scope="session")
def checkpoint(tmp_path_factory) -> str:
    path = tmp_path_factory.mktemp("ckpt") / "tiny"
    make_tiny_checkpoint(path, seed=0)
    return str(path)


@pytest.fixture(scope="session")
def coco_corpus(tmp_path_factory):
    """Eight deterministic solid-color images + one caption each, in COCO
    caption-file format.  A full 8x8 grid export yields 64 conditional
    rows plus 8 null rows."""
    root = tmp_path_factory.mktemp("coco")
    colors = [
        (200, 30, 30), (30, 200, 30), (30, 30, 200), (220, 220, 40),
        (40, 220, 220), (220, 40, 220), (120, 120, 120), (250, 250, 250),
    ]
    captions = [
        "a red ball on the mat",
        "a green bird in the tree",
        "a blue car on the park",
        "a yellow dog runs on the beach",
        "a small cat sits on the chair",
        "a large horse stands in the snow",
        "a gray bus next to the tree",
        "a white plate with food on the table",
    ]
    images = []
    annotations = []
    for i, (color, caption) in enumerate(zip(colors, captions)):
        name = f"im{i:04d}.png"
        Image.new("RGB", (48, 40), color).save(root / name)
        images.append({"id": i, "file_name": name})
        annotations.append({"id": 100 + i, "image_id": i, "caption": caption})
    coco_json = root / "captions.json"
    coco_json.write_text(json.dumps({"images": images, "annotations": annotations}),
                         encoding="utf-8")
    return {"json": str(coco_json), "root": str(root), "n": len(images)}
