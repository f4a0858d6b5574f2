"""Deterministic per-token caption scoring for encoder-decoder checkpoints.

Loads a VisionEncoderDecoder-style checkpoint (local path or hub id) and
exposes exactly one operation: the per-token log-probabilities of a
caption conditioned on an image.  Scored positions are the caption's own
tokens, teacher-forced behind the decoder start token; no EOS is
appended.  That choice, like every other identity-relevant knob, is
recorded in (and digested into) the adapter identity.

Inference is pinned for reproducibility: eval mode, float32, a single
torch thread, no sampling anywhere.  Identical requests produce
bit-identical responses across runs of the same checkpoint.
"""

from __future__ import annotations

import hashlib
import json
from functools import cached_property

import torch
from PIL import Image
from transformers import AutoImageProcessor, AutoTokenizer, VisionEncoderDecoderModel

NULL_IMAGE_ID = "null"
NULL_FILL = 0


class AdapterError(RuntimeError):
    """Raised for unanswerable requests; the server turns it into a
    protocol {"error": ...} object."""


class CaptioningScorer:
    def __init__(self, checkpoint: str):
        torch.set_num_threads(1)  # bit-stable reductions
        self.checkpoint = checkpoint
        self.model = VisionEncoderDecoderModel.from_pretrained(checkpoint)
        self.model.eval()
        self.tokenizer = AutoTokenizer.from_pretrained(checkpoint)
        self.processor = AutoImageProcessor.from_pretrained(checkpoint)
        start = self.model.config.decoder_start_token_id
        if start is None:
            start = self.model.config.decoder.bos_token_id
        if start is None:
            raise AdapterError("checkpoint defines no decoder start token")
        self.start_token_id = int(start)

    # -- images --------------------------------------------------------------

    def native_size(self) -> tuple[int, int]:
        """(height, width) the processor resizes to; the null image's size."""
        size = getattr(self.processor, "size", None) or {}
        if "height" in size and "width" in size:
            return int(size["height"]), int(size["width"])
        if "shortest_edge" in size:
            edge = int(size["shortest_edge"])
            return edge, edge
        raise AdapterError(f"cannot determine native input size from {size!r}")

    def null_image(self) -> Image.Image:
        height, width = self.native_size()
        return Image.new("RGB", (width, height), NULL_FILL)

    def open_image(self, spec: str) -> Image.Image:
        if spec == NULL_IMAGE_ID:
            return self.null_image()
        try:
            with Image.open(spec) as img:
                return img.convert("RGB")
        except OSError as exc:
            raise AdapterError(f"cannot open image {spec!r}: {exc}") from None

    # -- scoring ---------------------------------------------------------------

    def token_logprobs(self, image_spec: str, text: str) -> tuple[list[str], list[float]]:
        """Tokens and per-token log p(x_t | x_<t, image) for one caption."""
        if not text or not text.strip():
            raise AdapterError("text must be non-empty")
        ids = self.tokenizer(text, add_special_tokens=False)["input_ids"]
        if not ids:
            raise AdapterError(f"text {text!r} tokenizes to nothing")
        tokens = self.tokenizer.convert_ids_to_tokens(ids)
        image = self.open_image(image_spec)
        pixel_values = self.processor(images=image, return_tensors="pt").pixel_values
        target = torch.tensor([ids], dtype=torch.long)
        decoder_input = torch.cat(
            [torch.tensor([[self.start_token_id]], dtype=torch.long), target[:, :-1]], dim=1
        )
        with torch.no_grad():
            logits = self.model(pixel_values=pixel_values, decoder_input_ids=decoder_input).logits
        logp = torch.log_softmax(logits.double(), dim=-1)
        picked = logp.gather(-1, target.unsqueeze(-1)).squeeze(0).squeeze(-1)
        # log_softmax can round to a hair above 0 for a near-certain token.
        picked = torch.clamp(picked, max=0.0)
        return list(tokens), [float(x) for x in picked]

    # -- identity ---------------------------------------------------------------

    @cached_property
    def identity(self) -> dict:
        """Stable description of checkpoint + preprocessing + conventions."""
        height, width = self.native_size()
        return {
            "model": type(self.model).__name__,
            "checkpoint": str(self.checkpoint),
            "checkpoint_digest": self._weights_digest(),
            "tokenizer_digest": self._tokenizer_digest(),
            "preprocessing": self._preprocessing_digest(),
            "null_image": {"resolution": [height, width], "fill": NULL_FILL},
            "scored_positions": (
                "caption tokens verbatim, teacher-forced behind the decoder "
                "start token; no special tokens added"
            ),
        }

    def _weights_digest(self) -> str:
        h = hashlib.sha256()
        h.update(self.model.config.to_json_string().encode("utf-8"))
        for name, tensor in sorted(self.model.state_dict().items()):
            h.update(name.encode("utf-8"))
            h.update(tensor.detach().cpu().contiguous().numpy().tobytes())
        return h.hexdigest()

    def _tokenizer_digest(self) -> str:
        vocab = sorted(self.tokenizer.get_vocab().items())
        blob = json.dumps(vocab, ensure_ascii=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()

    def _preprocessing_digest(self) -> str:
        blob = json.dumps(self.processor.to_dict(), sort_keys=True, default=str)
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()
