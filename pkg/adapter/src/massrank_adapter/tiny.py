"""A tiny, fully deterministic captioning checkpoint for smoke tests.

Builds a ~200 KB VisionEncoderDecoder (1-layer ViT encoder, 1-layer GPT-2
decoder, word-level tokenizer over a fixed caption vocabulary), seeds the
weights, and saves it through the standard save_pretrained path, so the
adapter exercises the exact code it would run against any hub checkpoint.
The sandbox has no route to model hubs; this stands in for a small open
checkpoint without changing a line of the serving or export code.
"""

from __future__ import annotations

from pathlib import Path

import torch
from tokenizers import Tokenizer, models, pre_tokenizers
from transformers import (
    GPT2Config,
    GPT2LMHeadModel,
    PreTrainedTokenizerFast,
    ViTConfig,
    ViTImageProcessor,
    ViTModel,
    VisionEncoderDecoderModel,
)

# Fixed caption vocabulary: enough everyday words to write COCO-ish
# captions; anything else becomes [UNK].
WORDS = (
    "a an the and on in under next to with of two three red blue green "
    "yellow black white gray small large cat dog bird horse person child "
    "man woman ball mat table chair car bus bike tree park beach snow "
    "kitchen plate food fruit apple banana sits stands runs walks rides "
    "holds eats plays looks jumps sleeps is are".split()
)

IMAGE_SIZE = 32


def make_tiny_checkpoint(out_dir: str | Path, seed: int = 0) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    vocab = {"[PAD]": 0, "[UNK]": 1, "[BOS]": 2, "[EOS]": 3}
    for word in WORDS:
        vocab.setdefault(word, len(vocab))
    core = Tokenizer(models.WordLevel(vocab, unk_token="[UNK]"))
    core.pre_tokenizer = pre_tokenizers.Whitespace()
    tokenizer = PreTrainedTokenizerFast(
        tokenizer_object=core,
        unk_token="[UNK]",
        pad_token="[PAD]",
        bos_token="[BOS]",
        eos_token="[EOS]",
    )

    torch.manual_seed(seed)
    encoder = ViTModel(
        ViTConfig(
            image_size=IMAGE_SIZE,
            patch_size=8,
            hidden_size=32,
            num_hidden_layers=1,
            num_attention_heads=2,
            intermediate_size=64,
        )
    )
    decoder = GPT2LMHeadModel(
        GPT2Config(
            vocab_size=len(vocab),
            n_positions=64,
            n_embd=32,
            n_layer=1,
            n_head=2,
            bos_token_id=vocab["[BOS]"],
            eos_token_id=vocab["[EOS]"],
            add_cross_attention=True,
        )
    )
    model = VisionEncoderDecoderModel(encoder=encoder, decoder=decoder)
    model.config.decoder_start_token_id = vocab["[BOS]"]
    model.config.pad_token_id = vocab["[PAD]"]
    model.eval()

    processor = ViTImageProcessor(size={"height": IMAGE_SIZE, "width": IMAGE_SIZE})

    model.save_pretrained(out_dir)
    tokenizer.save_pretrained(out_dir)
    processor.save_pretrained(out_dir)
    return out_dir
