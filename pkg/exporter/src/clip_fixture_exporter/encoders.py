"""Text encoders.

Any object with a `name` string and an `encode(texts) -> (n, d) float
array` method works; the default is a pretrained CLIP text tower loaded
through Hugging Face transformers. Loading is the only part that needs
torch/transformers installed and (on first use) the model weights, so
it is isolated here and wrapped in one actionable error.
"""

from __future__ import annotations

from typing import Protocol

import numpy as np

from .errors import EncoderUnavailableError

DEFAULT_MODEL = "openai/clip-vit-base-patch32"

_INSTALL_HINT = ("install the encoder extra (pip install torch "
                 "'transformers>=4.30') and make sure the model weights "
                 "are downloadable or already in the local cache")


class TextEncoder(Protocol):
    name: str

    def encode(self, texts) -> np.ndarray: ...


class HuggingFaceClipEncoder:
    """Frozen CLIP text tower; returns the projected text embeddings."""

    def __init__(self, name: str, tokenizer, model, torch_module):
        self.name = name
        self._tokenizer = tokenizer
        self._model = model
        self._torch = torch_module

    def encode(self, texts) -> np.ndarray:
        texts = list(texts)
        tokens = self._tokenizer(texts, padding=True, return_tensors="pt")
        with self._torch.no_grad():
            out = self._model(**tokens)
        return np.asarray(out.text_embeds.cpu().numpy(), dtype=np.float64)


def load_clip_encoder(model_name: str = DEFAULT_MODEL,
                      local_files_only: bool = False) -> HuggingFaceClipEncoder:
    """Load a pretrained CLIP text encoder in inference mode.

    local_files_only skips the network and fails fast when the weights
    are not already cached.
    """
    try:
        import torch
        from transformers import CLIPTextModelWithProjection, CLIPTokenizer
    except ImportError as exc:
        raise EncoderUnavailableError(
            f"torch/transformers not importable ({exc}); "
            f"{_INSTALL_HINT}") from exc
    try:
        tokenizer = CLIPTokenizer.from_pretrained(
            model_name, local_files_only=local_files_only)
        model = CLIPTextModelWithProjection.from_pretrained(
            model_name, local_files_only=local_files_only)
    except Exception as exc:
        raise EncoderUnavailableError(
            f"could not load {model_name!r} ({exc}); {_INSTALL_HINT}"
        ) from exc
    model.eval()
    return HuggingFaceClipEncoder(name=model_name, tokenizer=tokenizer,
                                  model=model, torch_module=torch)
