"""Turn a prompt set plus an encoder into a fixture JSON file.

The output document is {"d_e": int, "normalized": bool, "encoder": str,
"embeddings": {key: [floats]}}, which is the embedding-fixture format
the expredit pipeline loads. Each distinct prompt text is encoded once
and the result reused for every key that carries it, so two keys with
the same prompt always hold identical vectors.
"""

from __future__ import annotations

import json

import numpy as np

from .encoders import TextEncoder
from .errors import DimensionMismatchError, EncodingError
from .prompts import PromptSet

NORM_TOLERANCE = 1e-6


def encode_prompt_set(prompt_set: PromptSet, encoder: TextEncoder) -> dict:
    """Encode every entry; returns {key: float64 vector}."""
    unique = list(dict.fromkeys(prompt for _, prompt in prompt_set.entries))
    matrix = np.asarray(encoder.encode(unique), dtype=np.float64)
    if matrix.ndim != 2 or matrix.shape[0] != len(unique):
        raise EncodingError(
            f"encoder {encoder.name!r} returned shape {matrix.shape} for "
            f"{len(unique)} prompts; expected ({len(unique)}, d_e)")
    if matrix.shape[1] != prompt_set.d_e:
        raise DimensionMismatchError(
            f"encoder {encoder.name!r} produces d_e={matrix.shape[1]} but "
            f"the prompt set requests d_e={prompt_set.d_e}")
    if not np.all(np.isfinite(matrix)):
        raise EncodingError(
            f"encoder {encoder.name!r} returned non-finite values")
    if prompt_set.normalized:
        norms = np.linalg.norm(matrix, axis=1)
        if np.any(norms == 0.0):
            bad = unique[int(np.argmin(norms))]
            raise EncodingError(
                f"encoder {encoder.name!r} returned a zero vector for "
                f"prompt {bad!r}; cannot normalize")
        matrix = matrix / norms[:, None]
    by_prompt = dict(zip(unique, matrix))
    return {key: by_prompt[prompt] for key, prompt in prompt_set.entries}


def export_fixture(prompt_set: PromptSet, encoder: TextEncoder,
                   path) -> dict:
    """Encode and write the fixture; returns the {key: vector} mapping."""
    values = encode_prompt_set(prompt_set, encoder)
    doc = {
        "d_e": int(prompt_set.d_e),
        "normalized": bool(prompt_set.normalized),
        "encoder": str(encoder.name),
        "embeddings": {k: v.tolist() for k, v in values.items()},
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)
        fh.write("\n")
    return values
