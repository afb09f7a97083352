import hashlib

import numpy as np


class StubEncoder:
    """Deterministic stand-in encoder: each prompt hashes to its own
    RNG seed, so equal prompts always produce identical vectors and the
    suite never needs model weights."""

    def __init__(self, d_e: int = 32, name: str = "stub-hash"):
        self.d_e = d_e
        self.name = name

    def encode(self, texts):
        rows = []
        for text in texts:
            digest = hashlib.sha256(text.encode("utf-8")).digest()
            rng = np.random.default_rng(int.from_bytes(digest[:8], "big"))
            rows.append(rng.normal(size=self.d_e))
        return np.array(rows)
