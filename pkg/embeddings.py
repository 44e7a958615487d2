"""
Text embedding providers. The built-in provider is signed feature hashing of
case-folded tokens; learned encoders plug in through the vector file format
(see vectorstore.VectorIndex.read).
"""
import hashlib
from typing import Protocol

import numpy as np

from config import Settings, settings
from tokenizer import tokenize


class EmbeddingProvider(Protocol):
    name: str
    dim: int

    def embed(self, text: str) -> np.ndarray:
        ...


class HashingEmbeddingProvider:
    name = "hashing"

    def __init__(self, dim: int = 256):
        if dim < 1:
            raise ValueError(f"embedding dimension must be positive, got {dim}")
        self.dim = dim

    def _bucket(self, token: str) -> tuple[int, float]:
        digest = hashlib.sha256(token.encode("utf-8")).digest()
        index = int.from_bytes(digest[:8], "big") % self.dim
        sign = 1.0 if digest[8] & 1 else -1.0
        return index, sign

    def embed(self, text: str) -> np.ndarray:
        """Unit vector; zero vector when the text has no tokens."""
        return self.embed_tokens(tokenize(text))

    def embed_tokens(self, tokens: list[str]) -> np.ndarray:
        vec = np.zeros(self.dim, dtype=np.float64)
        for token in tokens:
            index, sign = self._bucket(token)
            vec[index] += sign
        norm = np.linalg.norm(vec)
        return vec / norm if norm > 0 else vec


def get_embeddings(cfg: Settings = settings) -> EmbeddingProvider:
    return HashingEmbeddingProvider(dim=cfg.embedding_dim)
