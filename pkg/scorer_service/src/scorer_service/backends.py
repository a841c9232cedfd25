"""Scoring backends: deterministic defaults plus optional neural models.

The default deployment uses a lexical containment scorer for entailment
and a character n-gram hashing embedder, both pure functions of their
inputs, so the service stays deterministic without model downloads.
Set SCORER_BACKEND=sentence-transformers (with SCORER_EMBED_MODEL /
SCORER_ENTAIL_MODEL) to serve real checkpoints where available.
"""
from __future__ import annotations

import os
import re
import zlib
from collections import Counter
from typing import Protocol, Sequence

import numpy as np

_TOKEN_RE = re.compile(r"[0-9a-z]+")
_STOPWORDS = frozenset({"extract", "from", "the", "text", "is"})


class EntailBackend(Protocol):
    name: str

    def score_pairs(self, pairs: Sequence[tuple[str, str]]) -> list[float]: ...


class EmbedBackend(Protocol):
    name: str
    dim: int

    def embed(self, texts: Sequence[str]) -> np.ndarray: ...


class LexicalEntailBackend:
    """Containment of the hypothesis' content tokens in the premise."""

    name = "lexical-containment"

    def score_pairs(self, pairs: Sequence[tuple[str, str]]) -> list[float]:
        return [self._one(p, h) for p, h in pairs]

    @staticmethod
    def _one(premise: str, hypothesis: str) -> float:
        hyp = [
            t
            for t in _TOKEN_RE.findall(hypothesis.lower())
            if t not in _STOPWORDS
        ]
        if not hyp:
            return 0.0
        prem = Counter(_TOKEN_RE.findall(premise.lower()))
        hyp_counts = Counter(hyp)
        matched = sum(min(n, prem[tok]) for tok, n in hyp_counts.items())
        return min(max(matched / len(hyp), 0.0), 1.0)


class HashingEmbedBackend:
    """Signed character n-gram feature hashing to unit vectors."""

    name = "char-ngram-hashing"

    def __init__(self, dim: int = 384, ngram_sizes: tuple[int, ...] = (2, 3)):
        self.dim = dim
        self.ngram_sizes = ngram_sizes

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        out = np.zeros((len(texts), self.dim), dtype=np.float64)
        for k, text in enumerate(texts):
            vec = out[k]
            padded = f"#{text}#"
            for n in self.ngram_sizes:
                for i in range(max(len(padded) - n + 1, 0)):
                    h = zlib.crc32(padded[i : i + n].encode("utf-8"))
                    sign = 1.0 if h & 0x80000000 == 0 else -1.0
                    vec[(h & 0x7FFFFFFF) % self.dim] += sign
            norm = np.linalg.norm(vec)
            if norm == 0.0:
                vec[0] = 1.0
            else:
                vec /= norm
        return out


class SentenceTransformerEmbedBackend:  # pragma: no cover - needs weights
    """Real sentence embeddings; requires downloadable checkpoints."""

    def __init__(self, model_name: str):
        from sentence_transformers import SentenceTransformer

        self.name = model_name
        self._model = SentenceTransformer(model_name)
        self.dim = int(self._model.get_sentence_embedding_dimension())

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        vectors = self._model.encode(
            list(texts), normalize_embeddings=True, convert_to_numpy=True
        )
        return np.asarray(vectors, dtype=np.float64)


class CrossEncoderEntailBackend:  # pragma: no cover - needs weights
    """Cross-encoder entailment probabilities; requires checkpoints."""

    def __init__(self, model_name: str):
        from sentence_transformers import CrossEncoder

        self.name = model_name
        self._model = CrossEncoder(model_name)

    def score_pairs(self, pairs: Sequence[tuple[str, str]]) -> list[float]:
        raw = self._model.predict([list(p) for p in pairs])
        arr = np.asarray(raw, dtype=np.float64)
        if arr.ndim == 2:  # (entailment, ...) label layouts: take column 0
            arr = arr[:, 0]
        return [float(min(max(v, 0.0), 1.0)) for v in arr]


def build_backends() -> tuple[EntailBackend, EmbedBackend]:
    kind = os.environ.get("SCORER_BACKEND", "lexical").strip().lower()
    if kind in ("sentence-transformers", "neural"):
        embed_model = os.environ.get(
            "SCORER_EMBED_MODEL", "sentence-transformers/all-MiniLM-L6-v2"
        )
        entail_model = os.environ.get(
            "SCORER_ENTAIL_MODEL", "cross-encoder/nli-deberta-v3-base"
        )
        return (
            CrossEncoderEntailBackend(entail_model),
            SentenceTransformerEmbedBackend(embed_model),
        )
    dim = int(os.environ.get("SCORER_EMBED_DIM", "384"))
    return LexicalEntailBackend(), HashingEmbedBackend(dim=dim)
