"""HTTP client for the entailment/embedding scorer service.

Implements the same duck types as the offline stand-ins (LexicalScorer,
HashingEmbedder) over the service's /entail and /embed endpoints, so the
filters and the evaluator can switch backends by configuration. The base
URL comes from IE_FORGE_SCORER_URL unless given explicitly.
"""
from __future__ import annotations

import os
from typing import Sequence

import numpy as np
import requests

from .filters import ScorerUnavailable
from .metrics import EmbedderUnavailable

ENV_SCORER_URL = "IE_FORGE_SCORER_URL"


class HttpScorer:
    """Remote EntailmentScorer + Embedder over the scorer service."""

    def __init__(
        self,
        base_url: str | None = None,
        token: str | None = None,
        timeout: float = 60.0,
        max_retries: int = 2,
    ):
        self.base_url = (base_url or os.environ.get(ENV_SCORER_URL, "")).rstrip("/")
        if not self.base_url:
            raise ValueError(f"no scorer endpoint configured ({ENV_SCORER_URL} unset)")
        self.token = token
        self.timeout = timeout
        self.max_retries = max_retries

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        if self.token:
            headers["Authorization"] = f"Bearer {self.token}"
        return headers

    def _post(self, path: str, payload: dict, error: type[Exception]) -> dict:
        last: Exception | None = None
        for _ in range(self.max_retries + 1):
            try:
                resp = requests.post(
                    f"{self.base_url}{path}",
                    json=payload,
                    headers=self._headers(),
                    timeout=self.timeout,
                )
            except requests.RequestException as exc:
                last = exc
                continue
            if resp.status_code == 200:
                try:
                    return resp.json()
                except ValueError as exc:
                    raise error(f"non-JSON response from {path}") from exc
            last = error(f"{path} returned {resp.status_code}: {resp.text[:200]}")
        raise error(str(last))

    def health(self) -> dict:
        try:
            resp = requests.get(
                f"{self.base_url}/health", headers=self._headers(), timeout=self.timeout
            )
        except requests.RequestException as exc:
            raise ScorerUnavailable(str(exc)) from exc
        if resp.status_code != 200:
            raise ScorerUnavailable(f"/health returned {resp.status_code}")
        return resp.json()

    # EntailmentScorer surface

    def score(self, premise: str, hypothesis: str) -> float:
        body = self._post(
            "/entail",
            {"premise": premise, "hypothesis": hypothesis},
            ScorerUnavailable,
        )
        return self._check_score(body.get("score"))

    def score_many(self, pairs: Sequence[tuple[str, str]]) -> list[float]:
        if not pairs:
            return []
        body = self._post(
            "/entail",
            {"pairs": [{"premise": p, "hypothesis": h} for p, h in pairs]},
            ScorerUnavailable,
        )
        scores = body.get("scores")
        if not isinstance(scores, list) or len(scores) != len(pairs):
            raise ScorerUnavailable("batch response length mismatch")
        return [self._check_score(s) for s in scores]

    @staticmethod
    def _check_score(value) -> float:
        try:
            score = float(value)
        except (TypeError, ValueError) as exc:
            raise ScorerUnavailable(f"non-numeric score {value!r}") from exc
        if not 0.0 <= score <= 1.0:
            raise ScorerUnavailable(f"score {score} out of range")
        return score

    # Embedder surface

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        if not texts:
            return np.zeros((0, 0), dtype=np.float64)
        body = self._post("/embed", {"texts": list(texts)}, EmbedderUnavailable)
        vectors = body.get("vectors")
        if not isinstance(vectors, list) or len(vectors) != len(texts):
            raise EmbedderUnavailable("embed response length mismatch")
        arr = np.asarray(vectors, dtype=np.float64)
        if arr.ndim != 2:
            raise EmbedderUnavailable("embed vectors must be 2-D")
        norms = np.linalg.norm(arr, axis=1)
        if not np.allclose(norms, 1.0, atol=1e-5):
            raise EmbedderUnavailable("embed vectors are not unit-normalized")
        return arr
