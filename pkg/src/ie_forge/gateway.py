"""Prompt rendering and chat-completion dispatch.

Templates live as editable text files (package defaults under
``prompts/``, overridable via a directory), demonstrations as JSON files
next to them. The remote backend speaks a chat-completions-style JSON
protocol configured through IE_FORGE_API_URL / IE_FORGE_API_KEY /
IE_FORGE_MODEL; the deterministic mock backend lives in
``ie_forge.mock_backend``.
"""
from __future__ import annotations

import json
import os
import re
import threading
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Protocol, Sequence

import requests

STEPS = (
    "fixed_instruction_gen",
    "background_text_gen",
    "open_instruction_gen",
    "paraphrase",
    "table_gen_direct",
    "table_gen_cot",
)

PARAPHRASE_STYLES = (
    "comprehensive query",
    "casual interaction",
    "direct command",
    "professional request",
)

DEFAULT_SYSTEM_PROMPT = "You are a helpful assistant."

ENV_API_URL = "IE_FORGE_API_URL"
ENV_API_KEY = "IE_FORGE_API_KEY"
ENV_MODEL = "IE_FORGE_MODEL"


class MissingSlot(KeyError):
    """A template slot required by the step was not provided."""

    def __init__(self, name: str):
        self.name = name
        super().__init__(name)


class WrongBatchSize(ValueError):
    """The paraphrase step takes exactly ten sentences."""


class BackendUnavailable(RuntimeError):
    """The completion backend kept failing after all retries."""


class RateLimited(BackendUnavailable):
    """The backend rate limit persisted through the retry budget."""

    def __init__(self, message: str, retry_after: float | None = None):
        self.retry_after = retry_after
        super().__init__(message)


class InvalidResponse(RuntimeError):
    """The backend answered with a payload we cannot interpret."""


@dataclass(frozen=True)
class ChatRequest:
    """One chat-completion request; n_samples completions come back."""

    system_prompt: str
    user_prompt: str
    temperature: float = 1.0
    top_p: float = 0.75
    max_tokens: int = 2048
    n_samples: int = 1

    def __post_init__(self) -> None:
        if not self.system_prompt or not self.user_prompt:
            raise ValueError("prompts must be non-empty")
        if not 0.0 <= self.temperature <= 2.0:
            raise ValueError("temperature must be within [0, 2]")
        if not 0.0 < self.top_p <= 1.0:
            raise ValueError("top_p must be within (0, 1]")
        if self.max_tokens <= 0:
            raise ValueError("max_tokens must be positive")
        if self.n_samples <= 0:
            raise ValueError("n_samples must be positive")


@dataclass(frozen=True)
class InferenceDefaults:
    """Reference decoding parameters for a fine-tuned extractor.

    top_k and num_beams are recorded for completeness only; hosted chat
    APIs expose temperature/top_p, so the gateway never sends them.
    """

    temperature: float = 0.1
    top_p: float = 0.75
    top_k: int = 40
    num_beams: int = 4
    max_tokens: int = 2048


_SLOT_RE = re.compile(r"\{(demonstrations|instruction|text|sentences)\}")

_DEMO_LAYOUTS: dict[str, tuple[tuple[str, str], ...]] = {
    # (record key, rendered label); a leading space mirrors the template
    # listing except for the table/explanation lines.
    "fixed_instruction_gen": (("instruction", " - Instruction"), ("domain", " - Domain")),
    "background_text_gen": (("instruction", " - Instruction"), ("text", " - Text")),
    "open_instruction_gen": (("text", " - Text"), ("instruction", " - Instruction")),
    "table_gen_direct": (
        ("instruction", " - Instruction"),
        ("text", " - Text"),
        ("table", "- Table"),
    ),
    "table_gen_cot": (
        ("instruction", " - Instruction"),
        ("text", " - Text"),
        ("explanation", "- Explanation"),
        ("table", "- Table"),
    ),
}


class PromptLibrary:
    """Loads step templates + demonstrations and renders prompts."""

    def __init__(self, directory: str | Path | None = None):
        self._dir = Path(directory) if directory else None
        self._templates: dict[str, str] = {}
        self._demos: dict[str, list[dict]] = {}

    def _read(self, name: str) -> str:
        if self._dir is not None:
            candidate = self._dir / name
            if candidate.exists():
                return candidate.read_text(encoding="utf-8")
        return (
            resources.files("ie_forge")
            .joinpath(f"prompts/{name}")
            .read_text(encoding="utf-8")
        )

    def template(self, step: str) -> str:
        if step not in STEPS:
            raise ValueError(f"unknown step {step!r}")
        if step not in self._templates:
            self._templates[step] = self._read(f"{step}.txt").rstrip("\n")
        return self._templates[step]

    def demonstrations(self, step: str) -> list[dict]:
        if step not in self._demos:
            if step == "paraphrase":
                self._demos[step] = []
            else:
                self._demos[step] = json.loads(self._read(f"demos/{step}.json"))
        return self._demos[step]

    def render_demonstrations(self, step: str, demos: Sequence[dict]) -> str:
        layout = _DEMO_LAYOUTS[step]
        blocks = []
        for i, demo in enumerate(demos, 1):
            lines = [f"Example {i}:"]
            for key, label in layout:
                lines.append(f"{label}: {demo[key]}")
            blocks.append("\n".join(lines))
        return "\n".join(blocks)

    def render(self, step: str, context: dict) -> str:
        """Substitute the step's slots into its template.

        The paraphrase step takes ``sentences``: exactly ten
        (instruction, style) pairs, rendered as numbered sentence lines.
        Other steps take ``demonstrations`` (defaulting to the shipped
        demo files) plus ``instruction`` / ``text`` as their templates
        require.
        """
        template = self.template(step)
        values: dict[str, str] = {}

        if "{demonstrations}" in template:
            demos = context.get("demonstrations")
            if demos is None:
                demos = self.demonstrations(step)
            values["demonstrations"] = self.render_demonstrations(step, demos)

        if step == "paraphrase":
            sentences = context.get("sentences")
            if sentences is None:
                raise MissingSlot("sentences")
            if len(sentences) != 10:
                raise WrongBatchSize(
                    f"paraphrase takes exactly 10 sentences, got {len(sentences)}"
                )
            lines = []
            for i, (instruction, style) in enumerate(sentences, 1):
                if style not in PARAPHRASE_STYLES:
                    raise ValueError(f"unknown style {style!r}")
                lines.append(f"Sentence {i} ({style}): {instruction}")
            values["sentences"] = "\n".join(lines)

        def fill(match: re.Match) -> str:
            name = match.group(1)
            if name in values:
                return values[name]
            if name not in context:
                raise MissingSlot(name)
            return str(context[name])

        return _SLOT_RE.sub(fill, template)


def render_prompt(
    step: str, context: dict, library: PromptLibrary | None = None
) -> str:
    """Render one pipeline step's prompt; deterministic in (step, context)."""
    return (library or PromptLibrary()).render(step, context)


class CompletionBackend(Protocol):
    def complete(self, req: ChatRequest) -> list[str]: ...


class RemoteBackend:
    """Chat-completions JSON client with bounded retries and concurrency.

    POSTs ``{model, messages, temperature, top_p, max_tokens, n}`` and
    expects ``{choices: [{message: {content}}]}``. Transient failures
    (connection errors, 5xx, 429) retry with exponential backoff until the
    attempt cap; 429 exhaustion surfaces as RateLimited with the server's
    retry-after when present.
    """

    def __init__(
        self,
        url: str | None = None,
        api_key: str | None = None,
        model: str | None = None,
        max_retries: int = 4,
        backoff_base: float = 0.5,
        backoff_cap: float = 30.0,
        timeout: float = 120.0,
        max_in_flight: int = 4,
    ):
        self.url = url or os.environ.get(ENV_API_URL)
        if not self.url:
            raise ValueError(f"no endpoint configured ({ENV_API_URL} unset)")
        self.api_key = api_key or os.environ.get(ENV_API_KEY)
        self.model = model or os.environ.get(ENV_MODEL, "default")
        self.max_retries = max_retries
        self.backoff_base = backoff_base
        self.backoff_cap = backoff_cap
        self.timeout = timeout
        self._slots = threading.BoundedSemaphore(max_in_flight)

    def _post(self, payload: dict) -> requests.Response:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        return requests.post(
            self.url, json=payload, headers=headers, timeout=self.timeout
        )

    def _sleep(self, attempt: int, retry_after: float | None) -> None:
        delay = min(self.backoff_base * (2**attempt), self.backoff_cap)
        time.sleep(retry_after if retry_after is not None else delay)

    def complete(self, req: ChatRequest) -> list[str]:
        payload = {
            "model": self.model,
            "messages": [
                {"role": "system", "content": req.system_prompt},
                {"role": "user", "content": req.user_prompt},
            ],
            "temperature": req.temperature,
            "top_p": req.top_p,
            "max_tokens": req.max_tokens,
            "n": req.n_samples,
        }
        last_retry_after: float | None = None
        rate_limited = False
        with self._slots:
            for attempt in range(self.max_retries + 1):
                try:
                    resp = self._post(payload)
                except requests.RequestException as exc:
                    if attempt == self.max_retries:
                        raise BackendUnavailable(str(exc)) from exc
                    self._sleep(attempt, None)
                    continue
                if resp.status_code == 429:
                    rate_limited = True
                    header = resp.headers.get("Retry-After")
                    try:
                        last_retry_after = float(header) if header else None
                    except ValueError:
                        last_retry_after = None
                    if attempt == self.max_retries:
                        break
                    self._sleep(attempt, last_retry_after)
                    continue
                if resp.status_code >= 500:
                    if attempt == self.max_retries:
                        raise BackendUnavailable(
                            f"server error {resp.status_code}"
                        )
                    self._sleep(attempt, None)
                    continue
                if resp.status_code != 200:
                    raise InvalidResponse(
                        f"unexpected status {resp.status_code}: {resp.text[:200]}"
                    )
                return self._parse(resp, req.n_samples)
        if rate_limited:
            raise RateLimited(
                "rate limit persisted through retries", retry_after=last_retry_after
            )
        raise BackendUnavailable("retries exhausted")  # pragma: no cover

    @staticmethod
    def _parse(resp: requests.Response, n_samples: int) -> list[str]:
        try:
            body = resp.json()
            choices = body["choices"]
            texts = [c["message"]["content"] for c in choices]
        except (ValueError, KeyError, TypeError) as exc:
            raise InvalidResponse(f"malformed payload: {exc}") from exc
        if len(texts) != n_samples or not all(isinstance(t, str) for t in texts):
            raise InvalidResponse(
                f"expected {n_samples} string completions, got {len(texts)}"
            )
        return texts


@dataclass
class GatewayConfig:
    """Resolved backend selection for a run."""

    backend: str = "mock"  # mock | remote
    seed: int | None = None
    defect_rates: dict[str, float] = field(default_factory=dict)
    max_in_flight: int = 4

    def build(self) -> CompletionBackend:
        if self.backend == "remote":
            return RemoteBackend(max_in_flight=self.max_in_flight)
        if self.backend == "mock":
            if self.seed is None:
                raise ValueError("mock backend requires a seed")
            from .mock_backend import MockBackend

            return MockBackend(seed=self.seed, defect_rates=self.defect_rates)
        raise ValueError(f"unknown backend {self.backend!r}")
