"""Deterministic scripted LLM stand-in for offline pipeline runs.

Completions are a pure function of (system prompt, user prompt, sample
index, seed): the step is recognized from the default template's opening
line and a seeded RNG fabricates well-formed output for it. Defect rates
inject the failure modes the quality filters exist to catch (unparseable
output, off-instruction extra headers, N/A floods); injections are
counted per kind so tests can recover them exactly.
"""
from __future__ import annotations

import hashlib
import random
import re
import threading
from dataclasses import dataclass, field

from .gateway import ChatRequest

HEADER_POOL = (
    "position", "salary", "date", "location", "name", "price", "rating",
    "duration", "ingredient", "author", "title", "genre", "capacity",
    "warranty", "mileage", "dosage", "instructor", "venue", "sponsor",
    "deadline", "currency", "species", "habitat", "severity",
)

TEXT_TYPE_POOL = (
    "job postings", "product reviews", "news articles", "recipes",
    "rental listings", "event announcements", "clinical notes",
    "course catalogs", "travel itineraries", "financial summaries",
    "maintenance logs", "research abstracts",
)

# Optional qualifiers widen the instruction space so exact-duplicate draws
# across iterations stay rare.
TEXT_TYPE_QUALIFIERS = (
    "", "recent", "archived", "weekly", "regional", "featured",
)

DOMAIN_POOL = (
    "employment", "retail", "journalism", "cooking", "housing", "events",
    "healthcare", "education", "travel", "finance", "maintenance",
    "science", "sports", "ecology", "marketing", "astronomy",
)

OPEN_INSTRUCTION_POOL = (
    "Pull out the key information from this content.",
    "Organize the important details from the passage into a structured table.",
    "Identify the main facts covered by this text.",
    "Summarize the essential points mentioned in the document.",
    "Capture the core records described in the material.",
)

_STYLE_WRAPPERS = {
    "comprehensive query": "I would like a thorough breakdown covering every item: {s}",
    "casual interaction": "Hey, quick favor: {s}",
    "direct command": "Do the following right away. {s}",
    "professional request": "As per our requirements, please handle this task: {s}",
}

_SYLLABLES = (
    "ri", "vo", "ta", "mel", "zor", "ka", "lun", "bex", "dra", "fin",
    "gu", "hol", "jat", "kir", "lom", "nep",
)

_REFUSALS = (
    "I'm sorry, but the provided text does not contain the kind of "
    "structured records you asked about, so there is nothing to extract.",
    "Unfortunately the passage is narrative prose without extractable "
    "fields; no tabular answer can be produced for this request.",
)

_BOGUS_HEADERS = ("flux", "quorum", "zenith", "ombra", "parsec", "glyph")

_FIXED_VERB_RE = re.compile(r"extract the (.+?) from the (.+?)\.", re.IGNORECASE)
_FACT_RE = re.compile(r"The ([a-z ]+?) of entry (\d+) is ([^.\s]+)\.")

DEFECT_KINDS = ("malformed", "extra_header", "na_flood")


def _prompt_step(user_prompt: str) -> str:
    head = user_prompt.lstrip().splitlines()[0] if user_prompt.strip() else ""
    if head.startswith("I want to generate some real-world examples"):
        return "fixed_instruction_gen"
    if head.startswith("Give an information extraction instruction, we aim"):
        return "background_text_gen"
    if head.startswith("Give a background text, generate an instruction"):
        return "open_instruction_gen"
    if head.startswith("Given ten instructions, paraphrase them"):
        return "paraphrase"
    if head.startswith("Given an information extraction instruction"):
        if "produce a paragraph as the explanation" in head:
            return "table_gen_cot"
        return "table_gen_direct"
    return "unknown"


def _tail_slot(prompt: str, label: str) -> str:
    idx = prompt.rfind(f" - {label}: ")
    if idx < 0:
        return ""
    return prompt[idx + len(f" - {label}: ") :]


@dataclass
class MockBackend:
    """Seeded fake chat backend mirroring the synthesis pipeline's steps."""

    seed: int
    defect_rates: dict[str, float] = field(default_factory=dict)
    items_per_list: int = 10

    def __post_init__(self) -> None:
        unknown = set(self.defect_rates) - set(DEFECT_KINDS)
        if unknown:
            raise ValueError(f"unknown defect kinds: {sorted(unknown)}")
        for kind, rate in self.defect_rates.items():
            if not 0.0 <= rate <= 1.0:
                raise ValueError(f"defect rate for {kind} must be in [0, 1]")
        if sum(self.defect_rates.values()) > 1.0:
            raise ValueError("defect rates must sum to at most 1")
        self.defect_counts: dict[str, int] = {k: 0 for k in DEFECT_KINDS}
        self._lock = threading.Lock()

    # -- public API ------------------------------------------------------

    def complete(self, req: ChatRequest) -> list[str]:
        return [
            self._one(req.system_prompt, req.user_prompt, i)
            for i in range(req.n_samples)
        ]

    def reset_counters(self) -> None:
        with self._lock:
            self.defect_counts = {k: 0 for k in DEFECT_KINDS}

    # -- internals -------------------------------------------------------

    def _rng(self, *parts: object) -> random.Random:
        digest = hashlib.sha256(
            "\x1f".join(str(p) for p in (self.seed, *parts)).encode("utf-8")
        ).digest()
        return random.Random(int.from_bytes(digest[:8], "big"))

    def _one(self, system: str, user: str, sample: int) -> str:
        step = _prompt_step(user)
        rng = self._rng(system, user, sample)
        if step == "fixed_instruction_gen":
            return self._fixed_instruction_list(rng)
        if step == "background_text_gen":
            return self._background_text(user, rng)
        if step == "open_instruction_gen":
            return self._open_instruction(rng)
        if step == "paraphrase":
            return self._paraphrases(user)
        if step in ("table_gen_direct", "table_gen_cot"):
            return self._table(user, rng, cot=step == "table_gen_cot")
        # Unknown prompt: echo something harmless but deterministic.
        return "Understood."

    def _fixed_instruction_list(self, rng: random.Random) -> str:
        blocks = []
        for i in range(1, self.items_per_list + 1):
            headers = rng.sample(HEADER_POOL, rng.randint(2, 4))
            qualifier = rng.choice(TEXT_TYPE_QUALIFIERS)
            text_type = rng.choice(TEXT_TYPE_POOL)
            if qualifier:
                text_type = f"{qualifier} {text_type}"
            domain = rng.choice(DOMAIN_POOL)
            listed = ", ".join(headers[:-1]) + " and " + headers[-1]
            instruction = f"Extract the {listed} from the {text_type}."
            blocks.append(
                f"Example {i}:\n - Instruction: {instruction}\n - Domain: {domain}"
            )
        return "\n".join(blocks)

    def _background_text(self, user: str, rng: random.Random) -> str:
        instruction = _tail_slot(user, "Instruction").strip()
        match = _FIXED_VERB_RE.search(instruction)
        if match:
            headers = [h.strip() for h in re.split(r",| and ", match.group(1)) if h.strip()]
            text_type = match.group(2)
        else:
            headers = list(rng.sample(HEADER_POOL, 2))
            text_type = rng.choice(TEXT_TYPE_POOL)
        n_entries = rng.randint(2, 4)
        sentences = [
            f"Below are {n_entries} {text_type} entries collected this week, "
            f"each described in full detail for the records."
        ]
        for k in range(1, n_entries + 1):
            for h in headers:
                sentences.append(f"The {h} of entry {k} is {self._value(rng)}.")
        sentences.append(
            "All of the entries above were reviewed and confirmed before "
            "publication by the responsible team."
        )
        return " ".join(sentences)

    def _open_instruction(self, rng: random.Random) -> str:
        base = rng.choice(OPEN_INSTRUCTION_POOL)
        if rng.random() < 0.5:
            base = base[:-1] + " for later reference."
        return base

    def _paraphrases(self, user: str) -> str:
        lines = []
        for m in re.finditer(r"Sentence \d+ \(([^)]+)\): (.+)", user):
            style, sentence = m.group(1), m.group(2)
            wrapper = _STYLE_WRAPPERS.get(style, "{s}")
            lines.append(wrapper.format(s=sentence))
        return "\n".join(lines)

    def _value(self, rng: random.Random) -> str:
        return (
            rng.choice(_SYLLABLES)
            + rng.choice(_SYLLABLES)
            + str(rng.randint(10, 99))
        )

    def _pick_defect(self, rng: random.Random) -> str | None:
        roll = rng.random()
        upto = 0.0
        for kind in DEFECT_KINDS:
            upto += self.defect_rates.get(kind, 0.0)
            if roll < upto:
                return kind
        return None

    def _table(self, user: str, rng: random.Random, cot: bool) -> str:
        instruction = _tail_slot(user, "Instruction")
        instruction = instruction.split("\n - Text: ", 1)[0].strip()
        text = _tail_slot(user, "Text").strip()

        defect = self._pick_defect(rng)
        if defect == "malformed":
            with self._lock:
                self.defect_counts["malformed"] += 1
            return rng.choice(_REFUSALS)

        match = _FIXED_VERB_RE.search(instruction)
        facts = _FACT_RE.findall(text)
        if match:
            headers = [h.strip() for h in re.split(r",| and ", match.group(1)) if h.strip()]
        else:
            headers = []
            for h, _, _ in facts:
                if h not in headers:
                    headers.append(h)
            if not headers:
                headers = ["name", "value"]
        by_entry: dict[str, dict[str, str]] = {}
        for h, entry, value in facts:
            by_entry.setdefault(entry, {})[h] = value
        entries = sorted(by_entry, key=int) or ["1", "2"]

        bogus: set[str] = set()
        if defect == "extra_header":
            with self._lock:
                self.defect_counts["extra_header"] += 1
            extra = list(_BOGUS_HEADERS[: len(headers) + 1])
            bogus = set(extra)
            headers = headers + extra

        rows = []
        for k, entry in enumerate(entries, 1):
            row = []
            for j, h in enumerate(headers):
                if h in bogus:
                    # invented content, guaranteed absent from the text
                    row.append(f"unk{k}{j}")
                else:
                    row.append(by_entry.get(entry, {}).get(h, "N/A"))
            rows.append(row)

        if defect == "na_flood":
            with self._lock:
                self.defect_counts["na_flood"] += 1
            flooded = 0
            for row in rows:
                for j in range(len(row)):
                    if flooded == 4:
                        break
                    row[j] = "N/A"
                    flooded += 1

        lines = ["| " + " | ".join(headers) + " |"]
        lines.append("| " + " | ".join("---" for _ in headers) + " |")
        for row in rows:
            lines.append("| " + " | ".join(row) + " |")
        table = "\n".join(lines)

        if not cot:
            return table
        explanation = (
            f"The passage enumerates {len(entries)} entries and states "
            f"{', '.join(headers[: max(len(headers) - 1, 1)])} and "
            f"{headers[-1]} for each of them, so the table carries one row "
            f"per entry with those columns."
        )
        return explanation + "\n" + table
