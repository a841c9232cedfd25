"""Six-step training-data synthesis: instructions -> texts -> open
instructions -> paraphrases -> raw tables -> filtering.

Every step checkpoints its output as JSONL in the run directory and is
skipped on resume when its file already exists. With the mock backend and
a fixed seed the whole run is bit-reproducible.
"""
from __future__ import annotations

import json
import logging
import random
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .dataset import Instance, write_jsonl
from .filters import (
    EntailmentScorer,
    FilterReport,
    FilterThresholds,
    RawPair,
    apply_filters,
)
from .gateway import (
    BackendUnavailable,
    ChatRequest,
    CompletionBackend,
    DEFAULT_SYSTEM_PROMPT,
    InvalidResponse,
    PARAPHRASE_STYLES,
    PromptLibrary,
)

log = logging.getLogger(__name__)

CHECKPOINTS = {
    "instructions": "step_01_instructions.jsonl",
    "texts": "step_02_texts.jsonl",
    "open_instructions": "step_03_open_instructions.jsonl",
    "paraphrased": "step_04_paraphrased.jsonl",
    "raw": "step_05_raw.jsonl",
    "survivors": "survivors.jsonl",
    "report": "report.json",
}

_ITEM_RE = re.compile(r"-\s*Instruction:\s*(.+)\n\s*-\s*Domain:\s*(.+)")
_FIXED_PATTERN = re.compile(r"extract the (.+?) from the", re.IGNORECASE)
_TOKEN_RE = re.compile(r"[0-9a-z]+")

_LEAK_STOPWORDS = frozenset(
    "extract pull list the a an and from of out these this that mentioned "
    "in for with to please me all each".split()
)


class AllIterationsFailed(RuntimeError):
    """No fixed instruction survived any generation iteration."""


@dataclass
class PipelineConfig:
    """Run-shaping knobs; the full-scale preset uses 500 iterations."""

    seed: int
    n_iterations: int = 2
    instructions_per_iteration: int = 10
    paraphrase_batch_size: int = 10
    variants: tuple[str, ...] = ("direct", "cot")
    concurrency: int = 4
    min_text_words: int = 20
    demo_sample_max: int = 3
    thresholds: FilterThresholds = field(default_factory=FilterThresholds)

    def __post_init__(self) -> None:
        for name in ("n_iterations", "instructions_per_iteration",
                     "paraphrase_batch_size", "concurrency"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        for v in self.variants:
            if v not in ("direct", "cot"):
                raise ValueError(f"unknown variant {v!r}")
        if not self.variants:
            raise ValueError("at least one variant is required")

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "n_iterations": self.n_iterations,
            "instructions_per_iteration": self.instructions_per_iteration,
            "paraphrase_batch_size": self.paraphrase_batch_size,
            "variants": list(self.variants),
            "concurrency": self.concurrency,
            "min_text_words": self.min_text_words,
            "demo_sample_max": self.demo_sample_max,
            "thresholds": self.thresholds.to_dict(),
        }

    @classmethod
    def full_scale(cls, seed: int, **overrides) -> "PipelineConfig":
        """Full-scale preset: 500 iterations of 10 instructions, both
        variants, targeting 5000 fixed + 5000 open pairs and 20,000 raw
        instances before filtering."""
        params = {
            "seed": seed,
            "n_iterations": 500,
            "instructions_per_iteration": 10,
            "paraphrase_batch_size": 10,
            "variants": ("direct", "cot"),
            "min_text_words": 100,
        }
        params.update(overrides)
        return cls(**params)


def _tokens(s: str) -> list[str]:
    return _TOKEN_RE.findall(s.lower())


def header_leak(open_instruction: str, fixed_instruction: str) -> bool:
    """True when the open instruction names a header of its fixed twin.

    Header candidates come from the "extract the ... from the ..." pattern
    when present, otherwise from the content tokens ahead of the last
    " from "; matching is case-insensitive on whole tokens.
    """
    m = _FIXED_PATTERN.search(fixed_instruction)
    if m:
        candidates = {
            t
            for part in re.split(r",| and ", m.group(1))
            for t in _tokens(part)
        }
    else:
        lowered = fixed_instruction.lower()
        idx = lowered.rfind(" from ")
        segment = fixed_instruction[:idx] if idx >= 0 else fixed_instruction
        candidates = set(_tokens(segment)) - _LEAK_STOPWORDS
    return bool(candidates & set(_tokens(open_instruction)))


def parse_instruction_list(completion: str) -> list[tuple[str, str]]:
    """(instruction, domain) pairs out of a generated example list."""
    return [
        (i.strip(), d.strip())
        for i, d in _ITEM_RE.findall(completion)
        if i.strip() and d.strip()
    ]


def split_cot_output(completion: str) -> tuple[str | None, str]:
    """Split a CoT completion into (explanation, raw table output)."""
    lines = completion.splitlines()
    first_pipe = next((i for i, ln in enumerate(lines) if "|" in ln), None)
    if first_pipe is None:
        explanation = completion.strip()
        return (explanation or None), ""
    explanation = "\n".join(lines[:first_pipe]).strip()
    return (explanation or None), "\n".join(lines[first_pipe:])


def _request(user_prompt: str, n_samples: int = 1) -> ChatRequest:
    return ChatRequest(
        system_prompt=DEFAULT_SYSTEM_PROMPT,
        user_prompt=user_prompt,
        temperature=1.0,
        n_samples=n_samples,
    )


def generate_fixed_instructions(
    cfg: PipelineConfig,
    backend: CompletionBackend,
    library: PromptLibrary | None = None,
) -> tuple[list[tuple[str, str]], dict]:
    """Collect (instruction, domain) pairs over cfg.n_iterations requests.

    Each iteration widens the demonstration block with a seeded sample of
    previously generated instructions, keeping requests distinct while the
    backend stays a pure function of its prompt. Duplicate instructions
    (exact trimmed match) are removed across iterations.
    """
    library = library or PromptLibrary()
    base_demos = library.demonstrations("fixed_instruction_gen")
    rng = random.Random(f"{cfg.seed}:demos")
    seen: set[str] = set()
    collected: list[tuple[str, str]] = []
    parse_drops = 0
    failed_iterations = 0

    for _ in range(cfg.n_iterations):
        demos = list(base_demos)
        pool = collected
        if pool:
            k = min(cfg.demo_sample_max, len(pool))
            demos += [
                {"instruction": ins, "domain": dom}
                for ins, dom in rng.sample(pool, k)
            ]
        prompt = library.render("fixed_instruction_gen", {"demonstrations": demos})
        try:
            completion = backend.complete(_request(prompt))[0]
        except (BackendUnavailable, InvalidResponse) as exc:
            log.warning("instruction iteration failed: %s", exc)
            failed_iterations += 1
            continue
        items = parse_instruction_list(completion)
        parse_drops += max(cfg.instructions_per_iteration - len(items), 0)
        for instruction, domain in items:
            if instruction in seen:
                continue
            seen.add(instruction)
            collected.append((instruction, domain))

    if not collected:
        raise AllIterationsFailed(
            f"no instructions parsed across {cfg.n_iterations} iterations"
        )
    stats = {
        "iterations": cfg.n_iterations,
        "failed_iterations": failed_iterations,
        "parse_drops": parse_drops,
        "instructions": len(collected),
    }
    return collected, stats


def generate_background_text(
    instruction: str,
    domain: str,
    backend: CompletionBackend,
    library: PromptLibrary | None = None,
    min_words: int = 20,
) -> str | None:
    """One background text per instruction; short outputs retry once."""
    library = library or PromptLibrary()
    prompt = library.render("background_text_gen", {"instruction": instruction})
    for attempt in range(2):
        try:
            text = backend.complete(_request(prompt))[0].strip()
        except (BackendUnavailable, InvalidResponse) as exc:
            log.warning("text generation failed for %r: %s", instruction, exc)
            return None
        if len(text.split()) >= min_words:
            return text
        # nudge the retry so deterministic backends can produce a new draft
        prompt = prompt + "\nPlease provide a longer, more detailed text."
    log.info("dropping too-short text for %r", instruction)
    return None


def generate_open_instruction(
    text: str,
    fixed_instruction: str,
    backend: CompletionBackend,
    library: PromptLibrary | None = None,
) -> tuple[str | None, bool]:
    """One open instruction per text, plus a header-leak warning flag.

    A leaky instruction is retried once, then kept with the warning set.
    """
    library = library or PromptLibrary()
    prompt = library.render("open_instruction_gen", {"text": text})
    leak = False
    for attempt in range(2):
        try:
            instruction = backend.complete(_request(prompt))[0].strip()
        except (BackendUnavailable, InvalidResponse) as exc:
            log.warning("open instruction failed: %s", exc)
            return None, False
        if not instruction:
            return None, False
        leak = header_leak(instruction, fixed_instruction)
        if not leak:
            return instruction, False
        prompt = prompt + "\nDo not mention the specific field names."
    log.info("open instruction still leaks headers, keeping with warning")
    return instruction, True


def paraphrase_batch(
    instructions: list[str],
    styles: list[str],
    backend: CompletionBackend,
    library: PromptLibrary | None = None,
) -> tuple[list[str], bool]:
    """Paraphrase exactly ten instructions in their assigned styles.

    When the completion does not split into exactly ten lines the whole
    batch is discarded and the originals are returned unparaphrased.
    """
    if len(instructions) != len(styles):
        raise ValueError("instructions and styles must align")
    library = library or PromptLibrary()
    prompt = library.render(
        "paraphrase", {"sentences": list(zip(instructions, styles))}
    )
    try:
        completion = backend.complete(_request(prompt))[0]
    except (BackendUnavailable, InvalidResponse) as exc:
        log.warning("paraphrase batch failed: %s", exc)
        return list(instructions), False
    lines = [ln.strip() for ln in completion.splitlines() if ln.strip()]
    if len(lines) != len(instructions):
        log.info(
            "paraphrase count mismatch (%d != %d), discarding batch",
            len(lines),
            len(instructions),
        )
        return list(instructions), False
    return lines, True


def generate_table(
    instruction: str,
    text: str,
    variant: str,
    backend: CompletionBackend,
    library: PromptLibrary | None = None,
) -> tuple[str | None, str]:
    """(explanation, raw table output) for one pair and variant."""
    library = library or PromptLibrary()
    step = "table_gen_cot" if variant == "cot" else "table_gen_direct"
    prompt = library.render(step, {"instruction": instruction, "text": text})
    completion = backend.complete(_request(prompt))[0]
    if variant == "cot":
        return split_cot_output(completion)
    return None, completion


def _load_checkpoint(path: Path) -> list[dict] | None:
    if not path.exists():
        return None
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def _meta_path(path: Path) -> Path:
    return path.with_suffix(".meta.json")


def _step(out_dir: Path, name: str, producer) -> tuple[list[dict], dict]:
    """Run one checkpointed step; reuse its files when they already exist.

    ``producer`` returns (records, meta); records land in the step's JSONL
    file, meta in a small sidecar JSON next to it.
    """
    path = out_dir / CHECKPOINTS[name]
    cached = _load_checkpoint(path)
    if cached is not None:
        log.info("resuming %s from %s", name, path)
        meta_file = _meta_path(path)
        meta = (
            json.loads(meta_file.read_text(encoding="utf-8"))
            if meta_file.exists()
            else {}
        )
        return cached, meta
    records, meta = producer()
    write_jsonl(records, path)
    if meta:
        _meta_path(path).write_text(
            json.dumps(meta, ensure_ascii=False, sort_keys=True) + "\n",
            encoding="utf-8",
        )
    return records, meta


def run_pipeline(
    cfg: PipelineConfig,
    backend: CompletionBackend,
    scorer: EntailmentScorer,
    out_dir: str | Path,
) -> tuple[list[Instance], FilterReport]:
    """Execute the full synthesis run into out_dir and return survivors."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    library = PromptLibrary()

    def pool():
        return ThreadPoolExecutor(max_workers=cfg.concurrency)

    # step 1: fixed instructions
    def make_instructions() -> tuple[list[dict], dict]:
        pairs, stats = generate_fixed_instructions(cfg, backend, library)
        records = [
            {"index": i, "instruction": ins, "domain": dom}
            for i, (ins, dom) in enumerate(pairs)
        ]
        return records, stats

    instructions, step1_stats = _step(out_dir, "instructions", make_instructions)

    # step 2: background texts
    def make_texts() -> tuple[list[dict], dict]:
        with pool() as ex:
            texts = list(
                ex.map(
                    lambda rec: generate_background_text(
                        rec["instruction"],
                        rec["domain"],
                        backend,
                        library,
                        cfg.min_text_words,
                    ),
                    instructions,
                )
            )
        records = []
        for rec, text in zip(instructions, texts):
            if text is None:
                continue
            records.append(
                {
                    "index": rec["index"],
                    "instruction": rec["instruction"],
                    "domain": rec["domain"],
                    "text": text,
                }
            )
        return records, {}

    texts, _ = _step(out_dir, "texts", make_texts)

    # step 3: open instructions
    def make_open() -> tuple[list[dict], dict]:
        with pool() as ex:
            results = list(
                ex.map(
                    lambda rec: generate_open_instruction(
                        rec["text"], rec["instruction"], backend, library
                    ),
                    texts,
                )
            )
        records = []
        for rec, (open_ins, leak) in zip(texts, results):
            out = dict(rec)
            out["open_instruction"] = open_ins
            out["leak_warning"] = leak
            records.append(out)
        return records, {}

    opens, _ = _step(out_dir, "open_instructions", make_open)

    # step 4: assemble pairs and paraphrase in batches of ten
    def make_paraphrased() -> tuple[list[dict], dict]:
        pairs: list[dict] = []
        for rec in opens:
            pairs.append(
                {
                    "pair_id": f"f{rec['index']:05d}",
                    "category": "fixed",
                    "instruction": rec["instruction"],
                    "domain": rec["domain"],
                    "text": rec["text"],
                    "leak_warning": False,
                }
            )
            if rec.get("open_instruction"):
                pairs.append(
                    {
                        "pair_id": f"o{rec['index']:05d}",
                        "category": "open",
                        "instruction": rec["open_instruction"],
                        "domain": rec["domain"],
                        "text": rec["text"],
                        "leak_warning": bool(rec.get("leak_warning")),
                    }
                )
        style_rng = random.Random(f"{cfg.seed}:styles")
        for pair in pairs:
            pair["style"] = style_rng.choice(PARAPHRASE_STYLES)
        order_rng = random.Random(f"{cfg.seed}:batches")
        shuffled = list(pairs)
        order_rng.shuffle(shuffled)
        size = cfg.paraphrase_batch_size
        discarded_batches = 0
        for i in range(0, len(shuffled) - len(shuffled) % size, size):
            batch = shuffled[i : i + size]
            outputs, ok = paraphrase_batch(
                [p["instruction"] for p in batch],
                [p["style"] for p in batch],
                backend,
                library,
            )
            if ok:
                for p, new_ins in zip(batch, outputs):
                    p["instruction"] = new_ins
                    p["paraphrased"] = True
            else:
                discarded_batches += 1
        for pair in pairs:
            pair.setdefault("paraphrased", False)
        return pairs, {"discarded_batches": discarded_batches}

    paraphrased, step4_meta = _step(out_dir, "paraphrased", make_paraphrased)
    discarded_batches = int(step4_meta.get("discarded_batches", 0))

    # step 5: table generation per pair and variant
    def make_raw() -> tuple[list[dict], dict]:
        tasks = [
            (pair, variant)
            for pair in paraphrased
            for variant in cfg.variants
        ]

        def run(task):
            pair, variant = task
            try:
                explanation, raw = generate_table(
                    pair["instruction"], pair["text"], variant, backend, library
                )
            except (BackendUnavailable, InvalidResponse) as exc:
                log.warning("table generation failed: %s", exc)
                return None
            return RawPair(
                pair_id=pair["pair_id"],
                instruction=pair["instruction"],
                domain=pair["domain"],
                text=pair["text"],
                category=pair["category"],
                variant=variant,
                raw_table_output=raw,
                style=pair.get("style"),
                paraphrased=bool(pair.get("paraphrased")),
                leak_warning=bool(pair.get("leak_warning")),
                explanation=explanation,
            ).to_dict()

        with pool() as ex:
            results = list(ex.map(run, tasks))
        records = [r for r in results if r is not None]
        meta = {"table_attempts": len(tasks), "table_drops": len(tasks) - len(records)}
        return records, meta

    raw_records, step5_meta = _step(out_dir, "raw", make_raw)
    table_attempts = int(step5_meta.get("table_attempts", len(raw_records)))
    table_drops = int(step5_meta.get("table_drops", 0))

    # step 6: filtering, survivor persistence, report
    raws = [RawPair.from_dict(r) for r in raw_records]
    outcomes, report = apply_filters(raws, scorer, cfg.thresholds)
    survivors = [
        Instance(
            id=f"{o.pair.pair_id}-{o.pair.variant}",
            instruction=o.pair.instruction,
            text=o.pair.text,
            table=o.table,
            domain=o.pair.domain,
            category=o.pair.category,
            source_type="generate",
            variant=o.pair.variant,
            explanation=o.pair.explanation if o.pair.variant == "cot" else None,
        )
        for o in outcomes
    ]
    survivors.sort(key=lambda inst: inst.id)
    write_jsonl([s.to_dict() for s in survivors], out_dir / CHECKPOINTS["survivors"])

    full_report = {
        "config": cfg.to_dict(),
        "generation": {
            **step1_stats,
            "texts": len(texts),
            "text_drops": len(instructions) - len(texts),
            "open_instructions": sum(1 for r in opens if r.get("open_instruction")),
            "open_drops": sum(1 for r in opens if not r.get("open_instruction")),
            "pairs": len(paraphrased),
            "paraphrase_discarded_batches": discarded_batches,
            "unparaphrased": sum(1 for p in paraphrased if not p.get("paraphrased")),
            "table_attempts": table_attempts,
            "table_drops": table_drops,
        },
        "filter": report.to_dict(),
        "survivors": len(survivors),
    }
    report_path = out_dir / CHECKPOINTS["report"]
    report_path.write_text(
        json.dumps(full_report, ensure_ascii=False, sort_keys=True, indent=2)
        + "\n",
        encoding="utf-8",
    )
    return survivors, report
