"""Chat-schema serialization of instances for supervised fine-tuning.

A formatted example is one string with the three role markers in order,
a single newline after each marker, and a character offset marking where
the supervised span (the assistant response) begins. Offsets are
character-level; converting them to token masks is the trainer's job.
"""
from __future__ import annotations

from dataclasses import dataclass

from .dataset import Instance
from .tables import serialize_table

SYSTEM_MARKER = "<|system|>"
USER_MARKER = "<|user|>"
ASSISTANT_MARKER = "<|assistant|>"

COT_SYSTEM_PROMPT = (
    "You are a helpful assistant. Follow the user instruction to output a "
    "paragraph as the explanation and extract information from the given "
    "text into a concise markdown table."
)
# Direct training drops the explanation clause from the system prompt.
DIRECT_SYSTEM_PROMPT = (
    "You are a helpful assistant. Follow the user instruction to extract "
    "information from the given text into a concise markdown table."
)


@dataclass(frozen=True)
class TrainingDefaults:
    """Reference fine-tuning hyperparameters for the 7B + LoRA recipe.

    Recorded for documentation and config export; this package never runs
    training itself.
    """

    lora_r: int = 16
    batch_size: int = 64
    learning_rate: float = 3e-4
    warmup_ratio: float = 0.03
    lora_dropout: float = 0.05


class MissingTable(ValueError):
    """The instance has no gold table to train on."""


class MissingExplanation(ValueError):
    """A cot-variant instance lacks its explanation paragraph."""


@dataclass(frozen=True)
class FormattedExample:
    """Training sequence plus the start of the supervised span."""

    id: str
    sequence: str
    loss_start: int
    variant: str

    def response(self) -> str:
        return self.sequence[self.loss_start :]

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "sequence": self.sequence,
            "loss_start": self.loss_start,
            "variant": self.variant,
        }


def format_example(inst: Instance) -> FormattedExample:
    """Serialize one instance into the chat training schema.

    The supervised span starts right after the assistant marker's newline:
    the explanation then the table for cot, the table alone for direct.
    """
    if inst.table is None:
        raise MissingTable(f"instance {inst.id} has no gold table")
    if inst.variant == "cot" and not inst.explanation:
        raise MissingExplanation(f"instance {inst.id} is cot but lacks explanation")

    system = COT_SYSTEM_PROMPT if inst.variant == "cot" else DIRECT_SYSTEM_PROMPT
    table_md = serialize_table(inst.table)
    if inst.variant == "cot":
        response = f"{inst.explanation}\n{table_md}"
    else:
        response = table_md

    for marker in (SYSTEM_MARKER, USER_MARKER, ASSISTANT_MARKER):
        for part in (inst.instruction, inst.text, response):
            if marker in part:
                raise ValueError(
                    f"instance {inst.id}: content contains role marker {marker}"
                )

    prefix = (
        f"{SYSTEM_MARKER}\n{system}\n"
        f"{USER_MARKER}\n{inst.instruction}\n{inst.text}\n"
        f"{ASSISTANT_MARKER}\n"
    )
    return FormattedExample(
        id=inst.id,
        sequence=prefix + response,
        loss_start=len(prefix),
        variant=inst.variant,
    )
