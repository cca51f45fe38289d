"""Label vocabularies and the five prediction tasks.

Class indices are positional within each vocabulary tuple and are fixed:
checkpoints, confusion matrices, and the naive baseline's tie rule all
depend on this ordering.
"""

from __future__ import annotations

from dataclasses import dataclass

FUEL = ("gasoline", "diesel")
CONFIG = ("flat", "inline", "v")
CYLINDERS = (2, 3, 4, 5, 6, 8)
ASPIRATION = ("normal", "turbo")
STATUS = ("normal", "misfire")

# Task name -> (manifest/label field, vocabulary).  "misfire" is the
# prediction task over the `status` label.
TASKS = {
    "fuel": ("fuel", FUEL),
    "config": ("config", CONFIG),
    "cylinders": ("cylinders", CYLINDERS),
    "aspiration": ("aspiration", ASPIRATION),
    "misfire": ("status", STATUS),
}

TASK_NAMES = tuple(TASKS)
CLASS_COUNTS = {task: len(vocab) for task, (_, vocab) in TASKS.items()}

# Width of the cascaded attribute vector: log-probs of the four
# attribute heads, concatenated (2 + 3 + 6 + 2).
ATTRIBUTE_TASKS = ("fuel", "config", "cylinders", "aspiration")
CASCADE_WIDTH = sum(CLASS_COUNTS[t] for t in ATTRIBUTE_TASKS)


@dataclass(frozen=True)
class LabelSet:
    """The five categorical targets of one recording.

    A None field means the label is unknown; such samples are masked out
    of that task's loss and metrics.
    """

    fuel: str | None = None
    config: str | None = None
    cylinders: int | None = None
    aspiration: str | None = None
    status: str | None = None

    def __post_init__(self) -> None:
        vocab_of = {"fuel": FUEL, "config": CONFIG, "cylinders": CYLINDERS,
                    "aspiration": ASPIRATION, "status": STATUS}
        for field, vocab in vocab_of.items():
            value = getattr(self, field)
            if value is not None and value not in vocab:
                raise ValueError(f"{field}={value!r} not in {vocab}")

    def class_index(self, task: str) -> int | None:
        """Class index for `task`, or None when the label is missing."""
        field, vocab = TASKS[task]
        value = getattr(self, field)
        return None if value is None else vocab.index(value)


def class_name(task: str, index: int):
    """Inverse of LabelSet.class_index."""
    return TASKS[task][1][index]
