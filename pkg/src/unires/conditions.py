"""Conditioning vocabulary shared by predictors and the combiner.

Kept free of heavy dependencies so weight-grid tooling can load without
pulling in the neural-network stack.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# condition vocabulary; index 0 is the null (dropped) condition
TASK_VOCAB = ("SR", "MD", "DD", "DN", "POS", "NEG")


@dataclass(frozen=True, eq=False)
class Condition:
    """(optional LQ image, optional task id); None means dropped."""

    lq: np.ndarray | None = None
    task: str | None = None

    def __post_init__(self):
        if self.task is not None and self.task not in TASK_VOCAB:
            raise ValueError(f"unknown task: {self.task}")


NULL_CONDITION = Condition(lq=None, task=None)


def task_index(task: str | None) -> int:
    return 0 if task is None else TASK_VOCAB.index(task) + 1
