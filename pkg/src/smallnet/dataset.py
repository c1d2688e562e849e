from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .features import TENSOR_SHAPE

ORIGIN_VIDEO = 0
ORIGIN_GAME = 1
ORIGINS = {"video": ORIGIN_VIDEO, "game": ORIGIN_GAME}


@dataclass
class Dataset:
    """Labelled feature tensors in chronological order.

    Tensors are stored as float32 (n, 129, 7, 11); compute paths upcast.
    """

    tensors: np.ndarray
    labels: np.ndarray
    timestamps: np.ndarray
    origins: np.ndarray
    task_names: tuple[str, ...] = ()

    def __post_init__(self):
        self.tensors = np.asarray(self.tensors, dtype=np.float32).reshape((-1,) + TENSOR_SHAPE)
        n = len(self.tensors)
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(n)
        self.timestamps = np.asarray(self.timestamps, dtype=np.float64).reshape(n)
        self.origins = np.asarray(self.origins, dtype=np.uint8).reshape(n)
        self.task_names = tuple(self.task_names)
        if n and np.any(np.diff(self.timestamps) < 0):
            raise ValueError("timestamps must be non-decreasing")
        if n and (self.labels.min() < 0 or self.labels.max() > 255):
            raise ValueError("labels must fit in 0..255")

    @classmethod
    def empty(cls, task_names: Sequence[str] = ()) -> "Dataset":
        return cls(np.zeros((0,) + TENSOR_SHAPE, np.float32), np.zeros(0, np.int64),
                   np.zeros(0), np.zeros(0, np.uint8), tuple(task_names))

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, index) -> "Dataset":
        return Dataset(self.tensors[index], self.labels[index], self.timestamps[index],
                       self.origins[index], self.task_names)

    def most_recent(self, n: int) -> "Dataset":
        return self if len(self) <= n else self.subset(slice(len(self) - n, None))

    def relabel(self, labels: np.ndarray, task_names: Sequence[str] | None = None) -> "Dataset":
        return Dataset(self.tensors, labels, self.timestamps, self.origins,
                       self.task_names if task_names is None else task_names)

    def equals(self, other: "Dataset") -> bool:
        return (self.task_names == other.task_names
                and np.array_equal(self.tensors, other.tensors)
                and np.array_equal(self.labels, other.labels)
                and np.array_equal(self.timestamps, other.timestamps)
                and np.array_equal(self.origins, other.origins))


def concatenate(parts: Sequence[Dataset], task_names: Sequence[str] | None = None) -> Dataset:
    parts = [p for p in parts if len(p)]
    if not parts:
        return Dataset.empty(task_names or ())
    names = parts[0].task_names if task_names is None else tuple(task_names)
    return Dataset(np.concatenate([p.tensors for p in parts]),
                   np.concatenate([p.labels for p in parts]),
                   np.concatenate([p.timestamps for p in parts]),
                   np.concatenate([p.origins for p in parts]), names)
