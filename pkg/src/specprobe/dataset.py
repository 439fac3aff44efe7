"""In-memory embedding datasets."""

from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

from .errors import ValidationError


class TaskKind(IntEnum):
    TOKEN = 0
    SEQUENCE = 1

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        if isinstance(value, str):
            try:
                return cls[value.upper()]
            except KeyError:
                raise ValidationError(
                    f"task kind must be 'token' or 'sequence', got {value!r}"
                ) from None
        return cls(int(value))


@dataclass
class EmbeddingSequence:
    """Contextual sub-word embeddings of one input, with per-position labels.

    ``values`` is stored as float32 (the on-disk precision). Positions whose
    ``ignore`` flag is set contribute neither loss nor accuracy.
    """

    values: np.ndarray
    labels: np.ndarray
    ignore: np.ndarray = None
    id: int = 0

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.float32)
        if self.values.ndim != 2 or self.values.shape[0] < 1 or self.values.shape[1] < 1:
            raise ValidationError(
                f"embedding values must be an N x E matrix with N, E >= 1, got {self.values.shape}"
            )
        n = self.values.shape[0]
        self.labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        if self.ignore is None:
            self.ignore = np.zeros(n, dtype=bool)
        self.ignore = np.ascontiguousarray(self.ignore, dtype=bool)
        if self.labels.shape != (n,) or self.ignore.shape != (n,):
            raise ValidationError(
                f"labels and ignore mask must have length {n}, "
                f"got {self.labels.shape} and {self.ignore.shape}"
            )
        if not np.all(np.isfinite(self.values)):
            raise ValidationError(f"sequence {self.id} contains non-finite values")
        self.id = int(self.id)

    @property
    def length(self):
        return self.values.shape[0]

    @property
    def width(self):
        return self.values.shape[1]

    def __eq__(self, other):
        if not isinstance(other, EmbeddingSequence):
            return NotImplemented
        return (
            self.id == other.id
            and np.array_equal(self.values, other.values)
            and np.array_equal(self.labels, other.labels)
            and np.array_equal(self.ignore, other.ignore)
        )


@dataclass
class Dataset:
    sequences: list
    num_classes: int
    width: int
    task_kind: TaskKind = TaskKind.TOKEN
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.task_kind = TaskKind.parse(self.task_kind)
        self.num_classes = int(self.num_classes)
        self.width = int(self.width)
        if self.num_classes < 1:
            raise ValidationError("num_classes must be >= 1")
        self.validate()

    def validate(self):
        for seq in self.sequences:
            if seq.width != self.width:
                raise ValidationError(
                    f"sequence {seq.id} has width {seq.width}, dataset width is {self.width}"
                )
            active = seq.labels[~seq.ignore]
            if active.size and (active.min() < 0 or active.max() >= self.num_classes):
                raise ValidationError(
                    f"sequence {seq.id} has labels outside [0, {self.num_classes})"
                )
            if self.task_kind is TaskKind.SEQUENCE and np.unique(active).size > 1:
                raise ValidationError(
                    f"sequence-level dataset but sequence {seq.id} has varying labels"
                )

    def __len__(self):
        return len(self.sequences)

    def __iter__(self):
        return iter(self.sequences)

    @property
    def position_count(self):
        return int(sum((~s.ignore).sum() for s in self.sequences))
