"""Action vocabulary with reserved start/end symbols."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ContractError


@dataclass(frozen=True)
class ActionVocabulary:
    """Real classes take indices 0..K-1, EOS is K and SOS is K+1.

    Decoders score K+1 outputs (classes and EOS); their feedback input lives in
    a K+2 dimensional space that also holds the SOS one-hot.
    """

    classes: tuple[str, ...]

    def __post_init__(self):
        if not self.classes:
            raise ContractError("vocabulary needs at least one class")
        if len(set(self.classes)) != len(self.classes):
            raise ContractError("vocabulary classes must be distinct")
        object.__setattr__(self, "_index", {c: i for i, c in enumerate(self.classes)})

    @classmethod
    def from_labels(cls, labels) -> "ActionVocabulary":
        return cls(tuple(sorted(set(labels))))

    @property
    def num_classes(self) -> int:
        return len(self.classes)

    @property
    def eos(self) -> int:
        return len(self.classes)

    @property
    def sos(self) -> int:
        return len(self.classes) + 1

    @property
    def output_size(self) -> int:
        return len(self.classes) + 1

    @property
    def input_size(self) -> int:
        return len(self.classes) + 2

    def index(self, label: str) -> int:
        try:
            return self._index[label]  # type: ignore[attr-defined]
        except KeyError:
            raise ContractError(f"unknown action {label!r}") from None

    def encode(self, labels) -> list[int]:
        return [self.index(x) for x in labels]

    def decode(self, indices) -> list[str]:
        return [self.classes[i] for i in indices]

    def onehot_input(self, index: int) -> np.ndarray:
        v = np.zeros((1, self.input_size))
        v[0, index] = 1.0
        return v
