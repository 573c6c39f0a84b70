"""Training examples cut from corpus videos."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..data import ProtocolSplit, VideoRecord, split_protocol


@dataclass
class TrainExample:
    features: np.ndarray  # observed frames X^o, p×d
    observed: list[str]  # coarse Y^o
    future: list[str]  # coarse Y^u
    video_id: str = ""
    observed_frames: list[str] | None = None  # per-frame labels of X^o
    future_frames: list[str] | None = None  # per-frame labels of the target window

    @property
    def num_future_frames(self) -> int:
        return len(self.future_frames) if self.future_frames is not None else 0


def augment_sequences(record: VideoRecord) -> list[TrainExample]:
    """One example per split point t = 1..M-1: observe actions 1..t, predict t+1..M.

    Frame spans only decide where X^o is cut; the examples carry coarse labels.
    """
    spans = sorted(record.actions, key=lambda s: s.start)
    labels = [s.label for s in spans]
    return [
        TrainExample(record.features[: spans[t - 1].end], labels[:t], labels[t:], record.id)
        for t in range(1, len(spans))
    ]


def protocol_examples(record: VideoRecord, protocols) -> list[TrainExample]:
    """Examples for the observe-p%/predict-q% windows of ``record``; empty windows are skipped."""
    out = []
    for proto in protocols:
        proto = proto if isinstance(proto, ProtocolSplit) else ProtocolSplit.parse(str(proto))
        win = split_protocol(record, proto.observe, proto.predict)
        if win is None:
            continue
        out.append(TrainExample(win.observed, win.observed_coarse, win.future_coarse, record.id,
                                win.observed_labels, win.target_labels))
    return out
