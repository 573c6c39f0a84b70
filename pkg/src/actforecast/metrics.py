"""Forecast quality measures and the evaluation report."""

from __future__ import annotations

import csv
import io
import json
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ContractError


def _ngrams(seq: Sequence, n: int) -> Counter:
    return Counter(tuple(seq[i:i + n]) for i in range(len(seq) - n + 1))


def bleu(candidates: Sequence[Sequence], references: Sequence[Sequence], max_n: int = 2) -> float:
    """Corpus BLEU with uniform weights over 1..max_n, one reference per candidate, no smoothing.

    Clipped n-gram matches and candidate n-gram totals are summed over the
    corpus before taking ratios. The brevity penalty compares total lengths.
    """
    if len(candidates) != len(references):
        raise ContractError(f"{len(candidates)} candidates but {len(references)} references")
    if not candidates:
        raise ContractError("BLEU of an empty corpus is undefined")
    if max_n < 1:
        raise ContractError("max_n must be at least 1")
    matches, totals = [0] * max_n, [0] * max_n
    c_len = r_len = 0
    for cand, ref in zip(candidates, references):
        c_len += len(cand)
        r_len += len(ref)
        for n in range(1, max_n + 1):
            cn, rn = _ngrams(cand, n), _ngrams(ref, n)
            matches[n - 1] += sum(min(k, rn[g]) for g, k in cn.items())
            totals[n - 1] += max(0, len(cand) - n + 1)
    if min(matches) == 0:
        return 0.0
    log_p = sum(math.log(m / t) for m, t in zip(matches, totals)) / max_n
    bp = 1.0 if c_len > r_len else math.exp(1.0 - r_len / c_len)
    return bp * math.exp(log_p)


def seq_item_accuracy(candidate: Sequence, reference: Sequence) -> float:
    """Share of reference positions whose symbol the candidate reproduces at the same index."""
    if not reference:
        raise ContractError("seq-item accuracy needs a non-empty reference")
    return sum(a == b for a, b in zip(candidate, reference)) / len(reference)


def corpus_seq_item_accuracy(candidates: Sequence[Sequence], references: Sequence[Sequence]) -> float:
    """Mean of the per-pair accuracies."""
    if len(candidates) != len(references) or not references:
        raise ContractError("need equally many candidates and references, at least one")
    return float(np.mean([seq_item_accuracy(c, r) for c, r in zip(candidates, references)]))


def average_precision(scores: Sequence[float], positives: Sequence[bool]) -> float:
    """AP of one ranked list; equal scores keep their input order."""
    scores = np.asarray(scores, dtype=np.float64)
    positives = np.asarray(positives, dtype=bool)
    if not positives.any():
        raise ContractError("average precision needs at least one positive")
    order = np.argsort(-scores, kind="stable")
    hits = positives[order]
    ranks = np.flatnonzero(hits) + 1
    return float(np.mean(np.arange(1, len(ranks) + 1) / ranks))


@dataclass
class ApResult:
    value: float
    per_class: dict[int, float]
    excluded: list[int]  # classes with no positive video


def mean_ap(scores: np.ndarray, truth: np.ndarray) -> ApResult:
    """mAP over the columns of a videos × classes score matrix and boolean truth matrix."""
    scores = np.asarray(scores, dtype=np.float64)
    truth = np.asarray(truth, dtype=bool)
    if scores.shape != truth.shape or scores.ndim != 2:
        raise ContractError(f"score matrix {scores.shape} and truth matrix {truth.shape} must match")
    if not np.isfinite(scores).all():
        raise ContractError("scores must be finite")
    per_class, excluded = {}, []
    for k in range(scores.shape[1]):
        if truth[:, k].any():
            per_class[k] = average_precision(scores[:, k], truth[:, k])
        else:
            excluded.append(k)
    value = float(np.mean(list(per_class.values()))) if per_class else 0.0
    return ApResult(value, per_class, excluded)


@dataclass
class FrameAccuracy:
    value: float
    per_class: dict[str, float]
    counts: dict[str, int]


def mean_per_class_frame_accuracy(predicted: Sequence[Sequence], truth: Sequence[Sequence]) -> FrameAccuracy:
    if len(predicted) != len(truth):
        raise ContractError(f"{len(predicted)} predicted videos but {len(truth)} references")
    correct: Counter = Counter()
    total: Counter = Counter()
    for i, (pred, true) in enumerate(zip(predicted, truth)):
        if len(pred) != len(true):
            raise ContractError(f"video {i}: {len(pred)} predicted frames but {len(true)} target frames")
        for a, b in zip(pred, true):
            total[b] += 1
            correct[b] += a == b
    per_class = {c: correct[c] / total[c] for c in sorted(total)}
    value = float(np.mean(list(per_class.values()))) if per_class else 0.0
    return FrameAccuracy(value, per_class, {c: total[c] for c in sorted(total)})


def majority_class(labels: Sequence) -> str:
    """Most frequent label; ties go to the label that sorts first."""
    counts = Counter(labels)
    if not counts:
        raise ContractError("no labels to take a majority of")
    return min(counts, key=lambda c: (-counts[c], c))


def majority_baseline(truth: Sequence[Sequence], label=None) -> float:
    """Mean-per-class accuracy of predicting one constant label everywhere."""
    label = majority_class([x for seq in truth for x in seq]) if label is None else label
    return mean_per_class_frame_accuracy([[label] * len(t) for t in truth], truth).value


# ---------------------------------------------------------------- report


@dataclass
class EvalReport:
    mode: str  # "sequence" or "frame"
    metrics: dict[str, float] = field(default_factory=dict)
    protocol: dict = field(default_factory=dict)
    per_class: dict[str, dict[str, float]] = field(default_factory=dict)  # metric -> class -> value
    counts: dict[str, int] = field(default_factory=dict)
    grid: list[dict] = field(default_factory=list)  # frame mode, one row per (p, q) cell
    flagged: list[str] = field(default_factory=list)
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"mode": self.mode, "metrics": self.metrics, "protocol": self.protocol, "per_class": self.per_class,
                "counts": self.counts, "grid": self.grid, "flagged": self.flagged, "config": self.config}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_text(self) -> str:
        """Flat ``key = value`` lines; rates are shown as percentages."""
        lines = [f"mode = {self.mode}"]
        lines += [f"protocol.{k} = {v}" for k, v in sorted(self.protocol.items())]
        lines += [f"{k} = {100.0 * v:.4f}" for k, v in sorted(self.metrics.items())]
        lines += [f"count.{k} = {v}" for k, v in sorted(self.counts.items())]
        lines += [f"flagged = {','.join(self.flagged)}"] if self.flagged else []
        lines += [f"config.{k} = {json.dumps(v, sort_keys=True)}" for k, v in sorted(self.config.items())]
        return "\n".join(lines) + "\n"

    def per_class_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["metric", "class", "value"])
        for metric in sorted(self.per_class):
            for cls, value in self.per_class[metric].items():
                w.writerow([metric, cls, repr(value)])
        return buf.getvalue()

    def grid_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["p", "q", "mean_per_class_accuracy", "majority_baseline", "videos", "skipped"])
        for row in self.grid:
            w.writerow([row["p"], row["q"], repr(row["accuracy"]), repr(row["majority"]), row["videos"],
                        row["skipped"]])
        return buf.getvalue()

    def write(self, out_dir: str | Path) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.txt").write_text(self.to_text())
        (out / "report.json").write_text(self.to_json() + "\n")
        (out / "per_class.csv").write_text(self.per_class_csv())
        if self.mode == "frame":
            (out / "grid.csv").write_text(self.grid_csv())
        return out
