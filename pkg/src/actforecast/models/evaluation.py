"""Corpus evaluation in sequence-forecast mode and in the p/q frame protocol."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from ..data import ProtocolSplit, VideoRecord, split_protocol
from ..errors import ConfigError
from ..metrics import (EvalReport, bleu, corpus_seq_item_accuracy, majority_baseline, majority_class,
                       mean_ap, mean_per_class_frame_accuracy)
from ..nn import Module
from .baselines import RandomForecaster
from .samples import augment_sequences
from .training import EVAL, FRAME_KINDS, substream
from .weak import WeakForecaster


def _kind(model: Module) -> str:
    return model.config()["kind"]


def _map(fn: Callable, items: Sequence, workers: int) -> list:
    if workers <= 1:
        return [fn(x) for x in items]
    # results come back in input order, so aggregation matches the serial run
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


@dataclass
class SequencePrediction:
    video_id: str
    candidate: list[str]
    reference: list[str]
    class_scores: np.ndarray  # per-class max over decoding steps


def predict_sequence(model: Module, features, reference: list[str], seed: int = 0, index: int = 0,
                     video_id: str = "") -> SequencePrediction:
    if isinstance(model, RandomForecaster):
        # the random baseline is granted the true length
        fc = model.forecast(features, rng=substream(seed, EVAL, index), length=len(reference))
    else:
        fc = model.forecast(features)
    k = model.vocab.num_classes
    scores = fc.step_probs.max(axis=0) if len(fc.step_probs) else np.zeros(k)
    return SequencePrediction(video_id, fc.symbols, reference, scores)


def evaluate_sequences(model: Module, records: Sequence[VideoRecord], workers: int = 1, seed: int = 0) -> EvalReport:
    """BLEU-1/2, seq-item accuracy and mAP over every held-out prefix of ``records``."""
    if _kind(model) in FRAME_KINDS:
        raise ConfigError(f"{_kind(model)} models forecast frame labels; evaluate them with a p:q protocol")
    examples = [ex for r in records for ex in augment_sequences(r)]
    if not examples:
        raise ConfigError("no video has two or more actions to split")

    def one(item):
        i, ex = item
        return predict_sequence(model, ex.features, ex.future, seed, i, ex.video_id)

    preds = _map(one, list(enumerate(examples)), workers)
    cands = [p.candidate for p in preds]
    refs = [p.reference for p in preds]
    vocab = model.vocab
    truth = np.zeros((len(preds), vocab.num_classes), dtype=bool)
    for row, p in enumerate(preds):
        truth[row, vocab.encode(p.reference)] = True
    ap = mean_ap(np.stack([p.class_scores for p in preds]), truth)
    next_acc = float(np.mean([bool(c) and c[0] == r[0] for c, r in zip(cands, refs)]))
    return EvalReport(
        mode="sequence",
        metrics={"bleu1": bleu(cands, refs, 1), "bleu2": bleu(cands, refs, 2),
                 "seq_item_accuracy": corpus_seq_item_accuracy(cands, refs), "mAP": ap.value,
                 "next_action_accuracy": next_acc},
        protocol={"setting": "sequence"},
        per_class={"ap": {vocab.classes[k]: v for k, v in ap.per_class.items()}},
        counts={"videos": len(records), "examples": len(examples), "ap_excluded_classes": len(ap.excluded)},
    )


def predict_frames(model: Module, features, num_future: int, seed: int, index: int) -> tuple[list[str], bool]:
    if isinstance(model, RandomForecaster):
        return model.forecast(features, rng=substream(seed, EVAL, index), length=num_future).symbols, False
    fc = model.forecast_frames(features, num_future)
    return fc.labels, fc.empty_decode


def evaluate_frames(model: Module, records: Sequence[VideoRecord], protocols: Sequence[ProtocolSplit],
                    workers: int = 1, seed: int = 0, majority_label: str | None = None) -> EvalReport:
    """Mean-per-class frame accuracy for each requested (p, q) cell.

    The first cell's value is also reported as the headline metric. The
    majority baseline predicts ``majority_label`` (default: most frequent
    target frame label of the cell) everywhere.
    """
    if not isinstance(model, (WeakForecaster, RandomForecaster)):
        raise ConfigError(f"{_kind(model)} models forecast action sequences; frame protocols need weak, "
                          "supervised or random")
    if not protocols:
        raise ConfigError("frame evaluation needs at least one p:q protocol")
    report = EvalReport(mode="frame", protocol={"cells": ",".join(str(p) for p in protocols)})
    flagged: set[str] = set()
    skipped_total = 0
    for c, proto in enumerate(protocols):
        windows = [w for r in records if (w := split_protocol(r, proto.observe, proto.predict)) is not None]
        skipped = len(records) - len(windows)
        skipped_total += skipped

        def one(item, c=c):
            i, w = item
            return predict_frames(model, w.observed, w.num_targets, seed, c * 1_000_003 + i)

        results = _map(one, list(enumerate(windows)), workers)
        truth = [w.target_labels for w in windows]
        preds = [labels for labels, _ in results]
        flagged.update(w.video_id for w, (_, empty) in zip(windows, results) if empty)
        acc = mean_per_class_frame_accuracy(preds, truth) if windows else None
        label = majority_label if majority_label is not None else (
            majority_class([x for t in truth for x in t]) if windows else None)
        report.grid.append({"p": proto.observe, "q": proto.predict,
                            "accuracy": acc.value if acc else 0.0,
                            "majority": majority_baseline(truth, label) if windows else 0.0,
                            "videos": len(windows), "skipped": skipped})
        if acc:
            report.per_class[f"accuracy@{proto}"] = acc.per_class
    first = report.grid[0]
    report.metrics = {"mean_per_class_accuracy": first["accuracy"], "majority_baseline": first["majority"]}
    report.counts = {"videos": len(records), "skipped": skipped_total, "flagged": len(flagged)}
    report.flagged = sorted(flagged)
    return report
