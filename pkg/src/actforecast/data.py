"""Synthetic activity corpora, JSONL corpus I/O and observe-p%/predict-q% windows.

A corpus line holds one video::

    {"id": "vid00000", "features": [[...d floats...], ...T rows],
     "actions": [{"label": "stir", "start": 0, "end": 4}, ...], "split": "train"}

Spans are half-open frame ranges ``[start, end)`` that tile ``[0, T)``.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import groupby
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ContractError, CorpusParseError, GrammarError, ValidationError

SPLITS = ("train", "test")
PROTOCOL_PERCENTAGES = (10, 20, 30, 50)


def run_length(labels: Iterable[str]) -> list[str]:
    """Collapse consecutive repeats: a a b b a → a b a."""
    return [k for k, _ in groupby(labels)]


# ---------------------------------------------------------------- grammar


@dataclass(frozen=True)
class Template:
    actions: tuple[str, ...]
    weight: float = 1.0


@dataclass(frozen=True)
class Activity:
    name: str
    templates: tuple[Template, ...]
    weight: float = 1.0


@dataclass
class ActivityGrammar:
    """Weighted action-sequence templates plus a duration and a per-class Gaussian feature model."""

    name: str
    actions: list[str]
    activities: list[Activity]
    deterministic: bool = False
    min_duration: int = 2
    max_duration: int = 5
    feature_dim: int = 64
    sigma: float = 0.5
    means: np.ndarray | None = None
    mean_seed: int = 0
    mean_scale: float = 1.0
    separation: float = 4.0  # minimum pairwise class-mean distance, in units of sigma

    def __post_init__(self):
        if len(set(self.actions)) != len(self.actions) or not self.actions:
            raise GrammarError("actions must be a non-empty list of distinct names")
        if not self.activities:
            raise GrammarError("grammar has no activities")
        if not 1 <= self.min_duration <= self.max_duration:
            raise GrammarError(f"invalid duration range [{self.min_duration}, {self.max_duration}]")
        if self.sigma < 0:
            raise GrammarError("sigma must be non-negative")
        known = set(self.actions)
        for act in self.activities:
            if not act.templates:
                raise GrammarError(f"activity {act.name!r} has no templates")
            for tpl in act.templates:
                if not tpl.actions:
                    raise GrammarError(f"activity {act.name!r} has an empty template")
                unknown = set(tpl.actions) - known
                if unknown:
                    raise GrammarError(f"activity {act.name!r} uses unknown actions {sorted(unknown)}")
                if any(a == b for a, b in zip(tpl.actions, tpl.actions[1:])):
                    raise GrammarError(f"activity {act.name!r}: a template repeats an action back to back")
        if self.deterministic:
            self._check_unique_continuations()
        if self.means is None:
            rng = np.random.default_rng(self.mean_seed)
            self.means = self.mean_scale * rng.standard_normal((len(self.actions), self.feature_dim))
        self.means = np.asarray(self.means, dtype=np.float64)
        if self.means.shape != (len(self.actions), self.feature_dim):
            raise GrammarError(f"means must be {len(self.actions)}×{self.feature_dim}, got {self.means.shape}")
        if self.sigma > 0 and len(self.actions) > 1:
            diff = self.means[:, None, :] - self.means[None, :, :]
            dist = np.sqrt((diff ** 2).sum(-1))[np.triu_indices(len(self.actions), 1)]
            if dist.min() < self.separation * self.sigma:
                raise GrammarError(
                    f"class means only {dist.min():.3f} apart; need ≥ {self.separation}σ = {self.separation * self.sigma}")

    def templates(self) -> list[tuple[str, ...]]:
        return [tpl.actions for act in self.activities for tpl in act.templates]

    def _check_unique_continuations(self) -> None:
        seen: dict[tuple[str, ...], tuple[str, ...]] = {}
        for seq in self.templates():
            for t in range(1, len(seq)):
                prefix, rest = seq[:t], seq[t:]
                if seen.setdefault(prefix, rest) != rest:
                    raise GrammarError(
                        f"grammar {self.name!r} is not deterministic: prefix {list(prefix)} continues as "
                        f"{list(seen[prefix])} and {list(rest)}")

    def continuation(self, prefix: Sequence[str]) -> list[str] | None:
        """The unique continuation of an observed prefix (deterministic grammars only)."""
        if not self.deterministic:
            raise ContractError("continuations are only unique for deterministic grammars")
        prefix = tuple(prefix)
        for seq in self.templates():
            if seq[: len(prefix)] == prefix and len(seq) > len(prefix):
                return list(seq[len(prefix):])
        return None

    # configuration files
    @classmethod
    def from_dict(cls, cfg: dict) -> "ActivityGrammar":
        try:
            activities = [
                Activity(a["name"], tuple(Template(tuple(t["actions"]), float(t.get("weight", 1.0)))
                                          for t in a["templates"]), float(a.get("weight", 1.0)))
                for a in cfg["activities"]
            ]
            dur = cfg.get("duration", {})
            feat = cfg.get("features", {})
            return cls(
                name=cfg.get("name", "custom"),
                actions=list(cfg["actions"]),
                activities=activities,
                deterministic=bool(cfg.get("deterministic", False)),
                min_duration=int(dur.get("min", 2)),
                max_duration=int(dur.get("max", 5)),
                feature_dim=int(feat.get("dim", 64)),
                sigma=float(feat.get("sigma", 0.5)),
                means=np.asarray(feat["means"]) if "means" in feat else None,
                mean_seed=int(feat.get("mean_seed", 0)),
                mean_scale=float(feat.get("mean_scale", 1.0)),
                separation=float(feat.get("separation", 4.0)),
            )
        except (KeyError, TypeError) as exc:
            raise GrammarError(f"malformed grammar config: {exc}") from exc

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "actions": list(self.actions),
            "deterministic": self.deterministic,
            "activities": [
                {"name": a.name, "weight": a.weight,
                 "templates": [{"actions": list(t.actions), "weight": t.weight} for t in a.templates]}
                for a in self.activities
            ],
            "duration": {"min": self.min_duration, "max": self.max_duration},
            "features": {"dim": self.feature_dim, "sigma": self.sigma, "mean_seed": self.mean_seed,
                         "mean_scale": self.mean_scale, "separation": self.separation},
        }

    @classmethod
    def load(cls, path: str | Path) -> "ActivityGrammar":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


_KITCHEN_ACTIONS = ["take_cup", "open_fridge", "pour_milk", "stir",
                    "cut_bread", "spread_butter", "wash_dish", "close_fridge"]


def _seqs(*idx_lists):
    return [[_KITCHEN_ACTIONS[i] for i in seq] for seq in idx_lists]


PROFILES: dict[str, dict] = {
    # every activity opens with its own action, so each observed prefix has one continuation
    "deterministic-kitchen": {
        "name": "deterministic-kitchen",
        "actions": _KITCHEN_ACTIONS,
        "deterministic": True,
        "activities": [
            {"name": name, "templates": [{"actions": seq}]}
            for name, seq in zip(
                ["make_tea", "fridge_snack", "cereal", "sandwich", "toast", "cleanup"],
                _seqs([0, 2, 3, 6], [1, 0, 7, 4, 5], [2, 0, 3, 6, 7],
                      [4, 1, 5, 7, 6], [5, 4, 0, 3], [6, 1, 2, 7, 3, 0]))
        ],
        "duration": {"min": 2, "max": 5},
        "features": {"dim": 64, "sigma": 0.5, "mean_seed": 1234},
    },
    # same activities, each with two or three weighted variants after a shared opening
    "stochastic-kitchen": {
        "name": "stochastic-kitchen",
        "actions": _KITCHEN_ACTIONS,
        "deterministic": False,
        "activities": [
            {"name": name, "templates": [{"actions": s, "weight": w} for s, w in zip(_seqs(*seqs), weights)]}
            for name, seqs, weights in [
                ("make_tea", ([0, 2, 3, 6], [0, 3, 2, 6]), (0.6, 0.4)),
                ("fridge_snack", ([1, 0, 7, 4, 5], [1, 7, 4, 5], [1, 0, 7, 5]), (0.5, 0.3, 0.2)),
                ("cereal", ([2, 0, 3, 6, 7], [2, 3, 0, 6]), (0.7, 0.3)),
                ("sandwich", ([4, 1, 5, 7, 6], [4, 5, 1, 7]), (0.6, 0.4)),
                ("toast", ([5, 4, 0, 3], [5, 4, 3, 0, 6]), (0.5, 0.5)),
                ("cleanup", ([6, 1, 2, 7, 3, 0], [6, 2, 1, 7, 0]), (0.6, 0.4)),
            ]
        ],
        "duration": {"min": 2, "max": 5},
        "features": {"dim": 64, "sigma": 0.5, "mean_seed": 1234},
    },
}


def load_profile(name: str, feature_dim: int | None = None) -> ActivityGrammar:
    if name not in PROFILES:
        raise GrammarError(f"unknown grammar profile {name!r}; available: {', '.join(sorted(PROFILES))}")
    cfg = json.loads(json.dumps(PROFILES[name]))
    if feature_dim is not None:
        cfg["features"]["dim"] = int(feature_dim)
    return ActivityGrammar.from_dict(cfg)


# ---------------------------------------------------------------- records


@dataclass(frozen=True)
class ActionSpan:
    label: str
    start: int
    end: int


@dataclass(eq=False)
class VideoRecord:
    id: str
    features: np.ndarray
    actions: list[ActionSpan]
    split: str = "train"
    activity: str | None = field(default=None, compare=False)

    @property
    def num_frames(self) -> int:
        return int(self.features.shape[0])

    @property
    def coarse(self) -> list[str]:
        return [s.label for s in sorted(self.actions, key=lambda s: s.start)]

    def frame_labels(self) -> list[str]:
        labels = [""] * self.num_frames
        for s in self.actions:
            labels[s.start:s.end] = [s.label] * (s.end - s.start)
        return labels

    def __eq__(self, other) -> bool:
        if not isinstance(other, VideoRecord):
            return NotImplemented
        return (self.id == other.id and self.split == other.split and self.actions == other.actions
                and self.features.shape == other.features.shape and np.array_equal(self.features, other.features))

    def validate(self, expected_dim: int | None = None) -> None:
        f = self.features
        if f.ndim != 2 or f.shape[0] < 1:
            raise ValidationError(f"video {self.id}: features must be a non-empty T×d array, got shape {f.shape}")
        if expected_dim is not None and f.shape[1] != expected_dim:
            raise ValidationError(f"video {self.id}: feature dimension {f.shape[1]}, expected d={expected_dim}")
        if self.split not in SPLITS:
            raise ValidationError(f"video {self.id}: split must be one of {SPLITS}, got {self.split!r}")
        if not self.actions:
            raise ValidationError(f"video {self.id}: no actions")
        starts = [s.start for s in self.actions]
        if starts != sorted(starts):
            raise ValidationError(f"video {self.id}: actions are not ordered by start frame")
        cursor = 0
        for s in self.actions:
            if s.end <= s.start:
                raise ValidationError(f"video {self.id}: span {s.label} [{s.start}, {s.end}) is empty")
            if s.start < cursor:
                raise ValidationError(f"video {self.id}: span {s.label} [{s.start}, {s.end}) overlaps its predecessor")
            if s.start > cursor:
                raise ValidationError(f"video {self.id}: frames [{cursor}, {s.start}) are not covered by any action")
            cursor = s.end
        if cursor != f.shape[0]:
            raise ValidationError(f"video {self.id}: spans cover [0, {cursor}) but the video has {f.shape[0]} frames")
        if any(a.label == b.label for a, b in zip(self.actions, self.actions[1:])):
            raise ValidationError(f"video {self.id}: adjacent spans share a label")

    def to_json(self) -> dict:
        return {"id": self.id, "features": self.features.tolist(),
                "actions": [{"label": s.label, "start": s.start, "end": s.end} for s in self.actions],
                "split": self.split}

    @classmethod
    def from_json(cls, obj: dict) -> "VideoRecord":
        feats = np.asarray(obj["features"], dtype=np.float64)
        if feats.ndim == 1 and feats.size == 0:
            feats = feats.reshape(0, 0)
        spans = [ActionSpan(str(a["label"]), int(a["start"]), int(a["end"])) for a in obj["actions"]]
        return cls(str(obj["id"]), feats, spans, str(obj.get("split", "train")))


def save_jsonl(records: Iterable[VideoRecord], path: str | Path) -> None:
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_json()))
            fh.write("\n")


def load_jsonl(path: str | Path, split: str | None = None) -> list[VideoRecord]:
    """Read and validate a corpus; ``split`` keeps only records of that split."""
    records: list[VideoRecord] = []
    dim = None
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                rec = VideoRecord.from_json(obj)
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise CorpusParseError(f"{path}:{lineno}: cannot parse record ({exc})") from exc
            rec.validate(dim)
            dim = rec.features.shape[1]
            if split is None or rec.split == split:
                records.append(rec)
    return records


def load_corpus(path: str | Path, split: str) -> list[VideoRecord]:
    """Records of ``split`` from a corpus directory (``<split>.jsonl``) or a single JSONL file."""
    path = Path(path)
    if path.is_dir():
        return load_jsonl(path / f"{split}.jsonl", split)
    return load_jsonl(path, split)


# ------------------------------------------------------------- generation


def _pick(rng: np.random.Generator, weights: Sequence[float]) -> int:
    w = np.asarray(weights, dtype=np.float64)
    return int(rng.choice(len(w), p=w / w.sum()))


def generate_video(grammar: ActivityGrammar, index: int, seed: int, split: str = "train") -> VideoRecord:
    rng = np.random.default_rng([seed, index])
    act = grammar.activities[_pick(rng, [a.weight for a in grammar.activities])]
    tpl = act.templates[_pick(rng, [t.weight for t in act.templates])]
    durations = rng.integers(grammar.min_duration, grammar.max_duration + 1, size=len(tpl.actions))
    spans, start = [], 0
    for label, n in zip(tpl.actions, durations):
        spans.append(ActionSpan(label, start, start + int(n)))
        start += int(n)
    cls = np.repeat([grammar.actions.index(a) for a in tpl.actions], durations)
    feats = grammar.means[cls] + grammar.sigma * rng.standard_normal((start, grammar.feature_dim))
    return VideoRecord(f"vid{index:05d}", feats, spans, split, activity=act.name)


def generate_corpus(grammar: ActivityGrammar, n_videos: int, seed: int, start_index: int = 0,
                    split: str = "train", workers: int = 1) -> list[VideoRecord]:
    """Sample ``n_videos`` videos; video ``i`` draws from its own stream (seed, i).

    The per-video streams make parallel and serial generation identical.
    """
    if n_videos < 1:
        raise ContractError("n_videos must be ≥ 1")
    indices = range(start_index, start_index + n_videos)
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            records = list(pool.map(lambda i: generate_video(grammar, i, seed, split), indices))
    else:
        records = [generate_video(grammar, i, seed, split) for i in indices]
    if grammar.deterministic:
        verify_unique_continuations(records)
    return records


def verify_unique_continuations(records: Iterable[VideoRecord]) -> None:
    """Every observed action prefix in the corpus must have exactly one continuation."""
    seen: dict[tuple[str, ...], tuple[str, ...]] = {}
    for rec in records:
        seq = tuple(rec.coarse)
        for t in range(1, len(seq)):
            if seen.setdefault(seq[:t], seq[t:]) != seq[t:]:
                raise GrammarError(f"video {rec.id}: prefix {list(seq[:t])} has several continuations")


def write_corpus(grammar: ActivityGrammar, out_dir: str | Path, n_train: int, n_test: int, seed: int,
                 workers: int = 1) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    train = generate_corpus(grammar, n_train, seed, 0, "train", workers)
    test = generate_corpus(grammar, n_test, seed, n_train, "test", workers)
    if grammar.deterministic:
        verify_unique_continuations(train + test)
    paths = {"train": out / "train.jsonl", "test": out / "test.jsonl"}
    save_jsonl(train, paths["train"])
    save_jsonl(test, paths["test"])
    with open(out / "grammar.json", "w") as fh:
        json.dump(grammar.to_dict(), fh, indent=2)
    return paths


# ------------------------------------------------------------- protocol


@dataclass(frozen=True)
class ProtocolSplit:
    """Observe the first p% of a video and predict the following q%.

    Window bounds use floors of the cumulative percentages: observed frames are
    ``[0, ⌊pT/100⌋)`` and targets ``[⌊pT/100⌋, ⌊(p+q)T/100⌋)``. The frame at
    index ``⌊pT/100⌋`` is therefore the first target frame, and consecutive
    q-windows tile exactly.
    """

    observe: int
    predict: int

    def __post_init__(self):
        if not (0 < self.observe and 0 < self.predict and self.observe + self.predict <= 100):
            raise ContractError(f"need 0 < p, 0 < q and p + q ≤ 100, got p={self.observe}, q={self.predict}")

    def bounds(self, num_frames: int) -> tuple[int, int]:
        return (self.observe * num_frames) // 100, ((self.observe + self.predict) * num_frames) // 100

    def __str__(self) -> str:
        return f"{self.observe}:{self.predict}"

    @classmethod
    def parse(cls, text: str) -> "ProtocolSplit":
        try:
            p, q = text.split(":")
            return cls(int(p), int(q))
        except ValueError as exc:
            raise ContractError(f"protocol must look like p:q, got {text!r}") from exc


@dataclass
class ProtocolWindow:
    video_id: str
    observed: np.ndarray  # p_frames × d
    observed_labels: list[str]
    target_labels: list[str]

    @property
    def num_targets(self) -> int:
        return len(self.target_labels)

    @property
    def observed_coarse(self) -> list[str]:
        return run_length(self.observed_labels)

    @property
    def future_coarse(self) -> list[str]:
        return run_length(self.target_labels)


def split_protocol(record: VideoRecord, p: int, q: int) -> ProtocolWindow | None:
    """Cut ``record`` into its observed and target windows; None when either window is empty."""
    start, end = ProtocolSplit(p, q).bounds(record.num_frames)
    if start == 0 or end <= start:
        return None
    labels = record.frame_labels()
    return ProtocolWindow(record.id, record.features[:start], labels[:start], labels[start:end])
