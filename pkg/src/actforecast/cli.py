"""Command-line entry point: ``actforecast {generate,train,eval,forecast}``.

Settings come from built-in defaults, then an optional JSON ``--config`` file,
then explicit flags. The merged configuration is written next to every
checkpoint and inside every report so a run can be repeated exactly.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from .data import ActivityGrammar, ProtocolSplit, load_corpus, load_jsonl, load_profile, write_corpus
from .errors import ConfigError, ContractError, GrammarError, ValidationError
from .losses import LOSS_VARIANTS, LossConfig, OtParams
from .models.checkpoint import MODEL_KINDS, build_model, load_checkpoint, save_checkpoint
from .models.evaluation import evaluate_frames, evaluate_sequences
from .models.training import DEFAULT_TRAIN_PROTOCOLS, FRAME_KINDS, TrainConfig, fit, initialize, training_examples
from .models.vocab import ActionVocabulary

EXIT_CONFIG, EXIT_IO, EXIT_VALIDATION, EXIT_LOOKUP = 2, 3, 4, 5


@dataclass(frozen=True)
class RunConfig:
    corpus: str = "corpus"
    profile: str = "deterministic-kitchen"
    n_train: int = 500
    n_test: int = 100
    feature_dim: int = 64
    model: str = "seqforecast"
    loss: str = "ce"
    beta: float = 0.001
    gamma: float = 2.0
    epsilon: float = 0.05
    tf_prob: float = 0.5
    lr: float = 1e-3
    epochs: int = 10
    hidden_dim: int = 64
    protocol: str = ""
    seed: int = 0
    checkpoint: str = "model.ckpt"
    report: str = "report"
    workers: int = 1
    split: str = "test"

    def __post_init__(self):
        if self.model not in MODEL_KINDS:
            raise ConfigError(f"unknown model {self.model!r}; choose from {', '.join(MODEL_KINDS)}")
        if self.loss not in LOSS_VARIANTS:
            raise ConfigError(f"unknown loss {self.loss!r}; choose from {', '.join(LOSS_VARIANTS)}")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")
        for name in ("n_train", "n_test", "feature_dim", "hidden_dim"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")

    def protocols(self) -> list[ProtocolSplit]:
        try:
            return [ProtocolSplit.parse(p.strip()) for p in self.protocol.split(",") if p.strip()]
        except ContractError as exc:
            raise ConfigError(str(exc)) from exc

    def loss_config(self) -> LossConfig:
        ot = OtParams(epsilon=self.epsilon, beta=self.beta, unroll=False)
        return LossConfig(self.loss, ot)

    def train_config(self) -> TrainConfig:
        return TrainConfig(self.epochs, self.lr, self.tf_prob, self.gamma, self.seed, self.loss_config())


def load_config(path: str | None, overrides: dict) -> RunConfig:
    values: dict = {}
    if path:
        try:
            with open(path) as fh:
                values = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
        if not isinstance(values, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
    known = {f.name for f in fields(RunConfig)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    values.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return RunConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def _vocabulary(corpus: str, records) -> ActionVocabulary:
    grammar = Path(corpus) / "grammar.json"
    if grammar.is_file():
        return ActionVocabulary(tuple(ActivityGrammar.load(grammar).actions))
    return ActionVocabulary.from_labels(s.label for r in records for s in r.actions)


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


# ------------------------------------------------------------ subcommands


def cmd_generate(cfg: RunConfig) -> int:
    grammar = load_profile(cfg.profile, cfg.feature_dim)
    paths = write_corpus(grammar, cfg.corpus, cfg.n_train, cfg.n_test, cfg.seed, cfg.workers)
    _write_json(Path(cfg.corpus) / "config.json", asdict(cfg))
    for split, path in paths.items():
        print(f"{split}: {path}")
    return 0


def _new_model(cfg: RunConfig, records, vocab: ActionVocabulary):
    d = records[0].features.shape[1]
    longest = max(len(r.coarse) for r in records)
    # longest target is the whole video minus its first action, plus EOS
    config = {"kind": cfg.model, "classes": list(vocab.classes), "feature_dim": d,
              "hidden_dim": d if cfg.model in FRAME_KINDS else cfg.hidden_dim,
              "max_decode_len": 2 * longest, "seed": cfg.seed}
    return initialize(build_model(config), cfg.seed)


def cmd_train(cfg: RunConfig, resume: bool = False) -> int:
    records = load_corpus(cfg.corpus, "train")
    if not records:
        raise ValidationError(f"{cfg.corpus}: no training records")
    if cfg.model in FRAME_KINDS and cfg.hidden_dim != records[0].features.shape[1]:
        print(f"note: {cfg.model} uses hidden dim = feature dim = {records[0].features.shape[1]}", file=sys.stderr)
    examples = training_examples(cfg.model, records, cfg.protocols())
    tcfg = cfg.train_config()
    ckpt = Path(cfg.checkpoint)
    log = ckpt.with_name(ckpt.name + ".log.csv")
    if resume:
        model, opt, state = load_checkpoint(ckpt, cfg.lr)
        start = int(state.get("epoch", 0))
    else:
        model, opt, start = _new_model(cfg, records, _vocabulary(cfg.corpus, records)), None, 0
    opt, history = fit(model, examples, tcfg, opt, start, log,
                       on_epoch=lambda e, m: print(f"epoch {e}: mean loss {m:.6f}"))
    save_checkpoint(ckpt, model, opt, {"epoch": max(start, tcfg.epochs), "examples": len(examples)})
    _write_json(ckpt.with_name(ckpt.name + ".config.json"), asdict(cfg))
    print(f"checkpoint: {ckpt}")
    return 0


def cmd_eval(cfg: RunConfig) -> int:
    model, _, _ = load_checkpoint(cfg.checkpoint)
    records = load_corpus(cfg.corpus, cfg.split)
    protocols = cfg.protocols()
    kind = model.config()["kind"]
    if kind in FRAME_KINDS:
        protocols = protocols or list(DEFAULT_TRAIN_PROTOCOLS)
        report = evaluate_frames(model, records, protocols, cfg.workers, cfg.seed)
    elif protocols and kind == "random":
        report = evaluate_frames(model, records, protocols, cfg.workers, cfg.seed)
    elif protocols:
        raise ConfigError(f"{kind} forecasts action sequences; drop --protocol or use a weak/supervised model")
    else:
        report = evaluate_sequences(model, records, cfg.workers, cfg.seed)
    report.config = asdict(cfg)
    out = report.write(cfg.report)
    print(report.to_text(), end="")
    print(f"report: {out}")
    return 0


def cmd_forecast(cfg: RunConfig, video: str | None, input_path: str | None, observed_actions: int | None) -> int:
    model, _, _ = load_checkpoint(cfg.checkpoint)
    if input_path:
        records = load_jsonl(input_path)
    else:
        if not video:
            raise ConfigError("forecast needs --video or --input")
        pool = [r for split in ("train", "test") for r in _maybe_split(cfg.corpus, split)]
        records = [r for r in pool if r.id == video]
        if not records:
            raise LookupError(f"no video {video!r} in {cfg.corpus}")
    kind = model.config()["kind"]
    for rec in records:
        if kind in FRAME_KINDS:
            _forecast_frames(model, rec, (cfg.protocols() or [ProtocolSplit(20, 20)])[0])
        else:
            _forecast_sequence(model, rec, observed_actions)
    return 0


def _maybe_split(corpus: str, split: str):
    path = Path(corpus)
    if path.is_dir() and not (path / f"{split}.jsonl").exists():
        return []
    return load_corpus(corpus, split)


def _forecast_sequence(model, rec, observed_actions: int | None) -> None:
    spans = sorted(rec.actions, key=lambda s: s.start)
    t = max(1, len(spans) // 2) if observed_actions is None else observed_actions
    if not 1 <= t <= len(spans):
        raise ConfigError(f"--observed-actions must lie in 1..{len(spans)} for {rec.id}")
    fc = model.forecast(rec.features[: spans[t - 1].end])
    print(f"{rec.id}\tobserved: {' '.join(s.label for s in spans[:t])}")
    print(f"{rec.id}\tforecast: {' '.join(fc.symbols)}")


def _forecast_frames(model, rec, proto: ProtocolSplit) -> None:
    start, end = proto.bounds(rec.num_frames)
    if start == 0 or end <= start:
        print(f"{rec.id}\tskipped: empty {proto} window")
        return
    if model.config()["kind"] == "random":
        fc_labels = model.forecast(rec.features[:start], length=end - start).symbols
        for i, label in enumerate(fc_labels):
            print(f"{rec.id}\t{start + i}\t{label}")
        return
    fc = model.forecast_frames(rec.features[:start], end - start)
    if fc.sequence:
        print(f"{rec.id}\tsequence: {' '.join(fc.sequence)}")
    for i, (label, row) in enumerate(zip(fc.labels, fc.scores)):
        print(f"{rec.id}\t{start + i}\t{label}\t{row.max():.4f}")


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file with run settings")
    common.add_argument("--seed", type=int)
    common.add_argument("--corpus", help="corpus directory or JSONL file")
    common.add_argument("--profile", help="grammar profile for generate")
    common.add_argument("--n-train", dest="n_train", type=int)
    common.add_argument("--n-test", dest="n_test", type=int)
    common.add_argument("--feature-dim", dest="feature_dim", type=int)
    common.add_argument("--model", help=", ".join(MODEL_KINDS))
    common.add_argument("--loss", help=", ".join(LOSS_VARIANTS))
    common.add_argument("--beta", type=float, help="weight of the transport term")
    common.add_argument("--gamma", type=float, help="weight of the future branch in weak training")
    common.add_argument("--epsilon", type=float, help="entropic regularization of the transport term")
    common.add_argument("--tf-prob", dest="tf_prob", type=float, help="teacher-forcing probability")
    common.add_argument("--lr", type=float)
    common.add_argument("--epochs", type=int)
    common.add_argument("--hidden-dim", dest="hidden_dim", type=int)
    common.add_argument("--protocol", help="p:q[,p:q...]")
    common.add_argument("--checkpoint")
    common.add_argument("--report", help="output directory for eval reports")
    common.add_argument("--workers", type=int)
    common.add_argument("--split", help="corpus split to evaluate")

    parser = argparse.ArgumentParser(prog="actforecast", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("generate", parents=[common], help="write a synthetic corpus")
    train = sub.add_parser("train", parents=[common], help="train a model and save a checkpoint")
    train.add_argument("--resume", action="store_true", help="continue from --checkpoint")
    sub.add_parser("eval", parents=[common], help="evaluate a checkpoint")
    fc = sub.add_parser("forecast", parents=[common], help="forecast one video")
    fc.add_argument("--video", help="video id in the corpus")
    fc.add_argument("--input", help="JSONL file of videos")
    fc.add_argument("--observed-actions", dest="observed_actions", type=int)
    return parser


_RUN_KEYS = {f.name for f in fields(RunConfig)}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, {k: v for k, v in vars(args).items() if k in _RUN_KEYS})
        if args.command == "generate":
            return cmd_generate(cfg)
        if args.command == "train":
            return cmd_train(cfg, args.resume)
        if args.command == "eval":
            return cmd_eval(cfg)
        return cmd_forecast(cfg, args.video, args.input, args.observed_actions)
    except (ConfigError, GrammarError) as exc:
        code, msg = EXIT_CONFIG, exc
    except ValidationError as exc:  # also parse errors
        code, msg = EXIT_VALIDATION, exc
    except LookupError as exc:
        code, msg = EXIT_LOOKUP, exc.args[0] if exc.args else exc
    except OSError as exc:
        code, msg = EXIT_IO, exc
    except ContractError as exc:
        code, msg = EXIT_VALIDATION, exc
    print(f"error: {msg}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
