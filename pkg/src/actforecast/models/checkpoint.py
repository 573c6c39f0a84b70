"""Self-describing binary checkpoints.

Layout, all integers little-endian::

    magic    8 bytes   b"ACTFCST\\0"
    version  uint32
    hlen     uint64    byte length of the header
    header   hlen bytes of UTF-8 JSON
    payload  float64 arrays, little-endian, row-major, back to back

The header holds ``kind``, ``config`` (dims and vocabulary), ``train_state``
(epoch, optimizer step count, free-form extras) and ``arrays``: a list of
``{"name", "shape", "offset"}`` entries where ``offset`` counts bytes from the
start of the payload. Parameter arrays use their module names; Adam moments
are stored as ``opt.m/<name>`` and ``opt.v/<name>``.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..errors import ConfigError, ValidationError
from ..nn import Adam, Module
from .baselines import LstmForecaster, MlpForecaster, RandomForecaster
from .seqforecast import SeqForecaster
from .vocab import ActionVocabulary
from .weak import WeakForecaster

MAGIC = b"ACTFCST\0"
VERSION = 1
MODEL_KINDS = ("seqforecast", "weak", "supervised", "mlp", "lstm", "random")


def build_model(config: dict) -> Module:
    kind = config.get("kind")
    vocab = ActionVocabulary(tuple(config["classes"]))
    d, hidden = config.get("feature_dim"), config.get("hidden_dim")
    if kind == "seqforecast":
        return SeqForecaster(vocab, d, hidden, config.get("max_decode_len", 20))
    if kind in ("weak", "supervised"):
        return WeakForecaster(vocab, d, hidden, kind, config.get("max_decode_len", 20))
    if kind == "mlp":
        return MlpForecaster(vocab, d, hidden)
    if kind == "lstm":
        return LstmForecaster(vocab, d, hidden)
    if kind == "random":
        return RandomForecaster(vocab, config.get("max_decode_len", 20), config.get("seed", 0))
    raise ConfigError(f"unknown model kind {kind!r}; choose from {', '.join(MODEL_KINDS)}")


def save_checkpoint(path: str | Path, model: Module, optimizer: Adam | None = None,
                    train_state: dict | None = None) -> None:
    arrays = dict(model.state_dict())
    state = dict(train_state or {})
    if optimizer is not None:
        opt = optimizer.state_dict()
        state["adam_t"] = opt["t"]
        arrays.update({f"opt.{k}": v for k, v in opt["arrays"].items()})
    directory, offset = [], 0
    for name, arr in arrays.items():
        directory.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += arr.size * 8
    header = json.dumps({"kind": model.config()["kind"], "config": model.config(), "train_state": state,
                         "arrays": directory}, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC + struct.pack("<IQ", VERSION, len(header)) + header)
        for arr in arrays.values():
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def read_checkpoint(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    """Header and named arrays of a checkpoint file."""
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise ValidationError(f"{path}: not a checkpoint file")
    version, hlen = struct.unpack("<IQ", raw[8:20])
    if version != VERSION:
        raise ValidationError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(raw[20:20 + hlen])
    payload = memoryview(raw)[20 + hlen:]
    arrays = {}
    for entry in header["arrays"]:
        n = int(np.prod(entry["shape"], dtype=np.int64))
        off = entry["offset"]
        if off + 8 * n > len(payload):
            raise ValidationError(f"{path}: truncated array {entry['name']!r}")
        arrays[entry["name"]] = np.frombuffer(payload[off:off + 8 * n], dtype="<f8").reshape(entry["shape"]).copy()
    return header, arrays


def load_checkpoint(path: str | Path, optimizer_lr: float | None = None):
    """(model, optimizer or None, train_state) restored from ``path``."""
    header, arrays = read_checkpoint(path)
    model = build_model(header["config"])
    model.load_state_dict({k: v for k, v in arrays.items() if not k.startswith("opt.")})
    state = header["train_state"]
    optimizer = None
    if "adam_t" in state:
        optimizer = Adam(model.named_parameters(), **({} if optimizer_lr is None else {"lr": optimizer_lr}))
        optimizer.load_state_dict({"t": state["adam_t"],
                                   "arrays": {k[4:]: v for k, v in arrays.items() if k.startswith("opt.")}})
    return model, optimizer, state
