"""Run configuration for the command line: a flat JSON document, validated before any work.

Model and training keys mirror :class:`~hsitrack.model.ModelConfig` and
:class:`~hsitrack.model.TrainConfig`; the rest say where data lives, which
modalities exist and how training interleaves them.  Unknown keys, wrong
types and out-of-range values raise :class:`ConfigError` naming the key.
"""
from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

from .data.modality import STANDARD_REGISTRY
from .numeric.attention import ConfigError
from .tokenizer import GATE_MODES

# the keys written to train_config.json next to every checkpoint
TRAINING_KEYS = ("d", "heads", "backbone_blocks", "encoder_blocks", "decoder_blocks", "window",
                 "template_size", "search_size", "lr", "momentum", "epochs", "seed", "gate_mode",
                 "lambda_iou", "lambda_l1")

SCHEDULES = ("round_robin", "blocked")


@dataclass
class RunConfig:
    # model
    d: int = 32
    heads: int = 4
    backbone_blocks: int = 2
    encoder_blocks: int = 1
    decoder_blocks: int = 1
    window: int | None = None
    template_size: int = 64
    search_size: int = 128
    gate_mode: str = "content"
    alpha_fixed: float | None = None
    # optimisation
    lr: float = 0.01
    momentum: float = 0.9
    epochs: int = 1
    seed: int = 0
    lambda_iou: float = 2.0
    lambda_l1: float = 5.0
    batch_size: int = 8
    steps_per_sequence: int = 1
    max_steps: int | None = None
    # data and output
    data: str | None = None
    modalities: dict[str, int] = field(default_factory=lambda: {m.name: m.bands for m in STANDARD_REGISTRY.values()})
    schedule: str = "round_robin"
    out: str | None = None

    def training_dict(self) -> dict[str, Any]:
        return {k: getattr(self, k) for k in TRAINING_KEYS}

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @property
    def max_bands(self) -> int:
        return max(self.modalities.values())

    def digest(self) -> str:
        """sha256 of the canonical JSON form; the ``out`` directory does not change it."""
        doc = {k: v for k, v in self.to_dict().items() if k != "out"}
        return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()


_INT = {"d", "heads", "backbone_blocks", "encoder_blocks", "decoder_blocks", "template_size",
        "search_size", "epochs", "seed", "batch_size", "steps_per_sequence"}
_POSITIVE_INT = _INT - {"seed", "encoder_blocks", "decoder_blocks"}
_FLOAT = {"lr", "momentum", "lambda_iou", "lambda_l1"}
_OPTIONAL_INT = {"window", "max_steps"}
_OPTIONAL_STR = {"data", "out"}


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _check(key: str, value: Any) -> Any:
    def bad(why: str):
        raise ConfigError(f"config key {key!r}: {why} (got {value!r})")

    if key in _INT:
        if not _is_int(value):
            bad("expected an integer")
        if key in _POSITIVE_INT and value < 1:
            bad("must be at least 1")
        if value < 0:
            bad("must be non-negative")
    elif key in _FLOAT:
        if not (_is_int(value) or isinstance(value, float)):
            bad("expected a number")
        value = float(value)
        if key == "lr" and value <= 0:
            bad("must be positive")
        if key == "momentum" and not 0 <= value < 1:
            bad("must lie in [0, 1)")
        if key.startswith("lambda") and value < 0:
            bad("must be non-negative")
    elif key in _OPTIONAL_INT:
        if value is not None and (not _is_int(value) or value < 1):
            bad("expected a positive integer or null")
    elif key in _OPTIONAL_STR:
        if value is not None and not isinstance(value, str):
            bad("expected a path string or null")
    elif key == "alpha_fixed":
        if value is not None:
            if not (_is_int(value) or isinstance(value, float)) or not 0 <= value <= 1:
                bad("expected a number in [0, 1] or null")
            value = float(value)
    elif key == "gate_mode":
        if value not in GATE_MODES:
            bad(f"expected one of {list(GATE_MODES)}")
    elif key == "schedule":
        if value not in SCHEDULES:
            bad(f"expected one of {list(SCHEDULES)}")
    elif key == "modalities":
        if not isinstance(value, dict) or not value:
            bad("expected a non-empty {name: bands} object")
        for name, bands in value.items():
            if not _is_int(bands) or bands < 1:
                raise ConfigError(f"config key 'modalities.{name}': band count must be a positive integer "
                                  f"(got {bands!r})")
        value = dict(value)
    return value


KNOWN_KEYS = tuple(f.name for f in fields(RunConfig))


def validate(doc: Any) -> RunConfig:
    """Build a :class:`RunConfig` from a parsed JSON object, rejecting anything unexpected."""
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    for key in doc:
        if key not in KNOWN_KEYS:
            raise ConfigError(f"unknown config key {key!r}")
    cfg = RunConfig(**{k: _check(k, v) for k, v in doc.items()})
    if cfg.d % cfg.heads:
        raise ConfigError(f"config key 'heads': d={cfg.d} is not divisible by {cfg.heads} heads")
    return cfg


def load_config(path: str | os.PathLike) -> RunConfig:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from None
    return validate(doc)


def with_overrides(cfg: RunConfig, **overrides) -> RunConfig:
    """Apply command-line overrides (``None`` means not given) through the same checks."""
    doc = cfg.to_dict()
    doc.update({k: v for k, v in overrides.items() if v is not None})
    return validate(doc)
