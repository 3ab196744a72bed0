"""Cross-modality training loop and uni-modal evaluation helpers."""
from __future__ import annotations

import logging
from typing import Callable, Mapping, Sequence

import numpy as np

from .data.modality import SequenceRecord, modality_schedule
from .metrics import evaluate_boxes
from .model import MomentumSGD, TrackerModel, TrainBatch, TrainConfig, embedding_lr_scale, train_step
from .tracking import Tracker, sample_pair

log = logging.getLogger(__name__)


def sample_batch(record: SequenceRecord, rng: np.random.Generator, model: TrackerModel,
                 batch_size: int) -> TrainBatch:
    cfg = model.cfg
    pairs = [sample_pair(record, rng, cfg.template_size, cfg.search_size, cfg.max_bands)
             for _ in range(batch_size)]
    return TrainBatch.stack(pairs)


def train(model: TrackerModel, datasets: Mapping[str, Sequence[SequenceRecord]], tcfg: TrainConfig,
          batch_size: int = 8, steps_per_sequence: int = 1, schedule: str = "round_robin",
          max_steps: int | None = None,
          callback: Callable[[dict], None] | None = None) -> list[dict]:
    """Run ``tcfg.epochs`` passes over the interleaved modality stream.

    Every sequence in the stream contributes ``steps_per_sequence`` updates,
    each on ``batch_size`` freshly sampled pairs.  Returns one log row per step.
    """
    opt = MomentumSGD(tcfg.lr, tcfg.momentum, embedding_lr_scale(model))
    rng = np.random.default_rng((tcfg.seed, 0x5EED))
    rows: list[dict] = []
    step = 0
    for epoch in range(tcfg.epochs):
        for modality, record in modality_schedule(datasets, tcfg.seed, epoch, schedule):
            for _ in range(steps_per_sequence):
                if max_steps is not None and step >= max_steps:
                    return rows
                batch = sample_batch(record, rng, model, batch_size)
                rep = train_step(model, batch, opt, tcfg)
                row = {"step": step, "epoch": epoch, "modality": modality,
                       "sequence": record.name, **rep.as_dict()}
                rows.append(row)
                if callback is not None:
                    callback(row)
                if step % 50 == 0:
                    log.info("step %d epoch %d %s loss %.4f", step, epoch, modality, rep.total)
                step += 1
    return rows


def evaluate(model: TrackerModel, records: Sequence[SequenceRecord]) -> dict[str, dict]:
    """Track every record and score it against its ground truth."""
    tracker = Tracker(model)
    out = {}
    for rec in records:
        boxes = tracker.run(rec)
        out[rec.name] = {"boxes": boxes, **evaluate_boxes(boxes, rec.gt_boxes)}
    return out
