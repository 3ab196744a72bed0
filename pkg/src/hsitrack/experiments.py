"""Desk-scale experiments: the fusion-gate ablation and the gate's spatial profile.

The ablation trains two models from the same seed on ambiguity-mode crossing
scenes, one with the content gate and one with alpha pinned to 1 (false colour
only), and tracks held-out scenes with both.  Because target and distractor are
identical in false colour, only the model that can read the spectra should
keep hold of the target through the crossing.
"""
from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass

import numpy as np

from .data.modality import Modality, STANDARD_REGISTRY, SequenceRecord
from .data.synthetic import generate_corpus
from .model import ModelConfig, TrackerModel, TrainConfig, batch_loss
from .numeric.gradcheck import GradCheckReport, grad_check
from .tracking import SEARCH_FACTOR, MIN_SIZE, box_centre, box_to_crop, crops
from .training import evaluate, sample_batch, train

log = logging.getLogger(__name__)


def patch_overlap(boxes_xyxy: np.ndarray, grid: int, patch: int) -> np.ndarray:
    """Fraction of each of the ``grid**2`` patches covered by the union of the boxes.

    Boxes are (x1, y1, x2, y2) in crop pixels; coverage is rasterised at pixel
    resolution, which is plenty for 16-pixel patches.
    """
    size = grid * patch
    mask = np.zeros((size, size), dtype=bool)
    for x1, y1, x2, y2 in np.asarray(boxes_xyxy, dtype=np.float64).reshape(-1, 4):
        c0, c1 = int(np.clip(np.round(x1), 0, size)), int(np.clip(np.round(x2), 0, size))
        r0, r1 = int(np.clip(np.round(y1), 0, size)), int(np.clip(np.round(y2), 0, size))
        mask[r0:r1, c0:c1] = True
    return mask.reshape(grid, patch, grid, patch).mean(axis=(1, 3)).reshape(-1)


def alpha_by_region(model: TrackerModel, records: list[SequenceRecord],
                    object_frac: float = 0.5) -> dict[str, float]:
    """Mean gate value on object patches versus background patches of search crops.

    Every frame is cropped as the tracker would, centred on the target.  Patches
    at least ``object_frac`` covered by the target or the distractor count as
    object (the false-colour-ambiguous ones); patches touching no object count
    as background.  Records need ``meta["object_boxes"]``.
    """
    cfg = model.cfg
    obj, bg = [], []
    for rec in records:
        all_boxes = np.asarray(rec.meta["object_boxes"], dtype=np.float64)
        for f in range(len(rec)):
            gt = rec.gt_boxes[f]
            centre = box_centre(gt)
            side = SEARCH_FACTOR * max(gt[2], gt[3], MIN_SIZE)
            fc, hsi = crops(rec, f, centre, side, cfg.search_size, cfg.max_bands)
            _, alpha = model.tokenize(fc, hsi, "search")
            if alpha is None:
                raise ValueError("alpha_by_region needs a model with a learned gate")
            xyxy = [box_to_crop(b, centre, side, cfg.search_size) for b in all_boxes[:, f]]
            cover = patch_overlap(np.array(xyxy), cfg.search_grid, cfg.patch)
            a = alpha.value.reshape(-1)
            obj.extend(a[cover >= object_frac])
            bg.extend(a[cover == 0])
    return {"object": float(np.mean(obj)), "background": float(np.mean(bg)),
            "object_patches": len(obj), "background_patches": len(bg)}


@dataclass
class AblationResult:
    seed: int
    miou_gated: float
    miou_spatial: float
    alpha_object: float
    alpha_background: float
    seconds: float

    @property
    def gated_wins(self) -> bool:
        return self.miou_gated > self.miou_spatial

    @property
    def gate_leans_spectral(self) -> bool:
        return self.alpha_object < self.alpha_background

    def as_dict(self) -> dict:
        return {**asdict(self), "gated_wins": self.gated_wins,
                "gate_leans_spectral": self.gate_leans_spectral}


def gate_ablation(seed: int, steps: int = 500, modality: Modality = STANDARD_REGISTRY["VIS"],
                  n_train: int = 20, n_test: int = 8, d: int = 32, batch_size: int = 8,
                  lr: float = 0.01) -> AblationResult:
    """Train gated and alpha=1 models for ``steps`` updates each and compare them."""
    start = time.perf_counter()
    train_set = generate_corpus(modality, n_train, seed=1000 + seed, prefix="train")
    test_set = generate_corpus(modality, n_test, seed=2000 + seed, prefix="test")
    tcfg = TrainConfig(lr=lr, epochs=steps, seed=seed)
    scores, region = {}, {}
    for label, alpha in (("gated", None), ("spatial", 1.0)):
        cfg = ModelConfig(d=d, heads=4, max_bands=modality.bands, alpha_fixed=alpha)
        model = TrackerModel.init(cfg, seed=seed)
        train(model, {modality.name: train_set}, tcfg, batch_size=batch_size, max_steps=steps)
        res = evaluate(model, test_set)
        scores[label] = float(np.mean([r["mean_iou"] for r in res.values()]))
        if alpha is None:
            region = alpha_by_region(model, test_set)
        log.info("seed %d %s mean IoU %.3f", seed, label, scores[label])
    return AblationResult(seed, scores["gated"], scores["spatial"], region["object"],
                          region["background"], time.perf_counter() - start)


def pipeline_grad_check(seed: int, d: int = 16, bands: int = 16, batch_size: int = 2,
                        max_probes: int = 4, eps: float = 1e-5, tol: float = 1e-4) -> GradCheckReport:
    """Finite-difference check of the whole pipeline, crops to loss, at desk shapes.

    The zero-initialised blocks (positional and branch embeddings, biases, the
    gate) are jittered first so that every path carries a non-trivial gradient.
    """
    rng = np.random.default_rng(seed)
    model = TrackerModel.init(ModelConfig(d=d, heads=4, max_bands=bands), seed=seed)
    for p in model.params.values():
        if not np.any(p.value):
            p.value = rng.normal(0.0, 0.1, p.shape)
    rec = generate_corpus(Modality("GC", bands), 1, seed=seed, prefix="gc", frames=4)[0]
    batch = sample_batch(rec, rng, model, batch_size)
    tcfg = TrainConfig()
    return grad_check(lambda: batch_loss(model, batch, tcfg)[0], model.params, eps=eps, tol=tol,
                      max_probes=max_probes, directional=True, seed=seed)
