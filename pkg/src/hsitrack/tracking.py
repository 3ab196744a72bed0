"""Crop geometry, training-pair sampling and frame-by-frame tracking."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data.modality import SequenceRecord, pad_band_axis
from .model import BoxPrediction, TrackerModel
from .tokenizer import TokenGrid

TEMPLATE_FACTOR = 2.0
SEARCH_FACTOR = 4.0
MIN_SIZE = 2.0
CROP_GAIN = 4.0
SCALE_LR = 0.3   # fraction of a predicted size change adopted per frame


def _interp_matrix(coords: np.ndarray, n: int) -> tuple[np.ndarray, int]:
    """Linear-interpolation weights onto the in-range pixels ``lo..lo+k`` of an axis of length ``n``."""
    i0 = np.floor(coords).astype(int)
    frac = coords - i0
    lo = int(np.clip(i0.min(), 0, n - 1))
    hi = int(np.clip(i0.max() + 1, 0, n - 1))
    W = np.zeros((coords.size, hi - lo + 1))
    rows = np.arange(coords.size)
    for idx, wt in ((i0, 1.0 - frac), (i0 + 1, frac)):
        ok = (idx >= 0) & (idx < n)
        np.add.at(W, (rows[ok], idx[ok] - lo), wt[ok])
    return W, lo


def crop_resize(image: np.ndarray, centre: tuple[float, float], side: float, out: int,
                dtype=np.float64) -> np.ndarray:
    """Bilinear resample of the ``side`` x ``side`` square around ``centre`` to ``out`` x ``out``.

    ``image`` is (C, H, W); pixel (i, j) covers [j, j+1) x [i, i+1).  Taps that
    fall outside the frame read the per-channel mean of the image.  float32
    frames are resampled in float32 (several times faster); the result has ``dtype``.
    """
    image = np.asarray(image)
    work = np.float32 if image.dtype == np.float32 else np.float64
    c, h, w = image.shape
    step = side / out
    grid = (np.arange(out) + 0.5) * step - 0.5 - side / 2
    Wx, x_lo = _interp_matrix(centre[0] + grid, w)
    Wy, y_lo = _interp_matrix(centre[1] + grid, h)
    sub = np.asarray(image[:, y_lo:y_lo + Wy.shape[1], x_lo:x_lo + Wx.shape[1]], dtype=work)
    ky = Wy.shape[1]
    # two plain 2-D products (one BLAS call each) instead of a broadcast batch
    cols = (sub.reshape(c * ky, -1) @ Wx.T.astype(work)).reshape(c, ky, out)
    inside = (Wy.astype(work) @ cols.transpose(1, 0, 2).reshape(ky, c * out)).reshape(out, c, out)
    # weight that landed outside the frame goes to the fill value
    outside = 1.0 - np.outer(Wy.sum(axis=1), Wx.sum(axis=1))
    if np.any(np.abs(outside) > 1e-12):
        fill = image.reshape(c, -1).mean(axis=1, dtype=np.float64)
        inside = inside + (fill[None, :, None] * outside[:, None, :]).astype(work)
    return np.ascontiguousarray(inside.transpose(1, 0, 2), dtype=dtype)

def box_to_crop(box_xywh, centre, side: float, out: int) -> np.ndarray:
    """Frame (x, y, w, h) -> crop-pixel (x1, y1, x2, y2)."""
    x, y, w, h = box_xywh
    s = out / side
    ox, oy = centre[0] - side / 2, centre[1] - side / 2
    return np.array([(x - ox) * s, (y - oy) * s, (x + w - ox) * s, (y + h - oy) * s])


def crop_to_frame(xyxy, centre, side: float, out: int) -> np.ndarray:
    """Crop-pixel (x1, y1, x2, y2) -> frame (x, y, w, h)."""
    s = side / out
    ox, oy = centre[0] - side / 2, centre[1] - side / 2
    x1, y1, x2, y2 = xyxy
    return np.array([ox + x1 * s, oy + y1 * s, (x2 - x1) * s, (y2 - y1) * s])


def box_centre(box_xywh) -> tuple[float, float]:
    x, y, w, h = box_xywh
    return x + w / 2, y + h / 2


def normalize_crop(crop: np.ndarray) -> np.ndarray:
    """Remove each channel's crop mean and apply a fixed gain; all-zero (padded) planes stay zero."""
    return (crop - crop.mean(axis=(-2, -1), keepdims=True)) * CROP_GAIN


def crops(record: SequenceRecord, index: int, centre, side: float, out: int,
          max_bands: int) -> tuple[np.ndarray, np.ndarray]:
    """Normalised (false-colour, band-padded HSI) crops with identical geometry.

    Crops keep the precision of the stored frames (float32 on disk); the model
    promotes them to float64 on entry.
    """
    fc = crop_resize(record.false_color[index], centre, side, out, record.false_color.dtype)
    hsi = crop_resize(record.frames[index], centre, side, out, record.frames.dtype)
    return normalize_crop(fc), pad_band_axis(normalize_crop(hsi), max_bands, axis=0)


def sample_pair(record: SequenceRecord, rng: np.random.Generator, template_size: int,
                search_size: int, max_bands: int, shift: float = 0.8, scale: float = 0.15):
    """Random (template, search, target box) training pair from one sequence.

    The search window is centred on the target plus a uniform offset of up to
    ``shift`` box sides, with its side jittered by a log-uniform factor.
    """
    n = len(record)
    ti, si = int(rng.integers(n)), int(rng.integers(n))
    tb, sb = record.gt_boxes[ti], record.gt_boxes[si]
    t_side = TEMPLATE_FACTOR * max(tb[2], tb[3], MIN_SIZE)
    t_fc, t_hsi = crops(record, ti, box_centre(tb), t_side, template_size, max_bands)
    side_s = max(sb[2], sb[3], MIN_SIZE)
    cx, cy = box_centre(sb)
    cx += rng.uniform(-shift, shift) * side_s
    cy += rng.uniform(-shift, shift) * side_s
    s_side = SEARCH_FACTOR * side_s * float(np.exp(rng.uniform(-scale, scale)))
    s_fc, s_hsi = crops(record, si, (cx, cy), s_side, search_size, max_bands)
    box = box_to_crop(sb, (cx, cy), s_side, search_size)
    return t_fc, t_hsi, s_fc, s_hsi, box


def cosine_window(grid: int) -> np.ndarray:
    """Flattened outer product of a Hanning window whose endpoints fall outside the grid."""
    h = np.hanning(grid + 2)[1:-1]
    return np.outer(h, h).reshape(-1)


def select_cell(cls_map: np.ndarray, grid: int) -> int:
    """argmax of score x cosine window; ``np.argmax`` keeps the lowest row-major index on ties."""
    return int(np.argmax(np.asarray(cls_map).reshape(-1) * cosine_window(grid)))


@dataclass
class TrackerState:
    template_tokens: TokenGrid      # backbone features of the fixed template
    prev_box: np.ndarray            # (x, y, w, h) frame pixels
    frame_index: int = 0
    lost: bool = False
    frame_size: tuple[int, int] = (0, 0)  # (H, W)
    history: list = field(default_factory=list)


def clamp_box(box, frame_h: int, frame_w: int) -> tuple[np.ndarray, bool]:
    """Clip (x, y, w, h) to the frame; ``lost`` when nothing of it was inside."""
    x, y, w, h = box
    x1, y1 = np.clip([x, y], 0, [frame_w, frame_h])
    x2, y2 = np.clip([x + w, y + h], 0, [frame_w, frame_h])
    lost = x + w <= 0 or y + h <= 0 or x >= frame_w or y >= frame_h
    w2, h2 = max(x2 - x1, MIN_SIZE), max(y2 - y1, MIN_SIZE)
    x1, y1 = min(x1, frame_w - w2), min(y1, frame_h - h2)
    return np.array([x1, y1, w2, h2], dtype=np.float64), bool(lost)


def damp_size(prev_box, box, scale_lr: float) -> np.ndarray:
    """Keep the predicted centre but move width and height only ``scale_lr`` of the way."""
    px, py, pw, ph = prev_box
    x, y, w, h = box
    cx, cy = x + w / 2, y + h / 2
    w2, h2 = pw + scale_lr * (w - pw), ph + scale_lr * (h - ph)
    return np.array([cx - w2 / 2, cy - h2 / 2, w2, h2], dtype=np.float64)


class Tracker:
    """Single-object tracker around a trained :class:`TrackerModel`.

    ``scale_lr`` damps frame-to-frame size changes; 1.0 adopts every prediction as is.
    """

    def __init__(self, model: TrackerModel, scale_lr: float = SCALE_LR):
        if not 0.0 <= scale_lr <= 1.0:
            raise ValueError(f"scale_lr must lie in [0, 1], got {scale_lr}")
        self.model = model
        self.scale_lr = scale_lr

    def init(self, record: SequenceRecord, gt_box) -> TrackerState:
        cfg = self.model.cfg
        gt_box = np.asarray(gt_box, dtype=np.float64)
        side = TEMPLATE_FACTOR * max(gt_box[2], gt_box[3], MIN_SIZE)
        fc, hsi = crops(record, 0, box_centre(gt_box), side, cfg.template_size, cfg.max_bands)
        tokens, _ = self.model.tokenize(fc, hsi, "template")
        feats = self.model.backbone_forward(tokens, "template")
        return TrackerState(feats, gt_box, 0, False, (record.height, record.width))

    def search(self, state: TrackerState, record: SequenceRecord, index: int):
        cfg = self.model.cfg
        side = SEARCH_FACTOR * max(state.prev_box[2], state.prev_box[3], MIN_SIZE)
        centre = box_centre(state.prev_box)
        fc, hsi = crops(record, index, centre, side, cfg.search_size, cfg.max_bands)
        return centre, side, fc, hsi

    def predict(self, state: TrackerState, s_fc: np.ndarray, s_hsi: np.ndarray) -> BoxPrediction:
        tokens, _ = self.model.tokenize(s_fc, s_hsi, "search")
        feats = self.model.backbone_forward(tokens, "search")
        return self.model.predict(self.model.siamese_fuse(state.template_tokens, feats))

    def step(self, state: TrackerState, record: SequenceRecord, index: int) -> tuple[TrackerState, np.ndarray]:
        cfg = self.model.cfg
        centre, side, fc, hsi = self.search(state, record, index)
        pred = self.predict(state, fc, hsi)
        cell = select_cell(pred.cls_map, pred.grid)
        box = crop_to_frame(pred.decode(cell), centre, side, cfg.search_size)
        box = damp_size(state.prev_box, box, self.scale_lr)
        box, lost = clamp_box(box, *state.frame_size)
        new = TrackerState(state.template_tokens, box, index, lost, state.frame_size,
                           state.history + [index] if lost else state.history)
        return new, box

    def run(self, record: SequenceRecord) -> np.ndarray:
        """Boxes for every frame; frame 0 is the initialising ground truth."""
        state = self.init(record, record.gt_boxes[0])
        boxes = [np.asarray(record.gt_boxes[0], dtype=np.float64)]
        for i in range(1, len(record)):
            state, box = self.step(state, record, i)
            boxes.append(box)
        return np.stack(boxes)


def track_step(state: TrackerState, record: SequenceRecord, index: int,
               model: TrackerModel) -> tuple[TrackerState, np.ndarray]:
    return Tracker(model).step(state, record, index)
