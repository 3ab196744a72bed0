import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.ndimage import map_coordinates

from hsitrack.data import Modality, generate_corpus
from hsitrack.metrics import iou
from hsitrack.model import BoxPrediction, ModelConfig, TrackerModel, cell_centres, target_cells
from hsitrack.numeric import Var
from hsitrack.tracking import (
    Tracker, box_to_crop, clamp_box, cosine_window, crop_resize, crop_to_frame, crops, damp_size,
    sample_pair, select_cell,
)


def _scipy_crop(image, centre, side, out):
    step = side / out
    grid = (np.arange(out) + 0.5) * step - 0.5 - side / 2
    yy, xx = np.meshgrid(centre[1] + grid, centre[0] + grid, indexing="ij")
    res = []
    for ch in image:
        # pad by one ring of the mean so out-of-frame taps read the fill value
        padded = np.pad(ch, 2, constant_values=ch.mean())
        res.append(map_coordinates(padded, [yy + 2, xx + 2], order=1, mode="nearest"))
    return np.stack(res)


@pytest.mark.parametrize("centre,side", [((20.0, 15.0), 12.0), ((3.0, 30.5), 24.0), ((39.7, 1.2), 50.0)])
def test_crop_matches_scipy(rng, centre, side):
    img = rng.normal(size=(3, 32, 40))
    np.testing.assert_allclose(crop_resize(img, centre, side, 16), _scipy_crop(img, centre, side, 16),
                               rtol=0, atol=1e-10)


def test_crop_identity_when_side_matches_output(rng):
    img = rng.normal(size=(2, 20, 20))
    np.testing.assert_allclose(crop_resize(img, (10.0, 10.0), 20.0, 20), img, atol=1e-12)


def test_float32_crop_close_to_float64(rng):
    img = rng.normal(size=(4, 48, 48))
    a = crop_resize(img.astype(np.float32), (24.3, 20.1), 30.0, 16)
    b = crop_resize(img, (24.3, 20.1), 30.0, 16)
    np.testing.assert_allclose(a, b, atol=1e-5)


@given(st.floats(0, 100), st.floats(0, 100), st.floats(1, 50), st.floats(1, 50),
       st.floats(-50, 150), st.floats(-50, 150), st.floats(8, 200))
def test_box_crop_round_trip(x, y, w, h, cx, cy, side):
    box = np.array([x, y, w, h])
    back = crop_to_frame(box_to_crop(box, (cx, cy), side, 128), (cx, cy), side, 128)
    np.testing.assert_allclose(back, box, atol=1e-9)


def test_clamp_box():
    box, lost = clamp_box([-10, -10, 30, 30], 100, 100)
    np.testing.assert_array_equal(box, [0, 0, 20, 20])
    assert not lost
    _, lost = clamp_box([120, 10, 10, 10], 100, 100)
    assert lost
    box, _ = clamp_box([50, 50, 0.1, 0.1], 100, 100)
    assert box[2] >= 2.0 and box[3] >= 2.0


def test_damp_size_keeps_centre():
    out = damp_size([0, 0, 10, 10], [20, 20, 30, 30], 0.5)
    np.testing.assert_allclose(out, [35 - 10, 35 - 10, 20, 20])
    np.testing.assert_array_equal(damp_size([0, 0, 10, 10], [5, 5, 4, 8], 1.0), [5, 5, 4, 8])


def test_select_cell_on_uniform_map_is_central_and_stable():
    for grid in (7, 8):
        cell = select_cell(np.ones(grid * grid), grid)
        i, j = divmod(cell, grid)
        c = (grid - 1) / 2
        assert abs(i - c) <= 0.5 and abs(j - c) <= 0.5
        assert cell == select_cell(np.ones(grid * grid), grid)
    assert cosine_window(8).min() > 0


def test_select_cell_prefers_window_centre():
    m = np.zeros(64)
    m[0], m[27] = 1.0, 0.9
    assert select_cell(m, 8) == 27


def test_sample_pair_box_is_inside_search_crop(rng):
    rec = generate_corpus(Modality("S", 5), 1, seed=2, frames=5)[0]
    for _ in range(10):
        t_fc, t_hsi, s_fc, s_hsi, box = sample_pair(rec, rng, 64, 128, 8)
        assert t_fc.shape == (3, 64, 64) and t_hsi.shape == (8, 64, 64) and s_hsi.shape == (8, 128, 128)
        assert not np.any(s_hsi[5:])
        cx, cy = (box[0] + box[2]) / 2, (box[1] + box[3]) / 2
        assert 0 < cx < 128 and 0 < cy < 128


def test_crops_keep_record_precision():
    rec = generate_corpus(Modality("S", 5), 1, seed=2, frames=3)[0]
    fc, hsi = crops(rec, 0, (32.0, 32.0), 40.0, 64, 6)
    assert fc.dtype == rec.frames.dtype == hsi.dtype


class OracleTracker(Tracker):
    """Emits a perfect prediction for the ground truth of the frame being searched."""

    def __init__(self, model, record):
        super().__init__(model, scale_lr=1.0)
        self.record = record

    def search(self, state, record, index):
        self._geom = super().search(state, record, index)[:2]
        self._index = index
        return super().search(state, record, index)

    def predict(self, state, s_fc, s_hsi):
        centre, side = self._geom
        size, grid = self.model.cfg.search_size, self.model.cfg.search_grid
        gt = box_to_crop(self.record.gt_boxes[self._index], centre, side, size)[None]
        cell = target_cells(gt, grid, size)[0]
        logits = np.full(grid * grid, -30.0)
        logits[cell] = 30.0
        c = cell_centres(grid)[cell]
        g = gt[0] / size
        off = np.zeros((grid * grid, 4))
        off[cell] = [c[0] - g[0], c[1] - g[1], g[2] - c[0], g[3] - c[1]]
        return BoxPrediction(Var(1 / (1 + np.exp(-logits))), Var(off), grid, size)


def test_oracle_head_tracks_perfectly():
    rec = generate_corpus(Modality("S", 4), 1, seed=5, frames=8)[0]
    model = TrackerModel.init(ModelConfig(d=16, heads=4, max_bands=4), seed=0)
    boxes = OracleTracker(model, rec).run(rec)
    ious = [iou(a, b) for a, b in zip(boxes, rec.gt_boxes)]
    np.testing.assert_allclose(ious, 1.0, atol=1e-9)


def test_tracker_outputs_valid_boxes():
    rec = generate_corpus(Modality("S", 4), 1, seed=5, frames=4)[0]
    model = TrackerModel.init(ModelConfig(d=16, heads=4, max_bands=4), seed=0)
    boxes = Tracker(model).run(rec)
    assert boxes.shape == (4, 4) and np.all(boxes[:, 2:] > 0)
    np.testing.assert_array_equal(boxes[0], rec.gt_boxes[0])
    with pytest.raises(ValueError):
        Tracker(model, scale_lr=2.0)
