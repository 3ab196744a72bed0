"""Sensor modalities, band padding and the cross-modality training schedule."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Hashable, Mapping, Sequence, TypeVar

import numpy as np

T = TypeVar("T")


@dataclass(frozen=True)
class Modality:
    name: str
    bands: int

    def __post_init__(self):
        if self.bands < 1:
            raise ValueError(f"modality {self.name!r} needs at least one band, got {self.bands}")


# snapshot-mosaic sensors of the public HOT challenge data
STANDARD_REGISTRY = {
    "VIS": Modality("VIS", 16),
    "NIR": Modality("NIR", 25),
    "RedNIR": Modality("RedNIR", 15),
}


def make_registry(modalities: Sequence[Modality] | Mapping[str, int]) -> dict[str, Modality]:
    if isinstance(modalities, Mapping):
        modalities = [Modality(k, int(v)) for k, v in modalities.items()]
    reg: dict[str, Modality] = {}
    for m in modalities:
        if m.name in reg:
            raise ValueError(f"duplicate modality name {m.name!r}")
        reg[m.name] = m
    return reg


def max_bands(registry: Mapping[str, Modality]) -> int:
    if not registry:
        raise ValueError("empty modality registry")
    return max(m.bands for m in registry.values())


@dataclass
class HsiCube:
    """B x H x W stack of spectral planes tagged with its modality name."""

    data: np.ndarray
    modality: str = ""

    def __post_init__(self):
        if self.data.ndim != 3:
            raise ValueError(f"HsiCube expects B x H x W data, got shape {self.data.shape}")

    @property
    def bands(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]


def pad_band_axis(data: np.ndarray, b_max: int, axis: int = -3) -> np.ndarray:
    """Zero-fill the band axis of ``data`` up to ``b_max`` planes."""
    b = data.shape[axis]
    if b > b_max:
        raise ValueError(f"cube has {b} bands, more than the padded width {b_max}")
    if b == b_max:
        return data
    widths = [(0, 0)] * data.ndim
    widths[axis] = (0, b_max - b)
    return np.pad(data, widths)


def pad_bands(cube: HsiCube, b_max: int) -> HsiCube:
    """Append all-zero planes so the cube has ``b_max`` bands."""
    return HsiCube(pad_band_axis(cube.data, b_max, axis=0), cube.modality)


def modality_schedule(datasets: Mapping[Hashable, Sequence[T]], seed: int, epoch: int = 0,
                      mode: str = "round_robin") -> list[tuple[Hashable, T]]:
    """One epoch of the cross-modality training stream.

    Each modality's items are shuffled with a generator keyed on
    ``(seed, epoch, modality position)``.  ``round_robin`` then takes one item
    per modality in registry order until every list is exhausted; ``blocked``
    emits the modalities one after another.
    """
    if not datasets or all(len(v) == 0 for v in datasets.values()):
        raise ValueError("modality_schedule needs at least one non-empty modality")
    if mode not in ("round_robin", "blocked"):
        raise ValueError(f"unknown schedule mode {mode!r}")
    queues = []
    for k, (name, items) in enumerate(datasets.items()):
        order = np.random.default_rng((seed, epoch, k)).permutation(len(items))
        queues.append([(name, items[i]) for i in order])
    if mode == "blocked":
        return [x for q in queues for x in q]
    stream = []
    for r in range(max(len(q) for q in queues)):
        stream.extend(q[r] for q in queues if r < len(q))
    return stream


@dataclass
class SequenceRecord:
    """One tracking sequence: HSI frames, matching false-colour frames and boxes.

    ``frames`` is F x B x H x W, ``false_color`` F x 3 x H x W (both float32),
    ``gt_boxes`` F x 4 as (x, y, w, h) in pixels.
    """

    frames: np.ndarray
    false_color: np.ndarray
    gt_boxes: np.ndarray
    modality: Modality
    seed: int | None = None
    name: str = "sequence"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        f, b, h, w = self.frames.shape
        if self.false_color.shape != (f, 3, h, w):
            raise ValueError(f"false colour shape {self.false_color.shape} does not match frames {self.frames.shape}")
        if b != self.modality.bands:
            raise ValueError(f"frames have {b} bands but modality {self.modality.name} has {self.modality.bands}")
        self.gt_boxes = np.asarray(self.gt_boxes, dtype=np.float64).reshape(-1, 4)
        if len(self.gt_boxes) != f:
            raise ValueError(f"{len(self.gt_boxes)} boxes for {f} frames")

    def __len__(self) -> int:
        return self.frames.shape[0]

    @property
    def height(self) -> int:
        return self.frames.shape[2]

    @property
    def width(self) -> int:
        return self.frames.shape[3]

    def cube(self, i: int) -> HsiCube:
        return HsiCube(self.frames[i], self.modality.name)
