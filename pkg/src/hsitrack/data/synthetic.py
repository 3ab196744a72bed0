"""Synthetic snapshot-hyperspectral tracking sequences.

Scenes are flat backgrounds with rectangles that move along linear paths plus
a sinusoidal wobble.  Each pixel's spectrum is a coverage-weighted mix of the
background and object signatures, with i.i.d. Gaussian noise per band.  The
false-colour image is ``F @ spectrum`` for a fixed 3 x B filter matrix built
from smooth bumps over the band axis.

In ambiguity mode the distractor's signature is the target's plus a vector
from the null space of ``F``: both objects render to the same false colour
while their spectra stay clearly apart.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .modality import Modality, SequenceRecord


class InfeasibleSceneError(ValueError):
    pass


def false_color_matrix(bands: int) -> np.ndarray:
    """3 x B matrix of Gaussian bumps (centres at 1/6, 1/2, 5/6 of the band axis), rows L1-normalised."""
    k = np.arange(bands, dtype=np.float64)
    centres = (bands - 1) * np.array([1 / 6, 1 / 2, 5 / 6])
    width = max(bands / 6.0, 0.5)
    F = np.exp(-0.5 * ((k[None, :] - centres[:, None]) / width) ** 2)
    return F / F.sum(axis=1, keepdims=True)


def null_direction(F: np.ndarray) -> np.ndarray:
    """Unit-peak vector ``n`` with ``F @ n = 0``, biased towards high spectral frequency."""
    b = F.shape[1]
    _, s, vt = np.linalg.svd(F)
    rank = int((s > 1e-10 * s[0]).sum())
    if rank >= b:
        raise InfeasibleSceneError(f"false-colour matrix has a trivial null space with {b} bands")
    basis = vt[rank:]
    # an alternating pattern is almost invisible to smooth filters; project it onto the null space
    pattern = np.cos(np.pi * np.arange(b))
    n = basis.T @ (basis @ pattern)
    if np.abs(n).max() < 1e-9:
        n = basis[0]
    return n / np.abs(n).max()


def ambiguous_partner(target: np.ndarray, F: np.ndarray, strength: float = 0.3) -> np.ndarray:
    """Signature with the same false colour as ``target`` that stays inside [0, 1]."""
    n = null_direction(F)
    with np.errstate(divide="ignore"):
        room_up = np.where(n > 0, (1.0 - target) / n, np.inf)
        room_dn = np.where(n < 0, -target / n, np.inf)
    c = min(strength, float(room_up.min()), float(room_dn.min()))
    if c <= 0:
        raise InfeasibleSceneError("target signature leaves no room for a null-space partner")
    return target + c * n


def spectral_angle(a: np.ndarray, b: np.ndarray) -> float:
    """Angle between two spectra in degrees."""
    cos = float(a @ b) / (np.linalg.norm(a) * np.linalg.norm(b))
    return float(np.degrees(np.arccos(np.clip(cos, -1.0, 1.0))))


def default_signatures(bands: int) -> dict[str, np.ndarray]:
    """Target, background and plain-distractor spectra used by the scene builders."""
    x = np.linspace(0.0, 1.0, bands)
    return {
        "target": 0.5 + 0.15 * np.sin(2 * np.pi * x + 0.5),
        "background": 0.18 + 0.06 * np.cos(np.pi * x),
        "distractor": 0.8 - 0.3 * x,
    }


@dataclass
class ObjectSpec:
    width: float
    height: float
    start: tuple[float, float]                 # centre at frame 0, pixels
    velocity: tuple[float, float] = (0.0, 0.0)  # pixels / frame
    amplitude: tuple[float, float] = (0.0, 0.0)
    period: float = 16.0
    phase: float = 0.0
    signature: np.ndarray | None = None

    def centre(self, t: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        wob = np.sin(2 * np.pi * t / self.period + self.phase)
        return (self.start[0] + self.velocity[0] * t + self.amplitude[0] * wob,
                self.start[1] + self.velocity[1] * t + self.amplitude[1] * wob)


@dataclass
class SceneSpec:
    """Everything needed to render one sequence; ``objects[0]`` is the tracked target."""

    height: int
    width: int
    frames: int
    modality: Modality
    objects: list[ObjectSpec]
    background: np.ndarray
    noise_sigma: float = 0.02
    ambiguity: bool = False
    ambiguity_strength: float = 0.3
    meta: dict = field(default_factory=dict)


def _coverage(lo: float, size: float, n: int) -> np.ndarray:
    edges = np.arange(n, dtype=np.float64)
    return np.clip(np.minimum(lo + size, edges + 1) - np.maximum(lo, edges), 0.0, 1.0)


def resolve_signatures(spec: SceneSpec) -> list[np.ndarray]:
    """Per-object spectra, filling the distractor in ambiguity mode."""
    b = spec.modality.bands
    sigs = []
    for i, obj in enumerate(spec.objects):
        if spec.ambiguity and i == 1:
            F = false_color_matrix(b)
            sig = ambiguous_partner(np.asarray(spec.objects[0].signature, dtype=np.float64), F,
                                    spec.ambiguity_strength)
        elif obj.signature is None:
            raise ValueError(f"object {i} has no signature")
        else:
            sig = np.asarray(obj.signature, dtype=np.float64)
        if sig.shape != (b,) or sig.min() < 0 or sig.max() > 1:
            raise ValueError(f"object {i} signature must be {b} values in [0, 1]")
        sigs.append(sig)
    return sigs


def generate_synthetic_sequence(spec: SceneSpec, seed: int, name: str = "synthetic") -> SequenceRecord:
    """Render ``spec``; ``seed`` drives the sensor noise only, so output is reproducible."""
    if spec.ambiguity and len(spec.objects) < 2:
        raise ValueError("ambiguity mode needs a target and a distractor")
    b, h, w, nf = spec.modality.bands, spec.height, spec.width, spec.frames
    sigs = resolve_signatures(spec)
    bg = np.asarray(spec.background, dtype=np.float64)
    F = false_color_matrix(b)
    rng = np.random.default_rng(seed)
    t = np.arange(nf, dtype=np.float64)
    paths = [obj.centre(t) for obj in spec.objects]

    frames = np.empty((nf, b, h, w), dtype=np.float32)
    fc = np.empty((nf, 3, h, w), dtype=np.float32)
    all_boxes = np.zeros((len(spec.objects), nf, 4))
    for f in range(nf):
        img = np.broadcast_to(bg[:, None, None], (b, h, w)).copy()
        # paint back to front so the target (index 0) ends up on top
        for k in range(len(spec.objects) - 1, -1, -1):
            obj = spec.objects[k]
            x0 = paths[k][0][f] - obj.width / 2
            y0 = paths[k][1][f] - obj.height / 2
            cov = np.outer(_coverage(y0, obj.height, h), _coverage(x0, obj.width, w))
            img = img * (1.0 - cov) + sigs[k][:, None, None] * cov
            bx0, by0 = max(x0, 0.0), max(y0, 0.0)
            bx1, by1 = min(x0 + obj.width, w), min(y0 + obj.height, h)
            all_boxes[k, f] = (bx0, by0, max(bx1 - bx0, 0.0), max(by1 - by0, 0.0))
        if spec.noise_sigma > 0:
            img = img + rng.normal(0.0, spec.noise_sigma, size=img.shape)
        frames[f] = img
        fc[f] = np.tensordot(F, img, axes=(1, 0))
    # boxes of every object (target first), e.g. to locate the distractor
    meta = {"ambiguity": spec.ambiguity, "object_boxes": all_boxes.tolist(), **spec.meta}
    return SequenceRecord(frames, fc, all_boxes[0].copy(), spec.modality, seed=seed, name=name, meta=meta)


def crossing_scene(modality: Modality, rng: np.random.Generator, *, height: int = 128,
                   width: int = 128, frames: int = 24, size: float = 16.0,
                   noise_sigma: float = 0.02, ambiguity: bool = True,
                   signatures: dict[str, np.ndarray] | None = None) -> SceneSpec:
    """Target and distractor of equal size travelling towards each other and passing close by.

    Crossing halfway through the sequence is what makes a purely visual
    tracker liable to swap onto the distractor.
    """
    sig = signatures or default_signatures(modality.bands)
    speed = rng.uniform(0.9, 1.6)
    span = speed * (frames - 1)
    horizontal = bool(rng.integers(2))
    direction = 1.0 if rng.integers(2) else -1.0
    offset = rng.uniform(0.5, 0.9) * size * (1.0 if rng.integers(2) else -1.0)
    cx, cy = width / 2 + rng.uniform(-8, 8), height / 2 + rng.uniform(-8, 8)
    wobble = rng.uniform(0.0, 3.0)
    phase = rng.uniform(0, 2 * np.pi)
    period = rng.uniform(10, 20)

    def place(sign: float, lateral: float) -> ObjectSpec:
        along0 = -sign * direction * span / 2
        v = sign * direction * speed
        if horizontal:
            start, vel, amp = (cx + along0, cy + lateral), (v, 0.0), (0.0, wobble)
        else:
            start, vel, amp = (cx + lateral, cy + along0), (0.0, v), (wobble, 0.0)
        return ObjectSpec(size, size, start, vel, amp, period, phase)

    target = replace(place(1.0, 0.0), signature=sig["target"])
    distractor = place(-1.0, offset)
    if not ambiguity:
        distractor.signature = sig["distractor"]
    return SceneSpec(height, width, frames, modality, [target, distractor], sig["background"],
                     noise_sigma=noise_sigma, ambiguity=ambiguity)


def generate_corpus(modality: Modality, count: int, seed: int, prefix: str = "seq",
                    **scene_kw) -> list[SequenceRecord]:
    """``count`` independent crossing sequences; fully determined by ``seed``."""
    out = []
    for i in range(count):
        rng = np.random.default_rng((seed, i))
        spec = crossing_scene(modality, rng, **scene_kw)
        out.append(generate_synthetic_sequence(spec, seed=int(rng.integers(2**31)),
                                               name=f"{prefix}_{modality.name}_{i:03d}"))
    return out
