"""Dual patch tokenisation and adaptive spatial-spectral token fusion.

Both the false-colour image and the (band-padded) hyperspectral cube are cut
into non-overlapping P x P patches, flattened channel-major (channel, then
row, then column) and linearly embedded into d dimensions by separate
projections.  A gate produces one weight ``alpha_i`` in (0, 1) per patch and
the fused token is ``alpha_i * z_fc_i + (1 - alpha_i) * z_hsi_i``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .numeric import DimensionError, Var, add, concat, linear_apply, mul, reshape, sigmoid, sub
from .numeric.tape import _as_var

PATCH = 16
GATE_MODES = ("content", "positional")


class DomainError(ValueError):
    """A fusion weight lies outside [0, 1]."""


@dataclass
class PatchSet:
    patches: np.ndarray  # M x C x P x P, row-major over the grid
    grid_h: int
    grid_w: int
    patch_size: int

    @property
    def count(self) -> int:
        return self.patches.shape[0]

    def flat(self) -> np.ndarray:
        return self.patches.reshape(self.count, -1)


@dataclass
class TokenGrid:
    tokens: Var  # (..., M, d)
    grid_h: int
    grid_w: int

    @property
    def count(self) -> int:
        return self.grid_h * self.grid_w


def patchify(images: np.ndarray, p: int = PATCH) -> np.ndarray:
    """(..., C, H, W) -> (..., M, C*P*P) flattened patches in row-major grid order."""
    *lead, c, h, w = images.shape
    if h % p or w % p:
        raise DimensionError(f"image {h}x{w} is not divisible into {p}x{p} patches (H={h}, W={w}, P={p})")
    gh, gw = h // p, w // p
    x = images.reshape(*lead, c, gh, p, gw, p)
    n = len(lead)
    x = np.moveaxis(x, (n + 1, n + 3), (n, n + 1))  # (..., gh, gw, c, p, p)
    return x.reshape(*lead, gh * gw, c * p * p)


def extract_patches(cube, p: int = PATCH) -> PatchSet:
    """Tile a C x H x W cube into non-overlapping P x P patches (no crop or pad)."""
    data = getattr(cube, "data", cube)
    data = np.asarray(data)
    if data.ndim != 3:
        raise DimensionError(f"expected a C x H x W cube, got shape {data.shape}")
    c, h, w = data.shape
    flat = patchify(data, p)
    return PatchSet(flat.reshape(-1, c, p, p), h // p, w // p, p)


def embed_patches(ps: PatchSet, E, b) -> TokenGrid:
    """token_i = flatten(patch_i) @ E + b."""
    E = _as_var(E)
    if E.shape[0] != ps.flat().shape[1]:
        raise DimensionError(
            f"embedding has {E.shape[0]} input rows but patches flatten to {ps.flat().shape[1]} values")
    return TokenGrid(linear_apply(ps.flat(), E, b), ps.grid_h, ps.grid_w)


@dataclass
class FusionParams:
    E_fc: Var
    b_fc: Var
    E_hsi: Var
    b_hsi: Var
    gate_mode: str = "content"
    gate_w: Var | None = None      # (2d, 1), content mode
    gate_b: Var | None = None      # (1, 1), content mode
    gate_logits: dict[str, Var] | None = None  # branch -> (1, M), positional mode

    def __post_init__(self):
        if self.gate_mode not in GATE_MODES:
            raise ValueError(f"gate mode must be one of {GATE_MODES}, got {self.gate_mode!r}")
        if self.gate_mode == "content" and (self.gate_w is None or self.gate_b is None):
            raise ValueError("content gate needs gate_w and gate_b")
        if self.gate_mode == "positional" and not self.gate_logits:
            raise ValueError("positional gate needs per-branch logits")

    @property
    def d(self) -> int:
        return self.E_fc.shape[1]

    def named(self) -> dict[str, Var]:
        out = {"tok.E_fc": self.E_fc, "tok.b_fc": self.b_fc,
               "tok.E_hsi": self.E_hsi, "tok.b_hsi": self.b_hsi}
        if self.gate_mode == "content":
            out["tok.gate.W"] = self.gate_w
            out["tok.gate.b"] = self.gate_b
        else:
            for branch, v in self.gate_logits.items():
                out[f"tok.gate.logits_{branch}"] = v
        return out


def init_fusion(rng: np.random.Generator, d: int, max_bands: int, p: int = PATCH,
                gate_mode: str = "content", grids: dict[str, int] | None = None,
                E_rgb: np.ndarray | None = None) -> FusionParams:
    """Embeddings with ``E_hsi`` inflated from the (given or random) RGB projection; gate starts at alpha = 0.5."""
    k = 3 * p * p
    if E_rgb is None:
        E_rgb = rng.normal(0.0, 1.0 / math.sqrt(k), size=(k, d))
    E_hsi = inflate_embedding(E_rgb, max_bands)
    kw = {}
    if gate_mode == "content":
        kw["gate_w"] = Var(np.zeros((2 * d, 1)), requires_grad=True, name="tok.gate.W")
        kw["gate_b"] = Var(np.zeros((1, 1)), requires_grad=True, name="tok.gate.b")
    else:
        kw["gate_logits"] = {br: Var(np.zeros((1, m)), requires_grad=True, name=f"tok.gate.logits_{br}")
                             for br, m in (grids or {}).items()}
    return FusionParams(
        Var(np.array(E_rgb, dtype=np.float64), True, "tok.E_fc"),
        Var(np.zeros((1, d)), True, "tok.b_fc"),
        Var(E_hsi, True, "tok.E_hsi"),
        Var(np.zeros((1, d)), True, "tok.b_hsi"),
        gate_mode=gate_mode, **kw)


def compute_alpha(z_fc: TokenGrid, z_hsi: TokenGrid, params: FusionParams,
                  branch: str = "search") -> Var:
    """Per-token fusion weights of shape (..., M), strictly inside (0, 1).

    Content mode gates on the concatenated token pair; positional mode uses
    one free logit per patch index of the given branch.
    """
    if z_fc.tokens.shape != z_hsi.tokens.shape or (z_fc.grid_h, z_fc.grid_w) != (z_hsi.grid_h, z_hsi.grid_w):
        raise DimensionError(f"token grids differ: {z_fc.tokens.shape} vs {z_hsi.tokens.shape}")
    if params.gate_mode == "content":
        pair = concat([z_fc.tokens, z_hsi.tokens], axis=-1)
        logit = linear_apply(pair, params.gate_w, params.gate_b)
        return sigmoid(reshape(logit, logit.shape[:-1]))
    logits = params.gate_logits.get(branch)
    if logits is None:
        raise DimensionError(f"no positional gate logits for branch {branch!r}")
    if logits.value.size != z_fc.count:
        raise DimensionError(f"branch {branch!r} has {logits.value.size} gate logits for {z_fc.count} tokens")
    alpha = sigmoid(reshape(logits, (z_fc.count,)))
    lead = z_fc.tokens.shape[:-2]
    if lead:
        alpha = add(alpha, np.zeros(lead + (z_fc.count,)))
    return alpha


def fuse_tokens(z_fc: TokenGrid, z_hsi: TokenGrid, alpha) -> TokenGrid:
    """Convex combination ``alpha * z_fc + (1 - alpha) * z_hsi`` per token."""
    if z_fc.tokens.shape != z_hsi.tokens.shape:
        raise DimensionError(f"token grids differ: {z_fc.tokens.shape} vs {z_hsi.tokens.shape}")
    alpha = _as_var(alpha)
    if alpha.shape != z_fc.tokens.shape[:-1]:
        raise DimensionError(f"alpha shape {alpha.shape} does not match tokens {z_fc.tokens.shape}")
    if np.any(alpha.value < 0) or np.any(alpha.value > 1) or not np.all(np.isfinite(alpha.value)):
        raise DomainError("fusion weights must lie in [0, 1]")
    a = reshape(alpha, alpha.shape + (1,))
    out = add(mul(a, z_fc.tokens), mul(sub(1.0, a), z_hsi.tokens))
    return TokenGrid(out, z_fc.grid_h, z_fc.grid_w)


def inflate_embedding(E_rgb: np.ndarray, bands: int) -> np.ndarray:
    """Expand a 3-channel patch embedding to ``bands`` spectral channels.

    Band b copies the rows of channel ``b % 3`` divided by the number of bands
    sharing that channel, so a cube whose band planes repeat the RGB planes
    embeds to exactly the RGB tokens.
    """
    E_rgb = np.asarray(E_rgb, dtype=np.float64)
    if bands < 1:
        raise ValueError(f"bands must be >= 1, got {bands}")
    if E_rgb.ndim != 2 or E_rgb.shape[0] % 3:
        raise DimensionError(f"RGB embedding must have 3*P*P rows, got shape {E_rgb.shape}")
    pp = E_rgb.shape[0] // 3
    src = np.arange(bands) % 3
    counts = np.bincount(src, minlength=3)
    blocks = [E_rgb[s * pp:(s + 1) * pp] / counts[s] for s in src]
    return np.concatenate(blocks, axis=0)


def replicate_channels(rgb: np.ndarray, bands: int) -> np.ndarray:
    """Band b of the result is RGB channel ``b % 3`` (the inflation test input)."""
    return np.asarray(rgb)[np.arange(bands) % 3]
