"""Multi-head attention blocks composed from tape primitives."""
from __future__ import annotations

import math

import numpy as np

from .tape import Var, gelu, layer_norm, linear_apply, matmul, reshape, softmax, transpose, add, mul

BLOCK_KEYS = (
    "wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo",
    "ln1_g", "ln1_b", "w1", "b1", "w2", "b2", "ln2_g", "ln2_b",
)
MLP_RATIO = 2
# additive mask value; exp() of it underflows to exactly 0
MASK_NEG = -1e30


class ConfigError(ValueError):
    """Model configuration is inconsistent."""


def init_block(rng: np.random.Generator, d: int, prefix: str = "") -> dict[str, Var]:
    """Fresh parameters for one attention block (pre-named for checkpoints)."""
    h = MLP_RATIO * d
    shapes = {
        "wq": (d, d), "wk": (d, d), "wv": (d, d), "wo": (d, d),
        "w1": (d, h), "w2": (h, d),
    }
    p: dict[str, Var] = {}
    for key in BLOCK_KEYS:
        if key in shapes:
            fan_in = shapes[key][0]
            val = rng.normal(0.0, 1.0 / math.sqrt(fan_in), size=shapes[key])
        elif key == "b1":
            val = np.zeros((1, h))
        elif key.endswith("_g"):
            val = np.ones((1, d))
        else:
            val = np.zeros((1, d))
        p[key] = Var(val, requires_grad=True, name=prefix + key)
    return p


def window_mask(grid_h: int, grid_w: int, window: int, shift: int = 0) -> np.ndarray:
    """Additive (M, M) mask confining attention to ``window`` x ``window`` cells.

    With ``shift`` the window partition is offset by ``shift`` cells, which is
    the masked form of a cyclically shifted window layout.
    """
    if grid_h != grid_w:
        raise ConfigError(f"windowed attention needs a square token grid, got {grid_h}x{grid_w}")
    if window <= 0 or grid_h % window:
        raise ConfigError(f"grid side {grid_h} is not divisible into windows of {window}")
    rows, cols = np.divmod(np.arange(grid_h * grid_w), grid_w)
    wid = ((rows + shift) // window) * (grid_w + window) + (cols + shift) // window
    same = wid[:, None] == wid[None, :]
    return np.where(same, 0.0, MASK_NEG)


def multi_head_attention(q_in: Var, kv_in: Var, p: dict[str, Var], heads: int,
                         mask: np.ndarray | None = None) -> Var:
    """Scaled dot-product attention from ``q_in`` (..., Mq, d) over ``kv_in`` (..., Mk, d)."""
    d = q_in.shape[-1]
    if d % heads:
        raise ConfigError(f"embedding size {d} is not divisible by {heads} heads")
    dh = d // heads
    lead = q_in.shape[:-2]
    mq, mk = q_in.shape[-2], kv_in.shape[-2]
    nl = len(lead)

    def split(x: Var, m: int) -> Var:
        x = reshape(x, lead + (m, heads, dh))
        return transpose(x, tuple(range(nl)) + (nl + 1, nl, nl + 2))

    q = split(linear_apply(q_in, p["wq"], p["bq"]), mq)
    k = split(linear_apply(kv_in, p["wk"], p["bk"]), mk)
    v = split(linear_apply(kv_in, p["wv"], p["bv"]), mk)
    kt = transpose(k, tuple(range(nl + 1)) + (nl + 2, nl + 1))
    scores = mul(matmul(q, kt), 1.0 / math.sqrt(dh))
    if mask is not None:
        scores = add(scores, mask)
    attn = softmax(scores, axis=-1)
    ctx = matmul(attn, v)
    ctx = transpose(ctx, tuple(range(nl)) + (nl + 1, nl, nl + 2))
    ctx = reshape(ctx, lead + (mq, d))
    return linear_apply(ctx, p["wo"], p["bo"])


def _mlp(x: Var, p: dict[str, Var]) -> Var:
    h = gelu(linear_apply(layer_norm(x, p["ln2_g"], p["ln2_b"]), p["w1"], p["b1"]))
    return add(x, linear_apply(h, p["w2"], p["b2"]))


def attention_block(tokens: Var, p: dict[str, Var], heads: int,
                    mask: np.ndarray | None = None) -> Var:
    """Pre-norm transformer block: h = x + MHA(LN(x)), out = h + MLP(LN(h))."""
    x = _as_tokens(tokens)
    n = layer_norm(x, p["ln1_g"], p["ln1_b"])
    return _mlp(add(x, multi_head_attention(n, n, p, heads, mask)), p)


def cross_attention_block(queries: Var, memory: Var, p: dict[str, Var], heads: int) -> Var:
    """Same block shape as :func:`attention_block` but queries attend over ``memory``."""
    q = _as_tokens(queries)
    n = layer_norm(q, p["ln1_g"], p["ln1_b"])
    return _mlp(add(q, multi_head_attention(n, memory, p, heads)), p)


def _as_tokens(x) -> Var:
    return x if isinstance(x, Var) else Var(x)
