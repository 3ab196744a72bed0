"""Toy-scale Siamese transformer tracker.

Template and search crops are tokenised by the fusion tokenizer, pass through
one shared backbone, are fused by a transformer encoder over the joined token
sequence plus a cross-attention decoder reading out the search tokens, and a
per-token head predicts a target score and (l, t, r, b) box offsets.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .numeric import (
    ConfigError, DimensionError, Tape, Var, absolute, add, attention_block, concat,
    cross_attention_block, div, gelu, init_block, linear_apply, maximum, mean, minimum, mul,
    relu, reshape, softplus, sub, take, window_mask,
)
from .numeric.checkpoint import load_checkpoint, save_checkpoint
from .tokenizer import (
    GATE_MODES, PATCH, FusionParams, TokenGrid, compute_alpha, fuse_tokens, init_fusion, patchify,
)


@dataclass
class ModelConfig:
    d: int = 96
    heads: int = 4
    backbone_blocks: int = 2
    encoder_blocks: int = 1
    decoder_blocks: int = 1
    window: int | None = None
    template_size: int = 64
    search_size: int = 128
    patch: int = PATCH
    max_bands: int = 25
    gate_mode: str = "content"
    alpha_fixed: float | None = None

    def __post_init__(self):
        if self.d % self.heads:
            raise ConfigError(f"d={self.d} is not divisible by heads={self.heads}")
        for key in ("template_size", "search_size"):
            if getattr(self, key) % self.patch:
                raise ConfigError(f"{key}={getattr(self, key)} is not divisible by patch size {self.patch}")
        if self.gate_mode not in GATE_MODES:
            raise ConfigError(f"gate_mode must be one of {GATE_MODES}, got {self.gate_mode!r}")
        if self.alpha_fixed is not None and not 0.0 <= self.alpha_fixed <= 1.0:
            raise ConfigError(f"alpha_fixed must lie in [0, 1], got {self.alpha_fixed}")
        if self.window is not None:
            # fail early rather than at the first forward pass
            window_mask(self.template_grid, self.template_grid, self.window)
            window_mask(self.search_grid, self.search_grid, self.window)

    @property
    def template_grid(self) -> int:
        return self.template_size // self.patch

    @property
    def search_grid(self) -> int:
        return self.search_size // self.patch


@dataclass
class TrainConfig:
    lr: float = 0.01
    momentum: float = 0.9
    epochs: int = 1
    seed: int = 0
    lambda_iou: float = 2.0
    lambda_l1: float = 5.0
    clip_norm: float | None = 5.0   # global gradient-norm cap; None disables


@dataclass
class BoxPrediction:
    cls_logits: Var   # (..., M_s)
    offsets: Var      # (..., M_s, 4) fractions of the search size
    grid: int
    search_size: int

    @property
    def cls_map(self) -> np.ndarray:
        return 1.0 / (1.0 + np.exp(-self.cls_logits.value))

    def decode(self, index: int | None = None) -> np.ndarray:
        """(x1, y1, x2, y2) boxes in search-crop pixels for every cell (or one cell)."""
        boxes = decode_offsets(self.offsets.value, self.grid, self.search_size)
        return boxes if index is None else boxes[..., index, :]


# softplus(BOX_BIAS) = 1/8: a target spanning a quarter of the search crop
BOX_BIAS = math.log(math.expm1(0.125))


def cell_centres(grid: int) -> np.ndarray:
    """(M, 2) normalised (x, y) cell centres in row-major order."""
    c = (np.arange(grid) + 0.5) / grid
    ys, xs = np.meshgrid(c, c, indexing="ij")
    return np.stack([xs.reshape(-1), ys.reshape(-1)], axis=1)


def decode_offsets(offsets: np.ndarray, grid: int, size: float) -> np.ndarray:
    cxy = cell_centres(grid)
    x1 = cxy[:, 0] - offsets[..., 0]
    y1 = cxy[:, 1] - offsets[..., 1]
    x2 = cxy[:, 0] + offsets[..., 2]
    y2 = cxy[:, 1] + offsets[..., 3]
    return np.stack([x1, y1, x2, y2], axis=-1) * size


class TrackerModel:
    """Parameters plus the forward pieces of the tracker."""

    def __init__(self, cfg: ModelConfig, params: dict[str, Var]):
        self.cfg = cfg
        self.params = params
        self._masks: dict[tuple[int, int], np.ndarray] = {}

    # -- construction ------------------------------------------------------
    @classmethod
    def init(cls, cfg: ModelConfig, seed: int = 0, E_rgb: np.ndarray | None = None) -> "TrackerModel":
        rng = np.random.default_rng(seed)
        d = cfg.d
        fusion = init_fusion(rng, d, cfg.max_bands, cfg.patch, cfg.gate_mode,
                             grids={"template": cfg.template_grid ** 2, "search": cfg.search_grid ** 2},
                             E_rgb=E_rgb)
        p: dict[str, Var] = dict(fusion.named())
        p["bb.pos_template"] = Var(np.zeros((cfg.template_grid ** 2, d)), True, "bb.pos_template")
        p["bb.pos_search"] = Var(np.zeros((cfg.search_grid ** 2, d)), True, "bb.pos_search")
        for i in range(cfg.backbone_blocks):
            p.update(_prefixed(init_block(rng, d), f"bb.{i}."))
        p["enc.branch_template"] = Var(np.zeros((1, d)), True, "enc.branch_template")
        p["enc.branch_search"] = Var(np.zeros((1, d)), True, "enc.branch_search")
        for i in range(cfg.encoder_blocks):
            p.update(_prefixed(init_block(rng, d), f"enc.{i}."))
        for i in range(cfg.decoder_blocks):
            p.update(_prefixed(init_block(rng, d), f"dec.{i}."))
        for head, out in (("cls", 1), ("box", 4)):
            p[f"head.{head}.w1"] = Var(rng.normal(0, 1 / math.sqrt(d), (d, d)), True)
            p[f"head.{head}.b1"] = Var(np.zeros((1, d)), True)
            p[f"head.{head}.w2"] = Var(rng.normal(0, 0.1 / math.sqrt(d), (d, out)), True)
            p[f"head.{head}.b2"] = Var(np.full((1, out), BOX_BIAS if head == "box" else 0.0), True)
        for name, v in p.items():
            v.name = name
        return cls(cfg, p)

    @property
    def fusion(self) -> FusionParams:
        p = self.params
        if self.cfg.gate_mode == "content":
            gate = {"gate_w": p["tok.gate.W"], "gate_b": p["tok.gate.b"]}
        else:
            gate = {"gate_logits": {b: p[f"tok.gate.logits_{b}"] for b in ("template", "search")}}
        return FusionParams(p["tok.E_fc"], p["tok.b_fc"], p["tok.E_hsi"], p["tok.b_hsi"],
                            gate_mode=self.cfg.gate_mode, **gate)

    def block(self, prefix: str) -> dict[str, Var]:
        n = len(prefix)
        return {k[n:]: v for k, v in self.params.items() if k.startswith(prefix)}

    # -- forward pieces ----------------------------------------------------
    def tokenize(self, fc: np.ndarray, hsi: np.ndarray, branch: str) -> tuple[TokenGrid, Var | None]:
        """Fused tokens for crops fc (..., 3, S, S) and hsi (..., B_max, S, S); also returns alpha."""
        cfg, p = self.cfg, self.params
        grid = fc.shape[-1] // cfg.patch
        expected = p["tok.E_hsi"].shape[0] // cfg.patch ** 2
        if hsi.shape[-3] != expected:
            raise DimensionError(f"HSI crop has {hsi.shape[-3]} bands, embedding expects {expected} (pad first)")
        a = cfg.alpha_fixed
        if a == 1.0:
            # spatial-only: the HSI tower is never evaluated
            return TokenGrid(linear_apply(patchify(fc, cfg.patch), p["tok.E_fc"], p["tok.b_fc"]), grid, grid), None
        if a == 0.0:
            return TokenGrid(linear_apply(patchify(hsi, cfg.patch), p["tok.E_hsi"], p["tok.b_hsi"]), grid, grid), None
        z_fc = TokenGrid(linear_apply(patchify(fc, cfg.patch), p["tok.E_fc"], p["tok.b_fc"]), grid, grid)
        z_hsi = TokenGrid(linear_apply(patchify(hsi, cfg.patch), p["tok.E_hsi"], p["tok.b_hsi"]), grid, grid)
        if a is None:
            alpha = compute_alpha(z_fc, z_hsi, self.fusion, branch)
        else:
            alpha = Var(np.full(z_fc.tokens.shape[:-1], a))
        return fuse_tokens(z_fc, z_hsi, alpha), alpha

    def _mask(self, grid: int, shift: int) -> np.ndarray | None:
        w = self.cfg.window
        if w is None:
            return None
        key = (grid, shift)
        if key not in self._masks:
            self._masks[key] = window_mask(grid, grid, w, shift)
        return self._masks[key]

    def backbone_forward(self, tokens: TokenGrid, branch: str) -> TokenGrid:
        x = add(tokens.tokens, self.params[f"bb.pos_{branch}"])
        for i in range(self.cfg.backbone_blocks):
            shift = 0 if i % 2 == 0 or self.cfg.window is None else self.cfg.window // 2
            x = attention_block(x, self.block(f"bb.{i}."), self.cfg.heads, self._mask(tokens.grid_h, shift))
        return TokenGrid(x, tokens.grid_h, tokens.grid_w)

    def encode(self, t_feat: TokenGrid, s_feat: TokenGrid) -> Var:
        """Self-attention over the joined (template ++ search) sequence."""
        if t_feat.tokens.shape[-1] != s_feat.tokens.shape[-1]:
            raise DimensionError(f"feature sizes differ: {t_feat.tokens.shape} vs {s_feat.tokens.shape}")
        t = t_feat.tokens
        s = s_feat.tokens
        lead_t, lead_s = t.shape[:-2], s.shape[:-2]
        if lead_t != lead_s:
            # one cached template against a batch of search crops
            t = add(t, np.zeros(lead_s + t.shape[-2:]))
        x = concat([add(t, self.params["enc.branch_template"]),
                    add(s, self.params["enc.branch_search"])], axis=-2)
        for i in range(self.cfg.encoder_blocks):
            x = attention_block(x, self.block(f"enc.{i}."), self.cfg.heads)
        return x

    def siamese_fuse(self, t_feat: TokenGrid, s_feat: TokenGrid) -> TokenGrid:
        x = self.encode(t_feat, s_feat)
        mt = t_feat.tokens.shape[-2]
        q = take(x, (Ellipsis, slice(mt, None), slice(None)))
        for i in range(self.cfg.decoder_blocks):
            q = cross_attention_block(q, x, self.block(f"dec.{i}."), self.cfg.heads)
        return TokenGrid(q, s_feat.grid_h, s_feat.grid_w)

    def predict(self, fused: TokenGrid) -> BoxPrediction:
        p = self.params

        def mlp(head):
            h = gelu(linear_apply(fused.tokens, p[f"head.{head}.w1"], p[f"head.{head}.b1"]))
            return linear_apply(h, p[f"head.{head}.w2"], p[f"head.{head}.b2"])

        logits = mlp("cls")
        logits = reshape(logits, logits.shape[:-1])
        offsets = softplus(mlp("box"))
        return BoxPrediction(logits, offsets, fused.grid_w, self.cfg.search_size)

    def forward(self, t_fc, t_hsi, s_fc, s_hsi) -> BoxPrediction:
        t, _ = self.tokenize(t_fc, t_hsi, "template")
        s, _ = self.tokenize(s_fc, s_hsi, "search")
        return self.predict(self.siamese_fuse(self.backbone_forward(t, "template"),
                                              self.backbone_forward(s, "search")))

    # -- persistence -------------------------------------------------------
    def state(self) -> dict[str, np.ndarray]:
        return {k: v.value for k, v in self.params.items()}

    def save(self, path, extra_meta: dict | None = None) -> None:
        meta = {"model_config": asdict(self.cfg), **(extra_meta or {})}
        save_checkpoint(path, self.state(), meta)

    @classmethod
    def load(cls, path, **overrides) -> tuple["TrackerModel", dict]:
        blocks, meta = load_checkpoint(path)
        known = {f.name for f in fields(ModelConfig)}
        cfg_dict = {k: v for k, v in meta.get("model_config", {}).items() if k in known}
        cfg_dict.update({k: v for k, v in overrides.items() if v is not None})
        cfg = ModelConfig(**cfg_dict)
        params = {}
        for name, arr in blocks.items():
            params[name] = Var(arr.copy(), requires_grad=True, name=name)
        model = cls(cfg, params)
        gate_key = "tok.gate.W" if cfg.gate_mode == "content" else "tok.gate.logits_search"
        if gate_key not in params:
            raise ConfigError(f"checkpoint has no parameters for gate mode {cfg.gate_mode!r}")
        return model, meta


def _prefixed(block: dict[str, Var], prefix: str) -> dict[str, Var]:
    return {prefix + k: v for k, v in block.items()}


# -- loss ----------------------------------------------------------------


@dataclass
class LossReport:
    total: float
    bce: float
    iou: float
    l1: float

    def as_dict(self) -> dict[str, float]:
        return asdict(self)


class TrainingError(RuntimeError):
    pass


def target_cells(gt_xyxy: np.ndarray, grid: int, size: float) -> np.ndarray:
    """Index of the cell whose centre is nearest each ground-truth centre (ties: lowest index)."""
    gt = np.asarray(gt_xyxy, dtype=np.float64).reshape(-1, 4) / size
    centre = np.stack([(gt[:, 0] + gt[:, 2]) / 2, (gt[:, 1] + gt[:, 3]) / 2], axis=1)
    dist = ((cell_centres(grid)[None, :, :] - centre[:, None, :]) ** 2).sum(-1)
    return dist.argmin(axis=1)


def tracking_loss(cls_logits: Var, offsets: Var, gt_xyxy: np.ndarray, grid: int, size: float,
                  lambda_iou: float = 2.0, lambda_l1: float = 5.0) -> tuple[Var, dict[str, Var]]:
    """BCE over all cells plus IoU and L1 box terms at the positive cell.

    ``cls_logits`` is (N, M), ``offsets`` (N, M, 4), ``gt_xyxy`` (N, 4) in
    search-crop pixels.  Box terms work in units of the search size.
    """
    n, m = cls_logits.shape
    gt = np.asarray(gt_xyxy, dtype=np.float64).reshape(n, 4)
    pos = target_cells(gt, grid, size)
    y = np.zeros((n, m))
    y[np.arange(n), pos] = 1.0
    # BCE with logits: softplus(l) - y * l
    bce = mean(sub(softplus(cls_logits), mul(cls_logits, y)))

    off = take(offsets, (np.arange(n), pos))  # (N, 4)
    cxy = cell_centres(grid)[pos]
    sign = np.array([-1.0, -1.0, 1.0, 1.0])
    centre4 = np.concatenate([cxy, cxy], axis=1)
    box = add(mul(off, sign), centre4)  # normalised x1 y1 x2 y2
    g = gt / size
    x1, y1, x2, y2 = (take(box, (slice(None), k)) for k in range(4))
    iw = relu(sub(minimum(x2, g[:, 2]), maximum(x1, g[:, 0])))
    ih = relu(sub(minimum(y2, g[:, 3]), maximum(y1, g[:, 1])))
    inter = mul(iw, ih)
    area_p = mul(sub(x2, x1), sub(y2, y1))
    area_g = (g[:, 2] - g[:, 0]) * (g[:, 3] - g[:, 1])
    union = add(sub(add(area_p, area_g), inter), 1e-12)
    iou = div(inter, union)
    iou_loss = mean(sub(1.0, iou))
    l1 = mean(absolute(sub(box, g)))
    total = add(add(bce, mul(iou_loss, lambda_iou)), mul(l1, lambda_l1))
    return total, {"bce": bce, "iou": iou_loss, "l1": l1}


# -- optimisation ----------------------------------------------------------


@dataclass
class MomentumSGD:
    """Heavy-ball gradient descent: ``v = mu * v + g``, ``p -= lr * scale[p] * v``.

    ``scale`` holds per-block step multipliers; :func:`embedding_lr_scale`
    damps the patch embeddings, whose inputs are thousands of pixels wide.
    """

    lr: float
    momentum: float = 0.9
    scale: dict[str, float] = field(default_factory=dict)
    velocity: dict[str, np.ndarray] = field(default_factory=dict)

    def step(self, params: dict[str, Var]) -> None:
        for name, p in params.items():
            if p.grad is None:
                continue
            v = self.velocity.get(name)
            v = p.grad.copy() if v is None else self.momentum * v + p.grad
            self.velocity[name] = v
            p.value -= (self.lr * self.scale.get(name, 1.0)) * v


def embedding_lr_scale(model: "TrackerModel") -> dict[str, float]:
    """d / fan_in for the two patch projections, so one step moves a token about as far
    as it moves the output of a d-wide layer."""
    d = model.cfg.d
    return {k: d / model.params[k].shape[0] for k in ("tok.E_fc", "tok.E_hsi")}


@dataclass
class TrainBatch:
    """Stacked crops: fc (N, 3, S, S), hsi (N, B_max, S, S); boxes (N, 4) xyxy in search pixels."""

    t_fc: np.ndarray
    t_hsi: np.ndarray
    s_fc: np.ndarray
    s_hsi: np.ndarray
    boxes: np.ndarray

    @classmethod
    def stack(cls, pairs) -> "TrainBatch":
        cols = list(zip(*pairs))
        return cls(*(np.stack(c).astype(np.float64) for c in cols))


def batch_loss(model: TrackerModel, batch: TrainBatch, tcfg: TrainConfig) -> tuple[Var, dict[str, Var]]:
    pred = model.forward(batch.t_fc, batch.t_hsi, batch.s_fc, batch.s_hsi)
    return tracking_loss(pred.cls_logits, pred.offsets, batch.boxes, pred.grid,
                         model.cfg.search_size, tcfg.lambda_iou, tcfg.lambda_l1)


def clip_gradients(params, max_norm: float) -> float:
    """Rescale all gradients together so their joint L2 norm is at most ``max_norm``."""
    params = [p for p in params if p.grad is not None]
    norm = math.sqrt(sum(float(np.vdot(p.grad, p.grad)) for p in params))
    if norm > max_norm:
        for p in params:
            p.grad *= max_norm / norm
    return norm


def train_step(model: TrackerModel, batch: TrainBatch | list, opt: MomentumSGD,
               tcfg: TrainConfig) -> LossReport:
    """One forward/backward pass and one momentum-SGD update."""
    if not isinstance(batch, TrainBatch):
        batch = TrainBatch.stack(batch)
    params = model.params
    with Tape() as tape:
        loss, terms = batch_loss(model, batch, tcfg)
        for name, t in (*terms.items(), ("total", loss)):
            if not np.isfinite(float(t.value)):
                raise TrainingError(f"non-finite {name} loss ({float(t.value)})")
        tape.backward(loss, params.values())
    if tcfg.clip_norm is not None:
        clip_gradients(params.values(), tcfg.clip_norm)
    opt.step(params)
    return LossReport(float(loss.value), *(float(terms[k].value) for k in ("bce", "iou", "l1")))
