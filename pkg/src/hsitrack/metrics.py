"""OTB-style evaluation: IoU, centre error, success/precision curves, AUC and DP@20.

Boxes are (x, y, w, h) in pixels.  Success uses ``IoU >= t`` on 51 uniform
thresholds from 0 to 1; precision uses ``error <= tau`` (inclusive).
"""
from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

# k / 50 is correctly rounded; linspace would put e.g. 0.34 one ulp high
SUCCESS_THRESHOLDS = np.arange(51) / 50.0
PRECISION_THRESHOLDS = np.arange(0, 51, dtype=np.float64)
DP_TAU = 20.0


@dataclass
class MetricCurve:
    thresholds: np.ndarray
    values: np.ndarray
    summary: float
    kind: str = "success"

    def __post_init__(self):
        self.thresholds = np.asarray(self.thresholds, dtype=np.float64)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.thresholds.shape != self.values.shape:
            raise ValueError("thresholds and values differ in length")
        if np.any(np.diff(self.thresholds) <= 0):
            raise ValueError("thresholds must be strictly ascending")
        if np.any(self.values < 0) or np.any(self.values > 1):
            raise ValueError("curve values must lie in [0, 1]")


def iou(a, b) -> float:
    ax, ay, aw, ah = (float(v) for v in a)
    bx, by, bw, bh = (float(v) for v in b)
    iw = max(0.0, min(ax + aw, bx + bw) - max(ax, bx))
    ih = max(0.0, min(ay + ah, by + bh) - max(ay, by))
    inter = iw * ih
    union = aw * ah + bw * bh - inter
    return 0.0 if union <= 0 else inter / union


def center_error(a, b) -> float:
    ax, ay, aw, ah = (float(v) for v in a)
    bx, by, bw, bh = (float(v) for v in b)
    return float(np.hypot(ax + aw / 2 - (bx + bw / 2), ay + ah / 2 - (by + bh / 2)))


def _nonempty(x, what: str) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.size == 0:
        raise ValueError(f"{what} needs at least one frame")
    return x


def success_curve(ious) -> MetricCurve:
    ious = _nonempty(ious, "success_auc")
    if np.any(ious < 0) or np.any(ious > 1):
        raise ValueError("IoU values must lie in [0, 1]")
    values = (ious[None, :] >= SUCCESS_THRESHOLDS[:, None]).mean(axis=1)
    return MetricCurve(SUCCESS_THRESHOLDS, values, float(values.mean()), "success")


success_auc = success_curve


def precision_curve(errors, tau: float = DP_TAU) -> MetricCurve:
    errors = _nonempty(errors, "precision_curve")
    values = (errors[None, :] <= PRECISION_THRESHOLDS[:, None]).mean(axis=1)
    return MetricCurve(PRECISION_THRESHOLDS, values, dp_at(errors, tau), "precision")


def dp_at(errors, tau: float = DP_TAU) -> float:
    errors = _nonempty(errors, "dp_at")
    if np.any(errors < 0):
        raise ValueError("centre errors must be non-negative")
    return float((errors <= tau).mean())


def evaluate_boxes(pred, gt) -> dict[str, float | list]:
    pred = np.asarray(pred, dtype=np.float64).reshape(-1, 4)
    gt = np.asarray(gt, dtype=np.float64).reshape(-1, 4)
    if pred.shape != gt.shape:
        raise ValueError(f"{len(pred)} predicted boxes for {len(gt)} ground-truth boxes")
    ious = [iou(p, g) for p, g in zip(pred, gt)]
    errs = [center_error(p, g) for p, g in zip(pred, gt)]
    return {"ious": ious, "errors": errs, "auc": success_curve(ious).summary,
            "dp20": dp_at(errs), "mean_iou": float(np.mean(ious))}


# -- plots -----------------------------------------------------------------

_COLOURS = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf")


def emit_plot(curves: Mapping[str, MetricCurve], path: str | os.PathLike) -> tuple[Path, Path]:
    """Write ``<path>.csv`` (name, threshold, value rows) and a matching ``<path>.svg``."""
    if not curves:
        raise ValueError("emit_plot needs at least one curve")
    base = Path(path)
    csv_path, svg_path = base.with_name(base.name + ".csv"), base.with_name(base.name + ".svg")
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["curve", "threshold", "value"])
        for name, c in curves.items():
            for t, v in zip(c.thresholds, c.values):
                w.writerow([name, repr(float(t)), repr(float(v))])
    svg_path.write_text(_svg(curves))
    return csv_path, svg_path


def read_plot_csv(path: str | os.PathLike) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    out: dict[str, tuple[list, list]] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            ts, vs = out.setdefault(row["curve"], ([], []))
            ts.append(float(row["threshold"]))
            vs.append(float(row["value"]))
    return {k: (np.array(t), np.array(v)) for k, (t, v) in out.items()}


def _svg(curves: Mapping[str, MetricCurve], w: int = 420, h: int = 320, pad: int = 48) -> str:
    xmax = max(float(c.thresholds[-1]) for c in curves.values()) or 1.0
    kind = next(iter(curves.values())).kind
    xlabel = "overlap threshold" if kind == "success" else "location error threshold (px)"
    pw, ph = w - 2 * pad, h - 2 * pad

    def pt(t, v):
        return f"{pad + pw * t / xmax:.2f},{pad + ph * (1 - v):.2f}"

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="11">',
             f'<rect x="{pad}" y="{pad}" width="{pw}" height="{ph}" fill="none" stroke="#333"/>',
             f'<text x="{w / 2}" y="{h - 10}" text-anchor="middle">{xlabel}</text>',
             f'<text x="12" y="{h / 2}" transform="rotate(-90 12 {h / 2})" text-anchor="middle">'
             f'{"success rate" if kind == "success" else "precision"}</text>']
    for k in range(6):
        frac = k / 5
        parts.append(f'<text x="{pad - 6}" y="{pad + ph * (1 - frac) + 4:.1f}" text-anchor="end">{frac:.1f}</text>')
        parts.append(f'<text x="{pad + pw * frac:.1f}" y="{pad + ph + 14}" text-anchor="middle">{xmax * frac:g}</text>')
    for i, (name, c) in enumerate(curves.items()):
        col = _COLOURS[i % len(_COLOURS)]
        pts = " ".join(pt(t, v) for t, v in zip(c.thresholds, c.values))
        parts.append(f'<polyline fill="none" stroke="{col}" stroke-width="1.5" points="{pts}"/>')
        label = f"{name} [{c.summary:.3f}]".replace("&", "&amp;").replace("<", "&lt;")
        parts.append(f'<text x="{pad + pw - 6}" y="{pad + 14 + 14 * i}" text-anchor="end" fill="{col}">{label}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


# -- result files ----------------------------------------------------------


def write_result(path: str | os.PathLike, sequence: str, modality: str, boxes) -> None:
    boxes = [[float(v) for v in b] for b in np.asarray(boxes).reshape(-1, 4)]
    Path(path).write_text(json.dumps({"sequence": sequence, "modality": modality, "boxes": boxes},
                                     sort_keys=True) + "\n")


def read_result(path: str | os.PathLike) -> dict:
    doc = json.loads(Path(path).read_text())
    missing = {"sequence", "modality", "boxes"} - set(doc)
    if missing:
        raise ValueError(f"result file {path} lacks keys {sorted(missing)}")
    doc["boxes"] = np.asarray(doc["boxes"], dtype=np.float64).reshape(-1, 4)
    return doc


def summarize(per_sequence: Mapping[str, Mapping], modality_of: Mapping[str, str]) -> dict:
    """Pool frames per modality and overall; sequence keys are sorted for stable output."""
    groups: dict[str, list[str]] = {}
    for name in sorted(per_sequence):
        groups.setdefault(modality_of[name], []).append(name)

    def pooled(names: Sequence[str]) -> dict:
        ious = np.concatenate([per_sequence[n]["ious"] for n in names])
        errs = np.concatenate([per_sequence[n]["errors"] for n in names])
        return {"auc": success_curve(ious).summary, "dp20": dp_at(errs),
                "mean_iou": float(ious.mean()), "frames": int(ious.size), "sequences": len(names)}

    out = {"overall": pooled(sorted(per_sequence)),
           "modalities": {m: pooled(ns) for m, ns in sorted(groups.items())},
           "sequences": {n: {k: per_sequence[n][k] for k in ("auc", "dp20", "mean_iou")}
                         for n in sorted(per_sequence)}}
    return out
