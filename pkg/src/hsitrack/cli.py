"""``hsitrack`` command line: generate, train, track, eval, inflate, plot.

Exit status is 0 on success, 1 when the work itself fails (unreadable files,
diverging training) and 2 for usage or configuration errors.  Every command
writes ``manifest.json`` beside its outputs with the config hash, seed and
library versions; nothing in it depends on wall-clock time, so repeated runs
produce identical files.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import platform
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .config import RunConfig, load_config, with_overrides
from .data.hcube import HcubeError, find_sequences, load_sequence, save_sequence
from .data.modality import Modality, SequenceRecord
from .data.synthetic import generate_corpus
from .metrics import MetricCurve, emit_plot, evaluate_boxes, precision_curve, read_result, success_curve, \
    summarize, write_result
from .model import ModelConfig, TrackerModel, TrainConfig, TrainingError
from .numeric.attention import ConfigError
from .numeric.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .tokenizer import GATE_MODES, inflate_embedding
from .tracking import Tracker
from .training import train

log = logging.getLogger("hsitrack")


class UsageError(Exception):
    """Bad command-line input that argparse itself cannot catch."""


# -- shared helpers --------------------------------------------------------


def _dump(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _digest(doc) -> str:
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()


def write_manifest(out: Path, command: str, config: dict, seed: int | None,
                   inputs: Sequence[str] = ()) -> Path:
    manifest = {
        "command": command,
        "config": config,
        "config_hash": _digest(config),
        "seed": seed,
        "inputs": sorted(str(p) for p in inputs),
        "versions": {"hsitrack": __version__, "numpy": np.__version__,
                     "python": platform.python_version()},
    }
    path = out / "manifest.json"
    _dump(path, manifest)
    return path


def _out_dir(args, default: str | None = None) -> Path:
    out = args.out or default
    if out is None:
        raise UsageError("--out is required")
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _load_records(data: str | None, modality: str | None = None) -> list[SequenceRecord]:
    if data is None:
        raise UsageError("no sequence data given (--data or the config's 'data' key)")
    root = Path(data)
    if root.is_file() or root.suffix == ".hsq":
        paths = [root]
    elif root.is_dir():
        paths = find_sequences(root)
    else:
        raise FileNotFoundError(f"no such file or directory: {root}")
    records = [load_sequence(p) for p in paths]
    if modality is not None:
        records = [r for r in records if r.modality.name == modality]
    if not records:
        raise FileNotFoundError(f"no sequences found under {root}"
                                + (f" for modality {modality}" if modality else ""))
    return sorted(records, key=lambda r: r.name)


def _add_common(p: argparse.ArgumentParser, *, config=True, seed=True, modality=True, gate=False):
    if config:
        p.add_argument("--config", help="JSON run configuration")
    if seed:
        p.add_argument("--seed", type=int, help="random seed (overrides the config)")
    p.add_argument("--out", help="output directory")
    if modality:
        p.add_argument("--modality", help="restrict to one modality (uni-modal testing)")
    if gate:
        p.add_argument("--gate-mode", choices=GATE_MODES, help="fusion gate parameterisation")
        p.add_argument("--alpha-fixed", type=float,
                       help="pin the fusion weight (1.0 false colour only, 0.0 HSI only)")


# -- generate --------------------------------------------------------------

SCENE_KEYS = {"count": int, "frames": int, "height": int, "width": int, "size": float,
              "noise_sigma": float, "ambiguity": bool, "modalities": dict, "seed": int}


def _scene_config(args) -> dict:
    doc = {"count": 4, "frames": 24, "height": 128, "width": 128, "size": 16.0,
           "noise_sigma": 0.02, "ambiguity": True, "modalities": {"VIS": 16, "NIR": 25, "RedNIR": 15},
           "seed": 0}
    if args.config:
        user = json.loads(Path(args.config).read_text())
        if not isinstance(user, dict):
            raise ConfigError("scene config must be a JSON object")
        for k, v in user.items():
            if k not in SCENE_KEYS:
                raise ConfigError(f"unknown config key {k!r}")
            want = SCENE_KEYS[k]
            ok = isinstance(v, want) and not (want is int and isinstance(v, bool))
            if want is float and isinstance(v, int) and not isinstance(v, bool):
                ok, v = True, float(v)
            if not ok:
                raise ConfigError(f"config key {k!r}: expected {want.__name__} (got {v!r})")
            doc[k] = v
    for k in ("count", "frames", "seed"):
        if getattr(args, k, None) is not None:
            doc[k] = getattr(args, k)
    if args.modality is not None:
        if args.modality not in doc["modalities"]:
            raise ConfigError(f"config key 'modalities': no modality named {args.modality!r}")
        doc["modalities"] = {args.modality: doc["modalities"][args.modality]}
    for k in ("count", "frames", "height", "width"):
        if doc[k] < 1:
            raise ConfigError(f"config key {k!r}: must be at least 1 (got {doc[k]!r})")
    for name, b in doc["modalities"].items():
        if not isinstance(b, int) or isinstance(b, bool) or b < 3:
            raise ConfigError(f"config key 'modalities.{name}': need an integer band count >= 3 (got {b!r})")
    return doc


def cmd_generate(args) -> int:
    doc = _scene_config(args)
    out = _out_dir(args)
    written = []
    for k, (name, bands) in enumerate(sorted(doc["modalities"].items())):
        recs = generate_corpus(Modality(name, bands), doc["count"], seed=doc["seed"] * 1000 + k,
                               prefix="seq", frames=doc["frames"], height=doc["height"],
                               width=doc["width"], size=doc["size"], noise_sigma=doc["noise_sigma"],
                               ambiguity=doc["ambiguity"])
        for rec in recs:
            path = out / f"{rec.name}.hsq"
            save_sequence(rec, path)
            written.append(path.name)
    write_manifest(out, "generate", doc, doc["seed"])
    print(f"wrote {len(written)} sequences to {out}")
    return 0


# -- train -----------------------------------------------------------------


def _run_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    over = {"seed": args.seed, "out": args.out, "gate_mode": getattr(args, "gate_mode", None),
            "alpha_fixed": getattr(args, "alpha_fixed", None), "data": getattr(args, "data", None)}
    if getattr(args, "steps", None) is not None:
        over["max_steps"] = args.steps
    cfg = with_overrides(cfg, **over)
    if args.modality is not None:
        if args.modality not in cfg.modalities:
            raise ConfigError(f"config key 'modalities': no modality named {args.modality!r}")
        cfg = with_overrides(cfg, modalities={args.modality: cfg.modalities[args.modality]})
    return cfg


def model_config(cfg: RunConfig) -> ModelConfig:
    return ModelConfig(d=cfg.d, heads=cfg.heads, backbone_blocks=cfg.backbone_blocks,
                       encoder_blocks=cfg.encoder_blocks, decoder_blocks=cfg.decoder_blocks,
                       window=cfg.window, template_size=cfg.template_size, search_size=cfg.search_size,
                       max_bands=cfg.max_bands, gate_mode=cfg.gate_mode, alpha_fixed=cfg.alpha_fixed)


def cmd_train(args) -> int:
    cfg = _run_config(args)
    out = _out_dir(args, cfg.out)
    records = _load_records(cfg.data)
    datasets: dict[str, list[SequenceRecord]] = {}
    for rec in records:
        want = cfg.modalities.get(rec.modality.name)
        if want is None:
            continue
        if want != rec.modality.bands:
            raise ConfigError(f"config key 'modalities.{rec.modality.name}': {want} bands configured but "
                              f"{rec.name} has {rec.modality.bands}")
        datasets.setdefault(rec.modality.name, []).append(rec)
    if not datasets:
        raise FileNotFoundError(f"no sequences of modalities {sorted(cfg.modalities)} under {cfg.data}")
    model = TrackerModel.init(model_config(cfg), seed=cfg.seed)
    tcfg = TrainConfig(lr=cfg.lr, momentum=cfg.momentum, epochs=cfg.epochs, seed=cfg.seed,
                       lambda_iou=cfg.lambda_iou, lambda_l1=cfg.lambda_l1)
    rows = train(model, datasets, tcfg, batch_size=cfg.batch_size,
                 steps_per_sequence=cfg.steps_per_sequence, schedule=cfg.schedule, max_steps=cfg.max_steps)
    model.save(out / "model.stck", {"config_hash": cfg.digest(), "seed": cfg.seed})
    with open(out / "loss_log.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        cols = ["step", "epoch", "modality", "sequence", "total", "bce", "iou", "l1"]
        w.writerow(cols)
        for r in rows:
            w.writerow([repr(r[c]) if isinstance(r[c], float) else r[c] for c in cols])
    _dump(out / "train_config.json", cfg.training_dict())
    write_manifest(out, "train", cfg.to_dict() | {"out": None}, cfg.seed, [r.name for r in records])
    last = rows[-1]["total"] if rows else float("nan")
    print(f"trained {len(rows)} steps, final loss {last:.4f}; checkpoint {out / 'model.stck'}")
    return 0


# -- track -----------------------------------------------------------------


def cmd_track(args) -> int:
    out = _out_dir(args)
    records = _load_records(args.data, args.modality)
    if args.oracle:
        model = None
        config = {"oracle": True}
    else:
        if args.checkpoint is None:
            raise UsageError("track needs --checkpoint (or --oracle)")
        model, meta = TrackerModel.load(args.checkpoint, gate_mode=args.gate_mode,
                                        alpha_fixed=args.alpha_fixed)
        config = {"checkpoint_hash": hashlib.sha256(Path(args.checkpoint).read_bytes()).hexdigest(),
                  "gate_mode": model.cfg.gate_mode, "alpha_fixed": model.cfg.alpha_fixed,
                  "scale_lr": args.scale_lr}
    tracker = Tracker(model, args.scale_lr) if model is not None else None
    for rec in records:
        boxes = rec.gt_boxes if tracker is None else tracker.run(rec)
        write_result(out / f"{rec.name}.json", rec.name, rec.modality.name, boxes)
    config["modality"] = args.modality
    write_manifest(out, "track", config, None, [r.name for r in records])
    print(f"tracked {len(records)} sequences into {out}")
    return 0


# -- eval / plot -----------------------------------------------------------


def _curves(per_sequence: dict, names: list[str]) -> dict:
    ious = np.concatenate([per_sequence[n]["ious"] for n in names])
    errs = np.concatenate([per_sequence[n]["errors"] for n in names])
    return {"success": success_curve(ious).values.tolist(), "precision": precision_curve(errs).values.tolist()}


def cmd_eval(args) -> int:
    out = _out_dir(args)
    records = {r.name: r for r in _load_records(args.data, args.modality)}
    results = sorted(Path(args.results).glob("*.json")) if Path(args.results).is_dir() else [Path(args.results)]
    per_sequence, modality_of = {}, {}
    for path in results:
        if path.name == "manifest.json":
            continue
        res = read_result(path)
        if args.modality is not None and res["modality"] != args.modality:
            continue
        rec = records.get(res["sequence"])
        if rec is None:
            raise FileNotFoundError(f"no ground truth for sequence {res['sequence']!r} ({path.name})")
        per_sequence[rec.name] = evaluate_boxes(res["boxes"], rec.gt_boxes)
        modality_of[rec.name] = rec.modality.name
    if not per_sequence:
        raise FileNotFoundError(f"no result files under {args.results}")
    summary = summarize(per_sequence, modality_of)
    groups = {"overall": sorted(per_sequence)}
    for m in sorted(set(modality_of.values())):
        groups[m] = sorted(n for n in per_sequence if modality_of[n] == m)
    summary["curves"] = {g: _curves(per_sequence, names) for g, names in groups.items()}
    _dump(out / "metrics.json", summary)
    _plot_from_summary(summary, out)
    write_manifest(out, "eval", {"modality": args.modality}, None, sorted(per_sequence))
    o = summary["overall"]
    print(f"AUC {o['auc']:.4f}  DP@20 {o['dp20']:.4f}  over {o['frames']} frames")
    return 0


def _plot_from_summary(summary: dict, out: Path) -> None:
    curves = summary.get("curves")
    if not curves:
        raise ValueError("metrics file has no 'curves' section")
    from .metrics import PRECISION_THRESHOLDS, SUCCESS_THRESHOLDS

    def group_summary(g: str) -> dict:
        return summary["overall"] if g == "overall" else summary["modalities"][g]

    # "overall" first, then modalities by name, however the JSON was ordered
    order = sorted(curves, key=lambda g: (g != "overall", g))
    succ = {g: MetricCurve(SUCCESS_THRESHOLDS, curves[g]["success"], group_summary(g)["auc"], "success")
            for g in order}
    prec = {g: MetricCurve(PRECISION_THRESHOLDS, curves[g]["precision"], group_summary(g)["dp20"], "precision")
            for g in order}
    emit_plot(succ, out / "success")
    emit_plot(prec, out / "precision")


def cmd_plot(args) -> int:
    out = _out_dir(args)
    summary = json.loads(Path(args.metrics).read_text())
    _plot_from_summary(summary, out)
    write_manifest(out, "plot", {"metrics_hash": _digest(summary)}, None, [args.metrics])
    print(f"wrote success and precision plots to {out}")
    return 0


# -- inflate ---------------------------------------------------------------


def cmd_inflate(args) -> int:
    """Turn a checkpoint's 3-channel patch embedding into a B-band one."""
    if args.bands < 1:
        raise UsageError("--bands must be at least 1")
    out = _out_dir(args)
    blocks, meta = load_checkpoint(args.checkpoint)
    key = "tok.E_fc" if "tok.E_fc" in blocks else "E_rgb"
    if key not in blocks:
        raise CheckpointError(f"{args.checkpoint} has neither a 'tok.E_fc' nor an 'E_rgb' block")
    E_rgb = blocks[key]
    blocks = dict(blocks)
    blocks["tok.E_hsi"] = inflate_embedding(E_rgb, args.bands)
    if "tok.b_fc" in blocks:
        blocks["tok.b_hsi"] = blocks["tok.b_fc"].copy()
    meta = dict(meta)
    if "model_config" in meta:
        meta["model_config"] = {**meta["model_config"], "max_bands": args.bands}
    meta["inflated_from"] = key
    save_checkpoint(out / "inflated.stck", blocks, meta)
    write_manifest(out, "inflate", {"bands": args.bands,
                                    "checkpoint_hash": hashlib.sha256(Path(args.checkpoint).read_bytes()).hexdigest()},
                   None, [args.checkpoint])
    print(f"inflated {key} {E_rgb.shape} to {blocks['tok.E_hsi'].shape} in {out / 'inflated.stck'}")
    return 0


# -- entry point -----------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hsitrack", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"hsitrack {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    p = sub.add_parser("generate", help="write synthetic HCUBE sequences")
    _add_common(p)
    p.add_argument("--count", type=int, help="sequences per modality")
    p.add_argument("--frames", type=int, help="frames per sequence")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train a tracker from a run config")
    _add_common(p, gate=True)
    p.add_argument("--data", help="directory of sequences (overrides the config)")
    p.add_argument("--steps", type=int, help="stop after this many updates")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("track", help="run a checkpoint over sequences, writing result JSON")
    _add_common(p, config=False, seed=False, gate=True)
    p.add_argument("--checkpoint", help="STCK1 model checkpoint")
    p.add_argument("--data", required=True, help="sequence file or directory")
    p.add_argument("--oracle", action="store_true", help="emit the ground truth instead of tracking")
    p.add_argument("--scale-lr", type=float, default=0.3, help="damping of box size updates")
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("eval", help="score result files against ground truth")
    _add_common(p, config=False, seed=False)
    p.add_argument("--results", required=True, help="result JSON file or directory")
    p.add_argument("--data", required=True, help="sequence file or directory with ground truth")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("inflate", help="inflate an RGB patch embedding to B bands")
    _add_common(p, config=False, seed=False, modality=False)
    p.add_argument("--checkpoint", required=True, help="checkpoint holding tok.E_fc or E_rgb")
    p.add_argument("--bands", type=int, required=True, help="target band count")
    p.set_defaults(func=cmd_inflate)

    p = sub.add_parser("plot", help="success and precision plots from metrics.json")
    _add_common(p, config=False, seed=False, modality=False)
    p.add_argument("--metrics", required=True, help="metrics.json written by eval")
    p.set_defaults(func=cmd_plot)
    return ap


def run(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:       # argparse: 2 for usage errors, 0 for --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, UsageError) as exc:
        print(f"hsitrack {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (OSError, HcubeError, CheckpointError, TrainingError, ValueError, KeyError) as exc:
        print(f"hsitrack {args.command}: failed: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
