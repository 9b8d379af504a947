"""Single entry point: render, train, infer, eval, merge-lora, validate.

Exit codes: 0 ok, 1 usage, 2 data error, 3 numerical failure. Every command
writes a run manifest echoing its full configuration and seed so any artifact
can be reproduced. The GLASSDEPTH_CACHE environment variable, when set, holds
decoded sequence arrays between runs.
"""

from __future__ import annotations

import argparse
import json
import multiprocessing
import os
import subprocess
import sys

import numpy as np

from . import __version__, codec, io_formats
from .datasets import (DatasetManifest, SequenceRecord, load_sequence,
                       load_sequence_cached, validate_manifest, write_scene_pair)
from .errors import DataError, NumericalError, UsageError
from .evalmetrics import (best_constant_disparity_rel, evaluate_depth_sequence,
                          normal_metrics, profile_jitter, rank_methods,
                          temporal_profile, DELTA_THRESHOLDS)
from .inference import InferenceConfig, infer_video
from .modelstate import load_model, load_merged, save_merged
from .raytrace import render_sequence
from .synthscene import AssetBank, sample_scene, sample_scene_trajectory
from .trainer import Trainer, TrainerConfig, sequences_from_manifests


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _git_describe() -> str:
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty"],
                             capture_output=True, text=True, timeout=5,
                             cwd=os.path.dirname(__file__))
        if out.returncode == 0:
            return out.stdout.strip()
    except (OSError, subprocess.SubprocessError):
        pass
    return f"glassdepth-{__version__}"


def _write_run_manifest(out_dir: str, command: str, config: dict) -> None:
    os.makedirs(out_dir, exist_ok=True)
    doc = {"command": command, "config": config, "build": _git_describe()}
    with open(os.path.join(out_dir, "run.json"), "w") as f:
        json.dump(doc, f, indent=1, sort_keys=True)


def _load_json(path: str) -> dict:
    try:
        with open(path) as f:
            return json.load(f)
    except FileNotFoundError:
        raise DataError(f"config not found: {path}") from None
    except json.JSONDecodeError as e:
        raise UsageError(f"config {path} is not valid JSON: {e}") from None


# ---------------------------------------------------------------------------
# render
# ---------------------------------------------------------------------------

RENDER_DEFAULTS = {
    "scenes": 24, "frames": 21, "resolution": [64, 64], "spp": 2, "seed": 0,
    "split": "train", "m_range": [3, 6], "environment": "tabletop",
    "fov_deg": 50.0, "asset_kinds": None, "material_classes": None,
}


def _render_one(job: tuple) -> dict:
    cfg, index, out_dir = job
    seq_id = f"{cfg['split']}_{index:04d}"
    record_path = os.path.join(out_dir, "scenes", seq_id, "record.json")
    if os.path.exists(record_path):
        with open(record_path) as f:
            rec = SequenceRecord.from_dict(json.load(f))
        if all(os.path.exists(os.path.join(out_dir, p))
               for p in rec.rgb + rec.depth + rec.normal + rec.mask):
            return {"id": seq_id, "record": rec.to_dict(), "skipped": True}
    bank = AssetBank(
        kinds=tuple(cfg["asset_kinds"]) if cfg["asset_kinds"] else AssetBank.kinds,
        material_classes=tuple(cfg["material_classes"]) if cfg["material_classes"]
        else AssetBank.material_classes)
    last_error = None
    for attempt in range(3):                    # rejected scenes get a new seed
        seed = cfg["seed"] + index + attempt * 100_000
        try:
            scene = sample_scene(bank, tuple(cfg["m_range"]), seed=seed,
                                 environment=cfg["environment"])
            traj = sample_scene_trajectory(scene, frames=cfg["frames"], seed=seed)
            pair = render_sequence(scene, traj, tuple(cfg["resolution"]),
                                   spp=cfg["spp"], seed=seed,
                                   fov_deg=cfg["fov_deg"])
            rec = write_scene_pair(out_dir, seq_id, pair, scene)
            with open(record_path, "w") as f:
                json.dump(rec.to_dict(), f)
            return {"id": seq_id, "record": rec.to_dict(), "skipped": False}
        except NumericalError as e:
            last_error = str(e)
    return {"id": seq_id, "error": f"rejected after 3 attempts: {last_error}"}


def cmd_render(args) -> int:
    cfg = dict(RENDER_DEFAULTS)
    if args.config:
        user = _load_json(args.config)
        unknown = set(user) - set(cfg)
        if unknown:
            raise UsageError(f"unknown render config keys: {sorted(unknown)}")
        cfg.update(user)
    if args.seed is not None:
        cfg["seed"] = args.seed
    out_dir = args.out
    os.makedirs(os.path.join(out_dir, "scenes"), exist_ok=True)
    jobs = [(cfg, i, out_dir) for i in range(cfg["scenes"])]
    if args.jobs > 1:
        with multiprocessing.Pool(args.jobs) as pool:
            results = pool.map(_render_one, jobs)
    else:
        results = [_render_one(j) for j in jobs]

    records, failures = [], []
    for r in results:
        if "error" in r:
            failures.append(f"{r['id']}: {r['error']}")
        else:
            records.append(SequenceRecord.from_dict(r["record"]))
    manifest = DatasetManifest(split=cfg["split"], sequences=records)
    manifest.save(os.path.join(out_dir, "manifest.json"))
    _write_run_manifest(out_dir, "render", cfg)
    done = sum(1 for r in results if not r.get("skipped") and "error" not in r)
    print(f"rendered {done} new, {len(records)} total sequences -> "
          f"{os.path.join(out_dir, 'manifest.json')}")
    for msg in failures:
        print(f"warning: {msg}", file=sys.stderr)
    problems = validate_manifest(out_dir, manifest)
    if problems:
        for p in problems:
            print(f"invalid: {p}", file=sys.stderr)
        raise DataError(f"{len(problems)} manifest problems after render")
    return 0


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

def cmd_train(args) -> int:
    doc = _load_json(args.config)
    data = doc.get("data", {})
    trainer_cfg = TrainerConfig.from_dict(doc.get("trainer", {}))
    if args.seed is not None:
        trainer_cfg.seed = args.seed
    if args.out:
        trainer_cfg.out_dir = args.out
    video = [(os.path.dirname(os.path.abspath(p)), DatasetManifest.load(p))
             for p in data.get("video", [])]
    image = [(os.path.dirname(os.path.abspath(p)), DatasetManifest.load(p))
             for p in data.get("image", [])]
    sequences = sequences_from_manifests(video, image,
                                         weights=data.get("weights"),
                                         loader=load_sequence_cached)
    trainer = Trainer(trainer_cfg, sequences)
    _write_run_manifest(trainer_cfg.out_dir, "train",
                        {"data": data, "trainer": vars(trainer_cfg)})
    final = trainer.run(progress=True)
    print(f"final checkpoint: {final}")
    return 0


# ---------------------------------------------------------------------------
# infer
# ---------------------------------------------------------------------------

def _input_sequences(path: str) -> list[tuple[str, list[str]]]:
    """-> [(seq_id, rgb frame paths)] from a manifest or a frame directory."""
    if os.path.isdir(path):
        frames = sorted(os.path.join(path, f) for f in os.listdir(path)
                        if f.lower().endswith(".png"))
        if not frames:
            raise DataError(f"{path}: no .png frames found")
        return [(os.path.basename(os.path.normpath(path)), frames)]
    manifest = DatasetManifest.load(path)
    root = os.path.dirname(os.path.abspath(path))
    return [(rec.seq_id, [os.path.join(root, p) for p in rec.rgb])
            for rec in manifest.sequences]


def _load_checkpoint_for_inference(path: str, target: str):
    try:
        state, _ = load_model(path)
        model, desc, ckpt_target = state.model, state.desc, state.target
    except DataError:
        model, desc, ckpt_target, _ = load_merged(path)
    if ckpt_target != target:
        raise UsageError(f"target/checkpoint mismatch: checkpoint was trained "
                         f"for {ckpt_target!r}, requested {target!r}")
    return model, desc


def cmd_infer(args) -> int:
    config = InferenceConfig(steps=args.steps, segment_frames=args.segment,
                             overlap=args.overlap, seed=args.seed or 0,
                             target=args.target)
    config.validate()
    model, desc = _load_checkpoint_for_inference(args.checkpoint, args.target)
    os.makedirs(args.out, exist_ok=True)
    for seq_id, frame_paths in _input_sequences(args.input):
        video = np.stack([io_formats.read_png(p) for p in frame_paths])
        result = infer_video(video, model, desc, config)
        seq_dir = os.path.join(args.out, seq_id)
        if args.target == "depth":
            os.makedirs(os.path.join(seq_dir, "disparity"), exist_ok=True)
            os.makedirs(os.path.join(seq_dir, "preview"), exist_ok=True)
            for k in range(result.disparity.shape[0]):
                io_formats.write_pfm(
                    os.path.join(seq_dir, "disparity", f"f{k:03d}.pfm"),
                    result.disparity[k])
                io_formats.write_png(
                    os.path.join(seq_dir, "preview", f"f{k:03d}.png"),
                    io_formats.colorize(result.disparity[k]))
        else:
            os.makedirs(os.path.join(seq_dir, "normal"), exist_ok=True)
            os.makedirs(os.path.join(seq_dir, "preview"), exist_ok=True)
            for k in range(result.normals.shape[0]):
                io_formats.write_pfm(
                    os.path.join(seq_dir, "normal", f"f{k:03d}.pfm"),
                    result.normals[k])
                io_formats.write_png(
                    os.path.join(seq_dir, "preview", f"f{k:03d}.png"),
                    io_formats.colorize_normals(result.normals[k]))
        print(f"{seq_id}: {len(frame_paths)} frames, "
              f"{len(result.plan.windows)} segment(s)")
    _write_run_manifest(args.out, "infer", {
        "input": args.input, "checkpoint": args.checkpoint,
        "steps": config.steps, "segment": config.segment_frames,
        "overlap": config.overlap, "seed": config.seed, "target": config.target})
    return 0


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------

def _pred_sequences(pred_dir: str, target: str) -> dict[str, list[str]]:
    sub = "disparity" if target == "depth" else "normal"
    out = {}
    for name in sorted(os.listdir(pred_dir)):
        d = os.path.join(pred_dir, name, sub)
        if os.path.isdir(d):
            out[name] = sorted(os.path.join(d, f) for f in os.listdir(d)
                               if f.endswith(".pfm"))
    if not out:
        raise DataError(f"{pred_dir}: no {sub}/ predictions found")
    return out


def cmd_eval(args) -> int:
    manifest = DatasetManifest.load(args.gt)
    root = os.path.dirname(os.path.abspath(args.gt))
    method_tables: dict[str, dict[str, float]] = {}
    os.makedirs(args.out, exist_ok=True)

    for pred_dir in args.pred:
        method = os.path.basename(os.path.normpath(pred_dir))
        preds = _pred_sequences(pred_dir, args.target)
        gt_ids = set(manifest.ids())
        missing = sorted(gt_ids - set(preds))
        extra = sorted(set(preds) - gt_ids)
        if missing or extra:
            raise DataError(f"{method}: prediction/gt id mismatch; "
                            f"missing={missing} unmatched={extra}")
        rows = []
        for rec in manifest.sequences:
            gt = load_sequence(root, rec, with_normals=(args.target == "normal"))
            pred = np.stack([io_formats.read_pfm(p) for p in preds[rec.seq_id]])
            if args.target == "depth":
                m = evaluate_depth_sequence(pred, gt.depth, gt.valid,
                                            seq_id=rec.seq_id, near=args.near,
                                            far=args.far,
                                            align_space=args.align_space)
                rows.append({"id": rec.seq_id, "REL": m.rel, "RMSE_cm": m.rmse_cm,
                             **{f"delta_{a}": m.deltas[a] for a in DELTA_THRESHOLDS},
                             "pixels": m.n_pixels,
                             "scale": m.alignment.scale, "shift": m.alignment.shift,
                             "baseline_REL": best_constant_disparity_rel(
                                 gt.depth, gt.valid)})
                if args.profile_row is not None:
                    prof = temporal_profile(pred, args.profile_row)
                    io_formats.write_png(
                        os.path.join(args.out, f"{method}_{rec.seq_id}_profile.png"),
                        io_formats.colorize(prof))
                    rows[-1]["profile_jitter"] = profile_jitter(prof)
            else:
                mask = gt.valid & (np.linalg.norm(gt.normal, axis=-1) > 0.5)
                r = normal_metrics(pred, gt.normal, mask)
                rows.append({"id": rec.seq_id, "mean_deg": r.mean_deg,
                             "median_deg": r.median_deg,
                             **{f"within_{a}": r.inliers[a] for a in r.inliers},
                             "pixels": r.n_pixels})
        keys = [k for k in rows[0] if k != "id"]
        mean_row = {"id": "MEAN", **{k: float(np.mean([r[k] for r in rows]))
                                     for k in keys}}
        rows.append(mean_row)
        csv_path = os.path.join(args.out, f"{method}.csv")
        with open(csv_path, "w") as f:
            f.write(",".join(["id"] + keys) + "\n")
            for r in rows:
                f.write(",".join([str(r["id"])] + [f"{r[k]:.6f}" for k in keys]) + "\n")
        with open(os.path.join(args.out, f"{method}.json"), "w") as f:
            json.dump(rows, f, indent=1)
        metric_keys = [k for k in keys if k.startswith(("REL", "RMSE", "delta",
                                                        "mean", "median", "within"))]
        method_tables[method] = {k: mean_row[k] for k in metric_keys}
        print(f"{method}: " + "  ".join(f"{k}={mean_row[k]:.3f}" for k in metric_keys))

    if len(method_tables) >= 2:
        directions = {k: k.startswith(("delta", "within"))
                      for k in next(iter(method_tables.values()))}
        ranks = rank_methods(method_tables, directions)
        with open(os.path.join(args.out, "ranks.json"), "w") as f:
            json.dump(ranks, f, indent=1, sort_keys=True)
        for m, r in sorted(ranks.items(), key=lambda kv: kv[1]):
            print(f"rank {r:.2f}  {m}")
    _write_run_manifest(args.out, "eval", {
        "gt": args.gt, "pred": list(args.pred), "target": args.target,
        "near": args.near, "far": args.far, "align_space": args.align_space})
    return 0


# ---------------------------------------------------------------------------
# merge-lora / validate
# ---------------------------------------------------------------------------

def cmd_merge_lora(args) -> int:
    state, _ = load_model(args.checkpoint)
    save_merged(args.out, state)
    print(f"merged checkpoint written to {args.out}")
    return 0


def cmd_validate(args) -> int:
    manifest = DatasetManifest.load(args.manifest)
    root = os.path.dirname(os.path.abspath(args.manifest))
    problems = validate_manifest(root, manifest)
    if problems:
        for p in problems:
            print(p, file=sys.stderr)
        raise DataError(f"{len(problems)} problems found")
    print(f"{len(manifest.sequences)} sequences ok")
    return 0


# ---------------------------------------------------------------------------
# argument wiring
# ---------------------------------------------------------------------------

def build_parser() -> _Parser:
    p = _Parser(prog="glassdepth",
                description="transparent-scene video depth/normal pipeline")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("render", help="sample, settle, and render scenes")
    r.add_argument("--config", help="JSON render config")
    r.add_argument("--out", required=True)
    r.add_argument("--seed", type=int)
    r.add_argument("--jobs", type=int, default=1)
    r.set_defaults(fn=cmd_render)

    t = sub.add_parser("train", help="fine-tune LoRA adapters")
    t.add_argument("--config", required=True, help="JSON train config")
    t.add_argument("--out")
    t.add_argument("--seed", type=int)
    t.set_defaults(fn=cmd_train)

    i = sub.add_parser("infer", help="predict depth/normal video")
    i.add_argument("--input", required=True, help="dataset manifest or frame dir")
    i.add_argument("--checkpoint", required=True)
    i.add_argument("--steps", type=int, default=5)
    i.add_argument("--segment", type=int, default=21)
    i.add_argument("--overlap", type=int, default=8)
    i.add_argument("--seed", type=int, default=0)
    i.add_argument("--target", choices=["depth", "normal"], default="depth")
    i.add_argument("--out", required=True)
    i.set_defaults(fn=cmd_infer)

    e = sub.add_parser("eval", help="scale/shift-aligned metrics")
    e.add_argument("--pred", action="append", required=True,
                   help="prediction dir from infer (repeat to rank methods)")
    e.add_argument("--gt", required=True, help="ground-truth dataset manifest")
    e.add_argument("--target", choices=["depth", "normal"], default="depth")
    e.add_argument("--near", type=float)
    e.add_argument("--far", type=float)
    e.add_argument("--align-space", choices=["disparity", "depth"],
                   default="disparity")
    e.add_argument("--profile-row", type=int)
    e.add_argument("--out", required=True)
    e.set_defaults(fn=cmd_eval)

    m = sub.add_parser("merge-lora", help="fold adapters into the base weights")
    m.add_argument("--checkpoint", required=True)
    m.add_argument("--out", required=True)
    m.set_defaults(fn=cmd_merge_lora)

    v = sub.add_parser("validate", help="check a dataset manifest")
    v.add_argument("--manifest", required=True)
    v.set_defaults(fn=cmd_validate)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.fn(args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return 2
    except NumericalError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
