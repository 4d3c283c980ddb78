"""Command-line entry point wiring the package into reproducible workflows.

Every command takes --seed (default 0) and is bitwise reproducible for a
fixed seed; inputs are never mutated, outputs go under --out. Logs go to
stderr, data to files or stdout. An optional --config JSON file is merged
under explicit flags (flags win).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .augment import AugmentConfig, epipolar_jitter, frame_dropout, homography_perturb, linear_drift
from .conditioner import ConditionerConfig, PosEncConfig, init_conditioner_params
from .edits import EditSpec, apply_editspec, canonical_editspec_json, editspec_hash
from .errors import TrackEditError
from .geometry import MIN_DEPTH
from .metrics import compare_videos
from .params import load_checkpoint, save_checkpoint
from .preview import render_preview
from .project import (
    load_project,
    read_frame_dir,
    read_mask_dir,
    save_project,
    write_frame_dir,
    write_mask_dir,
    write_tracks_json,
)
from .scenes import ToySceneConfig, gen_procedural_pair
from .tracks import ProjectedTracks, project_tracks
from .training import (
    DenoiserConfig,
    TrainConfig,
    blob_epe,
    build_toy_dataset,
    evaluate_epe,
    generate,
    init_denoiser_params,
    prepare_sample,
    train_loop,
)

log = logging.getLogger("trackedit")


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    return json.loads(Path(path).read_text())


def _merged(args_value, config: dict, key: str, default):
    """Flags win over the config file; the config wins over defaults."""
    if args_value is not None:
        return args_value
    return config.get(key, default)


# ---------------------------------------------------------------------------
# commands


def cmd_ingest(args) -> int:
    pair = load_project(args.raw)
    save_project(pair, args.out)
    log.info("ingested %s -> %s (%d frames, %d tracks)", args.raw, args.out,
             pair.n_frames, pair.source_tracks.n_tracks)
    return 0


def cmd_edit(args) -> int:
    pair = load_project(args.project)
    spec_path = Path(args.edit)
    doc = json.loads(spec_path.read_text())
    spec = EditSpec.from_json(doc, base_dir=spec_path.parent)
    edited = apply_editspec(pair, spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    target = out / "target"
    target.mkdir(exist_ok=True)
    write_tracks_json(target / "tracks.json", edited.target_tracks)
    write_tracks_json(out / "tracks.json", edited.source_tracks)
    from .project import write_camera_json

    write_camera_json(target / "camera.json", edited.target_camera)
    (out / "editspec.canonical.json").write_text(canonical_editspec_json(doc) + "\n")
    print(editspec_hash(doc))
    return 0


def cmd_preview(args) -> int:
    pair = load_project(args.project)
    spec_path = Path(args.edit)
    doc = json.loads(spec_path.read_text())
    spec = EditSpec.from_json(doc, base_dir=spec_path.parent)
    clip, coverage = render_preview(pair, spec)
    out = Path(args.out)
    write_frame_dir(out / "frames", clip.frames)
    write_mask_dir(out / "coverage", coverage * 255)
    log.info("preview written to %s (%d frames)", out, clip.frames.shape[0])
    return 0


def cmd_augment(args) -> int:
    pair = load_project(args.project)
    cfg_doc = _load_config(args.config)
    cfg = AugmentConfig(**{**cfg_doc, "seed": args.seed})
    children = np.random.SeedSequence(cfg.seed).spawn(4)
    records = []

    rec: dict = {}
    tgt = epipolar_jitter(pair, cfg, np.random.default_rng(children[0]), rec)
    if rec:
        records.append(rec)

    # 2D perturbations are lifted back to 3D at the original depths, so the
    # saved project stays a plain track file with the configured screen noise
    scale = pair.disparity_scale()
    w, h = pair.frame_size
    depths = np.zeros((pair.n_frames, tgt.n_tracks))
    for k in range(pair.n_frames):
        intr, pose = pair.target_camera[k]
        depths[k] = pose.apply(tgt.positions[k])[:, 2]
    pt = project_tracks(tgt, pair.target_camera, scale)
    coords_before = pt.coords.copy()
    rec = {}
    pt = homography_perturb(pt, cfg, (w, h), np.random.default_rng(children[1]), rec)
    if rec:
        records.append(rec)
    rec = {}
    pt = linear_drift(pt, cfg, (w, h), np.random.default_rng(children[2]), rec)
    if rec:
        records.append(rec)

    positions = tgt.positions.copy()
    moved = np.any(pt.coords[..., :2] != coords_before[..., :2], axis=-1)
    for k in range(pair.n_frames):
        intr, pose = pair.target_camera[k]
        sel = moved[k] & (depths[k] > MIN_DEPTH)
        if not sel.any():
            continue
        from .geometry import unproject_many

        xy_px = pt.coords[k, sel, :2] * np.array([w, h])
        positions[k, sel] = unproject_many(xy_px, depths[k, sel], intr, pose)
    tgt = tgt.with_positions(positions)

    rec = {}
    source_video = frame_dropout(pair.source_video, cfg, np.random.default_rng(children[3]), rec)
    if rec:
        records.append(rec)

    from dataclasses import replace

    out_pair = replace(pair, target_tracks=tgt, source_video=source_video)
    save_project(out_pair, args.out)
    sidecar = {"seed": cfg.seed, "config": cfg.to_json(), "records": records}
    (Path(args.out) / "augment.sidecar.json").write_text(json.dumps(sidecar, indent=1) + "\n")
    return 0


def _scene_config(doc: dict) -> ToySceneConfig:
    fields = {k: v for k, v in doc.items() if k in ToySceneConfig.__dataclass_fields__}
    if "depth_layers" in fields:
        fields["depth_layers"] = tuple(fields["depth_layers"])
    if "board_half_size" in fields:
        fields["board_half_size"] = tuple(fields["board_half_size"])
    return ToySceneConfig(**fields)


def _model_configs(doc: dict):
    pe_doc = doc.get("posenc", {})
    ccfg_doc = doc.get("conditioner", {})
    dcfg_doc = dict(doc.get("denoiser", {}))
    if "patch" in dcfg_doc:
        dcfg_doc["patch"] = tuple(dcfg_doc["patch"])
    ccfg = ConditionerConfig(
        **{k: v for k, v in ccfg_doc.items() if k != "pe"},
        pe=PosEncConfig(**pe_doc) if pe_doc else None,
    )
    dcfg = DenoiserConfig(**dcfg_doc)
    return ccfg, dcfg


def cmd_gen_toy(args) -> int:
    doc = _load_config(args.config)
    scene_cfg = _scene_config(doc.get("scene", {}))
    n_pairs = _merged(args.pairs, doc, "pairs", 8)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i in range(n_pairs):
        pair, meta = gen_procedural_pair(args.seed * 1_000_003 + i, scene_cfg)
        proj_dir = out / f"pair_{i:04d}"
        save_project(pair, proj_dir)
        (proj_dir / "meta.json").write_text(json.dumps(meta, indent=1) + "\n")
    (out / "scene_config.json").write_text(json.dumps(asdict(scene_cfg), indent=1) + "\n")
    log.info("wrote %d procedural pairs to %s", n_pairs, out)
    return 0


def cmd_train_toy(args) -> int:
    doc = _load_config(args.config)
    scene_cfg = _scene_config(doc.get("scene", {}))
    ccfg, dcfg = _model_configs(doc)
    train_doc = dict(doc.get("train", {}))
    train_doc["seed"] = args.seed
    if args.epochs is not None:
        train_doc["epochs"] = args.epochs
    if "betas" in train_doc:
        train_doc["betas"] = tuple(train_doc["betas"])
    cfg = TrainConfig(**train_doc)
    n_pairs = _merged(args.pairs, doc, "pairs", 32)
    n_val = _merged(None, doc, "val_pairs_held_out", 8)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    samples = build_toy_dataset(scene_cfg, n_pairs, args.seed, dcfg.patch, cfg.n_tracks,
                                dtype=cfg.np_dtype,
                                foreground_fraction=cfg.foreground_fraction)
    val = build_toy_dataset(scene_cfg, n_val, args.seed, dcfg.patch, cfg.n_tracks,
                            dtype=cfg.np_dtype, seed_offset=500_000,
                            foreground_fraction=cfg.foreground_fraction)
    cond, den, metrics = train_loop(samples, val, ccfg, dcfg, cfg, metrics_path=out / "metrics.jsonl")
    save_checkpoint(out / "checkpoint", {"conditioner": cond, "denoiser": den})
    (out / "train_config.json").write_text(
        json.dumps({"scene": asdict(scene_cfg), "train": asdict(cfg)}, indent=1, default=list) + "\n"
    )
    final = metrics[-1] if metrics else {}
    log.info("training done: final loss %.5f", final.get("loss", float("nan")))
    return 0


def cmd_generate(args) -> int:
    doc = _load_config(args.config)
    ccfg, dcfg = _model_configs(doc)
    pair = load_project(args.project)
    if args.edit:
        spec_path = Path(args.edit)
        spec = EditSpec.from_json(json.loads(spec_path.read_text()), base_dir=spec_path.parent)
        pair = apply_editspec(pair, spec)
    train_doc = doc.get("train", {})
    dtype = np.float32 if train_doc.get("dtype") == "float32" else np.float64
    cond = init_conditioner_params(ccfg, 0, dtype)
    den = init_denoiser_params(dcfg, 0, dtype)
    state = load_checkpoint(args.checkpoint)
    cond.load_state(state["conditioner"])
    den.load_state(state["denoiser"])
    rng = np.random.default_rng(args.seed)
    meta = {"target_centers_px": [], "board_colors": []}
    sample = prepare_sample(_with_target_video(pair), meta, dcfg.patch,
                            args.tracks or train_doc.get("n_tracks", 48), rng, dtype)
    video = generate(sample, cond, den, ccfg, dcfg, args.steps, np.random.default_rng(args.seed))
    write_frame_dir(Path(args.out) / "frames", video)
    log.info("generated %d frames to %s", video.shape[0], args.out)
    return 0


def _with_target_video(pair):
    """Generation needs target token shapes; reuse the source clip's."""
    from dataclasses import replace

    if pair.target_video is not None:
        return pair
    return replace(pair, target_video=pair.source_video)


def cmd_eval(args) -> int:
    a = read_frame_dir(Path(args.a))
    b = read_frame_dir(Path(args.b))
    mask = None
    if args.masks:
        mask = read_mask_dir(Path(args.masks), a.shape[0]) > 0
    report = compare_videos(a, b, mask=mask)
    out = Path(args.out) if args.out else Path("report.json")
    report.save(out)
    print(report.table())
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app, default_static_dir

    app = create_app(args.project, static_dir=default_static_dir())
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="trackedit", description=__doc__)
    p.add_argument("--version", action="version", version=f"trackedit {__version__}")
    p.add_argument("--log-level", default="INFO")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("ingest", help="validate a raw project directory and write a normalized copy")
    sp.add_argument("--raw", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(fn=cmd_ingest)

    sp = sub.add_parser("edit", help="apply an editspec; writes edited tracks and cameras")
    sp.add_argument("--project", required=True)
    sp.add_argument("--edit", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(fn=cmd_edit)

    sp = sub.add_parser("preview", help="render the point-cloud preview of an edit")
    sp.add_argument("--project", required=True)
    sp.add_argument("--edit", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(fn=cmd_preview)

    sp = sub.add_parser("augment", help="write a perturbed project copy plus a seed sidecar")
    sp.add_argument("--project", required=True)
    sp.add_argument("--config", default=None)
    sp.add_argument("--out", required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(fn=cmd_augment)

    sp = sub.add_parser("gen-toy", help="generate a procedural scene-pair dataset")
    sp.add_argument("--config", default=None)
    sp.add_argument("--out", required=True)
    sp.add_argument("--pairs", type=int, default=None)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(fn=cmd_gen_toy)

    sp = sub.add_parser("train-toy", help="train the toy conditioned denoiser")
    sp.add_argument("--config", default=None)
    sp.add_argument("--out", required=True)
    sp.add_argument("--pairs", type=int, default=None)
    sp.add_argument("--epochs", type=int, default=None)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(fn=cmd_train_toy)

    sp = sub.add_parser("generate", help="generate a target clip from a trained checkpoint")
    sp.add_argument("--project", required=True)
    sp.add_argument("--edit", default=None)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--config", default=None)
    sp.add_argument("--out", required=True)
    sp.add_argument("--steps", type=int, default=8)
    sp.add_argument("--tracks", type=int, default=None)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(fn=cmd_generate)

    sp = sub.add_parser("eval", help="score two frame directories; writes report.json")
    sp.add_argument("--a", required=True)
    sp.add_argument("--b", required=True)
    sp.add_argument("--masks", default=None)
    sp.add_argument("--out", default=None)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(fn=cmd_eval)

    sp = sub.add_parser("serve", help="serve the browser editor API for one project")
    sp.add_argument("--project", required=True)
    sp.add_argument("--port", type=int, default=8000)
    sp.add_argument("--host", default="127.0.0.1")
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(fn=cmd_serve)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(stream=sys.stderr, level=args.log_level.upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except TrackEditError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: MissingFile: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
