"""Command-line entry point: dataset creation, training, synthesis, pose
sweeps, reenactment, and footprint evaluation.

Exit codes: 0 success, 1 usage/configuration error, 2 runtime failure.
Run directories hold config.json (the resolved configuration, written before
the first step), checkpoints/, logs/, montages/, and reports/.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
import torch

from . import data as data_mod
from . import evaluation as eval_mod
from . import geometry, glyphs, shape_model as sm
from . import training as train_mod
from .losses import ConfigurationError, LossWeights

log = logging.getLogger(__name__)

RUN_ROOT_ENV = "LANDMARKGAN_RUN_ROOT"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="landmarkgan",
                     description="Landmark-guided face-to-face translation toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-data", help="build a dataset manifest")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--synthetic", action="store_true",
                   help="render a synthetic glyph-face dataset")
    p.add_argument("--identities", type=int, default=10)
    p.add_argument("--shapes", type=int, default=30)
    p.add_argument("--quota", type=int, default=100, help="triplets per video/identity")
    p.add_argument("--landmarks", type=int, default=20)
    p.add_argument("--image-size", type=int, default=96)
    p.add_argument("--glyph-sigma", type=float, default=2.0)
    p.add_argument("--glyph-radius", type=float, default=6.0)
    p.add_argument("--paired", nargs="+", default=None, metavar="VIDEO_DIR",
                   help="directories of per-video frames (png + pts)")
    p.add_argument("--unpaired", default=None, metavar="IMG_DIR",
                   help="directory of standalone images (png + pts)")
    p.add_argument("--rotation", type=float, default=30.0)
    p.add_argument("--scale-lo", type=float, default=0.9)
    p.add_argument("--scale-hi", type=float, default=1.1)
    p.add_argument("--translation", type=float, default=10.0)
    p.add_argument("--mirror-prob", type=float, default=0.5)
    p.add_argument("--mirror-table", choices=["ibug68", "template", "none"], default="ibug68")

    p = sub.add_parser("fit-shape-model", help="fit a shape model from manifest landmarks")
    p.add_argument("--manifest", required=True)
    p.add_argument("--components", type=int, default=6)
    p.add_argument("--pose-index", type=int, default=None)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--manifest", required=True)
    p.add_argument("--run-dir", default=None)
    p.add_argument("--config", default=None, help="JSON config file; flags override it")
    p.add_argument("--resume", default=None, help="checkpoint to continue from")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--iterations", type=int, default=None)
    p.add_argument("--batch", type=int, default=None)
    p.add_argument("--image-size", type=int, default=None)
    p.add_argument("--landmarks", type=int, default=None)
    p.add_argument("--base-width", type=int, default=None)
    p.add_argument("--res-blocks", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--lr-start", type=float, default=None)
    p.add_argument("--lr-end", type=float, default=None)
    p.add_argument("--lr-decay-epochs", type=int, default=None)
    p.add_argument("--checkpoint-every", type=int, default=None)
    p.add_argument("--log-every", type=int, default=None)
    for name in ("adv", "pix", "self", "triple", "id", "pp", "tv"):
        p.add_argument(f"--w-{name}", type=float, default=None)
    p.add_argument("--no-triple", action="store_true",
                   help="ablation baseline: set the triple-consistency weight to 0"
                        " (the term is skipped and logged as 0.0)")
    p.add_argument("--no-self", action="store_true",
                   help="set the self-consistency weight to 0")
    p.add_argument("--compute-skipped-terms", action="store_true",
                   help="compute and log zero-weighted terms instead of skipping them")

    p = sub.add_parser("synth", help="translate an image to target landmark files")
    p.add_argument("--model", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--points", required=True, help="pts file for the input image")
    p.add_argument("--target", nargs="+", required=True, help="target pts file(s)")
    p.add_argument("--out", required=True)
    p.add_argument("--overlay", action="store_true", help="draw target points on outputs")
    p.add_argument("--progressive", action="store_true",
                   help="feed each output into the next translation")

    p = sub.add_parser("sweep", help="frontalize then sweep the pose parameter")
    p.add_argument("--model", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--points", required=True)
    p.add_argument("--shape-model", required=True)
    p.add_argument("--angles", default="-2,-1,0,1,2",
                   help="comma-separated pose values in units of the pose sigma")
    p.add_argument("--jitter", type=float, default=0.0,
                   help="expression jitter scale in per-component sigmas")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("reenact", help="drive one face with a landmark sequence")
    p.add_argument("--model", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--points", required=True)
    p.add_argument("--driving", nargs="+", default=None, help="driving pts files, in order")
    p.add_argument("--driving-dir", default=None, help="directory of driving pts files")
    p.add_argument("--progressive", action="store_true",
                   help="chain outputs instead of always starting from the source image")
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval", help="measure the footprint gap of model(s)")
    p.add_argument("--model", default=None, help="single checkpoint to evaluate")
    p.add_argument("--compare", nargs=2, default=None, metavar=("WITH", "WITHOUT"),
                   help="two checkpoints; reports gap(WITHOUT)/gap(WITH)")
    p.add_argument("--manifest", required=True)
    p.add_argument("--shape-model", default=None,
                   help="shape model file; fitted from the manifest when omitted")
    p.add_argument("--components", type=int, default=6)
    p.add_argument("--samples", type=int, default=16)
    p.add_argument("--chain", type=int, default=3)
    p.add_argument("--pose-sigmas", type=float, default=2.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    return parser


def _resolve_run_dir(arg: str | None, seed: int) -> Path:
    if arg is not None:
        return Path(arg)
    root = Path(os.environ.get(RUN_ROOT_ENV, "runs"))
    return root / f"run_seed{seed}"


def _read_annotated_dir(directory: Path) -> list[tuple[str, np.ndarray]]:
    frames = []
    for img_path in sorted(directory.glob("*.png")):
        pts_path = img_path.with_suffix(".pts")
        if not pts_path.exists():
            log.warning("no pts file for %s; skipped", img_path)
            continue
        try:
            pts = geometry.read_pts(pts_path)
        except ValueError as exc:
            log.warning("bad pts file %s: %s", pts_path, exc)
            continue
        frames.append((str(img_path), pts))
    return frames


def _cmd_make_data(args) -> int:
    out = Path(args.out)
    modes = sum([args.synthetic, args.paired is not None, args.unpaired is not None])
    if modes != 1:
        raise UsageError("pick exactly one of --synthetic, --paired, --unpaired")
    if args.synthetic:
        manifest = glyphs.make_synthetic_dataset(
            out, identities=args.identities, shapes_per_identity=args.shapes,
            quota=args.quota, seed=args.seed, n=args.landmarks,
            image_size=args.image_size, glyph_sigma=args.glyph_sigma,
            glyph_radius=args.glyph_radius)
        print(f"wrote {len(manifest.records)} synthetic triplets to {out}")
        return 0

    rng = np.random.default_rng(args.seed)
    out.mkdir(parents=True, exist_ok=True)
    if args.paired is not None:
        videos = {}
        for vdir in args.paired:
            frames = _read_annotated_dir(Path(vdir))
            if frames:
                videos[Path(vdir).name] = frames
        records = data_mod.build_paired_triplets(videos, args.quota, rng)
        scheme = "external"
    else:
        frames = _read_annotated_dir(Path(args.unpaired))
        if args.mirror_table == "ibug68":
            perm = geometry.MIRROR_68
        elif args.mirror_table == "template" and frames:
            _, perm_arr, _ = glyphs.face_template(frames[0][1].shape[0])
            perm = tuple(int(i) for i in perm_arr)
        else:
            perm = None
        jitter = geometry.AffineJitter(
            rotation=args.rotation, scale=(args.scale_lo, args.scale_hi),
            translation=args.translation,
            mirror_prob=args.mirror_prob if perm is not None else 0.0,
            mirror_permutation=perm)
        records = data_mod.build_unpaired_triplets(frames, jitter, rng, root=".")
        scheme = "external"
    if not records:
        raise UsageError("no usable inputs found")
    n = records[0].anchor_points.shape[0]
    manifest = data_mod.DatasetManifest(seed=args.seed, landmark_count=n, scheme=scheme,
                                        records=records, root=str(out))
    data_mod.save_manifest(manifest, out / "manifest.json")
    print(f"wrote {len(records)} triplets to {out / 'manifest.json'}")
    return 0


def _cmd_fit_shape_model(args) -> int:
    manifest = data_mod.load_manifest(args.manifest)
    shapes = [rec.anchor_points for rec in manifest.records]
    # Anchor shapes repeat across triplets; dedupe by value for a cleaner fit.
    unique = {arr.tobytes(): arr for arr in shapes}
    model = sm.fit_shape_model(list(unique.values()), k=args.components,
                               pose_index=args.pose_index)
    sm.save_shape_model(args.out, model)
    print(f"fit shape model with k={model.n_components} (pose index {model.pose_index}) "
          f"-> {args.out}")
    return 0


def _train_config_from_args(args) -> train_mod.TrainConfig:
    base = {}
    if args.config:
        base = json.loads(Path(args.config).read_text(encoding="ascii"))
    overrides = {
        "epochs": args.epochs,
        "iterations_per_epoch": args.iterations,
        "batch_size": args.batch,
        "image_size": args.image_size,
        "landmarks": args.landmarks,
        "base_width": args.base_width,
        "res_blocks": args.res_blocks,
        "seed": args.seed,
        "lr_start": args.lr_start,
        "lr_end": args.lr_end,
        "lr_decay_epochs": args.lr_decay_epochs,
        "checkpoint_every": args.checkpoint_every,
        "log_every": args.log_every,
    }
    for key, value in overrides.items():
        if value is not None:
            base[key] = value
    weights = dict(base.get("weights", {}))
    flag_names = {"adv": "adv", "pix": "pix", "self": "self_consistency",
                  "triple": "triple", "id": "identity", "pp": "perceptual", "tv": "tv"}
    for flag, field_name in flag_names.items():
        value = getattr(args, f"w_{flag}")
        if value is not None:
            weights[field_name] = value
    if args.no_triple:
        weights["triple"] = 0.0
    if args.no_self:
        weights["self_consistency"] = 0.0
    if weights:
        base["weights"] = weights
    if args.compute_skipped_terms:
        base["compute_skipped_terms"] = True
    base.setdefault("weights", {})
    base["weights"] = LossWeights(**base["weights"]) if isinstance(base["weights"], dict) \
        else base["weights"]
    if base.get("disc_channels") is not None:
        base["disc_channels"] = tuple(base["disc_channels"])
    return train_mod.TrainConfig(**base)


def _cmd_train(args) -> int:
    manifest = data_mod.load_manifest(args.manifest)
    cfg = _train_config_from_args(args)
    if cfg.landmarks != manifest.landmark_count:
        if args.landmarks is None and "landmarks" not in (args.config or ""):
            cfg = train_mod.config_from_dict(
                {**train_mod.config_to_dict(cfg), "landmarks": manifest.landmark_count})
        else:
            raise UsageError(
                f"--landmarks {cfg.landmarks} does not match manifest "
                f"({manifest.landmark_count})")
    run_dir = _resolve_run_dir(args.run_dir, cfg.seed)
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.json").write_text(
        json.dumps(train_mod.config_to_dict(cfg), indent=1) + "\n", encoding="ascii")
    state = train_mod.train(manifest, cfg, run_dir, resume_from=args.resume)
    print(f"trained {state.step} steps; checkpoints in {run_dir / 'checkpoints'}")
    return 0


def _load_model(path):
    gen, cfg = train_mod.load_generator(path)
    return gen, cfg


def _crop_frame_heatmap(points: np.ndarray, cfg: train_mod.TrainConfig) -> tuple:
    to_crop = geometry.landmark_crop_transform(points, cfg.crop_margin, cfg.image_size)
    crop_pts = to_crop.apply(points)
    hm = train_mod.encode_heatmap_batch(crop_pts[None], cfg.image_size,
                                        cfg.heatmap_sigma, cfg.heatmap_radius)[0]
    return hm, crop_pts


def _cmd_synth(args) -> int:
    gen, cfg = _load_model(args.model)
    img = data_mod.load_image(args.image)
    pts = geometry.read_pts(args.points)
    if pts.shape[0] != cfg.landmarks:
        raise UsageError(f"model expects {cfg.landmarks} landmarks, pts file has {pts.shape[0]}")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    cropped, _, _ = geometry.crop_to_landmarks(img, pts, cfg.crop_margin, cfg.image_size)
    current = data_mod.to_unit_range(cropped)
    source = current
    results = []
    with torch.no_grad():
        for i, tgt_file in enumerate(args.target):
            tgt_pts = geometry.read_pts(tgt_file)
            if tgt_pts.shape[0] != cfg.landmarks:
                raise UsageError(f"model expects {cfg.landmarks} landmarks, "
                                 f"{tgt_file} has {tgt_pts.shape[0]}")
            hm, crop_pts = _crop_frame_heatmap(tgt_pts, cfg)
            out, _, _ = gen(current if args.progressive else source, hm)
            frame = data_mod.from_unit_range(out)
            if args.overlay:
                frame = eval_mod.write_montage([[frame]], border=0,
                                               overlay=[[crop_pts]])
            path = out_dir / f"synth_{i:03d}.png"
            data_mod.save_image(path, frame)
            recon = float((out - source).abs().mean())
            results.append({"target": str(tgt_file), "output": str(path),
                            "input_distance": recon})
            if args.progressive:
                current = out
    (out_dir / "synth_report.json").write_text(
        json.dumps(results, indent=1) + "\n", encoding="ascii")
    for r in results:
        print(f"{r['output']}: mean |out - input| = {r['input_distance']:.4f}")
    return 0


def _cmd_sweep(args) -> int:
    gen, cfg = _load_model(args.model)
    model = sm.load_shape_model(args.shape_model)
    img = data_mod.load_image(args.image)
    pts = geometry.read_pts(args.points)
    if pts.shape[0] != cfg.landmarks or model.n_points != cfg.landmarks:
        raise UsageError("landmark counts of model, shape model, and pts file must match")
    angles = [float(tok) for tok in args.angles.split(",") if tok.strip()]
    rng = np.random.default_rng(args.seed)
    sigma = model.component_sigma(model.pose_index)
    shapes = [sm.frontalize(pts, model)]
    nonzero = [a * sigma for a in angles if a != 0.0]
    if nonzero:
        shapes.extend(sm.pose_sweep(pts, model, nonzero,
                                    expression_jitter_scale=args.jitter, rng=rng))

    cropped, _, _ = geometry.crop_to_landmarks(img, pts, cfg.crop_margin, cfg.image_size)
    source = data_mod.to_unit_range(cropped)
    heatmaps = [_crop_frame_heatmap(s, cfg)[0] for s in shapes]
    with torch.no_grad():
        progressive = eval_mod.progressive_chain(gen, source, heatmaps)
        one_to_one = [gen(source, hm)[0] for hm in heatmaps]
    src_frame = data_mod.from_unit_range(source)
    rows = [
        [src_frame] + [data_mod.from_unit_range(t) for t in progressive],
        [src_frame] + [data_mod.from_unit_range(t) for t in one_to_one],
    ]
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    eval_mod.write_montage(rows, out_dir / "sweep.png")
    print(f"wrote {out_dir / 'sweep.png'} ({len(shapes)} views, progressive + one-to-one)")
    return 0


def _cmd_reenact(args) -> int:
    gen, cfg = _load_model(args.model)
    img = data_mod.load_image(args.image)
    pts = geometry.read_pts(args.points)
    if pts.shape[0] != cfg.landmarks:
        raise UsageError(f"model expects {cfg.landmarks} landmarks, pts file has {pts.shape[0]}")
    if (args.driving is None) == (args.driving_dir is None):
        raise UsageError("pass exactly one of --driving or --driving-dir")
    files = ([Path(f) for f in args.driving] if args.driving
             else sorted(Path(args.driving_dir).glob("*.pts")))
    if not files:
        raise UsageError("driving sequence is empty")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    cropped, _, _ = geometry.crop_to_landmarks(img, pts, cfg.crop_margin, cfg.image_size)
    source = data_mod.to_unit_range(cropped)
    current = source
    skipped = []
    written = []
    with torch.no_grad():
        for i, f in enumerate(files):
            try:
                drive_pts = geometry.read_pts(f)
                if drive_pts.shape[0] != cfg.landmarks:
                    raise ValueError(f"expected {cfg.landmarks} points")
            except (ValueError, OSError) as exc:
                log.warning("skipping driving frame %s: %s", f, exc)
                skipped.append(str(f))
                continue
            hm, _ = _crop_frame_heatmap(drive_pts, cfg)
            out, _, _ = gen(current if args.progressive else source, hm)
            path = out_dir / f"frame_{i:04d}.png"
            data_mod.save_image(path, data_mod.from_unit_range(out))
            written.append(str(path))
            if args.progressive:
                current = out
    (out_dir / "reenact_report.json").write_text(
        json.dumps({"frames": written, "skipped": skipped}, indent=1) + "\n",
        encoding="ascii")
    print(f"wrote {len(written)} frames to {out_dir} ({len(skipped)} skipped)")
    return 0


def _eval_one(ckpt_path, manifest, model, protocol) -> eval_mod.FootprintReport:
    gen, cfg = _load_model(ckpt_path)
    from .extractors import make_identity_extractor
    f_id = make_identity_extractor(cfg.identity_seed)
    return eval_mod.footprint_gap(
        gen, manifest, model, protocol,
        heatmap_sigma=cfg.heatmap_sigma, heatmap_radius=cfg.heatmap_radius,
        crop_margin=cfg.crop_margin, out_size=cfg.image_size, f_id=f_id)


def _cmd_eval(args) -> int:
    if (args.model is None) == (args.compare is None):
        raise UsageError("pass exactly one of --model or --compare")
    manifest = data_mod.load_manifest(args.manifest)
    if args.shape_model:
        model = sm.load_shape_model(args.shape_model)
    else:
        unique = {rec.anchor_points.tobytes(): rec.anchor_points
                  for rec in manifest.records}
        model = sm.fit_shape_model(list(unique.values()), k=args.components)
    if model.n_points != manifest.landmark_count:
        raise UsageError("shape model and manifest landmark counts differ")
    protocol = eval_mod.EvalProtocol(samples=args.samples, chain_length=args.chain,
                                     pose_sigmas=args.pose_sigmas, seed=args.seed)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.model:
        report = _eval_one(args.model, manifest, model, protocol)
        report.save(out_dir / "footprint_report.json")
        print(f"footprint gap: {report.gap_mean:.5f} "
              f"(normalized {report.gap_normalized_mean:.5f})")
        return 0
    with_path, without_path = args.compare
    report_with = _eval_one(with_path, manifest, model, protocol)
    report_without = _eval_one(without_path, manifest, model, protocol)
    report_with.save(out_dir / "footprint_with.json")
    report_without.save(out_dir / "footprint_without.json")
    summary = eval_mod.compare_models(report_with, report_without)
    (out_dir / "comparison.json").write_text(
        json.dumps(summary, indent=1) + "\n", encoding="ascii")
    print(f"gap(with)={summary['gap_with']:.5f} gap(without)={summary['gap_without']:.5f} "
          f"ratio={summary['gap_ratio']:.2f}")
    return 0


_COMMANDS = {
    "make-data": _cmd_make_data,
    "fit-shape-model": _cmd_fit_shape_model,
    "train": _cmd_train,
    "synth": _cmd_synth,
    "sweep": _cmd_sweep,
    "reenact": _cmd_reenact,
    "eval": _cmd_eval,
}


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    try:
        return _COMMANDS[args.command](args)
    except (UsageError, ConfigurationError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
