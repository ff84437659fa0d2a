#!/usr/bin/env python3
"""Reference A/B experiment: train the same desk-scale model with and without
the triple-consistency term on one synthetic glyph dataset and seed, then
report the footprint gap ratio, progressive-chain fidelity, and one-pass
fidelity. The acceptance suite re-runs this configuration with its pinned
thresholds; this script exists to reproduce and inspect the reference numbers.

Usage: python scripts/run_ab_experiment.py [--out runs/ab] [--steps N] ...
"""

import argparse
import json
import time
from pathlib import Path

import numpy as np

from landmarkgan.data import load_manifest
from landmarkgan.evaluation import EvalProtocol, compare_models, footprint_gap
from landmarkgan.extractors import make_identity_extractor
from landmarkgan.glyphs import make_synthetic_dataset
from landmarkgan.losses import LossWeights
from landmarkgan.shape_model import fit_shape_model
from landmarkgan.training import TrainConfig, config_to_dict, train


def desk_config(steps: int, triple: bool, seed: int, image_size: int, base_width: int,
                res_blocks: int, batch: int) -> TrainConfig:
    epochs = 4
    weights = LossWeights() if triple else LossWeights(triple=0.0)
    return TrainConfig(
        epochs=epochs,
        iterations_per_epoch=steps // epochs,
        batch_size=batch,
        lr_start=2e-4,
        lr_end=1e-6,
        lr_decay_epochs=epochs - 1,
        weights=weights,
        image_size=image_size,
        landmarks=20,
        base_width=base_width,
        res_blocks=res_blocks,
        seed=seed,
        checkpoint_every=10 ** 9,  # final checkpoint only
        log_every=25,
    )


def main() -> int:
    parser = argparse.ArgumentParser()
    parser.add_argument("--out", default="runs/ab")
    parser.add_argument("--steps", type=int, default=2000)
    parser.add_argument("--identities", type=int, default=20)
    parser.add_argument("--shapes", type=int, default=30)
    parser.add_argument("--quota", type=int, default=50)
    parser.add_argument("--image-size", type=int, default=32)
    parser.add_argument("--base-width", type=int, default=12)
    parser.add_argument("--res-blocks", type=int, default=2)
    parser.add_argument("--batch", type=int, default=8)
    parser.add_argument("--samples", type=int, default=32)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    out = Path(args.out)
    data_dir = out / "data"
    if not (data_dir / "manifest.json").exists():
        print("building synthetic dataset ...")
        make_synthetic_dataset(data_dir, identities=args.identities,
                               shapes_per_identity=args.shapes, quota=args.quota,
                               seed=args.seed, n=20, image_size=96)
    manifest = load_manifest(data_dir / "manifest.json")
    print(f"dataset: {len(manifest.records)} triplets, {manifest.landmark_count} landmarks")

    results = {}
    for label, triple in (("with_triple", True), ("without_triple", False)):
        cfg = desk_config(args.steps, triple, args.seed, args.image_size,
                          args.base_width, args.res_blocks, args.batch)
        run_dir = out / label
        t0 = time.time()
        state = train(manifest, cfg, run_dir)
        dt = time.time() - t0
        print(f"{label}: {state.step} steps in {dt / 60:.1f} min "
              f"({dt / state.step * 1000:.0f} ms/step)")
        results[label] = (state, cfg, run_dir)

    anchors = {rec.anchor_points.tobytes(): rec.anchor_points for rec in manifest.records}
    shape_model = fit_shape_model(list(anchors.values()), k=4)
    protocol = EvalProtocol(samples=args.samples, chain_length=3, pose_sigmas=2.0, seed=1)

    reports = {}
    for label, (state, cfg, run_dir) in results.items():
        f_id = make_identity_extractor(cfg.identity_seed)
        report = footprint_gap(state.generator, manifest, shape_model, protocol,
                               heatmap_sigma=cfg.heatmap_sigma,
                               heatmap_radius=cfg.heatmap_radius,
                               crop_margin=cfg.crop_margin, out_size=cfg.image_size,
                               f_id=f_id)
        report.save(run_dir / "footprint.json")
        reports[label] = report
        print(f"{label}: gap={report.gap_mean:.5f} norm_gap={report.gap_normalized_mean:.5f} "
              f"chain_error={['%.4f' % e for e in report.chain_error]} "
              f"drift={['%.4f' % d for d in report.identity_drift]}")

    summary = compare_models(reports["with_triple"], reports["without_triple"])
    summary["config"] = config_to_dict(results["with_triple"][1])
    (out / "summary.json").write_text(json.dumps(summary, indent=1) + "\n")
    print(json.dumps({k: v for k, v in summary.items() if k != "config"}, indent=1))
    ok = (summary["gap_ratio"] >= 2.0
          and summary["chain_error_with"][2] < summary["chain_error_without"][2]
          and summary["one_pass_with"] <= 1.2 * summary["one_pass_without"])
    print("ACCEPTANCE OUTCOME:", "PASS" if ok else "FAIL")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
