"""Command-line surface tying the pipeline together.

Subcommands: ``dataset`` (synth / crops / pairs / lint), ``train``,
``eval``, ``baseline``, ``occlude``, ``plot``.  All outputs land under
``--out`` together with a ``files.json`` manifest of what was produced.
Exit codes: 0 on success, 2 on configuration errors, 1 on runtime failures.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

log = logging.getLogger("rotvol")


def _record_outputs(out_dir: Path, command: str, paths: list[Path]):
    out_dir.mkdir(parents=True, exist_ok=True)
    index_path = out_dir / "files.json"
    index = json.loads(index_path.read_text()) if index_path.exists() else {}
    index[command] = sorted(str(Path(p).relative_to(out_dir)) for p in paths)
    index_path.write_text(json.dumps(index, indent=2, sort_keys=True))


# ---------------------------------------------------------------------------
# dataset


def cmd_dataset_synth(args) -> int:
    from .sampling import save_panorama, write_pano_index
    from .synth import synth_panorama_set

    out = Path(args.out)
    panos = synth_panorama_set(args.n, args.style, args.seed, width=args.width,
                               shared_world=args.shared_world)
    paths = [save_panorama(p, out) for p in panos]
    paths.append(write_pano_index(panos, out, style=args.style, seed=args.seed))
    _record_outputs(out, "dataset.synth", paths)
    log.info("wrote %d panoramas under %s", len(panos), out)
    return 0


def cmd_dataset_crops(args) -> int:
    from .sampling import PITCH_RANGES, load_panorama, read_pano_index, render_views, write_views

    out = Path(args.out)
    index = read_pano_index(out)
    panos = [load_panorama(out, pid, index) for pid in sorted(index)]
    pitch_range = PITCH_RANGES[args.pitch]
    views = render_views(panos, args.views_per_pano, pitch_range, args.seed, out,
                         fov=args.fov, size=args.size)
    meta = {"pitch_preset": args.pitch, "pitch_range": list(pitch_range),
            "fov": args.fov, "crop_size": args.size, "seed": args.seed}
    paths = [out / v.crop_ref for v in views]
    paths.append(write_views(views, out, meta))
    _record_outputs(out, "dataset.crops", paths)
    log.info("rendered %d crops", len(views))
    return 0


def cmd_dataset_pairs(args) -> int:
    from .sampling import (DatasetManifest, load_panorama, make_pairs_same_pano,
                           make_pairs_translated, read_pano_index, read_views,
                           split_pano_ids, write_manifest)

    out = Path(args.out)
    views, meta = read_views(out)
    pano_ids = sorted({v.pano_id for v in views})
    train_ids, test_ids = split_pano_ids(pano_ids, args.test_fraction, args.seed)
    paths = []
    for split, ids in (("train", train_ids), ("test", test_ids)):
        if not ids:
            continue
        split_views = [v for v in views if v.pano_id in set(ids)]
        if args.mode == "same":
            records = make_pairs_same_pano(split_views, args.quota, args.seed)
            max_dist = None
        else:
            index = read_pano_index(out)
            panos = [load_panorama(out, pid, index) for pid in ids]
            records = make_pairs_translated(panos, split_views, args.max_dist,
                                            args.quota, args.seed)
            max_dist = args.max_dist
        manifest = DatasetManifest(records=records, split=split, seed=args.seed)
        paths.append(write_manifest(manifest, out, tuple(meta["pitch_range"]),
                                    fov=meta["fov"], crop_size=meta["crop_size"],
                                    max_dist_m=max_dist))
        log.info("%s split: %d pairs", split, len(records))
    _record_outputs(out, "dataset.pairs", paths)
    return 0


def cmd_dataset_lint(args) -> int:
    from .sampling import lint_manifest, lint_split_disjoint, manifest_path, read_manifest

    out = Path(args.out)
    problems = []
    manifests = {}
    for split in ("train", "test"):
        path = manifest_path(out, split)
        if path.exists():
            manifests[split] = read_manifest(path)
            problems += [f"{split}: {p}" for p in lint_manifest(manifests[split])]
    if "train" in manifests and "test" in manifests:
        problems += lint_split_disjoint(manifests["train"], manifests["test"])
    if problems:
        for p in problems:
            print(p)
        return 1
    print(f"lint ok over {sum(len(m.records) for m in manifests.values())} pairs")
    return 0


# ---------------------------------------------------------------------------
# train / eval / baseline / occlude / plot


def cmd_train(args) -> int:
    from .config import load_config
    from .training import PairDataset, train
    from .sampling import read_manifest

    cfg = load_config(args.config, preset=args.preset, overrides=args.set)
    if args.manifest:
        cfg.train.manifest = args.manifest
    if cfg.train.manifest is None:
        cfg.train.manifest = str(Path(args.out) / "manifest_train.jsonl")
    cfg.train.out_dir = str(args.out)
    if args.seed is not None:
        cfg.train.seed = args.seed
    model_cfg = cfg.model_config()
    manifest = read_manifest(Path(cfg.train.manifest))
    dataset = PairDataset(manifest, model_cfg.input_size)
    _, train_log, _ = train(cfg.train, model_config=model_cfg, dataset=dataset,
                            resume_from=args.resume)
    out = Path(args.out)
    produced = sorted(out.glob("ckpt_*.pt")) + [out / "final.pt", out / "trainlog.csv"]
    _record_outputs(out, "train", [p for p in produced if p.exists()])
    log.info("final loss %.4f", train_log.rows[-1][1] if train_log.rows else float("nan"))
    return 0


def _probe_images(manifest, limit: int):
    from .sampling import load_image

    refs = []
    for r in manifest.records:
        for ref in (r.crop1_ref, r.crop2_ref):
            if ref not in refs:
                refs.append(ref)
    return [load_image(manifest.root / ref) for ref in refs[:limit]]


def cmd_eval(args) -> int:
    from .evaluation import evaluate, identity_probe, roll_probe, write_pairs_csv
    from .model import predictor_from_checkpoint
    from .sampling import read_manifest

    manifest = read_manifest(Path(args.manifest))
    predictor = predictor_from_checkpoint(Path(args.checkpoint))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    if args.probe == "identity":
        result = identity_probe(predictor, _probe_images(manifest, args.probe_images))
        payload = {"probe": "identity",
                   "mean_error_deg": result.mean_error_deg,
                   "median_error_deg": result.median_error_deg,
                   "errors_deg": result.errors_deg,
                   "pitch_gaps_deg": result.pitch_gaps_deg}
        path = out / "identity_probe.json"
        path.write_text(json.dumps(payload, indent=2))
        paths.append(path)
        print(f"identity probe: mean {result.mean_error_deg:.3f} deg over "
              f"{len(result.errors_deg)} images")
    elif args.probe == "roll":
        report = roll_probe(predictor, manifest, args.max_roll, rng_seed=args.seed or 0)
        path = out / "roll_probe.json"
        path.write_text(json.dumps(report.to_json(), indent=2))
        write_pairs_csv(report, manifest, out / "roll_pairs.csv")
        paths += [path, out / "roll_pairs.csv"]
        _print_report(report)
    else:
        report = evaluate(predictor, manifest, top2=args.top2)
        path = out / "report.json"
        path.write_text(json.dumps(report.to_json(), indent=2))
        write_pairs_csv(report, manifest, out / "pairs.csv")
        paths += [path, out / "pairs.csv"]
        _print_report(report)
    _record_outputs(out, "eval", paths)
    return 0


def _print_report(report):
    for name, stats in report.classes.items():
        print(f"{name:>5}: mean {stats.mean_deg:7.2f}  median {stats.median_deg:7.2f}  "
              f"<10deg {stats.pct_under_10:6.2f}%  n={stats.count}")


def cmd_baseline(args) -> int:
    from .baselines import essential_rotation, ransac_rotation
    from .evaluation import evaluate, evaluate_matching_baseline, write_pairs_csv
    from .sampling import read_manifest

    manifest = read_manifest(Path(args.manifest))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.mode == "reg6d":
        from .baselines import Reg6DPredictor

        if not args.checkpoint:
            raise SystemExit("--checkpoint is required for the reg6d baseline")
        from .model import load_checkpoint, model_from_checkpoint

        payload = load_checkpoint(Path(args.checkpoint))
        predictor = Reg6DPredictor(model_from_checkpoint(payload),
                                   norm_mean=payload["norm_mean"],
                                   norm_std=payload["norm_std"])
        report = evaluate(predictor, manifest)
    else:
        if args.mode == "twopoint":
            def fit(matches):
                return ransac_rotation(matches, iters=args.ransac_iters,
                                       inlier_thresh_deg=args.inlier_thresh,
                                       rng_seed=args.seed or 0)
        else:
            def fit(matches):
                return essential_rotation(matches, iters=args.ransac_iters,
                                          inlier_thresh_deg=args.inlier_thresh,
                                          rng_seed=args.seed or 0)
        report = evaluate_matching_baseline(manifest, fit, detector=args.detector)
    path = out / f"baseline_{args.mode}.json"
    path.write_text(json.dumps(report.to_json(), indent=2))
    write_pairs_csv(report, manifest, out / f"baseline_{args.mode}_pairs.csv")
    _record_outputs(out, f"baseline.{args.mode}", [path, out / f"baseline_{args.mode}_pairs.csv"])
    _print_report(report)
    return 0


def cmd_occlude(args) -> int:
    import csv

    from .evaluation import occlusion_heatmap
    from .figures import plot_occlusion_map
    from .model import predictor_from_checkpoint, prepare_image
    from .sampling import load_image, read_manifest

    manifest = read_manifest(Path(args.manifest))
    predictor = predictor_from_checkpoint(Path(args.checkpoint))
    sample = manifest.records[args.pair_index]
    size = predictor.model.cfg.input_size

    def resized(ref):
        img = load_image(manifest.root / ref)
        if img.shape[0] == size:
            return img
        from PIL import Image as PILImage

        return np.asarray(PILImage.fromarray(img).resize((size, size), PILImage.BILINEAR))

    img1, img2 = resized(sample.crop1_ref), resized(sample.crop2_ref)
    occ = occlusion_heatmap(predictor, sample, img1, img2,
                            window=args.window, stride=args.stride)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for k, grid in enumerate(occ.grids):
        path = out / f"occlusion_pair{args.pair_index}_img{k + 1}.csv"
        with path.open("w", newline="") as f:
            csv.writer(f).writerows(grid.tolist())
        paths.append(path)
    fig_path = out / f"occlusion_pair{args.pair_index}.png"
    plot_occlusion_map(occ, fig_path)
    paths.append(fig_path)
    _record_outputs(out, "occlude", paths)
    print(f"occlusion grids {occ.grids[0].shape} written; baseline error "
          f"{occ.baseline_error_deg:.2f} deg")
    return 0


def cmd_plot(args) -> int:
    import csv

    from .evaluation import export_stats
    from .figures import plot_error_cdf, plot_error_histogram, plot_loss_curve

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    if args.pairs:
        errors = []
        rows = []
        with open(args.pairs, newline="") as f:
            for row in csv.DictReader(f):
                rows.append(row)
                if row.get("success", "1") in ("1", "", "True"):
                    errors.append(float(row["error_deg"]))
        export_stats(errors, out / "hist.csv", out / "cdf.csv")
        plot_error_histogram(errors, out / "hist.png")
        plot_error_cdf(errors, out / "cdf.png")
        paths += [out / "hist.csv", out / "cdf.csv", out / "hist.png", out / "cdf.png"]
        if args.manifest and args.overlays > 0:
            paths += _render_overlays(args, rows, out)
    if args.trainlog:
        iters, losses = [], []
        with open(args.trainlog, newline="") as f:
            for row in csv.DictReader(f):
                iters.append(int(row["iter"]))
                losses.append(float(row["loss"]))
        plot_loss_curve(iters, losses, out / "loss.png")
        paths.append(out / "loss.png")
    if not paths:
        raise SystemExit("nothing to plot: pass --pairs and/or --trainlog")
    _record_outputs(out, "plot", paths)
    return 0


def _render_overlays(args, rows, out: Path) -> list[Path]:
    import dataclasses as dc

    from .figures import plot_pano_overlay
    from .sampling import load_panorama, read_manifest, read_pano_index

    manifest = read_manifest(Path(args.manifest))
    index = read_pano_index(manifest.root)
    paths = []
    for row in rows[:args.overlays]:
        i = int(row["index"])
        sample = manifest.records[i]
        if not row.get("pred_delta_gamma"):
            continue
        pano = load_panorama(manifest.root, sample.pano2_id, index)
        gt_cam = sample.cam2
        pred_cam = dc.replace(
            sample.cam1,
            pitch=float(row["pred_beta2"]),
            yaw=sample.cam1.yaw + float(row["pred_delta_gamma"]))
        path = out / f"overlay_{i:04d}.png"
        plot_pano_overlay(pano, [gt_cam], [pred_cam], path)
        paths.append(path)
    return paths


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rotvol",
                                     description="Relative rotation estimation pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    ds = sub.add_parser("dataset", help="synthesize panoramas, render crops, build pairs")
    ds_sub = ds.add_subparsers(dest="dataset_command", required=True)

    p = ds_sub.add_parser("synth", help="generate synthetic panoramas")
    p.add_argument("--n", type=int, default=5)
    p.add_argument("--style", choices=("room", "street"), default="room")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--width", type=int, default=1024)
    p.add_argument("--shared-world", action="store_true",
                   help="render every panorama from the same scene (for translated pairs)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_dataset_synth)

    p = ds_sub.add_parser("crops", help="render perspective views")
    p.add_argument("--out", required=True, help="dataset directory (from synth)")
    p.add_argument("--views-per-pano", type=int, default=100)
    p.add_argument("--pitch", choices=("indoor", "outdoor"), default="indoor")
    p.add_argument("--fov", type=float, default=90.0)
    p.add_argument("--size", type=int, default=256)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_dataset_crops)

    p = ds_sub.add_parser("pairs", help="build pair manifests")
    p.add_argument("--out", required=True, help="dataset directory (from crops)")
    p.add_argument("--mode", choices=("same", "translated"), default="same")
    p.add_argument("--quota", type=int, default=1000)
    p.add_argument("--max-dist", type=float, default=3.0)
    p.add_argument("--test-fraction", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_dataset_pairs)

    p = ds_sub.add_parser("lint", help="check manifests for protocol conformance")
    p.add_argument("--out", required=True, help="dataset directory")
    p.set_defaults(func=cmd_dataset_lint)

    p = sub.add_parser("train", help="train the rotation classifier")
    p.add_argument("--config", type=Path, default=None)
    p.add_argument("--preset", choices=("desk", "paper"), default=None)
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--manifest", default=None)
    p.add_argument("--resume", type=Path, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint over a manifest")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--top2", action="store_true")
    p.add_argument("--probe", choices=("identity", "roll"), default=None)
    p.add_argument("--max-roll", type=float, default=5.0)
    p.add_argument("--probe-images", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("baseline", help="classical and regression baselines")
    p.add_argument("--manifest", required=True)
    p.add_argument("--mode", choices=("twopoint", "essential", "reg6d"), default="twopoint")
    p.add_argument("--detector", choices=("builtin", "sift"), default="builtin")
    p.add_argument("--ransac-iters", type=int, default=1000)
    p.add_argument("--inlier-thresh", type=float, default=1.0)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("occlude", help="occlusion-sensitivity heatmaps for one pair")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--pair-index", type=int, default=0)
    p.add_argument("--window", type=int, default=32)
    p.add_argument("--stride", type=int, default=16)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_occlude)

    p = sub.add_parser("plot", help="histogram/CDF figures and panorama overlays")
    p.add_argument("--pairs", default=None, help="pairs.csv from eval/baseline")
    p.add_argument("--manifest", default=None)
    p.add_argument("--overlays", type=int, default=0)
    p.add_argument("--trainlog", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_plot)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    from .config import ConfigError

    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except SystemExit:
        raise
    except Exception as exc:  # runtime failures map to exit code 1
        log.error("%s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
