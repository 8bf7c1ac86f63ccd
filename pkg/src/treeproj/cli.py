"""Batch pipeline command surface.

Subcommands: preprocess, normals, render, register, match, split,
classify-baseline, evaluate, stats. Structured logs go to stderr, data to
files or stdout. Every command takes --dry-run (print the work plan,
write nothing) and is deterministic for a fixed config and seed; --jobs
never changes output bytes.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import zlib
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import evaluation, io, projection
from .config import ConfigError, PipelineConfig
from .normals import estimate_normals, orient_outward
from .preprocess import estimate_trunk, min_spacing_subsample, sor_filter
from .registration import (apply_transform, fit_rigid, mutual_nn_match,
                           read_positions_csv, write_match_csv)

log = logging.getLogger("treeproj")


def _entry_seed(base_seed: int, entry: io.ManifestEntry) -> int:
    # Stable per segment, independent of processing order (and thus of --jobs).
    name = f"{entry.scan_id}__{entry.tree_id}"
    seq = np.random.SeedSequence([base_seed, zlib.crc32(name.encode())])
    return int(seq.generate_state(1)[0])


def _merge_config(args) -> PipelineConfig:
    values = {}
    if getattr(args, "config", None):
        from .config import load_config_file
        values = load_config_file(args.config)
    overrides = {
        "seed": getattr(args, "seed", None),
        "sor_k": getattr(args, "sor_k", None),
        "sor_n": getattr(args, "sor_n", None),
        "spacing": getattr(args, "spacing", None),
        "normal_neighbors": getattr(args, "neighbors", None),
        "image_size": getattr(args, "size", None),
        "angles": getattr(args, "angles", None),
        "slice_offset": getattr(args, "slice_offset", None),
        "coloring": getattr(args, "coloring", None),
        "channels": getattr(args, "channels", None),
        "test_fraction": getattr(args, "test_fraction", None),
        "downsample": getattr(args, "downsample", None),
        "jobs": getattr(args, "jobs", None),
        "threshold": getattr(args, "threshold", None),
    }
    for key, value in overrides.items():
        if value is not None:
            values[key] = value
    if getattr(args, "no_smoothing", False):
        values["smoothing"] = False
    values.setdefault("seed", 0)
    return PipelineConfig.from_mapping(values)


def _parse_angles(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _parse_channels(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v.strip()]


def _load_manifest(args) -> io.DatasetManifest:
    if getattr(args, "manifest", None):
        return io.read_manifest(args.manifest)
    return io.scan_manifest(args.input)


# --- commands -----------------------------------------------------------------


def cmd_preprocess(args) -> int:
    cfg = _merge_config(args)
    manifest = io.scan_manifest(args.input)
    out_root = Path(args.output)
    plan = [(e, out_root / e.species / Path(e.path).name)
            for e in manifest.entries]
    if args.dry_run:
        for entry, out_path in plan:
            print(f"would preprocess {entry.path} -> {out_path}")
        print(f"plan: {len(plan)} segment(s)")
        return 0

    def work(item):
        entry, out_path = item
        try:
            segment = io.read_segment(entry.path)
            before = segment.cloud.n_points
            cloud = segment.cloud
            if not args.skip_subsample:
                cloud = min_spacing_subsample(cloud, cfg.spacing,
                                              _entry_seed(cfg.seed, entry))
            if not args.skip_sor:
                if cloud.n_points > cfg.sor.k_neighbors:
                    cloud = sor_filter(cloud, cfg.sor)
                else:
                    log.warning("%s: too few points for SOR, kept as-is",
                                entry.path)
            io.write_segment(segment.with_cloud(cloud), out_path)
            return entry, before, cloud.n_points, None
        except (io.SegmentIOError, ValueError, OSError) as exc:
            return entry, 0, 0, str(exc)

    results = _run_jobs(work, plan, cfg.jobs)
    failures = 0
    for entry, before, after, error in results:
        if error is not None:
            failures += 1
            log.error("%s: %s", entry.path, error)
        else:
            print(f"{entry.path},{before},{after}")
    log.info("preprocessed %d segment(s), %d failure(s)",
             len(results) - failures, failures)
    return 1 if failures else 0


def cmd_normals(args) -> int:
    cfg = _merge_config(args)
    manifest = io.scan_manifest(args.input)
    out_root = Path(args.output)
    plan = [(e, (out_root / e.species / Path(e.path).stem).with_suffix(".ply"))
            for e in manifest.entries]
    if args.dry_run:
        for entry, out_path in plan:
            print(f"would write normals {entry.path} -> {out_path}")
        print(f"plan: {len(plan)} segment(s)")
        return 0

    def work(item):
        entry, out_path = item
        try:
            segment = io.read_segment(entry.path)
            trunk = estimate_trunk(segment)
            segment = orient_outward(
                estimate_normals(segment, cfg.normal_params), trunk)
            io.write_segment(segment, out_path)
            return entry, segment.cloud.n_points, None
        except (io.SegmentIOError, ValueError, OSError) as exc:
            return entry, 0, str(exc)

    results = _run_jobs(work, plan, cfg.jobs)
    failures = 0
    for entry, n_points, error in results:
        if error is not None:
            failures += 1
            log.error("%s: %s", entry.path, error)
        else:
            print(f"{entry.path},{n_points}")
    return 1 if failures else 0


def cmd_render(args) -> int:
    cfg = _merge_config(args)
    manifest = _load_manifest(args)
    if args.dry_run:
        per_segment = 2 * len(cfg.render.angles_deg)
        for entry in manifest.entries:
            print(f"would render {entry.path} -> {per_segment} image(s) "
                  f"under {args.output}/{entry.split}/{entry.species}/")
        print(f"plan: {len(manifest)} segment(s), "
              f"{per_segment * len(manifest)} image(s)")
        return 0
    summary = projection.emit_dataset(
        manifest, cfg.render, args.output, jobs=cfg.jobs,
        normal_params=cfg.normal_params,
    )
    for path, reason in summary.skipped:
        log.warning("skipped %s: %s", path, reason)
    print(json.dumps({
        "segments_rendered": summary.segments_rendered,
        "segments_skipped": len(summary.skipped),
        "files_written": summary.files_written,
        "images_per_species": summary.images_per_species,
    }, indent=2, sort_keys=True))
    return 0


def cmd_register(args) -> int:
    anchors_local, anchors_global = _read_anchor_csv(args.anchors)
    if len(anchors_local) < 3:
        log.error("%s: need at least 3 anchor pairs, found %d",
                  args.anchors, len(anchors_local))
        return 1
    out_root = Path(args.output)
    manifest = io.scan_manifest(args.segments) if args.segments else None
    if args.dry_run:
        print(f"would fit transform from {len(anchors_local)} anchors "
              f"-> {out_root / 'transform.json'}")
        if manifest:
            for entry in manifest.entries:
                print(f"would transform {entry.path}")
        return 0
    try:
        transform, residual = fit_rigid(anchors_local, anchors_global)
    except ValueError as exc:
        log.error("%s", exc)
        return 1
    out_root.mkdir(parents=True, exist_ok=True)
    payload = transform.to_json_dict()
    payload["residual_rms_m"] = residual
    with open(out_root / "transform.json", "w") as handle:
        json.dump(payload, handle, indent=2)
        handle.write("\n")
    print(json.dumps(payload, indent=2))
    if manifest:
        failures = 0
        for entry in manifest.entries:
            try:
                segment = io.read_segment(entry.path)
                moved = apply_transform(segment, transform)
                io.write_segment(moved,
                                 out_root / entry.species / Path(entry.path).name)
            except (io.SegmentIOError, ValueError, OSError) as exc:
                failures += 1
                log.error("%s: %s", entry.path, exc)
        if failures:
            return 1
    return 0


def cmd_match(args) -> int:
    ids_a, pos_a = read_positions_csv(args.positions_a)
    ids_b, pos_b = read_positions_csv(args.positions_b)
    threshold = args.threshold if args.threshold is not None else 3.0
    if args.dry_run:
        print(f"would match {len(ids_a)} x {len(ids_b)} positions at "
              f"threshold {threshold} m -> {args.output}")
        return 0
    result = mutual_nn_match(pos_a, pos_b, threshold)
    write_match_csv(result, ids_a, ids_b, args.output)
    log.info("matched %d pair(s); %d unmatched A, %d unmatched B",
             len(result.pairs), len(result.unmatched_a), len(result.unmatched_b))
    print(f"pairs={len(result.pairs)} unmatched_a={len(result.unmatched_a)} "
          f"unmatched_b={len(result.unmatched_b)}")
    return 0


def cmd_split(args) -> int:
    cfg = _merge_config(args)
    manifest = io.scan_manifest(args.input)
    if args.dry_run:
        print(f"would split {len(manifest)} segment(s) at test fraction "
              f"{cfg.test_fraction} -> {args.output}")
        return 0
    tagged = evaluation.grouped_split(manifest, cfg.test_fraction, cfg.seed)
    io.write_manifest(tagged, args.output)
    counts = {"train": len(tagged.subset("train")),
              "test": len(tagged.subset("test"))}
    print(json.dumps(counts, sort_keys=True))
    return 0


def cmd_classify_baseline(args) -> int:
    cfg = _merge_config(args)
    root = Path(args.images)
    train_dir, test_dir = root / "train", root / "test"
    for needed in (train_dir, test_dir):
        if not needed.is_dir():
            log.error("%s: missing split directory", needed)
            return 1
    if args.dry_run:
        print(f"would classify images under {test_dir} against {train_dir} "
              f"-> {args.output}")
        return 0
    train = projection.load_image_dir(train_dir)
    test_pairs = projection.load_image_dir(test_dir)
    table = evaluation.baseline_classify(
        train, [img for img, _ in test_pairs], downsample=cfg.downsample)
    evaluation.write_probability_csv(table, args.output)
    if args.truth_out:
        rows = sorted({(img.meta.tree_id, img.meta.scan_id, species)
                       for img, species in test_pairs})
        evaluation.write_truth_csv(rows, args.truth_out)
    log.info("classified %d image(s) from %d training image(s)",
             len(table.records), len(train))
    print(f"records={len(table.records)}")
    return 0


def cmd_evaluate(args) -> int:
    if args.dry_run:
        print(f"would evaluate {args.probabilities} against {args.truth}")
        return 0
    table = evaluation.read_probability_csv(args.probabilities)
    truth = evaluation.read_truth_csv(args.truth)
    predictions = evaluation.aggregate_predictions(table)
    missing = [p for p in predictions if (p.tree_id, p.scan_id) not in truth]
    if missing:
        log.error("no truth label for %d predicted tree(s), first: %s/%s",
                  len(missing), missing[0].tree_id, missing[0].scan_id)
        return 1
    y_true = [truth[(p.tree_id, p.scan_id)] for p in predictions]
    y_pred = [p.species for p in predictions]
    try:
        report = evaluation.compute_metrics(y_true, y_pred, table.species)
    except ValueError as exc:
        log.error("%s", exc)
        return 1
    print(report.format_table())
    if args.output_json:
        evaluation.report_to_json(report, args.output_json)
    return 0


def cmd_stats(args) -> int:
    cfg = _merge_config(args)
    manifest = _load_manifest(args)
    sizes = args.sizes or [512, 1024]
    if args.dry_run:
        print(f"would compute stats for {len(manifest)} segment(s) at "
              f"sizes {sizes}")
        return 0
    handle = open(args.output, "w", newline="") if args.output else sys.stdout
    try:
        writer = csv.writer(handle)
        writer.writerow(["path", "tree_id", "scan_id", "angle", "kind", "size",
                         "empty_ratio", "pixel_size_m"])
        ratios = {size: [] for size in sizes}
        failures = 0
        for entry in manifest.entries:
            try:
                segment = io.read_segment(entry.path)
            except io.SegmentIOError as exc:
                failures += 1
                log.error("%s", exc)
                continue
            for size in sizes:
                render_cfg = projection.RenderConfig(
                    image_size=size, angles_deg=cfg.render.angles_deg,
                    slice_offset=cfg.render.slice_offset, coloring="wop")
                pixel = projection.pixel_ground_size(segment.cloud, render_cfg)
                for image in projection.render_tree(segment, render_cfg):
                    ratio = projection.empty_pixel_ratio(image)
                    ratios[size].append(ratio)
                    writer.writerow([
                        entry.path, entry.tree_id, entry.scan_id,
                        f"{image.meta.angle_deg:g}",
                        "slice" if image.meta.sliced else "full",
                        size, f"{ratio:.6f}", f"{pixel:.6f}",
                    ])
    finally:
        if handle is not sys.stdout:
            handle.close()
    for size in sizes:
        if ratios[size]:
            log.info("size %d: mean empty-pixel ratio %.4f over %d image(s)",
                     size, float(np.mean(ratios[size])), len(ratios[size]))
    return 1 if failures else 0


def _read_anchor_csv(path) -> tuple[np.ndarray, np.ndarray]:
    rows = []
    with open(path, "r", newline="") as handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header != ["xl", "yl", "zl", "xg", "yg", "zg"]:
            raise SystemExit(f"{path}: expected header xl,yl,zl,xg,yg,zg")
        for row in reader:
            rows.append([float(v) for v in row])
    data = np.asarray(rows, dtype=np.float64).reshape(len(rows), 6)
    return data[:, :3], data[:, 3:]


def _run_jobs(work, items, jobs: int):
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(work, items))
    return [work(item) for item in items]


# --- parser --------------------------------------------------------------------


def _add_common(parser, *, seed=True):
    parser.add_argument("--config", help="TOML-style key/value config file")
    parser.add_argument("--jobs", type=int, help="worker threads (default 1)")
    parser.add_argument("--dry-run", action="store_true",
                        help="print the work plan and write nothing")
    if seed:
        parser.add_argument("--seed", type=int,
                            help="random seed (default 0; runs are always "
                                 "deterministic for a fixed value)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="treeproj",
        description="Point-cloud projection-image pipeline",
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="subsample and denoise segments")
    p.add_argument("--input", required=True, help="segment root (species dirs)")
    p.add_argument("--output", required=True)
    p.add_argument("--sor-k", type=int, dest="sor_k")
    p.add_argument("--sor-n", type=float, dest="sor_n")
    p.add_argument("--spacing", type=float, help="minimum point spacing (m)")
    p.add_argument("--skip-sor", action="store_true")
    p.add_argument("--skip-subsample", action="store_true")
    _add_common(p)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("normals", help="estimate and orient normals, write PLY")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--neighbors", type=int, help="kNN plane-fit size (default 20)")
    _add_common(p)
    p.set_defaults(func=cmd_normals)

    p = sub.add_parser("render", help="emit the projection-image dataset")
    p.add_argument("--input", help="segment root (species dirs)")
    p.add_argument("--manifest", help="manifest CSV from `treeproj split`")
    p.add_argument("--output", required=True)
    p.add_argument("--size", type=int, help="image size in pixels")
    p.add_argument("--angles", type=_parse_angles,
                   help="comma-separated degrees, e.g. 0,72,144,216,288")
    p.add_argument("--coloring", choices=projection.COLORINGS)
    p.add_argument("--channels", type=_parse_channels,
                   help="OP intensity channels, e.g. 1,3")
    p.add_argument("--slice-offset", type=float, dest="slice_offset")
    p.add_argument("--no-smoothing", action="store_true", dest="no_smoothing")
    p.add_argument("--neighbors", type=int,
                   help="kNN size when NV normals must be estimated")
    _add_common(p)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("register", help="fit a rigid transform from anchors")
    p.add_argument("--anchors", required=True, help="CSV xl,yl,zl,xg,yg,zg")
    p.add_argument("--segments", help="segment root to transform")
    p.add_argument("--output", required=True)
    _add_common(p, seed=False)
    p.set_defaults(func=cmd_register)

    p = sub.add_parser("match", help="mutual nearest-neighbour tree matching")
    p.add_argument("--positions-a", required=True, help="CSV id,x,y[,z]")
    p.add_argument("--positions-b", required=True)
    p.add_argument("--threshold", type=float, help="max pair distance (m)")
    p.add_argument("--output", required=True)
    _add_common(p, seed=False)
    p.set_defaults(func=cmd_match)

    p = sub.add_parser("split", help="grouped train/test split")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True, help="manifest CSV path")
    p.add_argument("--test-fraction", type=float, dest="test_fraction")
    _add_common(p)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("classify-baseline",
                       help="nearest-centroid probabilities for a dataset")
    p.add_argument("--images", required=True,
                   help="dataset root containing train/ and test/")
    p.add_argument("--downsample", type=int)
    p.add_argument("--output", required=True, help="probability CSV path")
    p.add_argument("--truth-out", dest="truth_out",
                   help="also write tree_id,scan_id,species for the test split")
    _add_common(p)
    p.set_defaults(func=cmd_classify_baseline)

    p = sub.add_parser("evaluate", help="aggregate probabilities and score")
    p.add_argument("--probabilities", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--output-json", dest="output_json")
    _add_common(p, seed=False)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("stats", help="empty-pixel and pixel-size reports")
    p.add_argument("--input", help="segment root (species dirs)")
    p.add_argument("--manifest")
    p.add_argument("--sizes", type=lambda t: [int(v) for v in t.split(",")],
                   help="comma-separated image sizes (default 512,1024)")
    p.add_argument("--angles", type=_parse_angles)
    p.add_argument("--output", help="CSV path (default stdout)")
    _add_common(p)
    p.set_defaults(func=cmd_stats)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except ConfigError as exc:
        log.error("%s", exc)
        return 2
    except (io.SegmentIOError, FileNotFoundError, ValueError) as exc:
        log.error("%s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
