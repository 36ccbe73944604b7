"""The ``omrkit`` command line: one entry point, deterministic output.

Exit codes: 0 success, 1 usage error, 2 I/O or format error, 3
validation or contract failure. Randomized subcommands require an
explicit ``--seed``; identical invocations on identical inputs produce
byte-identical artifacts. Reports go to stdout, machine-readable
artifacts to files.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import __version__
from .align import estimate_transform, transfer_annotations
from .augment import AugmentConfig, augment_dataset
from .detect import (
    CachedBoxTable,
    Detection,
    PostConfig,
    box_table_from_doc,
    box_table_to_doc,
    build_cached_boxes,
    detect as run_detect,
    read_maps,
    size_bias_report,
    write_maps,
)
from .errors import ContractError, MapFormatError, SchemaError, ValidationError
from .evaluate import evaluate_grouped
from .fileio import atomic_write_bytes, canonical_json_bytes
from .image import read_pgm, write_pgm
from .model import BBox, Dataset, Page, load_dataset, save_dataset
from .stats import class_histogram, coverage_topk, majority_dominates, select_rare
from .synth import DEFAULT_GLYPH_MIX, NoiseSpec, PageSpec, generate_dataset, render_maps


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _write_doc(path, doc):
    atomic_write_bytes(path, canonical_json_bytes(doc))


def _load_json(path):
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: not valid JSON ({exc})") from exc


def _detections_to_doc(page_id, detections):
    return {
        "page": page_id,
        "detections": [
            {
                "bbox": [float(f"{v:.3f}") for v in det.bbox.as_list()],
                "class": det.class_name,
                "score": float(f"{det.score:.6f}"),
            }
            for det in detections
        ],
    }


def _detections_from_doc(doc, where):
    if not isinstance(doc, dict) or "detections" not in doc:
        raise SchemaError(f"{where}: expected an object with a 'detections' field")
    page_id = doc.get("page")
    detections = []
    for index, raw in enumerate(doc["detections"]):
        try:
            bbox = BBox(*map(float, raw["bbox"]))
            detections.append(Detection(str(raw["class"]), bbox, float(raw["score"])))
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaError(f"{where}: bad detection entry {index}") from exc
    return page_id, detections


# ---------------------------------------------------------------- synth


def _cmd_synth(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    glyph_mix = dict(DEFAULT_GLYPH_MIX)
    if args.zipf is not None:
        names = sorted(glyph_mix)
        glyph_mix = {name: (rank + 1) ** -args.zipf for rank, name in enumerate(names)}
    spec = PageSpec(
        width=args.width,
        height=args.height,
        num_staves=args.staves,
        glyph_mix=glyph_mix,
        symbols_per_staff=args.symbols_per_staff,
        balanced=args.balanced,
        top_margin=args.top_margin,
    )
    dataset, images = generate_dataset(spec, args.pages, args.seed)
    pages = []
    for page in dataset.pages:
        image_name = f"{page.id}.pgm"
        write_pgm(images[page.id], out_dir / image_name)
        pages.append(Page(page.id, page.width, page.height, image_name, page.annotations))
        if args.emit_maps:
            noise = NoiseSpec(
                energy_noise_sigma=args.energy_noise,
                class_confusion=args.class_confusion,
                box_smoothing_radius=args.box_smoothing,
                seed=args.seed,
            )
            maps = render_maps(page, noise, dataset.class_registry)
            write_maps(maps, out_dir / f"{page.id}.dwm")
    save_dataset(Dataset(tuple(pages), dataset.class_registry), out_dir / "dataset.json")
    print(f"wrote {len(pages)} pages to {out_dir}")
    return 0


# ---------------------------------------------------------------- stats


def _cmd_stats(args) -> int:
    dataset = load_dataset(args.dataset)
    stats = class_histogram(dataset)
    print(f"pages: {len(dataset.pages)}  annotations: {stats.total}  classes: {len(stats.ranking)}")
    print(f"{'rank':>4} {'class':<24} {'count':>8} {'cum%':>8}")
    cumulative = 0
    for rank, name in enumerate(stats.ranking, start=1):
        cumulative += stats.counts[name]
        share = 100.0 * cumulative / stats.total if stats.total else 0.0
        print(f"{rank:>4} {name:<24} {stats.counts[name]:>8} {share:>8.3f}")
    if stats.total:
        print(f"top-{args.top} coverage: {coverage_topk(stats, args.top):.6f}")
        print(f"majority dominates: {'yes' if majority_dominates(stats) else 'no'}")
        rare = select_rare(stats, args.head_coverage)
        print(f"rare set (head coverage {args.head_coverage}): " + (", ".join(rare) or "<empty>"))
    return 0


# ---------------------------------------------------------------- augment


def _cmd_augment(args) -> int:
    dataset_path = Path(args.dataset)
    dataset = load_dataset(dataset_path)
    stats = class_histogram(dataset)
    rare = select_rare(stats, args.head_coverage, args.max_rare)
    if not rare:
        raise ValidationError("rare set is empty; nothing to augment")
    cfg = AugmentConfig(
        num_crops=args.num_crops,
        crop_w=args.crop_w,
        crop_h=args.crop_h,
        margin_rows=args.margin_rows,
        gap=args.gap,
        seed=args.seed,
    )
    outcome = augment_dataset(dataset, cfg, rare, base_dir=dataset_path.parent)
    for warning in outcome.warnings:
        print(f"warning: {warning}", file=sys.stderr)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    pages = []
    for page in outcome.dataset.pages:
        image_name = f"{page.id}.pgm"
        write_pgm(outcome.images[page.id], out_dir / image_name)
        pages.append(Page(page.id, page.width, page.height, image_name, page.annotations))
    save_dataset(
        Dataset(tuple(pages), outcome.dataset.class_registry), out_dir / "dataset.json"
    )
    print(
        f"augmented {len(pages)} pages with {args.num_crops} crops each; "
        f"rare classes: {len(rare)}"
    )
    return 0


# ---------------------------------------------------------------- cached


def _cmd_cached(args) -> int:
    dataset = load_dataset(args.dataset)
    table = build_cached_boxes(dataset)
    _write_doc(args.out, box_table_to_doc(table))
    print(f"cached boxes for {len(table.sizes)} classes -> {args.out}")
    if table.missing:
        print("classes without instances: " + ", ".join(table.missing), file=sys.stderr)
    return 0


# ---------------------------------------------------------------- detect


def _cmd_detect(args) -> int:
    if args.mode in ("cached", "hybrid") and args.cache is None:
        raise _UsageError(f"--mode {args.mode} requires --cache")
    maps = read_maps(args.maps)
    dataset = load_dataset(args.registry)
    table = None
    if args.cache is not None:
        table = box_table_from_doc(_load_json(args.cache))
    cfg = PostConfig(
        energy_threshold=args.tau,
        connectivity=args.connectivity,
        min_area=args.min_area,
        box_mode=args.mode,
        hybrid_tolerance=args.delta,
    )
    detections = run_detect(maps, cfg, dataset.class_registry, table)
    page_id = args.page if args.page is not None else Path(args.maps).stem
    _write_doc(args.out, _detections_to_doc(page_id, detections))
    print(f"{len(detections)} detections -> {args.out}")
    return 0


# ---------------------------------------------------------------- eval


def _pair_detections_with_pages(det_files, dataset):
    pages_by_id = {page.id: page for page in dataset.pages}
    groups = []
    for det_file in det_files:
        page_id, detections = _detections_from_doc(_load_json(det_file), det_file)
        if page_id is None:
            if len(dataset.pages) != 1:
                raise ValidationError(
                    f"{det_file} has no page id and the dataset has {len(dataset.pages)} pages"
                )
            page = dataset.pages[0]
        elif page_id in pages_by_id:
            page = pages_by_id[page_id]
        else:
            raise ValidationError(f"{det_file}: page {page_id!r} not in the dataset")
        groups.append((detections, page.annotations))
    return groups


def _cmd_eval(args) -> int:
    dataset = load_dataset(args.gt)
    groups = _pair_detections_with_pages(args.dets, dataset)
    result = evaluate_grouped(groups, args.iou)
    print(f"{'class':<24} {'AP':>8} {'gt':>6} {'det':>6} {'tp':>6} {'fp':>6}")
    for name in sorted(result.per_class):
        entry = result.per_class[name]
        print(
            f"{name:<24} {entry.ap:>8.4f} {entry.num_gt:>6} {entry.num_det:>6} "
            f"{entry.tp:>6} {entry.fp:>6}"
        )
    print(
        f"micro: gt={result.total_gt} det={result.total_det} "
        f"tp={result.total_tp} fp={result.total_fp}"
    )
    print(f"macro mAP @ IoU {result.iou_threshold}: {result.map_macro:.6f}")
    if args.out is not None:
        doc = {
            "iou_threshold": result.iou_threshold,
            "map_macro": result.map_macro,
            "per_class": {
                name: {
                    "ap": entry.ap,
                    "num_gt": entry.num_gt,
                    "num_det": entry.num_det,
                    "tp": entry.tp,
                    "fp": entry.fp,
                }
                for name, entry in result.per_class.items()
            },
        }
        _write_doc(args.out, doc)
    return 0


# ---------------------------------------------------------------- bias


def _cmd_bias(args) -> int:
    dataset = load_dataset(args.gt)
    groups = _pair_detections_with_pages(args.dets, dataset)
    detections = [det for dets, _ in groups for det in dets]
    ground_truths = [gt for _, gts in groups for gt in gts]
    report = size_bias_report(detections, ground_truths, args.bins, args.match_iou)
    print(f"{'bin':>4} {'n':>6} {'sqrt-area':>16} {'mean rel err':>14}")
    for index, (mean, count, (lo, hi)) in enumerate(
        zip(report.bin_means, report.bin_counts, report.bin_sqrt_area)
    ):
        print(f"{index:>4} {count:>6} {lo:>7.2f}..{hi:<7.2f} {mean:>+14.4f}")
    print(
        f"matched: {report.num_matched}  unmatched detections: {report.num_unmatched_dets}  "
        f"unmatched ground truths: {report.num_unmatched_gts}"
    )
    return 0


# ---------------------------------------------------------------- align


def _cmd_align(args) -> int:
    reference = read_pgm(args.reference)
    scanned = read_pgm(args.scan)
    dataset = load_dataset(args.annotations)
    pages = {page.id: page for page in dataset.pages}
    if args.page not in pages:
        raise ValidationError(f"page {args.page!r} not in {args.annotations}")
    transform, score = estimate_transform(
        reference, scanned, max_theta=args.max_theta, max_shift=args.max_shift
    )
    moved = transfer_annotations(pages[args.page], transform)
    new_pages = tuple(moved if page.id == args.page else page for page in dataset.pages)
    save_dataset(Dataset(new_pages, dataset.class_registry), args.out)
    print(f"theta={transform.theta:.4f} tx={transform.tx:.2f} ty={transform.ty:.2f} ncc={score:.6f}")
    return 0


# ---------------------------------------------------------------- parser


def build_parser() -> _Parser:
    parser = _Parser(prog="omrkit", description=__doc__)
    parser.add_argument("--version", action="version", version=f"omrkit {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("synth", help="generate synthetic pages with exact ground truth")
    p.add_argument("--out", required=True)
    p.add_argument("--pages", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--width", type=int, default=1000)
    p.add_argument("--height", type=int, default=1400)
    p.add_argument("--staves", type=int, default=5)
    p.add_argument("--symbols-per-staff", type=int, default=10)
    p.add_argument("--top-margin", type=int, default=200)
    p.add_argument("--balanced", action="store_true", help="force equal class counts")
    p.add_argument("--zipf", type=float, default=None, help="power-law class weights")
    p.add_argument("--emit-maps", action="store_true", help="also write oracle .dwm maps")
    p.add_argument("--energy-noise", type=float, default=0.0)
    p.add_argument("--class-confusion", type=float, default=0.0)
    p.add_argument("--box-smoothing", type=int, default=0)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("stats", help="class histogram, coverage, rare set")
    p.add_argument("dataset")
    p.add_argument("--top", type=int, default=10)
    p.add_argument("--head-coverage", type=float, default=0.85)
    p.set_defaults(func=_cmd_stats)

    p = sub.add_parser("augment", help="paste rare-symbol crops into top margins")
    p.add_argument("dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--num-crops", type=int, default=12)
    p.add_argument("--crop-w", type=int, default=130)
    p.add_argument("--crop-h", type=int, default=80)
    p.add_argument("--margin-rows", type=int, default=2)
    p.add_argument("--gap", type=int, default=4)
    p.add_argument("--head-coverage", type=float, default=0.85)
    p.add_argument("--max-rare", type=int, default=None)
    p.set_defaults(func=_cmd_augment)

    p = sub.add_parser("cached", help="build the per-class cached box table")
    p.add_argument("dataset")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_cached)

    p = sub.add_parser("detect", help="extract detections from a map bundle")
    p.add_argument("maps")
    p.add_argument("--registry", required=True, help="dataset file providing the class registry")
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=("regressed", "cached", "hybrid"), default="regressed")
    p.add_argument("--cache", default=None, help="cached box table (JSON)")
    p.add_argument("--tau", type=float, default=0.2)
    p.add_argument("--connectivity", type=int, choices=(4, 8), default=8)
    p.add_argument("--min-area", type=int, default=4)
    p.add_argument("--delta", type=float, default=0.5, help="hybrid relative tolerance")
    p.add_argument("--page", default=None, help="page id to record (default: maps file stem)")
    p.set_defaults(func=_cmd_detect)

    p = sub.add_parser("eval", help="score detections against ground truth")
    p.add_argument("--dets", action="append", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--iou", type=float, default=0.5)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("bias", help="size-binned box area bias diagnostic")
    p.add_argument("--dets", action="append", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--bins", type=int, default=4)
    p.add_argument("--match-iou", type=float, default=0.3)
    p.set_defaults(func=_cmd_bias)

    p = sub.add_parser("align", help="estimate the rigid transform of a scan")
    p.add_argument("--reference", required=True)
    p.add_argument("--scan", required=True)
    p.add_argument("--annotations", required=True)
    p.add_argument("--page", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--max-theta", type=float, default=10.0)
    p.add_argument("--max-shift", type=float, default=50.0)
    p.set_defaults(func=_cmd_align)

    return parser


def run(argv=None) -> int:
    """Dispatch a command line; returns the exit status."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"omrkit: error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    if getattr(args, "func", None) is None:
        parser.print_usage(sys.stderr)
        return 1
    try:
        return int(args.func(args) or 0)
    except _UsageError as exc:
        print(f"omrkit: error: {exc}", file=sys.stderr)
        return 1
    except (SchemaError, MapFormatError, OSError) as exc:
        print(f"omrkit: error: {exc}", file=sys.stderr)
        return 2
    except ContractError as exc:
        print(f"omrkit: error: {exc}", file=sys.stderr)
        return 3


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
