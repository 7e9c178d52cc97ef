"""The forge command line: patch, filter, review, split, kfold, train,
kfold-run, report, synth.

Every subcommand is rerunnable: identical inputs and seed produce
byte-identical outputs. Exit codes: 0 success, 1 validation failure,
2 I/O or backend failure. Failures print one machine-parsable line to
stderr: "error: <Kind>: <message>".
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import dataset as ds
from .errors import ForgeError, IOBackendFailure, UnlabeledSource, ValidationFailure
from .filtering import FilterThresholds, calibrate_thresholds, filter_run
from .harness import (
    DirectoryPatchStore,
    RunConfig,
    TrainRecord,
    evaluate,
    external_backend_run,
    read_results_csv,
    run_kfold_native,
    train,
    write_results_csv,
)
from .imaging import load_image, save_png
from .nn import save_model_npz
from .patching import extract_patches, patch_id, plan_grid
from .reporting import FoldResult, export_curves, render_report
from .synthetic import generate_corpus

_IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")


def _seed_or_env(value) -> int:
    if value is not None:
        return value
    return int(os.environ.get("FORGE_SEED", "0"))


def cmd_patch(args) -> int:
    input_dir = Path(args.input)
    out_dir = Path(args.output)
    out_dir.mkdir(parents=True, exist_ok=True)
    labels = ds.read_labels_csv(args.labels)
    by_stem = {Path(k).stem for k in labels}

    sources = sorted(p for p in input_dir.iterdir()
                     if p.suffix.lower() in _IMAGE_SUFFIXES)
    for src in sources:
        if src.stem not in by_stem:
            raise UnlabeledSource(f"no class label for source {src.name!r}")

    written = 0
    for src in sources:
        img = load_image(src)
        plan = plan_grid(img.width, img.height, args.patch_size)
        for patch in extract_patches(img, plan):
            pid = patch_id(src.name, patch.row, patch.col)
            save_png(patch.image, out_dir / f"{pid}.png")
            written += 1
    manifest = ds.build_manifest(out_dir, labels)
    manifest.save(out_dir / "manifest.csv")
    print(f"wrote {written} patches from {len(sources)} images -> {out_dir}")
    return 0


def cmd_filter(args) -> int:
    manifest_path = Path(args.manifest)
    manifest = ds.Manifest.load(manifest_path)
    patch_dir = Path(args.patch_dir) if args.patch_dir else manifest_path.parent
    thresholds_path = Path(args.thresholds) if args.thresholds else (
        manifest_path.parent / "thresholds.json"
    )

    if args.calibrate:
        labeled = []
        labels = ds.read_labels_csv(args.calibrate)  # patch_id under "source"
        for pid, label in labels.items():
            img = load_image(patch_dir / f"{Path(pid).stem}.png")
            labeled.append((img, label.strip().lower() == "keep"))
        thresholds = calibrate_thresholds(labeled)
        thresholds_path.write_text(
            json.dumps(thresholds.to_dict(), indent=2) + "\n", encoding="utf-8")
        print(f"calibrated thresholds -> {thresholds_path}")
    elif thresholds_path.is_file():
        thresholds = FilterThresholds.from_dict(
            json.loads(thresholds_path.read_text(encoding="utf-8")))
    else:
        thresholds = FilterThresholds()

    report = filter_run(manifest, thresholds, patch_dir)
    report_path = Path(args.report) if args.report else (
        manifest_path.parent / "filter_report.csv")
    report.to_csv(report_path)
    manifest.save(manifest_path)
    counts = {k: v for k, v in report.counts.items() if v}
    print(f"filtered {len(report.entries)} patches: {counts}")
    return 0


def cmd_review(args) -> int:
    from .review import start_review_server

    manifest_path = Path(args.manifest)
    patch_dir = Path(args.patch_dir) if args.patch_dir else manifest_path.parent
    ui_dir = args.ui_dir
    if ui_dir is None:
        candidate = Path.cwd() / "frontend" / "dist"
        if candidate.is_dir():
            ui_dir = candidate
    server = start_review_server(manifest_path, patch_dir, port=args.port,
                                 ui_dir=ui_dir)
    print(f"review service listening on {server.base_url}", flush=True)
    try:
        while True:
            import time

            time.sleep(0.5)
    except KeyboardInterrupt:
        print("shutting down, persisting manifest")
    finally:
        server.close(clean=True)
    return 0


def _parse_ratios(text: str) -> tuple[float, float, float]:
    parts = [float(p) for p in text.split(",")]
    if len(parts) == 2:
        parts.append(0.0)
    if len(parts) != 3:
        raise ValueError("ratios must be 'train,validation[,test]'")
    return tuple(parts)  # type: ignore[return-value]


def _grouped_tolerance(manifest: ds.Manifest) -> float:
    sizes: dict[str, int] = {}
    for row in manifest.rows():
        if row.verdict.is_eligible:
            sizes[row.source_image] = sizes.get(row.source_image, 0) + 1
    return float(max(sizes.values(), default=1))


def cmd_split(args) -> int:
    manifest_path = Path(args.manifest)
    manifest = ds.Manifest.load(manifest_path)
    ratios = _parse_ratios(args.ratios)
    seed = _seed_or_env(args.seed)
    assignment = ds.holdout_split(
        manifest, ratios, seed,
        per_class_cap=args.per_class_cap,
        group_by_source=args.group_by_source,
    )
    tolerance = _grouped_tolerance(manifest) if args.group_by_source else 1.0
    report = ds.verify_split(assignment, tolerance=tolerance)
    if not report.ok:
        for violation in report.violations:
            print(violation, file=sys.stderr)
        raise ValidationFailure(f"{len(report.violations)} split violations")
    ds.apply_split(manifest, assignment)
    manifest.save(manifest_path)
    out = Path(args.output) if args.output else manifest_path.parent / "split.csv"
    ds.save_assignment(assignment, out)
    sizes = {name: len(ids) for name, ids in assignment.sets.items()}
    print(f"split {len(assignment.universe)} eligible rows {sizes} -> {out}")
    return 0


def cmd_kfold(args) -> int:
    manifest_path = Path(args.manifest)
    manifest = ds.Manifest.load(manifest_path)
    seed = _seed_or_env(args.seed)
    plan = ds.kfold_plan(
        manifest, args.k, seed,
        validation_fraction=args.validation_fraction,
        per_class_cap=args.per_class_cap,
    )
    report = ds.verify_split(plan)
    if not report.ok:
        for violation in report.violations:
            print(violation, file=sys.stderr)
        raise ValidationFailure(f"{len(report.violations)} fold-plan violations")
    ds.apply_fold_plan(manifest, plan)
    manifest.save(manifest_path)
    out_dir = Path(args.output) if args.output else manifest_path.parent / "folds"
    paths = ds.save_fold_plan(plan, out_dir)
    print(f"{args.k}-fold plan over {len(plan.universe)} rows -> {out_dir} "
          f"({len(paths)} files)")
    return 0


def cmd_train(args) -> int:
    config = RunConfig.load(args.config)
    split_path = Path(args.split)
    manifest_path = Path(args.manifest) if args.manifest else (
        split_path.parent / "manifest.csv")
    manifest = ds.Manifest.load(manifest_path)
    patch_dir = Path(args.patch_dir) if args.patch_dir else manifest_path.parent
    store = DirectoryPatchStore(patch_dir, manifest, config.input_size)
    sets = ds.load_assignment_sets(split_path)

    out_dir = Path(args.out) if args.out else split_path.parent / "run"
    out_dir.mkdir(parents=True, exist_ok=True)
    model, record = train(config, sets, store)
    record.to_csv(out_dir / "record.csv")
    export_curves(record, out_dir / "curves.csv")
    save_model_npz(out_dir / "model.npz", model)
    print(f"trained {record.stop_epoch} epochs ({record.stop_reason}) -> {out_dir}")
    if sets.get("test"):
        result = evaluate(model, sets["test"], store, config.test_batch)
        print(f"test loss {result.loss:.4f}, accuracy {result.accuracy * 100:.2f}%")
    return 0


def cmd_kfold_run(args) -> int:
    config = RunConfig.load(args.config)
    plan_dir = Path(args.plan)
    fold_sets = ds.load_fold_plan_sets(plan_dir)
    manifest_path = Path(args.manifest) if args.manifest else (
        plan_dir.parent / "manifest.csv")
    manifest = ds.Manifest.load(manifest_path)
    out_dir = Path(args.out) if args.out else plan_dir.parent / "kfold_run"
    out_dir.mkdir(parents=True, exist_ok=True)

    if args.backend:
        results = external_backend_run(config, fold_sets, manifest, args.backend,
                                       out_dir)
        write_results_csv(out_dir / "results.csv", results)
    else:
        patch_dir = Path(args.patch_dir) if args.patch_dir else manifest_path.parent
        store = DirectoryPatchStore(patch_dir, manifest, config.input_size)
        runs = run_kfold_native(config, fold_sets, store)
        for fold, _, record in runs:
            record.to_csv(out_dir / f"fold_{fold - 1}_record.csv")
        write_results_csv(out_dir / "results.csv",
                          [(fold, res) for fold, res, _ in runs])
    print(f"{len(fold_sets)} fold results -> {out_dir / 'results.csv'}")
    return 0


def cmd_report(args) -> int:
    results_dir = Path(args.results)
    out_dir = Path(args.out) if args.out else results_dir / "report"
    runs: dict[str, list[FoldResult]] = {}

    candidates = []
    if (results_dir / "results.csv").is_file():
        candidates.append((results_dir.name, results_dir / "results.csv"))
    for sub in sorted(results_dir.iterdir()):
        if sub.is_dir() and (sub / "results.csv").is_file():
            candidates.append((sub.name, sub / "results.csv"))
    for label, path in candidates:
        k = max(len(path.read_text(encoding="utf-8").strip().splitlines()) - 1, 1)
        rows = read_results_csv(path, k)
        runs[label] = [
            FoldResult(fold=fold, loss=res.loss, accuracy=res.accuracy * 100.0)
            for fold, res in rows
        ]

    written = render_report(runs, out_dir)
    for label, path in candidates:
        for record_path in sorted(path.parent.glob("*record.csv")):
            record = TrainRecord.from_csv(record_path)
            written.append(export_curves(
                record, out_dir / f"{label}_{record_path.stem}_curves.csv"))
    if args.published:
        from .benchmarks import published_markdown

        ref = out_dir / "published_reference.md"
        ref.write_text(published_markdown(), encoding="utf-8")
        written.append(ref)
    if not runs and not args.published:
        print("no results.csv found; nothing to report")
        return 0
    print(f"wrote {len(written)} report files -> {out_dir}")
    return 0


def cmd_synth(args) -> int:
    labels = generate_corpus(
        args.output, per_class=args.per_class, width=args.width,
        height=args.height, seed=_seed_or_env(args.seed),
    )
    print(f"wrote {len(labels)} synthetic images -> {args.output}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="forge",
        description="Curation and benchmarking pipeline for direct-examination "
                    "fungal microscopy images.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("patch", help="cut raw images into square patches")
    p.add_argument("--input", required=True)
    p.add_argument("--labels", required=True, help="CSV of source,class")
    p.add_argument("--output", required=True)
    p.add_argument("--patch-size", type=int, default=500)
    p.set_defaults(func=cmd_patch)

    p = sub.add_parser("filter", help="auto-reject dark and blank patches")
    p.add_argument("--manifest", required=True)
    p.add_argument("--patch-dir")
    p.add_argument("--thresholds", help="thresholds JSON (read, or written by "
                                        "--calibrate)")
    p.add_argument("--calibrate", help="CSV of patch_id,keep|reject labels")
    p.add_argument("--report")
    p.set_defaults(func=cmd_filter)

    p = sub.add_parser("review", help="serve the manual triage queue")
    p.add_argument("--manifest", required=True)
    p.add_argument("--patch-dir")
    p.add_argument("--port", type=int, default=8008)
    p.add_argument("--ui-dir")
    p.set_defaults(func=cmd_review)

    p = sub.add_parser("split", help="stratified holdout split")
    p.add_argument("--manifest", required=True)
    p.add_argument("--ratios", default="76.5,13.5,10")
    p.add_argument("--seed", type=int)
    p.add_argument("--per-class-cap", type=int)
    p.add_argument("--group-by-source", action="store_true")
    p.add_argument("--output")
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("kfold", help="stratified shuffled k-fold plan")
    p.add_argument("--manifest", required=True)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--seed", type=int)
    p.add_argument("--validation-fraction", type=float, default=0.15)
    p.add_argument("--per-class-cap", type=int)
    p.add_argument("--output")
    p.set_defaults(func=cmd_kfold)

    p = sub.add_parser("train", help="train the reference CNN on a split")
    p.add_argument("--config", required=True)
    p.add_argument("--split", required=True)
    p.add_argument("--manifest")
    p.add_argument("--patch-dir")
    p.add_argument("--out")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("kfold-run", help="train and test every fold")
    p.add_argument("--config", required=True)
    p.add_argument("--plan", required=True, help="directory of fold_<i>.csv files")
    p.add_argument("--backend", help="external command to delegate folds to")
    p.add_argument("--manifest")
    p.add_argument("--patch-dir")
    p.add_argument("--out")
    p.set_defaults(func=cmd_kfold_run)

    p = sub.add_parser("report", help="fold tables and curve CSVs")
    p.add_argument("--results", required=True)
    p.add_argument("--out")
    p.add_argument("--published", action="store_true",
                   help="also write the published reference tables")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("synth", help="generate the synthetic demo corpus")
    p.add_argument("--output", required=True)
    p.add_argument("--per-class", type=int, default=6)
    p.add_argument("--width", type=int, default=280)
    p.add_argument("--height", type=int, default=200)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_synth)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValidationFailure, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except (IOBackendFailure, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except ForgeError as exc:  # any remaining toolkit error is a validation issue
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
