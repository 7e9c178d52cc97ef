"""Canonical patch manifest, holdout splits, and stratified k-fold plans.

All assignments are pure functions of (manifest, parameters, seed):
per-class shuffles run on the portable xoshiro stream and counts come
from largest-remainder rounding, so reruns are byte-identical. Only
rows whose verdict is Keep or ManualKeep are ever assigned.
"""

from __future__ import annotations

import csv
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .errors import (
    ClassSmallerThanK,
    DuplicatePatchId,
    EmptyClass,
    UnlabeledSource,
)
from .filtering import Verdict
from .rng import PortableRng

CLASS_ORDER = ("TSH", "BASH", "GMA", "SHC", "BBH")
CLASS_INDEX = {name: i for i, name in enumerate(CLASS_ORDER)}

SPLIT_NAMES = ("train", "validation", "test")
UNASSIGNED = "unassigned"

_PATCH_ID_RE = re.compile(r"^(?P<stem>.+)_r(?P<row>\d+)_c(?P<col>\d+)$")

MANIFEST_HEADER = ["patch_id", "source_image", "class", "verdict", "split", "fold"]


@dataclass
class ManifestRow:
    patch_id: str
    source_image: str
    class_name: str
    verdict: Verdict = Verdict.KEEP
    split: str = UNASSIGNED
    fold: int | None = None

    def __post_init__(self):
        if self.class_name not in CLASS_INDEX:
            raise UnlabeledSource(
                f"unknown class {self.class_name!r} for {self.patch_id}"
            )
        if self.split not in SPLIT_NAMES and self.split != UNASSIGNED:
            raise ValueError(f"bad split {self.split!r}")


class Manifest:
    """Ordered collection of rows, unique and sorted by patch_id."""

    def __init__(self, rows: Iterable[ManifestRow] = ()):
        self._rows: dict[str, ManifestRow] = {}
        for row in rows:
            self.add(row)

    def add(self, row: ManifestRow) -> None:
        if row.patch_id in self._rows:
            raise DuplicatePatchId(f"duplicate patch id {row.patch_id}")
        self._rows[row.patch_id] = row

    def get(self, patch_id: str) -> ManifestRow:
        return self._rows[patch_id]

    def __contains__(self, patch_id: str) -> bool:
        return patch_id in self._rows

    def __len__(self) -> int:
        return len(self._rows)

    def rows(self) -> list[ManifestRow]:
        return [self._rows[k] for k in sorted(self._rows)]

    def eligible_ids(self) -> list[str]:
        return [r.patch_id for r in self.rows() if r.verdict.is_eligible]

    def eligible_by_class(self) -> dict[str, list[str]]:
        by_class: dict[str, list[str]] = {}
        for r in self.rows():
            if r.verdict.is_eligible:
                by_class.setdefault(r.class_name, []).append(r.patch_id)
        return by_class

    def class_of(self, patch_id: str) -> str:
        return self._rows[patch_id].class_name

    def source_of(self, patch_id: str) -> str:
        return self._rows[patch_id].source_image

    def to_csv_text(self) -> str:
        import io

        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(MANIFEST_HEADER)
        for r in self.rows():
            w.writerow([
                r.patch_id, r.source_image, r.class_name, r.verdict.value,
                r.split, "" if r.fold is None else r.fold,
            ])
        return buf.getvalue()

    def save(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            fh.write(self.to_csv_text())

    @classmethod
    def load(cls, path) -> "Manifest":
        m = cls()
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            for rec in reader:
                m.add(ManifestRow(
                    patch_id=rec["patch_id"],
                    source_image=rec["source_image"],
                    class_name=rec["class"],
                    verdict=Verdict(rec["verdict"]),
                    split=rec["split"] or UNASSIGNED,
                    fold=int(rec["fold"]) if rec.get("fold") else None,
                ))
        return m


def read_labels_csv(path) -> dict[str, str]:
    """Read a `source,class` CSV into an ordered mapping."""
    labels: dict[str, str] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for rec in csv.DictReader(fh):
            labels[rec["source"]] = rec["class"]
    return labels


def count_labels(labels: Mapping[str, str]) -> dict[str, int]:
    """Per-class raw image counts plus a grand total under 'total'."""
    counts = {name: 0 for name in CLASS_ORDER}
    for cls in labels.values():
        counts[cls] = counts.get(cls, 0) + 1
    counts["total"] = len(labels)
    return counts


def build_manifest(patch_dir, labels: Mapping[str, str], filter_report=None) -> Manifest:
    """One row per patch PNG in patch_dir, labelled via its source stem.

    Verdicts are taken from an existing filter report CSV when given,
    otherwise initialized to Keep.
    """
    by_stem = {Path(name).stem: (name, cls) for name, cls in labels.items()}
    verdicts: dict[str, Verdict] = {}
    if filter_report is not None and Path(filter_report).is_file():
        with open(filter_report, newline="", encoding="utf-8") as fh:
            for rec in csv.DictReader(fh):
                verdicts[rec["patch_id"]] = Verdict(rec["verdict"])

    manifest = Manifest()
    for path in sorted(Path(patch_dir).glob("*.png")):
        pid = path.stem
        match = _PATCH_ID_RE.match(pid)
        if not match:
            continue  # not one of ours
        stem = match.group("stem")
        if stem not in by_stem:
            raise UnlabeledSource(f"no class label for source {stem!r} ({path.name})")
        source, cls = by_stem[stem]
        manifest.add(ManifestRow(
            patch_id=pid,
            source_image=source,
            class_name=cls,
            verdict=verdicts.get(pid, Verdict.KEEP),
        ))
    return manifest


def largest_remainder(total: int, weights: Sequence[float]) -> list[int]:
    """Integer allocation of `total` proportional to weights.

    Floors the exact quotas, then hands leftover units to the largest
    fractional remainders; remainder ties go to the earlier position.
    """
    wsum = float(sum(weights))
    if wsum <= 0:
        raise ValueError("weights must sum to a positive value")
    quotas = [total * w / wsum for w in weights]
    counts = [math.floor(q) for q in quotas]
    leftover = total - sum(counts)
    order = sorted(range(len(weights)), key=lambda i: (-(quotas[i] - counts[i]), i))
    for i in order[:leftover]:
        counts[i] += 1
    return counts


@dataclass
class SplitAssignment:
    """Patch ids per set, plus everything needed to verify the split."""

    sets: dict[str, tuple[str, ...]]
    classes: dict[str, str]
    universe: tuple[str, ...]
    seed: int

    def set_of(self) -> dict[str, str]:
        where = {}
        for name, ids in self.sets.items():
            for pid in ids:
                where[pid] = name
        return where

    def per_class_counts(self) -> dict[str, dict[str, int]]:
        out: dict[str, dict[str, int]] = {name: {} for name in self.sets}
        for name, ids in self.sets.items():
            for pid in ids:
                cls = self.classes[pid]
                out[name][cls] = out[name].get(cls, 0) + 1
        return out


@dataclass
class FoldPlan:
    """k rotations of (train, validation, test) over the same universe."""

    k: int
    folds: list[SplitAssignment]
    classes: dict[str, str]
    universe: tuple[str, ...]
    seed: int


@dataclass
class VerificationReport:
    violations: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


def _class_pools(
    manifest: Manifest, min_per_class: int, error, seed: int, purpose: str,
    per_class_cap: int | None,
) -> dict[str, list[str]]:
    pools = manifest.eligible_by_class()
    present = {r.class_name for r in manifest.rows()}
    for cls in sorted(present, key=lambda c: CLASS_INDEX[c]):
        n = len(pools.get(cls, ()))
        if n < min_per_class:
            raise error(f"class {cls} has {n} eligible rows, needs >= {min_per_class}")
    shuffled = {}
    for cls, ids in pools.items():
        rng = PortableRng.from_seed(seed, purpose, CLASS_INDEX[cls])
        ids = rng.shuffled(sorted(ids))
        if per_class_cap is not None:
            ids = ids[:per_class_cap]
        shuffled[cls] = ids
    return shuffled


def holdout_split(
    manifest: Manifest,
    ratios: tuple[float, float, float],
    seed: int,
    per_class_cap: int | None = None,
    group_by_source: bool = False,
) -> SplitAssignment:
    """Stratified train/validation/test assignment at the given ratios.

    Ratios are percentages summing to 100. Per class the eligible rows
    are shuffled with the seeded stream and allocated by largest
    remainder. With group_by_source, whole source images are assigned
    to the set with the largest remaining deficit (leakage-safe; the
    per-class proportions then hold only to source granularity).
    """
    if len(ratios) != 3:
        raise ValueError("ratios must have three parts (train, validation, test)")
    if any(r < 0 for r in ratios):
        raise ValueError("ratios must be non-negative")
    if abs(sum(ratios) - 100.0) > 1e-9:
        raise ValueError("ratios must sum to 100")
    nonzero_parts = sum(1 for r in ratios if r > 0)

    pools = _class_pools(manifest, nonzero_parts, EmptyClass, seed, "holdout",
                         per_class_cap)
    assigned: dict[str, list[str]] = {name: [] for name in SPLIT_NAMES}
    for cls in sorted(pools, key=lambda c: CLASS_INDEX[c]):
        ids = pools[cls]
        if group_by_source:
            _assign_groups(ids, manifest, ratios, assigned)
        else:
            counts = largest_remainder(len(ids), ratios)
            start = 0
            for name, count in zip(SPLIT_NAMES, counts):
                assigned[name].extend(ids[start : start + count])
                start += count

    universe = tuple(sorted(pid for ids in pools.values() for pid in ids))
    return SplitAssignment(
        sets={name: tuple(sorted(ids)) for name, ids in assigned.items()},
        classes={pid: manifest.class_of(pid) for pid in universe},
        universe=universe,
        seed=seed,
    )


def _assign_groups(ids, manifest, ratios, assigned) -> None:
    groups: dict[str, list[str]] = {}
    for pid in ids:  # ids already shuffled; group order follows first member
        groups.setdefault(manifest.source_of(pid), []).append(pid)
    targets = largest_remainder(len(ids), ratios)
    deficits = {name: t for name, t in zip(SPLIT_NAMES, targets)}
    for members in groups.values():
        name = max(SPLIT_NAMES, key=lambda n: (deficits[n], -SPLIT_NAMES.index(n)))
        assigned[name].extend(members)
        deficits[name] -= len(members)


def kfold_plan(
    manifest: Manifest,
    k: int,
    seed: int,
    validation_fraction: float = 0.15,
    per_class_cap: int | None = None,
) -> FoldPlan:
    """Stratified shuffled k-fold plan.

    Per class the eligible rows are shuffled once and dealt round-robin
    into k buckets. Fold i holds out bucket i as test and splits the
    rest (1 - validation_fraction)/validation_fraction into train and
    validation with a per-fold substream.
    """
    if k < 2:
        raise ValueError("k must be >= 2")
    if not 0.0 <= validation_fraction < 1.0:
        raise ValueError("validation_fraction must be in [0, 1)")

    pools = _class_pools(manifest, k, ClassSmallerThanK, seed, "kfold", per_class_cap)
    buckets: dict[str, list[list[str]]] = {
        cls: [ids[i::k] for i in range(k)] for cls, ids in pools.items()
    }
    universe = tuple(sorted(pid for ids in pools.values() for pid in ids))
    classes = {pid: manifest.class_of(pid) for pid in universe}

    folds = []
    for i in range(k):
        sets: dict[str, list[str]] = {name: [] for name in SPLIT_NAMES}
        for cls in sorted(pools, key=lambda c: CLASS_INDEX[c]):
            rest: list[str] = []
            for j in range(k):
                if j == i:
                    sets["test"].extend(buckets[cls][j])
                else:
                    rest.extend(buckets[cls][j])
            rng = PortableRng.from_seed(seed, "kfold-val", i, CLASS_INDEX[cls])
            rng.shuffle(rest)
            n_train, _ = largest_remainder(
                len(rest), (100.0 * (1 - validation_fraction), 100.0 * validation_fraction)
            )
            sets["train"].extend(rest[:n_train])
            sets["validation"].extend(rest[n_train:])
        folds.append(SplitAssignment(
            sets={name: tuple(sorted(ids)) for name, ids in sets.items()},
            classes=classes,
            universe=universe,
            seed=seed,
        ))
    return FoldPlan(k=k, folds=folds, classes=classes, universe=universe, seed=seed)


def _check_assignment(a: SplitAssignment, label: str, tolerance: float,
                      violations: list[str]) -> None:
    seen: dict[str, str] = {}
    for name, ids in a.sets.items():
        for pid in ids:
            if pid in seen:
                violations.append(f"{label}overlap: {pid}")
            else:
                seen[pid] = name
    for pid in a.universe:
        if pid not in seen:
            violations.append(f"{label}uncovered: {pid}")
    for pid in seen:
        if pid not in a.universe:
            violations.append(f"{label}unexpected: {pid}")

    total = len(a.universe)
    if total == 0:
        return
    class_totals: dict[str, int] = {}
    for pid in a.universe:
        cls = a.classes[pid]
        class_totals[cls] = class_totals.get(cls, 0) + 1
    for name, ids in a.sets.items():
        size = len(ids)
        if size == 0:
            continue
        counts: dict[str, int] = {}
        for pid in ids:
            counts[a.classes[pid]] = counts.get(a.classes[pid], 0) + 1
        for cls, n_cls in class_totals.items():
            frac_set = counts.get(cls, 0) / size
            frac_all = n_cls / total
            limit = tolerance * (1.0 / size + 1.0 / total)
            if abs(frac_set - frac_all) > limit + 1e-12:
                violations.append(
                    f"{label}proportion: {name}/{cls} off by "
                    f"{abs(frac_set - frac_all):.4f} > {limit:.4f}"
                )


def verify_split(assignment, tolerance: float = 1.0) -> VerificationReport:
    """Check disjointness, coverage, stratification, and the partition law.

    `tolerance` scales the +-1-row proportional bound (raise it for
    source-grouped splits). Violations are report content, never
    exceptions.
    """
    report = VerificationReport()
    if isinstance(assignment, SplitAssignment):
        _check_assignment(assignment, "", tolerance, report.violations)
        return report
    if isinstance(assignment, FoldPlan):
        plan = assignment
        seen_test: dict[str, int] = {}
        for i, fold in enumerate(plan.folds):
            _check_assignment(fold, f"fold{i} ", tolerance, report.violations)
            for pid in fold.sets.get("test", ()):
                if pid in seen_test:
                    report.violations.append(f"fold-test-overlap: {pid}")
                seen_test[pid] = i
        for pid in plan.universe:
            if pid not in seen_test:
                report.violations.append(f"fold-test-uncovered: {pid}")
        return report
    raise TypeError(f"cannot verify {type(assignment).__name__}")


def apply_split(manifest: Manifest, assignment: SplitAssignment) -> None:
    """Write the split column; rows outside the assignment go unassigned."""
    where = assignment.set_of()
    for row in manifest.rows():
        row.split = where.get(row.patch_id, UNASSIGNED)


def apply_fold_plan(manifest: Manifest, plan: FoldPlan) -> None:
    """Write each row's test-bucket index into the fold column."""
    bucket: dict[str, int] = {}
    for i, fold in enumerate(plan.folds):
        for pid in fold.sets["test"]:
            bucket[pid] = i
    for row in manifest.rows():
        row.fold = bucket.get(row.patch_id)


def save_assignment(assignment: SplitAssignment, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["patch_id", "split"])
        where = assignment.set_of()
        for pid in sorted(where):
            w.writerow([pid, where[pid]])


def load_assignment_sets(path) -> dict[str, list[str]]:
    sets: dict[str, list[str]] = {name: [] for name in SPLIT_NAMES}
    with open(path, newline="", encoding="utf-8") as fh:
        for rec in csv.DictReader(fh):
            sets[rec["split"]].append(rec["patch_id"])
    return sets


def save_fold_plan(plan: FoldPlan, out_dir) -> list[Path]:
    """One CSV per fold: patch_id,set."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, fold in enumerate(plan.folds):
        path = out_dir / f"fold_{i}.csv"
        save_assignment(fold, path)
        paths.append(path)
    return paths


def load_fold_plan_sets(plan_dir) -> list[dict[str, list[str]]]:
    plan_dir = Path(plan_dir)
    paths = sorted(plan_dir.glob("fold_*.csv"),
                   key=lambda p: int(p.stem.split("_")[1]))
    if not paths:
        raise FileNotFoundError(f"no fold_<i>.csv files in {plan_dir}")
    return [load_assignment_sets(p) for p in paths]
