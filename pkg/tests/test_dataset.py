import numpy as np
import pytest

from fungiforge import dataset as ds
from fungiforge.errors import (
    ClassSmallerThanK,
    DuplicatePatchId,
    EmptyClass,
    UnlabeledSource,
)
from fungiforge.filtering import Verdict
from fungiforge.imaging import save_png

from conftest import solid


def make_manifest(per_class, verdict=Verdict.KEEP, sources_per_class=None):
    """Synthetic manifest: per_class is an int or {class: count}."""
    if isinstance(per_class, int):
        per_class = {cls: per_class for cls in ds.CLASS_ORDER}
    manifest = ds.Manifest()
    for cls, count in per_class.items():
        n_sources = sources_per_class or max(count // 4, 1)
        for i in range(count):
            src = f"{cls.lower()}{i % n_sources:03d}"
            manifest.add(ds.ManifestRow(
                patch_id=f"{src}_r{i // n_sources}_c0",
                source_image=f"{src}.jpg",
                class_name=cls,
                verdict=verdict,
            ))
    return manifest


class TestManifest:
    def test_rows_sorted_and_unique(self):
        m = ds.Manifest()
        m.add(ds.ManifestRow("b_r0_c0", "b.jpg", "TSH"))
        m.add(ds.ManifestRow("a_r0_c0", "a.jpg", "BASH"))
        assert [r.patch_id for r in m.rows()] == ["a_r0_c0", "b_r0_c0"]
        with pytest.raises(DuplicatePatchId):
            m.add(ds.ManifestRow("a_r0_c0", "a.jpg", "BASH"))

    def test_unknown_class_rejected(self):
        with pytest.raises(UnlabeledSource):
            ds.ManifestRow("a_r0_c0", "a.jpg", "XYZ")

    def test_eligibility(self):
        m = ds.Manifest([
            ds.ManifestRow("a_r0_c0", "a.jpg", "TSH", Verdict.KEEP),
            ds.ManifestRow("b_r0_c0", "b.jpg", "TSH", Verdict.MANUAL_KEEP),
            ds.ManifestRow("c_r0_c0", "c.jpg", "TSH", Verdict.REJECT_DARK),
            ds.ManifestRow("d_r0_c0", "d.jpg", "TSH", Verdict.NEEDS_REVIEW),
            ds.ManifestRow("e_r0_c0", "e.jpg", "TSH", Verdict.MANUAL_REJECT),
        ])
        assert m.eligible_ids() == ["a_r0_c0", "b_r0_c0"]

    def test_csv_round_trip(self, tmp_path):
        m = make_manifest(7)
        m.rows()[0].verdict = Verdict.MANUAL_REJECT
        m.rows()[1].split = "train"
        m.rows()[2].fold = 3
        path = tmp_path / "manifest.csv"
        m.save(path)
        again = ds.Manifest.load(path)
        assert again.to_csv_text() == m.to_csv_text()
        again.save(tmp_path / "again.csv")
        assert (tmp_path / "again.csv").read_bytes() == path.read_bytes()


class TestBuildManifest:
    def test_empty_dir(self, tmp_path):
        assert len(ds.build_manifest(tmp_path, {})) == 0

    def test_three_patches_one_source(self, tmp_path):
        for c in range(3):
            save_png(solid(50), tmp_path / f"img001_r0_c{c}.png")
        manifest = ds.build_manifest(tmp_path, {"img001.jpg": "TSH"})
        assert len(manifest) == 3
        assert all(r.class_name == "TSH" for r in manifest.rows())
        assert all(r.source_image == "img001.jpg" for r in manifest.rows())

    def test_unlabeled_source(self, tmp_path):
        save_png(solid(50), tmp_path / "mystery_r0_c0.png")
        with pytest.raises(UnlabeledSource):
            ds.build_manifest(tmp_path, {"other.jpg": "TSH"})

    def test_filter_report_verdicts_applied(self, tmp_path):
        save_png(solid(50), tmp_path / "img001_r0_c0.png")
        save_png(solid(50), tmp_path / "img001_r0_c1.png")
        report = tmp_path / "report.csv"
        report.write_text(
            "patch_id,verdict,mean,p05,p95,michelson\n"
            "img001_r0_c0,RejectDark,0,0,0,0\n",
            encoding="utf-8",
        )
        manifest = ds.build_manifest(tmp_path, {"img001.jpg": "TSH"}, report)
        assert manifest.get("img001_r0_c0").verdict is Verdict.REJECT_DARK
        assert manifest.get("img001_r0_c1").verdict is Verdict.KEEP

    def test_raw_inventory_counts(self):
        # published raw distribution; totals are reported as given
        published = {"TSH": 227, "BASH": 117, "GMA": 36, "SHC": 144, "BBH": 75}
        labels = {}
        for cls, count in published.items():
            for i in range(count):
                labels[f"{cls.lower()}_{i:04d}.jpg"] = cls
        counts = ds.count_labels(labels)
        for cls, count in published.items():
            assert counts[cls] == count
        assert counts["total"] == 599


class TestLargestRemainder:
    def test_exact_split(self):
        assert ds.largest_remainder(100, (85, 15, 0)) == [85, 15, 0]

    def test_canonical_class_allocation(self):
        assert ds.largest_remainder(500, (76.5, 13.5, 10)) == [383, 67, 50]

    def test_sums_and_bounds(self, rng):
        for _ in range(200):
            total = int(rng.integers(0, 400))
            weights = rng.random(3) + 1e-3
            counts = ds.largest_remainder(total, weights)
            assert sum(counts) == total
            quotas = [total * w / weights.sum() for w in weights]
            assert all(abs(c - q) < 1.0 for c, q in zip(counts, quotas))


class TestHoldout:
    def test_single_class_85_15(self):
        manifest = make_manifest({"TSH": 100})
        split = ds.holdout_split(manifest, (85, 15, 0), seed=1)
        assert len(split.sets["train"]) == 85
        assert len(split.sets["validation"]) == 15
        assert len(split.sets["test"]) == 0

    def test_canonical_2500_test_exactly_250(self):
        manifest = make_manifest(500)
        split = ds.holdout_split(manifest, (76.5, 13.5, 10), seed=7)
        assert len(split.sets["test"]) == 250
        assert len(split.sets["train"]) + len(split.sets["validation"]) == 2250
        assert ds.verify_split(split).ok

    def test_deterministic(self):
        manifest = make_manifest(40)
        a = ds.holdout_split(manifest, (76.5, 13.5, 10), seed=99)
        b = ds.holdout_split(manifest, (76.5, 13.5, 10), seed=99)
        assert a.sets == b.sets
        c = ds.holdout_split(manifest, (76.5, 13.5, 10), seed=100)
        assert a.sets != c.sets

    def test_ratio_validation(self):
        manifest = make_manifest(10)
        with pytest.raises(ValueError, match="sum to 100"):
            ds.holdout_split(manifest, (80, 15, 4), seed=1)
        with pytest.raises(ValueError):
            ds.holdout_split(manifest, (110, -20, 10), seed=1)

    def test_empty_class(self):
        manifest = make_manifest({"TSH": 10, "BASH": 10})
        for row in manifest.rows():
            if row.class_name == "BASH":
                row.verdict = Verdict.REJECT_DARK
        with pytest.raises(EmptyClass):
            ds.holdout_split(manifest, (85, 15, 0), seed=1)

    def test_rejected_rows_never_assigned(self):
        manifest = make_manifest(20)
        rejected = [r.patch_id for r in manifest.rows()[:10]]
        for pid in rejected:
            manifest.get(pid).verdict = Verdict.MANUAL_REJECT
        split = ds.holdout_split(manifest, (85, 15, 0), seed=3)
        assigned = set(split.set_of())
        assert not assigned.intersection(rejected)

    def test_per_class_cap(self):
        manifest = make_manifest(30)
        split = ds.holdout_split(manifest, (80, 10, 10), seed=5, per_class_cap=10)
        assert len(split.universe) == 50
        assert ds.verify_split(split).ok

    def test_group_by_source_keeps_sources_together(self):
        manifest = make_manifest(40, sources_per_class=8)
        split = ds.holdout_split(manifest, (70, 20, 10), seed=11,
                                 group_by_source=True)
        where = split.set_of()
        by_source = {}
        for pid, name in where.items():
            src = manifest.source_of(pid)
            by_source.setdefault(src, set()).add(name)
        assert all(len(names) == 1 for names in by_source.values())


class TestKfold:
    def test_equal_buckets_when_divisible(self):
        manifest = make_manifest(50)
        plan = ds.kfold_plan(manifest, 10, seed=2)
        for fold in plan.folds:
            per_class = {}
            for pid in fold.sets["test"]:
                cls = plan.classes[pid]
                per_class[cls] = per_class.get(cls, 0) + 1
            assert all(v == 5 for v in per_class.values())

    def test_partition_law(self):
        manifest = make_manifest({"TSH": 23, "BASH": 31, "GMA": 17, "SHC": 40,
                                  "BBH": 12})
        plan = ds.kfold_plan(manifest, 10, seed=4)
        seen = []
        for fold in plan.folds:
            seen.extend(fold.sets["test"])
        assert sorted(seen) == list(plan.universe)
        assert ds.verify_split(plan).ok

    def test_canonical_2500_fold_sizes(self):
        manifest = make_manifest(500)
        plan = ds.kfold_plan(manifest, 10, seed=6)
        for fold in plan.folds:
            assert len(fold.sets["test"]) == 250
            # per-class largest remainder of 450 rows at 85/15 gives
            # 383/67, so 1915 train + 335 validation per fold
            assert len(fold.sets["train"]) == 1915
            assert len(fold.sets["validation"]) == 335
        assert ds.verify_split(plan).ok

    def test_deterministic(self):
        manifest = make_manifest(20)
        a = ds.kfold_plan(manifest, 10, seed=8)
        b = ds.kfold_plan(manifest, 10, seed=8)
        assert all(x.sets == y.sets for x, y in zip(a.folds, b.folds))

    def test_class_smaller_than_k(self):
        manifest = make_manifest({"TSH": 9, "BASH": 20})
        with pytest.raises(ClassSmallerThanK):
            ds.kfold_plan(manifest, 10, seed=1)


class TestVerify:
    def test_valid_assignment_passes(self):
        split = ds.holdout_split(make_manifest(40), (76.5, 13.5, 10), seed=1)
        assert ds.verify_split(split).ok

    def test_overlap_detected(self):
        split = ds.holdout_split(make_manifest(40), (85, 15, 0), seed=1)
        pid = split.sets["train"][0]
        split.sets["validation"] = split.sets["validation"] + (pid,)
        report = ds.verify_split(split)
        assert any(v == f"overlap: {pid}" for v in report.violations)

    def test_uncovered_detected(self):
        split = ds.holdout_split(make_manifest(40), (85, 15, 0), seed=1)
        pid = split.sets["train"][0]
        split.sets["train"] = tuple(p for p in split.sets["train"] if p != pid)
        report = ds.verify_split(split)
        assert any(v == f"uncovered: {pid}" for v in report.violations)

    def test_fold_partition_violation_detected(self):
        plan = ds.kfold_plan(make_manifest(20), 10, seed=1)
        missing = plan.folds[0].sets["test"][0]
        plan.folds[0].sets["test"] = tuple(
            p for p in plan.folds[0].sets["test"] if p != missing)
        report = ds.verify_split(plan)
        assert any("fold-test-uncovered" in v for v in report.violations)

    def test_stratification_violation_detected(self):
        split = ds.holdout_split(make_manifest(40), (85, 15, 0), seed=1)
        # move every validation row of one class into train
        val = list(split.sets["validation"])
        train = list(split.sets["train"])
        moved = [pid for pid in val if split.classes[pid] == "TSH"]
        split.sets["validation"] = tuple(p for p in val if p not in moved)
        split.sets["train"] = tuple(train + moved)
        report = ds.verify_split(split)
        assert any("proportion" in v for v in report.violations)


class TestApplyAndIO:
    def test_apply_split_and_save(self, tmp_path):
        manifest = make_manifest(20)
        split = ds.holdout_split(manifest, (76.5, 13.5, 10), seed=1)
        ds.apply_split(manifest, split)
        splits = {r.split for r in manifest.rows()}
        assert splits == {"train", "validation", "test"}
        path = tmp_path / "split.csv"
        ds.save_assignment(split, path)
        sets = ds.load_assignment_sets(path)
        assert sorted(sets["train"]) == list(split.sets["train"])

    def test_apply_fold_plan(self):
        manifest = make_manifest(20)
        plan = ds.kfold_plan(manifest, 10, seed=1)
        ds.apply_fold_plan(manifest, plan)
        folds = [r.fold for r in manifest.rows()]
        assert set(folds) == set(range(10))

    def test_fold_plan_io_round_trip(self, tmp_path):
        plan = ds.kfold_plan(make_manifest(20), 10, seed=1)
        ds.save_fold_plan(plan, tmp_path / "folds")
        loaded = ds.load_fold_plan_sets(tmp_path / "folds")
        assert len(loaded) == 10
        for fold, sets in zip(plan.folds, loaded):
            assert sorted(sets["test"]) == list(fold.sets["test"])
            assert sorted(sets["train"]) == list(fold.sets["train"])
