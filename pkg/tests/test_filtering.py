import numpy as np
import pytest

from fungiforge.dataset import Manifest, ManifestRow
from fungiforge.errors import InsufficientLabels, MissingPatchFile
from fungiforge.filtering import (
    FilterThresholds,
    Verdict,
    calibrate_thresholds,
    classify_patch,
    filter_run,
    keep_f1,
    patch_stats,
)
from fungiforge.imaging import ImageBuffer, save_png

from conftest import checkerboard, solid


DEFAULTS = FilterThresholds()


class TestThresholds:
    def test_defaults_satisfy_invariants(self):
        t = DEFAULTS
        assert t.review_band < t.dark_mean
        assert t.blank_contrast < t.dark_p95

    @pytest.mark.parametrize("kwargs", [
        dict(dark_mean=1.2),
        dict(review_band=0.2, dark_mean=0.15),
        dict(blank_contrast=0.25, dark_p95=0.2),
        dict(dark_p95=-0.1),
    ])
    def test_invalid_rejected(self, kwargs):
        with pytest.raises(ValueError):
            FilterThresholds(**kwargs)

    def test_dict_round_trip(self):
        t = FilterThresholds(0.2, 0.3, 0.05, 0.03)
        assert FilterThresholds.from_dict(t.to_dict()) == t


class TestClassify:
    def test_all_black_rejected_dark(self):
        v = classify_patch(solid(0), DEFAULTS)
        assert v.verdict is Verdict.REJECT_DARK
        assert v.stats.mean == 0.0

    def test_uniform_bright_rejected_blank(self):
        v = classify_patch(solid(230), DEFAULTS)  # ~0.9 luminance
        assert v.verdict is Verdict.REJECT_BLANK
        assert v.stats.michelson == 0.0

    def test_high_contrast_checkerboard_kept(self):
        patch = checkerboard(26, 230)  # ~0.1 / ~0.9 luminance
        v = classify_patch(patch, DEFAULTS)
        assert v.verdict is Verdict.KEEP
        # brute-force stats confirm the margin
        s = patch_stats(patch)
        assert s.michelson > 0.7

    def test_borderline_contrast_needs_review(self):
        # two-tone 128/150: michelson ~= 0.079, inside [0.06, 0.10)
        patch = checkerboard(128, 150)
        s = patch_stats(patch)
        assert DEFAULTS.blank_contrast <= s.michelson
        assert s.michelson < DEFAULTS.blank_contrast + DEFAULTS.review_band
        assert classify_patch(patch, DEFAULTS).verdict is Verdict.NEEDS_REVIEW

    def test_dark_check_precedes_blank_check(self):
        # all-black is also zero-contrast; the dark verdict must win
        assert classify_patch(solid(0), DEFAULTS).verdict is Verdict.REJECT_DARK

    def test_darkening_never_flips_reject_dark_to_keep(self, rng):
        for _ in range(20):
            pixels = rng.integers(0, 70, (8, 8, 3), dtype=np.uint8)
            patch = ImageBuffer(pixels)
            if classify_patch(patch, DEFAULTS).verdict is not Verdict.REJECT_DARK:
                continue
            darker = ImageBuffer((pixels * 0.5).astype(np.uint8))
            assert classify_patch(darker, DEFAULTS).verdict is Verdict.REJECT_DARK

    def test_pure_function(self):
        patch = checkerboard(10, 200)
        assert classify_patch(patch, DEFAULTS) == classify_patch(patch, DEFAULTS)


def _manifest_with_patches(tmp_path, patches):
    manifest = Manifest()
    for i, (pid_stub, img) in enumerate(patches):
        pid = f"{pid_stub}_r0_c{i}"
        save_png(img, tmp_path / f"{pid}.png")
        manifest.add(ManifestRow(patch_id=pid, source_image=f"{pid_stub}.png",
                                 class_name="TSH"))
    return manifest


class TestFilterRun:
    def test_empty_manifest(self, tmp_path):
        report = filter_run(Manifest(), DEFAULTS, tmp_path)
        assert all(count == 0 for count in report.counts.values())

    def test_three_patch_composition(self, tmp_path):
        manifest = _manifest_with_patches(tmp_path, [
            ("black", solid(0)),
            ("blank", solid(230)),
            ("textured", checkerboard(26, 230)),
        ])
        report = filter_run(manifest, DEFAULTS, tmp_path)
        counts = report.counts
        assert counts["RejectDark"] == 1
        assert counts["RejectBlank"] == 1
        assert counts["Keep"] == 1

    def test_rerun_is_byte_identical(self, tmp_path):
        manifest = _manifest_with_patches(tmp_path, [
            ("black", solid(0)), ("textured", checkerboard(26, 230)),
        ])
        filter_run(manifest, DEFAULTS, tmp_path).to_csv(tmp_path / "a.csv")
        filter_run(manifest, DEFAULTS, tmp_path).to_csv(tmp_path / "b.csv")
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()

    def test_manual_verdicts_sticky(self, tmp_path):
        manifest = _manifest_with_patches(tmp_path, [
            ("black", solid(0)), ("textured", checkerboard(26, 230)),
        ])
        row = manifest.rows()[0]
        row.verdict = Verdict.MANUAL_KEEP
        report = filter_run(manifest, DEFAULTS, tmp_path)
        assert manifest.get(row.patch_id).verdict is Verdict.MANUAL_KEEP
        assert report.counts["ManualKeep"] == 1

    def test_missing_patch_file(self, tmp_path):
        manifest = Manifest([ManifestRow("ghost_r0_c0", "ghost.png", "TSH")])
        with pytest.raises(MissingPatchFile):
            filter_run(manifest, DEFAULTS, tmp_path)


def _two_tone(lo, hi):
    return checkerboard(lo, hi)


def _brute_force_best_f1(labeled):
    """Independent exhaustive search over the same 0.01 grid."""
    stats = [patch_stats(p) for p, _ in labeled]
    mean = np.array([s.mean for s in stats])
    p95 = np.array([s.p95 for s in stats])
    mich = np.array([s.michelson for s in stats])
    human = np.array([keep for _, keep in labeled])
    grid = np.arange(101) / 100.0
    positives = human.sum()
    best = 0.0
    b_pass = p95[None, :] >= grid[:, None]
    s_pass = mich[None, :] >= grid[:, None]
    for a in grid:
        if a <= 0.04:  # review_band default < dark_mean must stay satisfiable
            continue
        a_pass = mean >= a
        pred = a_pass[None, None, :] & b_pass[:, None, :] & s_pass[None, :, :]
        tp = (pred & human[None, None, :]).sum(axis=2)
        pp = pred.sum(axis=2)
        f1 = np.where(pp + positives > 0, 2.0 * tp / (pp + positives), 0.0)
        best = max(best, float(f1.max()))
    return best


class TestCalibration:
    def _separable_set(self):
        labeled = []
        for _ in range(4):
            labeled.append((solid(0), False))       # black rejects
        for _ in range(4):
            labeled.append((solid(230), False))     # blank rejects
        for _ in range(6):
            labeled.append((checkerboard(13, 242), True))  # strong texture
        return labeled

    def test_separable_set_perfect_f1_at_defaults(self):
        labeled = self._separable_set()
        assert keep_f1(labeled, DEFAULTS) == 1.0
        calibrated = calibrate_thresholds(labeled)
        assert keep_f1(labeled, calibrated) == 1.0

    def test_insufficient_labels(self):
        labeled = [(checkerboard(13, 242), True) for _ in range(8)]
        labeled.append((solid(0), False))
        with pytest.raises(InsufficientLabels):
            calibrate_thresholds(labeled)

    def test_matches_brute_force_on_twenty_patches(self):
        # not perfectly separable: one low-contrast keep competes with
        # borderline blanks, so the search has a real tradeoff to make
        labeled = [
            (solid(0), False), (solid(10), False), (solid(25), False),
            (solid(35), False),
            (solid(230), False), (solid(200), False), (solid(180), False),
            (_two_tone(195, 205), False), (_two_tone(210, 220), False),
            (_two_tone(140, 150), False),
            (_two_tone(128, 150), True),   # low-contrast keep
            (_two_tone(26, 230), True), (_two_tone(51, 204), True),
            (_two_tone(77, 178), True), (_two_tone(102, 230), True),
            (_two_tone(13, 242), True), (_two_tone(64, 191), True),
            (_two_tone(38, 217), True), (_two_tone(90, 220), True),
            (_two_tone(45, 160), True),
        ]
        assert len(labeled) == 20
        calibrated = calibrate_thresholds(labeled)
        achieved = keep_f1(labeled, calibrated)
        assert achieved == _brute_force_best_f1(labeled)

    def test_returned_thresholds_are_valid(self):
        calibrated = calibrate_thresholds(self._separable_set())
        assert calibrated.review_band < calibrated.dark_mean
        assert calibrated.blank_contrast < calibrated.dark_p95
