import json
import math
import stat
from pathlib import Path

import numpy as np
import pytest

import fungiforge.harness as harness
from fungiforge.augment import AugmentPolicy
from fungiforge.dataset import CLASS_ORDER, Manifest, ManifestRow
from fungiforge.errors import BackendFailed, DataUnavailable, MalformedResults
from fungiforge.harness import (
    ArrayPatchStore,
    DirectoryPatchStore,
    EvalResult,
    RunConfig,
    TrainRecord,
    early_stop,
    eval_batch_count,
    evaluate,
    external_backend_run,
    read_results_csv,
    train,
    write_results_csv,
)
from fungiforge.imaging import save_png
from fungiforge.nn import TRUNK_PARAMS, save_model_npz

from conftest import solid


def toy_store(n_per_class=8, side=8, seed=0):
    """Separable in-memory data: one constant colour per class."""
    rng = np.random.default_rng(seed)
    arrays, labels = {}, {}
    palette = np.array([
        [0.9, 0.1, 0.1], [0.1, 0.9, 0.1], [0.1, 0.1, 0.9],
        [0.8, 0.8, 0.1], [0.7, 0.1, 0.8],
    ])
    for ci, cls in enumerate(CLASS_ORDER):
        color = palette[ci]
        for i in range(n_per_class):
            pid = f"{cls.lower()}{i:03d}_r0_c0"
            base = np.tile(color, (side, side, 1))
            arrays[pid] = (base + rng.normal(0, 0.02, base.shape)).clip(0, 1).astype(np.float32)
            labels[pid] = cls
    return ArrayPatchStore(arrays, labels), sorted(arrays)


def toy_config(**overrides):
    defaults = dict(mode="scratch", epochs=2, steps_per_epoch=3, train_batch=4,
                    validation_batch=4, validation_steps=2, test_batch=5,
                    learning_rate=1e-3, seed=3, input_size=8,
                    augment=AugmentPolicy.identity())
    defaults.update(overrides)
    return RunConfig(**defaults)


def toy_sets(ids):
    per_class = {}
    for pid in ids:
        per_class.setdefault(pid[:3], []).append(pid)
    train_ids, val_ids, test_ids = [], [], []
    for members in per_class.values():
        train_ids.extend(members[:5])
        val_ids.extend(members[5:7])
        test_ids.extend(members[7:])
    return {"train": train_ids, "validation": val_ids, "test": test_ids}


class TestEarlyStop:
    def test_still_improving(self):
        assert early_stop([1.0, 0.9, 0.8]) is False

    def test_triggers_after_patience_non_improving(self):
        history = [0.5] + [0.5, 0.6, 0.7, 0.55, 0.9, 0.5, 0.6, 0.8]
        assert early_stop(history) is True
        assert early_stop(history[:-1]) is False

    def test_improvement_resets_counter(self):
        history = [0.5] + [0.6] * 7 + [0.4]
        assert early_stop(history) is False

    def test_strict_improvement_required(self):
        assert early_stop([0.5] + [0.5] * 8) is True

    def test_custom_patience(self):
        assert early_stop([1.0, 2.0, 3.0], patience=2) is True


class TestRunConfig:
    def test_protocol_defaults(self):
        kf = RunConfig.kfold_defaults("transfer")
        assert (kf.train_batch, kf.validation_batch, kf.validation_steps) == (24, 56, 6)
        assert kf.epochs == 100
        ho = RunConfig.holdout_defaults("scratch")
        assert (ho.train_batch, ho.validation_batch, ho.validation_steps) == (26, 70, 5)
        assert ho.epochs == 200
        assert ho.test_batch == 45
        assert ho.learning_rate == 1e-5
        assert ho.early_stop_patience == 8
        assert ho.steps_per_epoch == 80

    def test_json_round_trip(self, tmp_path):
        config = toy_config(trunk_weights="weights.npz")
        path = tmp_path / "config.json"
        config.save(path)
        assert RunConfig.load(path) == config

    def test_validation(self):
        with pytest.raises(ValueError):
            RunConfig(mode="other")
        with pytest.raises(ValueError):
            RunConfig(learning_rate=0.0)
        with pytest.raises(ValueError):
            RunConfig(epochs=0)


class TestTraining:
    def test_single_epoch_completes(self):
        store, ids = toy_store()
        model, record = train(toy_config(epochs=1), toy_sets(ids), store)
        assert len(record.epochs) == 1
        assert record.stop_reason == "completed"
        assert record.stop_epoch == 1

    def test_sample_arithmetic(self):
        store, ids = toy_store()
        config = toy_config(epochs=1, steps_per_epoch=80, train_batch=24)
        _, record = train(config, toy_sets(ids), store)
        assert record.train_samples == 1920

    def test_reproducible_records(self):
        store, ids = toy_store()
        config = toy_config()
        _, a = train(config, toy_sets(ids), store)
        _, b = train(config, toy_sets(ids), store)
        assert a == b

    def test_seed_changes_trajectory(self):
        store, ids = toy_store()
        _, a = train(toy_config(seed=1), toy_sets(ids), store)
        _, b = train(toy_config(seed=2), toy_sets(ids), store)
        assert a != b

    def test_early_stop_on_worsening_validation(self, monkeypatch):
        store, ids = toy_store()
        losses = iter(1.0 + 0.1 * i for i in range(100))

        def scripted_validation(model, val_ids, store_, config):
            return next(losses), 0.2

        monkeypatch.setattr(harness, "_validation_pass", scripted_validation)
        config = toy_config(epochs=50)
        _, record = train(config, toy_sets(ids), store)
        assert record.stop_reason == "early_stop"
        # first epoch is the best; exactly 8 non-improving epochs follow
        assert len(record.epochs) == 9
        assert record.stop_epoch == 9

    def test_learning_progress_on_separable_toys(self):
        store, ids = toy_store()
        config = toy_config(epochs=12, learning_rate=3e-3, seed=5)
        model, record = train(config, toy_sets(ids), store)
        result = evaluate(model, toy_sets(ids)["test"], store, 5)
        assert result.accuracy >= 0.8

    def test_transfer_mode_freezes_trunk(self, tmp_path):
        store, ids = toy_store()
        sets = toy_sets(ids)
        scratch_config = toy_config(epochs=1)
        donor, _ = train(scratch_config, sets, store)
        ckpt = tmp_path / "trunk.npz"
        save_model_npz(ckpt, donor)

        config = toy_config(mode="transfer", epochs=1,
                            trunk_weights=str(ckpt))
        model = harness.build_model(config)
        for name in TRUNK_PARAMS:
            assert np.array_equal(model.params[name],
                                  donor.params[name].astype(np.float32))
        trained, _ = train(config, sets, store, model=model)
        for name in TRUNK_PARAMS:
            assert np.array_equal(trained.params[name],
                                  donor.params[name].astype(np.float32))
        assert not np.array_equal(trained.params["fc2_w"],
                                  harness.build_model(config).params["fc2_w"])

    def test_empty_sets_rejected(self):
        store, ids = toy_store()
        with pytest.raises(DataUnavailable):
            train(toy_config(), {"train": [], "validation": ids[:2]}, store)


class TestEvaluationPath:
    def test_eval_batches_never_augment(self, monkeypatch):
        store, ids = toy_store()
        sets = toy_sets(ids)

        def poisoned(*args, **kwargs):
            raise AssertionError("augmentation invoked on an evaluation batch")

        monkeypatch.setattr(harness, "augment_array", poisoned)
        model = harness.build_model(toy_config())
        evaluate(model, sets["test"], store, 4)  # must not raise
        with pytest.raises(AssertionError):
            harness.assemble_train_batch(store, sets["train"][:2],
                                         AugmentPolicy(), None)

    def test_every_sample_counted_once(self):
        class CountingStore(ArrayPatchStore):
            def __init__(self, *a):
                super().__init__(*a)
                self.loads = []

            def load(self, pid):
                self.loads.append(pid)
                return super().load(pid)

        rng = np.random.default_rng(0)
        arrays = {f"tsh{i:04d}_r0_c0": rng.random((8, 8, 3)).astype(np.float32)
                  for i in range(250)}
        labels = {pid: "TSH" for pid in arrays}
        store = CountingStore(arrays, labels)
        model = harness.build_model(toy_config())
        evaluate(model, list(arrays), store, 45)
        assert len(store.loads) == 250
        assert len(set(store.loads)) == 250
        assert eval_batch_count(250, 45) == 6

    def test_deterministic_evaluation(self):
        store, ids = toy_store()
        model = harness.build_model(toy_config())
        a = evaluate(model, ids, store, 7)
        b = evaluate(model, ids, store, 7)
        assert a == b

    def test_uniform_model_on_balanced_labels(self):
        store, ids = toy_store()
        model = harness.build_model(toy_config(seed=8))
        model.params["fc2_w"][:] = 0.0
        model.params["fc2_b"][:] = 0.0
        result = evaluate(model, ids, store, 16)
        assert abs(result.loss - math.log(5)) < 1e-6
        assert abs(result.accuracy - 0.2) < 1e-9  # argmax ties go to class 0


class TestDirectoryStore:
    def test_loads_resized_units(self, tmp_path):
        manifest = Manifest([ManifestRow("img_r0_c0", "img.png", "GMA")])
        save_png(solid(128, w=20, h=20), tmp_path / "img_r0_c0.png")
        store = DirectoryPatchStore(tmp_path, manifest, input_size=8)
        x = store.load("img_r0_c0")
        assert x.shape == (8, 8, 3)
        assert x.dtype == np.float32
        assert abs(float(x.mean()) - 128 / 255) < 1e-6
        assert store.label_index("img_r0_c0") == 2

    def test_missing_file(self, tmp_path):
        manifest = Manifest([ManifestRow("img_r0_c0", "img.png", "GMA")])
        store = DirectoryPatchStore(tmp_path, manifest, input_size=8)
        with pytest.raises(DataUnavailable):
            store.load("img_r0_c0")


def _manifest_for(ids):
    m = Manifest()
    for pid in ids:
        cls = {"tsh": "TSH", "bas": "BASH", "gma": "GMA", "shc": "SHC",
               "bbh": "BBH"}[pid[:3]]
        m.add(ManifestRow(pid, f"{pid.split('_')[0]}.png", cls))
    return m


def _stub_backend(tmp_path, body):
    script = tmp_path / "stub_backend.py"
    script.write_text(body, encoding="utf-8")
    return f"python3 {script}"


GOOD_STUB = """\
import sys
from pathlib import Path

job = Path(sys.argv[1])
rows = ["fold,loss,accuracy"]
for i in range(10):
    rows.append(f"{i + 1},0.5,0.85")
(job / "results.csv").write_text("\\n".join(rows) + "\\n")
"""


class TestExternalBackend:
    def _fold_sets(self, ids, k=10):
        sets = []
        chunk = max(len(ids) // k, 1)
        for i in range(k):
            test = ids[i * chunk : (i + 1) * chunk] or ids[:1]
            rest = [p for p in ids if p not in test]
            sets.append({"train": rest[: len(rest) // 2],
                         "validation": rest[len(rest) // 2 :],
                         "test": test})
        return sets

    def test_echo_backend_ingested_verbatim(self, tmp_path):
        _, ids = toy_store(n_per_class=4)
        manifest = _manifest_for(ids)
        results = external_backend_run(
            toy_config(), self._fold_sets(ids), manifest,
            _stub_backend(tmp_path, GOOD_STUB), tmp_path / "job")
        assert len(results) == 10
        assert all(res == EvalResult(loss=0.5, accuracy=0.85)
                   for _, res in results)
        # job directory layout
        assert (tmp_path / "job" / "config").is_file()
        assert json.loads((tmp_path / "job" / "config").read_text())["k"] == 10
        for i in range(10):
            for name in ("train", "validation", "test"):
                f = tmp_path / "job" / f"fold_{i}" / f"{name}.csv"
                assert f.is_file()
                assert f.read_text().startswith("patch_id,source_image,class")

    def test_out_of_range_accuracy_rejected(self, tmp_path):
        _, ids = toy_store(n_per_class=4)
        stub = GOOD_STUB.replace("0.85", "1.2")
        with pytest.raises(MalformedResults, match="accuracy"):
            external_backend_run(toy_config(), self._fold_sets(ids),
                                 _manifest_for(ids),
                                 _stub_backend(tmp_path, stub), tmp_path / "job")

    def test_missing_fold_row_rejected(self, tmp_path):
        _, ids = toy_store(n_per_class=4)
        stub = GOOD_STUB.replace("range(10)", "range(9)")
        with pytest.raises(MalformedResults, match="folds 1..10"):
            external_backend_run(toy_config(), self._fold_sets(ids),
                                 _manifest_for(ids),
                                 _stub_backend(tmp_path, stub), tmp_path / "job")

    def test_nonzero_exit_is_backend_failure(self, tmp_path):
        _, ids = toy_store(n_per_class=4)
        with pytest.raises(BackendFailed):
            external_backend_run(toy_config(), self._fold_sets(ids),
                                 _manifest_for(ids),
                                 _stub_backend(tmp_path, "raise SystemExit(3)"),
                                 tmp_path / "job")

    def test_results_csv_round_trip(self, tmp_path):
        rows = [(i + 1, EvalResult(loss=0.1 * i, accuracy=0.5 + 0.01 * i))
                for i in range(10)]
        path = tmp_path / "results.csv"
        write_results_csv(path, rows)
        again = read_results_csv(path, 10)
        for (fa, ra), (fb, rb) in zip(rows, again):
            assert fa == fb
            assert abs(ra.loss - rb.loss) < 1e-9
            assert abs(ra.accuracy - rb.accuracy) < 1e-9


class TestTrainRecordIO:
    def test_csv_round_trip(self, tmp_path):
        store, ids = toy_store()
        _, record = train(toy_config(epochs=2), toy_sets(ids), store)
        path = tmp_path / "record.csv"
        record.to_csv(path)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "epoch,train_loss,train_acc,val_loss,val_acc"
        assert len(lines) == 3
        loaded = TrainRecord.from_csv(path)
        assert len(loaded.epochs) == 2
        assert abs(loaded.epochs[0].val_loss - record.epochs[0].val_loss) < 1e-6
