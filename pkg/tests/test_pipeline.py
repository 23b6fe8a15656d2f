import inspect
import json

import numpy as np
import pytest

from sumlearn import assignment as asg
from sumlearn import classifier as clf
from sumlearn import clustering as clu
from sumlearn import embedding as emb
from sumlearn import inference as inf
from sumlearn import pipeline as pl
from sumlearn.errors import ConsistencyError
from sumlearn.pipeline import SWEEP_COLUMNS, RunConfig, label_accuracy, run_pipeline, sweep

from conftest import store_with_labels


def tiny_config(tmp_path, **overrides):
    base = dict(
        w=2,
        h=2,
        seed=0,
        batch_size=50,
        backend="pca",
        classifier_epochs=6,
        synthetic=True,
        synthetic_images=480,
        synthetic_test_images=160,
        synthetic_clusters=10,
        synthetic_separation=80.0,
        synthetic_dim=196,
        artifacts_dir=str(tmp_path / "artifacts"),
        reports_dir=str(tmp_path / "reports"),
    )
    base.update(overrides)
    return RunConfig(**base)


def strip_timings(report):
    obj = report.to_json()
    obj["timings"] = None
    return json.dumps(obj, sort_keys=True)


class TestLabelAccuracy:
    def test_exact(self):
        store = store_with_labels([1, 2, 3])
        assert label_accuracy([1, 2, 3], store) == 1.0
        assert label_accuracy([1, 2, 9], store) == pytest.approx(2 / 3)

    def test_mismatch(self):
        store = store_with_labels([1, 2])
        with pytest.raises(ConsistencyError):
            label_accuracy([1, 2, 3], store)


class TestRunConfig:
    def test_warns_outside_envelope(self):
        cfg = RunConfig(w=11, h=2, synthetic=True)
        with pytest.warns(UserWarning, match="envelope"):
            cfg.validate()

    def test_accepts_paper_envelope_silently(self, recwarn):
        RunConfig(w=10, h=6, synthetic=True).validate()
        assert not [w for w in recwarn.list if issubclass(w.category, UserWarning)]

    def test_bad_batch_size(self):
        with pytest.raises(ValueError):
            RunConfig(batch_size=0, synthetic=True).validate()

    def test_requires_data_or_synthetic(self):
        with pytest.raises(ValueError):
            RunConfig().validate()

    def test_json_roundtrip(self):
        cfg = RunConfig(w=3, h=2, radius_schedule=(1, 3, 5), synthetic=True)
        again = RunConfig.from_json(cfg.to_json())
        assert again == cfg

    def test_embed_key_independent_of_grid_shape(self):
        a = RunConfig(w=1, h=2, synthetic=True)
        b = RunConfig(w=8, h=4, synthetic=True)
        assert a.embed_key() == b.embed_key()
        assert a.corpus_key() != b.corpus_key()


class TestRunPipeline:
    def test_synthetic_end_to_end_all_perfect(self, tmp_path):
        report = run_pipeline(tiny_config(tmp_path))
        assert report.failure is None
        m = report.metrics
        assert m["purity"] == 1.0
        assert m["label_acc_pre"] == 1.0
        assert m["label_acc_post"] == 1.0
        assert m["objective"] == 0
        assert m["satisfied"] == 120
        assert m["cls_acc"] == 1.0
        assert m["add_acc"] == 1.0
        assert (tmp_path / "reports" / "report.json").exists()
        for name in ("corpus.txt", "embedding.tf", "cluster.tf", "assignment.json",
                     "labels.bin", "labels.json", "cnn.tf"):
            assert (tmp_path / "artifacts" / name).exists()

    def test_total_time_is_sum_of_four_stages(self, tmp_path):
        report = run_pipeline(tiny_config(tmp_path))
        t = report.timings
        assert t["t_total"] == pytest.approx(
            t["t_cluster"] + t["t_assign"] + t["t_infer"] + t["t_train"]
        )
        assert "t_embed" in t  # reported separately, excluded from the total

    def test_reproducible_reports(self, tmp_path):
        import shutil

        cfg = tiny_config(tmp_path)
        a = run_pipeline(cfg)
        shutil.rmtree(cfg.artifacts_dir)  # force a full recompute, same config
        b = run_pipeline(cfg)
        assert strip_timings(a) == strip_timings(b)

    def test_resume_skips_completed_stages(self, tmp_path, monkeypatch):
        cfg = tiny_config(tmp_path)
        cold = run_pipeline(cfg)

        def boom(*args, **kwargs):
            raise AssertionError("stage should have been resumed from artifact")

        monkeypatch.setattr(emb, "pca_embed", boom)
        monkeypatch.setattr(clu, "kmeans", boom)
        monkeypatch.setattr(asg, "solve_corpus", boom)
        monkeypatch.setattr(inf, "run_inference", boom)
        monkeypatch.setattr(clf, "train_cnn", boom)
        warm = run_pipeline(cfg)
        assert warm.failure is None
        assert strip_timings(warm) == strip_timings(cold)

    def test_resume_refuses_mismatched_hash(self, tmp_path, monkeypatch):
        cfg = tiny_config(tmp_path)
        run_pipeline(cfg)
        # a different seed invalidates every stage hash: artifacts must be
        # recomputed, not loaded
        recomputed = {"n": 0}
        original = clu.kmeans

        def counting(*args, **kwargs):
            recomputed["n"] += 1
            return original(*args, **kwargs)

        monkeypatch.setattr(clu, "kmeans", counting)
        other = tiny_config(tmp_path, seed=1)
        run_pipeline(other)
        assert recomputed["n"] == 1

    def test_embedding_reused_across_grid_shapes(self, tmp_path, monkeypatch):
        calls = {"n": 0}
        original = emb.pca_embed

        def counting(*args, **kwargs):
            calls["n"] += 1
            return original(*args, **kwargs)

        monkeypatch.setattr(emb, "pca_embed", counting)
        run_pipeline(tiny_config(tmp_path, w=2, h=2))
        run_pipeline(tiny_config(tmp_path, w=1, h=2))
        assert calls["n"] == 1  # second run resumed the embedding artifact

    def test_failure_marker_and_partial_report(self, tmp_path):
        cfg = tiny_config(tmp_path, synthetic_dim=10)  # not a square image
        report = run_pipeline(cfg)
        assert report.failure is not None
        assert report.failure["stage"] == "train"
        assert "square" in report.failure["error"]
        assert report.metrics == {}  # evaluation never ran

    def test_missing_data_dir_fails_at_data_stage(self, tmp_path):
        cfg = RunConfig(
            data_dir=str(tmp_path / "nope"),
            artifacts_dir=str(tmp_path / "artifacts"),
            reports_dir=str(tmp_path / "reports"),
        )
        report = run_pipeline(cfg)
        assert report.failure["stage"] == "data"


class TestMnistFormatPath:
    """Exercise the IDX data path end to end with lookalike files."""

    @staticmethod
    def fake_mnist_dir(tmp_path, n_train=600, n_test=200):
        # ten distinguishable 28x28 patterns standing in for digits
        from conftest import write_idx_pair

        rng = np.random.default_rng(0)
        positions = [(r, c) for r in (2, 16) for c in (1, 6, 11, 16, 21)]

        def make(n, seed):
            g = np.random.default_rng(seed)
            labels = np.tile(np.arange(10), n // 10 + 1)[:n]
            labels = labels[g.permutation(n)]
            images = (g.random((n, 28, 28)) * 40).astype(np.uint8)
            for i, lab in enumerate(labels):
                r, c = positions[lab]
                images[i, r : r + 9, c : c + 6] = 220
            return images, labels.astype(np.uint8)

        data = tmp_path / "mnist"
        data.mkdir()
        for split, (n, seed) in {"train": (n_train, 1), "t10k": (n_test, 2)}.items():
            images, labels = make(n, seed)
            img, lbl = write_idx_pair(data, images, labels, gz=(split == "t10k"))
            img.rename(data / f"{split}-images-idx3-ubyte{'.gz' if split == 't10k' else ''}")
            lbl.rename(data / f"{split}-labels-idx1-ubyte{'.gz' if split == 't10k' else ''}")
        return data

    def test_idx_data_path_end_to_end(self, tmp_path):
        data = self.fake_mnist_dir(tmp_path)
        cfg = RunConfig(
            w=2,
            h=2,
            backend="pca",
            classifier_epochs=8,
            batch_size=50,
            data_dir=str(data),
            artifacts_dir=str(tmp_path / "artifacts"),
            reports_dir=str(tmp_path / "reports"),
        )
        report = run_pipeline(cfg)
        assert report.failure is None
        assert report.metrics["purity"] == 1.0  # patterns are separable
        assert report.metrics["cls_acc"] >= 0.99
        assert report.metrics["add_acc"] >= 0.99
        report_obj = json.loads((tmp_path / "reports" / "report.json").read_text())
        assert report_obj["metrics"]["purity"] == 1.0


class TestSweep:
    def test_csv_header_and_rows(self, tmp_path):
        configs = [
            tiny_config(tmp_path, w=1, h=2, reports_dir=str(tmp_path / "r1")),
            tiny_config(tmp_path, w=2, h=2, reports_dir=str(tmp_path / "r2")),
        ]
        csv_path = tmp_path / "sweep.csv"
        reports = sweep(configs, csv_path)
        lines = csv_path.read_text().strip().splitlines()
        assert lines[0] == ",".join(SWEEP_COLUMNS)
        assert len(lines) == 3
        first = lines[1].split(",")
        assert first[0] == "1" and first[1] == "2"
        assert all(r.failure is None for r in reports)

    def test_failing_config_does_not_abort(self, tmp_path):
        configs = [
            tiny_config(tmp_path, synthetic_dim=10, reports_dir=str(tmp_path / "r1")),
            tiny_config(tmp_path, reports_dir=str(tmp_path / "r2")),
        ]
        csv_path = tmp_path / "sweep.csv"
        reports = sweep(configs, csv_path)
        assert reports[0].failure is not None
        assert reports[1].failure is None
        assert len(csv_path.read_text().strip().splitlines()) == 3

    def test_single_config_matches_run_pipeline(self, tmp_path):
        direct = run_pipeline(tiny_config(tmp_path / "d"))
        [swept] = sweep([tiny_config(tmp_path / "s")], tmp_path / "one.csv")
        assert direct.metrics == swept.metrics  # dirs differ, results must not
        assert swept.failure is None


class TestInferenceImprovesAccuracy:
    """Statistical properties of the inference step on overlapping clusters.

    Mirrors the reported behaviour: propagation raises label accuracy over
    the cluster-derived baseline, and small grids end more accurate than
    large ones because single-unresolved examples are more common.
    """

    @staticmethod
    def run_once(seed, w, h):
        from sumlearn.assignment import solve_corpus
        from sumlearn.dataset import generate_synthetic
        from sumlearn.inference import init_labels, run_inference

        store, corpus = generate_synthetic(
            1600, 10, separation=6.0, dim=12, w=w, h=h, seed=seed
        )
        matrix = emb.pca_embed(store, dim=10)
        model = clu.kmeans(matrix, k=10, seed=seed)
        winner = solve_corpus(corpus, model, batch_size=100)
        state = init_labels(model, winner)
        pre = label_accuracy(state.labels, store)
        state = run_inference(state, corpus, model)
        post = label_accuracy(state.labels, store)
        return pre, post

    def test_inference_beats_cluster_labels_majority(self):
        wins = 0
        for seed in range(5):
            pre, post = self.run_once(seed, w=1, h=2)
            assert post >= pre  # never hurts on these corpora
            wins += post > pre
        assert wins >= 3

    def test_small_grids_end_more_accurate_majority(self):
        wins = 0
        for seed in range(5):
            _, post_small = self.run_once(seed, w=1, h=2)
            _, post_large = self.run_once(seed, w=4, h=2)
            assert post_small >= post_large
            wins += post_small > post_large
        assert wins >= 3


class TestLabelFreedomAudit:
    """The training path must never read ground-truth labels.

    Data generation (build_corpus creating the sums) and the evaluation
    stage are the only legitimate readers of the evaluation-only accessor.
    """

    TRAINING_PATH = [
        emb.train_autoencoder,
        emb.encode,
        emb.pca_embed,
        clu.kmeans,
        clu._kmeans_single,
        clu._plus_plus_init,
        asg.build_batch_system,
        asg.solve_batch,
        asg.solve_corpus,
        asg.count_satisfied,
        inf.init_labels,
        inf.images_within_radius,
        inf.resolve_image_label,
        inf.infer_correct_labels,
        inf.run_inference,
        inf.final_labels,
        clf.init_cnn,
        clf.train_cnn,
        clf.classify,
        pl._stage_embed,
        pl._stage_cluster,
        pl._stage_assign,
        pl._stage_infer,
        pl._stage_train,
    ]

    @pytest.mark.parametrize("fn", TRAINING_PATH, ids=lambda f: f.__qualname__)
    def test_no_ground_truth_access(self, fn):
        source = inspect.getsource(fn)
        assert "evaluation_labels" not in source
        assert "_true_labels" not in source
