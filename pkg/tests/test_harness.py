import os
from dataclasses import fields, replace

import numpy as np
import pytest

from planereg.config import ConfigError
from planereg.geometry import RotationKind
from planereg.harness import (
    DEFAULT_SEARCH_SPACE,
    ABLATION_AXES,
    EXPERIMENT_SCHEMA,
    ExperimentConfig,
    TrainingDivergedError,
    ablation_driver,
    cross_validate,
    enumerate_weight_grid,
    evaluate,
    hyperparam_search,
    load_samples,
    split_kfold_grouped,
    train,
    train_eval_fold,
    weight_grid_search,
)
from planereg.loss_metrics import LossWeights
from planereg.model import NetworkConfig, PlaneRegressionNet, load_checkpoint
from planereg.phantom import ManifestEntry, generate_dataset


def tiny_config(**kw):
    defaults = dict(
        mode="ankle",
        out_dims=16,
        out_spacing=10.0,
        epochs=1,
        lr=0.01,
        decay=1.0,
        step_size=10,
        momentum=0.9,
        batch_size=4,
        k=2,
        seed=0,
        channels=(2, 4),
        fc_widths=(16,),
    )
    defaults.update(kw)
    return ExperimentConfig(**defaults)


@pytest.fixture(scope="module")
def tiny_dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("tinydata")
    generate_dataset(out, n_patients=4, volumes_per_patient=2, mode="ankle", seed=1, dims=16, spacing=10.0)
    return os.path.join(out, "manifest.txt")


@pytest.fixture(scope="module")
def tiny_samples(tiny_dataset):
    return load_samples(tiny_dataset)


def synthetic_manifest(n_metal_patients, n_cadaver_patients, seed=0, vpp=2):
    entries = []
    pid = 0
    for _ in range(n_metal_patients):
        for v in range(vpp):
            entries.append(ManifestEntry(f"p{pid}v{v}", pid, "metal", "ankle"))
        pid += 1
    for _ in range(n_cadaver_patients):
        for v in range(vpp):
            cls = "no_metal" if v % 2 == 0 else "metal_outside"
            entries.append(ManifestEntry(f"p{pid}v{v}", pid, cls, "ankle"))
        pid += 1
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(entries))
    return [entries[i] for i in order]


class TestExperimentConfig:
    def test_schema_matches_dataclass(self):
        assert set(EXPERIMENT_SCHEMA) == {f.name for f in fields(ExperimentConfig)}

    def test_values_round_trip(self):
        cfg = tiny_config(representation=RotationKind.QUATERNION, gamma=0.0)
        assert ExperimentConfig.from_values(cfg.to_values()) == cfg

    def test_mode_validated(self):
        with pytest.raises(ConfigError):
            tiny_config(mode="knee")

    def test_separate_networks_forbid_orthogonality(self):
        with pytest.raises(ConfigError):
            tiny_config(combined=False, alpha=0.4, beta=0.4, gamma=0.2)


class TestSplit:
    def test_example_split_10_patients(self):
        entries = synthetic_manifest(5, 5)
        fa = split_kfold_grouped(entries, k=5, seed=0)
        for fold in range(5):
            members = [e for e in entries if fa.fold_of[e.path] == fold]
            assert len(members) == 4
            assert len({e.patient_id for e in members}) == 2

    def test_no_patient_leakage_over_random_manifests(self):
        for trial in range(50):
            rng = np.random.default_rng(trial)
            k = int(rng.integers(2, 6))
            entries = synthetic_manifest(int(rng.integers(k, 4 * k)), int(rng.integers(k, 4 * k)), seed=trial)
            fa = split_kfold_grouped(entries, k=k, seed=trial)
            pid_fold = {}
            for e in entries:
                fold = fa.fold_of[e.path]
                assert pid_fold.setdefault(e.patient_id, fold) == fold

    def test_class_balance_for_divisible_counts(self):
        for trial in range(20):
            rng = np.random.default_rng(100 + trial)
            k = int(rng.integers(2, 6))
            entries = synthetic_manifest(k * int(rng.integers(1, 5)), k * int(rng.integers(1, 5)), seed=trial)
            fa = split_kfold_grouped(entries, k=k, seed=trial)
            for cls in ("metal", "metal_outside", "no_metal"):
                total = sum(e.origin_class == cls for e in entries)
                for fold in range(k):
                    got = sum(e.origin_class == cls and fa.fold_of[e.path] == fold for e in entries)
                    assert abs(got - total / k) <= 1.0

    def test_deterministic_per_seed(self):
        entries = synthetic_manifest(6, 6)
        a = split_kfold_grouped(entries, 3, seed=5).fold_of
        b = split_kfold_grouped(entries, 3, seed=5).fold_of
        c = split_kfold_grouped(entries, 3, seed=6).fold_of
        assert a == b
        assert a != c

    def test_too_few_patients_rejected(self):
        with pytest.raises(ValueError):
            split_kfold_grouped(synthetic_manifest(1, 1), k=5, seed=0)

    def test_train_test_partition(self):
        entries = synthetic_manifest(3, 3)
        fa = split_kfold_grouped(entries, 3, seed=0)
        tr, te = fa.train_test(entries, 1)
        assert sorted(tr + te) == list(range(len(entries)))
        assert not set(tr) & set(te)


class TestTrain:
    def test_zero_epochs_returns_initialized_net(self, tiny_samples):
        cfg = tiny_config(epochs=0)
        result = train(cfg, tiny_samples)
        assert result.loss_curve == []
        fresh = PlaneRegressionNet(
            cfg.network_config(),
            rng=np.random.default_rng(np.random.SeedSequence(entropy=cfg.seed, spawn_key=(11,))),
        )
        for (na, pa), (nb, pb) in zip(result.net.named_parameters(), fresh.named_parameters()):
            assert na == nb
            assert np.array_equal(pa.data, pb.data)

    def test_bitwise_reproducible_checkpoints(self, tiny_samples, tmp_path):
        cfg = tiny_config(epochs=2)
        train(cfg, tiny_samples, checkpoint_path=tmp_path / "a.bin")
        train(cfg, tiny_samples, checkpoint_path=tmp_path / "b.bin")
        assert (tmp_path / "a.bin").read_bytes() == (tmp_path / "b.bin").read_bytes()

    def test_nan_loss_aborts_with_diagnostics(self, tiny_samples):
        cfg = tiny_config(epochs=2, lr=1e30)
        with np.errstate(all="ignore"), pytest.raises(TrainingDivergedError, match="epoch"):
            train(cfg, tiny_samples)

    def test_single_plane_gamma_guard(self, tiny_samples):
        cfg = tiny_config()
        with pytest.raises(ConfigError):
            train(cfg, tiny_samples, plane="axial", weights=LossWeights(0.4, 0.4, 0.2))

    def test_loss_curve_length(self, tiny_samples):
        result = train(tiny_config(epochs=3), tiny_samples)
        assert len(result.loss_curve) == 3
        assert all(np.isfinite(v) for v in result.loss_curve)


class _GroundTruthStub:
    """Stands in for a trained network, returning encoded ground truth."""

    def __init__(self, cfg, samples):
        from planereg.augmentation import encode_plane_targets

        self.config = NetworkConfig(
            representation=cfg.representation,
            n_planes=len(cfg.plane_names),
            combined=True,
            in_dims=cfg.out_dims,
            channels=cfg.channels,
            fc_widths=cfg.fc_widths,
        )
        self._answers = [
            encode_plane_targets([s.planes[n] for n in cfg.plane_names], cfg.representation, cfg.extent_mm)
            for s in samples
        ]
        self._i = 0

    def predict(self, _x):
        out = self._answers[self._i]
        self._i += 1
        return out


class TestEvaluate:
    def test_ground_truth_bypass_scores_zero(self, tiny_samples):
        cfg = tiny_config()
        stub = _GroundTruthStub(cfg, tiny_samples)
        ev = evaluate(stub, tiny_samples, cfg)
        for rows in ev.errors_by_plane.values():
            for e in rows:
                assert e.d < 1e-6 and e.eps_n < 1e-6 and e.eps_i < 1e-6

    def test_report_row_count(self, tiny_samples):
        cfg = tiny_config()
        ev = evaluate(_GroundTruthStub(cfg, tiny_samples), tiny_samples, cfg)
        assert len(ev.rows()) == len(cfg.plane_names) + 1
        assert ev.rows()[-1].plane == "mean"

    def test_inference_time_recorded(self, tiny_samples):
        cfg = tiny_config()
        result = train(tiny_config(epochs=0), tiny_samples)
        ev = evaluate(result.net, tiny_samples, cfg)
        assert ev.mean_inference_s > 0.0

    def test_layout_mismatch_rejected(self, tiny_samples):
        cfg = tiny_config()
        result = train(tiny_config(epochs=0), tiny_samples)
        with pytest.raises(ValueError):
            evaluate(result.net, tiny_samples, cfg, plane="axial")


class TestSearches:
    def test_single_trial_returned(self, tiny_samples):
        cfg = tiny_config()
        space = dict(DEFAULT_SEARCH_SPACE)
        space["batch_size"] = (4,)
        best, trials = hyperparam_search(space, 1, tiny_samples, cfg, seed=3)
        assert len(trials) == 1
        assert best == trials[0][0]

    def test_search_deterministic_and_argmin(self, tiny_samples):
        cfg = tiny_config()
        space = dict(DEFAULT_SEARCH_SPACE)
        space["batch_size"] = (4, 8)
        best1, trials1 = hyperparam_search(space, 3, tiny_samples, cfg, seed=4)
        best2, trials2 = hyperparam_search(space, 3, tiny_samples, cfg, seed=4)
        assert best1 == best2
        assert [t[1] for t in trials1] == [t[1] for t in trials2]
        assert min(t[1] for t in trials1) == dict((tuple(sorted(p.items())), s) for p, s in trials1)[
            tuple(sorted(best1.items()))
        ]

    def test_weight_grid_counts(self):
        assert len(enumerate_weight_grid(0.1, combined=True)) == 45
        assert len(enumerate_weight_grid(0.1, combined=False)) == 9

    def test_weight_grid_contains_presets(self):
        grid = enumerate_weight_grid(0.1, combined=True)
        assert LossWeights(0.6, 0.3, 0.1) in grid
        assert LossWeights(0.2, 0.8, 0.0) in grid
        assert all(abs(w.alpha + w.beta + w.gamma - 1) < 1e-9 for w in grid)

    def test_weight_grid_step_validated(self):
        with pytest.raises(ValueError):
            enumerate_weight_grid(0.3)

    def test_weight_grid_search_tiny(self, tiny_samples):
        cfg = tiny_config()
        best, table = weight_grid_search(cfg, tiny_samples, step=1.0 / 3.0)
        assert len(table) == 3
        assert best in [w for w, _ in table]
        assert min(s for _, s in table) == dict(((w.alpha, w.beta, w.gamma), s) for w, s in table)[
            (best.alpha, best.beta, best.gamma)
        ]


class TestFoldsAndAblations:
    def test_three_scheme_trains_three_models(self, tiny_samples):
        cfg = tiny_config()
        fa = split_kfold_grouped([s.entry for s in tiny_samples], cfg.k, cfg.seed)
        ev, results = train_eval_fold(cfg, tiny_samples, fa, 0, scheme="three")
        assert len(results) == 3
        assert set(ev.errors_by_plane) == set(cfg.plane_names)

    def test_combined_scheme_trains_one_model(self, tiny_samples):
        cfg = tiny_config()
        fa = split_kfold_grouped([s.entry for s in tiny_samples], cfg.k, cfg.seed)
        _, results = train_eval_fold(cfg, tiny_samples, fa, 0, scheme="combined")
        assert len(results) == 1

    def test_cross_validate_writes_reports(self, tiny_dataset, tmp_path):
        cfg = tiny_config()
        rows = cross_validate(cfg, tiny_dataset, tmp_path / "xval")
        assert len(rows) == cfg.k
        for fold in range(cfg.k):
            assert (tmp_path / "xval" / f"fold{fold}" / "report.csv").exists()
        summary = (tmp_path / "xval" / "summary.csv").read_text().strip().split("\n")
        assert summary[0].startswith("cell,d_mean,d_std")
        assert len(summary) == 2

    def test_resolution_axis_uses_published_pairs(self):
        assert ABLATION_AXES["resolution"] == [(64, 2.5), (72, 2.2), (128, 1.2)]

    def test_representation_driver_shape_and_determinism(self, tiny_dataset, tmp_path):
        cfg = tiny_config()
        path1 = ablation_driver("representation", cfg, tiny_dataset, tmp_path / "a", folds=[0])
        path2 = ablation_driver("representation", cfg, tiny_dataset, tmp_path / "b", folds=[0])
        text1 = open(path1).read()
        lines = text1.strip().split("\n")
        assert len(lines) == 4  # header + 3 representations
        assert {l.split(",")[0] for l in lines[1:]} == {"sixd", "quaternion", "euler_sincos"}
        assert text1 == open(path2).read()

    def test_scheme_driver_rows(self, tiny_dataset, tmp_path):
        cfg = tiny_config()
        path = ablation_driver("combined_vs_separate", cfg, tiny_dataset, tmp_path / "s", folds=[0])
        lines = open(path).read().strip().split("\n")
        assert [l.split(",")[0] for l in lines[1:]] == ["three", "combined", "optimized_combined"]

    def test_unknown_axis_rejected(self, tiny_dataset, tmp_path):
        with pytest.raises(ValueError):
            ablation_driver("optimizer", tiny_config(), tiny_dataset, tmp_path / "x")

    @pytest.mark.slow
    def test_parallel_folds_match_sequential(self, tiny_dataset, tmp_path):
        cfg = tiny_config()
        seq = cross_validate(cfg, tiny_dataset, tmp_path / "seq", jobs=1)
        par = cross_validate(cfg, tiny_dataset, tmp_path / "par", jobs=2)
        for a, b in zip(seq, par):
            assert a == b
        for fold in range(cfg.k):
            assert (tmp_path / "seq" / f"fold{fold}" / "report.csv").read_text() == (
                tmp_path / "par" / f"fold{fold}" / "report.csv"
            ).read_text()
