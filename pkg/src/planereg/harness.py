"""Training, evaluation, grouped cross-validation, and ablation drivers.

The cross-validation split is grouped and stratified: all volumes of one
patient land in the same fold, and the per-fold mix of origin classes tracks
the overall distribution as closely as the patient grouping allows.  Training
uses online augmentation (a fresh random augmentation of every sample each
epoch), SGD with classic momentum, and a stepwise learning-rate schedule; a
fixed master seed makes the final checkpoint bit-for-bit reproducible.
"""

from __future__ import annotations

import logging
import os
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .augmentation import (
    AugmentConfig,
    SeededRng,
    augment_sample,
    center_input,
    decode_plane_vector,
    encode_plane_targets,
)
from .config import ConfigError, Field
from .geometry import DegenerateEncodingError, PlaneFrame, RotationKind, read_plane_file
from .loss_metrics import (
    LossWeights,
    PlaneErrors,
    ReportRow,
    WEIGHT_PRESETS,
    aggregate_errors,
    loss_graph,
    plane_errors,
    rows_to_csv,
    score,
)
from .model import NetworkConfig, PlaneRegressionNet, SGDMomentum, save_checkpoint, step_decay
from .phantom import PLANE_NAMES, ManifestEntry, read_manifest
from .volume import Volume, read_volume

logger = logging.getLogger(__name__)

_AUG_TAG = 1000  # seed-sequence namespace for per-sample augmentation draws


class TrainingDivergedError(RuntimeError):
    """Loss became non-finite; message carries epoch, batch, and lr."""


EXPERIMENT_SCHEMA: dict[str, Field] = {
    "mode": Field("str", "ankle", "body region: ankle or calcaneus"),
    "representation": Field("str", "sixd", "rotation encoding: quaternion, euler_sincos, or sixd"),
    "combined": Field("bool", True, "one network for all planes (true) or one per plane (false)"),
    "out_dims": Field("int", 72, "network input side length in voxels"),
    "out_spacing": Field("float", 2.2, "network input voxel size in mm"),
    "alpha": Field("float", 0.5, "loss weight of the rotation term"),
    "beta": Field("float", 0.5, "loss weight of the translation term"),
    "gamma": Field("float", 0.0, "loss weight of the plane orthogonality term"),
    "orthogonality_form": Field("str", "cross", "orthogonality penalty form: cross or dot"),
    "epochs": Field("int", 400, "number of training epochs"),
    "lr": Field("float", 0.02, "initial learning rate"),
    "decay": Field("float", 0.5, "learning-rate decay factor"),
    "step_size": Field("int", 150, "epochs between learning-rate decay steps"),
    "momentum": Field("float", 0.9, "SGD momentum"),
    "batch_size": Field("int", 8, "mini-batch size"),
    "k": Field("int", 5, "number of cross-validation folds"),
    "seed": Field("int", 0, "master seed for all randomness"),
    "rot_deg": Field("float", 45.0, "augmentation rotation range, +- degrees per axis"),
    "scale_lo": Field("float", 0.95, "augmentation scale range lower bound"),
    "scale_hi": Field("float", 1.05, "augmentation scale range upper bound"),
    "trans_mm": Field("float", 12.0, "augmentation translation range, +- mm per axis"),
    "mirror_prob": Field("float", 0.5, "probability of mirroring in x direction"),
    "intensity_lo": Field("float", 0.95, "intensity jitter factor lower bound"),
    "intensity_hi": Field("float", 1.05, "intensity jitter factor upper bound"),
    "channels": Field("ints", (8, 16, 32, 64, 128), "convolution channels per block"),
    "fc_widths": Field("ints", (1024, 256), "hidden fully connected widths"),
}


@dataclass(frozen=True)
class ExperimentConfig:
    """One experiment: data mode, model, loss weights, optimizer, and seed."""

    mode: str = "ankle"
    representation: RotationKind = RotationKind.SIXD
    combined: bool = True
    out_dims: int = 72
    out_spacing: float = 2.2
    alpha: float = 0.5
    beta: float = 0.5
    gamma: float = 0.0
    orthogonality_form: str = "cross"
    epochs: int = 400
    lr: float = 0.02
    decay: float = 0.5
    step_size: int = 150
    momentum: float = 0.9
    batch_size: int = 8
    k: int = 5
    seed: int = 0
    rot_deg: float = 45.0
    scale_lo: float = 0.95
    scale_hi: float = 1.05
    trans_mm: float = 12.0
    mirror_prob: float = 0.5
    intensity_lo: float = 0.95
    intensity_hi: float = 1.05
    channels: tuple[int, ...] = (8, 16, 32, 64, 128)
    fc_widths: tuple[int, ...] = (1024, 256)

    def __post_init__(self):
        if self.mode not in PLANE_NAMES:
            raise ConfigError(f"mode must be one of {sorted(PLANE_NAMES)}")
        object.__setattr__(self, "representation", RotationKind(self.representation))
        if not self.combined and self.gamma > 0.0:
            raise ConfigError("per-plane networks cannot use an orthogonality weight")

    @classmethod
    def from_values(cls, values: dict) -> "ExperimentConfig":
        return cls(**values)

    def to_values(self) -> dict:
        out = {}
        for key in EXPERIMENT_SCHEMA:
            val = getattr(self, key)
            out[key] = val.value if isinstance(val, RotationKind) else val
        return out

    @property
    def plane_names(self) -> tuple[str, ...]:
        return PLANE_NAMES[self.mode]

    @property
    def extent_mm(self) -> float:
        return self.out_dims * self.out_spacing

    def weights(self) -> LossWeights:
        return LossWeights(self.alpha, self.beta, self.gamma)

    def augment_config(self) -> AugmentConfig:
        return AugmentConfig(
            rot_deg=self.rot_deg,
            scale_range=(self.scale_lo, self.scale_hi),
            trans_mm=self.trans_mm,
            mirror_prob=self.mirror_prob,
            out_dims=self.out_dims,
            out_spacing=self.out_spacing,
            intensity_range=(self.intensity_lo, self.intensity_hi),
        )

    def network_config(self, n_planes: int | None = None) -> NetworkConfig:
        n = len(self.plane_names) if n_planes is None else n_planes
        return NetworkConfig(
            representation=self.representation,
            n_planes=n,
            combined=self.combined if n_planes is None else n_planes > 1,
            in_dims=self.out_dims,
            channels=self.channels,
            fc_widths=self.fc_widths,
        )


# ---------------------------------------------------------------------------
# data loading


@dataclass(frozen=True)
class Sample:
    """A source volume with its ground-truth plane annotations."""

    entry: ManifestEntry
    volume: Volume
    planes: dict[str, PlaneFrame]


def load_samples(manifest_path) -> list[Sample]:
    base_dir = os.path.dirname(os.fspath(manifest_path))
    samples = []
    for entry in read_manifest(manifest_path):
        stem = os.path.join(base_dir, entry.path)
        vol = read_volume(stem + ".vhdr")
        planes = read_plane_file(stem + ".planes")
        missing = [n for n in PLANE_NAMES[entry.mode] if n not in planes]
        if missing:
            raise ValueError(f"{stem}.planes: missing planes {missing}")
        samples.append(Sample(entry=entry, volume=vol, planes=planes))
    return samples


# ---------------------------------------------------------------------------
# grouped, stratified k-fold


@dataclass(frozen=True)
class FoldAssignment:
    """Volume-path to fold-index map; all volumes of a patient share a fold."""

    k: int
    fold_of: dict[str, int]

    def train_test(self, entries: list[ManifestEntry], fold: int):
        train = [i for i, e in enumerate(entries) if self.fold_of[e.path] != fold]
        test = [i for i, e in enumerate(entries) if self.fold_of[e.path] == fold]
        return train, test


def split_kfold_grouped(entries: list[ManifestEntry], k: int, seed: int) -> FoldAssignment:
    """Deterministic stratified group split.

    Patients are grouped by their multiset of origin classes, shuffled within
    each group by the seed, and dealt round-robin with a fold cursor that
    runs across groups, so both patient counts and class counts stay as
    balanced as whole-patient assignment permits.
    """
    patients: dict[int, list[ManifestEntry]] = {}
    for e in entries:
        patients.setdefault(e.patient_id, []).append(e)
    if len(patients) < k:
        raise ValueError(f"need at least k={k} patients, got {len(patients)}")

    by_type: dict[tuple, list[int]] = {}
    for pid, vols in patients.items():
        key = tuple(sorted(v.origin_class for v in vols))
        by_type.setdefault(key, []).append(pid)

    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy=seed, spawn_key=(7,))))
    fold_of: dict[str, int] = {}
    cursor = 0
    for key in sorted(by_type):
        pids = sorted(by_type[key])
        rng.shuffle(pids)
        for pid in pids:
            for e in patients[pid]:
                fold_of[e.path] = cursor % k
            cursor += 1
    return FoldAssignment(k=k, fold_of=fold_of)


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainResult:
    net: PlaneRegressionNet
    loss_curve: list[float]
    out_of_cube: int


def _target_planes(sample_planes: dict[str, PlaneFrame], names) -> list[PlaneFrame]:
    return [sample_planes[n] for n in names]


def train(
    cfg: ExperimentConfig,
    samples: list[Sample],
    plane: str | None = None,
    weights: LossWeights | None = None,
    checkpoint_path=None,
) -> TrainResult:
    """Train one network; ``plane`` selects a single-plane model.

    Every epoch draws a fresh augmentation per sample (keyed by the master
    seed, the epoch, and the sample's dataset index, so results do not depend
    on batch scheduling), shuffles the sample order, and applies SGD with
    momentum under the stepwise learning-rate schedule.  A non-finite batch
    loss aborts with :class:`TrainingDivergedError`.
    """
    if not samples:
        raise ValueError("no training samples")
    names = (plane,) if plane is not None else cfg.plane_names
    weights = weights if weights is not None else cfg.weights()
    if len(names) == 1 and weights.gamma > 0.0:
        raise ConfigError("single-plane training requires gamma = 0")

    init_rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy=cfg.seed, spawn_key=(11,))))
    net = PlaneRegressionNet(cfg.network_config(n_planes=len(names)), rng=init_rng)
    opt = SGDMomentum(net, lr=cfg.lr, momentum=cfg.momentum)
    aug_cfg = cfg.augment_config()
    base_rng = SeededRng(cfg.seed)

    curve: list[float] = []
    out_of_cube = 0
    for epoch in range(cfg.epochs):
        opt.lr = step_decay(cfg.lr, cfg.decay, cfg.step_size, epoch)
        shuffle_rng = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence(entropy=cfg.seed, spawn_key=(13, epoch)))
        )
        order = shuffle_rng.permutation(len(samples))
        epoch_losses = []
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            images = np.empty((len(batch), 1, cfg.out_dims, cfg.out_dims, cfg.out_dims), dtype=np.float32)
            targets = np.empty((len(batch), net.config.n_out), dtype=np.float32)
            for row, idx in enumerate(batch):
                s = samples[idx]
                aug = augment_sample(
                    s.volume,
                    _target_planes(s.planes, names),
                    aug_cfg,
                    base_rng.derive(_AUG_TAG, epoch, int(idx)),
                    kind=cfg.representation,
                )
                images[row, 0] = aug.image
                targets[row] = aug.target
                out_of_cube += int(aug.center_out_of_bounds)
            pred = net.forward(images)
            node = loss_graph(pred, targets, weights, cfg.representation, len(names), cfg.orthogonality_form)
            value = node.item()
            if not np.isfinite(value):
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch}, batch {start // cfg.batch_size}, lr {opt.lr:g}"
                )
            node.backward()
            opt.step()
            opt.zero_grad()
            epoch_losses.append(value)
        curve.append(float(np.mean(epoch_losses)))
        logger.info("epoch %d/%d: lr %.5f, mean loss %.5f", epoch + 1, cfg.epochs, opt.lr, curve[-1])

    if checkpoint_path is not None:
        save_checkpoint(checkpoint_path, net, extra={"experiment": cfg.to_values(), "plane": plane or ""})
    return TrainResult(net=net, loss_curve=curve, out_of_cube=out_of_cube)


# ---------------------------------------------------------------------------
# evaluation


@dataclass
class EvalResult:
    errors_by_plane: dict[str, list[PlaneErrors]]
    mean_inference_s: float

    def rows(self) -> list[ReportRow]:
        return aggregate_errors(self.errors_by_plane, per_plane=True)

    def mean_row(self) -> ReportRow:
        return self.rows()[-1]


def evaluate(net: PlaneRegressionNet, samples: list[Sample], cfg: ExperimentConfig, plane: str | None = None) -> EvalResult:
    """Deterministic test-time evaluation: center resample, no augmentation.

    Predictions are decoded back to plane frames and compared against the
    stored annotations.  Undecodable predictions (possible for untrained
    networks) count with worst-case placeholder errors rather than aborting.
    """
    names = (plane,) if plane is not None else cfg.plane_names
    if net.config.n_out != len(names) * (3 + cfg.representation.length):
        raise ValueError("network output layout does not match the requested planes")
    errors: dict[str, list[PlaneErrors]] = {n: [] for n in names}
    times = []
    for s in samples:
        x = center_input(s.volume, cfg.out_dims, cfg.out_spacing)
        t0 = time.perf_counter()
        pred = net.predict(x)
        times.append(time.perf_counter() - t0)
        for i, name in enumerate(names):
            per = 3 + cfg.representation.length
            vec = pred[i * per : (i + 1) * per]
            try:
                frame = decode_plane_vector(vec, cfg.representation, cfg.extent_mm)[0]
                errors[name].append(plane_errors(frame, s.planes[name]))
            except DegenerateEncodingError:
                errors[name].append(PlaneErrors(d=cfg.extent_mm / 2.0, eps_n=90.0, eps_i=90.0))
    mean_s = float(np.mean(times)) if times else 0.0
    logger.info("inference time per volume: %.4f s", mean_s)
    return EvalResult(errors_by_plane=errors, mean_inference_s=mean_s)


def train_eval_fold(
    cfg: ExperimentConfig,
    samples: list[Sample],
    assignment: FoldAssignment,
    fold: int,
    scheme: str = "config",
) -> tuple[EvalResult, list[TrainResult]]:
    """Train on all folds but ``fold`` and evaluate on ``fold``.

    ``scheme`` selects the loss-weight/network arrangement: ``config`` uses
    the experiment config as is, ``combined`` the equal-weight preset,
    ``optimized_combined`` the tuned preset, and ``three`` one independently
    trained network per plane with its per-plane preset weights.
    """
    entries = [s.entry for s in samples]
    train_idx, test_idx = assignment.train_test(entries, fold)
    train_samples = [samples[i] for i in train_idx]
    test_samples = [samples[i] for i in test_idx]
    presets = WEIGHT_PRESETS[cfg.mode]

    results: list[TrainResult] = []
    if scheme == "three":
        merged: dict[str, list[PlaneErrors]] = {}
        times = []
        for plane in cfg.plane_names:
            preset_key = "three_coronal" if plane in ("coronal", "semicoronal") else f"three_{plane}"
            sub_cfg = replace(cfg, combined=False, gamma=0.0)
            tr = train(sub_cfg, train_samples, plane=plane, weights=presets[preset_key])
            results.append(tr)
            ev = evaluate(tr.net, test_samples, sub_cfg, plane=plane)
            merged.update(ev.errors_by_plane)
            times.append(ev.mean_inference_s)
        return EvalResult(errors_by_plane=merged, mean_inference_s=float(np.sum(times))), results

    if scheme == "config":
        weights = cfg.weights()
    elif scheme in ("combined", "optimized_combined"):
        weights = presets[scheme]
    else:
        raise ValueError(f"unknown scheme {scheme!r}")
    w_cfg = replace(cfg, combined=True, alpha=weights.alpha, beta=weights.beta, gamma=weights.gamma)
    tr = train(w_cfg, train_samples)
    results.append(tr)
    return evaluate(tr.net, test_samples, w_cfg), results


# ---------------------------------------------------------------------------
# searches


DEFAULT_SEARCH_SPACE = {
    "lr": (1e-3, 1e-1),  # log-uniform
    "decay": (0.3, 1.0),
    "step_size": (30, 200),
    "momentum": (0.5, 0.99),
    "batch_size": (4, 8, 16),
}


def _patient_holdout(samples: list[Sample], seed: int, val_fraction: float = 0.25):
    """Group-aware split of one fold into search-train and search-val parts."""
    pids = sorted({s.entry.patient_id for s in samples})
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy=seed, spawn_key=(17,))))
    rng.shuffle(pids)
    n_val = max(1, int(round(val_fraction * len(pids))))
    val_pids = set(pids[:n_val])
    train = [s for s in samples if s.entry.patient_id not in val_pids]
    val = [s for s in samples if s.entry.patient_id in val_pids]
    return train, val


def hyperparam_search(
    space: dict,
    n_trials: int,
    samples: list[Sample],
    cfg: ExperimentConfig,
    seed: int,
) -> tuple[dict, list[tuple[dict, float]]]:
    """Random search over optimizer hyperparameters on one fold.

    The learning rate is drawn log-uniformly, the other ranges uniformly;
    ``batch_size`` is a choice tuple.  Trials train on a patient-level 3/4
    subset of ``samples`` and are ranked by the validation score (lower is
    better).  Deterministic for a fixed seed.
    """
    train_s, val_s = _patient_holdout(samples, seed)
    trials: list[tuple[dict, float]] = []
    for trial in range(n_trials):
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy=seed, spawn_key=(19, trial))))
        params = {
            "lr": float(np.exp(rng.uniform(np.log(space["lr"][0]), np.log(space["lr"][1])))),
            "decay": float(rng.uniform(*space["decay"])),
            "step_size": int(rng.integers(space["step_size"][0], space["step_size"][1] + 1)),
            "momentum": float(rng.uniform(*space["momentum"])),
            "batch_size": int(space["batch_size"][int(rng.integers(0, len(space["batch_size"])))]),
        }
        trial_cfg = replace(cfg, **params)
        tr = train(trial_cfg, train_s)
        row = evaluate(tr.net, val_s, trial_cfg).mean_row()
        trials.append((params, row.score))
        logger.info("trial %d/%d: score %.3f for %s", trial + 1, n_trials, row.score, params)
    best = min(trials, key=lambda t: t[1])[0]
    return best, trials


def enumerate_weight_grid(step: float = 0.1, combined: bool = True) -> list[LossWeights]:
    """All feasible loss-weight combinations on a grid.

    Combined networks enumerate ``alpha, beta in {step..1-step}`` with
    ``gamma = 1 - alpha - beta >= 0``; per-plane networks enumerate
    ``(alpha, 1 - alpha, 0)``.
    """
    n = int(round(1.0 / step))
    if abs(n * step - 1.0) > 1e-9:
        raise ValueError("grid step must divide 1 evenly")
    out = []
    for ia in range(1, n):
        a = ia * step
        if combined:
            for ib in range(1, n):
                b = ib * step
                g = 1.0 - a - b
                if g > -1e-9:
                    out.append(LossWeights(round(a, 10), round(b, 10), round(max(g, 0.0), 10)))
        else:
            out.append(LossWeights(round(a, 10), round(1.0 - a, 10), 0.0))
    return out


def weight_grid_search(
    cfg: ExperimentConfig,
    samples: list[Sample],
    step: float = 0.1,
    plane: str | None = None,
) -> tuple[LossWeights, list[tuple[LossWeights, float]]]:
    """Exhaustive loss-weight grid search ranked by validation score."""
    train_s, val_s = _patient_holdout(samples, cfg.seed)
    table: list[tuple[LossWeights, float]] = []
    for w in enumerate_weight_grid(step, combined=plane is None):
        run_cfg = replace(cfg, combined=plane is None, alpha=w.alpha, beta=w.beta, gamma=w.gamma)
        tr = train(run_cfg, train_s, plane=plane, weights=w)
        row = evaluate(tr.net, val_s, run_cfg, plane=plane).rows()[-1]
        table.append((w, row.score))
        logger.info("weights (%.1f, %.1f, %.1f): score %.3f", w.alpha, w.beta, w.gamma, row.score)
    best = min(table, key=lambda t: t[1])[0]
    return best, table


# ---------------------------------------------------------------------------
# cross-validation and ablations


def _atomic_write(path, text: str) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="ascii") as fh:
        fh.write(text)
    os.replace(tmp, path)


SUMMARY_HEADER = (
    "cell,d_mean,d_std,eps_n_mean,eps_n_std,eps_i_mean,eps_i_std,score_mean,score_std"
)


def _summarize(cell: str, fold_rows: list[ReportRow]) -> str:
    d = np.array([r.d for r in fold_rows])
    en = np.array([r.eps_n for r in fold_rows])
    ei = np.array([r.eps_i for r in fold_rows])
    sc = np.array([r.score for r in fold_rows])
    return (
        f"{cell},{d.mean():.4f},{d.std():.4f},{en.mean():.4f},{en.std():.4f},"
        f"{ei.mean():.4f},{ei.std():.4f},{sc.mean():.4f},{sc.std():.4f}"
    )


def _fold_worker(cfg_values: dict, manifest_path: str, fold: int, scheme: str):
    """Self-contained fold job (also used by worker processes)."""
    cfg = ExperimentConfig.from_values(cfg_values)
    samples = load_samples(manifest_path)
    assignment = split_kfold_grouped([s.entry for s in samples], cfg.k, cfg.seed)
    ev, _ = train_eval_fold(cfg, samples, assignment, fold, scheme=scheme)
    serialized = {
        name: [(e.d, e.eps_n, e.eps_i) for e in errs] for name, errs in ev.errors_by_plane.items()
    }
    return fold, serialized, ev.mean_inference_s


def _run_folds(cfg: ExperimentConfig, manifest_path, folds: list[int], scheme: str, jobs: int) -> dict[int, EvalResult]:
    """Run independent fold jobs, optionally in parallel worker processes.

    Each fold derives all randomness from the master seed alone, so the
    results are identical whatever the job count or scheduling.
    """
    values = cfg.to_values()
    path = os.fspath(manifest_path)
    results: dict[int, EvalResult] = {}
    if jobs <= 1 or len(folds) <= 1:
        outputs = [_fold_worker(values, path, fold, scheme) for fold in folds]
    else:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outputs = list(pool.map(_fold_worker, *zip(*[(values, path, f, scheme) for f in folds])))
    for fold, serialized, mean_s in outputs:
        errors = {name: [PlaneErrors(*t) for t in triples] for name, triples in serialized.items()}
        results[fold] = EvalResult(errors_by_plane=errors, mean_inference_s=mean_s)
    return results


def cross_validate(
    cfg: ExperimentConfig,
    manifest_path,
    out_dir,
    folds: list[int] | None = None,
    scheme: str = "config",
    jobs: int = 1,
) -> list[ReportRow]:
    """Run (a subset of) the k folds, writing per-fold reports and a summary.

    Returns the per-fold mean rows.  Result files are written atomically
    (write to a temp file, then rename).
    """
    folds = list(range(cfg.k)) if folds is None else list(folds)
    os.makedirs(out_dir, exist_ok=True)
    results = _run_folds(cfg, manifest_path, folds, scheme, jobs)
    mean_rows = []
    for fold in folds:
        fold_dir = os.path.join(out_dir, f"fold{fold}")
        os.makedirs(fold_dir, exist_ok=True)
        _atomic_write(os.path.join(fold_dir, "report.csv"), rows_to_csv(results[fold].rows()))
        mean_rows.append(results[fold].mean_row())
    summary = [SUMMARY_HEADER, _summarize("all", mean_rows)]
    _atomic_write(os.path.join(out_dir, "summary.csv"), "\n".join(summary) + "\n")
    return mean_rows


ABLATION_AXES = {
    "representation": [RotationKind.SIXD, RotationKind.QUATERNION, RotationKind.EULER_SINCOS],
    "resolution": [(64, 2.5), (72, 2.2), (128, 1.2)],
    "combined_vs_separate": ["three", "combined", "optimized_combined"],
}


def ablation_driver(
    which: str,
    cfg: ExperimentConfig,
    manifest_path,
    out_dir,
    folds: list[int] | None = None,
    resolutions: list[tuple[int, float]] | None = None,
    jobs: int = 1,
) -> str:
    """Run one ablation axis cross-validated and emit a mean/std CSV.

    ``representation`` compares the three rotation encodings,
    ``resolution`` the (dims, spacing) rows, and ``combined_vs_separate``
    per-plane models against combined ones.  Returns the summary CSV path.
    """
    if which not in ABLATION_AXES:
        raise ValueError(f"unknown ablation axis {which!r}")
    folds = list(range(cfg.k)) if folds is None else list(folds)
    os.makedirs(out_dir, exist_ok=True)

    lines = [SUMMARY_HEADER]
    for cell in ABLATION_AXES[which] if which != "resolution" else (resolutions or ABLATION_AXES["resolution"]):
        if which == "representation":
            cell_cfg = replace(cfg, representation=cell)
            label, scheme = cell.value, "config"
        elif which == "resolution":
            dims, spacing = cell
            cell_cfg = replace(cfg, out_dims=dims, out_spacing=spacing)
            label, scheme = f"{dims}^3@{spacing}mm", "config"
        else:
            cell_cfg = cfg
            label, scheme = cell, cell
        results = _run_folds(cell_cfg, manifest_path, folds, scheme, jobs)
        fold_rows = [results[fold].mean_row() for fold in folds]
        for fold in folds:
            _atomic_write(
                os.path.join(out_dir, f"{which}_{label.replace('@', '_')}_fold{fold}.csv"),
                rows_to_csv(results[fold].rows()),
            )
        lines.append(_summarize(label, fold_rows))
        logger.info("ablation %s cell %s: %s", which, label, lines[-1])

    path = os.path.join(out_dir, f"{which}.csv")
    _atomic_write(path, "\n".join(lines) + "\n")
    return path
