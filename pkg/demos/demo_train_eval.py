"""Miniature end-to-end run: dataset, training, evaluation, plane export.

Uses a deliberately small configuration (16^3 volumes, a 2-block network,
a handful of epochs) so the full pipeline finishes in about a minute; the
same code paths scale to the full experiments via ExperimentConfig.
"""

import os
import tempfile

from planereg import ExperimentConfig, evaluate, generate_dataset, train
from planereg.harness import load_samples, split_kfold_grouped
from planereg.loss_metrics import rows_to_csv

data_dir = tempfile.mkdtemp(prefix="planereg_demo_")
generate_dataset(data_dir, n_patients=6, volumes_per_patient=2, mode="ankle", seed=1, dims=16, spacing=10.0)
samples = load_samples(os.path.join(data_dir, "manifest.txt"))
print(f"generated {len(samples)} volumes in {data_dir}")

cfg = ExperimentConfig(
    mode="ankle",
    out_dims=16,
    out_spacing=10.0,
    epochs=20,
    lr=0.02,
    decay=1.0,
    step_size=50,
    batch_size=4,
    k=3,
    seed=0,
    channels=(4, 8),
    fc_widths=(32,),
)

assignment = split_kfold_grouped([s.entry for s in samples], cfg.k, cfg.seed)
train_idx, test_idx = assignment.train_test([s.entry for s in samples], 0)
result = train(cfg, [samples[i] for i in train_idx])
print("loss curve:", " ".join(f"{v:.3f}" for v in result.loss_curve))

ev = evaluate(result.net, [samples[i] for i in test_idx], cfg)
print("\nheld-out report (tiny run, expect rough numbers):")
print(rows_to_csv(ev.rows()))
print(f"inference time per volume: {ev.mean_inference_s * 1000:.1f} ms")
