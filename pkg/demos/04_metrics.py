"""The evaluation toolbox: AUROC, pixel AUROC, F1-optimal thresholds.

All metrics are exact (sort-based with tie handling), not binned
approximations.  Run with `python demos/04_metrics.py`.
"""

import numpy as np

from anomhead import auroc, best_f1_threshold, pixel_auroc

rng = np.random.default_rng(0)

# --- image-level AUROC --------------------------------------------------------
# 40 normal and 20 defective image scores with some overlap.
normal = rng.normal(0.0, 1.0, size=40)
defective = rng.normal(2.0, 1.0, size=20)
scores = np.concatenate([normal, defective])
labels = np.concatenate([np.zeros(40, dtype=int), np.ones(20, dtype=int)])
print(f"I-AUROC on overlapping classes: {auroc(scores, labels):.4f}")

# Ties get half credit, so a constant scorer sits exactly at chance:
print(f"constant scorer: {auroc(np.zeros(60), labels):.4f}")

# AUROC only depends on the ranking; any strictly increasing transform of the
# scores leaves it unchanged.
print(f"after exp-transform: {auroc(np.exp(scores), labels):.4f}")

# --- pixel-level AUROC ---------------------------------------------------------
# Two small maps with rectangular defect masks; pixels pool globally.
map_a = rng.normal(0, 0.1, size=(8, 8)).astype(np.float32)
map_a[2:5, 2:5] += 1.0
mask_a = np.zeros((8, 8), dtype=bool)
mask_a[2:5, 2:5] = True
map_b = rng.normal(0, 0.1, size=(8, 8)).astype(np.float32)  # clean image
mask_b = np.zeros((8, 8), dtype=bool)
print(f"P-AUROC over both maps: {pixel_auroc([map_a, map_b], [mask_a, mask_b]):.4f}")

# --- F1-optimal threshold ------------------------------------------------------
threshold, f1 = best_f1_threshold(scores, labels)
predicted = scores > threshold
tp = int(np.sum(predicted & (labels == 1)))
fp = int(np.sum(predicted & (labels == 0)))
fn = int(np.sum(~predicted & (labels == 1)))
print(f"best threshold {threshold:.3f} -> F1 {f1:.4f} (TP {tp}, FP {fp}, FN {fn})")
