"""Anomaly-map post-processing and serialization.

Shows how a raw per-location score map becomes the deliverable: bilinear
resampling to image resolution, Gaussian smoothing, the scalar image score,
and the two on-disk formats.  Run with `python demos/03_anomaly_maps.py`.
"""

import tempfile
from pathlib import Path

import numpy as np

from anomhead import build_result
from anomhead.io_formats import read_anomaly_map_raw, read_map_sidecar, write_anomaly_map

work = Path(tempfile.mkdtemp(prefix="anomhead-demo-"))

# A raw 14x14 score map with one hot region, the way the discriminator
# produces it (higher = more anomalous).
raw = np.random.default_rng(1).normal(0.0, 0.05, size=(14, 14)).astype(np.float32)
raw[4:7, 8:11] += 1.0

result = build_result(raw, out_h=224, out_w=224, smoothing_sigma=4.0)
print(f"raw map {raw.shape} -> output map {result.map.shape}")
print(f"image score (max of the raw map): {result.image_score:.4f}")
print(f"max of the smoothed map:          {float(result.map.max()):.4f} "
      "(smoothing spreads mass, never raises the peak)")

# The image score is fixed before post-processing, so it does not depend on
# the output resolution or the smoothing strength:
for sigma in (1.0, 4.0, 8.0):
    alt = build_result(raw, 64, 64, smoothing_sigma=sigma)
    print(f"  sigma={sigma:3.0f}, 64x64 output -> image score {alt.image_score:.4f}")

# Lossless float32 on disk, with a JSON sidecar carrying the scalar score.
raw_path = work / "sample.snam"
write_anomaly_map(result, raw_path, fmt="raw")
restored = read_anomaly_map_raw(raw_path)
print(f"raw round-trip bit-exact: {np.array_equal(restored, result.map)}")
print(f"sidecar: {read_map_sidecar(raw_path)}")

# 8-bit grayscale for quick looks; min/max in the sidecar keep absolute
# scores reconstructible to 1/255 of the range.
gray_path = work / "sample.pgm"
write_anomaly_map(result, gray_path, fmt="gray")
print(f"wrote {gray_path} ({gray_path.stat().st_size} bytes) "
      f"+ sidecar {read_map_sidecar(gray_path)['format']!r}")
