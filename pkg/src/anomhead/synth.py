"""Synthetic feature datasets: a desk-scale stand-in for real exported features.

Normal maps draw each spatial cell from a fixed per-cell Gaussian mixture;
anomalous test maps additionally shift a contiguous random rectangle of cells
by a configurable magnitude along a random channel-space direction, with the
rectangle recorded as the pixel mask.  Everything is a pure function of the
seed, so two runs produce byte-identical datasets.
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InvalidArgumentError
from .io_formats import DatasetManifest, SampleRecord, write_feature_file, write_manifest, write_mask
from .pipeline import HierarchyStack
from .rng import STREAM_SYNTH, seeded_rng

__all__ = ["SynthConfig", "generate_dataset"]


@dataclass(frozen=True)
class SynthConfig:
    """Shape and statistics of the generated dataset."""

    n_train: int = 200
    n_test: int = 100
    grid_h: int = 16
    grid_w: int = 16
    channels: int = 32
    defect_rate: float = 0.5
    shift: float = 3.0
    seed: int = 0
    level_index: int = 2        # hierarchy index written into the feature files
    image_scale: int = 8        # image resolution = grid * scale
    mixture_components: int = 3
    cell_noise_std: float = 0.1  # within-component feature std

    def __post_init__(self):
        if self.n_train < 1 or self.n_test < 1:
            raise InvalidArgumentError("n_train and n_test must be >= 1")
        if min(self.grid_h, self.grid_w, self.channels) < 2:
            raise InvalidArgumentError("grid dims and channels must be >= 2")
        if not (0.0 <= self.defect_rate <= 1.0):
            raise InvalidArgumentError(f"defect_rate must be in [0, 1], got {self.defect_rate}")
        if self.shift < 0:
            raise InvalidArgumentError(f"shift must be >= 0, got {self.shift}")
        if self.image_scale < 1 or self.mixture_components < 1:
            raise InvalidArgumentError("image_scale and mixture_components must be >= 1")


def _normal_map(cfg: SynthConfig, means: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    comp = rng.integers(cfg.mixture_components, size=(cfg.grid_h, cfg.grid_w))
    rows = np.arange(cfg.grid_h)[:, None]
    cols = np.arange(cfg.grid_w)[None, :]
    fmap = means[comp, rows, cols, :] + rng.normal(
        0.0, cfg.cell_noise_std, size=(cfg.grid_h, cfg.grid_w, cfg.channels)
    )
    return fmap.astype(np.float32)


def _inject_defect(fmap: np.ndarray, cfg: SynthConfig, rng: np.random.Generator):
    """Shift a random rectangle of cells along a random unit direction."""
    h, w, c = fmap.shape
    rect_h = int(rng.integers(max(2, h // 6), h // 2 + 1))
    rect_w = int(rng.integers(max(2, w // 6), w // 2 + 1))
    top = int(rng.integers(0, h - rect_h + 1))
    left = int(rng.integers(0, w - rect_w + 1))
    direction = rng.normal(0.0, 1.0, size=c)
    direction /= np.linalg.norm(direction)
    out = fmap.copy()
    out[top:top + rect_h, left:left + rect_w, :] += (cfg.shift * direction).astype(np.float32)
    mask = np.zeros((h, w), dtype=bool)
    mask[top:top + rect_h, left:left + rect_w] = True
    return out, mask


def generate_dataset(out_dir, cfg: SynthConfig) -> Path:
    """Write feature files, masks and a manifest under ``out_dir``.

    Returns the manifest path.  Test samples 0..n_anomalous-1 are defective
    (n_anomalous = round(n_test * defect_rate)); their masks are written at
    image resolution (grid * image_scale, nearest upsampling).
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = seeded_rng(cfg.seed, STREAM_SYNTH)

    # The mixture itself is part of the dataset identity: fixed per seed.
    means = rng.normal(
        0.0, 1.0, size=(cfg.mixture_components, cfg.grid_h, cfg.grid_w, cfg.channels)
    )

    samples = []

    def write_sample(name: str, fmap: np.ndarray, split: str, label: int, mask=None):
        feature_rel = f"features/{name}.snft"
        (out_dir / "features").mkdir(exist_ok=True)
        write_feature_file(HierarchyStack([(cfg.level_index, fmap)]), out_dir / feature_rel)
        mask_rel = None
        if mask is not None:
            (out_dir / "masks").mkdir(exist_ok=True)
            mask_rel = f"masks/{name}.pgm"
            scaled = np.repeat(np.repeat(mask, cfg.image_scale, axis=0), cfg.image_scale, axis=1)
            write_mask(scaled, out_dir / mask_rel)
        samples.append(SampleRecord(
            sample_id=name, split=split, label=label,
            feature_path=feature_rel, mask_path=mask_rel,
        ))

    for i in range(cfg.n_train):
        write_sample(f"train_{i:04d}", _normal_map(cfg, means, rng), "train", 0)

    n_anomalous = int(round(cfg.n_test * cfg.defect_rate))
    for i in range(cfg.n_test):
        fmap = _normal_map(cfg, means, rng)
        if i < n_anomalous:
            fmap, mask = _inject_defect(fmap, cfg, rng)
            write_sample(f"test_{i:04d}", fmap, "test", 1, mask)
        else:
            write_sample(f"test_{i:04d}", fmap, "test", 0)

    manifest = DatasetManifest(
        name="synthetic-blobs",
        image_height=cfg.grid_h * cfg.image_scale,
        image_width=cfg.grid_w * cfg.image_scale,
        samples=samples,
    )
    manifest_path = out_dir / "manifest.json"
    write_manifest(manifest, manifest_path)
    return manifest_path
