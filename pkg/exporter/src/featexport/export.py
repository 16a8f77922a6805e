"""Walks an MVTec-style dataset and exports per-image SNFT feature files.

Expected layout under ``dataset_root/category``:

    train/good/*.png                 nominal training images
    test/good/*.png                  nominal test images
    test/<defect>/*.png              defective test images
    ground_truth/<defect>/*_mask.png pixel masks for defective images

Images are resized to 256x256, center-cropped to 224x224 and normalized with
the standard per-channel statistics of the pretraining dataset.  Features are
exported before any neighborhood aggregation, so patch-size and level-subset
ablations run entirely in the consumer.  Masks go through the same geometry
(nearest-neighbor) so they align with the exported resolution.
"""

import sys
from pathlib import Path

import numpy as np
from PIL import Image

from .backbone import FeatureBackbone
from .snft import write_feature_file, write_manifest, write_mask

RESIZE = 256
CROP = 224
NORM_MEAN = np.array([0.485, 0.456, 0.406], dtype=np.float32)
NORM_STD = np.array([0.229, 0.224, 0.225], dtype=np.float32)

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff")


def _center_crop_box(size):
    left = (size - CROP) // 2
    return (left, left, left + CROP, left + CROP)


def preprocess_image(path) -> np.ndarray:
    """Load, resize, crop and normalize one image to a (3, 224, 224) float32 array."""
    with Image.open(path) as img:
        img = img.convert("RGB").resize((RESIZE, RESIZE), Image.BILINEAR)
        img = img.crop(_center_crop_box(RESIZE))
    arr = np.asarray(img, dtype=np.float32) / 255.0
    arr = (arr - NORM_MEAN) / NORM_STD
    return arr.transpose(2, 0, 1)


def preprocess_mask(path) -> np.ndarray:
    """Ground-truth mask through the same geometry, nearest-neighbor."""
    with Image.open(path) as img:
        img = img.convert("L").resize((RESIZE, RESIZE), Image.NEAREST)
        img = img.crop(_center_crop_box(RESIZE))
    return np.asarray(img) != 0


def _list_images(directory: Path):
    return sorted(p for p in directory.iterdir()
                  if p.suffix.lower() in IMAGE_SUFFIXES)


def _collect_samples(category_root: Path):
    """Yields (sample_id, split, label, image_path, mask_path_or_None)."""
    train_dir = category_root / "train" / "good"
    if not train_dir.is_dir():
        raise FileNotFoundError(f"missing train/good under {category_root}")
    for path in _list_images(train_dir):
        yield f"train_good_{path.stem}", "train", 0, path, None

    test_dir = category_root / "test"
    if not test_dir.is_dir():
        raise FileNotFoundError(f"missing test/ under {category_root}")
    for defect_dir in sorted(p for p in test_dir.iterdir() if p.is_dir()):
        defect = defect_dir.name
        label = 0 if defect == "good" else 1
        for path in _list_images(defect_dir):
            mask_path = None
            if label == 1:
                candidate = (category_root / "ground_truth" / defect
                             / f"{path.stem}_mask{path.suffix}")
                if not candidate.is_file():
                    candidate = category_root / "ground_truth" / defect / f"{path.stem}_mask.png"
                mask_path = candidate if candidate.is_file() else None
            yield f"test_{defect}_{path.stem}", "test", label, path, mask_path


def export_category(dataset_root, category, backbone="wideresnet50", levels=(2, 3),
                    out_dir="export", pretrained=True, seed=0, batch_size=8,
                    log=None) -> Path:
    """Export one category; returns the manifest path.

    Images that fail to decode are skipped and logged; they do not appear in
    the manifest.  ``pretrained=False`` builds a seeded random trunk (shape
    contract and determinism testing without the weight files).
    """
    import torch

    if log is None:
        log = sys.stderr
    dataset_root = Path(dataset_root)
    out_dir = Path(out_dir)
    (out_dir / "features").mkdir(parents=True, exist_ok=True)
    net = FeatureBackbone(backbone, levels, pretrained=pretrained, seed=seed)

    records = []
    batch_imgs, batch_meta = [], []

    def flush():
        if not batch_imgs:
            return
        stacked = torch.from_numpy(np.stack(batch_imgs))
        level_maps = net.extract(stacked)
        for i, (sample_id, split, label, mask) in enumerate(batch_meta):
            feature_rel = f"features/{sample_id}.snft"
            write_feature_file([(lvl, maps[i]) for lvl, maps in level_maps.items()],
                               out_dir / feature_rel)
            mask_rel = None
            if mask is not None:
                (out_dir / "masks").mkdir(exist_ok=True)
                mask_rel = f"masks/{sample_id}.pgm"
                write_mask(mask, out_dir / mask_rel)
            records.append((sample_id, split, label, feature_rel, mask_rel))
        batch_imgs.clear()
        batch_meta.clear()

    for sample_id, split, label, image_path, mask_path in _collect_samples(dataset_root / category):
        try:
            img = preprocess_image(image_path)
            mask = preprocess_mask(mask_path) if mask_path is not None else None
        except OSError as exc:
            print(f"featexport: skipping {image_path}: {exc}", file=log)
            continue
        batch_imgs.append(img)
        batch_meta.append((sample_id, split, label, mask))
        if len(batch_imgs) >= batch_size:
            flush()
    flush()

    if not records:
        raise FileNotFoundError(f"no decodable images under {dataset_root / category}")
    manifest_path = out_dir / "manifest.json"
    write_manifest(category, (CROP, CROP), records, manifest_path)
    return manifest_path
