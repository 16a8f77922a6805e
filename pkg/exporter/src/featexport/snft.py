"""Writers for the SNFT feature-file format, the dataset manifest, and masks.

These are this package's half of the file-format contract with the consumer:

SNFT:  magic "SNFT" | payload | crc32(payload) as little-endian u32
       payload: u16 version=1, u16 level_count, then per level
       (u16 level_index, u32 H, u32 W, u32 C, H*W*C little-endian float32,
       row-major channel-last); level indices strictly increasing.
Manifest: JSON {dataset, image_size: [H, W], samples: [{id, split, label,
       feature_path, mask_path?}]}; paths relative to the manifest directory.
Masks: binary PGM (P5), anomalous pixels 255.
"""

import json
import os
import struct
import zlib
from pathlib import Path

import numpy as np

MAGIC = b"SNFT"
VERSION = 1


def _atomic_write(path, data: bytes) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def write_feature_file(levels, path) -> None:
    """Write [(level_index, float32 HxWxC array), ...] as an SNFT file."""
    levels = sorted(levels, key=lambda pair: pair[0])
    indices = [idx for idx, _ in levels]
    if len(set(indices)) != len(indices):
        raise ValueError(f"duplicate level indices: {indices}")
    parts = [struct.pack("<HH", VERSION, len(levels))]
    for idx, fmap in levels:
        arr = np.ascontiguousarray(fmap, dtype="<f4")
        if arr.ndim != 3:
            raise ValueError(f"level {idx} must be (H, W, C), got {arr.shape}")
        h, w, c = arr.shape
        parts.append(struct.pack("<HIII", idx, h, w, c))
        parts.append(arr.tobytes())
    payload = b"".join(parts)
    _atomic_write(path, MAGIC + payload + struct.pack("<I", zlib.crc32(payload) & 0xFFFFFFFF))


def write_manifest(name, image_hw, samples, path) -> None:
    """``samples``: [(sample_id, split, label, feature_rel, mask_rel_or_None)]."""
    doc = {
        "dataset": name,
        "image_size": [int(image_hw[0]), int(image_hw[1])],
        "samples": [
            {
                "id": sid,
                "split": split,
                "label": int(label),
                "feature_path": feature_rel,
                **({"mask_path": mask_rel} if mask_rel is not None else {}),
            }
            for sid, split, label, feature_rel, mask_rel in samples
        ],
    }
    _atomic_write(path, (json.dumps(doc, indent=2) + "\n").encode("utf-8"))


def write_mask(mask, path) -> None:
    """Binary (H, W) mask as an 8-bit PGM, anomalous pixels 255."""
    mask = np.asarray(mask)
    img = np.where(mask != 0, 255, 0).astype(np.uint8)
    h, w = img.shape
    _atomic_write(path, f"P5\n{w} {h}\n255\n".encode("ascii") + img.tobytes())
