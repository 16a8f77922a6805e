"""Bit-exact persistence: feature files, manifests, checkpoints, map outputs.

Binary layouts are little-endian with a 4-byte magic up front and a CRC32 of
the payload at the end; every writer/reader pair round-trips exactly.  Writers
go through a temp file renamed into place, so readers never observe partial
output.

Formats
-------
SNFT feature file:    magic "SNFT" | payload | crc32(payload) as u32
    payload: u16 version=1, u16 level_count, then per level
             (u16 level_index, u32 H, u32 W, u32 C, H*W*C little-endian f32,
             row-major channel-last); level indices strictly increasing.
SNCK checkpoint:      magic "SNCK" | payload | crc32, see _pack_checkpoint.
SNAM raw anomaly map: magic "SNAM" | payload | crc32
    payload: u16 version=1, u32 H, u32 W, H*W f32.
Manifest:             JSON document listing samples (see read_manifest).
Masks / gray maps:    binary PGM (P5), 8-bit.
"""

import json
import os
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    BadMagicError,
    ChecksumError,
    FileFormatError,
    InvalidArgumentError,
    ManifestError,
    ProtocolViolationError,
    TruncatedFileError,
    UnsupportedVersionError,
)
from .model import (
    ADAPTOR_VARIANTS,
    AdaptorParams,
    DiscriminatorParams,
    HeadParams,
    NoiseConfig,
)
from .pipeline import HierarchyStack, PipelineConfig
from .training import LOSS_KINDS, TrainConfig

__all__ = [
    "FEATURE_MAGIC",
    "CHECKPOINT_MAGIC",
    "ANOMALY_MAGIC",
    "Checkpoint",
    "SampleRecord",
    "DatasetManifest",
    "write_feature_file",
    "read_feature_file",
    "write_checkpoint",
    "read_checkpoint",
    "write_manifest",
    "read_manifest",
    "write_anomaly_map",
    "read_anomaly_map_raw",
    "read_map_sidecar",
    "write_mask",
    "read_mask",
]

FEATURE_MAGIC = b"SNFT"
CHECKPOINT_MAGIC = b"SNCK"
ANOMALY_MAGIC = b"SNAM"
FORMAT_VERSION = 1


def _atomic_write(path, data: bytes) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def _frame(magic: bytes, payload: bytes) -> bytes:
    return magic + payload + struct.pack("<I", zlib.crc32(payload) & 0xFFFFFFFF)


def _unframe(magic: bytes, raw: bytes, what: str) -> bytes:
    """Validate magic and CRC; return the payload bytes."""
    if len(raw) < len(magic):
        raise TruncatedFileError(f"{what}: file is empty or shorter than its magic")
    if raw[: len(magic)] != magic:
        raise BadMagicError(f"{what}: expected magic {magic!r}, got {raw[:len(magic)]!r}")
    if len(raw) < len(magic) + 4:
        raise TruncatedFileError(f"{what}: file ends before the checksum")
    payload = raw[len(magic):-4]
    (stored,) = struct.unpack("<I", raw[-4:])
    actual = zlib.crc32(payload) & 0xFFFFFFFF
    if stored != actual:
        raise ChecksumError(f"{what}: CRC32 mismatch (stored {stored:#010x}, computed {actual:#010x})")
    return payload


class _Reader:
    """Sequential struct reader over a payload with truncation checks."""

    def __init__(self, payload: bytes, what: str):
        self.payload = payload
        self.offset = 0
        self.what = what

    def unpack(self, fmt: str):
        size = struct.calcsize(fmt)
        if self.offset + size > len(self.payload):
            raise TruncatedFileError(f"{self.what}: payload ends inside a {fmt!r} field")
        vals = struct.unpack_from(fmt, self.payload, self.offset)
        self.offset += size
        return vals

    def array(self, count: int, dtype) -> np.ndarray:
        size = count * np.dtype(dtype).itemsize
        if self.offset + size > len(self.payload):
            raise TruncatedFileError(f"{self.what}: payload ends inside an array of {count} items")
        out = np.frombuffer(self.payload, dtype=np.dtype(dtype).newbyteorder("<"),
                            count=count, offset=self.offset)
        self.offset += size
        return out.astype(dtype)

    def expect_end(self) -> None:
        if self.offset != len(self.payload):
            raise FileFormatError(
                f"{self.what}: {len(self.payload) - self.offset} trailing bytes after payload"
            )

    def version(self) -> int:
        (v,) = self.unpack("<H")
        if v != FORMAT_VERSION:
            raise UnsupportedVersionError(f"{self.what}: version {v} not supported (want {FORMAT_VERSION})")
        return v


def _f32_bytes(arr: np.ndarray) -> bytes:
    return np.ascontiguousarray(arr, dtype="<f4").tobytes()


# ---------------------------------------------------------------------------
# Feature files
# ---------------------------------------------------------------------------


def write_feature_file(stack: HierarchyStack, path) -> None:
    parts = [struct.pack("<HH", FORMAT_VERSION, len(stack.levels))]
    for idx, fmap in stack.levels:
        h, w, c = fmap.shape
        parts.append(struct.pack("<HIII", idx, h, w, c))
        parts.append(_f32_bytes(fmap))
    _atomic_write(path, _frame(FEATURE_MAGIC, b"".join(parts)))


def read_feature_file(path) -> HierarchyStack:
    raw = Path(path).read_bytes()
    rd = _Reader(_unframe(FEATURE_MAGIC, raw, str(path)), str(path))
    rd.version()
    (n_levels,) = rd.unpack("<H")
    if n_levels < 1:
        raise FileFormatError(f"{path}: feature file declares zero levels")
    levels = []
    prev_idx = None
    for _ in range(n_levels):
        idx, h, w, c = rd.unpack("<HIII")
        if prev_idx is not None and idx <= prev_idx:
            raise FileFormatError(f"{path}: level indices not strictly increasing ({prev_idx} -> {idx})")
        prev_idx = idx
        if min(h, w, c) < 1:
            raise FileFormatError(f"{path}: level {idx} declares an empty dimension")
        data = rd.array(h * w * c, np.float32).reshape(h, w, c)
        levels.append((idx, data))
    rd.expect_end()
    return HierarchyStack(levels)


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


@dataclass
class Checkpoint:
    """Everything needed to reproduce inference: pipeline, head, train config."""

    pipeline: PipelineConfig
    head: HeadParams
    train_config: TrainConfig


def _pack_checkpoint(ckpt: Checkpoint) -> bytes:
    head, cfg = ckpt.head, ckpt.train_config
    disc = head.discriminator
    parts = [struct.pack("<H", FORMAT_VERSION)]
    parts.append(struct.pack("<HH", ckpt.pipeline.patch_size, len(ckpt.pipeline.selected_levels)))
    parts.append(struct.pack(f"<{len(ckpt.pipeline.selected_levels)}H", *ckpt.pipeline.selected_levels))

    variant_id = ADAPTOR_VARIANTS.index(head.adaptor.variant)
    channels = disc.in_dim
    parts.append(struct.pack("<BI", variant_id, channels))
    if head.adaptor.weight is not None:
        parts.append(_f32_bytes(head.adaptor.weight))
    if head.adaptor.weight2 is not None:
        parts.append(_f32_bytes(head.adaptor.weight2))

    parts.append(struct.pack("<I", disc.hidden_dim))
    for arr in (disc.w1, disc.b1, disc.bn_gamma, disc.bn_beta,
                disc.bn_running_mean, disc.bn_running_var, disc.w2, disc.b2):
        parts.append(_f32_bytes(arr))
    parts.append(struct.pack("<ddd", disc.leaky_slope, disc.bn_momentum, disc.bn_eps))

    parts.append(struct.pack(
        "<dddddIIB",
        cfg.th_pos, cfg.th_neg, cfg.lr_adaptor, cfg.lr_discriminator, cfg.weight_decay,
        cfg.epochs, cfg.batch_size, LOSS_KINDS.index(cfg.loss_kind),
    ))
    parts.append(struct.pack("<ddqq", cfg.noise.mean, cfg.noise.sigma,
                             cfg.noise.seed, cfg.seed))
    return b"".join(parts)


def write_checkpoint(ckpt: Checkpoint, path) -> None:
    _atomic_write(path, _frame(CHECKPOINT_MAGIC, _pack_checkpoint(ckpt)))


def read_checkpoint(path) -> Checkpoint:
    raw = Path(path).read_bytes()
    rd = _Reader(_unframe(CHECKPOINT_MAGIC, raw, str(path)), str(path))
    rd.version()
    patch_size, n_levels = rd.unpack("<HH")
    levels = rd.unpack(f"<{n_levels}H")
    pipeline = PipelineConfig(patch_size=patch_size, selected_levels=tuple(levels))

    variant_id, channels = rd.unpack("<BI")
    if variant_id >= len(ADAPTOR_VARIANTS):
        raise FileFormatError(f"{path}: unknown adaptor variant id {variant_id}")
    variant = ADAPTOR_VARIANTS[variant_id]
    weight = weight2 = None
    if variant in ("linear", "mlp"):
        weight = rd.array(channels * channels, np.float32).reshape(channels, channels)
    if variant == "mlp":
        weight2 = rd.array(channels * channels, np.float32).reshape(channels, channels)
    adaptor = AdaptorParams(variant=variant, weight=weight, weight2=weight2)

    (hidden,) = rd.unpack("<I")
    w1 = rd.array(channels * hidden, np.float32).reshape(channels, hidden)
    b1 = rd.array(hidden, np.float32)
    gamma = rd.array(hidden, np.float32)
    beta = rd.array(hidden, np.float32)
    running_mean = rd.array(hidden, np.float32)
    running_var = rd.array(hidden, np.float32)
    w2 = rd.array(hidden, np.float32)
    b2 = rd.array(1, np.float32)
    leaky_slope, bn_momentum, bn_eps = rd.unpack("<ddd")
    disc = DiscriminatorParams(
        w1=w1, b1=b1, bn_gamma=gamma, bn_beta=beta,
        bn_running_mean=running_mean, bn_running_var=running_var,
        w2=w2, b2=b2, leaky_slope=leaky_slope, bn_momentum=bn_momentum, bn_eps=bn_eps,
    )

    (th_pos, th_neg, lr_a, lr_d, wd, epochs, batch_size, loss_id) = rd.unpack("<dddddIIB")
    if loss_id >= len(LOSS_KINDS):
        raise FileFormatError(f"{path}: unknown loss kind id {loss_id}")
    noise_mean, noise_sigma, noise_seed, seed = rd.unpack("<ddqq")
    rd.expect_end()
    cfg = TrainConfig(
        th_pos=th_pos, th_neg=th_neg, lr_adaptor=lr_a, lr_discriminator=lr_d,
        weight_decay=wd, epochs=epochs, batch_size=batch_size,
        noise=NoiseConfig(mean=noise_mean, sigma=noise_sigma, seed=noise_seed),
        loss_kind=LOSS_KINDS[loss_id], seed=seed,
    )
    head = HeadParams(adaptor=adaptor, discriminator=disc, finalized=True)
    return Checkpoint(pipeline=pipeline, head=head, train_config=cfg)


# ---------------------------------------------------------------------------
# Manifests
# ---------------------------------------------------------------------------

SPLITS = ("train", "test")


@dataclass
class SampleRecord:
    sample_id: str
    split: str              # "train" | "test"
    label: int              # 0 normal, 1 anomalous
    feature_path: str       # relative to the manifest directory
    mask_path: str | None = None


@dataclass
class DatasetManifest:
    """Binds feature files to labels and optional pixel masks for one category."""

    name: str
    image_height: int
    image_width: int
    samples: list
    root: Path = Path(".")

    def split(self, which: str):
        return [s for s in self.samples if s.split == which]

    def feature_file(self, sample: SampleRecord) -> Path:
        return self.root / sample.feature_path

    def mask_file(self, sample: SampleRecord):
        return None if sample.mask_path is None else self.root / sample.mask_path


def write_manifest(manifest: DatasetManifest, path) -> None:
    doc = {
        "dataset": manifest.name,
        "image_size": [manifest.image_height, manifest.image_width],
        "samples": [
            {
                "id": s.sample_id,
                "split": s.split,
                "label": s.label,
                "feature_path": s.feature_path,
                **({"mask_path": s.mask_path} if s.mask_path is not None else {}),
            }
            for s in manifest.samples
        ],
    }
    _atomic_write(path, (json.dumps(doc, indent=2) + "\n").encode("utf-8"))


def read_manifest(path) -> DatasetManifest:
    """Parse and validate a manifest; all referenced files must exist."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text("utf-8"))
    except (OSError, ValueError) as exc:
        raise ManifestError(f"{path}: cannot parse manifest: {exc}") from exc
    for key in ("dataset", "image_size", "samples"):
        if key not in doc:
            raise ManifestError(f"{path}: manifest missing {key!r}")
    image_size = doc["image_size"]
    if (not isinstance(image_size, list) or len(image_size) != 2
            or any(int(v) < 1 for v in image_size)):
        raise ManifestError(f"{path}: image_size must be [H, W] with positive entries")

    samples = []
    seen = set()
    root = path.parent
    for i, rec in enumerate(doc["samples"]):
        try:
            sample = SampleRecord(
                sample_id=str(rec["id"]),
                split=str(rec["split"]),
                label=int(rec["label"]),
                feature_path=str(rec["feature_path"]),
                mask_path=str(rec["mask_path"]) if rec.get("mask_path") is not None else None,
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ManifestError(f"{path}: sample {i}: {exc}") from exc
        if sample.sample_id in seen:
            raise ManifestError(f"{path}: duplicate sample id {sample.sample_id!r}")
        seen.add(sample.sample_id)
        if sample.split not in SPLITS:
            raise ManifestError(f"{path}: sample {sample.sample_id!r} has split {sample.split!r}")
        if sample.label not in (0, 1):
            raise ManifestError(f"{path}: sample {sample.sample_id!r} has label {sample.label}")
        if sample.split == "train" and sample.label != 0:
            raise ProtocolViolationError(
                f"{path}: train sample {sample.sample_id!r} is labeled anomalous; "
                "the train split must contain only normal samples"
            )
        if not (root / sample.feature_path).is_file():
            raise ManifestError(f"{path}: feature file missing: {sample.feature_path}")
        if sample.mask_path is not None and not (root / sample.mask_path).is_file():
            raise ManifestError(f"{path}: mask file missing: {sample.mask_path}")
        samples.append(sample)

    return DatasetManifest(
        name=str(doc["dataset"]),
        image_height=int(image_size[0]),
        image_width=int(image_size[1]),
        samples=samples,
        root=root,
    )


# ---------------------------------------------------------------------------
# Anomaly maps and masks
# ---------------------------------------------------------------------------

MAP_FORMATS = ("raw", "gray")


def _sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def write_anomaly_map(result, path, fmt: str = "raw") -> None:
    """Persist an anomaly map plus a JSON sidecar with min/max/image_score.

    ``raw`` writes lossless float32 (SNAM framing); ``gray`` writes an 8-bit
    PGM image min-max normalized per map, with the normalization recorded in
    the sidecar so absolute scores stay reconstructible to 1/255 of the range.
    A constant map has no usable range; it is written as all zeros and flagged
    ``degenerate`` in the sidecar.
    """
    if fmt not in MAP_FORMATS:
        raise InvalidArgumentError(f"map format must be one of {MAP_FORMATS}, got {fmt!r}")
    amap = np.ascontiguousarray(result.map, dtype=np.float32)
    lo, hi = float(amap.min()), float(amap.max())
    if fmt == "raw":
        h, w = amap.shape
        payload = struct.pack("<HII", FORMAT_VERSION, h, w) + _f32_bytes(amap)
        _atomic_write(path, _frame(ANOMALY_MAGIC, payload))
    else:
        if hi > lo:
            scaled = np.round((amap.astype(np.float64) - lo) / (hi - lo) * 255.0)
        else:
            scaled = np.zeros_like(amap, dtype=np.float64)
        _write_pgm(scaled.astype(np.uint8), path)
    sidecar = {
        "format": fmt,
        "min": lo,
        "max": hi,
        "image_score": float(result.image_score),
        "degenerate": bool(hi == lo),
    }
    _atomic_write(_sidecar_path(path), (json.dumps(sidecar, indent=2) + "\n").encode("utf-8"))


def read_anomaly_map_raw(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    rd = _Reader(_unframe(ANOMALY_MAGIC, raw, str(path)), str(path))
    rd.version()
    h, w = rd.unpack("<II")
    data = rd.array(h * w, np.float32).reshape(h, w)
    rd.expect_end()
    return data


def read_map_sidecar(path) -> dict:
    return json.loads(_sidecar_path(path).read_text("utf-8"))


def _write_pgm(img: np.ndarray, path) -> None:
    h, w = img.shape
    header = f"P5\n{w} {h}\n255\n".encode("ascii")
    _atomic_write(path, header + img.astype(np.uint8).tobytes())


def _read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if not raw.startswith(b"P5"):
        raise BadMagicError(f"{path}: not a binary PGM (P5) file")
    # Header: three whitespace-separated tokens (width, height, maxval),
    # comments allowed, then a single whitespace byte before the pixel data.
    pos = 2
    tokens = []
    while len(tokens) < 3:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if pos < len(raw) and raw[pos:pos + 1] == b"#":
            while pos < len(raw) and raw[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise TruncatedFileError(f"{path}: PGM header ends prematurely")
        tokens.append(raw[start:pos])
    pos += 1  # the single whitespace after maxval
    w, h, maxval = (int(t) for t in tokens)
    if maxval != 255:
        raise UnsupportedVersionError(f"{path}: only 8-bit PGM supported, maxval={maxval}")
    if len(raw) - pos < w * h:
        raise TruncatedFileError(f"{path}: PGM pixel data truncated")
    return np.frombuffer(raw, dtype=np.uint8, count=w * h, offset=pos).reshape(h, w)


def write_mask(mask: np.ndarray, path) -> None:
    """Binary mask as PGM: anomalous pixels 255, normal 0."""
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise InvalidArgumentError(f"mask must be 2-D, got shape {mask.shape}")
    _write_pgm(np.where(mask != 0, 255, 0).astype(np.uint8), path)


def read_mask(path) -> np.ndarray:
    """Read a PGM mask; nonzero pixels are anomalous."""
    return _read_pgm(path) != 0
