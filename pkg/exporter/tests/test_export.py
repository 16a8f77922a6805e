"""Exporter contract: shapes, determinism, format bytes, dataset handling."""

import json
import struct
import zlib
from pathlib import Path

import numpy as np
import pytest
from PIL import Image

from featexport import export_category, preprocess_image, preprocess_mask
from featexport.backbone import BACKBONES, FeatureBackbone
from featexport.snft import write_feature_file


def parse_snft(path):
    """Independent byte-level parse of an SNFT file."""
    raw = Path(path).read_bytes()
    assert raw[:4] == b"SNFT"
    payload, (crc,) = raw[4:-4], struct.unpack("<I", raw[-4:])
    assert zlib.crc32(payload) & 0xFFFFFFFF == crc
    version, count = struct.unpack_from("<HH", payload, 0)
    assert version == 1
    offset = 4
    levels = {}
    prev = -1
    for _ in range(count):
        idx, h, w, c = struct.unpack_from("<HIII", payload, offset)
        assert idx > prev
        prev = idx
        offset += 14
        n = h * w * c
        data = np.frombuffer(payload, dtype="<f4", count=n, offset=offset)
        offset += 4 * n
        levels[idx] = data.reshape(h, w, c)
    assert offset == len(payload)
    return levels


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    """Minimal MVTec-style tree with deterministic random images."""
    root = tmp_path_factory.mktemp("mvtec") / "widget"
    rng = np.random.default_rng(7)
    layout = {
        "train/good": 3,
        "test/good": 2,
        "test/scratch": 2,
    }
    for rel, count in layout.items():
        directory = root / rel
        directory.mkdir(parents=True)
        for i in range(count):
            arr = rng.integers(0, 255, size=(260, 310, 3), dtype=np.uint8)
            Image.fromarray(arr, "RGB").save(directory / f"{i:03d}.png")
    gt = root / "ground_truth" / "scratch"
    gt.mkdir(parents=True)
    for i in range(2):
        mask = np.zeros((260, 310), dtype=np.uint8)
        mask[30 + i * 10:90, 40:150] = 255
        Image.fromarray(mask, "L").save(gt / f"{i:03d}_mask.png")
    return root.parent


@pytest.fixture(scope="module")
def exported(dataset, tmp_path_factory):
    out = tmp_path_factory.mktemp("export")
    manifest = export_category(dataset_root=dataset, category="widget",
                               levels=(2, 3), out_dir=out,
                               pretrained=False, seed=0, batch_size=3)
    return out, manifest


def test_wideresnet50_level_shapes(exported):
    out, manifest = exported
    doc = json.loads(Path(manifest).read_text())
    first = doc["samples"][0]
    levels = parse_snft(out / first["feature_path"])
    assert levels[2].shape == (28, 28, 512)
    assert levels[3].shape == (14, 14, 1024)


def test_manifest_structure_and_protocol(exported):
    out, manifest = exported
    doc = json.loads(Path(manifest).read_text())
    assert doc["dataset"] == "widget"
    assert doc["image_size"] == [224, 224]
    samples = doc["samples"]
    assert len(samples) == 7
    train = [s for s in samples if s["split"] == "train"]
    assert len(train) == 3 and all(s["label"] == 0 for s in train)
    defects = [s for s in samples if s["label"] == 1]
    assert len(defects) == 2
    assert all("mask_path" in s for s in defects)
    for s in samples:
        assert (out / s["feature_path"]).is_file()
        if s.get("mask_path"):
            assert (out / s["mask_path"]).is_file()


def test_masks_go_through_the_same_geometry(exported, dataset):
    mask = preprocess_mask(dataset / "widget" / "ground_truth" / "scratch" / "000_mask.png")
    assert mask.shape == (224, 224)
    assert mask.any() and not mask.all()


def test_reexport_is_byte_identical(dataset, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        export_category(dataset_root=dataset, category="widget", levels=(2, 3),
                        out_dir=out, pretrained=False, seed=0, batch_size=2)
    files_a = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
    files_b = sorted(p.relative_to(b) for p in b.rglob("*") if p.is_file())
    assert files_a == files_b
    for rel in files_a:
        assert (a / rel).read_bytes() == (b / rel).read_bytes(), rel


def test_exported_tensors_are_finite(exported):
    out, manifest = exported
    doc = json.loads(Path(manifest).read_text())
    for s in doc["samples"]:
        for fmap in parse_snft(out / s["feature_path"]).values():
            assert np.isfinite(fmap).all()


def test_levels_1_through_3_supported(dataset, tmp_path):
    manifest = export_category(dataset_root=dataset, category="widget",
                               levels=(1, 2, 3), out_dir=tmp_path / "l123",
                               pretrained=False, seed=0)
    doc = json.loads(Path(manifest).read_text())
    levels = parse_snft(tmp_path / "l123" / doc["samples"][0]["feature_path"])
    assert levels[1].shape == (56, 56, 256)
    assert levels[2].shape == (28, 28, 512)
    assert levels[3].shape == (14, 14, 1024)


def test_resnet18_shapes(dataset, tmp_path):
    manifest = export_category(dataset_root=dataset, category="widget",
                               backbone="resnet18", levels=(2, 3),
                               out_dir=tmp_path / "r18", pretrained=False, seed=0)
    doc = json.loads(Path(manifest).read_text())
    levels = parse_snft(tmp_path / "r18" / doc["samples"][0]["feature_path"])
    assert levels[2].shape == (28, 28, 128)
    assert levels[3].shape == (14, 14, 256)


def test_undecodable_image_is_skipped_with_log(dataset, tmp_path, capsys):
    broken_root = tmp_path / "broken_ds"
    import shutil

    shutil.copytree(dataset / "widget", broken_root / "widget")
    (broken_root / "widget" / "train" / "good" / "zzz.png").write_bytes(b"not an image")
    manifest = export_category(dataset_root=broken_root, category="widget",
                               levels=(2,), out_dir=tmp_path / "broken_out",
                               pretrained=False, seed=0)
    doc = json.loads(Path(manifest).read_text())
    ids = [s["id"] for s in doc["samples"]]
    assert "train_good_zzz" not in ids
    assert len([s for s in doc["samples"] if s["split"] == "train"]) == 3
    assert "skipping" in capsys.readouterr().err


def test_preprocessing_shape_and_normalization():
    rng = np.random.default_rng(0)
    img = Image.fromarray(rng.integers(0, 255, size=(100, 400, 3), dtype=np.uint8), "RGB")
    try:
        path = Path("tmp_prep_check.png")
        img.save(path)
        arr = preprocess_image(path)
        assert arr.shape == (3, 224, 224)
        assert arr.dtype == np.float32
        # Normalized pixel values live in roughly [-2.7, 2.7].
        assert -3.0 < arr.min() and arr.max() < 3.0
    finally:
        path.unlink(missing_ok=True)


def test_backbone_rejects_bad_configuration():
    with pytest.raises(ValueError):
        FeatureBackbone("vgg16", (2, 3), pretrained=False)
    with pytest.raises(ValueError):
        FeatureBackbone("resnet18", (0, 5), pretrained=False)
    assert set(BACKBONES) == {"wideresnet50", "resnet18", "resnet50", "resnet101"}


def test_snft_writer_rejects_duplicates(tmp_path):
    fmap = np.zeros((2, 2, 1), dtype=np.float32)
    with pytest.raises(ValueError):
        write_feature_file([(2, fmap), (2, fmap)], tmp_path / "dup.snft")


def test_missing_dataset_raises(tmp_path):
    with pytest.raises(FileNotFoundError):
        export_category(dataset_root=tmp_path, category="nothing",
                        out_dir=tmp_path / "out", pretrained=False)
