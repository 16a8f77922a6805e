"""CLI behavior: exit codes, output files, determinism, small end-to-end flows."""

import csv
import json

import numpy as np
from anomhead.cli import main
from anomhead.io_formats import read_anomaly_map_raw, read_manifest


def run_cli(capsys, *argv):
    code = main([str(a) for a in argv])
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def synth_small(capsys, out_dir, **flags):
    args = ["synth", out_dir, "--n-train", 20, "--n-test", 10, "--grid", 8, 8,
            "--channels", 8, "--seed", 5]
    for key, value in flags.items():
        args += [f"--{key.replace('_', '-')}", value]
    code, out, _ = run_cli(capsys, *args)
    assert code == 0
    return json.loads(out)["manifest"]


def train_small(capsys, manifest, ckpt, **extra):
    args = ["train", manifest, ckpt, "--levels", 2, "--epochs", 3, "--batch", 4,
            "--seed", 7, "--sigma", 0.5, "--quiet"]
    for key, value in extra.items():
        args += [f"--{key.replace('_', '-')}", value]
    code, out, _ = run_cli(capsys, *args)
    assert code == 0
    return json.loads(out)


# ---------------------------------------------------------------------------


def test_synth_then_train_then_eval_flow(capsys, tmp_path):
    manifest = synth_small(capsys, tmp_path / "data")
    info = train_small(capsys, manifest, tmp_path / "model.snck")
    assert (tmp_path / "model.snck").is_file()
    assert info["channels"] == 8

    code, out, _ = run_cli(capsys, "eval", tmp_path / "model.snck", manifest,
                           "--out", tmp_path / "results.csv")
    assert code == 0
    rows = list(csv.reader((tmp_path / "results.csv").open()))
    assert rows[0] == ["category", "i_auroc", "p_auroc", "threshold", "f1"]
    assert len(rows) == 3  # header + 1 category + average
    assert rows[1][0] == "synthetic-blobs"
    assert rows[2][0] == "average"
    assert 0.0 <= float(rows[1][1]) <= 1.0
    assert rows[1][2] != ""  # masks present -> P-AUROC reported


def test_train_loss_csv_shape(capsys, tmp_path):
    manifest = synth_small(capsys, tmp_path / "data")
    train_small(capsys, manifest, tmp_path / "model.snck")
    rows = list(csv.reader((tmp_path / "model.snck.loss.csv").open()))
    assert rows[0] == ["epoch", "mean_loss", "wall_ms"]
    assert len(rows) == 4  # header + 3 epochs
    assert [r[0] for r in rows[1:]] == ["0", "1", "2"]


def loss_trace_columns(path):
    """Deterministic part of a loss CSV: (epoch, mean_loss), timing dropped."""
    rows = list(csv.reader(path.open()))
    return [(r[0], r[1]) for r in rows[1:]]


def test_fixed_seed_gives_identical_checkpoint_bytes(capsys, tmp_path):
    manifest = synth_small(capsys, tmp_path / "data")
    train_small(capsys, manifest, tmp_path / "a.snck")
    train_small(capsys, manifest, tmp_path / "b.snck")
    assert (tmp_path / "a.snck").read_bytes() == (tmp_path / "b.snck").read_bytes()
    assert (loss_trace_columns(tmp_path / "a.snck.loss.csv")
            == loss_trace_columns(tmp_path / "b.snck.loss.csv"))


def test_infer_manifest_and_single_file_agree_bitexact(capsys, tmp_path):
    manifest_path = synth_small(capsys, tmp_path / "data")
    train_small(capsys, manifest_path, tmp_path / "model.snck")
    code, _, _ = run_cli(capsys, "infer", tmp_path / "model.snck", manifest_path,
                         tmp_path / "maps", "--split", "test")
    assert code == 0
    manifest = read_manifest(manifest_path)
    rec = manifest.split("test")[0]
    batch_map = read_anomaly_map_raw(tmp_path / "maps" / f"{rec.sample_id}.snam")

    code, _, _ = run_cli(capsys, "infer", tmp_path / "model.snck",
                         manifest.feature_file(rec), tmp_path / "solo",
                         "--image-size", manifest.image_height, manifest.image_width)
    assert code == 0
    solo_map = read_anomaly_map_raw(tmp_path / "solo" / f"{rec.sample_id}.snam")
    assert np.array_equal(batch_map, solo_map)


def test_infer_outputs_are_deterministic(capsys, tmp_path):
    manifest = synth_small(capsys, tmp_path / "data")
    train_small(capsys, manifest, tmp_path / "model.snck")
    run_cli(capsys, "infer", tmp_path / "model.snck", manifest, tmp_path / "m1")
    run_cli(capsys, "infer", tmp_path / "model.snck", manifest, tmp_path / "m2")
    for p1 in sorted((tmp_path / "m1").iterdir()):
        p2 = tmp_path / "m2" / p1.name
        assert p1.read_bytes() == p2.read_bytes()


def test_infer_gray_format_writes_pgm_and_sidecar(capsys, tmp_path):
    manifest = synth_small(capsys, tmp_path / "data")
    train_small(capsys, manifest, tmp_path / "model.snck")
    code, _, _ = run_cli(capsys, "infer", tmp_path / "model.snck", manifest,
                         tmp_path / "maps", "--map-format", "gray")
    assert code == 0
    pgms = list((tmp_path / "maps").glob("*.pgm"))
    assert pgms
    assert pgms[0].read_bytes().startswith(b"P5")
    sidecar = json.loads((pgms[0].with_name(pgms[0].name + ".json")).read_text())
    assert "image_score" in sidecar


def test_eval_without_masks_marks_pixel_auroc_absent(capsys, tmp_path):
    manifest_path = synth_small(capsys, tmp_path / "data")
    train_small(capsys, manifest_path, tmp_path / "model.snck")
    doc = json.loads((tmp_path / "data" / "manifest.json").read_text())
    for s in doc["samples"]:
        s.pop("mask_path", None)
    (tmp_path / "data" / "manifest.json").write_text(json.dumps(doc))
    code, _, _ = run_cli(capsys, "eval", tmp_path / "model.snck", manifest_path,
                         "--out", tmp_path / "nomask.csv")
    assert code == 0
    rows = list(csv.reader((tmp_path / "nomask.csv").open()))
    assert rows[1][1] != ""   # I-AUROC present
    assert rows[1][2] == ""   # P-AUROC absent
    assert rows[1][4] != ""   # F1 falls back to image scores


def test_eval_odd_pair_count_is_usage_error(capsys, tmp_path):
    manifest = synth_small(capsys, tmp_path / "data")
    code, _, err = run_cli(capsys, "eval", manifest, "--out", tmp_path / "x.csv")
    assert code == 2


def test_missing_manifest_is_data_error(capsys, tmp_path):
    code, _, err = run_cli(capsys, "train", tmp_path / "nope.json", tmp_path / "m.snck")
    assert code == 3


def test_protocol_violation_is_data_error(capsys, tmp_path):
    manifest_path = synth_small(capsys, tmp_path / "data")
    doc = json.loads((tmp_path / "data" / "manifest.json").read_text())
    doc["samples"][0]["label"] = 1  # train sample marked anomalous
    (tmp_path / "data" / "manifest.json").write_text(json.dumps(doc))
    code, _, err = run_cli(capsys, "train", manifest_path, tmp_path / "m.snck")
    assert code == 3
    assert "normal" in err


def test_bench_zero_iters_is_usage_error(capsys):
    code, _, _ = run_cli(capsys, "bench", "--shape", 4, 4, 8, "--iters", 0)
    assert code == 2


def test_bench_reports_stages_and_warmup(capsys):
    code, out, err = run_cli(capsys, "bench", "--shape", 6, 6, 8, "--iters", 3,
                             "--warmup", 1, "--out-scale", 2, "--seed", 1)
    assert code == 0
    report = json.loads(out)
    for key in ("adaptor_ms", "discriminator_ms", "postprocess_ms",
                "images_per_sec", "warmup_excluded"):
        assert key in report
    assert report["warmup_excluded"] == 1
    assert report["shape"] == [6, 6, 8]


def test_bench_repeated_runs_differ_only_in_timing_fields(capsys):
    argv = ["bench", "--shape", 5, 5, 6, "--iters", 2, "--warmup", 1, "--seed", 3]
    _, out1, _ = run_cli(capsys, *argv)
    _, out2, _ = run_cli(capsys, *argv)
    r1, r2 = json.loads(out1), json.loads(out2)
    timing = {"adaptor_ms", "discriminator_ms", "postprocess_ms", "total_ms", "images_per_sec"}
    for key in r1:
        if key not in timing:
            assert r1[key] == r2[key], key


def test_gradcheck_passes_and_emits_json(capsys):
    code, out, _ = run_cli(capsys, "gradcheck", "--configs", 4, "--seed", 2)
    assert code == 0
    report = json.loads(out)
    assert report["passed"] is True
    assert report["max_rel_error"] < 1e-4


def test_gradcheck_corrupted_gradient_fails_with_numeric_exit(capsys):
    code, out, _ = run_cli(capsys, "gradcheck", "--configs", 2, "--seed", 2, "--corrupt")
    assert code == 4
    assert json.loads(out)["passed"] is False


def test_synth_same_seed_same_bytes_through_cli(capsys, tmp_path):
    synth_small(capsys, tmp_path / "a")
    synth_small(capsys, tmp_path / "b")
    a = sorted((tmp_path / "a").rglob("*.snft"))
    b = sorted((tmp_path / "b").rglob("*.snft"))
    assert [p.name for p in a] == [p.name for p in b]
    assert all(x.read_bytes() == y.read_bytes() for x, y in zip(a, b))


def test_train_defaults_match_reference_configuration():
    from anomhead.cli import build_parser

    args = build_parser().parse_args(["train", "m.json", "out.snck"])
    assert args.sigma == 0.015
    assert args.noise_mean == 0.0
    assert args.patch_size == 3
    assert args.levels == [2, 3]
    assert args.adaptor == "linear"
    assert args.loss == "trunc_l1"
    assert args.epochs == 160
    assert args.batch == 4
    assert args.lr_adaptor == 1e-4
    assert args.lr_disc == 2e-4
    assert args.weight_decay == 1e-5
    assert (args.th_pos, args.th_neg) == (0.5, -0.5)

    infer_args = build_parser().parse_args(["infer", "c", "s", "d"])
    assert infer_args.smooth_sigma == 4.0
    assert infer_args.score_after_smoothing is False


def test_identity_adaptor_flag_trains_without_adaptor(capsys, tmp_path):
    manifest = synth_small(capsys, tmp_path / "data")
    train_small(capsys, manifest, tmp_path / "nofa.snck", adaptor="identity")
    from anomhead.io_formats import read_checkpoint

    ckpt = read_checkpoint(tmp_path / "nofa.snck")
    assert ckpt.head.adaptor.variant == "identity"
    assert ckpt.head.adaptor.weight is None


def test_eval_multiple_pairs_one_row_each_plus_average(capsys, tmp_path):
    manifest = synth_small(capsys, tmp_path / "data")
    train_small(capsys, manifest, tmp_path / "model.snck")
    code, _, _ = run_cli(capsys, "eval",
                         tmp_path / "model.snck", manifest,
                         tmp_path / "model.snck", manifest,
                         "--out", tmp_path / "multi.csv")
    assert code == 0
    rows = list(csv.reader((tmp_path / "multi.csv").open()))
    assert len(rows) == 4  # header + 2 categories + average


def test_infer_rejects_empty_split(capsys, tmp_path):
    manifest = synth_small(capsys, tmp_path / "data")
    train_small(capsys, manifest, tmp_path / "model.snck")
    # corrupt the manifest to have no train samples, then ask for train split
    doc = json.loads((tmp_path / "data" / "manifest.json").read_text())
    doc["samples"] = [s for s in doc["samples"] if s["split"] == "test"]
    (tmp_path / "data" / "manifest.json").write_text(json.dumps(doc))
    code, _, _ = run_cli(capsys, "infer", tmp_path / "model.snck", manifest,
                         tmp_path / "maps", "--split", "train")
    assert code == 2
