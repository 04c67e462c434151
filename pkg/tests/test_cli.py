import json
import os

import numpy as np
import pytest
import torch
from PIL import Image

import mugan.cli as cli
from mugan.cli import build_parser, main, resolve_options
from mugan.data import ATTRIBUTE_NAMES, RAW_HEIGHT, RAW_WIDTH
from mugan.errors import ConfigurationError


def run(*argv):
    return main(list(argv))


class TestParser:
    def test_requires_subcommand(self):
        with pytest.raises(SystemExit):
            build_parser().parse_args([])

    def test_unknown_flag_rejected(self):
        with pytest.raises(SystemExit):
            build_parser().parse_args(["train", "--bogus", "1"])

    def test_version_flag(self, capsys):
        with pytest.raises(SystemExit) as exc:
            build_parser().parse_args(["--version"])
        assert exc.value.code == 0
        assert "mugan" in capsys.readouterr().out

    def test_flags_default_to_none(self):
        args = build_parser().parse_args(["train"])
        assert args.variant is None and args.epochs is None
        assert args.batch_size is None and args.out is None

    def test_all_subcommands_parse(self):
        parser = build_parser()
        for command in ("train", "train-classifier", "eval", "edit", "ablate"):
            assert parser.parse_args([command]).command == command


class TestResolveOptions:
    def test_defaults_pass_through(self):
        args = build_parser().parse_args(["train"])
        opts, explicit = resolve_options(args, cli._TRAIN_DEFAULTS)
        assert opts == cli._TRAIN_DEFAULTS
        assert explicit == set()

    def test_flags_beat_file_beats_defaults(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"epochs": 3, "batch_size": 4}))
        args = build_parser().parse_args(
            ["train", "--config", str(cfg), "--epochs", "7"]
        )
        opts, explicit = resolve_options(args, cli._TRAIN_DEFAULTS)
        assert opts["epochs"] == 7  # flag wins
        assert opts["batch_size"] == 4  # file wins over default
        assert opts["lr"] == cli._TRAIN_DEFAULTS["lr"]
        assert explicit == {"config", "epochs", "batch_size"} - {"config"}

    def test_unknown_file_key_rejected(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"epocs": 3}))
        args = build_parser().parse_args(["train", "--config", str(cfg)])
        with pytest.raises(ConfigurationError, match="unknown key"):
            resolve_options(args, cli._TRAIN_DEFAULTS)

    def test_malformed_json_rejected(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text("{not json")
        args = build_parser().parse_args(["train", "--config", str(cfg)])
        with pytest.raises(ConfigurationError, match="not valid JSON"):
            resolve_options(args, cli._TRAIN_DEFAULTS)

    def test_non_object_json_rejected(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text("[1, 2]")
        args = build_parser().parse_args(["train", "--config", str(cfg)])
        with pytest.raises(ConfigurationError, match="JSON object"):
            resolve_options(args, cli._TRAIN_DEFAULTS)

    def test_missing_file_rejected(self, tmp_path):
        args = build_parser().parse_args(
            ["train", "--config", str(tmp_path / "nope.json")]
        )
        with pytest.raises(ConfigurationError, match="cannot read"):
            resolve_options(args, cli._TRAIN_DEFAULTS)


@pytest.fixture(scope="module")
def trained_run(tmp_path_factory):
    """One tiny CLI training run shared by the eval and edit tests."""
    out = tmp_path_factory.mktemp("cli_train")
    code = run(
        "train",
        "--data", "synthetic",
        "--variant", "AUC_1",
        "--epochs", "1",
        "--batch-size", "4",
        "--n-critic", "2",
        "--synthetic-train", "8",
        "--synthetic-test", "4",
        "--out", str(out),
    )
    assert code == 0
    return out


@pytest.fixture(scope="module")
def trained_classifier(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli_cls")
    code = run(
        "train-classifier",
        "--data", "synthetic",
        "--epochs", "1",
        "--batch-size", "8",
        "--image-size", "32",
        "--synthetic-train", "16",
        "--synthetic-test", "8",
        "--out", str(out),
    )
    assert code == 0
    return out / "classifier.ckpt"


class TestTrainCommand:
    def test_outputs_present(self, trained_run):
        assert (trained_run / "manifest.json").is_file()
        assert (trained_run / "metrics.tsv").is_file()
        assert (trained_run / "final.ckpt").is_file()
        assert (trained_run / "epoch_0001.ckpt").is_file()
        assert (trained_run / "samples_0001.png").is_file()

    def test_manifest_records_resolved_options(self, trained_run):
        manifest = json.loads((trained_run / "manifest.json").read_text())
        assert manifest["command"] == "train"
        assert manifest["options"]["variant"] == "AUC_1"
        assert manifest["options"]["epochs"] == 1
        assert manifest["options"]["lr"] == 0.002  # default carried through
        assert "created" in manifest and "package_version" in manifest

    def test_metrics_log_shape(self, trained_run):
        lines = (trained_run / "metrics.tsv").read_text().strip().split("\n")
        assert lines[0] == "step\tepoch\tphase\tlr\tmetrics"
        # 8 images, batch 4 -> 2 critic steps; n_critic 2 -> 1 generator step
        phases = [l.split("\t")[2] for l in lines[1:]]
        assert phases.count("d") == 2 and phases.count("g") == 1

    def test_resume_continues_run(self, trained_run, capsys):
        code = run(
            "train",
            "--data", "synthetic",
            "--synthetic-train", "8",
            "--synthetic-test", "4",
            "--resume", str(trained_run / "final.ckpt"),
            "--epochs", "2",
            "--out", str(trained_run),
        )
        assert code == 0
        out = capsys.readouterr().out
        assert "resumed" in out and "epoch 1" in out
        assert (trained_run / "epoch_0002.ckpt").is_file()


class TestEvalCommand:
    def test_reconstruction_report(self, trained_run, tmp_path, capsys):
        code = run(
            "eval",
            "--generator", str(trained_run / "final.ckpt"),
            "--mode", "reconstruction",
            "--data", "synthetic",
            "--synthetic-train", "8",
            "--synthetic-test", "4",
            "--limit", "2",
            "--out", str(tmp_path),
        )
        assert code == 0
        out = capsys.readouterr().out
        assert "AUC_1" in out and "psnr" in out
        tsv = (tmp_path / "report.tsv").read_text().strip().split("\n")
        assert len(tsv) == 2
        header = tsv[0].split("\t")
        row = tsv[1].split("\t")
        assert row[header.index("n_images")] == "2"
        assert float(row[header.index("psnr")]) > 0

    def test_accuracy_mode(self, trained_run, trained_classifier, capsys):
        code = run(
            "eval",
            "--generator", str(trained_run / "final.ckpt"),
            "--classifier", str(trained_classifier),
            "--mode", "accuracy",
            "--data", "synthetic",
            "--synthetic-train", "8",
            "--synthetic-test", "4",
            "--limit", "2",
        )
        assert code == 0
        out = capsys.readouterr().out
        assert "per-attribute accuracy" in out
        assert "Eyeglasses" in out

    def test_reference_block(self, trained_run, capsys):
        code = run(
            "eval",
            "--generator", str(trained_run / "final.ckpt"),
            "--mode", "reconstruction",
            "--data", "synthetic",
            "--synthetic-train", "8",
            "--synthetic-test", "4",
            "--limit", "2",
            "--reference",
        )
        assert code == 0
        assert "full-scale reference" in capsys.readouterr().out

    def test_missing_generator_fails(self, capsys):
        assert run("eval", "--data", "synthetic") == 1
        assert "error:" in capsys.readouterr().err

    def test_accuracy_without_classifier_fails(self, trained_run, capsys):
        code = run(
            "eval",
            "--generator", str(trained_run / "final.ckpt"),
            "--mode", "accuracy",
            "--data", "synthetic",
            "--synthetic-train", "8",
            "--synthetic-test", "4",
        )
        assert code == 1
        assert "classifier" in capsys.readouterr().err


class TestClassifierCommand:
    def test_checkpoint_and_summary(self, trained_classifier, capsys):
        assert trained_classifier.is_file()
        manifest = json.loads(
            (trained_classifier.parent / "manifest.json").read_text()
        )
        assert manifest["command"] == "train-classifier"


class TestEditCommand:
    def _square_png(self, path, size=80):
        rng = np.random.default_rng(0)
        arr = rng.integers(0, 256, size=(size, size, 3), dtype=np.uint8)
        Image.fromarray(arr).save(path)

    def test_edit_square_image(self, trained_run, tmp_path, capsys):
        src = tmp_path / "face.png"
        self._square_png(src)
        out = tmp_path / "edits"
        code = run(
            "edit",
            "--generator", str(trained_run / "final.ckpt"),
            "--image", str(src),
            "--set", "Eyeglasses=1",
            "--source", "Male=1,Young=1",
            "--out", str(out),
        )
        assert code == 0
        result = out / "face_Eyeglasses1.png"
        assert result.is_file()
        with Image.open(result) as im:
            assert im.size == (64, 64)  # generator was trained at 64px

    def test_edit_raw_aspect_image(self, trained_run, tmp_path):
        src = tmp_path / "raw.png"
        rng = np.random.default_rng(1)
        arr = rng.integers(0, 256, size=(RAW_HEIGHT, RAW_WIDTH, 3), dtype=np.uint8)
        Image.fromarray(arr).save(src)
        code = run(
            "edit",
            "--generator", str(trained_run / "final.ckpt"),
            "--image", str(src),
            "--set", "Blond_Hair=1",
            "--out", str(tmp_path / "edits2"),
        )
        assert code == 0
        assert (tmp_path / "edits2" / "raw_Blond_Hair1.png").is_file()

    def test_multiple_sets_stack_in_name(self, trained_run, tmp_path):
        src = tmp_path / "face.png"
        self._square_png(src)
        code = run(
            "edit",
            "--generator", str(trained_run / "final.ckpt"),
            "--image", str(src),
            "--set", "Male=1",
            "--set", "Mustache=1",
            "--out", str(tmp_path / "edits3"),
        )
        assert code == 0
        assert (tmp_path / "edits3" / "face_Male1_Mustache1.png").is_file()

    def test_rejects_non_square_image(self, trained_run, tmp_path, capsys):
        src = tmp_path / "wide.png"
        arr = np.zeros((40, 60, 3), dtype=np.uint8)
        Image.fromarray(arr).save(src)
        code = run(
            "edit",
            "--generator", str(trained_run / "final.ckpt"),
            "--image", str(src),
            "--set", "Eyeglasses=1",
            "--out", str(tmp_path / "edits4"),
        )
        assert code == 1
        assert "square" in capsys.readouterr().err

    def test_rejects_bad_assignment(self, trained_run, tmp_path, capsys):
        src = tmp_path / "face.png"
        self._square_png(src)
        for bad in ("Eyeglasses=2", "Eyeglasses", "NoSuchAttr=1"):
            code = run(
                "edit",
                "--generator", str(trained_run / "final.ckpt"),
                "--image", str(src),
                "--set", bad,
                "--out", str(tmp_path / "edits5"),
            )
            assert code == 1

    def test_requires_image_and_set(self, trained_run, capsys):
        gen = str(trained_run / "final.ckpt")
        assert run("edit", "--generator", gen, "--set", "Male=1") == 1
        assert run("edit", "--generator", gen, "--image", "x.png") == 1
        assert run("edit", "--image", "x.png", "--set", "Male=1") == 1


class TestAblateCommand:
    def test_single_variant_table(self, tmp_path, capsys):
        out = tmp_path / "ablation"
        code = run(
            "ablate",
            "--variants", "AUC_1",
            "--epochs", "1",
            "--batch-size", "4",
            "--n-critic", "2",
            "--synthetic-train", "8",
            "--synthetic-test", "4",
            "--limit", "2",
            "--out", str(out),
        )
        assert code == 0
        text = capsys.readouterr().out
        assert "AUC_1" in text
        tsv = (out / "ablation.tsv").read_text().strip().split("\n")
        assert len(tsv) == 2
        assert (out / "manifest.json").is_file()

    def test_invalid_variant_fails_before_training(self, tmp_path, capsys):
        out = tmp_path / "ablation"
        code = run(
            "ablate",
            "--variants", "AUC_1,bogus",
            "--epochs", "1",
            "--out", str(out),
        )
        assert code == 1
        assert not (out / "AUC_1").exists()


class TestMainErrorPaths:
    def test_keyboard_interrupt_exit_code(self, monkeypatch):
        def boom(args):
            raise KeyboardInterrupt

        monkeypatch.setitem(cli._COMMANDS, "train", boom)
        assert run("train") == 130

    def test_package_error_becomes_exit_one(self, tmp_path, capsys):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"wrong": 1}))
        assert run("train", "--config", str(cfg)) == 1
        assert "unknown key" in capsys.readouterr().err
