"""A module for testing the cli.py module."""

import json

import numpy as np
import pytest

import cli
import tensor as T
from model import VisionLanguageModel
from utils import Configuration

TINY_CONFIG = """\
[stage]
stage = 3
batch_size = 4
max_steps = 2
eval_interval = 1
max_train_samples = 4
lr = 0.001

[model]
image_size = 32
encoder_channels = 4,4,8
feature_dim = 8
norm_groups = 2
d_model = 16
encoder_layers = 1
decoder_layers = 1
dropout = 0.0
stochastic_depth = 0.0
"""


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "tiny.ini"
    path.write_text(TINY_CONFIG)
    return path


@pytest.fixture
def trained(built, config_file, tmp_path):
    dataset_dir, _ = built
    out = tmp_path / "stage3"
    code = cli.main(
        [
            "train",
            "--config", str(config_file),
            "--dataset-dir", str(dataset_dir),
            "--seed", "1",
            "--out", str(out),
        ]
    )
    assert code == cli.EXIT_OK
    return dataset_dir, out / Configuration.CHECKPOINT_FILE


@pytest.fixture(autouse=True)
def restore_dtype():
    yield
    T.set_default_dtype(np.float32)


################################################
# prepare_out_dir
################################################


def test_prepare_out_dir(tmp_path):
    out = cli.prepare_out_dir(tmp_path / "new", force=False)
    assert out.is_dir()
    (out / "file.txt").write_text("x")
    with pytest.raises(cli.OutputExistsError):
        cli.prepare_out_dir(out, force=False)
    assert cli.prepare_out_dir(out, force=True) == out
    with pytest.raises(NotADirectoryError):
        cli.prepare_out_dir(out / "file.txt", force=True)


################################################
# exit codes
################################################


def test_usage_error_exits_with_two():
    with pytest.raises(SystemExit) as err:
        cli.main(["train", "--stage", "9"])
    assert err.value.code == cli.EXIT_USAGE


def test_unknown_verb_exits_with_two():
    with pytest.raises(SystemExit) as err:
        cli.main(["fit"])
    assert err.value.code == cli.EXIT_USAGE


def test_missing_checkpoint_exits_with_three(built, tmp_path):
    dataset_dir, _ = built
    code = cli.main(
        [
            "generate",
            "--checkpoint", str(tmp_path / "absent.bin"),
            "--dataset", str(dataset_dir / "stage3_test.jsonl"),
            "--out", str(tmp_path / "out"),
        ]
    )
    assert code == cli.EXIT_DATA


def test_bad_override_exits_with_three(tmp_path):
    code = cli.main(["train", "--out", str(tmp_path / "out"), "stage.max_steps=many"])
    assert code == cli.EXIT_DATA


def test_shape_error_exits_with_three(built, config_file, tmp_path):
    dataset_dir, _ = built
    code = cli.main(
        [
            "train",
            "--config", str(config_file),
            "--dataset-dir", str(dataset_dir),
            "--out", str(tmp_path / "out"),
            "model.n_heads=3",
        ]
    )
    assert code == cli.EXIT_DATA


def test_non_finite_loss_exits_with_four(built, config_file, tmp_path, monkeypatch):
    dataset_dir, _ = built

    def broken_loss(self, batch, reduction="mean"):
        return T.Tensor(np.array(np.nan))

    monkeypatch.setattr(VisionLanguageModel, "loss", broken_loss)
    code = cli.main(
        [
            "train",
            "--config", str(config_file),
            "--dataset-dir", str(dataset_dir),
            "--out", str(tmp_path / "out"),
        ]
    )
    assert code == cli.EXIT_NUMERIC


################################################
# synth / build
################################################


def synth(out, *extra):
    args = ["synth", "--seed", "4", "--patients", "3", "--image-size", "16", "--out", str(out)]
    return cli.main(args + list(extra))


def test_synth_is_deterministic(tmp_path):
    assert synth(tmp_path / "a") == cli.EXIT_OK
    assert synth(tmp_path / "b") == cli.EXIT_OK
    for name in (Configuration.STUDIES_FILE, Configuration.QA_FILE, Configuration.MANIFEST_FILE):
        assert (tmp_path / "a" / name).read_text() == (tmp_path / "b" / name).read_text()


def test_synth_refuses_non_empty_output(tmp_path):
    assert synth(tmp_path / "a") == cli.EXIT_OK
    assert synth(tmp_path / "a") == cli.EXIT_DATA
    assert synth(tmp_path / "a", "--force") == cli.EXIT_OK


def test_build_writes_manifest(tmp_path):
    assert synth(tmp_path / "corpus") == cli.EXIT_OK
    code = cli.main(
        [
            "build",
            "--corpus", str(tmp_path / "corpus"),
            "--out", str(tmp_path / "dataset"),
            "--vocab-size", "120",
        ]
    )
    assert code == cli.EXIT_OK
    manifest = json.loads((tmp_path / "dataset" / Configuration.MANIFEST_FILE).read_text())
    assert manifest["verb"] == "build"
    assert manifest["config"] == {"vocab_size": 120, "max_len": Configuration.MAX_SEQUENCE_LENGTH}
    assert (tmp_path / "dataset" / Configuration.VOCAB_FILE).is_file()


################################################
# train / generate / evaluate
################################################


def test_train_writes_artifacts(trained):
    _, checkpoint = trained
    out = checkpoint.parent
    for name in (Configuration.RUN_LOG_FILE, Configuration.MANIFEST_FILE):
        assert (out / name).is_file()
    manifest = json.loads((out / Configuration.MANIFEST_FILE).read_text())
    assert manifest["config"]["seed"] == 1
    assert manifest["config"]["model"]["d_model"] == 16


def test_generate_then_evaluate(trained, tmp_path):
    dataset_dir, checkpoint = trained
    dataset = dataset_dir / "stage3_test.jsonl"
    common = ["--checkpoint", str(checkpoint), "--dataset", str(dataset), "--max-len", "3"]
    generated = tmp_path / "generated"
    assert cli.main(["generate", "--out", str(generated)] + common) == cli.EXIT_OK
    predictions = generated / Configuration.PREDICTIONS_FILE
    n_samples = len(dataset.read_text().splitlines())
    assert len(predictions.read_text().splitlines()) == n_samples

    scored = tmp_path / "scored"
    code = cli.main(
        ["evaluate", "--out", str(scored), "--predictions", str(predictions), "--swap-analysis"]
        + common
    )
    assert code == cli.EXIT_OK
    metrics = json.loads((scored / Configuration.METRICS_FILE).read_text())
    assert metrics["n_pairs"] == n_samples
    assert (scored / Configuration.PER_SAMPLE_FILE).is_file()
    swap = json.loads((scored / "swap_analysis.json").read_text())
    assert swap["n_changed"] <= swap["n_samples"]
