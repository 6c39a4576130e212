"""A module for testing the ablation.py module."""

import numpy as np
import pandas as pd
import pytest

import ablation
import evaluation
import tokenizer
from checkpoint import Checkpoint
from model import ModelConfig, VisionLanguageModel
from pipeline import StageConfig
from utils import Configuration


@pytest.fixture
def base(built):
    dataset_dir, _ = built
    return StageConfig(dataset_dir=str(dataset_dir), batch_size=4, model=ModelConfig.tiny())


@pytest.fixture
def fake_training(base, monkeypatch):
    """Replace training and generation with fast stand-ins that record the calls."""
    vocab = tokenizer.load_vocab(base.dataset_dir + "/" + Configuration.VOCAB_FILE)
    calls = []

    def run_stage(config, init=None, out_dir=None):
        calls.append((config.stage, config.seed, init, config))
        model_config = ModelConfig.tiny(vocab_size=vocab.size, dual=config.stage != 1)
        return Checkpoint.from_model(
            VisionLanguageModel(model_config),
            stage=config.stage,
            best_valid_loss=float(config.stage),
        )

    def perfect_predictions(model, samples, *args, **kwargs):
        return [{"sample_id": s.sample_id, "prediction": s.target} for s in samples]

    monkeypatch.setattr(ablation, "run_stage", run_stage)
    monkeypatch.setattr(evaluation, "generate_predictions", perfect_predictions)
    return calls


################################################
# tables
################################################


def test_tables_end_with_the_full_schedule():
    for rows in ablation.TABLES.values():
        assert rows[-1].name == "full"
        assert rows[-1].stages == (1, 2, 3)
        assert all(row.stages[-1] == 3 for row in rows)


def test_evaluation_file():
    assert ablation.evaluation_file(2) == "stage3_test.jsonl"
    assert ablation.evaluation_file(3) == "stage3_test.jsonl"
    assert ablation.evaluation_file(4) == "nondiff_test.jsonl"


def test_stage_config_applies_row_overrides():
    row = ablation.TABLES[3][1]
    stage2 = ablation.stage_config(StageConfig(), row, 2, seed=5)
    assert (stage2.stage, stage2.seed, stage2.include_past_image) == (2, 5, False)
    stage3 = ablation.stage_config(StageConfig(), row, 3, seed=5)
    assert stage3.include_past_image is True


################################################
# run_row / summarize
################################################


def test_run_row_chains_stages(base, fake_training):
    result = ablation.run_row(2, ablation.TABLES[2][-1], base, seed=3)
    assert [(stage, seed) for stage, seed, _, _ in fake_training] == [(1, 3), (2, 3), (3, 3)]
    assert fake_training[0][2] is None
    assert fake_training[2][2].stage == 2
    assert result["row"] == "full" and result["seed"] == 3
    assert result["valid_loss"] == 3.0
    assert np.isclose(result["rouge_l"], 1.0)
    assert result["accuracy_open"] == 100.0


def test_nondifference_row_uses_nondifference_task(base, fake_training):
    result = ablation.run_row(4, ablation.TABLES[4][0], base, seed=0)
    assert [config.task for *_, config in fake_training] == ["nondifference"]
    assert result["accuracy_all"] == 100.0


def test_summarize_keeps_row_order():
    results = pd.DataFrame(
        [
            {"row": "b", "valid_loss": 1.0, "cider": 2.0},
            {"row": "a", "valid_loss": 3.0, "cider": 4.0},
            {"row": "b", "valid_loss": 2.0, "cider": 0.0},
        ],
        columns=["row", "valid_loss"] + ablation.SCORE_COLUMNS,
    )
    summary = ablation.summarize(results)
    assert summary.index.tolist() == ["b", "a"]
    assert summary.loc["b", "valid_loss"] == 1.5
    assert summary.loc["b", "cider"] == 1.0
    assert np.isnan(summary.loc["a", "bleu1"])


################################################
# run_ablation
################################################


def test_run_ablation_writes_tables(base, fake_training, tmp_path):
    results = ablation.run_ablation(4, base, seeds=[0, 1], out_dir=tmp_path)
    assert len(results) == 4
    assert results.row.tolist() == ["no_pretraining"] * 2 + ["full"] * 2
    for name in (
        "ablation_table4.csv",
        "ablation_table4.xlsx",
        "ablation_table4_summary.csv",
        "ablation_table4.png",
    ):
        assert (tmp_path / name).is_file()
    sheets = pd.read_excel(tmp_path / "ablation_table4.xlsx", sheet_name=None)
    assert set(sheets) == {"runs", "summary"}


def test_run_ablation_rejects_unknown_table(base, tmp_path):
    with pytest.raises(ValueError, match="unknown ablation table"):
        ablation.run_ablation(5, base, seeds=[0], out_dir=tmp_path)


################################################
# trained directions
################################################


@pytest.fixture
def trained_base(base):
    return base.apply_overrides(
        [
            "stage.max_steps=400",
            "stage.eval_interval=100",
            "stage.patience=400",
            "stage.lr=0.002",
            "stage.batch_size=8",
            "model.d_model=32",
        ]
    )


@pytest.mark.slow
def test_full_schedule_beats_stage3_only(trained_base, tmp_path):
    results = ablation.run_ablation(2, trained_base, seeds=[0, 1, 2, 3, 4], out_dir=tmp_path)
    summary = ablation.summarize(results)
    assert summary.loc["full", "cider"] > summary.loc["stage3_only", "cider"]


@pytest.mark.slow
def test_dropping_past_image_hurts(trained_base, tmp_path):
    results = ablation.run_ablation(3, trained_base, seeds=[0, 1, 2], out_dir=tmp_path)
    summary = ablation.summarize(results)
    assert summary.loc["no_past_image", "cider"] < summary.loc["full", "cider"]
