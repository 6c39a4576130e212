"""Ablation sweeps over pretraining stages and stage-2 inputs.

A sweep trains every row of a table for every seed, evaluates the final
stage-3 model on the matching test file and collects the scores in a
DataFrame, which is written as CSV and xlsx together with a per-row mean
summary and a bar plot.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import matplotlib.pylab as plt
import pandas as pd

import data
import evaluation
import tensor as T
import tokenizer
from checkpoint import Checkpoint
from pipeline import StageConfig, run_stage
from utils import Configuration

logger = logging.getLogger(__name__)


@dataclass
class AblationRow:
    """
    One configuration of an ablation table.

    Attributes:
        name (str): Row label.
        stages (Tuple[int, ...]): Stages trained in order, each initialized from the previous.
        overrides (Dict[int, List[str]]): Dotted overrides per stage.
    """

    name: str
    stages: Tuple[int, ...]
    overrides: Dict[int, List[str]] = field(default_factory=dict)


NONDIFF = ["stage.task=nondifference"]

TABLES: Dict[int, List[AblationRow]] = {
    2: [
        AblationRow("stage3_only", (3,)),
        AblationRow("stage1_stage3", (1, 3)),
        AblationRow("stage2_stage3", (2, 3)),
        AblationRow("full", (1, 2, 3)),
    ],
    3: [
        AblationRow("no_stage2", (1, 3)),
        AblationRow("no_past_image", (1, 2, 3), {2: ["stage.include_past_image=false"]}),
        AblationRow("no_findings", (1, 2, 3), {2: ["stage.include_findings=false"]}),
        AblationRow("no_impression", (1, 2, 3), {2: ["stage.include_impression=false"]}),
        AblationRow("full", (1, 2, 3)),
    ],
    4: [
        AblationRow("no_pretraining", (3,), {3: NONDIFF}),
        AblationRow("full", (1, 2, 3), {3: NONDIFF}),
    ],
}

SCORE_COLUMNS = [
    "bleu1",
    "bleu2",
    "bleu3",
    "bleu4",
    "meteor",
    "rouge_l",
    "cider",
    "accuracy_open",
    "accuracy_closed",
    "accuracy_all",
]


def evaluation_file(table: int) -> str:
    pattern = Configuration.NONDIFF_FILE if table == 4 else Configuration.STAGE3_FILE
    return pattern.format(split="test")


def stage_config(base: StageConfig, row: AblationRow, stage: int, seed: int) -> StageConfig:
    overrides = [f"stage.stage={stage}", f"stage.seed={seed}"] + row.overrides.get(stage, [])
    return base.apply_overrides(overrides)


def run_row(
    table: int,
    row: AblationRow,
    base: StageConfig,
    seed: int,
    out_dir: Optional[Path] = None,
) -> Dict[str, Any]:
    """
    Train the stages of one row and score the last model on the test file.

    Returns:
        Dict[str, Any]: Table, row, seed, final validation loss and every metric.
    """
    checkpoint: Optional[Checkpoint] = None
    for stage in row.stages:
        cfg = stage_config(base, row, stage, seed)
        stage_dir = None
        if out_dir is not None:
            stage_dir = Path(out_dir) / f"table{table}" / row.name / f"seed{seed}" / f"stage{stage}"
        checkpoint = run_stage(cfg, checkpoint, stage_dir)

    dataset_dir = Path(base.dataset_dir)
    samples = data.load_samples(dataset_dir / evaluation_file(table))
    vocab = tokenizer.load_vocab(dataset_dir / Configuration.VOCAB_FILE)
    model = checkpoint.build_model()
    images = data.ImageCache(model.config.in_channels, T.get_default_dtype())
    predictions = evaluation.generate_predictions(
        model, samples, vocab, images, batch_size=base.batch_size
    )
    report = evaluation.evaluate(
        {p["sample_id"]: p["prediction"] for p in predictions}, samples
    )
    result = {"table": table, "row": row.name, "seed": seed}
    result["valid_loss"] = checkpoint.best_valid_loss
    result.update({name: getattr(report, name) for name in SCORE_COLUMNS})
    logger.info(
        "ablation table=%d row=%s seed=%d cider=%.4f", table, row.name, seed, report.cider
    )
    return result


def summarize(results: pd.DataFrame) -> pd.DataFrame:
    """Mean score per row, rows in table order."""
    order = list(dict.fromkeys(results["row"]))
    columns = ["valid_loss"] + SCORE_COLUMNS
    summary = results.astype({c: float for c in columns}).groupby("row")[columns].mean()
    return summary.reindex(order)


def plot_ablation(
    summary: pd.DataFrame, metric: str = "cider", figsize=(5, 4), save_path=None
) -> Any:
    """
    Bar plot of one metric per ablation row.

    Returns:
        Any: The matplotlib axes.
    """
    fig, ax = plt.subplots(figsize=figsize)
    plot = summary[metric].plot.bar(ax=ax, rot=0)
    ax.set_title(f"Ablation: {metric}")
    ax.set_ylabel(metric)
    ax.set_xlabel("row")
    fig.tight_layout()
    if save_path is not None:
        fig.savefig(save_path, dpi=100, metadata={"Software": None})
        plt.close(fig)
    return plot


def run_ablation(
    table: int,
    base: StageConfig,
    seeds: Sequence[int],
    out_dir: Path,
) -> pd.DataFrame:
    """
    Run every row of `table` for every seed and write the comparison files.

    Args:
        table (int): 2, 3 or 4.
        base (StageConfig): Shared hyperparameters; stage and seed are set per run.
        seeds (Sequence[int]): Seeds to repeat every row with.
        out_dir (Path): Output directory.

    Returns:
        pd.DataFrame: One row per (ablation row, seed).

    Raises:
        ValueError: For an unknown table.
    """
    if table not in TABLES:
        raise ValueError(f"unknown ablation table {table}, valid tables: {sorted(TABLES)}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = [run_row(table, row, base, seed, out_dir) for row in TABLES[table] for seed in seeds]
    results = pd.DataFrame(rows, columns=["table", "row", "seed", "valid_loss"] + SCORE_COLUMNS)
    summary = summarize(results)

    stem = f"ablation_table{table}"
    results.to_csv(out_dir / f"{stem}.csv", index=False)
    with pd.ExcelWriter(out_dir / f"{stem}.xlsx", engine="openpyxl") as writer:
        results.to_excel(writer, sheet_name="runs", index=False)
        summary.to_excel(writer, sheet_name="summary")
    summary.to_csv(out_dir / f"{stem}_summary.csv")
    metric = "accuracy_all" if table == 4 else "cider"
    plot_ablation(summary, metric, save_path=out_dir / f"{stem}.png")
    return results
