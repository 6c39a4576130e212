"""Answer generation, metric files and the past/current swap analysis."""

import dataclasses
import json
import logging
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import data
import tokenizer
from common_operations import EvalPair, normalize
from metrics import MetricReport, compute_report, per_sample_scores
from model import VisionLanguageModel
from transformer import GenerationConfig
from utils import Configuration

logger = logging.getLogger(__name__)

DIRECTION_WORDS = ("worsening", "improving")


def check_compatible(
    model: VisionLanguageModel, vocab: tokenizer.Vocab, images: data.ImageCache, sample
) -> None:
    """
    Make sure a checkpointed model can read a dataset.

    Raises:
        DataValidationError: On a vocabulary size or image size mismatch.
    """
    config = model.config
    if vocab.size != config.vocab_size:
        raise data.DataValidationError(
            f"vocabulary has {vocab.size} tokens, the model expects {config.vocab_size}"
        )
    shape = images.load(sample.current_image).shape
    expected = (config.image_size, config.image_size, config.in_channels)
    if shape != expected:
        raise data.DataValidationError(f"images are {shape}, the model expects {expected}")


def generate_predictions(
    model: VisionLanguageModel,
    samples: Sequence[data.LongitudinalSample],
    vocab: tokenizer.Vocab,
    images: data.ImageCache,
    config: Optional[GenerationConfig] = None,
    batch_size: int = 16,
) -> List[Dict[str, str]]:
    """
    Generate one answer per sample in eval mode.

    Returns:
        List[Dict[str, str]]: ``{"sample_id", "prediction"}`` rows in sample order.
    """
    config = config or GenerationConfig()
    model.eval()
    rows = []
    for chunk in data.iterate_batches(samples, batch_size):
        batch = data.collate(chunk, vocab, images, model.config.dual)
        for sample, ids in zip(chunk, model.generate(batch, config)):
            rows.append({"sample_id": sample.sample_id, "prediction": vocab.decode(ids)})
    logger.info("generated predictions=%d strategy=%s", len(rows), config.strategy)
    return rows


def write_predictions(rows: Sequence[Dict[str, str]], path: Path) -> None:
    text = "".join(json.dumps(row, ensure_ascii=False) + "\n" for row in rows)
    Path(path).write_text(text, encoding="utf-8", newline="\n")


def read_predictions(path: Path) -> Dict[str, str]:
    """
    Predictions by sample id.

    Raises:
        DataValidationError: If the file is missing or a row lacks a field.
    """
    path = Path(path)
    if not path.is_file():
        raise data.DataValidationError(f"missing predictions file {path}")
    predictions = {}
    for number, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        row = json.loads(line)
        if "sample_id" not in row or "prediction" not in row:
            raise data.DataValidationError(f"{path.name}:{number} lacks sample_id/prediction")
        predictions[row["sample_id"]] = row["prediction"]
    return predictions


def build_pairs(
    predictions: Dict[str, str], samples: Sequence[data.LongitudinalSample]
) -> List[EvalPair]:
    """
    Align predictions with their ground-truth samples.

    Raises:
        DataValidationError: If a sample has no prediction.
    """
    missing = [s.sample_id for s in samples if s.sample_id not in predictions]
    if missing:
        raise data.DataValidationError(
            f"{len(missing)} samples have no prediction, e.g. {missing[:5]}"
        )
    return [
        EvalPair.from_text(predictions[s.sample_id], s.target, s.answer_form)
        for s in samples
    ]


def evaluate(
    predictions: Dict[str, str],
    samples: Sequence[data.LongitudinalSample],
    out_dir: Optional[Path] = None,
) -> MetricReport:
    """
    Score predictions and optionally write metrics.json and per_sample.csv.

    Args:
        predictions (Dict[str, str]): Generated text by sample id.
        samples (Sequence[LongitudinalSample]): Ground truth.
        out_dir (Optional[Path]): Output directory.
    """
    pairs = build_pairs(predictions, samples)
    report = compute_report(pairs)
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        report.save(out_dir / Configuration.METRICS_FILE)
        per_sample = per_sample_scores(pairs, [s.sample_id for s in samples])
        per_sample.to_csv(out_dir / Configuration.PER_SAMPLE_FILE, index=False)
    return report


def reverse_answer(answer: str) -> str:
    """
    The difference answer describing the same change backwards in time.

    Answers whose reversal is not determined by the text (a resolved finding
    loses its side) come back normalized but otherwise unchanged.
    """
    text = normalize(answer)
    if text.startswith(DIRECTION_WORDS):
        swap = {"worsening": "improving", "improving": "worsening"}
        word, _, rest = text.partition(" ")
        return f"{swap[word]} {rest}"
    match = re.fullmatch(r"new (\w+) in the \w+ lung", text)
    if match:
        return f"resolved {match.group(1)}"
    return text


def is_direction_sensitive(sample: data.LongitudinalSample) -> bool:
    words = normalize(sample.target).split()
    return sample.past_image is not None and any(w in words for w in DIRECTION_WORDS)


@dataclass
class SwapReport:
    """
    Outcome of exchanging past and current images.

    Attributes:
        n_samples (int): Direction-sensitive samples examined.
        n_changed (int): Samples whose generated answer changed after the swap.
        fraction_changed (float): n_changed / n_samples (0 when there are none).
        n_time_reversed (int): Swapped answers equal to the time-reversed ground truth.
    """

    n_samples: int
    n_changed: int
    fraction_changed: float
    n_time_reversed: int

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True)


def swap_sensitivity(
    model: VisionLanguageModel,
    samples: Sequence[data.LongitudinalSample],
    vocab: tokenizer.Vocab,
    images: data.ImageCache,
    config: Optional[GenerationConfig] = None,
    batch_size: int = 16,
) -> SwapReport:
    """Regenerate direction-sensitive answers with past and current images exchanged."""
    chosen = [s for s in samples if is_direction_sensitive(s)]
    if not chosen:
        logger.warning("swap analysis found no direction-sensitive samples")
        return SwapReport(0, 0, 0.0, 0)
    swapped = [
        dataclasses.replace(s, past_image=s.current_image, current_image=s.past_image)
        for s in chosen
    ]
    original = generate_predictions(model, chosen, vocab, images, config, batch_size)
    exchanged = generate_predictions(model, swapped, vocab, images, config, batch_size)
    n_changed = n_reversed = 0
    for sample, before, after in zip(chosen, original, exchanged):
        if normalize(before["prediction"]) != normalize(after["prediction"]):
            n_changed += 1
        if normalize(after["prediction"]) == reverse_answer(sample.target):
            n_reversed += 1
    report = SwapReport(len(chosen), n_changed, n_changed / len(chosen), n_reversed)
    logger.info(
        "swap analysis samples=%d changed=%d reversed=%d",
        report.n_samples,
        report.n_changed,
        report.n_time_reversed,
    )
    return report
