"""A module for reading, validating and assembling the longitudinal datasets.

It reads the corpus files (studies, reports, QA) into pandas DataFrames, checks
their integrity, pairs every study with the patient's prior visit, and builds
the stage-1/2/3 and non-difference sample files together with the vocabulary.
"""

import json
import logging
import os
import re
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, Iterable, Iterator, List, Optional, Sequence, Set, Tuple

import numpy as np
import pandas as pd
from PIL import Image

import tokenizer
from utils import Configuration

logger = logging.getLogger(__name__)

STUDY_COLUMNS = ["patient_id", "study_id", "timestamp", "view", "image", "split"]
REPORT_COLUMNS = ["study_id", "findings", "impression"]
QA_COLUMNS = [
    "qa_id",
    "study_id",
    "past_study_id",
    "category",
    "question",
    "answer",
    "answer_form",
    "split",
]
CLOSED_ANSWERS = ("yes", "no")


@dataclass
class StudyRecord:
    patient_id: str
    study_id: str
    timestamp: int
    view: str
    image: str
    split: str


@dataclass
class QARecord:
    qa_id: str
    study_id: str
    past_study_id: Optional[str]
    category: str
    question: str
    answer: str
    answer_form: str
    split: str


@dataclass
class LongitudinalSample:
    """
    One training or evaluation example.

    Image references are paths relative to the directory of the file the
    sample was read from (or to the corpus root while building).
    """

    sample_id: str
    stage: int
    task: str
    split: str
    patient_id: str
    study_id: str
    past_study_id: Optional[str]
    past_image: Optional[str]
    current_image: str
    instruction: str
    target: str
    answer_form: Optional[str] = None
    category: Optional[str] = None

    def to_json(self) -> str:
        return json.dumps(asdict(self), ensure_ascii=False)


@dataclass
class Data:
    """
    A data class that holds the corpus tables and processes them.

    Attributes:
        corpus_dir (Path): Directory holding studies.jsonl, reports.jsonl, qa.jsonl and images/.
        studies (pd.DataFrame): One row per study.
        reports (pd.DataFrame): One row per study report; missing sections are None.
        qa (pd.DataFrame): One row per question-answer pair.
    """

    corpus_dir: Path
    studies: pd.DataFrame = field(init=False)
    reports: pd.DataFrame = field(init=False)
    qa: pd.DataFrame = field(init=False)

    def __post_init__(self):
        self.corpus_dir = Path(self.corpus_dir)
        self.file_reader = FileReader()
        self.data_processor = DataProcessor()
        self.studies = self.__process_file(Configuration.STUDIES_FILE)
        self.reports = self.__process_file(Configuration.REPORTS_FILE)
        self.qa = self.__process_file(Configuration.QA_FILE)

    def __process_file(self, name: str) -> pd.DataFrame:
        path = self.corpus_dir.joinpath(name)
        if not path.is_file():
            raise DataValidationError(f"missing corpus file {path}")
        return self.data_processor.preprocess_file(self.file_reader.read_jsonl(path))

    def study_records(self) -> List[StudyRecord]:
        return [StudyRecord(**row) for row in _records(self.studies, STUDY_COLUMNS)]

    def qa_records(self) -> List[QARecord]:
        return [QARecord(**row) for row in _records(self.qa, QA_COLUMNS)]

    def report_sections(self) -> Dict[str, Tuple[Optional[str], Optional[str]]]:
        return {
            row["study_id"]: (row["findings"], row["impression"])
            for row in _records(self.reports, REPORT_COLUMNS)
        }


def _records(df: pd.DataFrame, columns: Sequence[str]) -> List[dict]:
    return (
        df[list(columns)]
        .astype(object)
        .where(df[list(columns)].notna(), None)
        .to_dict(orient="records")
    )


class FileReader:
    def read_jsonl(self, file_path: Path) -> pd.DataFrame:
        """
        Read a JSON-lines file into a DataFrame.

        Parameters:
            file_path (Path): The path to the JSONL file.

        Returns:
            pd.DataFrame: One row per line; string columns are kept as strings.
        """
        if Path(file_path).stat().st_size == 0:
            return pd.DataFrame()
        return pd.read_json(
            file_path,
            lines=True,
            dtype=False,
            convert_dates=False,
            keep_default_dates=False,
            encoding="utf-8",
        )


class DataProcessor:
    _punctuation = re.compile(r"[^\w\s.,]")
    _whitespace = re.compile(r"\s+")

    def preprocess_file(self, df: pd.DataFrame) -> pd.DataFrame:
        """
        Normalise column names to lower case with underscores.

        Parameters:
            df (pd.DataFrame): The input DataFrame.

        Returns:
            pd.DataFrame: The DataFrame with renamed columns.
        """
        return df.rename(columns=lambda x: re.sub(r"\W", "_", str(x).lower()))

    def preprocess_text(self, text: Optional[str]) -> Optional[str]:
        """
        Lowercase, drop punctuation other than period and comma, collapse whitespace.

        Args:
            text (Optional[str]): Raw report or answer text.

        Returns:
            Optional[str]: The cleaned text; None or blank input gives None.
        """
        if text is None:
            return None
        text = self._punctuation.sub(" ", str(text).lower())
        text = self._whitespace.sub(" ", text).strip()
        return text or None

    @staticmethod
    def word_key(word: str) -> str:
        return word.strip(".,")

    def frequent_words(
        self,
        texts: Iterable[str],
        min_count: int = Configuration.SCARCE_WORD_MIN_COUNT,
    ) -> Set[str]:
        """Words (punctuation-stripped) occurring at least `min_count` times."""
        counts = Counter(
            self.word_key(w) for text in texts if text for w in text.split()
        )
        return {w for w, c in counts.items() if c >= min_count}

    def drop_scarce_words(self, text: Optional[str], keep: Set[str]) -> Optional[str]:
        if text is None:
            return None
        words = [w for w in text.split() if self.word_key(w) in keep or not self.word_key(w)]
        return " ".join(words) or None


class DataValidationError(Exception):
    pass


class DataValidator:
    """A class to check corpus integrity before any sample is built."""

    def __init__(self, data: Data):
        self.data = data

    def validate(self):
        """
        Validate every corpus table.
        """
        self.validate_column_names_in_dataframe()
        self.validate_df_not_empty()
        self.validate_unique_study_ids()
        self.validate_study_references()
        self.validate_categories()
        self.validate_difference_has_past()
        self.validate_closed_answers()
        self.validate_splits()

    def validate_column_names_in_dataframe(self):
        """
        Raises:
            DataValidationError: If any expected column is missing in a table.
        """
        attributes = {
            "studies": STUDY_COLUMNS,
            "reports": REPORT_COLUMNS,
            "qa": QA_COLUMNS,
        }
        for attribute, expected_columns in attributes.items():
            df = getattr(self.data, attribute)
            missing_columns = set(expected_columns) - set(df.columns)
            if missing_columns:
                raise DataValidationError(
                    f"Missing columns in {attribute}: {sorted(missing_columns)}"
                )

    def validate_df_not_empty(self):
        if self.data.studies.empty:
            raise DataValidationError("studies is empty")

    def validate_unique_study_ids(self):
        duplicated = self.data.studies.study_id[self.data.studies.study_id.duplicated()]
        if not duplicated.empty:
            raise DataValidationError(
                f"duplicate study ids in studies: {sorted(duplicated.unique())[:5]}"
            )

    def validate_study_references(self):
        """
        Every study referenced by a report or QA record must exist.

        Raises:
            DataValidationError: Naming the first few dangling ids.
        """
        known = set(self.data.studies.study_id)
        references = {
            "reports.study_id": self.data.reports.study_id,
            "qa.study_id": self.data.qa.study_id,
            "qa.past_study_id": self.data.qa.past_study_id.dropna(),
        }
        for column, ids in references.items():
            dangling = sorted(set(ids) - known)
            if dangling:
                raise DataValidationError(
                    f"{column} references unknown studies: {dangling[:5]}"
                )

    def validate_categories(self):
        unknown = set(self.data.qa.category) - set(Configuration.QA_CATEGORIES)
        if unknown:
            raise DataValidationError(f"unknown QA categories: {sorted(unknown)}")

    def validate_difference_has_past(self):
        qa = self.data.qa
        missing = qa.loc[(qa.category == "difference") & qa.past_study_id.isna(), "qa_id"]
        if not missing.empty:
            raise DataValidationError(
                f"difference questions without a past study: {list(missing[:5])}"
            )

    def validate_closed_answers(self):
        qa = self.data.qa
        closed = qa.loc[qa.answer_form == "closed"]
        wrong = closed.loc[~closed.answer.isin(CLOSED_ANSWERS), "qa_id"]
        if not wrong.empty:
            raise DataValidationError(
                f"closed questions must be answered yes/no: {list(wrong[:5])}"
            )

    def validate_splits(self):
        for name in ("studies", "qa"):
            unknown = set(getattr(self.data, name).split) - set(Configuration.SPLITS)
            if unknown:
                raise DataValidationError(f"unknown splits in {name}: {sorted(unknown)}")


def pair_prior_visit(
    studies: Sequence[StudyRecord],
    views: Sequence[str] = Configuration.FRONTAL_VIEWS,
) -> List[Tuple[Optional[StudyRecord], StudyRecord]]:
    """
    Pair every frontal study with the same patient's immediately preceding study.

    Studies are ordered by (timestamp, study_id). The past of a study is the
    latest study of the same patient with a strictly earlier timestamp, so
    studies sharing a timestamp share a past and never pair with each other.

    Args:
        studies (Sequence[StudyRecord]): Studies of one or more patients.
        views (Sequence[str]): Views allowed into the pipeline.

    Returns:
        List[Tuple[Optional[StudyRecord], StudyRecord]]: (past or None, current),
        grouped by patient id, each group in time order.
    """
    by_patient: Dict[str, List[StudyRecord]] = {}
    for study in studies:
        if study.view in views:
            by_patient.setdefault(study.patient_id, []).append(study)

    pairs = []
    for patient_id in sorted(by_patient):
        ordered = sorted(by_patient[patient_id], key=lambda s: (s.timestamp, s.study_id))
        past = None
        for i, current in enumerate(ordered):
            if i and ordered[i - 1].timestamp < current.timestamp:
                past = ordered[i - 1]
            pairs.append((past, current))
    return pairs


def make_report_samples(
    pairs: Sequence[Tuple[Optional[StudyRecord], StudyRecord]],
    reports: Dict[str, Tuple[Optional[str], Optional[str]]],
    stats: Optional[Counter] = None,
    processor: Optional[DataProcessor] = None,
) -> List[LongitudinalSample]:
    """
    Turn report sections into instruction samples.

    Findings use "What does the image describe?", Impression uses
    "What is the summary of the image?". A pair whose report has neither
    section is skipped and counted under ``stats["skipped_pairs"]``.

    Args:
        pairs: Output of `pair_prior_visit`.
        reports: Sections by study id.
        stats (Optional[Counter]): Receives the skip count.
        processor (Optional[DataProcessor]): Text preprocessing.

    Returns:
        List[LongitudinalSample]: Up to two samples per pair.
    """
    processor = processor or DataProcessor()
    stats = stats if stats is not None else Counter()
    samples = []
    sections = (
        ("findings", Configuration.FINDINGS_INSTRUCTION),
        ("impression", Configuration.IMPRESSION_INSTRUCTION),
    )
    for past, current in pairs:
        texts = reports.get(current.study_id, (None, None))
        emitted = 0
        for (section, instruction), text in zip(sections, texts):
            text = processor.preprocess_text(text)
            if text is None:
                continue
            emitted += 1
            samples.append(
                LongitudinalSample(
                    sample_id=f"{current.study_id}_{section}",
                    stage=2,
                    task=section,
                    split=current.split,
                    patient_id=current.patient_id,
                    study_id=current.study_id,
                    past_study_id=None if past is None else past.study_id,
                    past_image=None if past is None else past.image,
                    current_image=current.image,
                    instruction=instruction,
                    target=text,
                )
            )
        if not emitted:
            stats["skipped_pairs"] += 1
    if stats["skipped_pairs"]:
        logger.warning("report pairs skipped=%d", stats["skipped_pairs"])
    return samples


def make_vqa_samples(
    qa: Sequence[QARecord],
    studies: Dict[str, StudyRecord],
    categories: Iterable[str],
    split: str,
    stage: int = 3,
    processor: Optional[DataProcessor] = None,
) -> List[LongitudinalSample]:
    """
    Build question-answer samples of one split.

    Args:
        qa (Sequence[QARecord]): QA records.
        studies (Dict[str, StudyRecord]): Studies by id.
        categories (Iterable[str]): Categories to keep.
        split (str): "train", "valid" or "test".
        stage (int): Stage tag of the produced samples.
        processor (Optional[DataProcessor]): Text preprocessing for answers.

    Returns:
        List[LongitudinalSample]: One sample per kept record.

    Raises:
        DataValidationError: If a record references an unknown study.
    """
    if split not in Configuration.SPLITS:
        raise DataValidationError(f"unknown split {split!r}")
    processor = processor or DataProcessor()
    categories = set(categories)
    samples = []
    for record in qa:
        if record.split != split or record.category not in categories:
            continue
        current = studies.get(record.study_id)
        past = (
            None if record.past_study_id is None else studies.get(record.past_study_id)
        )
        if current is None or (record.past_study_id is not None and past is None):
            raise DataValidationError(
                f"QA {record.qa_id} references unknown study "
                f"{record.study_id if current is None else record.past_study_id}"
            )
        samples.append(
            LongitudinalSample(
                sample_id=record.qa_id,
                stage=stage,
                task="difference" if record.category == "difference" else "nondifference",
                split=record.split,
                patient_id=current.patient_id,
                study_id=current.study_id,
                past_study_id=None if past is None else past.study_id,
                past_image=None if past is None else past.image,
                current_image=current.image,
                instruction=record.question,
                target=processor.preprocess_text(record.answer) or "",
                answer_form=record.answer_form,
                category=record.category,
            )
        )
    return samples


def image_ids(samples: Iterable[LongitudinalSample]) -> Set[str]:
    ids = set()
    for sample in samples:
        ids.add(sample.current_image)
        if sample.past_image is not None:
            ids.add(sample.past_image)
    return ids


def enforce_test_exclusion(
    report_samples: Sequence[LongitudinalSample],
    vqa_test_set: Sequence[LongitudinalSample],
) -> List[LongitudinalSample]:
    """
    Drop every report sample whose current or past image appears in the test QA.

    Returns:
        List[LongitudinalSample]: The remaining samples.
    """
    test_images = image_ids(vqa_test_set)
    kept = [
        s
        for s in report_samples
        if s.current_image not in test_images and s.past_image not in test_images
    ]
    removed = len(report_samples) - len(kept)
    logger.info("test exclusion removed=%d kept=%d", removed, len(kept))
    return kept


def write_samples(samples: Iterable[LongitudinalSample], path: Path) -> int:
    lines = [s.to_json() for s in samples]
    Path(path).write_text(
        "".join(line + "\n" for line in lines), encoding="utf-8", newline="\n"
    )
    return len(lines)


def load_samples(path: Path) -> List[LongitudinalSample]:
    """
    Read a sample file; image paths are resolved against the file's directory.

    Raises:
        DataValidationError: If the file is missing.
    """
    path = Path(path)
    if not path.is_file():
        raise DataValidationError(f"missing dataset file {path}")
    df = FileReader().read_jsonl(path)
    if df.empty:
        return []
    columns = list(LongitudinalSample.__dataclass_fields__)
    missing = set(columns) - set(df.columns)
    if missing:
        raise DataValidationError(f"Missing columns in {path.name}: {sorted(missing)}")
    samples = []
    for row in _records(df, columns):
        row["stage"] = int(row["stage"])
        for key in ("current_image", "past_image"):
            if row[key] is not None:
                row[key] = os.path.normpath(path.parent.joinpath(row[key]))
        samples.append(LongitudinalSample(**row))
    return samples


def _relocate(
    samples: Sequence[LongitudinalSample], corpus_dir: Path, out_dir: Path
) -> List[LongitudinalSample]:
    """Rewrite corpus-relative image paths to paths relative to `out_dir`."""
    rel = Path(os.path.relpath(Path(corpus_dir).resolve(), Path(out_dir).resolve()))
    moved = []
    for s in samples:
        values = asdict(s)
        for key in ("current_image", "past_image"):
            if values[key] is not None:
                values[key] = rel.joinpath(values[key]).as_posix()
        moved.append(LongitudinalSample(**values))
    return moved


@dataclass
class BuildSummary:
    counts: Dict[str, int]
    skipped_pairs: int
    excluded_report_samples: int
    scarce_words_kept: int
    vocab_size: int

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"


def build_datasets(
    corpus_dir: Path,
    out_dir: Path,
    vocab_size: int = Configuration.DEFAULT_VOCAB_SIZE,
    max_len: int = Configuration.MAX_SEQUENCE_LENGTH,
) -> BuildSummary:
    """
    Build every dataset file and the vocabulary from a corpus directory.

    Writes stage1.jsonl, stage2.jsonl, stage3_{split}.jsonl,
    nondiff_{split}.jsonl, vocab.txt and build_summary.json into `out_dir`.

    Raises:
        DataValidationError: If the corpus fails validation or yields no
            training samples.
    """
    corpus_dir, out_dir = Path(corpus_dir), Path(out_dir)
    data = Data(corpus_dir)
    DataValidator(data).validate()
    processor = data.data_processor

    studies = data.study_records()
    by_id = {s.study_id: s for s in studies}
    frontal = {s.study_id for s in studies if s.view in Configuration.FRONTAL_VIEWS}
    logger.info("studies total=%d frontal=%d", len(studies), len(frontal))
    qa = [q for q in data.qa_records() if q.study_id in frontal]

    stats: Counter = Counter()
    pairs = pair_prior_visit(studies)
    reports = data.report_sections()
    report_samples = make_report_samples(pairs, reports, stats, processor)

    nondiff = [c for c in Configuration.QA_CATEGORIES if c != "difference"]
    stage3 = {
        split: make_vqa_samples(qa, by_id, ["difference"], split, 3, processor)
        for split in Configuration.SPLITS
    }
    nondiff_sets = {
        split: make_vqa_samples(qa, by_id, nondiff, split, 3, processor)
        for split in Configuration.SPLITS
    }
    test_qa = stage3["test"] + nondiff_sets["test"]
    kept = enforce_test_exclusion(report_samples, test_qa)
    kept = [s for s in kept if s.split != "test"]
    excluded = len(report_samples) - len(kept)

    frequent = processor.frequent_words(
        s.target for s in kept if s.split == "train"
    )
    filtered = []
    for s in kept:
        target = processor.drop_scarce_words(s.target, frequent)
        if target is not None:
            values = asdict(s)
            values["target"] = target
            filtered.append(LongitudinalSample(**values))

    stage1 = [
        LongitudinalSample(
            **{
                **asdict(s),
                "sample_id": f"{s.study_id}_caption",
                "stage": 1,
                "task": "caption",
                "past_study_id": None,
                "past_image": None,
            }
        )
        for s in filtered
        if s.task == "findings"
    ]
    stage2 = [
        LongitudinalSample(**{**asdict(s), "stage": 2})
        for s in filtered + stage3["train"] + stage3["valid"]
    ]

    if not any(s.split == "train" for s in stage2):
        raise DataValidationError("corpus yields no training samples")

    train_texts = [
        text
        for group in (stage1, stage2, stage3["train"], nondiff_sets["train"])
        for s in group
        if s.split == "train"
        for text in (s.instruction, s.target)
    ]
    vocab = tokenizer.train_bpe(train_texts, vocab_size, max_len)

    out_dir.mkdir(parents=True, exist_ok=True)
    counts = {}
    outputs = {Configuration.STAGE1_FILE: stage1, Configuration.STAGE2_FILE: stage2}
    for split in Configuration.SPLITS:
        outputs[Configuration.STAGE3_FILE.format(split=split)] = stage3[split]
        outputs[Configuration.NONDIFF_FILE.format(split=split)] = nondiff_sets[split]
    for name, samples in outputs.items():
        counts[name] = write_samples(_relocate(samples, corpus_dir, out_dir), out_dir / name)
    tokenizer.save_vocab(vocab, out_dir / Configuration.VOCAB_FILE)

    summary = BuildSummary(
        counts=counts,
        skipped_pairs=stats["skipped_pairs"],
        excluded_report_samples=excluded,
        scarce_words_kept=len(frequent),
        vocab_size=vocab.size,
    )
    out_dir.joinpath(Configuration.BUILD_SUMMARY_FILE).write_text(
        summary.to_json(), encoding="utf-8"
    )
    logger.info("build done %s", " ".join(f"{k}={v}" for k, v in counts.items()))
    return summary


@dataclass
class Batch:
    """
    A collated batch.

    Attributes:
        samples (List[LongitudinalSample]): Source samples.
        current_images (np.ndarray): (B, H, W, C).
        past_images (Optional[np.ndarray]): (B, H, W, C), zeros where absent, or None
        has_past (np.ndarray): (B,) booleans.
        instruction_ids (np.ndarray): (B, N_t) padded ids.
        instruction_mask (np.ndarray): (B, N_t), False on padding.
        target_ids (np.ndarray): (B, T) padded ``[bos, ..., eos]`` ids.
    """

    samples: List[LongitudinalSample]
    current_images: np.ndarray
    past_images: Optional[np.ndarray]
    has_past: np.ndarray
    instruction_ids: np.ndarray
    instruction_mask: np.ndarray
    target_ids: np.ndarray

    def __len__(self):
        return len(self.samples)


class ImageCache:
    """Loads 8-bit PGM/PNG images as float arrays scaled to [0, 1], once per path."""

    def __init__(self, in_channels: int = 1, dtype=np.float32):
        self.in_channels = in_channels
        self.dtype = dtype
        self._images: Dict[str, np.ndarray] = {}

    def __len__(self):
        return len(self._images)

    def load(self, path: str) -> np.ndarray:
        image = self._images.get(path)
        if image is None:
            if not Path(path).is_file():
                raise DataValidationError(f"missing image {path}")
            with Image.open(path) as im:
                pixels = np.asarray(im.convert("L"), dtype=self.dtype) / 255.0
            image = np.repeat(pixels[:, :, None], self.in_channels, axis=-1)
            self._images[path] = image
        return image


def pad_sequences(sequences: Sequence[Sequence[int]]) -> Tuple[np.ndarray, np.ndarray]:
    width = max(len(s) for s in sequences)
    ids = np.full((len(sequences), width), tokenizer.PAD_ID, dtype=np.int64)
    for i, seq in enumerate(sequences):
        ids[i, : len(seq)] = seq
    return ids, ids != tokenizer.PAD_ID


def collate(
    samples: Sequence[LongitudinalSample],
    vocab: "tokenizer.Vocab",
    images: ImageCache,
    dual: bool = True,
) -> Batch:
    """
    Encode texts, pad them, and stack the images of a list of samples.

    Args:
        samples: Samples of one batch.
        vocab: Vocabulary.
        images: Image loader.
        dual (bool): Whether past images are loaded at all.
    """
    current = np.stack([images.load(s.current_image) for s in samples])
    has_past = np.array([dual and s.past_image is not None for s in samples])
    past = None
    if has_past.any():
        past = np.zeros_like(current)
        for i, s in enumerate(samples):
            if has_past[i]:
                past[i] = images.load(s.past_image)
    instruction_ids, instruction_mask = pad_sequences(
        [tokenizer.encode(s.instruction, vocab) for s in samples]
    )
    target_ids, _ = pad_sequences([tokenizer.encode(s.target, vocab) for s in samples])
    return Batch(
        samples=list(samples),
        current_images=current,
        past_images=past,
        has_past=has_past,
        instruction_ids=instruction_ids,
        instruction_mask=instruction_mask,
        target_ids=target_ids,
    )


def iterate_batches(
    samples: Sequence[LongitudinalSample],
    batch_size: int,
    rng: Optional[np.random.Generator] = None,
) -> Iterator[List[LongitudinalSample]]:
    """Yield consecutive batches; shuffled once per pass when `rng` is given."""
    order = np.arange(len(samples))
    if rng is not None:
        rng.shuffle(order)
    for start in range(0, len(order), batch_size):
        yield [samples[i] for i in order[start : start + batch_size]]
