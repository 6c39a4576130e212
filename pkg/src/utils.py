"""Project-wide configuration constants and small helpers shared by every stage.

The helpers here must stay free of numpy imports: the CLI calls
`limit_threads` before any numerical module is loaded.
"""

import hashlib
import json
import logging
import os
from pathlib import Path
from typing import Any, Dict, Iterable, Optional


class Configuration:
    VER = 1
    RAW_DATA_PATH = Path(__file__).parents[1].joinpath("data/raw")
    INTERIM_DATA_PATH = Path(__file__).parents[1].joinpath("data/interim")
    PROCESSED_DATA_PATH = Path(__file__).parents[1].joinpath("data/processed")
    MODELS_PATH = Path(__file__).parents[1].joinpath("models")

    # corpus files
    STUDIES_FILE = "studies.jsonl"
    REPORTS_FILE = "reports.jsonl"
    QA_FILE = "qa.jsonl"
    STATES_FILE = "states.jsonl"
    IMAGES_DIR = "images"

    # built dataset files
    STAGE1_FILE = "stage1.jsonl"
    STAGE2_FILE = "stage2.jsonl"
    STAGE3_FILE = "stage3_{split}.jsonl"
    NONDIFF_FILE = "nondiff_{split}.jsonl"
    VOCAB_FILE = "vocab.txt"
    BUILD_SUMMARY_FILE = "build_summary.json"

    # run artifacts
    CHECKPOINT_FILE = "checkpoint.bin"
    RUN_LOG_FILE = "run_log.csv"
    LOSS_PLOT_FILE = "loss_curve.png"
    MANIFEST_FILE = "manifest.json"
    PREDICTIONS_FILE = "predictions.jsonl"
    METRICS_FILE = "metrics.json"
    PER_SAMPLE_FILE = "per_sample.csv"

    FINDINGS_INSTRUCTION = "What does the image describe?"
    IMPRESSION_INSTRUCTION = "What is the summary of the image?"
    DIFFERENCE_QUESTION = "What has changed compared to the reference image?"

    SPLITS = ("train", "valid", "test")
    QA_CATEGORIES = (
        "difference",
        "presence",
        "abnormality",
        "view",
        "location",
        "level",
        "type",
    )
    FRONTAL_VIEWS = ("pa", "ap")

    PAD_TOKEN = "<pad>"
    BOS_TOKEN = "<bos>"
    EOS_TOKEN = "<eos>"
    UNK_TOKEN = "<unk>"
    UNK_GLYPH = "<unk>"
    MAX_SEQUENCE_LENGTH = 100
    DEFAULT_VOCAB_SIZE = 1024
    SCARCE_WORD_MIN_COUNT = 3


LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s %(message)s"


def configure_logging(level: str = "INFO") -> None:
    """
    Install a single stream handler on the root logger.

    Args:
        level (str): Logging level name, e.g. "INFO" or "DEBUG".
    """
    logging.basicConfig(level=level.upper(), format=LOG_FORMAT, force=True)


def limit_threads(n_threads: Optional[int]) -> None:
    """
    Pin the BLAS/OpenMP thread pools. Only effective before numpy is imported.

    Args:
        n_threads (Optional[int]): Number of threads; None leaves the environment untouched.
    """
    if n_threads is None:
        return
    for var in (
        "OMP_NUM_THREADS",
        "OPENBLAS_NUM_THREADS",
        "MKL_NUM_THREADS",
        "NUMEXPR_NUM_THREADS",
    ):
        os.environ[var] = str(n_threads)


def git_blob_hash(content: bytes) -> str:
    """
    Hash bytes the way git hashes a blob object.

    Args:
        content (bytes): The blob content.

    Returns:
        str: Hex sha1 of ``b"blob <len>\\0" + content``.
    """
    header = f"blob {len(content)}\0".encode("ascii")
    return hashlib.sha1(header + content).hexdigest()


def content_hash(paths: Iterable[Path]) -> str:
    """
    Combine the git-style blob hashes of every file under the given paths.

    Directories are walked recursively; files are visited in sorted relative order
    so the hash only depends on names and contents.

    Args:
        paths (Iterable[Path]): Files and/or directories.

    Returns:
        str: Hex sha1 over ``"<relative path> <blob hash>\\n"`` lines.
    """
    lines = []
    for root in sorted(Path(p) for p in paths):
        if root.is_dir():
            files = sorted(f for f in root.rglob("*") if f.is_file())
            for f in files:
                rel = f.relative_to(root).as_posix()
                lines.append(f"{root.name}/{rel} {git_blob_hash(f.read_bytes())}")
        elif root.is_file():
            lines.append(f"{root.name} {git_blob_hash(root.read_bytes())}")
    return hashlib.sha1("\n".join(lines).encode("utf-8")).hexdigest()


def fingerprint(config: Dict[str, Any]) -> str:
    """Stable sha256 of a JSON-serialisable configuration."""
    payload = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def write_manifest(
    out_dir: Path, verb: str, config: Dict[str, Any], inputs: Iterable[Path]
) -> Path:
    """
    Write the run manifest next to the outputs of a CLI verb.

    Args:
        out_dir (Path): Output directory of the verb.
        verb (str): The CLI verb that produced the outputs.
        config (Dict[str, Any]): The resolved configuration.
        inputs (Iterable[Path]): Input files/directories to hash.

    Returns:
        Path: Path of the written manifest.
    """
    inputs = [Path(p) for p in inputs]
    manifest = {
        "version": Configuration.VER,
        "verb": verb,
        "config": config,
        "inputs": sorted(str(p) for p in inputs),
        "input_hash": content_hash(inputs),
    }
    path = Path(out_dir).joinpath(Configuration.MANIFEST_FILE)
    path.write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return path
