"""Deterministic synthetic longitudinal chest X-ray corpus.

Every visit carries a latent state (finding, side, severity). Images are
rendered from the state, reports and answers are generated from it by
templates, and the states themselves are written to states.jsonl so every
stored answer can be re-derived.
"""

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
from PIL import Image

from data import QARecord, StudyRecord
from utils import Configuration

logger = logging.getLogger(__name__)

FINDINGS = ("opacity", "effusion", "consolidation", "pneumothorax")
SIDES = ("left", "right")
SEVERITIES = ("mild", "moderate", "severe")
INTENSITY = {"mild": 0.25, "moderate": 0.5, "severe": 0.75}
# vertical blob centre as a fraction of the image height
FINDING_ROW = {"pneumothorax": 0.3, "opacity": 0.45, "consolidation": 0.6, "effusion": 0.75}
FINDING_RADIUS = {"pneumothorax": 0.08, "opacity": 0.1, "consolidation": 0.09, "effusion": 0.12}
NONDIFFERENCE_FORMS = {
    "presence": "closed",
    "abnormality": "closed",
    "view": "open",
    "location": "open",
    "level": "open",
    "type": "open",
}


@dataclass(frozen=True)
class State:
    finding: str = "normal"
    side: Optional[str] = None
    severity: Optional[str] = None

    @property
    def normal(self) -> bool:
        return self.finding == "normal"


@dataclass
class SyntheticCorpus:
    studies: List[StudyRecord] = field(default_factory=list)
    reports: List[dict] = field(default_factory=list)
    qa: List[QARecord] = field(default_factory=list)
    states: List[dict] = field(default_factory=list)
    images: Dict[str, np.ndarray] = field(default_factory=dict)


def difference_answer(past: State, current: State) -> str:
    """
    Describe the change from `past` to `current`.

    Returns:
        str: "nothing has changed", "worsening X", "improving X",
        "new X in the S lung", "resolved X", or "new X in the S lung, resolved Y".
    """
    if past == current:
        return "nothing has changed"
    if past.normal:
        return f"new {current.finding} in the {current.side} lung"
    if current.normal:
        return f"resolved {past.finding}"
    if (past.finding, past.side) == (current.finding, current.side):
        before = SEVERITIES.index(past.severity)
        after = SEVERITIES.index(current.severity)
        trend = "worsening" if after > before else "improving"
        return f"{trend} {current.finding}"
    return f"new {current.finding} in the {current.side} lung, resolved {past.finding}"


def findings_text(state: State, variant: int) -> str:
    if state.normal:
        return (
            "the lungs are clear. there is no pleural effusion or pneumothorax. "
            "the heart size is normal."
            if variant == 0
            else "no focal consolidation, effusion or pneumothorax. "
            "the heart size is normal."
        )
    other = "right" if state.side == "left" else "left"
    if variant == 0:
        return (
            f"there is a {state.severity} {state.finding} in the {state.side} lung. "
            f"the {other} lung is clear. the heart size is normal."
        )
    return (
        f"{state.severity} {state.side} {state.finding} is seen. "
        f"no {state.finding} in the {other} lung. the heart size is normal."
    )


def impression_text(state: State) -> str:
    if state.normal:
        return "no acute cardiopulmonary process."
    return f"{state.severity} {state.side} {state.finding}."


def nondifference_qa(
    category: str, state: State, view: str, rng: np.random.Generator
) -> Optional[Tuple[str, str]]:
    """Question and answer of one non-difference category, or None if it does not apply."""
    if category == "presence":
        asked = FINDINGS[rng.integers(len(FINDINGS))]
        return f"is there evidence of {asked} in this image?", (
            "yes" if state.finding == asked else "no"
        )
    if category == "abnormality":
        return "is this image abnormal?", "no" if state.normal else "yes"
    if category == "view":
        return "which view is this image taken?", f"{view} view"
    if state.normal:
        return None
    if category == "location":
        return f"where is the {state.finding} located?", f"{state.side} lung"
    if category == "level":
        return f"what level is the {state.finding}?", state.severity
    if category == "type":
        return "what type of abnormality is seen in this image?", state.finding
    raise ValueError(f"unknown category {category}")


def _random_abnormal(rng: np.random.Generator) -> State:
    return State(
        FINDINGS[rng.integers(len(FINDINGS))],
        SIDES[rng.integers(len(SIDES))],
        SEVERITIES[rng.integers(len(SEVERITIES))],
    )


def next_state(state: State, rng: np.random.Generator) -> State:
    """Sample the state of the following visit."""
    roll = rng.random()
    if roll < 0.3:
        return state
    if state.normal:
        return _random_abnormal(rng)
    if roll < 0.65:
        level = SEVERITIES.index(state.severity)
        shifted = level + (1 if rng.random() < 0.5 else -1)
        if shifted < 0:
            return State()
        return State(state.finding, state.side, SEVERITIES[min(shifted, 2)])
    if roll < 0.8:
        return State()
    return _random_abnormal(rng)


def render_image(
    state: State, view: str, size: int, rng: np.random.Generator
) -> np.ndarray:
    """
    Draw a grayscale chest-like image with the abnormality as a bright blob.

    The patient's left appears on the image right. AP views carry a marker bar
    in the top-left corner; lateral views show a single central field.
    """
    yy, xx = np.mgrid[0:size, 0:size] / float(size)
    image = np.full((size, size), 0.55)
    if view == "lateral":
        lung = ((xx - 0.5) / 0.28) ** 2 + ((yy - 0.5) / 0.38) ** 2 < 1.0
        image[lung] = 0.2
    else:
        for cx in (0.3, 0.7):
            lung = ((xx - cx) / 0.16) ** 2 + ((yy - 0.5) / 0.33) ** 2 < 1.0
            image[lung] = 0.15
    if not state.normal:
        cx = 0.7 if state.side == "left" else 0.3
        cy = FINDING_ROW[state.finding]
        radius = FINDING_RADIUS[state.finding]
        blob = np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2 * radius ** 2))
        image = image + INTENSITY[state.severity] * blob
    if view == "ap":
        image[1:3, 1 : max(3, size // 8)] = 1.0
    image = image + rng.normal(0.0, 0.02, size=image.shape)
    return np.round(np.clip(image, 0.0, 1.0) * 255).astype(np.uint8)


def _split_patients(n_patients: int, rng: np.random.Generator) -> List[str]:
    order = rng.permutation(n_patients)
    n_train = int(round(0.8 * n_patients))
    n_valid = int(round(0.1 * n_patients))
    splits = [""] * n_patients
    for rank, index in enumerate(order):
        if rank < n_train:
            splits[index] = "train"
        elif rank < n_train + n_valid:
            splits[index] = "valid"
        else:
            splits[index] = "test"
    return splits


def generate_synthetic_corpus(
    seed: int,
    n_patients: int,
    visits_range: Tuple[int, int] = (1, 4),
    image_size: int = 64,
    lateral_fraction: float = 0.1,
    section_dropout: float = 0.15,
    nondifference_per_study: int = 2,
) -> SyntheticCorpus:
    """
    Generate a corpus with the studies/reports/QA schema.

    Args:
        seed (int): RNG seed; identical seeds give identical corpora.
        n_patients (int): Number of patients (at least 1).
        visits_range (Tuple[int, int]): Inclusive range of visits per patient.
        image_size (int): Image height and width.
        lateral_fraction (float): Probability that a later visit is a lateral view.
        section_dropout (float): Probability that a report section is absent.
        nondifference_per_study (int): Non-difference questions per frontal study.

    Returns:
        SyntheticCorpus: Records, states and rendered images.
    """
    if n_patients < 1:
        raise ValueError("n_patients must be at least 1")
    rng = np.random.default_rng(seed)
    splits = _split_patients(n_patients, rng)
    corpus = SyntheticCorpus()
    lo, hi = visits_range
    categories = list(NONDIFFERENCE_FORMS)

    for p in range(n_patients):
        patient_id = f"p{p:05d}"
        n_visits = int(rng.integers(lo, hi + 1))
        timestamp = int(rng.integers(0, 3650))
        state = State() if rng.random() < 0.3 else _random_abnormal(rng)
        previous: Optional[Tuple[StudyRecord, State]] = None
        for v in range(n_visits):
            if v:
                timestamp += int(rng.integers(1, 366))
                state = next_state(state, rng)
            view = "lateral" if v and rng.random() < lateral_fraction else (
                "pa" if rng.random() < 0.6 else "ap"
            )
            study_id = f"s{p:05d}_{v:02d}"
            image_ref = f"{Configuration.IMAGES_DIR}/{patient_id}/{study_id}.pgm"
            study = StudyRecord(
                patient_id, study_id, timestamp, view, image_ref, splits[p]
            )
            corpus.studies.append(study)
            corpus.images[image_ref] = render_image(state, view, image_size, rng)
            corpus.states.append({"study_id": study_id, "patient_id": patient_id, **asdict(state)})

            variant = int(rng.integers(2))
            findings = None if rng.random() < section_dropout else findings_text(state, variant)
            impression = None if rng.random() < section_dropout else impression_text(state)
            corpus.reports.append(
                {"study_id": study_id, "findings": findings, "impression": impression}
            )

            if view not in Configuration.FRONTAL_VIEWS:
                continue
            if previous is not None:
                past_study, past_state = previous
                corpus.qa.append(
                    QARecord(
                        qa_id=f"{study_id}_difference",
                        study_id=study_id,
                        past_study_id=past_study.study_id,
                        category="difference",
                        question=Configuration.DIFFERENCE_QUESTION.lower(),
                        answer=difference_answer(past_state, state),
                        answer_form="open",
                        split=splits[p],
                    )
                )
            picked = rng.permutation(len(categories))
            asked = 0
            for index in picked:
                if asked == nondifference_per_study:
                    break
                category = categories[index]
                qa = nondifference_qa(category, state, view, rng)
                if qa is None:
                    continue
                asked += 1
                corpus.qa.append(
                    QARecord(
                        qa_id=f"{study_id}_{category}",
                        study_id=study_id,
                        past_study_id=None,
                        category=category,
                        question=qa[0],
                        answer=qa[1],
                        answer_form=NONDIFFERENCE_FORMS[category],
                        split=splits[p],
                    )
                )
            previous = (study, state)

    logger.info(
        "synthetic corpus seed=%d patients=%d studies=%d qa=%d",
        seed,
        n_patients,
        len(corpus.studies),
        len(corpus.qa),
    )
    return corpus


def _write_jsonl(rows: List[dict], path: Path) -> None:
    text = "".join(json.dumps(row, ensure_ascii=False) + "\n" for row in rows)
    path.write_text(text, encoding="utf-8", newline="\n")


def write_corpus(corpus: SyntheticCorpus, out_dir: Path) -> None:
    """Write studies/reports/qa/states JSONL files and the PGM images."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_jsonl([asdict(s) for s in corpus.studies], out_dir / Configuration.STUDIES_FILE)
    _write_jsonl(corpus.reports, out_dir / Configuration.REPORTS_FILE)
    _write_jsonl([asdict(q) for q in corpus.qa], out_dir / Configuration.QA_FILE)
    _write_jsonl(corpus.states, out_dir / Configuration.STATES_FILE)
    for ref, pixels in sorted(corpus.images.items()):
        path = out_dir.joinpath(ref)
        path.parent.mkdir(parents=True, exist_ok=True)
        Image.fromarray(pixels).save(path, format="PPM")


def read_states(corpus_dir: Path) -> Dict[str, State]:
    """Latent state per study id from states.jsonl."""
    states = {}
    path = Path(corpus_dir) / Configuration.STATES_FILE
    for line in path.read_text(encoding="utf-8").splitlines():
        row = json.loads(line)
        states[row["study_id"]] = State(row["finding"], row["side"], row["severity"])
    return states
