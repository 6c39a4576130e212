"""A module for testing the synthetic.py module."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import data
import synthetic
from synthetic import State


@pytest.fixture(scope="module")
def corpus():
    return synthetic.generate_synthetic_corpus(seed=7, n_patients=30, image_size=32)


################################################
# difference_answer
################################################


@pytest.mark.parametrize(
    "past,current,expected",
    [
        (State(), State(), "nothing has changed"),
        (
            State("opacity", "left", "mild"),
            State("opacity", "left", "severe"),
            "worsening opacity",
        ),
        (
            State("effusion", "right", "severe"),
            State("effusion", "right", "moderate"),
            "improving effusion",
        ),
        (State(), State("pneumothorax", "left", "mild"), "new pneumothorax in the left lung"),
        (State("consolidation", "right", "mild"), State(), "resolved consolidation"),
        (
            State("opacity", "left", "mild"),
            State("effusion", "right", "mild"),
            "new effusion in the right lung, resolved opacity",
        ),
    ],
)
def test_difference_answer(past, current, expected):
    assert synthetic.difference_answer(past, current) == expected


################################################
# nondifference_qa / render_image
################################################


def test_closed_questions_answer_yes_or_no():
    rng = np.random.default_rng(0)
    for state in (State(), State("opacity", "left", "mild")):
        for category, form in synthetic.NONDIFFERENCE_FORMS.items():
            qa = synthetic.nondifference_qa(category, state, "pa", rng)
            if form == "closed":
                assert qa[1] in ("yes", "no")


def test_normal_state_has_no_location_question():
    rng = np.random.default_rng(0)
    assert synthetic.nondifference_qa("location", State(), "pa", rng) is None
    opacity = State("opacity", "left", "mild")
    assert synthetic.nondifference_qa("level", opacity, "pa", rng) == (
        "what level is the opacity?",
        "mild",
    )


def test_render_places_finding_on_image_right_for_left_lung():
    rng = np.random.default_rng(0)
    size = 64
    normal = synthetic.render_image(State(), "pa", size, rng).astype(float)
    severe = State("opacity", "left", "severe")
    left = synthetic.render_image(severe, "pa", size, rng).astype(float)
    diff = left - normal
    assert diff[:, size // 2 :].sum() > diff[:, : size // 2].sum()
    assert synthetic.render_image(State(), "ap", size, rng).dtype == np.uint8


################################################
# generate_synthetic_corpus
################################################


def test_corpus_is_deterministic():
    first = synthetic.generate_synthetic_corpus(seed=3, n_patients=5, image_size=16)
    second = synthetic.generate_synthetic_corpus(seed=3, n_patients=5, image_size=16)
    assert first.studies == second.studies
    assert first.qa == second.qa
    assert all(np.array_equal(first.images[k], second.images[k]) for k in first.images)


def test_corpus_rejects_no_patients():
    with pytest.raises(ValueError):
        synthetic.generate_synthetic_corpus(seed=0, n_patients=0)


def test_difference_answers_follow_states(corpus):
    states = {
        row["study_id"]: State(row["finding"], row["side"], row["severity"])
        for row in corpus.states
    }
    diff = [q for q in corpus.qa if q.category == "difference"]
    assert diff
    for q in diff:
        assert q.answer == synthetic.difference_answer(
            states[q.past_study_id], states[q.study_id]
        )


def test_difference_questions_only_on_frontal_views(corpus):
    views = {s.study_id: s.view for s in corpus.studies}
    for q in corpus.qa:
        assert views[q.study_id] in ("pa", "ap")
        if q.past_study_id is not None:
            assert views[q.past_study_id] in ("pa", "ap")


def test_written_corpus_reads_back(corpus, tmp_path):
    synthetic.write_corpus(corpus, tmp_path)
    loaded = data.Data(tmp_path)
    data.DataValidator(loaded).validate()
    assert loaded.study_records() == corpus.studies
    assert synthetic.read_states(tmp_path)[corpus.studies[0].study_id] == State(
        corpus.states[0]["finding"], corpus.states[0]["side"], corpus.states[0]["severity"]
    )
    image = data.ImageCache().load(str(tmp_path / corpus.studies[0].image))
    assert image.shape == (32, 32, 1)
    assert np.allclose(image[..., 0], corpus.images[corpus.studies[0].image] / 255.0)


@settings(max_examples=20, deadline=None)
@given(st.integers(min_value=0, max_value=10_000))
def test_pairs_and_splits_are_consistent(seed):
    corpus = synthetic.generate_synthetic_corpus(seed=seed, n_patients=12, image_size=16)
    by_id = {s.study_id: s for s in corpus.studies}

    for past, current in data.pair_prior_visit(corpus.studies):
        if past is not None:
            assert past.patient_id == current.patient_id
            assert past.timestamp < current.timestamp

    patient_splits = {}
    for s in corpus.studies:
        assert patient_splits.setdefault(s.patient_id, s.split) == s.split

    for q in corpus.qa:
        if q.past_study_id is not None:
            past, current = by_id[q.past_study_id], by_id[q.study_id]
            assert past.patient_id == current.patient_id
            assert past.timestamp < current.timestamp
