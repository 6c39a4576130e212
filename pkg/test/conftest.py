"""Shared fixtures: a small synthetic corpus built once per session."""

import pytest

import data
import synthetic


@pytest.fixture(scope="session")
def built(tmp_path_factory):
    root = tmp_path_factory.mktemp("built")
    corpus = synthetic.generate_synthetic_corpus(seed=11, n_patients=40, image_size=32)
    synthetic.write_corpus(corpus, root / "corpus")
    summary = data.build_datasets(root / "corpus", root / "dataset", vocab_size=200)
    return root / "dataset", summary
