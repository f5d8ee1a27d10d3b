import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from clusteraug.corpus import delexicalize, group_by_frame
from clusteraug.pairing import assign_folds, dispersed_cluster_pairing
from clusteraug.synth import Grammar, bundled_grammar_path, generate_corpus


@pytest.fixture(scope="session")
def grammar():
    return Grammar.from_file(bundled_grammar_path())


@pytest.fixture(scope="session")
def synth_corpus(grammar):
    return generate_corpus(grammar, 120, 11)


@pytest.fixture(scope="session")
def synth_delex(synth_corpus):
    return [delexicalize(inst) for inst in synth_corpus]


@pytest.fixture(scope="session")
def synth_groups(synth_delex):
    return group_by_frame(synth_delex)


@pytest.fixture(scope="session")
def synth_pairs(synth_groups):
    pairs, summary = dispersed_cluster_pairing(synth_groups, 3, 3, 5)
    assert summary.pairs_emitted == len(pairs)
    return pairs


@pytest.fixture(scope="session")
def synth_folds(synth_pairs):
    return assign_folds(len(synth_pairs), 2, 7)
