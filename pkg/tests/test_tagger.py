import random

import numpy as np
import pytest

from clusteraug.corpus import Instance
from clusteraug.errors import ValidationError
from clusteraug.synth import Grammar, bundled_grammar_path, generate_corpus
from clusteraug.tagger import (
    TaggerConfig,
    ab_experiment,
    extract_spans,
    span_f1,
    token_accuracy,
    train_tagger,
)
from oracles import span_extract_oracle


def small_tagger_config(**overrides):
    base = dict(layers=1, d_model=16, n_heads=2, d_ff=32, train_steps=150, batch_size=8)
    base.update(overrides)
    return TaggerConfig(**base)


# --- span extraction -------------------------------------------------------------


def test_extract_spans_examples():
    assert extract_spans(["O", "B-city", "I-city", "O"]) == [(1, 2, "city")]
    assert extract_spans(["B-a", "B-a"]) == [(0, 0, "a"), (1, 1, "a")]
    assert extract_spans(["O", "I-x", "I-x"]) == [(1, 2, "x")]  # dangling I opens
    assert extract_spans(["B-a", "I-b"]) == [(0, 0, "a"), (1, 1, "b")]
    assert extract_spans(["O", "O"]) == []


def test_extract_spans_fuzz_against_oracle():
    rng = random.Random(9)
    alphabet = ["O", "B-x", "I-x", "B-y", "I-y"]
    for _ in range(1000):
        labels = [rng.choice(alphabet) for _ in range(rng.randint(1, 10))]
        assert extract_spans(labels) == span_extract_oracle(labels)


def test_span_f1_perfect_match():
    gold = [Instance(("to", "boston"), ("O", "B-city"))]
    report = span_f1(gold, [["O", "B-city"]])
    assert (report.precision, report.recall, report.f1) == (100.0, 100.0, 100.0)


def test_span_f1_all_o_prediction():
    gold = [Instance(("to", "boston"), ("O", "B-city"))]
    report = span_f1(gold, [["O", "O"]])
    assert report.precision == 0.0  # no predicted spans: undefined-as-0
    assert report.recall == 0.0
    assert report.f1 == 0.0


def test_span_f1_boundary_mismatch():
    gold = [Instance(("go", "to", "new", "york"), ("O", "O", "B-city", "I-city"))]
    predicted = [["O", "O", "B-city", "O"]]  # span 2-2 instead of 2-3
    report = span_f1(gold, predicted)
    assert report.n_correct == 0
    assert report.f1 == 0.0


def test_span_f1_per_type_breakdown():
    gold = [
        Instance(("a", "b"), ("B-x", "B-y")),
        Instance(("c",), ("B-x",)),
    ]
    predicted = [["B-x", "O"], ["B-y"]]
    report = span_f1(gold, predicted)
    assert report.per_type["x"]["gold"] == 2
    assert report.per_type["x"]["correct"] == 1
    assert report.per_type["y"]["predicted"] == 1
    assert report.per_type["y"]["correct"] == 0


def test_span_f1_length_mismatch():
    gold = [Instance(("a",), ("O",))]
    with pytest.raises(ValueError):
        span_f1(gold, [["O", "O"]])
    with pytest.raises(ValueError):
        span_f1(gold, [])


def test_span_f1_order_invariance():
    rng = random.Random(4)
    grammar = Grammar.from_file(bundled_grammar_path())
    corpus = generate_corpus(grammar, 20, 3)
    predicted = [list(inst.labels) for inst in corpus]
    predicted[3][0] = "B-date"  # perturb to avoid the trivial all-correct case
    paired = list(zip(corpus, predicted))
    base = span_f1(corpus, predicted)
    rng.shuffle(paired)
    shuffled = span_f1([p[0] for p in paired], [p[1] for p in paired])
    assert base.f1 == shuffled.f1
    assert base.n_correct == shuffled.n_correct


# --- tagger training ---------------------------------------------------------------


def test_tagger_overfits_small_corpus():
    grammar = Grammar.from_file(bundled_grammar_path())
    corpus = generate_corpus(grammar, 20, 3)
    tagger = train_tagger(corpus, small_tagger_config(train_steps=500), seed=0)
    assert token_accuracy(tagger, corpus) > 0.95


def test_tagger_deterministic_per_seed():
    grammar = Grammar.from_file(bundled_grammar_path())
    corpus = generate_corpus(grammar, 8, 3)
    cfg = small_tagger_config(train_steps=20)
    a = train_tagger(corpus, cfg, seed=3)
    b = train_tagger(corpus, cfg, seed=3)
    for (name_a, ta), (name_b, tb) in zip(a.store.named(), b.store.named()):
        assert name_a == name_b
        assert np.array_equal(ta.data, tb.data)
    # inference is deterministic given parameters
    tokens = corpus[0].tokens
    assert a.predict(tokens) == a.predict(tokens) == b.predict(tokens)


def test_tagger_single_instance_corpus():
    corpus = [Instance(("to", "boston"), ("O", "B-city"))]
    tagger = train_tagger(corpus, small_tagger_config(train_steps=5), seed=0)
    assert len(tagger.predict(("to", "boston"))) == 2


def test_tagger_rejects_labels_outside_tag_set():
    corpus = [Instance(("to", "boston"), ("O", "B-city"))]
    cfg = small_tagger_config(tag_set=["O", "B-date"])
    with pytest.raises(ValidationError, match="B-city"):
        train_tagger(corpus, cfg, seed=0)


def test_tagger_config_rejects_unknown_keys():
    with pytest.raises(ValidationError):
        TaggerConfig.from_dict({"bogus": 3})


# --- A/B harness ---------------------------------------------------------------------


def test_ab_experiment_shape_and_null_augmentation():
    grammar = Grammar.from_file(bundled_grammar_path())
    train = generate_corpus(grammar, 12, 3)
    test = generate_corpus(grammar, 8, 4)
    cfg = small_tagger_config(train_steps=15)
    report = ab_experiment(train, [], test, cfg, n_seeds=2, base_seed=1)
    assert len(report["baseline"]["per_seed_f1"]) == 2
    assert len(report["augmented"]["per_seed_f1"]) == 2
    # empty augmentation: identical data and seeds, identical scores
    assert report["baseline"]["per_seed_f1"] == report["augmented"]["per_seed_f1"]
    assert report["mean_f1_delta"] == 0.0
    for name in ("baseline", "augmented"):
        per_seed = report[name]["per_seed_f1"]
        assert report[name]["mean_f1"] == pytest.approx(sum(per_seed) / len(per_seed))


def test_ab_experiment_warns_on_overlap():
    grammar = Grammar.from_file(bundled_grammar_path())
    train = generate_corpus(grammar, 10, 3)
    cfg = small_tagger_config(train_steps=5)
    report = ab_experiment(train, [], train, cfg, n_seeds=1, base_seed=0)
    assert report["warnings"]
