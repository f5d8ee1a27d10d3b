import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from clusteraug.corpus import (
    Instance,
    SlotLexicon,
    build_lexicon,
    delexicalize,
    format_corpus,
    frame_of_delex,
    frame_of_instance,
    group_by_frame,
    parse_corpus,
    refill,
    validate_bio,
)
from clusteraug.errors import ParseError, UnknownSlotError, ValidationError


def test_parse_simple_utterance():
    text = "show\tO\nme\tO\nflights\tO\n"
    instances = parse_corpus(text)
    assert len(instances) == 1
    assert instances[0].tokens == ("show", "me", "flights")
    assert instances[0].labels == ("O", "O", "O")


def test_parse_bio_violation_reports_utterance_index():
    text = "flights\tO\n\nboston\tI-city\n"
    with pytest.raises(ValidationError, match="utterance 1"):
        parse_corpus(text)


def test_parse_empty_file():
    assert parse_corpus("") == []


def test_parse_lowercases_tokens_not_labels():
    instances = parse_corpus("Boston\tB-City\n")
    assert instances[0].tokens == ("boston",)
    assert instances[0].labels == ("B-City",)


@pytest.mark.parametrize(
    "text",
    [
        "show O\n",  # space instead of tab
        "show\tO\textra\n",
        "\tO\n",
        "show\t\n",
        "\nshow\tO\n",  # leading blank
        "show\tO\n\n\n",  # doubled trailing blank
        "a\tO\n\n\nb\tO\n",  # doubled separator
    ],
)
def test_parse_malformed_lines(text):
    with pytest.raises(ParseError):
        parse_corpus(text)


def test_corpus_roundtrip_through_format():
    text = "show\tO\nboston\tB-city\n\nlist\tO\nnew\tB-city\nyork\tI-city\n"
    instances = parse_corpus(text)
    again = parse_corpus(format_corpus(instances))
    assert again == instances
    # and a second round trip is byte-stable
    assert format_corpus(again) == format_corpus(instances)


def test_instance_invariants():
    with pytest.raises(ValidationError):
        Instance((), ())
    with pytest.raises(ValidationError):
        Instance(("a",), ("O", "O"))
    with pytest.raises(ValidationError):
        Instance(("a", "b"), ("O", "I-city"))
    with pytest.raises(ValidationError):
        Instance(("a", "b"), ("B-city", "I-date"))


def test_delexicalize_spans_collapse():
    inst = Instance(
        ("show", "me", "the", "nearest", "restaurant"),
        ("O", "O", "O", "B-distance", "B-pos"),
    )
    assert delexicalize(inst) == ("show", "me", "the", "<distance>", "<pos>")


def test_delexicalize_no_slots_is_identity():
    inst = Instance(("book", "a", "table"), ("O", "O", "O"))
    assert delexicalize(inst) == ("book", "a", "table")


def test_delexicalize_multi_token_span():
    inst = Instance(("to", "new", "york", "city"), ("O", "B-city", "I-city", "I-city"))
    assert delexicalize(inst) == ("to", "<city>")


def test_build_lexicon_harvest_and_dedup():
    one = Instance(("to", "new", "york"), ("O", "B-city", "I-city"))
    lex = build_lexicon([one])
    assert lex.entries == {"city": [("new", "york")]}
    two = Instance(("in", "boston"), ("O", "B-city"))
    lex = build_lexicon([two, two])
    assert lex.entries == {"city": [("boston",)]}
    empty = build_lexicon([Instance(("hi",), ("O",))])
    assert empty.entries == {}


def test_lexicon_json_roundtrip():
    lex = build_lexicon([Instance(("to", "new", "york"), ("O", "B-city", "I-city"))])
    again = SlotLexicon.from_json(lex.to_json())
    assert again.entries == lex.entries


def test_refill_single_candidate():
    lex = SlotLexicon({"city": [("boston",)]})
    inst = refill(("to", "<city>"), lex, rng_seed=0)
    assert inst.tokens == ("to", "boston")
    assert inst.labels == ("O", "B-city")


def test_refill_multiword_bio_emission():
    lex = SlotLexicon({"city": [("new", "york")]})
    inst = refill(("to", "<city>"), lex, rng_seed=0)
    assert inst.tokens == ("to", "new", "york")
    assert inst.labels == ("O", "B-city", "I-city")


def test_refill_deterministic_per_seed():
    lex = SlotLexicon({"city": [("boston",), ("denver",), ("new", "york")]})
    a = refill(("to", "<city>", "via", "<city>"), lex, rng_seed=42)
    b = refill(("to", "<city>", "via", "<city>"), lex, rng_seed=42)
    assert a == b


def test_refill_unknown_slot():
    with pytest.raises(UnknownSlotError, match="date"):
        refill(("on", "<date>"), SlotLexicon({"city": [("boston",)]}), rng_seed=0)


def test_group_by_frame_dedup_and_multiset():
    groups = group_by_frame([("show", "<city>"), ("show", "<city>")])
    assert list(groups) == [("city",)]
    assert groups[("city",)] == [("show", "<city>")]

    groups = group_by_frame([("show", "<city>"), ("list", "<date>")])
    assert set(groups) == {("city",), ("date",)}

    groups = group_by_frame([("a", "<city>", "<city>"), ("b", "<city>")])
    assert set(groups) == {("city", "city"), ("city",)}


def test_group_by_frame_partitions(synth_delex):
    groups = group_by_frame(synth_delex)
    all_members = [u for group in groups.values() for u in group]
    assert len(all_members) == len(set(all_members))
    assert set(all_members) == set(synth_delex)
    for frame, group in groups.items():
        for utt in group:
            assert frame_of_delex(utt) == frame


# --- properties -------------------------------------------------------------

_slot_types = st.sampled_from(["city", "date", "airline"])
_words = st.sampled_from(["show", "me", "flights", "to", "from", "please", "book"])


@st.composite
def instances(draw):
    n_segments = draw(st.integers(min_value=1, max_value=5))
    tokens, labels = [], []
    for _ in range(n_segments):
        if draw(st.booleans()):
            tokens.append(draw(_words))
            labels.append("O")
        else:
            slot = draw(_slot_types)
            length = draw(st.integers(min_value=1, max_value=3))
            phrase = [draw(_words) for _ in range(length)]
            tokens.extend(phrase)
            labels.append("B-" + slot)
            labels.extend("I-" + slot for _ in phrase[1:])
    return Instance(tuple(tokens), tuple(labels))


@given(instances(), st.integers(min_value=0, max_value=2**32 - 1))
@settings(max_examples=100, deadline=None)
def test_refill_roundtrip_property(inst, seed):
    lexicon = build_lexicon([inst])
    delex = delexicalize(inst)
    refilled = refill(delex, lexicon, rng_seed=seed)
    validate_bio(refilled.labels)
    assert frame_of_instance(refilled) == frame_of_instance(inst)
    non_slot = [t for t, l in zip(inst.tokens, inst.labels) if l == "O"]
    refilled_non_slot = [t for t, l in zip(refilled.tokens, refilled.labels) if l == "O"]
    assert refilled_non_slot == non_slot


@given(st.lists(instances(), min_size=1, max_size=8))
@settings(max_examples=50, deadline=None)
def test_corpus_file_roundtrip_property(corpus):
    assert parse_corpus(format_corpus(corpus)) == corpus
