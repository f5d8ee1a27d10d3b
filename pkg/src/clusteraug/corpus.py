"""BIO-annotated corpus handling: reading, delexicalization, lexicon, refilling.

An annotated utterance is an :class:`Instance` (tokens + aligned BIO labels).
Delexicalization collapses every slot span to a single placeholder token of
the form ``<slot_type>``; refilling substitutes lexicon values back in and
re-emits aligned labels.  All operations are pure functions over immutable
values, so they are safe to call concurrently.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .errors import ParseError, UnknownSlotError, ValidationError

Frame = tuple[str, ...]
DelexUtterance = tuple[str, ...]

# Slot types that would collide with the model's special tokens.
RESERVED_SLOT_TYPES = frozenset({"pad", "bos", "eos", "sep", "unk"})


def validate_bio(labels: Sequence[str]) -> None:
    """Raise ValidationError unless `labels` is a well-formed BIO sequence."""
    prev_type: str | None = None
    for i, label in enumerate(labels):
        if label == "O":
            prev_type = None
            continue
        if len(label) < 3 or label[1] != "-" or label[0] not in "BI":
            raise ValidationError(f"label {label!r} at position {i} is not O, B-<type> or I-<type>")
        kind, slot_type = label[0], label[2:]
        if kind == "I" and slot_type != prev_type:
            raise ValidationError(f"I-{slot_type} at position {i} has no matching B-{slot_type} before it")
        prev_type = slot_type


@dataclass(frozen=True)
class Instance:
    """One annotated utterance: lowercased tokens plus aligned BIO labels."""

    tokens: tuple[str, ...]
    labels: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        object.__setattr__(self, "labels", tuple(self.labels))
        if len(self.tokens) == 0:
            raise ValidationError("instance has no tokens")
        if len(self.tokens) != len(self.labels):
            raise ValidationError(
                f"{len(self.tokens)} tokens but {len(self.labels)} labels"
            )
        validate_bio(self.labels)

    def spans(self) -> list[tuple[int, int, str]]:
        """Maximal slot spans as (start, end_inclusive, slot_type)."""
        out = []
        for i, label in enumerate(self.labels):
            if label.startswith("B-"):
                j = i
                while j + 1 < len(self.labels) and self.labels[j + 1] == "I-" + label[2:]:
                    j += 1
                out.append((i, j, label[2:]))
        return out


def frame_of_instance(inst: Instance) -> Frame:
    """Slot-type multiset of an instance, canonically sorted."""
    return tuple(sorted(slot_type for _, _, slot_type in inst.spans()))


def placeholder_token(slot_type: str) -> str:
    return f"<{slot_type}>"


def placeholder_type(token: str) -> str | None:
    """The slot type a placeholder token names, or None for a plain word."""
    if len(token) > 2 and token[0] == "<" and token[-1] == ">" and " " not in token:
        return token[1:-1]
    return None


def frame_of_delex(utt: Sequence[str]) -> Frame:
    return tuple(sorted(t for t in (placeholder_type(tok) for tok in utt) if t is not None))


def delexicalize(inst: Instance) -> DelexUtterance:
    """Collapse each slot span to one placeholder token; O tokens pass through."""
    out: list[str] = []
    i = 0
    while i < len(inst.tokens):
        label = inst.labels[i]
        if label.startswith("B-"):
            slot_type = label[2:]
            if slot_type in RESERVED_SLOT_TYPES:
                raise ValidationError(f"slot type {slot_type!r} is reserved")
            out.append(placeholder_token(slot_type))
            i += 1
            while i < len(inst.tokens) and inst.labels[i] == "I-" + slot_type:
                i += 1
        else:
            out.append(inst.tokens[i])
            i += 1
    return tuple(out)


@dataclass
class SlotLexicon:
    """Distinct value phrases per slot type, in first-occurrence order."""

    entries: dict[str, list[tuple[str, ...]]] = field(default_factory=dict)

    def add(self, slot_type: str, phrase: Sequence[str]) -> None:
        phrase = tuple(phrase)
        if not phrase:
            raise ValidationError(f"empty value phrase for slot type {slot_type!r}")
        bucket = self.entries.setdefault(slot_type, [])
        if phrase not in bucket:
            bucket.append(phrase)

    def values(self, slot_type: str) -> list[tuple[str, ...]]:
        try:
            return self.entries[slot_type]
        except KeyError:
            raise UnknownSlotError(slot_type) from None

    def __contains__(self, slot_type: str) -> bool:
        return slot_type in self.entries

    def to_dict(self) -> dict:
        return {k: [list(p) for p in v] for k, v in self.entries.items()}

    @classmethod
    def from_dict(cls, data: Mapping) -> "SlotLexicon":
        lex = cls()
        for slot_type, phrases in data.items():
            for phrase in phrases:
                lex.add(slot_type, [str(t) for t in phrase])
        return lex

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "SlotLexicon":
        return cls.from_dict(json.loads(text))


def build_lexicon(corpus: Iterable[Instance]) -> SlotLexicon:
    """Harvest every distinct slot value phrase from a corpus."""
    lexicon = SlotLexicon()
    for inst in corpus:
        for start, end, slot_type in inst.spans():
            lexicon.add(slot_type, inst.tokens[start : end + 1])
    return lexicon


def refill(delex: Sequence[str], lexicon: SlotLexicon, rng_seed: int) -> Instance:
    """Replace placeholders with uniformly sampled lexicon values (seeded)."""
    import random

    return refill_with_rng(delex, lexicon, random.Random(rng_seed))


def refill_with_rng(delex: Sequence[str], lexicon: SlotLexicon, rng) -> Instance:
    """Like :func:`refill` but consuming an existing random.Random stream."""
    tokens: list[str] = []
    labels: list[str] = []
    for tok in delex:
        slot_type = placeholder_type(tok)
        if slot_type is not None:
            phrase = rng.choice(lexicon.values(slot_type))
            tokens.extend(phrase)
            labels.append("B-" + slot_type)
            labels.extend("I-" + slot_type for _ in phrase[1:])
        else:
            tokens.append(tok)
            labels.append("O")
    return Instance(tuple(tokens), tuple(labels))


def group_by_frame(delex_corpus: Iterable[Sequence[str]]) -> dict[Frame, list[DelexUtterance]]:
    """Distinct delexicalized utterances grouped by slot-type multiset.

    Exact duplicates within a frame are merged; insertion order follows first
    occurrence so the grouping is deterministic for a given input order.
    """
    groups: dict[Frame, list[DelexUtterance]] = {}
    seen: set[DelexUtterance] = set()
    for utt in delex_corpus:
        utt = tuple(utt)
        if utt in seen:
            continue
        seen.add(utt)
        groups.setdefault(frame_of_delex(utt), []).append(utt)
    return groups


def parse_corpus(text: str, source: str = "<string>") -> list[Instance]:
    """Parse the tab-separated token/label format into validated instances.

    Utterances are separated by exactly one blank line; the file may end with
    a blank line or at EOF after the last token line.  Anything else (leading
    or doubled blank lines, lines that are not ``token<TAB>label``) is a
    :class:`ParseError`; BIO violations are :class:`ValidationError` with the
    utterance index.
    """
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()  # artifact of the trailing newline, not a physical line

    instances: list[Instance] = []
    tokens: list[str] = []
    labels: list[str] = []

    def flush() -> None:
        try:
            instances.append(Instance(tuple(tokens), tuple(labels)))
        except ValidationError as exc:
            raise ValidationError(f"{source}: utterance {len(instances)}: {exc}") from None
        tokens.clear()
        labels.clear()

    for line_no, raw in enumerate(lines, start=1):
        if raw == "":
            if not tokens:
                raise ParseError(f"{source}: line {line_no}: unexpected blank line")
            flush()
            continue
        parts = raw.split("\t")
        if len(parts) != 2 or not parts[0] or not parts[1] or any(c.isspace() for c in parts[0]):
            raise ParseError(f"{source}: line {line_no}: expected 'token<TAB>label', got {raw!r}")
        tokens.append(parts[0].lower())
        labels.append(parts[1])
    if tokens:
        flush()
    return instances


def read_corpus(path: str) -> list[Instance]:
    with open(path, "r", encoding="utf-8") as handle:
        return parse_corpus(handle.read(), source=path)


def format_corpus(instances: Iterable[Instance]) -> str:
    blocks = []
    for inst in instances:
        blocks.append("\n".join(f"{t}\t{l}" for t, l in zip(inst.tokens, inst.labels)))
    return "\n\n".join(blocks) + "\n" if blocks else ""


def write_corpus(instances: Iterable[Instance], path: str) -> None:
    from .util import atomic_write_text

    atomic_write_text(path, format_corpus(instances))


def format_delex(utterances: Iterable[Sequence[str]]) -> str:
    lines = [" ".join(u) for u in utterances]
    return "\n".join(lines) + "\n" if lines else ""


def write_delex(utterances: Iterable[Sequence[str]], path: str) -> None:
    from .util import atomic_write_text

    atomic_write_text(path, format_delex(utterances))


def read_delex(path: str) -> list[DelexUtterance]:
    out: list[DelexUtterance] = []
    with open(path, "r", encoding="utf-8") as handle:
        for line_no, line in enumerate(handle.read().split("\n"), start=1):
            if line == "":
                continue
            out.append(tuple(line.split(" ")))
    return out
