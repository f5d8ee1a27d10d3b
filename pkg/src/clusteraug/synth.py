"""Synthetic template-grammar corpora for desk-scale experiments.

A grammar is a set of token templates containing ``<slot>`` placeholders plus
per-slot value lists.  Sampling cycles the templates in seeded shuffled order
(so every surface form appears once per cycle) and draws slot values
uniformly, producing annotated instances with aligned BIO labels.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from importlib import resources

from .corpus import Instance, placeholder_type
from .errors import ValidationError
from .util import read_json


@dataclass
class Grammar:
    templates: list[tuple[str, ...]]
    values: dict[str, list[tuple[str, ...]]]

    def __post_init__(self):
        if not self.templates:
            raise ValidationError("grammar has no templates")
        for template in self.templates:
            for token in template:
                slot = placeholder_type(token)
                if slot is not None and slot not in self.values:
                    raise ValidationError(f"template uses <{slot}> but no values are defined")
        for slot, phrases in self.values.items():
            if not phrases or any(not p for p in phrases):
                raise ValidationError(f"slot type {slot!r} needs non-empty value phrases")

    @classmethod
    def from_dict(cls, data: dict) -> "Grammar":
        try:
            templates = [tuple(str(t).lower() for t in tpl) for tpl in data["templates"]]
            values = {
                str(slot): [tuple(str(t).lower() for t in phrase) for phrase in phrases]
                for slot, phrases in data["values"].items()
            }
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"malformed grammar: {exc}") from None
        return cls(templates, values)

    @classmethod
    def from_file(cls, path: str) -> "Grammar":
        return cls.from_dict(read_json(path))


def bundled_grammar_path() -> str:
    """Path of the flight-domain grammar shipped with the package."""
    return str(resources.files("clusteraug.data").joinpath("grammar_flights.json"))


def generate_corpus(grammar: Grammar, n: int, seed: int) -> list[Instance]:
    """Sample n annotated instances; templates cycle in seeded shuffled order."""
    rng = random.Random(seed)
    order: list[int] = []
    instances: list[Instance] = []
    for _ in range(n):
        if not order:
            order = rng.sample(range(len(grammar.templates)), len(grammar.templates))
        template = grammar.templates[order.pop(0)]
        tokens: list[str] = []
        labels: list[str] = []
        for tok in template:
            slot = placeholder_type(tok)
            if slot is not None:
                phrase = rng.choice(grammar.values[slot])
                tokens.extend(phrase)
                labels.append("B-" + slot)
                labels.extend("I-" + slot for _ in phrase[1:])
            else:
                tokens.append(tok)
                labels.append("O")
        instances.append(Instance(tuple(tokens), tuple(labels)))
    return instances
