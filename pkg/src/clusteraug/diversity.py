"""Diversity metrics for generated utterances.

Novelty is measured at two granularities: exact-match ratios (what fraction
of generated utterances are not verbatim copies) and minimum edit distance
(how far a generated utterance is from its nearest neighbour), each against
the training set ("inter") and against the other generated utterances
("intra").
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .pairing import edit_distance


def med(u: Sequence[str], reference_set: Sequence[Sequence[str]]) -> int:
    """Minimum token-level edit distance from u to any reference utterance."""
    refs = list(reference_set)
    if not refs:
        raise ValueError("empty reference set")
    return min(edit_distance(u, ref) for ref in refs)


@dataclass
class DiversityReport:
    inter_ratio: float
    intra_ratio: float
    inter_med_mean: float
    intra_med_mean: float
    med_histogram: dict[int, int]
    n_generated: int

    def to_dict(self) -> dict:
        return {
            "inter_ratio": self.inter_ratio,
            "intra_ratio": self.intra_ratio,
            "inter_med_mean": self.inter_med_mean,
            "intra_med_mean": self.intra_med_mean,
            "med_histogram": {str(k): v for k, v in sorted(self.med_histogram.items())},
            "n_generated": self.n_generated,
        }

    def histogram_tsv(self) -> str:
        lines = ["med_value\tcount"]
        lines += [f"{k}\t{v}" for k, v in sorted(self.med_histogram.items())]
        return "\n".join(lines) + "\n"


def diversity_report(
    generated: Sequence[Sequence[str]], training_set: Sequence[Sequence[str]]
) -> DiversityReport:
    """Novelty ratios and averaged minimum edit distances.

    ``intra_med_mean`` compares each generated occurrence against the other
    occurrences (so a duplicated utterance contributes 0); with a single
    generated utterance there is nothing to compare against and the intra
    mean is reported as 0.0.
    """
    generated = [tuple(u) for u in generated]
    training = [tuple(u) for u in training_set]
    if not generated or not training:
        raise ValueError("generated and training sets must both be non-empty")

    training_exact = set(training)
    inter_meds = [med(u, training) for u in generated]
    histogram: dict[int, int] = {}
    for value in inter_meds:
        histogram[value] = histogram.get(value, 0) + 1

    novel = sum(1 for u in generated if u not in training_exact)
    distinct = len(set(generated))

    if len(generated) > 1:
        intra_meds = [
            med(u, generated[:i] + generated[i + 1 :]) for i, u in enumerate(generated)
        ]
        intra_med_mean = sum(intra_meds) / len(generated)
    else:
        intra_med_mean = 0.0

    return DiversityReport(
        inter_ratio=novel / len(generated),
        intra_ratio=distinct / len(generated),
        inter_med_mean=sum(inter_meds) / len(generated),
        intra_med_mean=intra_med_mean,
        med_histogram=histogram,
        n_generated=len(generated),
    )


def mean_pairwise_distance(utterances: Sequence[Sequence[str]]) -> float:
    """Mean edit distance over unordered pairs; 0.0 when fewer than two."""
    items = [tuple(u) for u in utterances]
    if len(items) < 2:
        return 0.0
    total, count = 0, 0
    for i in range(len(items)):
        for j in range(i + 1, len(items)):
            total += edit_distance(items[i], items[j])
            count += 1
    return total / count
