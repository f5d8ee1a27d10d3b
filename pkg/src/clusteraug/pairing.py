"""Construction of cluster-to-cluster training pairs from existing data.

For every semantic frame with enough distinct delexicalized utterances, a
k-medoids pass over token-level edit distance yields tight lexical clusters
(the input side), and a greedy furthest-including sweep picks the most novel
remaining utterances as the ranked output side.  Fold assignment supports the
cross-expansion protocol, where a model trained on one part of the pairs
generates from the held-out part's input clusters.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from .corpus import DelexUtterance, Frame, frame_of_delex
from .errors import ValidationError
from .util import stable_seed


def edit_distance(a: Sequence[str], b: Sequence[str]) -> int:
    """Token-level Levenshtein distance with unit insert/delete/substitute."""
    if len(a) < len(b):
        a, b = b, a
    if not b:
        return len(a)
    prev = list(range(len(b) + 1))
    for i, tok_a in enumerate(a, start=1):
        cur = [i] + [0] * len(b)
        for j, tok_b in enumerate(b, start=1):
            cost = 0 if tok_a == tok_b else 1
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + cost)
        prev = cur
    return prev[-1]


@dataclass(frozen=True)
class LexicalCluster:
    """One k-medoids cluster; members ordered by (distance to medoid, token order)."""

    medoid: DelexUtterance
    members: tuple[DelexUtterance, ...]


def k_medoids(
    utterances: Sequence[Sequence[str]],
    k: int,
    seed: int,
    max_iters: int = 50,
) -> list[LexicalCluster]:
    """Partition utterances into k clusters around medoid members.

    Medoids start as a seeded random distinct sample and are improved by
    best-first swaps until the total member-to-medoid cost stops decreasing.
    Every point is assigned to its nearest medoid (ties to the lowest medoid
    index), except that a medoid always stays in its own cluster so no
    cluster can end up empty.
    """
    items: list[DelexUtterance] = sorted(tuple(u) for u in utterances)
    n = len(items)
    if not 1 <= k <= n:
        raise ValueError(f"k={k} out of range for {n} utterances")

    dist = [[0] * n for _ in range(n)]
    for i in range(n):
        for j in range(i + 1, n):
            d = edit_distance(items[i], items[j])
            dist[i][j] = d
            dist[j][i] = d

    def cost_of(meds: Sequence[int]) -> int:
        return sum(min(dist[i][m] for m in meds) for i in range(n))

    rng = random.Random(seed)
    medoids = sorted(rng.sample(range(n), k))
    current = (cost_of(medoids), tuple(medoids))

    # Swap acceptance orders states by (cost, medoid index tuple): equal-cost
    # swaps that move toward canonical order are taken, so ties resolve to the
    # first medoid set in canonical order and the loop still terminates.
    for _ in range(max_iters):
        best = current
        in_medoids = set(medoids)
        for pos in range(k):
            for candidate in range(n):
                if candidate in in_medoids:
                    continue
                trial = sorted(medoids[:pos] + [candidate] + medoids[pos + 1 :])
                state = (cost_of(trial), tuple(trial))
                if state < best:
                    best = state
        if best == current:
            break
        current = best
        medoids = list(best[1])

    assignment: dict[int, list[int]] = {m: [] for m in medoids}
    medoid_set = set(medoids)
    for i in range(n):
        if i in medoid_set:
            assignment[i].append(i)
            continue
        # min() keeps the first minimum, i.e. the lowest medoid index on ties
        target = min(medoids, key=lambda m: dist[i][m])
        assignment[target].append(i)

    clusters = []
    for m in medoids:
        members = sorted(assignment[m], key=lambda i: (dist[i][m], items[i]))
        clusters.append(LexicalCluster(items[m], tuple(items[i] for i in members)))
    clusters.sort(key=lambda c: c.medoid)
    return clusters


@dataclass(frozen=True)
class ClusterPair:
    """An input cluster of similar utterances and a ranked, novel output cluster."""

    frame: Frame
    input_cluster: tuple[DelexUtterance, ...]
    output_cluster: tuple[tuple[int, DelexUtterance], ...]

    def __post_init__(self):
        object.__setattr__(self, "frame", tuple(self.frame))
        object.__setattr__(self, "input_cluster", tuple(tuple(u) for u in self.input_cluster))
        object.__setattr__(
            self, "output_cluster", tuple((int(r), tuple(u)) for r, u in self.output_cluster)
        )
        inputs = self.input_cluster
        outputs = [u for _, u in self.output_cluster]
        if not inputs or not outputs:
            raise ValidationError("cluster pair needs a non-empty input and output cluster")
        for utt in list(inputs) + outputs:
            if frame_of_delex(utt) != self.frame:
                raise ValidationError(f"utterance {utt!r} does not match frame {self.frame!r}")
        if len(set(inputs)) != len(inputs) or len(set(outputs)) != len(outputs):
            raise ValidationError("duplicate utterance within a cluster")
        if set(inputs) & set(outputs):
            raise ValidationError("input and output clusters overlap")
        if [r for r, _ in self.output_cluster] != list(range(1, len(outputs) + 1)):
            raise ValidationError("output ranks must be exactly 1..n in order")

    @property
    def output_utterances(self) -> list[DelexUtterance]:
        return [u for _, u in self.output_cluster]


@dataclass
class PairingSummary:
    frames_total: int = 0
    frames_paired: int = 0
    frames_skipped: int = 0
    pairs_emitted: int = 0

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def diversity_score(candidate: Sequence[str], reference: Iterable[Sequence[str]]) -> int:
    """Minimum edit distance from a candidate to any utterance already chosen."""
    return min(edit_distance(candidate, ref) for ref in reference)


def dispersed_cluster_pairing(
    groups: Mapping[Frame, Iterable[Sequence[str]]],
    m_in: int,
    m_out: int,
    seed: int,
    k_override: int | None = None,
) -> tuple[list[ClusterPair], PairingSummary]:
    """Build cluster pairs per frame: lexical input clusters, greedy diverse outputs.

    Frames with fewer than ``m_in + 1`` distinct utterances are skipped (the
    output side would be empty) and counted in the summary.  The output
    cluster is grown greedily: each step adds the candidate maximizing the
    minimum edit distance to everything already in the pair, with ties broken
    by lexicographic token order; the pick order becomes the diversity rank.
    """
    if m_in < 1 or m_out < 1:
        raise ValueError("m_in and m_out must be >= 1")
    pairs: list[ClusterPair] = []
    summary = PairingSummary()
    for frame in sorted(groups):
        group = sorted({tuple(u) for u in groups[frame]})
        summary.frames_total += 1
        if len(group) < m_in + 1:
            summary.frames_skipped += 1
            continue
        summary.frames_paired += 1
        k = k_override if k_override is not None else math.ceil(len(group) / m_in)
        clusters = k_medoids(group, k, stable_seed(seed, "medoids", ",".join(frame)))
        for cluster in clusters:
            input_cluster = cluster.members[:m_in]
            chosen: list[DelexUtterance] = []
            taken = set(input_cluster)
            while len(chosen) < m_out:
                candidates = [u for u in group if u not in taken]
                if not candidates:
                    break
                reference = list(input_cluster) + chosen
                best = min(candidates, key=lambda u: (-diversity_score(u, reference), u))
                chosen.append(best)
                taken.add(best)
            if not chosen:
                continue
            pairs.append(
                ClusterPair(
                    frame,
                    input_cluster,
                    tuple((r, u) for r, u in enumerate(chosen, start=1)),
                )
            )
            summary.pairs_emitted += 1
    return pairs, summary


@dataclass(frozen=True)
class FoldAssignment:
    """Disjoint covering folds of pair indices; each fold is one seed set."""

    folds: tuple[tuple[int, ...], ...]
    n_pairs: int

    def __post_init__(self):
        seen: set[int] = set()
        for fold in self.folds:
            for pid in fold:
                if pid in seen:
                    raise ValidationError(f"pair {pid} appears in two folds")
                seen.add(pid)
        if seen != set(range(self.n_pairs)):
            raise ValidationError("folds do not partition the pair set")

    def seed_ids(self, fold: int) -> tuple[int, ...]:
        return self.folds[fold]

    def train_ids(self, fold: int) -> tuple[int, ...]:
        held_out = set(self.folds[fold])
        return tuple(i for i in range(self.n_pairs) if i not in held_out)

    def to_dict(self) -> dict:
        return {str(i): list(fold) for i, fold in enumerate(self.folds)}

    @classmethod
    def from_dict(cls, data: Mapping) -> "FoldAssignment":
        folds = [tuple(data[key]) for key in sorted(data, key=int)]
        return cls(tuple(folds), sum(len(f) for f in folds))


def assign_folds(n_pairs: int, k_folds: int, seed: int) -> FoldAssignment:
    """Seeded shuffle then round-robin split; fold sizes differ by at most one."""
    if k_folds < 2 or n_pairs < k_folds:
        raise ValueError(f"k_folds={k_folds} out of range for {n_pairs} pairs")
    ids = list(range(n_pairs))
    random.Random(seed).shuffle(ids)
    folds: list[list[int]] = [[] for _ in range(k_folds)]
    for pos, pid in enumerate(ids):
        folds[pos % k_folds].append(pid)
    return FoldAssignment(tuple(tuple(sorted(f)) for f in folds), n_pairs)


def pairs_to_obj(pairs: Iterable[ClusterPair]) -> list:
    return [
        {
            "frame": list(p.frame),
            "input": [list(u) for u in p.input_cluster],
            "output": [{"rank": r, "tokens": list(u)} for r, u in p.output_cluster],
        }
        for p in pairs
    ]


def pairs_from_obj(data: Sequence) -> list[ClusterPair]:
    pairs = []
    for entry in data:
        pairs.append(
            ClusterPair(
                tuple(entry["frame"]),
                tuple(tuple(u) for u in entry["input"]),
                tuple((o["rank"], tuple(o["tokens"])) for o in entry["output"]),
            )
        )
    return pairs
