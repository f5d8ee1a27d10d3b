"""Generate augmented corpora: lockstep cluster decoding under cross expansion.

Generation mirrors training: all output slots decode one token per step in
lockstep so the duplication-aware summary for each slot can attend over what
its siblings produced at earlier steps.  Cross expansion keeps generation
honest: the model that generates for a seed cluster never saw that cluster's
pair during training.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import nnkernel as nn
from .corpus import (
    DelexUtterance,
    Frame,
    Instance,
    SlotLexicon,
    frame_of_delex,
    placeholder_type,
    refill_with_rng,
)
from .errors import UnknownSlotError
from .model import C2CConfig, Cluster2Cluster, Vocab, fold_config, train_model
from .pairing import ClusterPair, FoldAssignment
from .util import stable_seed


@dataclass
class GeneratedUtterance:
    rank: int
    tokens: DelexUtterance
    log_prob: float


@dataclass
class GeneratedCluster:
    frame: Frame
    source_index: int
    fold: int | None
    outputs: list[GeneratedUtterance]


def generate_cluster(
    model: Cluster2Cluster,
    cluster: Sequence[Sequence[str]],
    m_out: int,
    mode: str = "greedy",
    temperature: float = 1.0,
    seed: int = 0,
    ranks: Sequence[int] | None = None,
) -> GeneratedCluster:
    """Decode ``m_out`` new utterances from one input cluster, in lockstep.

    Each output slot is conditioned on its rank token.  A slot stops at EOS
    or when ``t_max`` steps are exhausted (the final step's non-EOS pick is
    discarded as a truncation, so outputs always end before ``t_max``).
    Finished slots keep contributing their states as duplication-attention
    keys for the still-active siblings.  Greedy mode is fully deterministic;
    sample mode draws from the temperature-scaled distribution with a seeded
    generator.
    """
    if not cluster:
        raise ValueError("empty input cluster")
    if m_out < 1 or m_out > model.config.max_ranks:
        raise ValueError(f"m_out={m_out} out of range (max_ranks={model.config.max_ranks})")
    if mode not in ("greedy", "sample"):
        raise ValueError(f"unknown decode mode {mode!r}")
    ranks = list(ranks) if ranks is not None else list(range(1, m_out + 1))
    if len(ranks) != m_out:
        raise ValueError("ranks must match m_out")
    rng = np.random.default_rng(seed)
    eos = model.vocab.eos_id
    with nn.no_grad():
        enc_states = model.encode_cluster(cluster)
        prefixes: list[list[int]] = [[model.vocab.rank_id(r)] for r in ranks]
        emitted: list[list[int]] = [[] for _ in range(m_out)]
        log_probs = [0.0] * m_out
        finished = [False] * m_out
        for step in range(1, model.config.t_max + 1):
            active = [not f for f in finished]
            if not any(active):
                break
            probs, logits = model.decode_step(enc_states, prefixes, active)
            for r in range(m_out):
                if finished[r]:
                    continue
                if mode == "greedy":
                    token = int(np.argmax(probs[r]))
                else:
                    scaled = logits[r] / max(temperature, 1e-8)
                    scaled -= scaled.max()
                    p = np.exp(scaled)
                    p /= p.sum()
                    token = int(rng.choice(len(p), p=p))
                if token == eos:
                    log_probs[r] += math.log(max(probs[r][token], 1e-300))
                    finished[r] = True
                elif step == model.config.t_max:
                    finished[r] = True  # truncated; drop the unfinishable pick
                else:
                    log_probs[r] += math.log(max(probs[r][token], 1e-300))
                    prefixes[r].append(token)
                    emitted[r].append(token)
    outputs = [
        GeneratedUtterance(ranks[r], tuple(model.vocab.decode(emitted[r])), log_probs[r])
        for r in range(m_out)
    ]
    frame = frame_of_delex(tuple(cluster[0]))
    return GeneratedCluster(frame=frame, source_index=-1, fold=None, outputs=outputs)


def vocab_for_pairs(pairs: Sequence[ClusterPair], max_ranks: int) -> Vocab:
    """Vocabulary over every token in the pairs file (both cluster sides).

    Built from the full pairs file rather than a single training fold so that
    one vocabulary serves every fold's model and held-out seed clusters never
    hit unknown tokens.
    """
    return Vocab.build(
        [u for p in pairs for u in list(p.input_cluster) + p.output_utterances],
        max_ranks,
    )


def copy_baseline(pairs: Sequence[ClusterPair]) -> list[GeneratedCluster]:
    """Trivial control: 'generate' each input cluster unchanged."""
    out = []
    for idx, pair in enumerate(pairs):
        outputs = [
            GeneratedUtterance(rank=i + 1, tokens=utt, log_prob=0.0)
            for i, utt in enumerate(pair.input_cluster)
        ]
        out.append(GeneratedCluster(pair.frame, idx, None, outputs))
    return out


def cross_expand(
    pairs: Sequence[ClusterPair],
    folds: FoldAssignment,
    config: C2CConfig,
    m_out: int,
    mode: str = "greedy",
    temperature: float = 1.0,
    models: dict[int, Cluster2Cluster] | None = None,
    log: Callable[[str], None] | None = None,
) -> tuple[list[GeneratedCluster], dict[int, Cluster2Cluster]]:
    """Train per fold on the complement, generate from the fold's seed clusters.

    Returns the generated clusters (ordered by fold then pair index, each
    tagged with its fold id) and the per-fold models.  Pre-trained models may
    be supplied to skip training, e.g. when checkpoints exist on disk.
    """
    vocab = vocab_for_pairs(pairs, config.max_ranks)
    trained: dict[int, Cluster2Cluster] = dict(models or {})
    generated: list[GeneratedCluster] = []
    for fold_id in range(len(folds.folds)):
        train_ids = folds.train_ids(fold_id)
        if not train_ids:
            raise ValueError(f"fold {fold_id} has an empty training set")
        if fold_id not in trained:
            if log:
                log(f"fold {fold_id}: training on {len(train_ids)} pairs")
            model, _ = train_model(
                fold_config(config, fold_id), vocab, [pairs[i] for i in train_ids]
            )
            trained[fold_id] = model
        model = trained[fold_id]
        for pid in sorted(folds.seed_ids(fold_id)):
            cluster = generate_cluster(
                model,
                pairs[pid].input_cluster,
                m_out,
                mode=mode,
                temperature=temperature,
                seed=stable_seed(config.seed, "decode", fold_id, pid),
            )
            cluster.source_index = pid
            cluster.fold = fold_id
            cluster.frame = pairs[pid].frame
            generated.append(cluster)
    return generated, trained


@dataclass
class SkipReport:
    emitted: int = 0
    flagged_mismatch: int = 0
    skipped_no_slots: int = 0
    skipped_unknown_slot: int = 0
    skipped_empty: int = 0
    skipped_training_duplicate: int = 0
    entries: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "emitted": self.emitted,
            "flagged_mismatch": self.flagged_mismatch,
            "skipped_no_slots": self.skipped_no_slots,
            "skipped_unknown_slot": self.skipped_unknown_slot,
            "skipped_empty": self.skipped_empty,
            "skipped_training_duplicate": self.skipped_training_duplicate,
            "entries": self.entries,
        }


def emit_augmented_corpus(
    generated: Sequence[GeneratedCluster],
    lexicon: SlotLexicon,
    seed: int,
    filter_empty_slots: bool = False,
    drop_training_duplicates: bool = False,
    training_delex: Sequence[Sequence[str]] | None = None,
) -> tuple[list[Instance], list[dict], SkipReport]:
    """Refill generated delexicalized utterances into annotated instances.

    Labels always follow the placeholders actually present in the generated
    utterance, so every emitted instance is self-consistently annotated; an
    utterance whose placeholder multiset differs from its source frame is
    kept but flagged ``frame-mismatch``.  Utterances with unknown placeholder
    tokens or no tokens at all are skipped and reported.
    """
    rng = random.Random(seed)
    training_set = {tuple(u) for u in training_delex} if training_delex else set()
    instances: list[Instance] = []
    sidecar: list[dict] = []
    report = SkipReport()

    def skip(reason: str, cluster: GeneratedCluster, out: GeneratedUtterance) -> None:
        report.entries.append(
            {
                "reason": reason,
                "fold": cluster.fold,
                "source_cluster_index": cluster.source_index,
                "rank": out.rank,
                "tokens": list(out.tokens),
            }
        )

    for cluster in generated:
        for out in cluster.outputs:
            tokens = out.tokens
            if not tokens:
                report.skipped_empty += 1
                skip("empty", cluster, out)
                continue
            placeholder_types = [t for t in (placeholder_type(tok) for tok in tokens) if t]
            unknown = [t for t in placeholder_types if t not in lexicon]
            if unknown:
                report.skipped_unknown_slot += 1
                skip(f"unknown-slot:{unknown[0]}", cluster, out)
                continue
            if drop_training_duplicates and tuple(tokens) in training_set:
                report.skipped_training_duplicate += 1
                skip("training-duplicate", cluster, out)
                continue
            flags = []
            if not placeholder_types:
                flags.append("no-slots")
                if filter_empty_slots:
                    report.skipped_no_slots += 1
                    skip("no-slots", cluster, out)
                    continue
            if tuple(sorted(placeholder_types)) != cluster.frame:
                flags.append("frame-mismatch")
                report.flagged_mismatch += 1
            else:
                flags.append("consistent")
            try:
                inst = refill_with_rng(tokens, lexicon, rng)
            except UnknownSlotError as exc:  # unreachable after the check above
                report.skipped_unknown_slot += 1
                skip(f"unknown-slot:{exc.slot_type}", cluster, out)
                continue
            instances.append(inst)
            sidecar.append(
                {
                    "fold": cluster.fold,
                    "frame": list(cluster.frame),
                    "rank": out.rank,
                    "source_cluster_index": cluster.source_index,
                    "flags": flags,
                    "log_prob": out.log_prob,
                }
            )
            report.emitted += 1
    return instances, sidecar, report
