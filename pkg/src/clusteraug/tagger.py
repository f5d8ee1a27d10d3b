"""Downstream slot-filling harness: a small neural tagger and span F1 scoring.

The tagger is a transformer encoder over the numeric kernel with a per-token
softmax over BIO tags, trained with cross-entropy.  It exists to measure the
RELATIVE effect of augmentation at desk scale (original vs original plus
augmented data), not to chase absolute benchmark numbers; embeddings are
randomly initialized and there is no pre-training.

Span scoring follows conlleval semantics: a predicted span counts as correct
only when both its type and its exact boundaries match a gold span, and an
``I-`` tag that follows ``O`` or a different type opens a new span.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from . import nnkernel as nn
from .corpus import Instance
from .errors import TrainingError, ValidationError
from .model import PAD, UNK
from .util import stable_seed


@dataclass
class TaggerConfig:
    layers: int = 2
    d_model: int = 32
    n_heads: int = 2
    d_ff: int = 64
    max_len: int = 64
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    weight_decay: float = 0.01
    train_steps: int = 400
    batch_size: int = 8
    tag_set: list[str] | None = None

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TaggerConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ValidationError(f"unknown tagger config keys: {sorted(unknown)}")
        return cls(**data)


class Tagger:
    """Transformer encoder with a per-token tag head."""

    def __init__(self, config: TaggerConfig, words: list[str], tags: list[str], seed: int):
        self.config = config
        self.words = list(words)
        self.tags = list(tags)
        self.word_to_id = {w: i for i, w in enumerate(self.words)}
        self.tag_to_id = {t: i for i, t in enumerate(self.tags)}
        self.unk_id = self.word_to_id[UNK]
        rng = np.random.default_rng(seed)
        self.store = nn.ParamStore()
        c = config
        self.emb = self.store.gaussian("emb", (len(self.words), c.d_model), rng)
        self.pos = self.store.gaussian("pos", (c.max_len, c.d_model), rng)
        self.layers = [
            nn.transformer_layer(self.store, f"enc{l}", c.d_model, c.d_ff, c.n_heads, rng)
            for l in range(c.layers)
        ]
        self.head_w = self.store.gaussian("head.w", (c.d_model, len(self.tags)), rng)
        self.head_b = self.store.zeros("head.b", (len(self.tags),))

    def encode_tokens(self, tokens: Sequence[str]) -> list[int]:
        return [self.word_to_id.get(t, self.unk_id) for t in tokens]

    def logits(self, tokens: Sequence[str]) -> nn.Tensor:
        n = len(tokens)
        if n > self.config.max_len:
            raise ValueError(f"utterance length {n} exceeds max_len={self.config.max_len}")
        h = nn.add(
            nn.gather_rows(self.emb, self.encode_tokens(tokens)),
            nn.slice_rows(self.pos, 0, n),
        )
        for layer in self.layers:
            h = nn.transformer_step(layer, h, h, None)
        return nn.add_rowvec(nn.matmul(h, self.head_w), self.head_b)

    def predict(self, tokens: Sequence[str]) -> list[str]:
        with nn.no_grad():
            logits = self.logits(tokens)
        return [self.tags[int(i)] for i in np.argmax(logits.data, axis=1)]


def train_tagger(corpus: Sequence[Instance], config: TaggerConfig, seed: int) -> Tagger:
    """Train a tagger from scratch on an annotated corpus; deterministic per seed."""
    if not corpus:
        raise ValueError("empty training corpus")
    observed_tags = sorted({label for inst in corpus for label in inst.labels})
    if config.tag_set is not None:
        tags = list(config.tag_set)
        unseen = set(observed_tags) - set(tags)
        if unseen:
            raise ValidationError(f"corpus labels not in the configured tag set: {sorted(unseen)}")
    else:
        tags = observed_tags
    words = [PAD, UNK] + sorted({tok for inst in corpus for tok in inst.tokens})
    too_long = max(len(inst.tokens) for inst in corpus)
    if too_long > config.max_len:
        raise ValueError(f"corpus has an utterance of length {too_long} > max_len={config.max_len}")

    tagger = Tagger(config, words, tags, seed)
    opt = nn.AdamW(
        tagger.store.tensors(),
        lr=config.learning_rate,
        beta1=config.adam_beta1,
        beta2=config.adam_beta2,
        eps=config.adam_epsilon,
        weight_decay=config.weight_decay,
    )
    rng = np.random.default_rng(stable_seed(seed, "batches"))
    batch_size = min(config.batch_size, len(corpus))
    queue: list[int] = []
    for step in range(1, config.train_steps + 1):
        while len(queue) < batch_size:
            queue.extend(rng.permutation(len(corpus)).tolist())
        batch = [corpus[i] for i in queue[:batch_size]]
        queue = queue[batch_size:]
        opt.zero_grad()
        try:
            n_tokens = sum(len(inst.tokens) for inst in batch)
            losses = [
                nn.cross_entropy(
                    tagger.logits(inst.tokens), [tagger.tag_to_id[l] for l in inst.labels]
                )
                for inst in batch
            ]
            loss = losses[0]
            for part in losses[1:]:
                loss = nn.add(loss, part)
            loss = nn.scale(loss, 1.0 / n_tokens)
            loss.backward()
        except nn.KernelError as exc:
            raise TrainingError(f"tagger training diverged: {exc}", step=step) from exc
        opt.step()
    return tagger


def token_accuracy(tagger: Tagger, corpus: Sequence[Instance]) -> float:
    correct = total = 0
    for inst in corpus:
        predicted = tagger.predict(inst.tokens)
        correct += sum(p == g for p, g in zip(predicted, inst.labels))
        total += len(inst.labels)
    return correct / total


# ----- span scoring --------------------------------------------------------


def _split_label(label: str) -> tuple[str, str | None]:
    if label == "O":
        return "O", None
    if len(label) > 2 and label[1] == "-" and label[0] in "BI":
        return label[0], label[2:]
    raise ValidationError(f"malformed label {label!r}")


def extract_spans(labels: Sequence[str]) -> list[tuple[int, int, str]]:
    """Spans as (start, end_inclusive, type) under conlleval chunking rules.

    ``B-`` always opens a span; ``I-`` continues a span of the same type and
    otherwise opens one (the conlleval treatment of dangling ``I-`` tags).
    """
    spans: list[tuple[int, int, str]] = []
    start: int | None = None
    current: str | None = None
    for i, label in enumerate(labels):
        kind, slot_type = _split_label(label)
        continues = kind == "I" and slot_type == current
        if current is not None and not continues:
            spans.append((start, i - 1, current))
            start, current = None, None
        if kind != "O" and current is None:
            start, current = i, slot_type
    if current is not None:
        spans.append((start, len(labels) - 1, current))
    return spans


@dataclass
class SpanF1Report:
    precision: float
    recall: float
    f1: float
    n_gold: int
    n_predicted: int
    n_correct: int
    per_type: dict[str, dict]

    def to_dict(self) -> dict:
        return asdict(self)


def _prf(n_gold: int, n_predicted: int, n_correct: int) -> tuple[float, float, float]:
    precision = 100.0 * n_correct / n_predicted if n_predicted else 0.0
    recall = 100.0 * n_correct / n_gold if n_gold else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


def span_f1(gold: Sequence[Instance], predicted_labels: Sequence[Sequence[str]]) -> SpanF1Report:
    """Micro-averaged span precision/recall/F1 with a per-type breakdown."""
    if len(gold) != len(predicted_labels):
        raise ValueError(f"{len(gold)} gold utterances but {len(predicted_labels)} predictions")
    n_gold = n_pred = n_correct = 0
    by_type: dict[str, list[int]] = {}
    for inst, pred in zip(gold, predicted_labels):
        if len(pred) != len(inst.tokens):
            raise ValueError("prediction length differs from utterance length")
        gold_spans = set(extract_spans(inst.labels))
        pred_spans = set(extract_spans(pred))
        n_gold += len(gold_spans)
        n_pred += len(pred_spans)
        n_correct += len(gold_spans & pred_spans)
        for _, _, t in gold_spans:
            by_type.setdefault(t, [0, 0, 0])[0] += 1
        for span in pred_spans:
            bucket = by_type.setdefault(span[2], [0, 0, 0])
            bucket[1] += 1
            if span in gold_spans:
                bucket[2] += 1
    precision, recall, f1 = _prf(n_gold, n_pred, n_correct)
    per_type = {}
    for t, (g, p, c) in sorted(by_type.items()):
        tp, tr, tf = _prf(g, p, c)
        per_type[t] = {
            "gold": g, "predicted": p, "correct": c,
            "precision": tp, "recall": tr, "f1": tf,
        }
    return SpanF1Report(precision, recall, f1, n_gold, n_pred, n_correct, per_type)


def evaluate_tagger(tagger: Tagger, test: Sequence[Instance]) -> SpanF1Report:
    predictions = [tagger.predict(inst.tokens) for inst in test]
    return span_f1(test, predictions)


def ab_experiment(
    seed_corpus: Sequence[Instance],
    augmented_corpus: Sequence[Instance],
    test_corpus: Sequence[Instance],
    config: TaggerConfig,
    n_seeds: int = 5,
    base_seed: int = 0,
    log=None,
) -> dict:
    """Train taggers on original vs original+augmented data across seeds.

    The same per-run seeds are used for both conditions, so with an empty
    augmentation the two conditions are identical.  Overlap between a
    training condition and the test set is reported as a warning, never an
    error.
    """
    warnings = []
    test_set = set(test_corpus)
    combined = list(seed_corpus) + list(augmented_corpus)
    for name, data in (("baseline", seed_corpus), ("augmented", combined)):
        overlap = sum(1 for inst in data if inst in test_set)
        if overlap:
            warnings.append(f"{name} training data shares {overlap} instances with the test set")

    seeds = [stable_seed(base_seed, "run", i) for i in range(n_seeds)]
    results: dict[str, dict] = {}
    for name, data in (("baseline", list(seed_corpus)), ("augmented", combined)):
        per_seed = []
        for i, seed in enumerate(seeds):
            tagger = train_tagger(data, config, seed)
            report = evaluate_tagger(tagger, test_corpus)
            per_seed.append(report.f1)
            if log:
                log(f"{name} run {i}: f1={report.f1:.2f}")
        results[name] = {"per_seed_f1": per_seed, "mean_f1": sum(per_seed) / len(per_seed)}
    return {
        "n_seeds": n_seeds,
        "seeds": seeds,
        "baseline": results["baseline"],
        "augmented": results["augmented"],
        "mean_f1_delta": results["augmented"]["mean_f1"] - results["baseline"]["mean_f1"],
        "warnings": warnings,
    }
