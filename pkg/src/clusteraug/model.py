"""The cluster-to-cluster generation model.

A whole input cluster of delexicalized utterances is concatenated (with
separator tokens) and encoded jointly; all output utterances are decoded in
lockstep, each conditioned on a rank token.  Two mechanisms push the outputs
apart:

* duplication-aware attention: at every step, an attention summary over the
  sibling utterances' already-decoded hidden states is subtracted (scaled by
  ``dup_attention_weight``) from the decoding state, penalizing wording the
  siblings already used;
* diversity regularization: training subtracts (scaled by
  ``diversity_reg_weight``) the symmetrized sum of per-step KL divergences
  between sibling token distributions from the loss, rewarding distributions
  that disagree.

The decoder's layer ``l`` attends jointly over its own previous-layer states
(causally masked) and the encoder's layer ``l-1`` states, i.e. same-depth
alignment rather than attending to the final encoder layer only.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace
from typing import Iterable, Sequence

import numpy as np

from . import nnkernel as nn
from .errors import TrainingError, ValidationError
from .pairing import ClusterPair
from .util import stable_seed

PAD, BOS, EOS, SEP, UNK = "<pad>", "<bos>", "<eos>", "<sep>", "<unk>"
SPECIAL_TOKENS = (PAD, BOS, EOS, SEP, UNK)

KL_LOG_FLOOR = math.log(nn.KL_FLOOR)


@dataclass
class C2CConfig:
    """Hyperparameters of the generation model and its trainer."""

    layers: int = 2
    d_model: int = 32
    n_heads: int = 2
    d_ff: int = 64
    vocab_size: int = 0  # 0 = derive from the training pairs
    max_ranks: int = 3
    t_max: int = 24
    max_encoder_len: int = 160
    dup_attention_weight: float = 0.01
    diversity_reg_weight: float = 1.0
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    weight_decay: float = 0.01
    train_steps: int = 600
    batch_size: int = 4
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.dup_attention_weight < 0 or self.diversity_reg_weight < 0:
            raise ValidationError("attention/regularization weights must be >= 0")
        if self.t_max < 1 or self.max_ranks < 1:
            raise ValidationError("t_max and max_ranks must be >= 1")
        if self.layers < 1 or self.d_model < 2 or self.d_ff < 1:
            raise ValidationError("layers, d_model and d_ff out of range")
        if self.d_model % self.n_heads != 0:
            raise ValidationError(
                f"d_model={self.d_model} not divisible by n_heads={self.n_heads}"
            )
        if self.vocab_size < 0:
            raise ValidationError("vocab_size must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "C2CConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)


def rank_token(rank: int) -> str:
    return f"#{rank}"


class Vocab:
    """Dense token <-> id map: specials, rank tokens, then corpus tokens."""

    def __init__(self, tokens: Sequence[str]):
        self.tokens = list(tokens)
        self.token_to_id = {t: i for i, t in enumerate(self.tokens)}
        if len(self.token_to_id) != len(self.tokens):
            raise ValidationError("duplicate token in vocabulary")
        for special in SPECIAL_TOKENS:
            if special not in self.token_to_id:
                raise ValidationError(f"vocabulary is missing special token {special}")
        self.pad_id = self.token_to_id[PAD]
        self.bos_id = self.token_to_id[BOS]
        self.eos_id = self.token_to_id[EOS]
        self.sep_id = self.token_to_id[SEP]
        self.unk_id = self.token_to_id[UNK]

    def __len__(self) -> int:
        return len(self.tokens)

    @classmethod
    def build(cls, utterances: Iterable[Sequence[str]], max_ranks: int) -> "Vocab":
        ranks = [rank_token(r) for r in range(1, max_ranks + 1)]
        seen = {t for u in utterances for t in u}
        body = sorted(seen - set(SPECIAL_TOKENS) - set(ranks))
        return cls(list(SPECIAL_TOKENS) + ranks + body)

    def rank_id(self, rank: int) -> int:
        tok = rank_token(rank)
        if tok not in self.token_to_id:
            raise ValueError(f"rank token {tok} not in vocabulary")
        return self.token_to_id[tok]

    def encode(self, tokens: Sequence[str]) -> list[int]:
        return [self.token_to_id.get(t, self.unk_id) for t in tokens]

    def decode(self, ids: Sequence[int]) -> list[str]:
        return [self.tokens[i] for i in ids]


@dataclass
class StepDistributions:
    """Per-step token distributions for every output utterance, padded to T."""

    probs: np.ndarray  # [n_outputs, T, vocab]
    valid: np.ndarray  # [n_outputs, T] bool; True at steps up to and incl. EOS

    @classmethod
    def from_ragged(cls, rows: list[np.ndarray]) -> "StepDistributions":
        n = len(rows)
        t_max = max(r.shape[0] for r in rows)
        vocab = rows[0].shape[1]
        probs = np.zeros((n, t_max, vocab))
        valid = np.zeros((n, t_max), dtype=bool)
        for i, r in enumerate(rows):
            probs[i, : r.shape[0]] = r
            valid[i, : r.shape[0]] = True
        return cls(probs, valid)


@dataclass
class TeacherForcedOutput:
    log_probs: nn.Tensor  # [sum(T_r), vocab] stacked over utterances
    probs: nn.Tensor
    plain_states: nn.Tensor  # decoder states before the duplication subtraction
    dup_summary: nn.Tensor  # the subtracted attention summary
    offsets: list[int]
    lengths: list[int]
    gold_ids: list[list[int]]


@dataclass
class LossBreakdown:
    total: nn.Tensor
    nll: float
    diversity_reg: float
    n_steps: int
    distributions: StepDistributions


class Cluster2Cluster:
    """Model parameters plus the forward passes for training and decoding."""

    def __init__(self, config: C2CConfig, vocab: Vocab, rng: np.random.Generator | None = None):
        if config.vocab_size and config.vocab_size != len(vocab):
            raise ValidationError(
                f"config vocab_size={config.vocab_size} but vocabulary has {len(vocab)}"
            )
        self.config = replace(config, vocab_size=len(vocab))
        self.vocab = vocab
        self.store = nn.ParamStore()
        rng = rng if rng is not None else np.random.default_rng(config.seed)
        c = self.config
        self.emb = self.store.gaussian("emb", (len(vocab), c.d_model), rng)
        self.enc_pos = self.store.gaussian("enc_pos", (c.max_encoder_len, c.d_model), rng)
        self.dec_pos = self.store.gaussian("dec_pos", (c.t_max, c.d_model), rng)
        self.enc_layers = [
            nn.transformer_layer(self.store, f"enc{l}", c.d_model, c.d_ff, c.n_heads, rng)
            for l in range(c.layers)
        ]
        self.dec_layers = [
            nn.transformer_layer(self.store, f"dec{l}", c.d_model, c.d_ff, c.n_heads, rng)
            for l in range(c.layers)
        ]
        self.dup_attn = nn.attention_block(self.store, "dup", c.d_model, c.n_heads, rng)
        self.head_w = self.store.gaussian("head.w", (c.d_model, len(vocab)), rng)
        self.head_b = self.store.zeros("head.b", (len(vocab),))

    # ----- encoding -------------------------------------------------------

    def cluster_ids(self, cluster: Sequence[Sequence[str]]) -> list[int]:
        if not cluster:
            raise ValueError("empty input cluster")
        ids: list[int] = []
        for i, utt in enumerate(cluster):
            if i:
                ids.append(self.vocab.sep_id)
            ids.extend(self.vocab.encode(utt))
        if len(ids) > self.config.max_encoder_len:
            raise ValueError(
                f"encoder input length {len(ids)} exceeds max_encoder_len="
                f"{self.config.max_encoder_len}"
            )
        return ids

    def encode_cluster(self, cluster: Sequence[Sequence[str]]) -> list[nn.Tensor]:
        """All encoder layer outputs H_0..H_L for the concatenated cluster."""
        ids = self.cluster_ids(cluster)
        n = len(ids)
        h = nn.add(nn.gather_rows(self.emb, ids), nn.slice_rows(self.enc_pos, 0, n))
        states = [h]
        for layer in self.enc_layers:
            h = nn.transformer_step(layer, h, h, None)
            states.append(h)
        return states

    # ----- decoding -------------------------------------------------------

    def _decode_states(self, enc_states: list[nn.Tensor], dec_ids: Sequence[int]) -> nn.Tensor:
        """Final-layer decoder states for one utterance prefix.

        Layer l attends over the concatenation of its own previous-layer
        states (causal within the utterance) and encoder layer l-1 (fully
        visible).
        """
        t = len(dec_ids)
        if t > self.config.t_max:
            raise ValueError(f"decoder sequence length {t} exceeds t_max={self.config.t_max}")
        h = nn.add(nn.gather_rows(self.emb, dec_ids), nn.slice_rows(self.dec_pos, 0, t))
        for l, layer in enumerate(self.dec_layers):
            enc_h = enc_states[l]
            n_enc = enc_h.shape[0]
            mask = np.ones((t, t + n_enc), dtype=bool)
            mask[:, :t] = np.tril(np.ones((t, t), dtype=bool))
            keys = nn.concat_rows([h, enc_h])
            h = nn.transformer_step(layer, h, keys, mask)
        return h

    @staticmethod
    def _dup_mask(lengths: Sequence[int]) -> np.ndarray:
        """Cross-utterance mask: step t of one utterance sees steps <= t-1 of others."""
        offsets = np.cumsum([0] + list(lengths))
        total = offsets[-1]
        mask = np.zeros((total, total), dtype=bool)
        for r, t_r in enumerate(lengths):
            rows = slice(offsets[r], offsets[r] + t_r)
            local_t = np.arange(t_r)[:, None]
            for i, t_i in enumerate(lengths):
                if i == r:
                    continue
                cols = slice(offsets[i], offsets[i] + t_i)
                local_s = np.arange(t_i)[None, :]
                mask[rows, cols] = local_s < local_t
        return mask

    def _project(self, states: nn.Tensor) -> tuple[nn.Tensor, nn.Tensor, nn.Tensor]:
        logits = nn.add_rowvec(nn.matmul(states, self.head_w), self.head_b)
        log_probs = nn.log_softmax_rows(logits)
        return logits, log_probs, nn.exp(log_probs)

    def teacher_forced(self, pair: ClusterPair) -> TeacherForcedOutput:
        """Distributions for every gold step of every output utterance."""
        enc_states = self.encode_cluster(pair.input_cluster)
        lengths, gold_ids, state_blocks = [], [], []
        for rank, utt in pair.output_cluster:
            gold = self.vocab.encode(utt) + [self.vocab.eos_id]
            if len(gold) > self.config.t_max:
                raise ValueError(
                    f"output utterance needs {len(gold)} steps, t_max={self.config.t_max}"
                )
            dec_ids = [self.vocab.rank_id(rank)] + gold[:-1]
            state_blocks.append(self._decode_states(enc_states, dec_ids))
            lengths.append(len(gold))
            gold_ids.append(gold)
        plain = nn.concat_rows(state_blocks)
        dup = nn.multi_head_attention(
            self.dup_attn, plain, plain, self._dup_mask(lengths), zero_on_empty=True
        )
        combined = nn.sub(plain, nn.scale(dup, self.config.dup_attention_weight))
        _, log_probs, probs = self._project(combined)
        offsets = [0]
        for t_r in lengths[:-1]:
            offsets.append(offsets[-1] + t_r)
        return TeacherForcedOutput(log_probs, probs, plain, dup, offsets, lengths, gold_ids)

    def training_loss(self, pair: ClusterPair) -> LossBreakdown:
        """Teacher-forced NLL plus the weighted diversity regularizer.

        The regularizer sums, over ordered sibling pairs, the per-step KL
        divergence between their token distributions at steps valid for both
        (the shorter utterance's EOS cuts the comparison), then enters the
        loss negated: larger divergence lowers the loss.
        """
        out = self.teacher_forced(pair)
        flat_gold = [g for gold in out.gold_ids for g in gold]
        nll = nn.neg(nn.sum_all(nn.take_per_row(out.log_probs, flat_gold)))

        n_out = len(out.lengths)
        reg_terms = []
        for i in range(n_out):
            for j in range(n_out):
                if i == j:
                    continue
                t_joint = min(out.lengths[i], out.lengths[j])
                p_i = nn.slice_rows(out.probs, out.offsets[i], out.offsets[i] + t_joint)
                lp_i = nn.slice_rows(out.log_probs, out.offsets[i], out.offsets[i] + t_joint)
                lp_j = nn.slice_rows(out.log_probs, out.offsets[j], out.offsets[j] + t_joint)
                diff = nn.sub(
                    nn.maximum_const(lp_i, KL_LOG_FLOOR), nn.maximum_const(lp_j, KL_LOG_FLOOR)
                )
                reg_terms.append(nn.sum_all(nn.mul(p_i, diff)))
        if reg_terms:
            acc = reg_terms[0]
            for term in reg_terms[1:]:
                acc = nn.add(acc, term)
            diversity_reg = nn.neg(acc)
        else:
            diversity_reg = nn.tensor(0.0)
        total = nn.add(nll, nn.scale(diversity_reg, self.config.diversity_reg_weight))

        rows = [
            out.probs.data[out.offsets[r] : out.offsets[r] + out.lengths[r]]
            for r in range(n_out)
        ]
        return LossBreakdown(
            total=total,
            nll=float(nll.data),
            diversity_reg=float(diversity_reg.data),
            n_steps=sum(out.lengths),
            distributions=StepDistributions.from_ragged(rows),
        )

    def decode_step(
        self,
        enc_states: list[nn.Tensor],
        prefixes: Sequence[Sequence[int]],
        active: Sequence[bool] | None = None,
    ) -> tuple[np.ndarray, np.ndarray]:
        """Next-token distributions for the current step of each utterance.

        ``prefixes[r]`` is the decoder input so far: the rank token id
        followed by the tokens already emitted.  The duplication summary for
        utterance r attends over the other utterances' states at steps
        strictly before r's current step; finished utterances still
        contribute their states as keys.  Returns (probs, logits), each
        [n_utterances, vocab], with zero rows for inactive utterances.
        """
        n = len(prefixes)
        if active is None:
            active = [True] * n
        blocks = [self._decode_states(enc_states, list(p)) for p in prefixes]
        vocab_n = len(self.vocab)
        probs = np.zeros((n, vocab_n))
        logits_out = np.zeros((n, vocab_n))
        lam = self.config.dup_attention_weight
        for r in range(n):
            if not active[r]:
                continue
            t_r = len(prefixes[r])
            query = nn.slice_rows(blocks[r], t_r - 1, t_r)
            key_parts = []
            for i in range(n):
                if i == r:
                    continue
                avail = min(len(prefixes[i]), t_r - 1)
                if avail > 0:
                    key_parts.append(nn.slice_rows(blocks[i], 0, avail))
            if key_parts:
                keys = nn.concat_rows(key_parts) if len(key_parts) > 1 else key_parts[0]
                mask = np.ones((1, keys.shape[0]), dtype=bool)
                dup = nn.multi_head_attention(self.dup_attn, query, keys, mask)
                combined = nn.sub(query, nn.scale(dup, lam))
            else:
                combined = query
            logits_row, _, p = self._project(combined)
            probs[r] = p.data[0]
            logits_out[r] = logits_row.data[0]
        return probs, logits_out

    # ----- persistence ----------------------------------------------------

    def save(self, path: str) -> None:
        nn.save_checkpoint(
            path,
            self.store,
            extra={"config": self.config.to_dict(), "vocab": list(self.vocab.tokens)},
        )

    @classmethod
    def load(cls, path: str) -> "Cluster2Cluster":
        state, extra = nn.load_checkpoint(path)
        config = C2CConfig.from_dict(extra["config"])
        model = cls(config, Vocab(extra["vocab"]))
        model.store.load_state_dict(state)
        return model


@dataclass
class TraceEntry:
    step: int
    total: float
    nll: float
    diversity_reg: float


def evaluate_per_token_nll(model: Cluster2Cluster, pairs: Sequence[ClusterPair]) -> float:
    """Mean teacher-forced negative log-likelihood per predicted token."""
    with nn.no_grad():
        total, steps = 0.0, 0
        for pair in pairs:
            breakdown = model.training_loss(pair)
            total += breakdown.nll
            steps += breakdown.n_steps
    return total / steps


def train_model(
    config: C2CConfig,
    vocab: Vocab,
    pairs: Sequence[ClusterPair],
    report_every: int = 0,
    log=None,
) -> tuple[Cluster2Cluster, list[TraceEntry]]:
    """Train a fresh model on cluster pairs; deterministic per config seed.

    Each step takes the gradient of the mean loss over a mini-batch drawn
    from a seeded shuffled cycle of the pairs.  The trace records the total
    loss and both components at every step.
    """
    if not pairs:
        raise ValueError("no training pairs")
    rng = np.random.default_rng(config.seed)
    model = Cluster2Cluster(config, vocab, rng=rng)
    opt = nn.AdamW(
        model.store.tensors(),
        lr=config.learning_rate,
        beta1=config.adam_beta1,
        beta2=config.adam_beta2,
        eps=config.adam_epsilon,
        weight_decay=config.weight_decay,
    )
    batch_size = min(config.batch_size, len(pairs))
    queue: list[int] = []
    trace: list[TraceEntry] = []
    for step in range(1, config.train_steps + 1):
        while len(queue) < batch_size:
            queue.extend(rng.permutation(len(pairs)).tolist())
        batch = [pairs[i] for i in queue[:batch_size]]
        queue = queue[batch_size:]
        opt.zero_grad()
        try:
            parts = [model.training_loss(pair) for pair in batch]
            loss = parts[0].total
            for part in parts[1:]:
                loss = nn.add(loss, part.total)
            loss = nn.scale(loss, 1.0 / batch_size)
            loss.backward()
        except nn.KernelError as exc:
            raise TrainingError(f"training diverged: {exc}", step=step) from exc
        opt.step()
        entry = TraceEntry(
            step=step,
            total=float(loss.data),
            nll=sum(p.nll for p in parts) / batch_size,
            diversity_reg=sum(p.diversity_reg for p in parts) / batch_size,
        )
        trace.append(entry)
        if report_every and log is not None and step % report_every == 0:
            log(
                f"step {step}: loss={entry.total:.4f} "
                f"nll={entry.nll:.4f} diversity_reg={entry.diversity_reg:.4f}"
            )
    return model, trace


def fold_config(config: C2CConfig, fold: int) -> C2CConfig:
    """Per-fold config: same hyperparameters, a fold-derived seed."""
    return replace(config, seed=stable_seed(config.seed, "fold", fold))
