"""Named parameter registry and the parameter bundles for transformer layers."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import KernelError, Tensor


class ParamStore:
    """Ordered name -> Tensor registry; the unit the optimizer and checkpoints see."""

    def __init__(self):
        self._tensors: dict[str, Tensor] = {}

    def add(self, name: str, data) -> Tensor:
        if name in self._tensors:
            raise KernelError(f"duplicate parameter name {name!r}")
        t = Tensor(np.asarray(data, dtype=np.float64), requires_grad=True)
        self._tensors[name] = t
        return t

    def gaussian(self, name: str, shape, rng: np.random.Generator, std: float = 0.02) -> Tensor:
        return self.add(name, rng.standard_normal(shape) * std)

    def zeros(self, name: str, shape) -> Tensor:
        return self.add(name, np.zeros(shape))

    def ones(self, name: str, shape) -> Tensor:
        return self.add(name, np.ones(shape))

    def __getitem__(self, name: str) -> Tensor:
        return self._tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def __len__(self) -> int:
        return len(self._tensors)

    def named(self) -> list[tuple[str, Tensor]]:
        return list(self._tensors.items())

    def tensors(self) -> list[Tensor]:
        return list(self._tensors.values())

    def n_scalars(self) -> int:
        return sum(t.size for t in self._tensors.values())

    def state_dict(self) -> dict:
        return {
            name: {"shape": list(t.data.shape), "data": t.data.reshape(-1).tolist()}
            for name, t in self._tensors.items()
        }

    def load_state_dict(self, state: dict) -> None:
        if set(state) != set(self._tensors):
            missing = set(self._tensors) - set(state)
            extra = set(state) - set(self._tensors)
            raise KernelError(f"checkpoint mismatch: missing={sorted(missing)} extra={sorted(extra)}")
        for name, entry in state.items():
            shape = tuple(entry["shape"])
            t = self._tensors[name]
            if shape != t.data.shape:
                raise KernelError(f"parameter {name!r}: shape {shape} != {t.data.shape}")
            t.data = np.asarray(entry["data"], dtype=np.float64).reshape(shape)


@dataclass
class AttentionBlockParams:
    """Projection weights for one multi-head attention block."""

    w_q: Tensor
    w_k: Tensor
    w_v: Tensor
    w_o: Tensor
    b_o: Tensor
    n_heads: int
    d_model: int


@dataclass
class LayerParams:
    """One transformer layer: a single attention block, FFN, and two layer norms."""

    attn: AttentionBlockParams
    ff_w1: Tensor
    ff_b1: Tensor
    ff_w2: Tensor
    ff_b2: Tensor
    ln1_gain: Tensor
    ln1_bias: Tensor
    ln2_gain: Tensor
    ln2_bias: Tensor


def attention_block(
    store: ParamStore, prefix: str, d_model: int, n_heads: int, rng: np.random.Generator
) -> AttentionBlockParams:
    if d_model % n_heads != 0:
        raise KernelError(f"d_model={d_model} not divisible by n_heads={n_heads}")
    return AttentionBlockParams(
        w_q=store.gaussian(f"{prefix}.w_q", (d_model, d_model), rng),
        w_k=store.gaussian(f"{prefix}.w_k", (d_model, d_model), rng),
        w_v=store.gaussian(f"{prefix}.w_v", (d_model, d_model), rng),
        w_o=store.gaussian(f"{prefix}.w_o", (d_model, d_model), rng),
        b_o=store.zeros(f"{prefix}.b_o", (d_model,)),
        n_heads=n_heads,
        d_model=d_model,
    )


def transformer_layer(
    store: ParamStore, prefix: str, d_model: int, d_ff: int, n_heads: int, rng: np.random.Generator
) -> LayerParams:
    return LayerParams(
        attn=attention_block(store, f"{prefix}.attn", d_model, n_heads, rng),
        ff_w1=store.gaussian(f"{prefix}.ff_w1", (d_model, d_ff), rng),
        ff_b1=store.zeros(f"{prefix}.ff_b1", (d_ff,)),
        ff_w2=store.gaussian(f"{prefix}.ff_w2", (d_ff, d_model), rng),
        ff_b2=store.zeros(f"{prefix}.ff_b2", (d_model,)),
        ln1_gain=store.ones(f"{prefix}.ln1_g", (d_model,)),
        ln1_bias=store.zeros(f"{prefix}.ln1_b", (d_model,)),
        ln2_gain=store.ones(f"{prefix}.ln2_g", (d_model,)),
        ln2_bias=store.zeros(f"{prefix}.ln2_b", (d_model,)),
    )
