"""Parameter containers and the reusable building blocks (linear, MLP, transformer)."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from . import numerics as nx
from .errors import ConfigError, DimensionError
from .numerics import Tensor


def _walk(prefix: str, value) -> Iterator[tuple[str, Tensor]]:
    if isinstance(value, Tensor):
        yield prefix, value
    elif isinstance(value, Module):
        yield from value.named_parameters(prefix + ".")
    elif isinstance(value, (list, tuple)):
        for i, item in enumerate(value):
            yield from _walk(f"{prefix}.{i}", item)
    elif isinstance(value, dict):
        for key, item in value.items():
            yield from _walk(f"{prefix}.{key}", item)


class Module:
    """Anything whose attributes hold :class:`Tensor` parameters or sub-modules.

    Registration is implicit: ``named_parameters`` walks instance attributes
    (and lists/dicts of them) in insertion order, so each tensor is found
    exactly once as long as it is stored in one place.
    """

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in vars(self).items():
            if name.startswith("_"):
                continue
            yield from _walk(prefix + name, value)

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def trainable_parameters(self) -> list[Tensor]:
        return [p for p in self.parameters() if p.requires_grad]

    def set_trainable(self, flag: bool) -> None:
        for p in self.parameters():
            p.requires_grad = flag

    def parameter_count(self, trainable_only: bool = False) -> int:
        params = self.trainable_parameters() if trainable_only else self.parameters()
        return int(sum(p.size for p in params))

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = set(own) - set(state)
        if missing:
            raise ConfigError(f"state is missing parameters: {sorted(missing)[:5]}")
        for name, p in own.items():
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != p.shape:
                raise DimensionError(f"{name}: stored shape {arr.shape} vs model {p.shape}")
            p.data[...] = arr

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class Linear(Module):
    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator, bias: bool = True):
        self.weight = nx.parameter(nx.glorot_uniform(rng, out_dim, in_dim))
        self.bias = nx.parameter(np.zeros(out_dim)) if bias else None

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.in_dim:
            raise DimensionError(f"Linear expects {self.in_dim} inputs, got shape {x.shape}")
        return nx.linear(x, self.weight, self.bias)


class MLP(Module):
    """Stack of Linear layers with ReLU after each hidden layer.

    With ``activate_last`` the final layer is also followed by ReLU (experts);
    otherwise it stays linear (towers emitting logits).
    """

    def __init__(self, in_dim: int, widths: list[int], rng: np.random.Generator,
                 activate_last: bool = True):
        if not widths:
            raise ConfigError("MLP needs at least one layer width")
        dims = [in_dim, *widths]
        self.layers = [Linear(a, b, rng) for a, b in zip(dims[:-1], dims[1:])]
        self.activate_last = activate_last

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    def forward(self, x: Tensor) -> Tensor:
        last = len(self.layers) - 1
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < last or self.activate_last:
                x = nx.relu(x)
        return x


class LayerNorm(Module):
    def __init__(self, dim: int):
        self.gain = nx.parameter(np.ones(dim))
        self.bias = nx.parameter(np.zeros(dim))

    def forward(self, x: Tensor) -> Tensor:
        return nx.layer_norm(x, self.gain, self.bias)


class MultiHeadAttention(Module):
    def __init__(self, dim: int, heads: int, rng: np.random.Generator):
        if heads < 1 or dim % heads:
            raise ConfigError(f"model dim {dim} is not divisible by {heads} heads")
        self.heads = heads
        self.query = Linear(dim, dim, rng)
        self.key = Linear(dim, dim, rng)
        self.value = Linear(dim, dim, rng)
        self.out = Linear(dim, dim, rng)

    def _split(self, x: Tensor) -> Tensor:
        b, t, d = x.shape
        return nx.transpose(nx.reshape(x, (b, t, self.heads, d // self.heads)), (0, 2, 1, 3))

    def forward(self, x: Tensor, key_mask: np.ndarray | None = None) -> Tensor:
        """``x`` is (batch, tokens, dim); ``key_mask`` marks real (non-pad) tokens."""
        b, t, d = x.shape
        q, k, v = self._split(self.query(x)), self._split(self.key(x)), self._split(self.value(x))
        scores = nx.matmul(q, nx.transpose(k)) * (1.0 / np.sqrt(d // self.heads))
        if key_mask is not None:
            bias = np.where(np.asarray(key_mask, dtype=bool), 0.0, -1e9)[:, None, None, :]
            scores = scores + bias
        attn = nx.softmax(scores, axis=-1)
        ctx = nx.reshape(nx.transpose(nx.matmul(attn, v), (0, 2, 1, 3)), (b, t, d))
        return self.out(ctx)


class TransformerBlock(Module):
    """Pre-norm block: x + MHA(LN(x)), then + FFN(LN(.))."""

    def __init__(self, dim: int, heads: int, ff_dim: int, rng: np.random.Generator):
        self.norm1 = LayerNorm(dim)
        self.attn = MultiHeadAttention(dim, heads, rng)
        self.norm2 = LayerNorm(dim)
        self.ff = MLP(dim, [ff_dim, dim], rng, activate_last=False)

    def forward(self, x: Tensor, key_mask: np.ndarray | None = None) -> Tensor:
        x = x + self.attn(self.norm1(x), key_mask)
        return x + self.ff(self.norm2(x))
