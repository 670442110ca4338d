"""Neural building blocks: parameter modules, attention, encoder blocks."""

from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from .tensor import ShapeError, Tensor, concat, softmax


class Module:
    """Container with recursive named-parameter discovery.

    Parameters are Tensor attributes with requires_grad=True; nested
    modules and lists of modules are walked in attribute order.
    """

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, Tensor):
                if value.requires_grad:
                    yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{full}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def parameter_dict(self) -> dict[str, Tensor]:
        return dict(self.named_parameters())

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def zero_parameters(self) -> None:
        for p in self.parameters():
            p.data[...] = 0.0

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        own = self.parameter_dict()
        missing = sorted(set(own) - set(arrays))
        if missing:
            raise KeyError(f"missing parameters in state: {missing}")
        for name, tensor in own.items():
            arr = np.asarray(arrays[name], dtype=np.float64)
            if arr.shape != tensor.shape:
                raise ShapeError(
                    f"parameter '{name}': checkpoint shape {arr.shape} != model shape {tensor.shape}"
                )
            tensor.data[...] = arr


def parameter(data) -> Tensor:
    return Tensor(np.asarray(data, dtype=np.float64), requires_grad=True)


def xavier_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class Linear(Module):
    """y = x @ W + b with W of shape (in, out)."""

    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator, bias: bool = True):
        self.weight = parameter(xavier_uniform(rng, in_dim, out_dim))
        self.bias = parameter(np.zeros(out_dim)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        out = x @ self.weight
        if self.bias is not None:
            out = out + self.bias
        return out


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, axis: int = -1, eps: float = 1e-5) -> Tensor:
    """Normalize to zero mean / unit variance along `axis`, then affine."""
    mu = x.mean(axis=axis, keepdims=True)
    centered = x - mu
    var = (centered * centered).mean(axis=axis, keepdims=True)
    normed = centered * (var + eps).pow(-0.5)
    return normed * gain + bias


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        self.gain = parameter(np.ones(dim))
        self.bias = parameter(np.zeros(dim))
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gain, self.bias, axis=-1, eps=self.eps)


class MultiHeadSelfAttention(Module):
    """Scaled dot-product self-attention over the second-to-last axis.

    Accepts (..., S, dim); any leading axes are treated as batch.
    """

    def __init__(self, dim: int, heads: int, rng: np.random.Generator):
        if dim % heads != 0:
            raise ShapeError(f"attention dim {dim} not divisible by {heads} heads")
        self.dim = dim
        self.heads = heads
        self.head_dim = dim // heads
        self.query = Linear(dim, dim, rng)
        self.key = Linear(dim, dim, rng)
        self.value = Linear(dim, dim, rng)
        self.out = Linear(dim, dim, rng)

    def _split_heads(self, x: Tensor, lead: tuple[int, ...], seq: int) -> Tensor:
        x = x.reshape(lead + (seq, self.heads, self.head_dim))
        return x.swapaxes(-3, -2)  # (..., heads, S, head_dim)

    def __call__(self, x: Tensor) -> Tensor:
        if x.ndim < 2 or x.shape[-1] != self.dim:
            raise ShapeError(f"attention expects (..., S, {self.dim}), got {x.shape}")
        lead, seq = x.shape[:-2], x.shape[-2]
        q = self._split_heads(self.query(x), lead, seq)
        k = self._split_heads(self.key(x), lead, seq)
        v = self._split_heads(self.value(x), lead, seq)
        scores = (q @ k.swapaxes(-1, -2)) * (1.0 / math.sqrt(self.head_dim))
        attn = softmax(scores, axis=-1)
        mixed = attn @ v
        merged = mixed.swapaxes(-3, -2).reshape(lead + (seq, self.dim))
        return self.out(merged)


class FeedForward(Module):
    def __init__(self, dim: int, rng: np.random.Generator, mult: int = 4):
        self.fc1 = Linear(dim, mult * dim, rng)
        self.fc2 = Linear(mult * dim, dim, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(self.fc1(x).relu())


class EncoderBlock(Module):
    """Pre-norm transformer encoder block: x + MHSA(LN(x)), then x + FFN(LN(x))."""

    def __init__(self, dim: int, heads: int, rng: np.random.Generator, ffn_mult: int = 4):
        self.norm1 = LayerNorm(dim)
        self.attn = MultiHeadSelfAttention(dim, heads, rng)
        self.norm2 = LayerNorm(dim)
        self.ffn = FeedForward(dim, rng, ffn_mult)

    def __call__(self, x: Tensor) -> Tensor:
        x = x + self.attn(self.norm1(x))
        return x + self.ffn(self.norm2(x))


def sinusoidal_embedding(length: int, dim: int) -> Tensor:
    """Fixed table: (pos, 2k) -> sin(pos / 10000^(2k/dim)), (pos, 2k+1) -> cos(...)."""
    if dim % 2 != 0:
        raise ShapeError(f"sinusoidal embedding dim must be even, got {dim}")
    pos = np.arange(length, dtype=np.float64)[:, None]
    freq = np.exp(-math.log(10000.0) * np.arange(0, dim, 2, dtype=np.float64) / dim)
    table = np.zeros((length, dim))
    table[:, 0::2] = np.sin(pos * freq)
    table[:, 1::2] = np.cos(pos * freq)
    return Tensor(table)


def stack_rows(rows: list[Tensor]) -> Tensor:
    """Concatenate 1-row tensors (1, d) into (n, d)."""
    return concat(rows, axis=0)
