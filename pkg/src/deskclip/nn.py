"""Parameter containers and transformer building blocks."""

from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from . import tensor as T
from .errors import ConfigError
from .tensor import Tensor

INIT_STD = 0.02


def trunc_normal(rng: np.random.Generator, shape, std: float = INIT_STD) -> np.ndarray:
    """Normal(0, std) resampled until every draw lies within 2 std."""
    out = rng.normal(0.0, std, size=shape)
    bad = np.abs(out) > 2.0 * std
    while bad.any():
        out[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(out) > 2.0 * std
    return out


class Module:
    """Base class; assigning Tensors or Modules to attributes registers them."""

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_children", {})

    def __setattr__(self, name, value):
        if isinstance(value, Tensor) and value.requires_grad:
            self._params[name] = value
        elif isinstance(value, (Module, ModuleList)):
            self._children[name] = value
        object.__setattr__(self, name, value)

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, p in self._params.items():
            yield (f"{prefix}{name}", p)
        for name, child in self._children.items():
            yield from child.named_parameters(prefix=f"{prefix}{name}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def parameter_count(self) -> int:
        return sum(p.size for p in self.parameters())

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None


class ModuleList:
    def __init__(self, modules=()):
        self.modules = list(modules)

    def append(self, module: Module) -> None:
        self.modules.append(module)

    def __iter__(self):
        return iter(self.modules)

    def __len__(self):
        return len(self.modules)

    def __getitem__(self, i):
        return self.modules[i]

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for i, module in enumerate(self.modules):
            yield from module.named_parameters(prefix=f"{prefix}{i}.")


class Linear(Module):
    """Affine map x @ weight + bias, weight stored (in_dim, out_dim)."""

    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator, bias: bool = True):
        super().__init__()
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.weight = Tensor(trunc_normal(rng, (in_dim, out_dim)), requires_grad=True)
        self.bias = Tensor(np.zeros(out_dim), requires_grad=True) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        out = T.matmul(x, self.weight)
        if self.bias is not None:
            out = out + self.bias
        return out


class LayerNorm(Module):
    def __init__(self, dim: int):
        super().__init__()
        self.gain = Tensor(np.ones(dim), requires_grad=True)
        self.bias = Tensor(np.zeros(dim), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return T.layernorm(x, self.gain, self.bias)


class MultiHeadSelfAttention(Module):
    """Standard scaled dot-product self-attention with a fused qkv projection.

    ``attn_bias`` is added to the pre-softmax scores, shape broadcastable to
    (batch, heads, seq, seq); large negative entries mask positions out.
    """

    def __init__(self, width: int, heads: int, rng: np.random.Generator):
        super().__init__()
        if width % heads != 0:
            raise ConfigError(f"attention width {width} not divisible by {heads} heads")
        self.width = width
        self.heads = heads
        self.head_dim = width // heads
        self.qkv = Linear(width, 3 * width, rng)
        self.out = Linear(width, width, rng)

    def __call__(self, x: Tensor, attn_bias: np.ndarray | None = None) -> Tensor:
        n, L, w = x.shape
        h, d = self.heads, self.head_dim
        fused = self.qkv(x)  # (n, L, 3w)

        def split(part: Tensor) -> Tensor:
            # (n, L, w) -> (n, h, L, d)
            return T.transpose(T.reshape(part, (n, L, h, d)), (0, 2, 1, 3))

        q = split(fused[:, :, :w])
        k = split(fused[:, :, w : 2 * w])
        v = split(fused[:, :, 2 * w :])
        scores = T.matmul(q, T.transpose(k, (0, 1, 3, 2))) * (1.0 / math.sqrt(d))
        if attn_bias is not None:
            scores = scores + T.constant(attn_bias)
        weights = T.softmax(scores, axis=-1)
        mixed = T.matmul(weights, v)  # (n, h, L, d)
        merged = T.reshape(T.transpose(mixed, (0, 2, 1, 3)), (n, L, w))
        return self.out(merged)


class MLPBlock(Module):
    def __init__(self, width: int, rng: np.random.Generator, hidden_mult: int = 4):
        super().__init__()
        self.fc1 = Linear(width, hidden_mult * width, rng)
        self.fc2 = Linear(hidden_mult * width, width, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(T.gelu(self.fc1(x)))


class TransformerBlock(Module):
    """Pre-layernorm residual block: x + attn(ln(x)), then x + mlp(ln(x))."""

    def __init__(self, width: int, heads: int, rng: np.random.Generator):
        super().__init__()
        self.ln1 = LayerNorm(width)
        self.attn = MultiHeadSelfAttention(width, heads, rng)
        self.ln2 = LayerNorm(width)
        self.mlp = MLPBlock(width, rng)

    def __call__(self, x: Tensor, attn_bias: np.ndarray | None = None) -> Tensor:
        x = x + self.attn(self.ln1(x), attn_bias)
        return x + self.mlp(self.ln2(x))
