"""Parameterised layers: shared MLPs, self-attention, RISurConv and the encoder block."""

from __future__ import annotations

import numpy as np

from . import functional as F
from .tensor import Tensor


class Module:
    training = True

    def named_parameters(self, prefix: str = ""):
        for name, value in vars(self).items():
            key = f"{prefix}{name}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield key, value
            elif isinstance(value, Module):
                yield from value.named_parameters(key + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{key}.{i}.")

    def named_buffers(self, prefix: str = ""):
        for name, value in vars(self).items():
            key = f"{prefix}{name}"
            if isinstance(value, np.ndarray):
                yield key, value
            elif isinstance(value, Module):
                yield from value.named_buffers(key + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_buffers(f"{key}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def modules(self):
        yield self
        for value in vars(self).values():
            if isinstance(value, Module):
                yield from value.modules()
            elif isinstance(value, (list, tuple)):
                for item in value:
                    if isinstance(item, Module):
                        yield from item.modules()

    def train(self, mode: bool = True):
        for m in self.modules():
            m.training = mode
        return self

    def eval(self):
        return self.train(False)

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def kaiming_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


def xavier_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


class Linear(Module):
    def __init__(self, cin: int, cout: int, rng: np.random.Generator, bias: bool = True, init=kaiming_uniform):
        self.w = Tensor(init(rng, cin, cout), requires_grad=True)
        self.b = Tensor(np.zeros(cout), requires_grad=True) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return F.linear(x, self.w, self.b)


class BatchNorm(Module):
    def __init__(self, channels: int, momentum: float = 0.9, eps: float = 1e-5):
        self.gamma = Tensor(np.ones(channels), requires_grad=True)
        self.beta = Tensor(np.zeros(channels), requires_grad=True)
        self.running_mean = np.zeros(channels, dtype=np.float32)
        self.running_var = np.ones(channels, dtype=np.float32)
        self.momentum = momentum
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return F.batchnorm(x, self.gamma, self.beta, self.running_mean, self.running_var,
                           self.training, self.momentum, self.eps)


class SharedMLP(Module):
    """Linear -> BatchNorm -> ReLU over the channel axis, one stage per width step."""

    def __init__(self, widths, rng: np.random.Generator):
        self.layers = [Linear(a, b, rng) for a, b in zip(widths[:-1], widths[1:])]
        self.norms = [BatchNorm(b) for b in widths[1:]]

    def forward(self, x: Tensor) -> Tensor:
        for lin, bn in zip(self.layers, self.norms):
            x = F.relu(bn(lin(x)))
        return x


class SelfAttention(Module):
    """Single-head softmax(QK^T / sqrt(C)) V; no residual or normalisation unless asked."""

    def __init__(self, channels: int, rng: np.random.Generator, bias: bool = False, residual: bool = False):
        self.wq = Tensor(xavier_uniform(rng, channels, channels), requires_grad=True)
        self.wk = Tensor(xavier_uniform(rng, channels, channels), requires_grad=True)
        self.wv = Tensor(xavier_uniform(rng, channels, channels), requires_grad=True)
        if bias:
            self.bq, self.bk, self.bv = (Tensor(np.zeros(channels), requires_grad=True) for _ in range(3))
        else:
            self.bq = self.bk = self.bv = None
        self.residual = residual
        self.channels = channels

    def forward(self, x: Tensor, return_scores: bool = False):
        return F.self_attention(x, self.wq, self.wk, self.wv, self.bq, self.bk, self.bv,
                                residual=self.residual, return_scores=return_scores)


class RISurConv(Module):
    """Attention-augmented convolution over a [B, N, K, C] neighbourhood block.

    embed MLP -> SA over K -> concat previous features -> MLP -> max over K -> SA over N.
    """

    def __init__(self, in_features: int, prev_channels: int, embed_channels: int, out_channels: int,
                 rng: np.random.Generator, sa1: bool = True, sa2: bool = True,
                 sa_bias: bool = False, sa_residual: bool = False):
        self.in_features = in_features
        self.prev_channels = prev_channels
        self.embed_channels = embed_channels
        self.out_channels = out_channels
        self.embed = SharedMLP([in_features, embed_channels, embed_channels], rng)
        self.sa1 = SelfAttention(embed_channels, rng, sa_bias, sa_residual) if sa1 else None
        self.fuse = SharedMLP([prev_channels + embed_channels, out_channels], rng)
        self.sa2 = SelfAttention(out_channels, rng, sa_bias, sa_residual) if sa2 else None

    def forward(self, risp: Tensor, f_prev: Tensor | None = None) -> Tensor:
        if risp.ndim != 4 or risp.shape[-1] != self.in_features:
            raise ValueError(f"expected [B, N, K, {self.in_features}] descriptors, got {risp.shape}")
        if (f_prev is None) != (self.prev_channels == 0):
            raise ValueError("previous-layer features given/omitted inconsistently with layer widths")
        f = self.embed(risp)
        if self.sa1 is not None:
            f = self.sa1(f)
        if f_prev is not None:
            if f_prev.shape != risp.shape[:3] + (self.prev_channels,):
                raise ValueError(f"previous features have shape {f_prev.shape}, expected "
                                 f"{risp.shape[:3] + (self.prev_channels,)}")
            f = F.concat([f_prev, f], axis=-1)
        f = self.fuse(f)
        f = F.maxpool(f, axis=2)
        if self.sa2 is not None:
            f = self.sa2(f)
        return f


def risurconv_forward(risp: Tensor, f_prev: Tensor | None, params: RISurConv) -> Tensor:
    return params(risp, f_prev)


class TransformerEncoder(Module):
    """Post-norm encoder block: x = LN(x + MHA(x)); x = LN(x + FF(x))."""

    def __init__(self, channels: int, heads: int, rng: np.random.Generator, ff_ratio: int = 4):
        if channels % heads:
            raise ValueError(f"width {channels} is not divisible by {heads} heads")
        self.heads = heads
        self.head_width = channels // heads
        self.q = Linear(channels, channels, rng, init=xavier_uniform)
        self.k = Linear(channels, channels, rng, init=xavier_uniform)
        self.v = Linear(channels, channels, rng, init=xavier_uniform)
        self.o = Linear(channels, channels, rng, init=xavier_uniform)
        self.ln1_gamma = Tensor(np.ones(channels), requires_grad=True)
        self.ln1_beta = Tensor(np.zeros(channels), requires_grad=True)
        self.ff1 = Linear(channels, ff_ratio * channels, rng)
        self.ff2 = Linear(ff_ratio * channels, channels, rng)
        self.ln2_gamma = Tensor(np.ones(channels), requires_grad=True)
        self.ln2_beta = Tensor(np.zeros(channels), requires_grad=True)

    def forward(self, x: Tensor) -> Tensor:
        a = F.multi_head_attention(x, self.heads, self.q.w, self.k.w, self.v.w, self.o.w,
                                   self.q.b, self.k.b, self.v.b, self.o.b)
        x = F.layernorm(x + a, self.ln1_gamma, self.ln1_beta)
        h = self.ff2(F.relu(self.ff1(x)))
        return F.layernorm(x + h, self.ln2_gamma, self.ln2_beta)


def transformer_encoder(x: Tensor, heads: int, params: TransformerEncoder) -> Tensor:
    if params.heads != heads:
        raise ValueError(f"encoder was built for {params.heads} heads, not {heads}")
    return params(x)
