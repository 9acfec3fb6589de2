"""Dilated residual separator stack producing per-bin embeddings."""

import numpy as np

from .numcore import (
    DepthwiseConv,
    DimensionError,
    GlobalLayerNorm,
    NumericError,
    Pointwise,
    ReLU,
    uniform_init,
)

PAPER_DILATIONS = [2**i for i in range(8)] * 4


class ResidualBlock:
    """gLN -> 1x1 -> ReLU -> dilated depthwise -> ReLU -> 1x1, plus identity skip."""

    def __init__(self, channels, hidden, dilation, rng, kernel=3, dtype=np.float32):
        self.norm = GlobalLayerNorm(np.ones(channels, dtype), np.zeros(channels, dtype))
        self.inp = Pointwise(
            uniform_init(rng, (hidden, channels), channels, dtype),
            uniform_init(rng, (hidden,), channels, dtype),
        )
        self.act1 = ReLU()
        self.dw = DepthwiseConv(
            uniform_init(rng, (hidden, kernel), kernel, dtype),
            uniform_init(rng, (hidden,), kernel, dtype),
            dilation=dilation,
        )
        self.act2 = ReLU()
        self.out = Pointwise(
            uniform_init(rng, (channels, hidden), hidden, dtype),
            uniform_init(rng, (channels,), hidden, dtype),
        )
        self.dilation = dilation

    def named_layers(self):
        return {"norm": self.norm, "in": self.inp, "dw": self.dw, "out": self.out}

    def forward(self, x):
        y = self.norm.forward(x)
        y = self.act1.forward(self.inp.forward(y))
        y = self.act2.forward(self.dw.forward(y))
        return x + self.out.forward(y)

    def backward(self, g):
        gy = self.out.backward(g)
        gy = self.dw.backward(self.act2.backward(gy))
        gy = self.inp.backward(self.act1.backward(gy))
        return g + self.norm.backward(gy)


class Embedder:
    """Entry 1x1 conv, residual blocks, linear head to ``n_basis * emb_dim`` rows.

    The head output (n_basis * L, T) is laid out as V[t * n_basis + f, l],
    i.e. one L-dim embedding per (frame, basis channel) bin.
    """

    def __init__(self, n_feat, n_basis, bottleneck, hidden, dilations, emb_dim, rng,
                 kernel=3, dtype=np.float32):
        self.n_feat, self.n_basis, self.emb_dim = n_feat, n_basis, emb_dim
        self.entry = Pointwise(
            uniform_init(rng, (bottleneck, n_feat), n_feat, dtype),
            uniform_init(rng, (bottleneck,), n_feat, dtype),
        )
        self.blocks = [
            ResidualBlock(bottleneck, hidden, d, rng, kernel, dtype) for d in dilations
        ]
        self.head = Pointwise(
            uniform_init(rng, (n_basis * emb_dim, bottleneck), bottleneck, dtype),
            uniform_init(rng, (n_basis * emb_dim,), bottleneck, dtype),
        )

    def named_layers(self):
        out = {"entry": self.entry, "head": self.head}
        for i, block in enumerate(self.blocks):
            for k, layer in block.named_layers().items():
                out[f"block{i}.{k}"] = layer
        return out

    def receptive_field(self):
        k = self.blocks[0].dw.params["w"].shape[1] if self.blocks else 1
        return 1 + sum((k - 1) * b.dilation for b in self.blocks)

    def forward(self, h):
        if h.shape[0] != self.n_feat:
            raise DimensionError(f"axis 0 of feature map ({h.shape[0]}) != {self.n_feat}")
        y = self.entry.forward(h)
        for i, block in enumerate(self.blocks):
            y = block.forward(y)
            if not np.all(np.isfinite(y)):
                raise NumericError(f"non-finite activation after block {i}")
        y = self.head.forward(y)
        t = y.shape[1]
        self._t = t
        return to_embeddings(y, self.n_basis, self.emb_dim)

    def backward(self, g_v):
        g = from_embeddings(g_v, self.n_basis, self.emb_dim, self._t)
        g = self.head.backward(g)
        for block in reversed(self.blocks):
            g = block.backward(g)
        return self.entry.backward(g)


def to_embeddings(y, n_basis, emb_dim):
    """(n_basis * L, T) head output -> (T * n_basis, L)."""
    t = y.shape[1]
    return y.reshape(n_basis, emb_dim, t).transpose(2, 0, 1).reshape(t * n_basis, emb_dim)


def from_embeddings(v, n_basis, emb_dim, t):
    return v.reshape(t, n_basis, emb_dim).transpose(1, 2, 0).reshape(n_basis * emb_dim, t)
