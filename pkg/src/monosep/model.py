"""The complete separation network and its size presets."""

from dataclasses import asdict, dataclass, field

import numpy as np

from . import dsp
from .attractor import AttractorLayer
from .decoder import Decoder, apply_masks
from .embedder import Embedder
from .encoder import Encoder


@dataclass
class ModelConfig:
    n_basis: int = 256
    bottleneck: int = 256
    hidden: int = 512
    dilations: list = field(default_factory=lambda: [2**i for i in range(8)] * 4)
    emb_dim: int = 20
    n_centers: int = 4
    kmeans_iters: int = 1
    reduction: int = 16
    kernel: int = 3
    dtype: str = "float32"

    @property
    def n_feat(self):
        return self.n_basis + dsp.N_BINS

    def to_dict(self):
        return asdict(self)


PRESETS = {
    "paper": ModelConfig(),
    "toy": ModelConfig(n_basis=64, bottleneck=64, hidden=128,
                       dilations=[1, 2, 4, 8] * 2),
}


def preset(name, **overrides):
    if name not in PRESETS:
        raise KeyError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    cfg = ModelConfig(**{**PRESETS[name].to_dict(), **overrides})
    cfg.dilations = list(cfg.dilations)
    return cfg


class Separator:
    """Encoder -> embedder -> attractor masks -> decoder.

    Parameters live in the layers; :meth:`params` exposes them by dotted
    name for the optimizer and the checkpoint writer.
    """

    def __init__(self, config, rng):
        self.config = config
        dtype = np.dtype(config.dtype)
        self.dtype = dtype
        self.encoder = Encoder.init(config.n_basis, config.reduction, rng, dtype)
        self.embedder = Embedder(config.n_feat, config.n_basis, config.bottleneck,
                                 config.hidden, config.dilations, config.emb_dim, rng,
                                 config.kernel, dtype)
        self.attractor = AttractorLayer.init(config.n_centers, config.emb_dim, rng,
                                             config.kmeans_iters, dtype)
        self.decoder = Decoder.init(config.n_basis, rng, dtype)

    def layers(self):
        out = {}
        for k, layer in self.encoder.named_layers().items():
            out[f"encoder.{k}"] = layer
        for k, layer in self.embedder.named_layers().items():
            out[f"embedder.{k}"] = layer
        out["attractor"] = self.attractor
        out["decoder"] = self.decoder
        return out

    def params(self):
        return {f"{prefix}.{k}": p for prefix, layer in self.layers().items()
                for k, p in layer.params.items()}

    def grads(self):
        out = {}
        for prefix, layer in self.layers().items():
            for k, p in layer.params.items():
                g = layer.grads.get(k)
                out[f"{prefix}.{k}"] = np.zeros_like(p) if g is None else g
        return out

    def zero_grad(self):
        for layer in self.layers().values():
            layer.zero_grad()

    # -- forward pieces -----------------------------------------------------

    def analyze(self, x):
        """Waveform -> (gated feature map, embeddings)."""
        h = self.encoder.forward(np.asarray(x, dtype=self.dtype))
        return h, self.embedder.forward(h)

    def embed(self, x):
        return self.analyze(x)[1]

    def masks(self, v, n_sources):
        return self.attractor.forward(v, n_sources, self.config.n_basis)

    def forward(self, x, n_sources):
        """Separated waveforms (C, len(x)); caches everything for :meth:`backward`."""
        h, v = self.analyze(x)
        m = self.masks(v, n_sources)
        h_conv = h[: self.config.n_basis]
        self._fwd = (h_conv, m)
        return self.decoder.forward(apply_masks(h_conv, m), len(x))

    def backward(self, g_est):
        h_conv, m = self._fwd
        g_masked = self.decoder.backward(np.asarray(g_est, dtype=self.dtype))
        g_m = g_masked * h_conv[None]
        g_hconv = np.sum(g_masked * m, axis=0)
        g_v = self.attractor.backward(g_m)
        g_h = self.embedder.backward(g_v)
        g_h[: self.config.n_basis] += g_hconv
        self.encoder.backward(g_h)

    def decode(self, h, v, n_sources, length):
        m = self.masks(v, n_sources)
        h_conv = h[: self.config.n_basis]
        return self.decoder.forward(apply_masks(h_conv, m), length)
