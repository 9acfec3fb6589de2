"""Hybrid time/frequency encoder with a squeeze-and-excitation channel gate.

The learned basis gives ``n_basis`` non-negative rows per frame, the
log-magnitude spectrogram adds 11 more, and the gate rescales every row by
a scalar computed from the time-averaged map.
"""

import numpy as np

from . import dsp
from .numcore import Conv1d, DimensionError, Layer, ReLU, sigmoid, uniform_init


class FusionError(DimensionError):
    pass


def conv_encode(x, basis):
    """ReLU of the strided convolution of waveform ``x`` with ``basis`` (F, 1, 20)."""
    dsp.num_frames(len(x))
    layer = Conv1d(basis, stride=dsp.HOP)
    return np.maximum(layer.forward(np.asarray(x, dtype=basis.dtype)[None, :]), 0)


def spec_features(x):
    """Log-magnitude spectrogram of ``x`` as an (11, T) block."""
    return dsp.logmag_spectrogram(dsp.frame(x)).T


def fuse(h_conv, h_spec):
    """Stack conv rows over spectrogram rows; ``h_spec`` is (T, 11)."""
    if h_conv.shape[1] != h_spec.shape[0]:
        raise FusionError(f"frame count mismatch: conv {h_conv.shape[1]} vs spec {h_spec.shape[0]}")
    return np.concatenate([h_conv, h_spec.T.astype(h_conv.dtype)], axis=0)


def squeeze(h):
    return h.mean(axis=1)


def excite(z, w1, w2):
    if w1.shape[1] != z.shape[0] or w2.shape[1] != w1.shape[0]:
        raise DimensionError(
            f"gate shapes W1 {w1.shape}, W2 {w2.shape} do not fit descriptor of length {z.shape[0]}"
        )
    return sigmoid(w2 @ np.maximum(w1 @ z, 0))


def scale(h, u):
    return u[:, None] * h


class SEGate(Layer):
    """Squeeze (time mean), bottleneck excite, per-row rescale. No biases."""

    def __init__(self, w1, w2):
        super().__init__()
        self.params["w1"] = w1
        self.params["w2"] = w2

    @classmethod
    def init(cls, n_feat, reduction, rng, dtype=np.float32):
        hidden = max(n_feat // reduction, 1)
        w1 = uniform_init(rng, (hidden, n_feat), n_feat, dtype)
        w2 = uniform_init(rng, (n_feat, hidden), hidden, dtype)
        return cls(w1, w2)

    def forward(self, h):
        w1, w2 = self.params["w1"], self.params["w2"]
        z = squeeze(h)
        a = w1 @ z
        b = np.maximum(a, 0)
        u = sigmoid(w2 @ b)
        self._cache = (h, z, a, b, u)
        return scale(h, u), u

    def backward(self, g):
        h, z, a, b, u = self._cache
        w1, w2 = self.params["w1"], self.params["w2"]
        gu = np.sum(g * h, axis=1)
        gc = gu * u * (1 - u)
        self._accumulate("w2", np.outer(gc, b))
        ga = (w2.T @ gc) * (a > 0)
        self._accumulate("w1", np.outer(ga, z))
        gz = w1.T @ ga
        return u[:, None] * g + gz[:, None] / h.shape[1]


class Encoder:
    """Waveform -> gated feature map (n_basis + 11, T)."""

    def __init__(self, basis, gate):
        self.conv = Conv1d(basis, stride=dsp.HOP)
        self.relu = ReLU()
        self.gate = gate
        self.n_basis = basis.shape[0]

    @classmethod
    def init(cls, n_basis, reduction, rng, dtype=np.float32):
        basis = uniform_init(rng, (n_basis, 1, dsp.WIN), dsp.WIN, dtype)
        gate = SEGate.init(n_basis + dsp.N_BINS, reduction, rng, dtype)
        return cls(basis, gate)

    def named_layers(self):
        return {"basis": self.conv, "se": self.gate}

    def forward(self, x):
        x = np.asarray(x, dtype=self.conv.params["w"].dtype)
        h_conv = self.relu.forward(self.conv.forward(x[None, :]))
        h = fuse(h_conv, dsp.logmag_spectrogram(dsp.frame(x)))
        h_gated, u = self.gate.forward(h)
        return h_gated

    def backward(self, g):
        gh = self.gate.backward(g)
        self.conv.backward(self.relu.backward(gh[: self.n_basis]))
