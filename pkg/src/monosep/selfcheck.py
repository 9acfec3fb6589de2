"""Built-in finite-difference and overlap-add property suites.

Used by the ``selfcheck`` command and the acceptance tests. Each check
returns :class:`Check` records instead of raising, so a caller can report
every failure at once.
"""

from dataclasses import dataclass

import numpy as np

from . import dsp
from .attractor import AttractorLayer
from .decoder import Decoder, pit_loss, pit_loss_grad
from .embedder import ResidualBlock
from .encoder import SEGate
from .model import Separator, preset
from .numcore import (
    Conv1d,
    DepthwiseConv,
    GlobalLayerNorm,
    MatMul,
    Mean,
    Pointwise,
    ReLU,
    Sigmoid,
    Softmax,
    numeric_grad,
    rel_error,
)

UNIT_TOL = 1e-6
END_TO_END_TOL = 1e-3
COLA_TOL = 1e-6


@dataclass
class Check:
    name: str
    seed: int
    error: float
    tol: float

    @property
    def ok(self):
        return bool(self.error < self.tol)


def _away_from_zero(a, margin=1e-2):
    return np.where(np.abs(a) < margin, np.sign(a + 1e-12) * margin, a)


class _Wrap:
    """Adapts layers with extra forward arguments to ``forward(x)``."""

    def __init__(self, layer, fwd, bwd=None):
        self.layer, self._fwd, self._bwd = layer, fwd, bwd
        self.params, self.grads = layer.params, layer.grads

    def forward(self, x):
        return self._fwd(x)

    def backward(self, g):
        return (self._bwd or self.layer.backward)(g)

    def zero_grad(self):
        self.layer.zero_grad()


class _Block:
    """Residual block viewed as one layer with the parameters of its parts."""

    def __init__(self, block):
        self.block = block
        self.parts = block.named_layers()

    @property
    def params(self):
        return {f"{k}.{n}": p for k, l in self.parts.items() for n, p in l.params.items()}

    @property
    def grads(self):
        return {f"{k}.{n}": g for k, l in self.parts.items() for n, g in l.grads.items()}

    def forward(self, x):
        return self.block.forward(x)

    def backward(self, g):
        return self.block.backward(g)

    def zero_grad(self):
        for layer in self.parts.values():
            layer.zero_grad()


def _unit_cases(r):
    se = SEGate(r.standard_normal((2, 8)), r.standard_normal((8, 2)))
    att = AttractorLayer(r.standard_normal((4, 5)))
    n_src = int(r.integers(1, 4))
    dec = Decoder(r.standard_normal((4, dsp.WIN)))
    return {
        "conv1d": (Conv1d(r.standard_normal((3, 2, 4)), stride=2, dilation=2, padding=1),
                   r.standard_normal((2, 15))),
        "pointwise": (Pointwise(r.standard_normal((4, 3)), r.standard_normal(4)),
                      r.standard_normal((3, 7))),
        "depthwise": (DepthwiseConv(r.standard_normal((3, 3)), r.standard_normal(3), dilation=2),
                      r.standard_normal((3, 11))),
        "relu": (ReLU(), _away_from_zero(r.standard_normal((3, 6)))),
        "sigmoid": (Sigmoid(), r.standard_normal((3, 6))),
        "softmax": (Softmax(axis=1), r.standard_normal((5, 4))),
        "mean": (Mean(axis=1), r.standard_normal((4, 6))),
        "global_layer_norm": (GlobalLayerNorm(r.standard_normal(3), r.standard_normal(3)),
                              r.standard_normal((3, 9))),
        "se_gate": (_Wrap(se, lambda x: se.forward(x)[0]), r.standard_normal((8, 6))),
        "residual_block": (_Block(ResidualBlock(4, 6, 2, r, dtype=np.float64)),
                           r.standard_normal((4, 9))),
        "attractor": (_Wrap(att, lambda v: att.forward(v, n_src, 3)), r.standard_normal((18, 5))),
        "decoder": (_Wrap(dec, lambda m: dec.forward(m, 47)), r.standard_normal((2, 4, 4))),
    }


def _layer_error(layer, x, r, h):
    up = r.standard_normal(layer.forward(x).shape)
    layer.zero_grad()
    gx = layer.backward(up)

    def loss():
        return float(np.sum(layer.forward(x) * up))

    errs = [rel_error(gx, numeric_grad(loss, x, h))]
    for name, p in layer.params.items():
        errs.append(rel_error(layer.grads[name], numeric_grad(loss, p, h)))
    return max(errs)


def _matmul_error(r, h):
    a, b = r.standard_normal((3, 4)), r.standard_normal((4, 5))
    mm = MatMul()
    up = r.standard_normal((3, 5))
    mm.forward(a, b)
    ga, gb = mm.backward(up)

    def loss():
        return float(np.sum(mm.forward(a, b) * up))

    return max(rel_error(ga, numeric_grad(loss, a, h)), rel_error(gb, numeric_grad(loss, b, h)))


def unit_gradient_checks(seeds=range(10)):
    out = []
    for seed in seeds:
        r = np.random.default_rng([seed, 1])
        for name, (layer, x) in _unit_cases(r).items():
            # attractor selection is piecewise: a smaller step keeps the choice fixed
            h = 1e-6 if name == "attractor" else 1e-4
            out.append(Check(name, seed, _layer_error(layer, x, r, h), UNIT_TOL))
        out.append(Check("matmul", seed, _matmul_error(r, 1e-4), UNIT_TOL))
    return out


SMALL_MODEL = {"n_basis": 8, "bottleneck": 6, "hidden": 8, "dilations": [1, 2]}


def end_to_end_check(seed, length=200, probes=6):
    """float32 analytic gradients of the PIT loss vs a float64 finite-difference oracle."""
    r = np.random.default_rng([seed, 2])
    model32 = Separator(preset("toy", **SMALL_MODEL), np.random.default_rng(seed))
    model64 = Separator(preset("toy", dtype="float64", **SMALL_MODEL), np.random.default_rng(seed))
    params64 = model64.params()
    for name, p in model32.params().items():
        params64[name][...] = p
    t = np.arange(length) / dsp.SAMPLE_RATE
    srcs = np.stack([np.sin(2 * np.pi * 440 * t), np.sign(np.sin(2 * np.pi * 130 * t))])
    srcs += 0.05 * r.standard_normal(srcs.shape)
    x = srcs.sum(axis=0)

    est = model32.forward(x.astype(np.float32), 2)
    model32.zero_grad()
    model32.backward(pit_loss_grad(srcs, est, pit_loss(srcs, est)))

    def loss():
        return pit_loss(srcs, model64.forward(x, 2)).loss

    worst = 0.0
    for name, g in model32.grads().items():
        idx = r.choice(g.size, min(probes, g.size), replace=False)
        num = numeric_grad(loss, params64[name], 1e-5, idx)
        ana = g.ravel()[idx]
        if max(np.linalg.norm(num), np.linalg.norm(ana)) < 1e-6:
            continue  # parameter not on the active path for this input
        worst = max(worst, rel_error(ana, num))
    return Check("end_to_end_pit", seed, worst, END_TO_END_TOL)


def gradient_suite(seeds=range(10)):
    return unit_gradient_checks(seeds) + [end_to_end_check(s) for s in seeds]


def cola_suite(n=100, seed=0, lengths=(160, 8000)):
    """Frame / overlap-add round trips on random waveforms, interior samples."""
    r = np.random.default_rng(seed)
    out = []
    for i in range(n):
        length = int(r.integers(lengths[0], lengths[1] + 1))
        x = r.uniform(-1, 1, length).astype(np.float32)
        y = dsp.overlap_add(dsp.frame(x))
        m = len(y)
        err = float(np.max(np.abs(y[dsp.HOP : m - dsp.HOP] - x[dsp.HOP : m - dsp.HOP])))
        out.append(Check(f"cola[len={length}]", i, err, COLA_TOL))
    return out
