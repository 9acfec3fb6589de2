"""Masked-feature synthesis, SI-SNR objective and permutation-invariant loss."""

import warnings
from dataclasses import dataclass
from itertools import permutations

import numpy as np

from . import dsp
from .numcore import DimensionError, Layer, uniform_init

EPS = 1e-8


class UndefinedReference(ValueError):
    pass


class NoSourceError(RuntimeError):
    pass


def apply_masks(h_conv, masks):
    """``masks`` (C, F, T) times ``h_conv`` (F, T) -> (C, F, T)."""
    if masks.shape[1:] != h_conv.shape:
        raise DimensionError(f"mask maps {masks.shape[1:]} != feature map {h_conv.shape}")
    return masks * h_conv[None]


def synthesize(masked, basis):
    """(F, T) feature map through (F, 20) synthesis kernels, overlap-added at hop 10."""
    return dsp.ola_sum(masked.T @ basis, dsp.HOP)


def fit_length(y, n):
    if len(y) >= n:
        return y[:n]
    return np.concatenate([y, np.zeros(n - len(y), dtype=y.dtype)])


class Decoder(Layer):
    """Transposed convolution (kernel 20, stride 10) with its own weights."""

    def __init__(self, basis):
        super().__init__()
        self.params["basis"] = basis

    @classmethod
    def init(cls, n_basis, rng, dtype=np.float32):
        return cls(uniform_init(rng, (n_basis, dsp.WIN), n_basis, dtype))

    def forward(self, masked, length):
        """``masked`` (C, F, T) -> (C, length) waveforms."""
        self._masked = masked
        self._t = masked.shape[2]
        return np.stack([fit_length(synthesize(m, self.params["basis"]), length) for m in masked])

    def backward(self, g):
        basis = self.params["basis"]
        full = (self._t - 1) * dsp.HOP + dsp.WIN
        gmasked = np.empty_like(self._masked)
        gbasis = np.zeros_like(basis)
        for i, (gi, m) in enumerate(zip(g, self._masked)):
            gi = fit_length(gi, full)
            gframes = dsp.ola_split(gi, self._t)  # (T, 20)
            gmasked[i] = basis @ gframes.T
            gbasis += m @ gframes
        self._accumulate("basis", gbasis)
        return gmasked


# ---------------------------------------------------------------------------
# objective


def _check_pair(s, s_hat):
    s = np.asarray(s, dtype=np.float64)
    s_hat = np.asarray(s_hat, dtype=np.float64)
    if s.shape != s_hat.shape or s.ndim != 1 or len(s) < 1:
        raise DimensionError(f"reference {s.shape} and estimate {s_hat.shape} must be equal-length 1-D")
    if not np.any(s):
        raise UndefinedReference("reference signal is all zeros")
    return s, s_hat


def si_snr(s, s_hat, eps=EPS):
    """Scale-invariant SNR in dB, written through the normalized correlation."""
    s, s_hat = _check_pair(s, s_hat)
    p = s @ s_hat
    ratio = p * p / ((s @ s) * (s_hat @ s_hat) - p * p + eps)
    return float(10 * np.log10(ratio + eps))


def si_snr_grad(s, s_hat, eps=EPS):
    """d si_snr / d s_hat."""
    s, s_hat = _check_pair(s, s_hat)
    p = s @ s_hat
    a = s @ s
    b = s_hat @ s_hat
    den = a * b - p * p + eps
    ratio = p * p / den
    d_ratio = (2 * p * s * den - p * p * (2 * a * s_hat - 2 * p * s)) / (den * den)
    return 10 / np.log(10) / (ratio + eps) * d_ratio


@dataclass
class LossReport:
    loss: float
    permutation: tuple  # permutation[i] = estimate index assigned to source i
    si_snr: np.ndarray  # per source, under the permutation


def pit_loss(sources, estimates):
    """Mean negative SI-SNR under the best source/estimate assignment."""
    if len(sources) != len(estimates):
        raise DimensionError(f"{len(sources)} sources vs {len(estimates)} estimates")
    c = len(sources)
    if not 1 <= c <= 4:
        raise ValueError(f"permutation search supports 1..4 sources, got {c}")
    pair = np.array([[si_snr(s, e) for e in estimates] for s in sources])
    best = None
    for perm in permutations(range(c)):
        loss = -np.mean(pair[np.arange(c), perm])
        if best is None or loss < best[0]:
            best = (loss, perm)
    loss, perm = best
    return LossReport(float(loss), perm, pair[np.arange(c), perm])


def pit_loss_grad(sources, estimates, report):
    """Gradient of ``report.loss`` w.r.t. each estimate (float64, (C, n))."""
    c = len(sources)
    g = np.zeros((c, len(estimates[0])))
    for i, j in enumerate(report.permutation):
        g[j] = -si_snr_grad(sources[i], estimates[j]) / c
    return g


# ---------------------------------------------------------------------------
# inference


def separate(x, model, n_sources=None, count_mode="gde", factor=None, threshold=None,
             constant=None):
    """Run the full pipeline on waveform ``x``.

    ``n_sources`` forces the count; otherwise ``count_mode`` ("gde" or
    "rank") estimates it from the embeddings and the estimate is capped at
    the size of the attractor bank. ``factor`` fixes the GDE factor,
    otherwise it follows from ``constant`` and the number of embedding rows.
    Returns ``(estimates, info)``.
    """
    from . import counter

    x = np.asarray(x, dtype=model.dtype)
    h, v = model.analyze(x)
    info = {}
    if n_sources is None:
        if count_mode == "gde":
            res = counter.gde_count(
                v, factor, counter.GDE_CONSTANT if constant is None else constant
            )
            n_sources = res.estimate
            info["gde"] = res
            if res.saturated:
                warnings.warn("GDE found no non-positive value; count saturated", RuntimeWarning)
        elif count_mode == "rank":
            n_sources = counter.rank_count(
                v, counter.RANK_THRESHOLD if threshold is None else threshold
            )
        else:
            raise ValueError(f"unknown count mode {count_mode!r}")
        info["estimated"] = n_sources
        n_sources = min(n_sources, model.config.n_centers)
    if n_sources < 1:
        raise NoSourceError("estimated zero sources")
    info["n_sources"] = n_sources
    return model.decode(h, v, n_sources, len(x)), info
