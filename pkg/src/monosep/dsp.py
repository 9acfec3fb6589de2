"""Framing, square-root Hann window, 20-point log-magnitude spectrogram and
overlap-add synthesis at 8 kHz."""

import numpy as np

SAMPLE_RATE = 8000
WIN = 20  # 2.5 ms at 8 kHz
HOP = 10
N_BINS = WIN // 2 + 1
LOG_FLOOR = 1e-8


class ConfigError(ValueError):
    pass


class LengthError(ValueError):
    pass


def sqrt_hann(n=WIN):
    """Periodic square-root Hann window of even length ``n``."""
    if n % 2:
        raise ConfigError(f"window length must be even, got {n}")
    k = np.arange(n)
    return np.sqrt(0.5 - 0.5 * np.cos(2 * np.pi * k / n))


def num_frames(length, win=WIN, hop=HOP):
    if length < win:
        raise LengthError(f"signal has {length} samples; at least {win} required")
    return (length - win) // hop + 1


def frame(x, win=WIN, hop=HOP, window=None):
    """Slice ``x`` into windowed frames of shape (T, win)."""
    x = np.asarray(x)
    t = num_frames(len(x), win, hop)
    w = sqrt_hann(win) if window is None else window
    idx = hop * np.arange(t)[:, None] + np.arange(win)[None, :]
    return x[idx] * w.astype(x.dtype)


def logmag_spectrogram(frames, eps=LOG_FLOOR):
    """(T, 20) windowed frames -> (T, 11) log-magnitude features."""
    mag = np.abs(np.fft.rfft(frames, axis=1))
    return np.log(mag + eps).astype(frames.dtype)


def overlap_add(frames, hop=HOP, window=None):
    """Window each frame and sum at its offset; output length (T-1)*hop + win."""
    frames = np.asarray(frames)
    w = sqrt_hann(frames.shape[1]) if window is None else window
    return ola_sum(frames * w.astype(frames.dtype), hop)


def ola_sum(frames, hop=HOP):
    """Plain overlap-add of (T, win) segments, no windowing."""
    t, win = frames.shape
    out = np.zeros((t - 1) * hop + win, dtype=frames.dtype)
    if win % hop:
        for i in range(t):
            out[i * hop : i * hop + win] += frames[i]
        return out
    for j in range(0, win, hop):
        out[j : j + t * hop].reshape(t, hop)[:] += frames[:, j : j + hop]
    return out


def ola_split(signal, t, win=WIN, hop=HOP):
    """Adjoint of :func:`ola_sum`: gather each frame's span from ``signal``."""
    idx = hop * np.arange(t)[:, None] + np.arange(win)[None, :]
    return signal[idx]
