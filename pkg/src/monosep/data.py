"""Synthetic multi-speaker corpus, mixing, WAV I/O and manifests.

Speakers are harmonic sources with a per-speaker pitch range, harmonic
envelope, 8-tap coloring filter and syllabic amplitude modulation. Every
quantity is a deterministic function of ``(seed, speaker id)``.
"""

import json
import os
import wave
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .dsp import SAMPLE_RATE

PEAK = 0.9
MAX_LEVEL_DB = 2.5


class FormatError(ValueError):
    pass


@dataclass
class SpeakerProfile:
    id: int
    f0_range: tuple
    harmonics: np.ndarray
    filter: np.ndarray
    am_rate: float

    @classmethod
    def from_seed(cls, seed, speaker_id):
        rng = np.random.default_rng([seed, speaker_id, 0])
        f0 = float(np.exp(rng.uniform(np.log(90.0), np.log(300.0))))
        n_harm = 40
        decay = rng.uniform(0.6, 1.6)
        harm = np.arange(1, n_harm + 1) ** -decay * np.exp(0.4 * rng.standard_normal(n_harm))
        taps = rng.standard_normal(8) * np.exp(-0.3 * np.arange(8))
        taps[0] = abs(taps[0]) + 1.0
        return cls(
            id=speaker_id,
            f0_range=(0.85 * f0, 1.15 * f0),
            harmonics=harm,
            filter=taps / np.linalg.norm(taps),
            am_rate=float(rng.uniform(2.0, 6.0)),
        )


def synth_utterance(profile, duration, seed, sample_rate=SAMPLE_RATE):
    """Voiced harmonic segments separated by short noisy/silent gaps."""
    if not 0.5 <= duration <= 10:
        raise ValueError(f"duration must lie in [0.5, 10] s, got {duration}")
    rng = np.random.default_rng([seed, profile.id, 1])
    n = int(round(duration * sample_rate))
    t = np.arange(n) / sample_rate
    out = np.zeros(n)
    pos = int(rng.integers(0, int(0.1 * sample_rate)))
    lo, hi = profile.f0_range
    while pos < n:
        seg = int(rng.uniform(0.12, 0.35) * sample_rate)
        end = min(pos + seg, n)
        length = end - pos
        if length > 8:
            base = rng.uniform(lo, hi)
            glide = rng.uniform(-0.15, 0.15)
            f0 = base * (1 + glide * np.linspace(-0.5, 0.5, length))
            phase = 2 * np.pi * np.cumsum(f0) / sample_rate + rng.uniform(0, 2 * np.pi)
            voiced = np.zeros(length)
            for k, amp in enumerate(profile.harmonics, start=1):
                if k * f0.max() >= 0.48 * sample_rate:
                    break
                voiced += amp * np.sin(k * phase)
            env = np.sin(np.pi * np.arange(length) / length) ** 0.5
            out[pos:end] = voiced * env
        gap = int(rng.uniform(0.03, 0.15) * sample_rate)
        g_end = min(end + gap, n)
        out[end:g_end] = 0.02 * rng.standard_normal(g_end - end)
        pos = g_end
    am = 1.0 + 0.35 * np.sin(2 * np.pi * profile.am_rate * t + rng.uniform(0, 2 * np.pi))
    y = np.convolve(out * am, profile.filter)[:n]
    return PEAK * y / np.max(np.abs(y))


def mix_at_snr(sources, levels_db):
    """Scale sources relative to the first and sum them.

    ``levels_db[i]`` is ``10 log10(P_1 / P_{i+1})`` for the sources after
    the first. If the mixture peak exceeds 1, all gains shrink together.
    Returns ``(mixture, scaled_sources, gains)``.
    """
    if len(levels_db) != len(sources) - 1:
        raise ValueError(f"need {len(sources) - 1} relative levels, got {len(levels_db)}")
    for lev in levels_db:
        if abs(lev) > MAX_LEVEL_DB + 1e-12:
            raise ValueError(f"relative level {lev} dB outside [-{MAX_LEVEL_DB}, {MAX_LEVEL_DB}]")
    n = min(len(s) for s in sources)
    srcs = [np.asarray(s[:n], dtype=np.float64) for s in sources]
    powers = [float(np.mean(s * s)) for s in srcs]
    for i, p in enumerate(powers):
        if p == 0.0:
            raise ValueError(f"source {i} has zero power")
    gains = [1.0] + [np.sqrt(powers[0] / (powers[i + 1] * 10 ** (lev / 10)))
                     for i, lev in enumerate(levels_db)]
    scaled = np.array([g * s for g, s in zip(gains, srcs)])
    mixture = scaled.sum(axis=0)
    peak = np.max(np.abs(mixture))
    if peak > 1.0:
        shrink = 0.99 / peak
        gains = [g * shrink for g in gains]
        scaled *= shrink
        mixture = scaled.sum(axis=0)
    return mixture, scaled, np.array(gains)


# ---------------------------------------------------------------------------
# WAV


def wav_write(path, samples, sample_rate=SAMPLE_RATE):
    """Mono 16-bit PCM."""
    q = np.clip(np.round(np.asarray(samples, dtype=np.float64) * 32768), -32768, 32767)
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(sample_rate)
        w.writeframes(q.astype("<i2").tobytes())


def wav_read(path, sample_rate=SAMPLE_RATE):
    try:
        w = wave.open(str(path), "rb")
    except (wave.Error, EOFError) as e:
        raise FormatError(f"{path}: cannot parse WAV ({e})") from e
    with w:
        if w.getnchannels() != 1:
            raise FormatError(f"{path}: channels={w.getnchannels()}, expected 1")
        if w.getsampwidth() != 2:
            raise FormatError(f"{path}: sample width={8 * w.getsampwidth()} bits, expected 16")
        if w.getframerate() != sample_rate:
            raise FormatError(f"{path}: sample rate={w.getframerate()}, expected {sample_rate}")
        raw = w.readframes(w.getnframes())
    return np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768


# ---------------------------------------------------------------------------
# dataset


@dataclass
class MixtureRecord:
    id: str
    mixture: str
    sources: list
    n_sources: int
    gains: list
    speakers: list
    levels_db: list
    split: str
    extra: dict = field(default_factory=dict)

    def load(self, root="."):
        """(mixture, gain-scaled sources) as float arrays."""
        root = Path(root)
        mix = wav_read(root / self.mixture)
        srcs = np.array([g * wav_read(root / p) for g, p in zip(self.gains, self.sources)])
        return mix, srcs


SPLITS = ("train", "valid", "test")


def speaker_pools(n_speakers):
    """Disjoint speaker-id ranges per split, e.g. {"train": range(0, 20), ...}."""
    pools, start = {}, 0
    for split in SPLITS:
        pools[split] = range(start, start + n_speakers[split])
        start += n_speakers[split]
    return pools


def make_example(seed, split_seed, index, n_sources, pool, duration):
    """One mixture drawn from ``pool``; returns (mixture, scaled sources, meta)."""
    rng = np.random.default_rng([seed, split_seed, n_sources, index])
    speakers = [int(s) for s in rng.choice(list(pool), size=n_sources, replace=False)]
    levels = [float(rng.uniform(-MAX_LEVEL_DB, MAX_LEVEL_DB)) for _ in range(n_sources - 1)]
    utter_seed = int(rng.integers(0, 2**31))
    raw = [synth_utterance(SpeakerProfile.from_seed(seed, s), duration, utter_seed + k)
           for k, s in enumerate(speakers)]
    mixture, scaled, gains = mix_at_snr(raw, levels)
    meta = {"speakers": speakers, "levels_db": levels, "gains": gains.tolist()}
    return mixture, scaled, raw, meta


def build_dataset(out_dir, counts, seed=0, duration=1.0, source_counts=(2, 3),
                  n_speakers=None):
    """Write WAVs and ``manifest.jsonl`` under ``out_dir``.

    ``counts`` maps split name to the number of mixtures per source count.
    Returns the list of :class:`MixtureRecord`.
    """
    n_speakers = n_speakers or {"train": 20, "valid": 8, "test": 8}
    pools = speaker_pools(n_speakers)
    for split in counts:
        if split not in pools:
            raise ValueError(f"unknown split {split!r}")
        if len(pools[split]) < max(source_counts):
            raise ValueError(f"split {split!r} has fewer speakers than {max(source_counts)}")
    out = Path(out_dir)
    records = []
    for split_idx, split in enumerate(SPLITS):
        if split not in counts:
            continue
        split_dir = out / split
        try:
            split_dir.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            raise OSError(f"cannot create {split_dir}: {e}") from e
        for c in source_counts:
            for i in range(counts[split]):
                mixture, _, raw, meta = make_example(seed, split_idx, i, c, pools[split], duration)
                rid = f"{split}_c{c}_{i:05d}"
                mix_rel = f"{split}/{rid}_mix.wav"
                src_rel = [f"{split}/{rid}_s{k + 1}.wav" for k in range(c)]
                _write(out / mix_rel, mixture)
                for rel, s in zip(src_rel, raw):
                    _write(out / rel, s[: len(mixture)])
                records.append(MixtureRecord(rid, mix_rel, src_rel, c, meta["gains"],
                                             meta["speakers"], meta["levels_db"], split))
    write_manifest(out / "manifest.jsonl", records)
    return records


def _write(path, samples):
    try:
        wav_write(path, samples)
    except OSError as e:
        raise OSError(f"cannot write {path}: {e}") from e


def write_manifest(path, records):
    with open(path, "w", encoding="utf-8") as f:
        for r in records:
            f.write(json.dumps(asdict(r), sort_keys=True) + "\n")


def read_manifest(path, split=None):
    records = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            if line.strip():
                r = MixtureRecord(**json.loads(line))
                if split is None or r.split == split:
                    records.append(r)
    return records


def load_split(manifest_path, split):
    """[(id, mixture, scaled sources)] for one split, read from disk."""
    root = os.path.dirname(os.path.abspath(manifest_path))
    return [(r.id, *r.load(root)) for r in read_manifest(manifest_path, split)]
