"""Evaluation measures and report writers.

SDR here is the plain error-signal SNR ``10 log10(|s|^2 / |s - s_hat|^2)``,
not the BSS-eval decomposition with distortion filters.
"""

import csv
from dataclasses import dataclass, field
from itertools import permutations

import numpy as np

from .decoder import UndefinedReference, si_snr

CLAMP_DB = 80.0
EDGE = 10


def trim(x, edge=EDGE):
    x = np.asarray(x)
    return x[edge : len(x) - edge] if len(x) > 2 * edge else x


def si_snri(s, s_hat, x):
    return si_snr(s, s_hat) - si_snr(s, x)


def sdr_plain(s, s_hat):
    s = np.asarray(s, dtype=np.float64)
    s_hat = np.asarray(s_hat, dtype=np.float64)
    ref = s @ s
    if ref == 0.0:
        raise UndefinedReference("reference signal is all zeros")
    err = s - s_hat
    e = err @ err
    if e == 0.0:
        return CLAMP_DB
    return float(np.clip(10 * np.log10(ref / e), -CLAMP_DB, CLAMP_DB))


def sdri(s, s_hat, x):
    return sdr_plain(s, s_hat) - sdr_plain(s, x)


def counting_accuracy(pairs):
    """Percent of ``(true, estimate)`` pairs that agree, per true count and
    macro-averaged over counts (key ``"avg"``)."""
    pairs = list(pairs)
    if not pairs:
        raise ValueError("no records to score")
    out = {}
    for c in sorted({t for t, _ in pairs}):
        hits = [e == t for t, e in pairs if t == c]
        out[c] = 100.0 * float(np.mean(hits))
    out["avg"] = float(np.mean([v for k, v in out.items()]))
    return out


@dataclass
class EvalRecord:
    id: str
    n_true: int
    n_est: int
    si_snr: list = field(default_factory=list)
    si_snri: list = field(default_factory=list)
    sdr: list = field(default_factory=list)
    sdri: list = field(default_factory=list)
    permutation: tuple = ()
    mismatch: bool = False


def best_matching(sources, estimates):
    """Assignment of min(C, C_hat) source/estimate pairs maximizing mean SI-SNR.

    Returns a list of (source index, estimate index) sorted by source.
    """
    pair = np.array([[si_snr(s, e) for e in estimates] for s in sources])
    c, k = pair.shape
    best = None
    if c <= k:
        for perm in permutations(range(k), c):
            score = pair[np.arange(c), perm].mean()
            if best is None or score > best[0]:
                best = (score, list(zip(range(c), perm)))
    else:
        for perm in permutations(range(c), k):
            score = pair[perm, np.arange(k)].mean()
            if best is None or score > best[0]:
                best = (score, sorted(zip(perm, range(k))))
    return best[1]


def score_utterance(uid, sources, estimates, mixture, n_est=None, edge=EDGE):
    """Per-source metrics under the best matching, on edge-trimmed signals."""
    srcs = [trim(s, edge) for s in sources]
    ests = [trim(e, edge) for e in estimates]
    mix = trim(mixture, edge)
    matching = best_matching(srcs, ests)
    rec = EvalRecord(uid, len(sources), len(estimates) if n_est is None else n_est)
    rec.mismatch = rec.n_true != len(estimates)
    perm = []
    for i, j in matching:
        rec.si_snr.append(_clamp(si_snr(srcs[i], ests[j])))
        rec.si_snri.append(rec.si_snr[-1] - _clamp(si_snr(srcs[i], mix)))
        rec.sdr.append(sdr_plain(srcs[i], ests[j]))
        rec.sdri.append(rec.sdr[-1] - sdr_plain(srcs[i], mix))
        perm.append(j)
    rec.permutation = tuple(perm)
    return rec


def _clamp(db):
    return float(np.clip(db, -CLAMP_DB, CLAMP_DB))


# ---------------------------------------------------------------------------
# reports

RECORD_FIELDS = ["id", "n_true", "n_est", "mismatch", "permutation",
                 "si_snr", "si_snri", "sdr", "sdri"]


def write_records_csv(path, records):
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(RECORD_FIELDS)
        for r in records:
            w.writerow([r.id, r.n_true, r.n_est, int(r.mismatch),
                        " ".join(map(str, r.permutation)),
                        _fmt_list(r.si_snr), _fmt_list(r.si_snri),
                        _fmt_list(r.sdr), _fmt_list(r.sdri)])


def _fmt_list(values):
    return " ".join(f"{v:.4f}" for v in values)


def separation_summary(records):
    """Mean SDRi / SI-SNRi per true source count."""
    out = {}
    for c in sorted({r.n_true for r in records}):
        rs = [r for r in records if r.n_true == c]
        out[c] = {
            "sdri": float(np.mean([v for r in rs for v in r.sdri])),
            "si_snri": float(np.mean([v for r in rs for v in r.si_snri])),
            "n": len(rs),
        }
    return out


def format_separation_table(summary):
    lines = ["speakers  SDRi (dB)  SI-SNRi (dB)  utterances"]
    for c, row in summary.items():
        lines.append(f"{c:>8}  {row['sdri']:9.2f}  {row['si_snri']:12.2f}  {row['n']:>10}")
    return "\n".join(lines)


def format_count_table(tables):
    """``tables`` maps method name to a :func:`counting_accuracy` result."""
    counts = sorted({k for t in tables.values() for k in t if k != "avg"})
    head = "method    " + "".join(f"{f'{c} speakers':>14}" for c in counts) + f"{'avg':>10}"
    lines = ["source counting accuracy [%]", head]
    for name, t in tables.items():
        cells = "".join(f"{t.get(c, float('nan')):14.1f}" for c in counts)
        lines.append(f"{name:<10}{cells}{t['avg']:10.1f}")
    return "\n".join(lines)


def write_count_csv(path, tables):
    counts = sorted({k for t in tables.values() for k in t if k != "avg"})
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["method"] + [f"{c}_speakers" for c in counts] + ["avg"])
        for name, t in tables.items():
            w.writerow([name] + [f"{t.get(c, float('nan')):.2f}" for c in counts]
                       + [f"{t['avg']:.2f}"])
