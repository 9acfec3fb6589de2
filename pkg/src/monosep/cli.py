"""Command-line entry point: generate, train, count, separate, evaluate, selfcheck.

Every option can also be set in an INI file passed with ``--config``. Its
sections group options by topic and its keys are the flag names without
the leading dashes, so ``--batch-size 8`` and ``[train] batch-size = 8``
are equivalent. Flags override the file; unknown sections or keys are
rejected.
"""

import argparse
import configparser
import sys
import warnings
from pathlib import Path

import numpy as np

from . import checkpoint, counter, data, metrics, selfcheck, trainer
from .decoder import NoSourceError, separate
from .model import PRESETS, preset
from .numcore import NumericError

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_CHECKPOINT = 4
EXIT_WAV = 5
EXIT_IO = 6
EXIT_DIVERGED = 7
EXIT_CHECK_FAILED = 8
EXIT_NO_SOURCE = 9


class ConfigError(ValueError):
    pass


def _int_list(text):
    try:
        return [int(v) for v in str(text).replace(",", " ").split()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"expected a comma-separated list of integers: {text!r}") from e


def _unit_interval(text):
    v = float(text)
    if not 0 < v < 1:
        raise argparse.ArgumentTypeError(f"must lie in (0, 1): {text}")
    return v


# (section, flag, type, default, help, extra argparse kwargs)
OPTIONS = [
    ("common", "seed", int, 0, "seed for data, initialization and shuffling", {}),
    ("common", "preset", str, "toy", "model size preset", {"choices": sorted(PRESETS)}),
    ("common", "out", str, None, "output directory", {}),
    ("common", "checkpoint", str, None, "checkpoint file to load", {}),
    ("common", "manifest", str, None, "dataset manifest (manifest.jsonl)", {}),
    ("data", "train-count", int, 20, "mixtures per source count in the train split", {}),
    ("data", "valid-count", int, 5, "mixtures per source count in the valid split", {}),
    ("data", "test-count", int, 50, "mixtures per source count in the test split", {}),
    ("data", "duration", float, 1.0, "utterance length in seconds (0.5 to 10)", {}),
    ("data", "source-counts", _int_list, [2, 3], "source counts to generate, e.g. 2,3", {}),
    ("data", "train-speakers", int, 20, "speakers in the train pool", {}),
    ("data", "valid-speakers", int, 8, "speakers in the valid pool", {}),
    ("data", "test-speakers", int, 8, "speakers in the test pool", {}),
    ("model", "n-basis", int, None, "encoder basis size (preset default)", {}),
    ("model", "bottleneck", int, None, "residual stack width (preset default)", {}),
    ("model", "hidden", int, None, "residual block hidden width (preset default)", {}),
    ("model", "dilations", _int_list, None, "dilation per residual block (preset default)", {}),
    ("model", "emb-dim", int, None, "embedding dimension (preset default)", {}),
    ("model", "n-centers", int, None, "attractor bank size (preset default)", {}),
    ("model", "kmeans-iters", int, None, "k-means refinement iterations (preset default)", {}),
    ("model", "reduction", int, None, "squeeze-excite reduction ratio (preset default)", {}),
    ("train", "epochs", int, 100, "training epochs", {}),
    ("train", "batch-size", int, 4, "mixtures per batch", {}),
    ("train", "lr", float, 1e-3, "Adam learning rate", {}),
    ("train", "clip", float, 5.0, "global gradient-norm clip", {}),
    ("train", "regime", str, "two", "source counts seen in training",
     {"choices": sorted(trainer.REGIMES)}),
    ("train", "checkpoint-every", int, 0, "extra checkpoint cadence in epochs (0 = off)", {}),
    ("count", "count-mode", str, "gde", "how the number of speakers is found",
     {"choices": ["oracle", "gde", "rank"]}),
    ("count", "num-speakers", int, None, "force the number of speakers (oracle counting)", {}),
    ("count", "gde-constant", float, counter.GDE_CONSTANT,
     "c in the GDE factor c / sqrt(log10 N)", {}),
    ("count", "gde-factor", _unit_interval, None, "fixed GDE factor (overrides the constant)", {}),
    ("count", "rank-threshold", _unit_interval, counter.RANK_THRESHOLD,
     "rank baseline threshold as a fraction of the largest eigenvalue", {}),
    ("eval", "split", str, "test", "manifest split to evaluate", {"choices": list(data.SPLITS)}),
    ("selfcheck", "seeds", int, 10, "seeds per gradient check", {}),
    ("selfcheck", "cola-trials", int, 100, "random waveforms in the overlap-add check", {}),
]
BY_KEY = {(sec, flag): (typ, extra.get("choices")) for sec, flag, typ, _, _, extra in OPTIONS}
SECTIONS = {sec for sec, *_ in OPTIONS}

# command -> (help, option sections, flags of those sections it does not use)
COMMANDS = {
    "generate": ("write a synthetic dataset and manifest", ["common", "data", "model"],
                 {"checkpoint", "manifest"}),
    "train": ("train a model on a manifest", ["common", "model", "train"], {"checkpoint"}),
    "count": ("estimate the number of speakers in a WAV file", ["common", "count"],
              {"seed", "preset", "out", "manifest", "count-mode", "num-speakers"}),
    "separate": ("separate a WAV file into one WAV per speaker", ["common", "count"],
                 {"seed", "preset", "manifest"}),
    "evaluate": ("score a checkpoint on a manifest split", ["common", "count", "eval"],
                 {"seed", "preset", "num-speakers"}),
    "selfcheck": ("run the gradient and overlap-add checks", ["common", "selfcheck"],
                  {"preset", "out", "checkpoint", "manifest"}),
}
NEEDS_INPUT = {"count", "separate"}


def _dest(flag):
    return flag.replace("-", "_")


def command_options(command):
    _, sections, unused = COMMANDS[command]
    return [opt for opt in OPTIONS if opt[0] in sections and opt[1] not in unused]


def build_parser():
    parser = argparse.ArgumentParser(prog="monosep", description=__doc__.splitlines()[0])
    subs = parser.add_subparsers(dest="command", required=True, metavar="command")
    for name, (help_text, _, _) in COMMANDS.items():
        p = subs.add_parser(name, help=help_text, description=help_text)
        if name in NEEDS_INPUT:
            p.add_argument("input", help="mono 16-bit 8 kHz WAV file")
        p.add_argument("--config", help="INI file with option defaults")
        for sec, flag, typ, default, help_opt, extra in command_options(name):
            shown = "" if default is None else f" (default: {default})"
            p.add_argument(f"--{flag}", dest=_dest(flag), type=typ,
                           default=argparse.SUPPRESS, help=f"[{sec}] {help_opt}{shown}", **extra)
    return parser


def read_config(path, command):
    """Parse an INI file into ``{dest: value}``; unknown sections/keys raise.

    Known keys the command does not use are ignored, so one file can serve
    every command.
    """
    used = {(sec, flag) for sec, flag, *_ in command_options(command)}
    cp = configparser.ConfigParser(interpolation=None)
    try:
        with open(path, encoding="utf-8") as f:
            cp.read_file(f)
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    except configparser.Error as e:
        raise ConfigError(f"malformed config {path}: {e}") from e
    values = {}
    for sec in cp.sections():
        if sec not in SECTIONS:
            raise ConfigError(f"{path}: unknown section [{sec}]")
        for key, raw in cp.items(sec):
            if (sec, key) not in BY_KEY:
                raise ConfigError(f"{path}: unknown key {key!r} in [{sec}]")
            if (sec, key) not in used:
                continue
            typ, choices = BY_KEY[(sec, key)]
            try:
                value = typ(raw)
            except (ValueError, argparse.ArgumentTypeError) as e:
                raise ConfigError(f"{path}: [{sec}] {key} = {raw!r}: {e}") from e
            if choices and value not in choices:
                raise ConfigError(f"{path}: [{sec}] {key} = {raw!r}: choose from {choices}")
            values[_dest(key)] = value
    return values


def resolve(args):
    """Defaults, then config file, then explicit flags."""
    opts = {_dest(flag): default for _, flag, _, default, _, _ in command_options(args.command)}
    if getattr(args, "config", None):
        opts.update(read_config(args.config, args.command))
    opts.update({k: v for k, v in vars(args).items() if k not in ("command", "config")})
    return argparse.Namespace(command=args.command, **opts)


MODEL_KEYS = ["n_basis", "bottleneck", "hidden", "dilations", "emb_dim", "n_centers",
              "kmeans_iters", "reduction"]


def _model_overrides(o):
    return {k: getattr(o, k) for k in MODEL_KEYS if getattr(o, k) is not None}


def _require(o, *names):
    for n in names:
        if getattr(o, n) is None:
            raise ConfigError(f"--{n.replace('_', '-')} is required for {o.command}")


# ---------------------------------------------------------------------------
# commands


def cmd_generate(o, out):
    model_cfg = preset(o.preset, **_model_overrides(o))
    k = model_cfg.n_centers
    for c in o.source_counts:
        if not 2 <= c <= k:
            raise ConfigError(f"source count {c} outside 2..{k} (attractor bank holds {k} centers)")
    if not 0.5 <= o.duration <= 10:
        raise ConfigError(f"duration {o.duration} s outside [0.5, 10]")
    counts = {"train": o.train_count, "valid": o.valid_count, "test": o.test_count}
    counts = {s: n for s, n in counts.items() if n > 0}
    speakers = {"train": o.train_speakers, "valid": o.valid_speakers, "test": o.test_speakers}
    dest = Path(o.out or "data")
    try:
        recs = data.build_dataset(dest, counts, seed=o.seed, duration=o.duration,
                                  source_counts=tuple(o.source_counts), n_speakers=speakers)
    except ValueError as e:
        raise ConfigError(str(e)) from e
    print(f"wrote {len(recs)} mixtures and {dest / 'manifest.jsonl'}", file=out)


def cmd_train(o, out):
    _require(o, "manifest")
    train_set = data.load_split(o.manifest, "train")
    valid_set = data.load_split(o.manifest, "valid")
    if not train_set:
        raise ConfigError(f"{o.manifest}: no train records")
    cfg = trainer.TrainConfig(epochs=o.epochs, batch_size=o.batch_size, lr=o.lr,
                              regime=o.regime, preset=o.preset, seed=o.seed, clip=o.clip,
                              checkpoint_every=o.checkpoint_every, model=_model_overrides(o))
    if o.epochs < 0 or o.batch_size < 1 or o.lr <= 0:
        raise ConfigError("need epochs >= 0, batch-size >= 1 and lr > 0")
    dest = Path(o.out or "run")
    try:
        trainer.train(cfg, train_set, valid_set, out_dir=dest,
                      log=lambda line: print(line, file=out, flush=True))
    except ValueError as e:
        raise ConfigError(str(e)) from e
    print(f"checkpoints in {dest}", file=out)


def _load(o):
    _require(o, "checkpoint")
    model, _, _ = trainer.load_checkpoint(o.checkpoint)
    return model


def cmd_count(o, out):
    model = _load(o)
    v = model.embed(data.wav_read(o.input))
    b = counter.covariance(v)
    res = counter.gde_from_covariance(b, v.shape[0], o.gde_factor, o.gde_constant)
    rank = counter.rank_from_covariance(b, o.rank_threshold)
    np.set_printoptions(precision=5, suppress=False, linewidth=100)
    print(f"estimated speakers (GDE): {res.estimate}", file=out)
    print(f"rank baseline (threshold {o.rank_threshold:g}): {rank}", file=out)
    print(f"GDE factor: {res.factor:.6f}  rows: {v.shape[0]}", file=out)
    if res.saturated:
        print("warning: no non-positive GDE value; estimate saturated", file=out)
    if res.zero_radius:
        print("warning: all disk radii are zero", file=out)
    print("eigenvalues:", np.array2string(res.eigenvalues), file=out)
    print("radii:", np.array2string(res.radii), file=out)
    print("GDE values:", np.array2string(res.gde), file=out)


def cmd_separate(o, out):
    model = _load(o)
    x = data.wav_read(o.input)
    n = o.num_speakers
    if n is None and o.count_mode == "oracle":
        raise ConfigError("--count-mode oracle needs --num-speakers")
    if n is not None and not 1 <= n <= model.config.n_centers:
        raise ConfigError(f"--num-speakers {n} outside 1..{model.config.n_centers}")
    mode = "gde" if o.count_mode == "oracle" else o.count_mode
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        est, info = separate(x, model, n_sources=n, count_mode=mode, factor=o.gde_factor,
                             threshold=o.rank_threshold, constant=o.gde_constant)
    for w in caught:
        print(f"warning: {w.message}", file=out)
    src = Path(o.input)
    dest = Path(o.out) if o.out else src.parent
    dest.mkdir(parents=True, exist_ok=True)
    if "estimated" in info and info["estimated"] != info["n_sources"]:
        print(f"estimated {info['estimated']} speakers, capped at {info['n_sources']}", file=out)
    for i, y in enumerate(est, start=1):
        path = dest / f"{src.stem}_src{i}.wav"
        data.wav_write(path, y)
        print(path, file=out)


def cmd_evaluate(o, out):
    _require(o, "manifest")
    model = _load(o)
    examples = data.load_split(o.manifest, o.split)
    if not examples:
        raise ConfigError(f"{o.manifest}: split {o.split!r} is empty")
    records, _ = trainer.evaluate(model, examples, o.count_mode, o.gde_factor,
                                  o.rank_threshold, o.gde_constant)
    rows = trainer.count_examples(model, examples, o.gde_factor, o.rank_threshold,
                                  o.gde_constant)
    tables = {"gde": metrics.counting_accuracy([(t, g) for t, g, _ in rows]),
              "rank": metrics.counting_accuracy([(t, r) for t, _, r in rows])}
    sep = metrics.format_separation_table(metrics.separation_summary(records))
    cnt = metrics.format_count_table(tables)
    dest = Path(o.out or "report")
    dest.mkdir(parents=True, exist_ok=True)
    metrics.write_records_csv(dest / "records.csv", records)
    metrics.write_count_csv(dest / "counting.csv", tables)
    (dest / "summary.txt").write_text(f"count mode: {o.count_mode}\n{sep}\n\n{cnt}\n", encoding="utf-8")
    print(f"count mode: {o.count_mode}\n{sep}\n\n{cnt}", file=out)


def cmd_selfcheck(o, out):
    checks = [("gradient", selfcheck.gradient_suite(range(o.seeds))),
              ("overlap-add", selfcheck.cola_suite(o.cola_trials, o.seed))]
    failed = 0
    for suite, results in checks:
        names = sorted({c.name for c in results}) if suite == "gradient" else [suite]
        for name in names:
            group = [c for c in results if suite != "gradient" or c.name == name]
            worst = max(c.error for c in group)
            ok = all(c.ok for c in group)
            failed += not ok
            print(f"{'PASS' if ok else 'FAIL'}  {suite:11s} {name:20s} "
                  f"worst error {worst:.2e} (tol {group[0].tol:g}, {len(group)} cases)", file=out)
    print("all checks passed" if not failed else f"{failed} check group(s) failed", file=out)
    return EXIT_OK if not failed else EXIT_CHECK_FAILED


HANDLERS = {"generate": cmd_generate, "train": cmd_train, "count": cmd_count,
            "separate": cmd_separate, "evaluate": cmd_evaluate, "selfcheck": cmd_selfcheck}


def main(argv=None, out=None, err=None):
    out = out or sys.stdout
    err = err or sys.stderr
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code else EXIT_OK

    def fail(code, kind, msg):
        print(f"monosep {args.command}: {kind}: {msg}", file=err)
        return code

    try:
        opts = resolve(args)
        return HANDLERS[args.command](opts, out) or EXIT_OK
    except ConfigError as e:
        return fail(EXIT_CONFIG, "config error", e)
    except checkpoint.CheckpointError as e:
        return fail(EXIT_CHECKPOINT, "checkpoint error", e)
    except data.FormatError as e:
        return fail(EXIT_WAV, "WAV format error", e)
    except NoSourceError as e:
        return fail(EXIT_NO_SOURCE, "no sources", e)
    except NumericError as e:
        return fail(EXIT_DIVERGED, "numeric failure", e)
    except OSError as e:
        return fail(EXIT_IO, "I/O error", e)


if __name__ == "__main__":
    raise SystemExit(main())
