"""End-to-end training with PIT loss and Adam, checkpointing and evaluation."""

import csv
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import checkpoint, counter
from .decoder import NoSourceError, pit_loss, pit_loss_grad, separate
from .metrics import score_utterance
from .model import ModelConfig, Separator, preset
from .numcore import Adam, NumericError, clip_grad_norm

REGIMES = {"two": (2,), "three": (3,), "two-and-three": (2, 3)}


class DivergenceError(NumericError):
    pass


def sub_rng(seed, name):
    """Independent generator for a named purpose derived from one seed."""
    return np.random.default_rng([seed, zlib.crc32(name.encode())])


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 4
    lr: float = 1e-3
    regime: str = "two"
    preset: str = "toy"
    seed: int = 0
    clip: float = 5.0
    checkpoint_every: int = 0
    model: dict = field(default_factory=dict)  # overrides on top of the preset

    def __post_init__(self):
        if self.regime not in REGIMES:
            raise ValueError(f"unknown regime {self.regime!r}; choose from {sorted(REGIMES)}")

    def model_config(self):
        return preset(self.preset, **self.model)


def init_model(config):
    return Separator(config.model_config(), sub_rng(config.seed, "init"))


def epoch_order(examples, regime, rng):
    """Shuffled example indices; mixed regimes alternate source counts."""
    groups = [[i for i, ex in enumerate(examples) if ex[2].shape[0] == c] for c in REGIMES[regime]]
    groups = [list(rng.permutation(g)) for g in groups if g]
    order = []
    while any(groups):
        for g in groups:
            if g:
                order.append(int(g.pop(0)))
    return order


def select_regime(examples, regime):
    allowed = REGIMES[regime]
    chosen = [ex for ex in examples if ex[2].shape[0] in allowed]
    if not chosen:
        raise ValueError(f"no examples with source counts {allowed} for regime {regime!r}")
    return chosen


def batch_loss(model, batch, train=True):
    """Sum of PIT losses over ``batch``; with ``train`` also accumulates grads."""
    n = min(len(ex[1]) for ex in batch)
    total = 0.0
    for _, mix, srcs in batch:
        mix, srcs = mix[:n], srcs[:, :n]
        est = model.forward(mix, srcs.shape[0])
        rep = pit_loss(srcs, est)
        if not np.isfinite(rep.loss):
            raise DivergenceError("non-finite loss")
        if train:
            model.backward(pit_loss_grad(srcs, est, rep))
        total += rep.loss
    return total


def validation_loss(model, examples):
    if not examples:
        return float("nan")
    return float(np.mean([batch_loss(model, [ex], train=False) for ex in examples]))


def train(config, train_set, valid_set=(), out_dir=None, log=print, model=None):
    """Train on ``[(id, mixture, sources), ...]``.

    Returns ``(model, optimizer, history)``; ``history`` holds one dict per
    epoch with train and validation loss. With ``out_dir`` the best
    validation model goes to ``best.ckpt``, the final one to ``last.ckpt``
    and the curve to ``loss.csv``.
    """
    train_set = select_regime(train_set, config.regime)
    valid_set = [ex for ex in valid_set if ex[2].shape[0] in REGIMES[config.regime]]
    model = model or init_model(config)
    params = model.params()
    opt = Adam(params, lr=config.lr)
    shuffle = sub_rng(config.seed, "shuffle")
    history = []
    best = np.inf
    out = Path(out_dir) if out_dir else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
    for epoch in range(1, config.epochs + 1):
        order = epoch_order(train_set, config.regime, shuffle)
        losses = []
        for b, start in enumerate(range(0, len(order), config.batch_size)):
            batch = [train_set[i] for i in order[start : start + config.batch_size]]
            model.zero_grad()
            try:
                total = batch_loss(model, batch)
            except DivergenceError as e:
                raise DivergenceError(f"epoch {epoch}, batch {b}: {e}") from e
            grads = model.grads()
            for g in grads.values():
                g /= len(batch)
            clip_grad_norm(grads, config.clip)
            try:
                opt.step(grads)
            except NumericError as e:
                raise DivergenceError(f"epoch {epoch}, batch {b}: {e}") from e
            losses.append(total / len(batch))
        row = {"epoch": epoch, "train_loss": float(np.mean(losses)),
               "valid_loss": validation_loss(model, valid_set)}
        history.append(row)
        log(f"epoch {epoch:4d}  train {row['train_loss']:8.3f}  valid {row['valid_loss']:8.3f}")
        if out:
            score = row["valid_loss"] if valid_set else row["train_loss"]
            if score < best:
                best = score
                save_checkpoint(out / "best.ckpt", model, config, opt, epoch, shuffle)
            if config.checkpoint_every and epoch % config.checkpoint_every == 0:
                save_checkpoint(out / f"epoch{epoch:04d}.ckpt", model, config, opt, epoch, shuffle)
    if out:
        save_checkpoint(out / "last.ckpt", model, config, opt, config.epochs, shuffle)
        if config.epochs == 0:
            save_checkpoint(out / "best.ckpt", model, config, opt, 0, shuffle)
        write_history(out / "loss.csv", history)
    return model, opt, history


def write_history(path, history):
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "valid_loss"])
        for row in history:
            w.writerow([row["epoch"], f"{row['train_loss']:.6f}", f"{row['valid_loss']:.6f}"])


def save_checkpoint(path, model, config, opt=None, epoch=0, rng=None):
    tensors = dict(model.params())
    if opt is not None:
        tensors.update(opt.state_dict())
    meta = {
        "model": model.config.to_dict(),
        "train": asdict(config) if config is not None else None,
        "epoch": epoch,
        "rng": rng.bit_generator.state if rng is not None else None,
    }
    checkpoint.save(path, tensors, meta)


def load_checkpoint(path):
    """Returns ``(model, meta, tensors)``; optimizer state stays in ``tensors``."""
    tensors, meta = checkpoint.load(path)
    cfg = ModelConfig(**meta["model"])
    model = Separator(cfg, np.random.default_rng(0))
    params = model.params()
    for name, p in params.items():
        if name not in tensors:
            raise checkpoint.CheckpointError(f"{path}: missing tensor {name!r}")
        if tensors[name].shape != p.shape:
            raise checkpoint.CheckpointError(
                f"{path}: tensor {name!r} has shape {tensors[name].shape}, model expects {p.shape}"
            )
        p[...] = tensors[name]
    return model, meta, tensors


def evaluate(model, examples, count_mode="oracle", factor=None, threshold=None, constant=None):
    """Separate and score every ``(id, mixture, sources)`` example.

    Returns ``(records, counts)`` where ``counts`` lists (true, estimated)
    source counts; with oracle counting these always agree.
    """
    if not examples:
        raise ValueError("empty evaluation set")
    records, counts = [], []
    for uid, mix, srcs in examples:
        c = srcs.shape[0]
        if count_mode == "oracle":
            est, info = separate(mix, model, n_sources=c)
            n_est = c
        else:
            try:
                est, info = separate(mix, model, count_mode=count_mode, factor=factor,
                                     threshold=threshold, constant=constant)
                n_est = info["estimated"]
            except NoSourceError:
                est, n_est = np.zeros((1, len(mix))), 0
        counts.append((c, n_est))
        records.append(score_utterance(uid, srcs, est, mix, n_est=n_est))
    return records, counts


def count_examples(model, examples, factor=None, threshold=counter.RANK_THRESHOLD,
                   constant=counter.GDE_CONSTANT):
    """(true, gde, rank) counts from the model's embeddings for each example."""
    rows = []
    for _, mix, srcs in examples:
        v = model.embed(mix)
        b = counter.covariance(v)
        rows.append((srcs.shape[0],
                     counter.gde_from_covariance(b, v.shape[0], factor, constant).estimate,
                     counter.rank_from_covariance(b, threshold)))
    return rows
