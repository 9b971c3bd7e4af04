"""Training loop, evaluation metrics and the binary checkpoint format."""

from __future__ import annotations

import hashlib
import json
import logging
import struct
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from gcgnet.data import Batch, MaskSpec, ScalerStats, SeriesWindow, inject_mask
from gcgnet.nn import Adam, Mode
from gcgnet.tensor import Tensor, add

log = logging.getLogger(__name__)

LOSS_KEYS = ("l_f", "l_align", "kl_v", "kl_g")


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 32
    lr: float = 1e-3
    patience: int = 10
    seed: int = 0
    clip_norm: float = 5.0
    use_l_f: bool = True
    use_l_align: bool = True
    use_kl_v: bool = True
    use_kl_g: bool = True

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.patience < 1:
            raise ValueError("epochs, batch_size and patience must be positive")
        if self.lr < 0:
            raise ValueError("learning rate must be non-negative")
        if self.patience > self.epochs:
            raise ValueError("patience cannot exceed epochs")

    @property
    def enabled(self) -> dict[str, bool]:
        return {k: getattr(self, f"use_{k}") for k in LOSS_KEYS}

    @classmethod
    def from_dict(cls, d: dict) -> TrainConfig:
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown TrainConfig keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class Metrics:
    mse: float
    mae: float
    window_count: int

    def to_text(self) -> str:
        return f"mse: {self.mse:.10g}\nmae: {self.mae:.10g}\nwindow_count: {self.window_count}\n"


@dataclass
class History:
    epochs: list[dict] = field(default_factory=list)
    best_epoch: int = -1
    best_val_mse: float = float("inf")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> History:
        return cls(list(d.get("epochs", [])), d.get("best_epoch", -1), d.get("best_val_mse", float("inf")))

    def to_csv(self, path) -> None:
        cols = ["epoch", *LOSS_KEYS, "total", "val_mse"]
        lines = [",".join(cols)]
        for row in self.epochs:
            lines.append(",".join(repr(row[c]) if c != "epoch" else str(row[c]) for c in cols))
        Path(path).write_text("\n".join(lines) + "\n")


class TrainingError(RuntimeError):
    pass


def objective(losses, enabled: dict[str, bool]) -> Tensor:
    total = Tensor(0.0)
    for k in LOSS_KEYS:
        if enabled[k]:
            total = add(total, getattr(losses, k))
    return total


def batches(windows: Sequence[SeriesWindow], size: int, order: np.ndarray | None = None):
    idx = np.arange(len(windows)) if order is None else order
    for start in range(0, len(idx), size):
        yield Batch.from_windows([windows[i] for i in idx[start:start + size]])


def train(model, train_windows: Sequence[SeriesWindow], val_windows: Sequence[SeriesWindow],
          cfg: TrainConfig, verbose: bool = False):
    """Fit ``model`` in place; returns ``(model, history)`` with the best-validation weights loaded.

    Each mini-batch is one forward over stacked windows; since every loss is a
    mean over equally sized windows this equals averaging per-window gradients.
    """
    if not train_windows or not val_windows:
        raise TrainingError("train and validation splits must be non-empty")
    rng = np.random.default_rng(cfg.seed)
    shuffle_rng, noise_rng = rng.spawn(2)
    opt = Adam(model.parameters(), lr=cfg.lr, clip_norm=cfg.clip_norm)
    enabled = cfg.enabled
    history = History()
    best_state = model.state_dict()
    stale = 0
    for epoch in range(cfg.epochs):
        order = shuffle_rng.permutation(len(train_windows))
        sums = dict.fromkeys((*LOSS_KEYS, "total"), 0.0)
        seen = 0
        for b, batch in enumerate(batches(train_windows, cfg.batch_size, order)):
            out = model.forward(batch, Mode.TRAIN, noise_rng)
            loss = objective(out.losses, enabled)
            if not np.isfinite(loss.data):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {b}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            n = len(batch)
            seen += n
            for k in LOSS_KEYS:
                sums[k] += n * (float(getattr(out.losses, k).data) if enabled[k] else 0.0)
            sums["total"] += n * float(loss.data)
        row = {"epoch": epoch, **{k: v / seen for k, v in sums.items()}}
        row["val_mse"] = evaluate(model, val_windows).mse
        history.epochs.append(row)
        if verbose:
            log.info("epoch %d total %.5f val_mse %.5f", epoch, row["total"], row["val_mse"])
        if row["val_mse"] < history.best_val_mse:
            history.best_val_mse = row["val_mse"]
            history.best_epoch = epoch
            best_state = model.state_dict()
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    model.load_state_dict(best_state)
    return model, history


def evaluate(model, windows: Sequence[SeriesWindow], batch_size: int = 256,
             mask: MaskSpec | None = None) -> Metrics:
    """MSE/MAE over every window; the final partial batch is kept."""
    if not windows:
        raise ValueError("evaluate needs at least one window")
    if mask is not None:
        windows = [inject_mask(w, mask) for w in windows]
    sq = ab = 0.0
    count = 0
    for batch in batches(windows, batch_size):
        err = model.predict(batch) - batch.y_endo
        sq += float(np.sum(err * err))
        ab += float(np.sum(np.abs(err)))
        count += err.size
    return Metrics(sq / count, ab / count, len(windows))


# -- checkpoint ---------------------------------------------------------------

MAGIC = b"GCGN"
FORMAT_VERSION = 1


class CheckpointError(RuntimeError):
    pass


def save_checkpoint(model, path, scaler: ScalerStats | None = None, history: History | None = None,
                    extra: dict | None = None) -> None:
    """Layout: magic, u32 version, u64-prefixed JSON block, parameter blocks, 8-byte blake2b checksum."""
    meta = {
        "kind": model.kind,
        "config": model.config.to_dict(),
        "scaler": scaler.to_dict() if scaler is not None else None,
        "history": history.to_dict() if history is not None else None,
        "extra": extra or {},
    }
    text = json.dumps(meta, sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<I", FORMAT_VERSION), struct.pack("<Q", len(text)), text]
    for name, p in sorted(model.parameters().items()):
        raw = name.encode("utf-8")
        parts += [struct.pack("<I", len(raw)), raw, struct.pack("<Q", p.size),
                  np.ascontiguousarray(p.data, dtype="<f8").tobytes()]
    body = b"".join(parts)
    Path(path).write_bytes(body + hashlib.blake2b(body, digest_size=8).digest())


def read_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    blob = Path(path).read_bytes()
    if len(blob) < 24 or blob[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a GCGN checkpoint")
    body, digest = blob[:-8], blob[-8:]
    if hashlib.blake2b(body, digest_size=8).digest() != digest:
        raise CheckpointError(f"{path}: checksum mismatch (corrupt or truncated file)")
    (version,) = struct.unpack_from("<I", body, 4)
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: format version {version}, expected {FORMAT_VERSION}")
    (tlen,) = struct.unpack_from("<Q", body, 8)
    pos = 16
    try:
        meta = json.loads(body[pos:pos + tlen].decode("utf-8"))
        pos += tlen
        params = {}
        while pos < len(body):
            (nlen,) = struct.unpack_from("<I", body, pos)
            name = body[pos + 4:pos + 4 + nlen].decode("utf-8")
            pos += 4 + nlen
            (count,) = struct.unpack_from("<Q", body, pos)
            pos += 8
            end = pos + 8 * count
            if end > len(body):
                raise CheckpointError(f"{path}: parameter {name!r} runs past end of file")
            params[name] = np.frombuffer(body[pos:end], dtype="<f8").astype(np.float64)
            pos = end
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt checkpoint ({exc})") from None
    return meta, params


def load_checkpoint(path):
    """Return ``(model, scaler, meta)``."""
    from gcgnet.baselines import build_from_meta

    meta, params = read_checkpoint(path)
    model = build_from_meta(meta["kind"], meta["config"])
    model.load_state_dict(params)
    scaler = ScalerStats.from_dict(meta["scaler"]) if meta.get("scaler") else None
    return model, scaler, meta
