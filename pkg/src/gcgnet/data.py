"""Dataset loading, splitting, windowing, scaling, masking and synthetic data."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Sequence

import numpy as np


class DataError(ValueError):
    pass


@dataclass
class Dataset:
    """Endogenous and exogenous channels stored as ``(channels, length)`` arrays."""

    endo_names: list[str]
    exo_names: list[str]
    endo: np.ndarray
    exo: np.ndarray
    timestamps: list[str] | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.endo = np.asarray(self.endo, dtype=np.float64).reshape(len(self.endo_names), -1)
        self.exo = np.asarray(self.exo, dtype=np.float64).reshape(len(self.exo_names), -1)
        if self.endo.shape[1] != self.exo.shape[1]:
            raise DataError("endogenous and exogenous columns differ in length")
        if set(self.endo_names) & set(self.exo_names):
            raise DataError("endogenous and exogenous names overlap")

    @property
    def N(self) -> int:
        return len(self.endo_names)

    @property
    def D(self) -> int:
        return len(self.exo_names)

    @property
    def length(self) -> int:
        return self.endo.shape[1]

    def __len__(self) -> int:
        return self.length

    def slice(self, start: int, stop: int) -> Dataset:
        ts = self.timestamps[start:stop] if self.timestamps is not None else None
        return Dataset(list(self.endo_names), list(self.exo_names),
                       self.endo[:, start:stop].copy(), self.exo[:, start:stop].copy(), ts, dict(self.meta))


def load_csv(path, endo_names: Sequence[str], exo_names: Sequence[str]) -> Dataset:
    """Read a header-first CSV; a ``timestamp``/``date``/``t`` column, if unused, is kept as labels."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        rows = [r for r in reader if r]
    if not rows:
        raise DataError(f"{path}: no data rows")
    index = {name: i for i, name in enumerate(header)}
    for name in list(endo_names) + list(exo_names):
        if name not in index:
            raise DataError(f"{path}: column {name!r} not in header {header}")
    used = list(endo_names) + list(exo_names)
    values = np.empty((len(used), len(rows)))
    for r, row in enumerate(rows):
        for c, name in enumerate(used):
            cell = row[index[name]].strip() if index[name] < len(row) else ""
            try:
                v = float(cell)
            except ValueError:
                raise DataError(f"{path}: row {r + 1}: column {name!r} value {cell!r} is not a number") from None
            if not math.isfinite(v):
                raise DataError(f"{path}: row {r + 1}: column {name!r} value {cell!r} is not finite")
            values[c, r] = v
    ts = None
    for cand in ("timestamp", "date", "time", "t"):
        if cand in index and cand not in used:
            ts = [row[index[cand]] for row in rows]
            break
    n = len(endo_names)
    return Dataset(list(endo_names), list(exo_names), values[:n], values[n:], ts)


def write_csv(ds: Dataset, path) -> None:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t"] + ds.exo_names + ds.endo_names)
        labels = ds.timestamps if ds.timestamps is not None else range(ds.length)
        for i, label in enumerate(labels):
            w.writerow([label] + [repr(float(v)) for v in ds.exo[:, i]] + [repr(float(v)) for v in ds.endo[:, i]])


def split(ds: Dataset, ratios: Sequence[float] = (0.7, 0.1, 0.2)) -> tuple[Dataset, Dataset, Dataset]:
    """Chronological split with boundaries at ``floor(length * cumulative_ratio)``."""
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise DataError(f"split ratios must be three non-negative values summing to 1, got {ratios}")
    n = ds.length
    b1 = math.floor(n * ratios[0] + 1e-9)
    b2 = math.floor(n * (ratios[0] + ratios[1]) + 1e-9)
    parts = [(0, b1), (b1, b2), (b2, n)]
    for label, (a, b) in zip(("train", "val", "test"), parts):
        if b <= a:
            raise DataError(f"split ratios {tuple(ratios)} leave the {label} partition empty")
    return tuple(ds.slice(a, b) for a, b in parts)


@dataclass
class SeriesWindow:
    x_endo: np.ndarray  # (N, T)
    x_exo: np.ndarray  # (D, T)
    y_exo: np.ndarray  # (D, F)
    y_endo: np.ndarray  # (N, F)
    origin_index: int = 0


@dataclass
class Batch:
    """Stacked windows with a leading batch axis."""

    x_endo: np.ndarray  # (B, N, T)
    x_exo: np.ndarray  # (B, D, T)
    y_exo: np.ndarray | None  # (B, D, F)
    y_endo: np.ndarray | None  # (B, N, F)
    origins: np.ndarray | None = None

    @classmethod
    def from_windows(cls, windows: Sequence[SeriesWindow]) -> Batch:
        return cls(
            np.stack([w.x_endo for w in windows]),
            np.stack([w.x_exo for w in windows]),
            np.stack([w.y_exo for w in windows]),
            np.stack([w.y_endo for w in windows]),
            np.array([w.origin_index for w in windows]),
        )

    @classmethod
    def coerce(cls, item) -> Batch:
        if isinstance(item, Batch):
            return item
        if isinstance(item, SeriesWindow):
            return cls.from_windows([item])
        return cls.from_windows(list(item))

    def __len__(self) -> int:
        return self.x_endo.shape[0]


def window_count(length: int, T: int, F: int, stride: int = 1) -> int:
    if length < T + F:
        return 0
    return (length - T - F) // stride + 1


def make_windows(ds: Dataset, T: int, F: int, stride: int = 1) -> list[SeriesWindow]:
    """All windows at origins ``0, stride, 2*stride, ...``; nothing is dropped."""
    if T < 1 or F < 1 or stride < 1:
        raise DataError("T, F and stride must be positive")
    if ds.length < T + F:
        raise DataError(f"series of length {ds.length} is shorter than T+F={T + F}")
    out = []
    for o in range(0, window_count(ds.length, T, F, stride) * stride, stride):
        out.append(SeriesWindow(
            ds.endo[:, o:o + T], ds.exo[:, o:o + T],
            ds.exo[:, o + T:o + T + F], ds.endo[:, o + T:o + T + F], o))
    return out


# -- standardization ----------------------------------------------------------

@dataclass
class ScalerStats:
    endo_mean: np.ndarray
    endo_std: np.ndarray
    exo_mean: np.ndarray
    exo_std: np.ndarray

    def to_dict(self) -> dict:
        return {k: np.asarray(v).tolist() for k, v in vars(self).items()}

    @classmethod
    def from_dict(cls, d: dict) -> ScalerStats:
        return cls(*(np.asarray(d[k], dtype=np.float64) for k in ("endo_mean", "endo_std", "exo_mean", "exo_std")))

    def apply(self, ds: Dataset) -> Dataset:
        return replace(ds, endo=(ds.endo - self.endo_mean[:, None]) / self.endo_std[:, None],
                       exo=(ds.exo - self.exo_mean[:, None]) / self.exo_std[:, None], meta=dict(ds.meta))

    def invert_endo(self, y: np.ndarray) -> np.ndarray:
        """Undo standardization on ``(..., N, F)`` endogenous values."""
        return y * self.endo_std[:, None] + self.endo_mean[:, None]


STD_FLOOR = 1e-8


def fit_scaler(train: Dataset) -> ScalerStats:
    if train.length == 0:
        raise DataError("cannot fit scaler on an empty train split")
    return ScalerStats(train.endo.mean(axis=1), np.maximum(train.endo.std(axis=1), STD_FLOOR),
                       train.exo.mean(axis=1), np.maximum(train.exo.std(axis=1), STD_FLOOR))


def fit_apply_scaler(train: Dataset, *others: Dataset) -> tuple[list[Dataset], ScalerStats]:
    """Standardize every split with statistics of ``train`` only."""
    stats = fit_scaler(train)
    return [stats.apply(d) for d in (train, *others)], stats


# -- masking ------------------------------------------------------------------

class MaskKind(str, Enum):
    ZEROS = "zeros"
    RANDOM = "random"


@dataclass(frozen=True)
class MaskSpec:
    kind: MaskKind = MaskKind.ZEROS
    ratio: float = 0.0
    seed: int = 0
    history_only: bool = False

    def __post_init__(self):
        object.__setattr__(self, "kind", MaskKind(self.kind))
        if not 0.0 <= self.ratio < 1.0:
            raise DataError(f"mask ratio must lie in [0, 1), got {self.ratio}")

    @classmethod
    def parse(cls, text: str) -> MaskSpec:
        """Parse ``kind:ratio:seed``, e.g. ``zeros:0.3:1``."""
        parts = text.split(":")
        if len(parts) != 3:
            raise DataError(f"mask spec must look like kind:ratio:seed, got {text!r}")
        try:
            return cls(MaskKind(parts[0].lower()), float(parts[1]), int(parts[2]))
        except ValueError as exc:
            raise DataError(f"bad mask spec {text!r}: {exc}") from None


def inject_mask(window: SeriesWindow, spec: MaskSpec, rng: np.random.Generator | None = None) -> SeriesWindow:
    """Replace ``round(ratio * count)`` exogenous entries per ``spec.kind``.

    Positions are drawn jointly over ``x_exo`` and ``y_exo`` (history only if
    ``spec.history_only``).  Without an explicit ``rng`` the generator is
    seeded from ``(spec.seed, window.origin_index)``.
    """
    if spec.ratio == 0.0:
        return window
    if rng is None:
        rng = np.random.default_rng([spec.seed, window.origin_index])
    D, T = window.x_exo.shape
    F = window.y_exo.shape[1]
    joint = np.concatenate([window.x_exo, window.y_exo], axis=1).copy()
    cols = T if spec.history_only else T + F
    count = D * cols
    n_mask = math.floor(spec.ratio * count + 0.5)
    flat = rng.choice(count, size=n_mask, replace=False)
    rows, c = np.divmod(flat, cols)
    if spec.kind is MaskKind.ZEROS:
        joint[rows, c] = 0.0
    else:
        joint[rows, c] = rng.standard_normal(n_mask)
    return SeriesWindow(window.x_endo.copy(), joint[:, :T], joint[:, T:], window.y_endo.copy(), window.origin_index)


# -- synthetic benchmark ------------------------------------------------------

@dataclass
class SynthSpec:
    """Exogenous AR(1)+sinusoid channels driving one endogenous channel.

    ``y_t = sum_j coupling[j] * x_j,t + seasonal_amplitude * sin(2 pi t / period) + noise``.
    """

    length: int = 2000
    coupling: list[float] = field(default_factory=lambda: [1.0, -0.6])
    period: float = 24.0
    seasonal_amplitude: float = 1.0
    noise: float = 0.1
    ar_coef: float = 0.8
    exo_amplitude: float = 1.0
    exo_periods: list[float] | None = None

    @property
    def D(self) -> int:
        return len(self.coupling)


def synth_generate(spec: SynthSpec, seed: int = 0) -> Dataset:
    if spec.length <= 0:
        raise DataError(f"synthetic length must be positive, got {spec.length}")
    if spec.D < 1:
        raise DataError("synthetic spec needs at least one exogenous channel")
    if spec.noise < 0:
        raise DataError("noise scale must be non-negative")
    rng = np.random.default_rng(seed)
    n, D = spec.length, spec.D
    t = np.arange(n, dtype=np.float64)
    periods = spec.exo_periods or [spec.period * (j + 2) / 2.0 for j in range(D)]
    if len(periods) != D:
        raise DataError("exo_periods must have one entry per exogenous channel")
    exo = np.empty((D, n))
    for j in range(D):
        innov = rng.standard_normal(n)
        ar = np.empty(n)
        ar[0] = innov[0]
        for i in range(1, n):
            ar[i] = spec.ar_coef * ar[i - 1] + innov[i]
        exo[j] = ar + spec.exo_amplitude * np.sin(2.0 * np.pi * t / periods[j] + j)
    eps = rng.standard_normal(n) * spec.noise if spec.noise > 0 else np.zeros(n)
    y = np.asarray(spec.coupling) @ exo + spec.seasonal_amplitude * np.sin(2.0 * np.pi * t / spec.period) + eps
    meta = {"oracle_mse": spec.noise ** 2, "seed": seed}
    return Dataset(["y"], [f"x{j}" for j in range(D)], y[None, :], exo, [str(i) for i in range(n)], meta)
