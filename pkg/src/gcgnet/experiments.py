"""Synthetic comparison grid shared by the acceptance suite and ``scripts/``.

One dataset, several seeds; per seed it trains the exo-blind linear baseline,
full GCGNet (with and without future exogenous input) and ablations, and
evaluates test MSE, including zero-masked exogenous inputs.
"""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from gcgnet.baselines import BaselineConfig, LinearForecaster
from gcgnet.data import MaskKind, MaskSpec, SynthSpec, fit_apply_scaler, make_windows, split, synth_generate
from gcgnet.model import GCGNet, ModelConfig
from gcgnet.train import TrainConfig, evaluate, train

log = logging.getLogger(__name__)


@dataclass
class GridConfig:
    synth: SynthSpec = field(default_factory=lambda: SynthSpec(length=2000, coupling=[1.0, -0.6], noise=0.1))
    data_seed: int = 0
    T: int = 48
    F: int = 12
    seeds: tuple[int, ...] = (0, 1, 2)
    epochs: int = 100
    patience: int = 10
    model: dict = field(default_factory=dict)  # ModelConfig overrides, e.g. {"d": 64}
    mask_ratios: tuple[float, ...] = (0.1, 0.3, 0.5)
    variants: tuple[str, ...] = ("b", "d")


@dataclass
class SeedResult:
    seed: int
    linear: float
    full: float
    no_future: float
    variants: dict[str, float]
    masked: dict[float, float]
    seconds: dict[str, float]


def _prepare(cfg: GridConfig):
    ds = synth_generate(cfg.synth, cfg.data_seed)
    parts, _ = fit_apply_scaler(*split(ds))
    return [make_windows(p, cfg.T, cfg.F) for p in parts], ds


def run_seed(cfg: GridConfig, seed: int, windows=None) -> SeedResult:
    if windows is None:
        windows, _ = _prepare(cfg)
    tr, va, te = windows
    D = cfg.synth.D
    tc = TrainConfig(epochs=cfg.epochs, patience=cfg.patience, seed=seed)
    seconds = {}

    def fit(name, model):
        start = time.perf_counter()
        model, _ = train(model, tr, va, tc)
        seconds[name] = time.perf_counter() - start
        log.info("seed %d %s trained in %.1fs", seed, name, seconds[name])
        return model

    def gcg(**kw):
        return GCGNet(ModelConfig(N=1, D=D, T=cfg.T, F=cfg.F, seed=seed, **{**cfg.model, **kw}))

    linear = fit("linear", LinearForecaster(BaselineConfig(N=1, D=D, T=cfg.T, F=cfg.F, seed=seed)))
    full = fit("full", gcg())
    no_future = fit("no_future", gcg(future_exo_available=False))
    variants = {v: evaluate(fit(v, gcg(variant=v)), te).mse for v in cfg.variants}
    masked = {r: evaluate(full, te, mask=MaskSpec(MaskKind.ZEROS, r, seed)).mse for r in cfg.mask_ratios}
    return SeedResult(seed, evaluate(linear, te).mse, evaluate(full, te).mse, evaluate(no_future, te).mse,
                      variants, masked, seconds)


def run_grid(cfg: GridConfig) -> list[SeedResult]:
    windows, _ = _prepare(cfg)
    return [run_seed(cfg, s, windows) for s in cfg.seeds]


def summarize(results: list[SeedResult]) -> dict:
    """Means over seeds plus the per-seed table, as plain Python types."""
    def avg(values):
        return float(np.mean(list(values)))

    variants = results[0].variants.keys()
    ratios = results[0].masked.keys()
    return {
        "mean": {
            "linear": avg(r.linear for r in results),
            "full": avg(r.full for r in results),
            "no_future": avg(r.no_future for r in results),
            **{f"variant_{v}": avg(r.variants[v] for r in results) for v in variants},
            **{f"mask_{k}": avg(r.masked[k] for r in results) for k in ratios},
        },
        "per_seed": [asdict(r) for r in results],
        "max_train_seconds": max(max(r.seconds.values()) for r in results),
    }
