"""Central finite-difference checks of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from gcgnet.data import Batch
from gcgnet.model import GCGNet, ModelConfig
from gcgnet.nn import Mode
from gcgnet.tensor import Tensor


def rel_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> np.ndarray:
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / scale


def numeric_grad(f: Callable[[], float], x: Tensor, h: float = 1e-5) -> np.ndarray:
    """Central differences of scalar ``f()`` w.r.t. every entry of ``x.data`` (perturbed in place)."""
    grad = np.zeros_like(x.data)
    flat = x.data.reshape(-1)
    g = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        g[i] = (fp - fm) / (2 * h)
    return grad


def micro_config(**overrides) -> ModelConfig:
    base = dict(N=1, D=1, T=8, F=4, p=4, d=4, z_v=2, z_g=2, gcn_layers=2, sparsity_ratio=0.5)
    base.update(overrides)
    return ModelConfig(**base)


def micro_batch(cfg: ModelConfig, batch_size: int = 2, seed: int = 7) -> Batch:
    rng = np.random.default_rng(seed)
    return Batch(rng.standard_normal((batch_size, cfg.N, cfg.T)), rng.standard_normal((batch_size, cfg.D, cfg.T)),
                 rng.standard_normal((batch_size, cfg.D, cfg.F)), rng.standard_normal((batch_size, cfg.N, cfg.F)))


@dataclass
class GradcheckReport:
    max_rel_error: float
    worst: str
    n_checked: int
    per_param: dict[str, float]


def model_gradcheck(cfg: ModelConfig | None = None, h: float = 1e-5, noise_seed: int = 11) -> GradcheckReport:
    """Compare backprop gradients of ``L_total`` with central differences for every parameter.

    Train mode with a re-seeded noise generator per evaluation, so the
    reparameterization noise is identical across perturbed forwards.
    """
    cfg = micro_config() if cfg is None else cfg
    model = GCGNet(cfg)
    batch = micro_batch(cfg)

    def loss_value() -> float:
        return float(model.forward(batch, Mode.TRAIN, np.random.default_rng(noise_seed)).losses.total.data)

    model.zero_grad()
    model.forward(batch, Mode.TRAIN, np.random.default_rng(noise_seed)).losses.total.backward()
    per_param = {}
    worst, worst_name, n = 0.0, "", 0
    for name, p in model.parameters().items():
        analytic = np.zeros_like(p.data) if p.grad is None else p.grad.copy()
        numeric = numeric_grad(loss_value, p, h)
        err = float(rel_error(analytic, numeric).max())
        per_param[name] = err
        n += p.size
        if err >= worst:
            worst, worst_name = err, name
    return GradcheckReport(worst, worst_name, n, per_param)
