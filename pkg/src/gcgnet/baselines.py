"""Reference forecasters: an exo-blind linear model and an MLP fusion wrapper."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from gcgnet.data import Batch
from gcgnet.model import GCGNet, Losses, ModelConfig
from gcgnet.nn import MLP, Linear, Mode, Module, instance_norm_fit_apply, instance_norm_invert
from gcgnet.tensor import ShapeError, Tensor, concat, l1_loss


@dataclass
class BaselineConfig:
    N: int = 1
    D: int = 1
    T: int = 96
    F: int = 24
    fusion_hidden: int = 64
    future_exo_available: bool = True
    denormalize: bool = True
    norm_eps: float = 1e-5
    seed: int = 0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> BaselineConfig:
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


@dataclass
class BaselineOutput:
    y_hat: Tensor
    losses: Losses


def _losses(y_hat: Tensor, y_endo) -> Losses:
    zero = Tensor(0.0)
    l_f = l1_loss(y_hat, Tensor(y_endo)) if y_endo is not None else zero
    return Losses(l_f, zero, zero, zero, l_f)


class LinearForecaster(Module):
    """One ``T -> F`` linear map shared by all endogenous channels."""

    kind = "linear"

    def __init__(self, config: BaselineConfig, rng: np.random.Generator | None = None):
        self.config = config
        rng = np.random.default_rng(config.seed) if rng is None else rng
        self.linear = Linear(config.T, config.F, rng)

    def forecast(self, batch) -> Tensor:
        c = self.config
        batch = Batch.coerce(batch)
        if batch.x_endo.shape[1:] != (c.N, c.T):
            raise ShapeError(f"x_endo has shape {batch.x_endo.shape[1:]}, expected {(c.N, c.T)}")
        x_norm, state = instance_norm_fit_apply(batch.x_endo, c.norm_eps)
        y = self.linear(Tensor(x_norm))
        return instance_norm_invert(y, state) if c.denormalize else y

    def forward(self, batch, mode: Mode = Mode.EVAL, rng=None) -> BaselineOutput:
        batch = Batch.coerce(batch)
        y_hat = self.forecast(batch)
        return BaselineOutput(y_hat, _losses(y_hat, batch.y_endo))

    __call__ = forward

    def predict(self, batch) -> np.ndarray:
        return self.forecast(batch).data


class FusionWrapper(Module):
    """Inner forecast ``z`` per endogenous channel, concatenated with flattened future exo, then an MLP."""

    kind = "fusion"

    def __init__(self, config: BaselineConfig, rng: np.random.Generator | None = None, inner=None):
        self.config = config
        rng = np.random.default_rng(config.seed) if rng is None else rng
        self.inner = inner if inner is not None else LinearForecaster(config, rng)
        c = config
        self.fusion = MLP([c.F + c.D * c.F, c.fusion_hidden, c.F], rng)

    def forecast(self, batch) -> Tensor:
        c = self.config
        batch = Batch.coerce(batch)
        z = self.inner.forecast(batch)
        if not c.future_exo_available:
            return z
        if batch.y_exo is None:
            raise ValueError("fusion forecast needs future exogenous values")
        B = z.shape[0]
        exo = np.broadcast_to(batch.y_exo.reshape(B, 1, c.D * c.F), (B, c.N, c.D * c.F))
        return self.fusion(concat([z, Tensor(exo)], axis=-1))

    def forward(self, batch, mode: Mode = Mode.EVAL, rng=None) -> BaselineOutput:
        batch = Batch.coerce(batch)
        y_hat = self.forecast(batch)
        return BaselineOutput(y_hat, _losses(y_hat, batch.y_endo))

    __call__ = forward

    def predict(self, batch) -> np.ndarray:
        return self.forecast(batch).data


def build_from_meta(kind: str, config: dict):
    if kind == GCGNet.kind:
        return GCGNet(ModelConfig.from_dict(config))
    if kind == LinearForecaster.kind:
        return LinearForecaster(BaselineConfig.from_dict(config))
    if kind == FusionWrapper.kind:
        return FusionWrapper(BaselineConfig.from_dict(config))
    raise ValueError(f"unknown model kind {kind!r}")
