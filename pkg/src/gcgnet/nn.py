"""Neural building blocks on top of :mod:`gcgnet.tensor`."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Iterator

import numpy as np

from gcgnet.tensor import Tensor, ShapeError, exp, gelu, matmul, mul, add, mean, sub, slice_axis


class Mode(str, Enum):
    TRAIN = "train"
    EVAL = "eval"


class Module:
    """Minimal parameter container; parameters are discovered by attribute walk."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, value in vars(self).items():
            if key.startswith("_"):
                continue
            name = f"{prefix}{key}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(name + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")
                    elif isinstance(item, Tensor) and item.requires_grad:
                        yield f"{name}.{i}", item

    def parameters(self) -> dict[str, Tensor]:
        return dict(self.named_parameters())

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters().values())

    def zero_grad(self) -> None:
        for p in self.parameters().values():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.parameters().items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = self.parameters()
        missing = set(params) - set(state)
        extra = set(state) - set(params)
        if missing or extra:
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(extra)}")
        for k, p in params.items():
            arr = np.asarray(state[k], dtype=np.float64)
            if arr.size != p.size:
                raise ShapeError(f"parameter {k}: expected {p.size} values, got {arr.size}")
            p.data = arr.reshape(p.shape).copy()


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class Linear(Module):
    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator, bias: bool = True):
        self.in_features = in_features
        self.out_features = out_features
        self.weight = Tensor(glorot(rng, in_features, out_features), requires_grad=True)
        self.bias = Tensor(np.zeros(out_features), requires_grad=True) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.in_features:
            raise ShapeError(f"Linear expects last dim {self.in_features}, got shape {x.shape}")
        y = matmul(x, self.weight)
        return add(y, self.bias) if self.bias is not None else y


class MLP(Module):
    """Linear layers with GELU between them; the last layer has no activation."""

    def __init__(self, widths: list[int], rng: np.random.Generator):
        if len(widths) < 2:
            raise ValueError("MLP needs at least input and output widths")
        self.widths = list(widths)
        self.layers = [Linear(a, b, rng) for a, b in zip(widths[:-1], widths[1:])]

    @property
    def in_features(self) -> int:
        return self.widths[0]

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.in_features:
            raise ShapeError(f"MLP expects last dim {self.in_features}, got shape {x.shape}")
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = gelu(x)
        return x


def vae_hidden_width(latent: int) -> int:
    return max(2 * latent, 32)


class PredictiveVAE(Module):
    """Row-wise VAE mapping length-``in_features`` rows to length-``out_features`` rows.

    The encoder emits ``mean || logvar`` (width ``2 * latent``); rows along all
    leading axes share parameters.
    """

    def __init__(self, in_features: int, out_features: int, latent: int, rng: np.random.Generator):
        hidden = vae_hidden_width(latent)
        self.latent = latent
        self.encoder = MLP([in_features, hidden, 2 * latent], rng)
        self.decoder = MLP([latent, hidden, out_features], rng)

    def __call__(self, x: Tensor, mode: Mode, rng: np.random.Generator | None = None,
                 noise: np.ndarray | None = None) -> tuple[Tensor, Tensor, Tensor]:
        """Return ``(y, mu, logvar)``.

        In train mode the latent is ``mu + exp(logvar / 2) * eps`` with ``eps``
        drawn from ``rng`` (or taken from ``noise``); eval mode uses ``mu``.
        """
        stats = self.encoder(x)
        if not np.all(np.isfinite(stats.data)):
            raise FloatingPointError("VAE encoder produced non-finite values")
        z = self.latent
        mu = slice_axis(stats, 0, z, axis=-1)
        logvar = slice_axis(stats, z, 2 * z, axis=-1)
        if Mode(mode) is Mode.TRAIN:
            if noise is None:
                if rng is None:
                    raise ValueError("train mode needs an rng or explicit noise")
                noise = rng.standard_normal(mu.shape)
            sample = add(mu, mul(exp(mul(logvar, 0.5)), Tensor(noise)))
        else:
            sample = mu
        return self.decoder(sample), mu, logvar


def kl_divergence(mu: Tensor, logvar: Tensor) -> Tensor:
    """Mean over latent entries of KL(N(mu, exp(logvar)) || N(0, 1))."""
    if mu.shape != logvar.shape:
        raise ShapeError(f"kl_divergence shape mismatch: {mu.shape} vs {logvar.shape}")
    terms = sub(add(mul(mu, mu), exp(logvar)), add(logvar, 1.0))
    return mul(mean(terms), 0.5)


# -- instance normalization ---------------------------------------------------

@dataclass
class InstanceNormState:
    mean: np.ndarray  # (..., C, 1)
    std: np.ndarray  # (..., C, 1), already floored at epsilon
    epsilon: float = 1e-5


def instance_norm_fit_apply(x: np.ndarray, epsilon: float = 1e-5) -> tuple[np.ndarray, InstanceNormState]:
    """Per-channel standardization over the last (time) axis.

    ``x`` has shape ``(..., C, T)``; statistics use the population std.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] < 2:
        raise ValueError("instance normalization needs at least 2 time steps")
    mu = x.mean(axis=-1, keepdims=True)
    # second pass removes rounding residue so constant channels center to exactly 0
    mu = mu + (x - mu).mean(axis=-1, keepdims=True)
    std = np.maximum(x.std(axis=-1, keepdims=True), epsilon)
    return (x - mu) / std, InstanceNormState(mu, std, epsilon)


def instance_norm_apply(x: np.ndarray, state: InstanceNormState, channels=slice(None)) -> np.ndarray:
    return (np.asarray(x, dtype=np.float64) - state.mean[..., channels, :]) / state.std[..., channels, :]


def instance_norm_invert(y_norm, state: InstanceNormState, channels=slice(None)):
    """Map normalized rows back to original units: ``y * std + mean``.

    ``channels`` selects which channel statistics to use (e.g. the trailing
    endogenous block).  Accepts a Tensor (differentiable) or an array.
    """
    mu = state.mean[..., channels, :]
    std = state.std[..., channels, :]
    rows = y_norm.shape[-2]
    if mu.shape[-2] != rows:
        raise ShapeError(f"normalization covers {mu.shape[-2]} channels, prediction has {rows}")
    if isinstance(y_norm, Tensor):
        return add(mul(y_norm, std), mu)
    return np.asarray(y_norm) * std + mu


# -- optimizer ----------------------------------------------------------------

@dataclass
class OptimizerState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float | None = 5.0
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


class Adam:
    """Adaptive moment estimation with bias correction and global-norm clipping."""

    def __init__(self, params: dict[str, Tensor], lr: float = 1e-3, betas=(0.9, 0.999),
                 eps: float = 1e-8, clip_norm: float | None = 5.0):
        self.params = params
        self.state = OptimizerState(lr=lr, beta1=betas[0], beta2=betas[1], eps=eps, clip_norm=clip_norm)
        for name, p in params.items():
            self.state.m[name] = np.zeros_like(p.data)
            self.state.v[name] = np.zeros_like(p.data)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self, scale: float = 1.0) -> float:
        """Apply one update; parameters without a gradient are treated as zero-gradient.

        ``scale`` multiplies every gradient first (used to average over a
        batch).  Returns the pre-clipping global gradient norm.
        """
        st = self.state
        grads = {}
        for name, p in self.params.items():
            g = np.zeros_like(p.data) if p.grad is None else p.grad * scale
            if not np.all(np.isfinite(g)):
                raise FloatingPointError(f"non-finite gradient for parameter {name!r}")
            grads[name] = g
        norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))
        if st.clip_norm is not None and norm > st.clip_norm:
            factor = st.clip_norm / norm
            grads = {k: g * factor for k, g in grads.items()}

        st.step += 1
        bc1 = 1.0 - st.beta1 ** st.step
        bc2 = 1.0 - st.beta2 ** st.step
        for name, p in self.params.items():
            g = grads[name]
            m = st.m[name] = st.beta1 * st.m[name] + (1.0 - st.beta1) * g
            v = st.v[name] = st.beta2 * st.v[name] + (1.0 - st.beta2) * g * g
            if st.lr == 0.0:
                continue
            p.data = p.data - st.lr * (m / bc1) / (np.sqrt(v / bc2) + st.eps)
        return norm
