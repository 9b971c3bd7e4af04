"""GCGNet: variational generator, graph structure aligner and graph refiner.

Tensors carry a leading batch axis ``B``.  Full sequences are laid out with
the ``D`` exogenous rows first and the ``N`` endogenous rows last; patch
nodes in channel-patch mode are indexed ``channel * L + patch``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields, replace
from enum import Enum

import numpy as np

from gcgnet.data import Batch, SeriesWindow
from gcgnet.nn import (
    Linear, MLP, Mode, Module, PredictiveVAE, instance_norm_apply, instance_norm_fit_apply,
    instance_norm_invert, kl_divergence, vae_hidden_width,
)
from gcgnet.tensor import (
    ShapeError, Tensor, abs_, add, concat, div, gelu, l1_loss, matmul, mul, pad_last, reshape, slice_axis,
    sum_, swapaxes,
)


class NodeMode(str, Enum):
    CHANNEL_PATCH = "channel_patch"
    TEMPORAL_ONLY = "temporal_only"


class HeadMode(str, Enum):
    PER_CHANNEL = "per_channel"
    FULL_FLATTEN = "full_flatten"


VARIANTS = ("full", "a", "b", "c", "d")


@dataclass
class ModelConfig:
    N: int = 1
    D: int = 1
    T: int = 96
    F: int = 24
    p: int = 16
    d: int = 64
    z_v: int = 16
    z_g: int = 16
    gcn_layers: int = 2
    sparsity_ratio: float = 0.5
    node_mode: NodeMode = NodeMode.CHANNEL_PATCH
    head_mode: HeadMode = HeadMode.PER_CHANNEL
    future_exo_available: bool = True
    separate_exo_vae: bool = False
    stop_truth_grad: bool = False
    kl_g_both_branches: bool = True
    denormalize: bool = True
    variant: str = "full"
    norm_eps: float = 1e-5
    seed: int = 0

    def __post_init__(self):
        self.node_mode = NodeMode(self.node_mode)
        self.head_mode = HeadMode(self.head_mode)
        for name in ("N", "D", "T", "F", "p", "d", "z_v", "z_g", "gcn_layers"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"ModelConfig.{name} must be >= 1")
        if self.T < 2:
            raise ValueError("ModelConfig.T must be >= 2 for instance normalization")
        if not 0.0 < self.sparsity_ratio <= 1.0:
            raise ValueError(f"sparsity_ratio must be in (0, 1], got {self.sparsity_ratio}")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown ablation variant {self.variant!r}; expected one of {VARIANTS}")

    @property
    def L(self) -> int:
        return math.ceil((self.T + self.F) / self.p)

    @property
    def C(self) -> int:
        return self.N + self.D

    @property
    def M(self) -> int:
        return self.C * self.L if self.node_mode is NodeMode.CHANNEL_PATCH else self.L

    @property
    def topk(self) -> int:
        return max(1, math.ceil(self.sparsity_ratio * self.M))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["node_mode"] = self.node_mode.value
        d["head_mode"] = self.head_mode.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> ModelConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown ModelConfig keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class AdjacencyGraph:
    weights: Tensor  # (B, M, M)
    symmetric: bool
    node_mode: NodeMode

    @property
    def M(self) -> int:
        return self.weights.shape[-1]


@dataclass
class Losses:
    l_f: Tensor
    l_align: Tensor
    kl_v: Tensor
    kl_g: Tensor
    total: Tensor

    def as_floats(self) -> dict[str, float]:
        return {k: float(getattr(self, k).data) for k in ("l_f", "l_align", "kl_v", "kl_g", "total")}


@dataclass
class ForwardOutput:
    y_hat: Tensor  # (B, N, F)
    coarse_y: Tensor  # (B, N, F)
    coarse_exo: Tensor | None
    losses: Losses
    adjacency_generated: AdjacencyGraph
    adjacency_truth: AdjacencyGraph | None = None
    adjacency_raw: AdjacencyGraph | None = None


def _zero() -> Tensor:
    return Tensor(0.0)


def symmetrize(a: Tensor) -> Tensor:
    return mul(add(a, swapaxes(a, -1, -2)), 0.5)


def topk_mask(weights: np.ndarray, k: int) -> np.ndarray:
    """Boolean mask of the ``k`` largest entries in each row; ties go to lower column index."""
    M = weights.shape[-1]
    k = min(k, M)
    order = np.argsort(-weights, axis=-1, kind="stable")[..., :k]
    mask = np.zeros(weights.shape, dtype=bool)
    np.put_along_axis(mask, order, True, axis=-1)
    return mask


def sparsify_topk(a: AdjacencyGraph, ratio: float) -> AdjacencyGraph:
    """Keep the ``max(1, ceil(ratio * M))`` largest weights per row; the mask is constant."""
    if not 0.0 < ratio <= 1.0:
        raise ValueError(f"sparsity ratio must be in (0, 1], got {ratio}")
    k = max(1, math.ceil(ratio * a.M))
    if k >= a.M:
        return AdjacencyGraph(a.weights, a.symmetric, a.node_mode)
    mask = topk_mask(a.weights.data, k).astype(np.float64)
    return AdjacencyGraph(mul(a.weights, mask), False, a.node_mode)


def row_normalize_with_self_loops(a_s: Tensor) -> Tensor:
    """``(A + I) / (sum_j |A_ij| + 1)`` row-wise; safe for signed weights."""
    M = a_s.shape[-1]
    denom = add(sum_(abs_(a_s), axis=-1, keepdims=True), 1.0)
    return div(add(a_s, np.eye(M)), denom)


class GCNLayer(Module):
    def __init__(self, d: int, rng: np.random.Generator):
        self.lin = Linear(d, d, rng, bias=False)

    def __call__(self, h: Tensor, a_norm: Tensor) -> Tensor:
        return add(h, gelu(self.lin(matmul(a_norm, h))))


class GCGNet(Module):
    """Full model; ``config.variant`` selects an ablation ('full', 'a'-'d')."""

    kind = "gcgnet"

    def __init__(self, config: ModelConfig, rng: np.random.Generator | None = None):
        self.config = config
        rng = np.random.default_rng(config.seed) if rng is None else rng
        c = config
        if c.variant == "a":
            hidden = vae_hidden_width(c.z_v)
            self.generator = MLP([c.T, hidden, 2 * c.z_v, hidden, c.F], rng)
        else:
            self.generator = PredictiveVAE(c.T, c.F, c.z_v, rng)
        self.exo_generator = None
        if c.separate_exo_vae:
            if c.variant == "a":
                hidden = vae_hidden_width(c.z_v)
                self.exo_generator = MLP([c.T, hidden, 2 * c.z_v, hidden, c.F], rng)
            else:
                self.exo_generator = PredictiveVAE(c.T, c.F, c.z_v, rng)
        self.embedding = Linear(c.p, c.d, rng)
        self.w_query = Linear(c.d, c.d, rng, bias=False)
        self.w_key = Linear(c.d, c.d, rng, bias=False)
        self.graph_vae = PredictiveVAE(c.M, c.M, c.z_g, rng) if c.variant != "c" else None
        self.gcn = [GCNLayer(c.d, rng) for _ in range(c.gcn_layers)]
        if c.head_mode is HeadMode.PER_CHANNEL:
            self.head = Linear(c.L * c.d, c.F, rng)
        else:
            self.head = Linear(c.C * c.L * c.d, c.N * c.F, rng)

    # -- generator --------------------------------------------------------
    def _run_generator(self, gen, x: Tensor, mode: Mode, rng):
        if isinstance(gen, PredictiveVAE):
            return gen(x, mode, rng)
        return gen(x), None, None

    def generate_coarse(self, x_endo: Tensor, x_exo: Tensor, y_exo: Tensor | None, mode: Mode,
                        rng: np.random.Generator | None):
        """Coarse forecasts and the generated full sequence ``(B, D+N, T+F)``.

        Returns ``(s_tilde, kl_v, coarse_y, coarse_exo)``; ``coarse_exo`` is
        None when the observed future exogenous block is passed through.
        """
        c = self.config
        use_future = c.future_exo_available
        if use_future and y_exo is None:
            raise ValueError("future_exo_available is set but y_exo was not supplied")
        stats = []
        coarse_exo = None
        if use_future:
            coarse_y, mu, lv = self._run_generator(self.generator, x_endo, mode, rng)
            stats.append((mu, lv))
            z_block = y_exo
        elif self.exo_generator is not None:
            coarse_y, mu, lv = self._run_generator(self.generator, x_endo, mode, rng)
            coarse_exo, mu2, lv2 = self._run_generator(self.exo_generator, x_exo, mode, rng)
            stats += [(mu, lv), (mu2, lv2)]
            z_block = coarse_exo
        else:
            # one shared pass over all channel rows
            rows = concat([x_exo, x_endo], axis=-2)
            out, mu, lv = self._run_generator(self.generator, rows, mode, rng)
            stats.append((mu, lv))
            coarse_exo = slice_axis(out, 0, c.D, axis=-2)
            coarse_y = slice_axis(out, c.D, c.C, axis=-2)
            z_block = coarse_exo
        if stats[0][0] is None:
            kl_v = _zero()
        elif len(stats) == 1:
            kl_v = kl_divergence(*stats[0])
        else:
            mus = concat([s[0] for s in stats], axis=-2)
            lvs = concat([s[1] for s in stats], axis=-2)
            kl_v = kl_divergence(mus, lvs)
        s_tilde = concat([concat([x_exo, z_block], axis=-1), concat([x_endo, coarse_y], axis=-1)], axis=-2)
        return s_tilde, kl_v, coarse_y, coarse_exo

    # -- aligner ----------------------------------------------------------
    def patch_embed(self, s: Tensor) -> Tensor:
        """``(B, C, T+F)`` -> ``(B, C, L, d)`` with right zero-padding of the last patch."""
        c = self.config
        B, C, length = s.shape
        padded = pad_last(s, c.L * c.p - length)
        patches = reshape(padded, (B, C, c.L, c.p))
        return self.embedding(patches)

    def compute_raw_adjacency(self, x_p: Tensor) -> AdjacencyGraph:
        c = self.config
        B = x_p.shape[0]
        q = self.w_query(x_p)
        k = self.w_key(x_p)
        if c.node_mode is NodeMode.CHANNEL_PATCH:
            q = reshape(q, (B, c.C * c.L, c.d))
            k = reshape(k, (B, c.C * c.L, c.d))
            scores = matmul(q, swapaxes(k, -1, -2))
        else:
            scores = matmul(q, swapaxes(k, -1, -2)).mean(axis=1)
        return AdjacencyGraph(symmetrize(gelu(scores)), True, c.node_mode)

    def graph_vae_forward(self, a_tilde: AdjacencyGraph, mode: Mode, rng, noise: np.ndarray | None = None):
        """Row-wise shared VAE over the adjacency, re-symmetrized; returns ``(graph, kl_g)``."""
        if self.graph_vae is None:
            return a_tilde, _zero()
        if a_tilde.M != self.config.M:
            raise ShapeError(f"graph VAE expects {self.config.M} nodes, got {a_tilde.M}")
        rows, mu, lv = self.graph_vae(a_tilde.weights, mode, rng, noise)
        return AdjacencyGraph(symmetrize(rows), True, a_tilde.node_mode), kl_divergence(mu, lv)

    # -- refiner ----------------------------------------------------------
    def gcn_refine(self, s_tilde_p: Tensor, a_s: AdjacencyGraph) -> Tensor:
        c = self.config
        B = s_tilde_p.shape[0]
        if a_s.M != c.M:
            raise ShapeError(f"adjacency has {a_s.M} nodes, expected {c.M}")
        a_norm = row_normalize_with_self_loops(a_s.weights)
        if c.node_mode is NodeMode.CHANNEL_PATCH:
            h = reshape(s_tilde_p, (B, c.M, c.d))
        else:
            h = s_tilde_p
            a_norm = reshape(a_norm, (B, 1, c.L, c.L))
        for layer in self.gcn:
            h = layer(h, a_norm)
        return reshape(h, (B, c.C, c.L, c.d))

    def predict_head(self, h: Tensor) -> Tensor:
        c = self.config
        B = h.shape[0]
        if c.head_mode is HeadMode.PER_CHANNEL:
            endo = slice_axis(h, c.D, c.C, axis=1)
            return self.head(reshape(endo, (B, c.N, c.L * c.d)))
        flat = reshape(h, (B, c.C * c.L * c.d))
        return reshape(self.head(flat), (B, c.N, c.F))

    # -- full pass --------------------------------------------------------
    def forward(self, batch, mode: Mode = Mode.EVAL, rng: np.random.Generator | None = None, *,
                truth_as_generated: bool = False, clamp_to_target: bool = False) -> ForwardOutput:
        """Run the whole network on a window or batch.

        ``truth_as_generated`` and ``clamp_to_target`` are test hooks: the
        first feeds the ground-truth sequence through the generated branch,
        the second replaces the forecast by the target before the loss.
        """
        c = self.config
        mode = Mode(mode)
        batch = Batch.coerce(batch)
        self._check_shapes(batch)
        train = mode is Mode.TRAIN
        if train and batch.y_endo is None:
            raise ValueError("train mode needs y_endo")
        if train and rng is None:
            raise ValueError("train mode needs an rng")

        history = np.concatenate([batch.x_exo, batch.x_endo], axis=1)
        hist_norm, norm_state = instance_norm_fit_apply(history, c.norm_eps)
        x_exo = Tensor(hist_norm[:, :c.D])
        x_endo = Tensor(hist_norm[:, c.D:])
        y_exo = Tensor(instance_norm_apply(batch.y_exo, norm_state, slice(0, c.D))) if batch.y_exo is not None else None
        y_endo_norm = (Tensor(instance_norm_apply(batch.y_endo, norm_state, slice(c.D, c.C)))
                       if batch.y_endo is not None else None)

        s_tilde, kl_v, coarse_y, coarse_exo = self.generate_coarse(
            x_endo, x_exo, y_exo if c.future_exo_available else None, mode, rng)

        s_truth = None
        if batch.y_endo is not None and batch.y_exo is not None:
            s_truth = concat([concat([x_exo, y_exo], axis=-1), concat([x_endo, y_endo_norm], axis=-1)], axis=-2)
        if truth_as_generated:
            if s_truth is None:
                raise ValueError("truth_as_generated needs y_exo and y_endo")
            s_tilde = s_truth

        s_tilde_p = self.patch_embed(s_tilde)
        a_raw = self.compute_raw_adjacency(s_tilde_p)
        graph_noise = None
        if train and self.graph_vae is not None:
            # both branches see the same latent noise, so equal inputs give equal graphs
            graph_noise = rng.standard_normal((len(batch), c.M, c.z_g))
        a_hat, kl_g = self.graph_vae_forward(a_raw, mode, rng, graph_noise)

        align_on = c.variant != "b"
        a_truth = None
        l_align = _zero()
        if train and align_on and s_truth is not None:
            s_p = self.patch_embed(s_truth)
            a_truth, kl_g_truth = self.graph_vae_forward(self.compute_raw_adjacency(s_p), mode, rng, graph_noise)
            if c.stop_truth_grad:
                a_truth = AdjacencyGraph(a_truth.weights.detach(), True, a_truth.node_mode)
            l_align = l1_loss(a_truth.weights, a_hat.weights)
            if c.kl_g_both_branches and self.graph_vae is not None:
                kl_g = mul(add(kl_g, kl_g_truth), 0.5)

        def denorm(y):
            return instance_norm_invert(y, norm_state, slice(c.D, c.C)) if c.denormalize else y

        coarse_out = denorm(coarse_y)
        if c.variant == "d":
            y_hat = coarse_out
        else:
            a_s = sparsify_topk(a_hat, c.sparsity_ratio)
            h = self.gcn_refine(s_tilde_p, a_s)
            y_hat = denorm(self.predict_head(h))

        if clamp_to_target and batch.y_endo is not None:
            y_hat = Tensor(batch.y_endo)

        l_f = l1_loss(y_hat, Tensor(batch.y_endo)) if batch.y_endo is not None else _zero()
        total = add(add(add(l_f, l_align), kl_v), kl_g)
        losses = Losses(l_f, l_align, kl_v, kl_g, total)
        exo_out = None
        if coarse_exo is not None:
            exo_out = instance_norm_invert(coarse_exo, norm_state, slice(0, c.D)) if c.denormalize else coarse_exo
        return ForwardOutput(y_hat, coarse_out, exo_out, losses, a_hat, a_truth, a_raw)

    __call__ = forward

    def predict(self, batch) -> np.ndarray:
        return self.forward(batch, Mode.EVAL).y_hat.data

    def _check_shapes(self, b: Batch) -> None:
        c = self.config
        expect = {"x_endo": (c.N, c.T), "x_exo": (c.D, c.T), "y_exo": (c.D, c.F), "y_endo": (c.N, c.F)}
        for name, shape in expect.items():
            arr = getattr(b, name)
            if arr is not None and arr.shape[1:] != shape:
                raise ShapeError(f"{name} has shape {arr.shape[1:]}, model expects {shape}")
        if c.future_exo_available and b.y_exo is None:
            raise ValueError("model uses future exogenous values but the batch has no y_exo")


def build_ablation(variant: str, config: ModelConfig, rng: np.random.Generator | None = None) -> GCGNet:
    """(a) MLP generator, (b) no alignment loss, (c) no Graph VAE, (d) no refiner."""
    variant = variant.lower()
    if variant not in VARIANTS:
        raise ValueError(f"unknown ablation variant {variant!r}; expected one of {VARIANTS}")
    return GCGNet(replace(config, variant=variant), rng)
