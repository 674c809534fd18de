"""Contrastive future prediction over raw waveforms (wav2vec-style)."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from ..numerics import Tensor, ops
from ..numerics.nn import Module, glorot, uniform


@dataclass
class CpcConfig:
    channels: int = 64
    kernels: tuple[int, ...] = (10, 8, 4, 4, 4)
    strides: tuple[int, ...] = (5, 4, 2, 2, 2)
    agg_layers: int = 3
    agg_kernel: int = 3
    prediction_steps: int = 12
    negatives: int = 10

    def __post_init__(self):
        self.kernels = tuple(self.kernels)
        self.strides = tuple(self.strides)
        if len(self.kernels) != len(self.strides):
            raise ValueError("kernels and strides must have the same length")
        if any(k < s for k, s in zip(self.kernels, self.strides)):
            raise ValueError("every kernel must be at least as wide as its stride")

    @classmethod
    def from_dict(cls, d: dict) -> "CpcConfig":
        return cls(**d)

    @property
    def hop(self) -> int:
        return math.prod(self.strides)

    @property
    def receptive_field(self) -> int:
        """Samples seen by one latent frame."""
        field, jump = 1, 1
        for k, s in zip(self.kernels, self.strides):
            field += (k - 1) * jump
            jump *= s
        return field


class CpcModel(Module):
    """Causal conv encoder, causal conv aggregator and K linear prediction heads.

    Each encoder layer is left-padded by ``kernel - stride`` so that a
    waveform of ``S`` samples yields ``S // hop`` frames and frame ``t`` only
    sees samples before ``(t + 1) * hop``.
    """

    kind = "cpc"

    def __init__(self, config: CpcConfig | None = None, seed: int = 0, zero: bool = False):
        super().__init__()
        self.config = c = config or CpcConfig()
        rng = np.random.default_rng(seed)
        in_ch = 1
        for i, k in enumerate(c.kernels):
            fan_in = k * in_ch
            self.add_param(f"enc.conv{i}.w", uniform(rng, math.sqrt(6.0 / fan_in), (k, in_ch, c.channels)))
            self.add_param(f"enc.conv{i}.b", np.zeros(c.channels))
            in_ch = c.channels
        for i in range(c.agg_layers):
            fan_in = c.agg_kernel * c.channels
            self.add_param(f"agg.conv{i}.w", uniform(rng, math.sqrt(3.0 / fan_in), (c.agg_kernel, c.channels, c.channels)))
            self.add_param(f"agg.conv{i}.b", np.zeros(c.channels))
        for k in range(1, c.prediction_steps + 1):
            self.add_param(f"head{k}.w", glorot(rng, c.channels, c.channels))
            self.add_param(f"head{k}.b", np.zeros(c.channels))
        if zero:
            self.zero_()

    @property
    def feature_dim(self) -> int:
        return self.config.channels

    def descriptor(self) -> dict:
        return {"kind": self.kind, "config": asdict(self.config)}

    def num_frames(self, samples: int) -> int:
        n = samples
        for s in self.config.strides:
            n //= s
        return n

    def heads(self) -> list[tuple[Tensor, Tensor]]:
        return [(self.params[f"head{k}.w"], self.params[f"head{k}.b"])
                for k in range(1, self.config.prediction_steps + 1)]

    def encode(self, wave) -> Tensor:
        """Latents ``(B, T, C)`` for a batch of waveforms ``(B, S)`` (a single ``(S,)`` is promoted)."""
        p, c = self.params, self.config
        x = np.asarray(wave.data if isinstance(wave, Tensor) else wave)
        if x.ndim == 1:
            x = x[None]
        if x.shape[1] < c.hop:
            raise ValueError(f"waveform of {x.shape[1]} samples is shorter than one frame ({c.hop} samples)")
        h = Tensor(x[:, :, None].astype(p["enc.conv0.w"].dtype, copy=False))
        for i, (k, s) in enumerate(zip(c.kernels, c.strides)):
            h = ops.relu(ops.conv1d(h, p[f"enc.conv{i}.w"], p[f"enc.conv{i}.b"], stride=s, padding=(k - s, 0)))
        return h

    def aggregate(self, z: Tensor) -> Tensor:
        p, c = self.params, self.config
        h = z
        for i in range(c.agg_layers):
            h = ops.conv1d(h, p[f"agg.conv{i}.w"], p[f"agg.conv{i}.b"], padding=(c.agg_kernel - 1, 0))
            if i < c.agg_layers - 1:
                h = ops.relu(h)
        return h

    def loss(self, wave, rng: np.random.Generator) -> Tensor:
        z = self.encode(wave)
        return cpc_loss(z, self.aggregate(z), self.heads(), self.config.prediction_steps,
                        self.config.negatives, rng)


def cpc_forward(model: CpcModel, wave) -> tuple[Tensor, Tensor]:
    """``(latents, contexts)``, each ``(T, C)`` for one waveform or ``(B, T, C)`` for a batch."""
    samples = wave.samples if hasattr(wave, "samples") else wave
    samples = np.asarray(samples)
    z = model.encode(samples)
    c = model.aggregate(z)
    if samples.ndim == 1:
        return z[0], c[0]
    return z, c


def sample_negatives(rng: np.random.Generator, batch: int, T: int, K: int, N: int) -> list[np.ndarray]:
    """For each step ``k`` an index array ``(B, T-k, N)`` of frames other than the positive ``i+k``.

    Indices are drawn uniformly from the ``T - 1`` other frames of the same
    sequence, one ``k`` at a time in increasing order.
    """
    out = []
    for k in range(1, K + 1):
        idx = rng.integers(0, T - 1, size=(batch, T - k, N))
        positive = np.arange(k, T)[None, :, None]
        out.append(idx + (idx >= positive))
    return out


def cpc_loss(z: Tensor, c: Tensor, heads, K: int = 12, negatives: int = 10,
             rng: np.random.Generator | None = None, negative_ids=None) -> Tensor:
    """Sigmoid contrastive loss, averaged over every scored sigmoid term.

    For each step ``k``, position ``i`` and negative ``j``::

        -log s(z[i+k] . h_k(c[i])) - sum_j log s(-z[neg_j] . h_k(c[i]))

    The total is divided by ``(1 + N)`` times the number of positives, so an
    uninformative model scores ``ln 2``.  ``z`` and ``c`` are ``(T, C)`` or
    ``(B, T, C)``.
    """
    if z.ndim == 2:
        z, c = z.reshape(1, *z.shape), c.reshape(1, *c.shape)
    B, T, _ = z.shape
    if T <= K:
        raise ValueError(f"sequence of {T} frames is too short for {K} prediction steps")
    if len(heads) < K:
        raise ValueError(f"need {K} prediction heads, got {len(heads)}")
    if negative_ids is None:
        if rng is None:
            raise ValueError("either rng or negative_ids is required")
        negative_ids = sample_negatives(rng, B, T, K, negatives)
    rows = np.arange(B)[:, None, None]
    terms = []
    count = 0
    for k in range(1, K + 1):
        w, b = heads[k - 1]
        pred = ops.affine(c[:, :T - k], w, b)  # (B, T-k, C)
        pos = ops.sum(ops.mul(pred, z[:, k:]), axis=-1)
        zneg = ops.getitem(z, (rows, negative_ids[k - 1]))  # (B, T-k, N, C)
        neg = ops.sum(ops.mul(pred.reshape(B, T - k, 1, -1), zneg), axis=-1)
        terms.append(ops.sum(ops.log_sigmoid(pos)))
        terms.append(ops.sum(ops.log_sigmoid(ops.mul(neg, -1.0))))
        count += B * (T - k) * (1 + negative_ids[k - 1].shape[-1])
    total = terms[0]
    for t in terms[1:]:
        total = ops.add(total, t)
    return ops.mul(total, -1.0 / count)
