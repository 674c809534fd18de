"""BERT-style masked prediction over discrete speech codes."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from ..numerics import Tensor, ops
from ..numerics.nn import Module, glorot
from ..textproc import MASK_ID, PAD_ID, RESERVED

CODE_OFFSET = len(RESERVED)


@dataclass
class MaskedLmConfig:
    codebook_size: int = 64
    width: int = 128
    blocks: int = 4
    heads: int = 4
    ffn: int = 512
    max_len: int = 1024

    def __post_init__(self):
        if self.width % self.heads:
            raise ValueError("width must be divisible by the number of heads")


def sinusoidal_positions(n: int, width: int) -> np.ndarray:
    pos = np.arange(n)[:, None]
    i = np.arange(0, width, 2)[None, :]
    angle = pos / np.power(10000.0, i / width)
    table = np.zeros((n, width))
    table[:, 0::2] = np.sin(angle)
    table[:, 1::2] = np.cos(angle[:, :width // 2])
    return table


class MaskedLmModel(Module):
    """Pre-norm transformer encoder whose output layer is tied to the code embeddings.

    Token ids: the reserved symbols occupy ``0..4`` and code ``v`` is ``v + 5``.
    The output distribution covers the ``V`` codes only.
    """

    kind = "mlm"

    def __init__(self, config: MaskedLmConfig | None = None, seed: int = 0, zero: bool = False):
        super().__init__()
        self.config = c = config or MaskedLmConfig()
        rng = np.random.default_rng(seed)
        self.add_param("embed", rng.normal(0, 0.02, size=(c.codebook_size + CODE_OFFSET, c.width)))
        for i in range(c.blocks):
            pre = f"block{i}."
            for name in ("ln1", "ln2"):
                self.add_param(pre + name + ".g", np.ones(c.width))
                self.add_param(pre + name + ".b", np.zeros(c.width))
            for name in ("q", "k", "v", "o"):
                self.add_param(pre + f"att.{name}.w", glorot(rng, c.width, c.width))
                self.add_param(pre + f"att.{name}.b", np.zeros(c.width))
            self.add_param(pre + "ffn.w1", glorot(rng, c.width, c.ffn))
            self.add_param(pre + "ffn.b1", np.zeros(c.ffn))
            self.add_param(pre + "ffn.w2", glorot(rng, c.ffn, c.width))
            self.add_param(pre + "ffn.b2", np.zeros(c.width))
        self.add_param("ln.g", np.ones(c.width))
        self.add_param("ln.b", np.zeros(c.width))
        self.add_param("out.b", np.zeros(c.codebook_size))
        if zero:
            self.zero_()
        self._positions = sinusoidal_positions(c.max_len, c.width)

    def descriptor(self) -> dict:
        return {"kind": self.kind, "config": asdict(self.config)}

    def hidden(self, tokens, lengths=None, prefix: str = "") -> Tensor:
        """Final hidden states ``(B, T, width)`` after the closing layer norm.

        ``prefix`` lets a host model that stores these weights under a
        namespace (for example ``enc.mlm.``) reuse this forward pass.
        """
        return mlm_hidden(self.params, self.config, self._positions, tokens, lengths, prefix)

    def logits(self, hidden: Tensor, prefix: str = "") -> Tensor:
        p = self.params
        codes = p[prefix + "embed"][CODE_OFFSET:]
        return ops.add(ops.matmul(hidden, ops.transpose(codes)), p[prefix + "out.b"])


def mlm_hidden(p: dict, c: MaskedLmConfig, positions: np.ndarray, tokens, lengths=None,
               prefix: str = "") -> Tensor:
    tokens = np.asarray(tokens)
    if tokens.ndim == 1:
        tokens = tokens[None]
    B, T = tokens.shape
    if T > c.max_len:
        raise ValueError(f"sequence of {T} tokens exceeds the maximum length {c.max_len}")
    lengths = np.full(B, T) if lengths is None else np.asarray(lengths)
    valid = np.arange(T)[None, :] < lengths[:, None]
    key_mask = valid[:, None, None, :]
    H, dh = c.heads, c.width // c.heads
    x = ops.add(ops.embedding(tokens, p[prefix + "embed"]), positions[:T].astype(p[prefix + "embed"].dtype))
    for i in range(c.blocks):
        pre = f"{prefix}block{i}."
        h = ops.layer_norm(x, p[pre + "ln1.g"], p[pre + "ln1.b"])

        def heads(name):
            y = ops.affine(h, p[pre + f"att.{name}.w"], p[pre + f"att.{name}.b"])
            return ops.transpose(y.reshape(B, T, H, dh), (0, 2, 1, 3))

        q, k, v = heads("q"), heads("k"), heads("v")
        scores = ops.mul(ops.matmul(q, ops.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(dh))
        att = ops.softmax(scores, axis=-1, mask=key_mask)
        ctx = ops.transpose(ops.matmul(att, v), (0, 2, 1, 3)).reshape(B, T, c.width)
        x = ops.add(x, ops.affine(ctx, p[pre + "att.o.w"], p[pre + "att.o.b"]))
        h = ops.layer_norm(x, p[pre + "ln2.g"], p[pre + "ln2.b"])
        h = ops.relu(ops.affine(h, p[pre + "ffn.w1"], p[pre + "ffn.b1"]))
        x = ops.add(x, ops.affine(h, p[pre + "ffn.w2"], p[pre + "ffn.b2"]))
    x = ops.layer_norm(x, p[prefix + "ln.g"], p[prefix + "ln.b"])
    return ops.mul(x, valid[:, :, None].astype(x.dtype))


def mask_batch(codes, mask_prob: float = 0.15, rng: np.random.Generator | None = None, span: int = 1):
    """Select positions with ``rng.random(n) < mask_prob`` and replace them by ``<mask>``.

    ``codes`` are raw code indices in ``[0, V)``.  Returns ``(tokens, targets)``
    where ``tokens`` are model ids (code ``v`` becomes ``v + 5``) and
    ``targets`` holds the original code at selected positions and -1 elsewhere.
    With ``span > 1`` each selected position also masks the ``span - 1``
    positions after it (along the last axis).
    """
    codes = np.asarray(codes)
    if codes.size == 0:
        raise ValueError("cannot mask an empty sequence")
    if span < 1:
        raise ValueError("span must be >= 1")
    rng = rng or np.random.default_rng()
    starts = rng.random(codes.shape) < mask_prob
    selected = starts.copy()
    for shift in range(1, span):
        selected[..., shift:] |= starts[..., :-shift]
    tokens = np.where(selected, MASK_ID, codes + CODE_OFFSET)
    targets = np.where(selected, codes, -1)
    return tokens, targets


def mlm_loss(model: MaskedLmModel, masked, targets, lengths=None, prefix: str = "") -> Tensor:
    """Mean cross-entropy over positions with a target (``targets >= 0``)."""
    targets = np.asarray(targets)
    if targets.ndim == 1:
        targets = targets[None]
    scored = targets >= 0
    if not scored.any():
        raise ValueError("no masked positions; draw the mask again")
    h = model.hidden(masked, lengths, prefix)
    logits = model.logits(h, prefix)
    return ops.cross_entropy(logits, np.where(scored, targets, 0), scored)


def pad_codes(sequences) -> tuple[np.ndarray, np.ndarray]:
    lengths = np.array([len(s) for s in sequences])
    out = np.full((len(sequences), lengths.max()), PAD_ID, dtype=np.int64)
    for i, s in enumerate(sequences):
        out[i, :len(s)] = s
    return out, lengths
