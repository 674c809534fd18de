"""Attention decoder on top of a pretrained masked-LM encoder over speech codes."""
from __future__ import annotations

from dataclasses import asdict

import numpy as np

from ..numerics import Schedule, ops
from ..numerics.nn import glorot
from ..ssl.mlm import CODE_OFFSET, MaskedLmConfig, MaskedLmModel, mlm_hidden, sinusoidal_positions
from ..textproc import PAD_ID
from .model import DecoderConfig, EncoderDecoder, EncoderOutput

HYBRID_PEAK_LR = 5e-5


def hybrid_schedule(total: int, warmup: int = 0) -> Schedule:
    return Schedule("polynomial", HYBRID_PEAK_LR, warmup, total)


class HybridModel(EncoderDecoder):
    """Masked-LM encoder (``enc.mlm.*``), affine bridge (``enc.bridge.*``) and the shared decoder.

    Inputs are raw code sequences ``(B, T)`` with values in ``[0, V)``.
    """

    kind = "hybrid"

    def __init__(self, mlm_config: MaskedLmConfig, decoder: DecoderConfig, seed: int = 0,
                 freeze_encoder: bool = False):
        super().__init__()
        self.mlm_config = mlm_config
        self.dec = decoder
        self.freeze_encoder = freeze_encoder
        self.encoder_dim = decoder.attention_dim
        rng = np.random.default_rng(seed)
        for name, value in MaskedLmModel(mlm_config, zero=True).state_dict().items():
            self.add_param("enc.mlm." + name, value).requires_grad = not freeze_encoder
        self.add_param("enc.bridge.w", glorot(rng, mlm_config.width, self.encoder_dim))
        self.add_param("enc.bridge.b", np.zeros(self.encoder_dim))
        self._init_decoder(rng, zero=False)
        self._positions = sinusoidal_positions(mlm_config.max_len, mlm_config.width)

    def descriptor(self) -> dict:
        return {"kind": self.kind, "mlm": asdict(self.mlm_config), "decoder": asdict(self.dec),
                "freeze_encoder": self.freeze_encoder}

    @classmethod
    def from_descriptor(cls, d: dict) -> "HybridModel":
        return cls(MaskedLmConfig(**d["mlm"]), DecoderConfig(**d["decoder"]),
                   freeze_encoder=d.get("freeze_encoder", False))

    def encode(self, inputs: np.ndarray, lengths) -> EncoderOutput:
        codes = np.asarray(inputs)
        if codes.ndim != 2 or codes.dtype.kind not in "iu":
            raise ValueError(f"expected (B, T) integer code ids, got {codes.shape} {codes.dtype}")
        B, T = codes.shape
        lengths = np.asarray(lengths)
        valid = np.arange(T)[None, :] < lengths[:, None]
        if (codes[valid] < 0).any() or (codes[valid] >= self.mlm_config.codebook_size).any():
            raise ValueError(f"code ids must lie in [0, {self.mlm_config.codebook_size})")
        tokens = np.where(valid, codes + CODE_OFFSET, PAD_ID)
        h = mlm_hidden(self.params, self.mlm_config, self._positions, tokens, lengths, prefix="enc.mlm.")
        states = ops.tanh(ops.affine(h, self.params["enc.bridge.w"], self.params["enc.bridge.b"]))
        states = ops.mul(states, valid[:, :, None].astype(states.dtype))
        return self._with_keys(states, valid)


def build_hybrid(mlm_checkpoint, decoder: DecoderConfig, seed: int = 0, freeze_encoder: bool = False) -> HybridModel:
    """Hybrid whose encoder tensors are exact copies of a masked-LM checkpoint's."""
    if mlm_checkpoint.kind != "mlm":
        raise ValueError(f"expected a masked-LM checkpoint, got kind {mlm_checkpoint.kind!r}")
    model = HybridModel(MaskedLmConfig(**mlm_checkpoint.descriptor["config"]), decoder, seed, freeze_encoder)
    for name, value in mlm_checkpoint.tensors.items():
        target = model.params["enc.mlm." + name]
        if target.shape != value.shape:
            raise ValueError(f"tensor {name!r}: checkpoint shape {value.shape} vs model {target.shape}")
        target.data = value.copy()
    return model
