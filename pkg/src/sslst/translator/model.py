"""BiLSTM attention encoder-decoder for ASR and speech translation."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from ..numerics import Tensor, no_grad, ops
from ..numerics.nn import Module, glorot, lstm_weights, uniform
from ..textproc import BOS_ID, EOS_ID, PAD_ID


@dataclass
class DecoderConfig:
    vocab_size: int = 32
    embed_dim: int = 64
    hidden: int = 256
    layers: int = 2
    attention_dim: int = 128


@dataclass
class Seq2SeqConfig:
    input_dim: int = 80
    input_hidden: int = 128
    conv_channels: int = 16
    conv_kernel: int = 3
    encoder_hidden: int = 128
    encoder_layers: int = 3
    decoder: DecoderConfig = field(default_factory=DecoderConfig)

    @classmethod
    def from_dict(cls, d: dict) -> "Seq2SeqConfig":
        d = dict(d)
        d["decoder"] = DecoderConfig(**d.get("decoder", {}))
        return cls(**d)


def reduced_length(n: int) -> int:
    """Frames left after the two stride-2 convolutions."""
    return math.ceil(math.ceil(n / 2) / 2)


@dataclass
class EncoderOutput:
    states: Tensor  # (B, T', C)
    mask: np.ndarray  # (B, T') bool
    keys: Tensor  # (B, T', A) attention projections of the states


@dataclass
class DecoderState:
    h: list
    c: list
    context: Tensor


class EncoderDecoder(Module):
    """Shared attention decoder; subclasses supply ``encode`` and ``encoder_dim``."""

    encoder_dim: int
    dec: DecoderConfig

    def _init_decoder(self, rng: np.random.Generator, zero: bool) -> None:
        d = self.dec
        C = self.encoder_dim
        self.add_param("dec.embed", rng.normal(0, 0.1, size=(d.vocab_size, d.embed_dim)))
        in_size = d.embed_dim + C
        for layer in range(d.layers):
            wx, wh, b = lstm_weights(rng, in_size, d.hidden)
            self.add_param(f"dec.lstm{layer}.wx", wx)
            self.add_param(f"dec.lstm{layer}.wh", wh)
            self.add_param(f"dec.lstm{layer}.b", b)
            in_size = d.hidden
        self.add_param("dec.att.wk", glorot(rng, C, d.attention_dim))
        self.add_param("dec.att.wq", glorot(rng, d.hidden, d.attention_dim))
        self.add_param("dec.att.b", np.zeros(d.attention_dim))
        self.add_param("dec.att.v", uniform(rng, 1.0 / math.sqrt(d.attention_dim), (d.attention_dim, 1)))
        self.add_param("proj.w", glorot(rng, d.hidden + C, d.vocab_size))
        self.add_param("proj.b", np.zeros(d.vocab_size))
        if zero:
            self.zero_()

    # -- encoder side ------------------------------------------------------------

    def encode(self, inputs: np.ndarray, lengths) -> EncoderOutput:
        raise NotImplementedError

    def _with_keys(self, states: Tensor, mask: np.ndarray) -> EncoderOutput:
        p = self.params
        keys = ops.add(ops.affine(states, p["dec.att.wk"]), p["dec.att.b"])
        return EncoderOutput(states, mask, keys)

    # -- decoder side ------------------------------------------------------------

    def initial_state(self, batch: int) -> DecoderState:
        d = self.dec
        dtype = self.params["proj.w"].dtype
        zeros = lambda n: Tensor(np.zeros((batch, n), dtype=dtype))  # noqa: E731
        return DecoderState([zeros(d.hidden) for _ in range(d.layers)],
                            [zeros(d.hidden) for _ in range(d.layers)],
                            zeros(self.encoder_dim))

    def decode_step(self, prev: np.ndarray, state: DecoderState, enc: EncoderOutput):
        """Advance one token; returns ``(features for projection, new state, attention weights)``."""
        p, d = self.params, self.dec
        prev = np.asarray(prev)
        if prev.size and (prev.min() < 0 or prev.max() >= d.vocab_size):
            raise ValueError(f"token id out of vocabulary range [0, {d.vocab_size})")
        x = ops.concat([ops.embedding(prev, p["dec.embed"]), state.context], axis=1)
        hs, cs = [], []
        for layer in range(d.layers):
            hc = ops.lstm_cell(x, state.h[layer], state.c[layer], p[f"dec.lstm{layer}.wx"],
                               p[f"dec.lstm{layer}.wh"], p[f"dec.lstm{layer}.b"])
            h, c = hc[:, :d.hidden], hc[:, d.hidden:]
            hs.append(h)
            cs.append(c)
            x = h
        B = prev.shape[0]
        q = ops.affine(x, p["dec.att.wq"]).reshape(B, 1, d.attention_dim)
        energy = ops.matmul(ops.tanh(ops.add(enc.keys, q)), p["dec.att.v"])  # (B, T', 1)
        weights = ops.softmax(energy.reshape(B, -1), axis=-1, mask=enc.mask)
        context = ops.matmul(weights.reshape(B, 1, -1), enc.states).reshape(B, self.encoder_dim)
        out = ops.concat([x, context], axis=1)
        return out, DecoderState(hs, cs, context), weights

    def project(self, features: Tensor) -> Tensor:
        return ops.affine(features, self.params["proj.w"], self.params["proj.b"])

    def step_logprobs(self, prev, state: DecoderState, enc: EncoderOutput):
        out, state, weights = self.decode_step(prev, state, enc)
        return ops.log_softmax(self.project(out), axis=-1), state, weights

    def loss(self, inputs: np.ndarray, lengths, targets: np.ndarray, target_lengths) -> Tensor:
        """Teacher-forced mean token cross-entropy; ``targets`` end with eos and are padded."""
        enc = self.encode(inputs, lengths)
        B, L = targets.shape
        prev = np.concatenate([np.full((B, 1), BOS_ID), targets[:, :-1]], axis=1)
        state = self.initial_state(B)
        outs = []
        for t in range(L):
            out, state, _ = self.decode_step(prev[:, t], state, enc)
            outs.append(out)
        logits = self.project(ops.stack(outs, axis=1))
        weights = np.arange(L)[None, :] < np.asarray(target_lengths)[:, None]
        return ops.cross_entropy(logits, targets, weights)

    def example_losses(self, inputs, lengths, targets, target_lengths) -> np.ndarray:
        """Per-example mean token loss, without building a tape."""
        with no_grad():
            enc = self.encode(inputs, lengths)
            B, L = targets.shape
            prev = np.concatenate([np.full((B, 1), BOS_ID), targets[:, :-1]], axis=1)
            state = self.initial_state(B)
            total = np.zeros(B)
            valid = np.arange(L)[None, :] < np.asarray(target_lengths)[:, None]
            for t in range(L):
                logp, state, _ = self.step_logprobs(prev[:, t], state, enc)
                total -= logp.data[np.arange(B), targets[:, t]] * valid[:, t]
        return total / valid.sum(axis=1)

    # -- inference ---------------------------------------------------------------

    def scorer(self, inputs: np.ndarray, length: int | None = None) -> tuple["_Scorer", tuple]:
        """Single-utterance incremental scorer for :func:`sslst.decode.beam_search`."""
        with no_grad():
            length = inputs.shape[0] if length is None else length
            enc = self.encode(inputs[None], [length])
        if not enc.mask.any():
            raise ValueError("empty encoder output")
        return _Scorer(self), (enc, self.initial_state(1))

    def greedy_batch(self, inputs: np.ndarray, lengths, max_len: int = 100) -> list[list[int]]:
        with no_grad():
            enc = self.encode(inputs, lengths)
            B = inputs.shape[0]
            state = self.initial_state(B)
            prev = np.full(B, BOS_ID)
            out = np.full((B, max_len), PAD_ID)
            done = np.zeros(B, dtype=bool)
            for t in range(max_len):
                logp, state, _ = self.step_logprobs(prev, state, enc)
                prev = np.argmax(logp.data, axis=1)
                out[:, t] = prev
                done |= prev == EOS_ID
                if done.all():
                    break
        result = []
        for row in out:
            ids = list(row)
            result.append(ids[:ids.index(EOS_ID)] if EOS_ID in ids else ids)
        return result


class _Scorer:
    def __init__(self, model: EncoderDecoder):
        self.model = model
        self.vocab_size = model.dec.vocab_size

    def step(self, tokens, state):
        enc, dstate = state
        if enc.states.shape[0] != len(tokens):
            index = np.zeros(len(tokens), dtype=int)
            enc = _select_enc(enc, index)
            dstate = _select_state(dstate, index)
        with no_grad():
            logp, dstate, _ = self.model.step_logprobs(np.asarray(tokens), dstate, enc)
        return logp.data.astype(np.float64), (enc, dstate)

    def reorder(self, state, index):
        enc, dstate = state
        return _select_enc(enc, index), _select_state(dstate, index)


def _select_enc(enc: EncoderOutput, index) -> EncoderOutput:
    return EncoderOutput(Tensor(enc.states.data[index]), enc.mask[index], Tensor(enc.keys.data[index]))


def _select_state(s: DecoderState, index) -> DecoderState:
    return DecoderState([Tensor(h.data[index]) for h in s.h], [Tensor(c.data[index]) for c in s.c],
                        Tensor(s.context.data[index]))


class Seq2Seq(EncoderDecoder):
    """tanh input layers, two stride-2 2-D convolutions, stacked BiLSTMs, attention decoder."""

    kind = "seq2seq"

    def __init__(self, config: Seq2SeqConfig, seed: int = 0, zero: bool = False):
        super().__init__()
        self.config = config
        self.dec = config.decoder
        self.encoder_dim = 2 * config.encoder_hidden
        rng = np.random.default_rng(seed)
        c = config
        self.add_param("enc.in0.w", glorot(rng, c.input_dim, c.input_hidden))
        self.add_param("enc.in0.b", np.zeros(c.input_hidden))
        self.add_param("enc.in1.w", glorot(rng, c.input_hidden, c.input_hidden))
        self.add_param("enc.in1.b", np.zeros(c.input_hidden))
        k = c.conv_kernel
        in_ch = 1
        for i in range(2):
            fan_in = k * k * in_ch
            self.add_param(f"enc.conv{i}.w", uniform(rng, math.sqrt(6.0 / fan_in), (k, k, in_ch, c.conv_channels)))
            self.add_param(f"enc.conv{i}.b", np.zeros(c.conv_channels))
            in_ch = c.conv_channels
        in_size = self.conv_output_dim
        for layer in range(c.encoder_layers):
            for direction in ("fwd", "bwd"):
                wx, wh, b = lstm_weights(rng, in_size, c.encoder_hidden)
                self.add_param(f"enc.lstm{layer}.{direction}.wx", wx)
                self.add_param(f"enc.lstm{layer}.{direction}.wh", wh)
                self.add_param(f"enc.lstm{layer}.{direction}.b", b)
            in_size = 2 * c.encoder_hidden
        self._init_decoder(rng, zero)

    @property
    def conv_output_dim(self) -> int:
        freq = self.config.input_hidden
        for _ in range(2):
            freq = math.ceil(freq / 2)
        return freq * self.config.conv_channels

    def descriptor(self) -> dict:
        return {"kind": self.kind, "config": asdict(self.config)}

    def encode(self, inputs: np.ndarray, lengths) -> EncoderOutput:
        p, c = self.params, self.config
        inputs = np.asarray(inputs)
        if inputs.ndim != 3 or inputs.shape[2] != c.input_dim:
            raise ValueError(f"expected (B, T, {c.input_dim}) features, got {inputs.shape}")
        B, T, _ = inputs.shape
        lengths = np.asarray(lengths)
        mask = (np.arange(T)[None, :] < lengths[:, None]).astype(inputs.dtype if inputs.dtype.kind == "f" else float)
        x = Tensor(inputs.astype(p["enc.in0.w"].dtype, copy=False))
        x = ops.tanh(ops.affine(x, p["enc.in0.w"], p["enc.in0.b"]))
        x = ops.tanh(ops.affine(x, p["enc.in1.w"], p["enc.in1.b"]))
        x = ops.mul(x, mask[:, :, None]).reshape(B, T, c.input_hidden, 1)
        pad = c.conv_kernel // 2
        for i in range(2):
            x = ops.relu(ops.conv2d(x, p[f"enc.conv{i}.w"], p[f"enc.conv{i}.b"], stride=(2, 2), padding=(pad, pad)))
            lengths = -(-lengths // 2)
            T = x.shape[1]
            mask = (np.arange(T)[None, :] < lengths[:, None]).astype(mask.dtype)
            x = ops.mul(x, mask[:, :, None, None])
        x = x.reshape(B, T, -1)
        for layer in range(c.encoder_layers):
            outs = []
            for direction in ("fwd", "bwd"):
                pre = f"enc.lstm{layer}.{direction}"
                outs.append(ops.lstm_sequence(x, p[pre + ".wx"], p[pre + ".wh"], p[pre + ".b"],
                                              mask=mask, reverse=direction == "bwd"))
            x = ops.concat(outs, axis=2)
        return self._with_keys(x, mask.astype(bool))
