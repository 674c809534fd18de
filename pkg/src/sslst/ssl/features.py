"""Self-supervised pretraining loops, frozen feature extraction and unsupervised fine-tuning."""
from __future__ import annotations

import copy
import logging
import time
from typing import Sequence

import numpy as np

from ..audio import FeatureSequence, Waveform, logmel
from ..numerics import Adam, Schedule, backward, no_grad
from ..numerics.nn import Module
from .cpc import CpcModel
from .mlm import MaskedLmModel, mask_batch, mlm_loss, pad_codes
from .quantizer import VqModel, assign_codes, kmeans_fit

log = logging.getLogger(__name__)

FEATURE_KINDS = {"fbank": "log-mel", "cpc": "cpc-context", "vq": "vq-embedding", "mlm": "mlm-context"}


def _samples(w) -> np.ndarray:
    return np.asarray(w.samples if isinstance(w, Waveform) else w, dtype=np.float64)


def random_crops(waves: Sequence, batch: int, crop: int, rng: np.random.Generator) -> np.ndarray:
    """``batch`` windows of ``crop`` samples from randomly chosen waveforms (short ones are zero-padded)."""
    out = np.zeros((batch, crop))
    for i, j in enumerate(rng.integers(0, len(waves), size=batch)):
        s = _samples(waves[j])
        if len(s) <= crop:
            out[i, :len(s)] = s
        else:
            start = rng.integers(0, len(s) - crop + 1)
            out[i] = s[start:start + crop]
    return out


def _update(model: Module, optimizer: Adam, loss, lr: float) -> float:
    trainable = [p for p in model.params.values() if p.requires_grad]
    grads = backward(loss, trainable)
    optimizer.step({k: grads[id(p)] for k, p in model.params.items() if id(p) in grads}, lr)
    return float(loss.data)


def train_contrastive(model: CpcModel, waves: Sequence, steps: int, schedule: Schedule,
                      batch: int = 8, crop: int = 8000, seed: int = 0, metrics_log=None) -> list[float]:
    """Minimise the model's contrastive loss on random crops; returns per-step losses."""
    if not waves:
        raise ValueError("empty corpus")
    rng = np.random.default_rng(seed)
    optimizer = Adam(model.params, clip_norm=5.0)
    losses = []
    start = time.time()
    for step in range(steps):
        x = random_crops(waves, batch, crop, rng)
        lr = schedule(step)
        losses.append(_update(model, optimizer, model.loss(x, rng), lr))
        if metrics_log is not None:
            metrics_log.write(f"step={step + 1}\tloss={losses[-1]:.6f}\tlr={lr:.3e}\twall={time.time() - start:.2f}\n")
    return losses


def contrastive_eval(model: CpcModel, waves: Sequence, seed: int = 0, crop: int = 8000) -> float:
    """Mean contrastive loss over fixed crops of every waveform (deterministic given ``seed``)."""
    rng = np.random.default_rng(seed)
    values = []
    with no_grad():
        for w in waves:
            x = random_crops([w], 1, crop, rng)
            values.append(float(model.loss(x, rng).data))
    return float(np.mean(values))


def encoder_latents(model: CpcModel, waves: Sequence) -> np.ndarray:
    with no_grad():
        return np.concatenate([model.encode(_samples(w)).data[0] for w in waves])


def train_vq(cpc: CpcModel, waves: Sequence, codebook_size: int = 64, iters: int = 25, seed: int = 0,
             steps: int = 0, schedule: Schedule | None = None, **kwargs) -> VqModel:
    """k-means on the CPC encoder's latents, then optional contrastive training through the quantizer."""
    latents = encoder_latents(cpc, waves)
    fit = kmeans_fit(latents, codebook_size, iters, np.random.default_rng(seed))
    log.info("k-means distortion %.4f -> %.4f", fit.distortions[0], fit.distortions[-1])
    vq = VqModel.from_cpc(cpc, fit.codebook)
    if steps:
        train_contrastive(vq, waves, steps, schedule or Schedule("fixed", 1e-4), seed=seed, **kwargs)
    return vq


def code_sequences(vq: VqModel, waves: Sequence) -> list[np.ndarray]:
    with no_grad():
        return [vq.codes(_samples(w))[0] for w in waves]


def mask_padded(sequences: Sequence[np.ndarray], mask_prob: float, rng: np.random.Generator, span: int = 1):
    """Mask each sequence independently and pad; at least one position is masked per batch."""
    while True:
        tokens, targets = [], []
        for s in sequences:
            t, y = mask_batch(s, mask_prob, rng, span)
            tokens.append(t)
            targets.append(y)
        if any((y >= 0).any() for y in targets):
            break
    padded, lengths = pad_codes(tokens)
    target_arr = np.full(padded.shape, -1, dtype=np.int64)
    for i, y in enumerate(targets):
        target_arr[i, :len(y)] = y
    return padded, target_arr, lengths


def train_masked_lm(model: MaskedLmModel, sequences: Sequence[np.ndarray], steps: int, schedule: Schedule,
                    batch: int = 16, mask_prob: float = 0.15, seed: int = 0, metrics_log=None,
                    span: int = 1) -> list[float]:
    if not sequences:
        raise ValueError("empty corpus")
    rng = np.random.default_rng(seed)
    optimizer = Adam(model.params, clip_norm=5.0)
    losses = []
    start = time.time()
    for step in range(steps):
        chosen = [sequences[i] for i in rng.integers(0, len(sequences), size=batch)]
        tokens, targets, lengths = mask_padded(chosen, mask_prob, rng, span)
        lr = schedule(step)
        losses.append(_update(model, optimizer, mlm_loss(model, tokens, targets, lengths), lr))
        if metrics_log is not None:
            metrics_log.write(f"step={step + 1}\tloss={losses[-1]:.6f}\tlr={lr:.3e}\twall={time.time() - start:.2f}\n")
    return losses


def masked_lm_eval(model: MaskedLmModel, sequences: Sequence[np.ndarray], seed: int = 0,
                   mask_prob: float = 0.15) -> float:
    rng = np.random.default_rng(seed)
    with no_grad():
        tokens, targets, lengths = mask_padded(list(sequences), mask_prob, rng)
        return float(mlm_loss(model, tokens, targets, lengths).data)


def extract_features(kind: str, models: dict, wave) -> FeatureSequence:
    """Frozen features of one waveform.

    ``models`` maps names to models: ``cpc`` for kind cpc, ``vq`` for kind vq,
    and both ``vq`` and ``mlm`` for kind mlm.
    """
    if kind not in FEATURE_KINDS:
        raise ValueError(f"unknown feature kind {kind!r}; expected one of {sorted(FEATURE_KINDS)}")
    needed = {"fbank": (), "cpc": ("cpc",), "vq": ("vq",), "mlm": ("vq", "mlm")}[kind]
    missing = [n for n in needed if models.get(n) is None]
    if missing:
        raise ValueError(f"feature kind {kind!r} needs model(s): {', '.join(missing)}")
    w = wave if isinstance(wave, Waveform) else Waveform(np.asarray(wave))
    if kind == "fbank":
        return logmel(w)
    with no_grad():
        if kind == "cpc":
            m = models["cpc"]
            frames = m.aggregate(m.encode(w.samples)).data[0]
        elif kind == "vq":
            vq = models["vq"]
            codes = vq.codes(w.samples)
            frames = vq.aggregate_codes(codes).data[0]
        else:
            codes = models["vq"].codes(w.samples)
            frames = models["mlm"].hidden(codes + 5).data[0]
    return FeatureSequence(np.array(frames, dtype=np.float64), 10.0, FEATURE_KINDS[kind])


def finetune_ssl(model: Module, waves: Sequence, steps: int, schedule: Schedule, vq: VqModel | None = None,
                 seed: int = 0, **kwargs) -> Module:
    """Continue a pretrained model's own objective on new audio; the input model is left untouched.

    Masked-LM models need ``vq`` to re-quantize the new audio into codes.
    """
    if not waves:
        raise ValueError("empty corpus")
    tuned = copy.deepcopy(model)
    if steps == 0:
        return tuned
    if isinstance(tuned, CpcModel):
        train_contrastive(tuned, waves, steps, schedule, seed=seed, **kwargs)
    elif isinstance(tuned, MaskedLmModel):
        if vq is None:
            raise ValueError("fine-tuning a masked LM needs the quantizer model")
        train_masked_lm(tuned, code_sequences(vq, waves), steps, schedule, seed=seed, **kwargs)
    else:
        raise ValueError(f"cannot fine-tune a {type(model).__name__}")
    return tuned
