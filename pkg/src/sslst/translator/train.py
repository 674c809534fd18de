"""Batching, the training step and a small epoch-level trainer."""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from ..audio import AugmentPolicy, apply_masks, sample_masks
from ..numerics import Adam, Schedule, backward
from ..textproc import PAD_ID, Vocabulary
from .model import EncoderDecoder

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class Example:
    id: str
    inputs: np.ndarray  # (T, D) features, or (T,) code ids for the hybrid encoder
    target: np.ndarray  # token ids ending with eos
    reference: str = ""

    @property
    def frames(self) -> int:
        return self.inputs.shape[0]


@dataclass
class Batch:
    ids: list[str]
    inputs: np.ndarray
    lengths: np.ndarray
    targets: np.ndarray
    target_lengths: np.ndarray

    def __len__(self) -> int:
        return len(self.ids)


def collate(examples: Sequence[Example]) -> Batch:
    if not examples:
        raise ValueError("empty batch")
    T = max(e.frames for e in examples)
    L = max(len(e.target) for e in examples)
    first = examples[0].inputs
    shape = (len(examples), T) + first.shape[1:]
    inputs = np.zeros(shape, dtype=first.dtype)
    targets = np.full((len(examples), L), PAD_ID, dtype=np.int64)
    for i, e in enumerate(examples):
        inputs[i, :e.frames] = e.inputs
        targets[i, :len(e.target)] = e.target
    return Batch([e.id for e in examples], inputs,
                 np.array([e.frames for e in examples]), targets,
                 np.array([len(e.target) for e in examples]))


def make_batches(examples: Sequence[Example], frame_budget: int, rng: np.random.Generator | None = None,
                 max_size: int | None = None) -> list[list[int]]:
    """Group indices so each padded batch holds at most ``frame_budget`` frames.

    Indices are sorted by length (ties by position), cut into batches, and the
    batch order is shuffled with ``rng`` when given.
    """
    order = sorted(range(len(examples)), key=lambda i: (examples[i].frames, i))
    batches, current, longest = [], [], 0
    for i in order:
        n = examples[i].frames
        grown = max(longest, n) * (len(current) + 1)
        if current and (grown > frame_budget or (max_size and len(current) >= max_size)):
            batches.append(current)
            current, longest = [], 0
        current.append(i)
        longest = max(longest, n)
    if current:
        batches.append(current)
    if rng is not None:
        rng.shuffle(batches)
    return batches


def augment_batch(batch: Batch, policy: AugmentPolicy, rng: np.random.Generator) -> Batch:
    """SpecAugment each example over its own valid frames."""
    if policy.time_masks == 0 and policy.freq_masks == 0:
        return batch
    inputs = batch.inputs.copy()
    for i, n in enumerate(batch.lengths):
        spans = sample_masks(int(n), inputs.shape[2], policy, rng)
        inputs[i, :n] = apply_masks(inputs[i, :n], *spans)
    return Batch(batch.ids, inputs, batch.lengths, batch.targets, batch.target_lengths)


def train_step(model: EncoderDecoder, batch: Batch, augment: AugmentPolicy | None, optimizer: Adam,
               lr: float, rng: np.random.Generator, step: int = 0) -> float:
    """Augment (features only), teacher-forced loss, one Adam update; returns the mean token loss."""
    if len(batch) == 0:
        raise ValueError("empty batch")
    if augment is not None and batch.inputs.ndim == 3:
        batch = augment_batch(batch, augment, rng)
    loss = model.loss(batch.inputs, batch.lengths, batch.targets, batch.target_lengths)
    value = float(loss.data)
    if not math.isfinite(value):
        raise TrainingDiverged(f"non-finite loss {value} at step {step}; examples {batch.ids}")
    grads = backward(loss, model.params.values())
    named = {k: grads[id(p)] for k, p in model.params.items() if id(p) in grads}
    optimizer.step(named, lr)
    return value


class Trainer:
    """Owns a model, its optimizer and the step counter."""

    def __init__(self, model: EncoderDecoder, schedule: Schedule, augment: AugmentPolicy | None = None,
                 frame_budget: int = 8000, seed: int = 0, clip_norm: float | None = 5.0,
                 max_batch: int | None = None, metrics_log=None):
        self.model = model
        self.schedule = schedule
        self.augment = augment
        self.frame_budget = frame_budget
        self.max_batch = max_batch
        self.rng = np.random.default_rng(seed)
        self.optimizer = Adam(model.params, clip_norm=clip_norm)
        self.step = 0
        self.epoch = 0
        self.metrics_log = metrics_log
        self._start = time.time()

    def run_epoch(self, examples: Sequence[Example]) -> float:
        losses, weights = [], []
        for idx in make_batches(examples, self.frame_budget, self.rng, self.max_batch):
            batch = collate([examples[i] for i in idx])
            lr = self.schedule(self.step)
            loss = train_step(self.model, batch, self.augment, self.optimizer, lr, self.rng, self.step)
            self.step += 1
            losses.append(loss)
            weights.append(int(batch.target_lengths.sum()))
            if self.metrics_log is not None:
                self.metrics_log.write(f"step={self.step}\tloss={loss:.6f}\tlr={lr:.3e}\t"
                                       f"wall={time.time() - self._start:.2f}\n")
        self.epoch += 1
        mean = float(np.average(losses, weights=weights))
        log.info("epoch %d: loss %.4f (%d steps)", self.epoch, mean, self.step)
        return mean

    def fit(self, examples: Sequence[Example], epochs: int,
            on_epoch: Callable[[int, float], bool | None] | None = None) -> list[float]:
        """Train for ``epochs``; ``on_epoch(epoch, loss)`` returning True stops early."""
        history = []
        for _ in range(epochs):
            history.append(self.run_epoch(examples))
            if on_epoch is not None and on_epoch(self.epoch, history[-1]):
                break
        return history


def make_examples(corpus, featurize: Callable, vocab: Vocabulary, field: str = "tgt_text") -> list[Example]:
    out = []
    for u in corpus:
        text = getattr(u, field)
        out.append(Example(u.id, featurize(u), np.array(vocab.encode(text, add_eos=True)), text))
    return out


def greedy_texts(model: EncoderDecoder, examples: Sequence[Example], vocab: Vocabulary,
                 batch_size: int = 64, max_len: int = 60) -> list[str]:
    texts = []
    for start in range(0, len(examples), batch_size):
        batch = collate(examples[start:start + batch_size])
        for ids in model.greedy_batch(batch.inputs, batch.lengths, max_len=max_len):
            texts.append(vocab.decode(ids))
    return texts
