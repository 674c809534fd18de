"""Model persistence, checkpoint averaging and ASR-to-ST parameter transfer."""
from __future__ import annotations

import enum
import hashlib
import logging
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import checkpoint as ckpt_io
from .checkpoint import Checkpoint, CheckpointError
from .numerics.nn import Module

log = logging.getLogger(__name__)

NAMESPACES = {"encoder": ("enc.",), "encoder+decoder": ("enc.", "dec.", "proj.")}


class TransferError(ValueError):
    pass


class TransferScope(str, enum.Enum):
    ENCODER = "encoder"
    ENCODER_DECODER = "encoder+decoder"

    @property
    def prefixes(self) -> tuple[str, ...]:
        return NAMESPACES[self.value]


def model_from_descriptor(descriptor: dict) -> Module:
    """Instantiate an (untrained) model of the described architecture."""
    from .ssl.cpc import CpcConfig, CpcModel
    from .ssl.mlm import MaskedLmConfig, MaskedLmModel
    from .ssl.quantizer import VqModel
    from .translator.hybrid import HybridModel
    from .translator.model import Seq2Seq, Seq2SeqConfig

    kind = descriptor.get("kind")
    config = descriptor.get("config", {})
    if kind == "seq2seq":
        return Seq2Seq(Seq2SeqConfig.from_dict(config))
    if kind == "cpc":
        return CpcModel(CpcConfig.from_dict(config))
    if kind == "vq":
        return VqModel(CpcConfig.from_dict(config), descriptor["codebook_size"])
    if kind == "mlm":
        return MaskedLmModel(MaskedLmConfig(**config))
    if kind == "hybrid":
        return HybridModel.from_descriptor(descriptor)
    raise CheckpointError(f"unknown model kind {kind!r}")


def to_checkpoint(model: Module, step: int = 0, order: int = 0, vocab=None, **extra) -> Checkpoint:
    metadata = {"descriptor": model.descriptor(), "step": int(step), "order": int(order)}
    if vocab is not None:
        metadata["vocab_fingerprint"] = vocab.fingerprint()
        metadata["vocab"] = {"kind": vocab.kind, "symbols": vocab.symbols,
                             "merges": [list(m) for m in vocab.merges]}
    elif "proj.w" in model.params:
        raise CheckpointError("models with a projection layer must be saved with their vocabulary")
    metadata.update(extra)
    return Checkpoint({k: np.array(v) for k, v in model.state_dict().items()}, metadata)


def from_checkpoint(ckpt: Checkpoint) -> Module:
    model = model_from_descriptor(ckpt.descriptor)
    model.load_state_dict(ckpt.tensors)
    return model


def checkpoint_vocab(ckpt: Checkpoint):
    from .textproc import Vocabulary

    v = ckpt.metadata.get("vocab")
    if v is None:
        return None
    return Vocabulary(v["symbols"], v["kind"], [tuple(m) for m in v.get("merges", [])])


def save_model(model: Module, path, step: int = 0, order: int = 0, vocab=None, **extra) -> Checkpoint:
    ckpt = to_checkpoint(model, step, order, vocab, **extra)
    ckpt_io.save(ckpt, path)
    return ckpt


def load_model(path) -> tuple[Module, Checkpoint]:
    ckpt = ckpt_io.load(path)
    return from_checkpoint(ckpt), ckpt


def average_checkpoints(sources: Sequence, k: int = 5) -> Checkpoint:
    """Mean of the ``k`` checkpoints with the highest creation-order index.

    ``sources`` may mix paths and :class:`Checkpoint` objects.
    """
    if not sources:
        raise ValueError("need at least one checkpoint")
    if k < 1:
        raise ValueError("k must be >= 1")
    loaded = [s if isinstance(s, Checkpoint) else ckpt_io.load(s) for s in sources]
    chosen = sorted(loaded, key=lambda c: c.order, reverse=True)[:k]
    ref = chosen[0]
    for other in chosen[1:]:
        if other.descriptor != ref.descriptor:
            raise CheckpointError("cannot average checkpoints with different architectures")
        if set(other.tensors) != set(ref.tensors):
            raise CheckpointError("cannot average checkpoints with different tensor names")
        for name, arr in other.tensors.items():
            if arr.shape != ref.tensors[name].shape:
                raise CheckpointError(f"tensor {name!r}: shape {arr.shape} vs {ref.tensors[name].shape}")
    averaged = {}
    for name, arr in ref.tensors.items():
        if arr.dtype.kind != "f":
            averaged[name] = arr.copy()
            continue
        # offsets from the first tensor keep the mean of identical inputs exact
        base = arr.astype(np.float64)
        offset = np.zeros(arr.shape, dtype=np.float64)
        for c in chosen[1:]:
            offset += c.tensors[name] - base
        averaged[name] = (base + offset / len(chosen)).astype(arr.dtype)
    metadata = dict(ref.metadata)
    metadata["step"] = max(c.step for c in chosen)
    metadata["order"] = max(c.order for c in chosen)
    metadata["averaged_orders"] = sorted(c.order for c in chosen)
    return Checkpoint(averaged, metadata)


def tensor_digests(model: Module) -> dict[str, str]:
    return {k: hashlib.sha256(np.ascontiguousarray(v.data).tobytes()).hexdigest()
            for k, v in model.params.items()}


def transfer_parameters(source: Checkpoint, target: Module, scope: TransferScope | str,
                        target_fingerprint: str | None = None) -> Module:
    """Copy every source tensor under the scope's name prefixes into ``target`` in place.

    With a decoder scope the vocabularies must agree; ``target_fingerprint``
    is the target model's vocabulary fingerprint.
    """
    scope = TransferScope(scope)
    selected = {k: v for k, v in source.tensors.items() if k.startswith(scope.prefixes)}
    if not selected:
        raise TransferError(f"source checkpoint has no tensors under {scope.prefixes}")
    if scope is TransferScope.ENCODER_DECODER:
        if source.fingerprint is None or target_fingerprint is None:
            raise TransferError("decoder transfer needs vocabulary fingerprints on both sides")
        if source.fingerprint != target_fingerprint:
            raise TransferError(f"vocabulary mismatch: source {source.fingerprint} vs target {target_fingerprint}")
    for name, value in selected.items():
        if name not in target.params:
            raise TransferError(f"target model has no tensor {name!r}")
        if target.params[name].shape != value.shape:
            raise TransferError(f"tensor {name!r}: source shape {value.shape} vs target {target.params[name].shape}")
    for name in target.params:
        if name.startswith(scope.prefixes) and name not in selected:
            raise TransferError(f"source checkpoint lacks in-scope tensor {name!r}")
    for name, value in selected.items():
        target.params[name].data = np.array(value, dtype=target.params[name].dtype)
    log.info("transferred %d tensors (%s)", len(selected), scope.value)
    return target


def interleave_corpora(corpora: Sequence[Sequence], rng: np.random.Generator) -> list:
    """One epoch's visiting order over the concatenation of ``corpora``."""
    pooled = [item for corpus in corpora for item in corpus]
    order = rng.permutation(len(pooled))
    return [pooled[i] for i in order]


def train_multilingual_asr(english: Sequence, other: Sequence, make_model: Callable[[], Module],
                           fit: Callable, vocab, out_dir=None, epochs: int = 1):
    """Train one ASR model on English plus language X examples.

    ``english`` and ``other`` are lists of training examples whose targets use
    ``vocab``; ``fit(model, examples, epochs, on_epoch)`` runs the trainer.
    The trainer shuffles the pooled examples each epoch.  A checkpoint is
    written per epoch when ``out_dir`` is given.  Returns the final checkpoint.
    """
    for corpus in (english, other):
        for ex in corpus:
            if ex.target.size and ex.target.max() >= len(vocab):
                raise TransferError(f"example {ex.id} uses token ids outside the shared vocabulary")
    pooled = list(english) + list(other)
    model = make_model()
    saved: list[Checkpoint] = []

    def on_epoch(epoch, loss):
        c = to_checkpoint(model, step=epoch, order=epoch, vocab=vocab, loss=loss)
        saved.append(c)
        if out_dir is not None:
            Path(out_dir).mkdir(parents=True, exist_ok=True)
            ckpt_io.save(c, Path(out_dir) / f"asr_epoch{epoch:03d}.ckpt")

    fit(model, pooled, epochs, on_epoch)
    return saved[-1] if saved else to_checkpoint(model, vocab=vocab)
