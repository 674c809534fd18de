"""Glue shared by the command line and the end-to-end experiments."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .audio import AugmentPolicy, standardize
from .decode import beam_search, strip_specials
from .metrics import bleu
from .numerics import Schedule
from .ssl.features import extract_features
from .textproc import Vocabulary
from .translator.model import DecoderConfig, EncoderDecoder, Seq2SeqConfig
from .translator.train import Example, Trainer, greedy_texts, make_examples
from .transfer import save_model

log = logging.getLogger(__name__)


def make_featurizer(kind: str, models: dict | None = None, normalize: bool = True) -> Callable:
    """Utterance -> ``(T, D)`` float32 features (code ids for the hybrid's ``codes`` kind)."""
    models = models or {}
    if kind == "codes":
        return lambda u: models["vq"].codes(u.waveform.samples)[0]

    def featurize(u):
        frames = extract_features(kind, models, u.waveform).frames
        return (standardize(frames) if normalize else frames).astype(np.float32)

    return featurize


def seq2seq_config(model: dict, input_dim: int, vocab_size: int) -> Seq2SeqConfig:
    return Seq2SeqConfig(
        input_dim=input_dim,
        input_hidden=model["input_hidden"],
        conv_channels=model["conv_channels"],
        encoder_hidden=model["encoder_hidden"],
        encoder_layers=model["encoder_layers"],
        decoder=decoder_config(model, vocab_size),
    )


def decoder_config(model: dict, vocab_size: int) -> DecoderConfig:
    return DecoderConfig(vocab_size=vocab_size, embed_dim=model["embed_dim"], hidden=model["decoder_hidden"],
                         layers=model["decoder_layers"], attention_dim=model["attention_dim"])


@dataclass
class FitResult:
    losses: list[float] = field(default_factory=list)
    bleus: list[float] = field(default_factory=list)
    checkpoints: list[Path] = field(default_factory=list)
    seconds: float = 0.0

    def first_epoch_reaching(self, threshold: float) -> int | None:
        """1-based epoch at which BLEU first reached ``threshold``."""
        return next((i + 1 for i, b in enumerate(self.bleus) if b >= threshold), None)


def fit(model: EncoderDecoder, train: Sequence[Example], epochs: int, schedule: Schedule,
        augment: AugmentPolicy | None = None, frame_budget: int = 8000, seed: int = 0,
        dev: Sequence[Example] | None = None, vocab: Vocabulary | None = None,
        target_bleu: float | None = None, out_dir=None, keep: int = 5, metrics_log=None,
        max_len: int = 60) -> FitResult:
    """Train for up to ``epochs``, scoring greedy BLEU on ``dev`` after each epoch.

    Stops early once ``target_bleu`` is reached.  With ``out_dir`` a checkpoint
    is written per epoch (creation order = epoch) and only the newest ``keep``
    are retained.
    """
    result = FitResult()
    trainer = Trainer(model, schedule, augment, frame_budget=frame_budget, seed=seed, metrics_log=metrics_log)
    start = time.time()

    def on_epoch(epoch: int, loss: float) -> bool:
        result.losses.append(loss)
        if dev is not None and vocab is not None:
            hyps = greedy_texts(model, dev, vocab, max_len=max_len)
            result.bleus.append(bleu([e.reference for e in dev], hyps))
            log.info("epoch %d loss %.4f dev BLEU %.2f", epoch, loss, result.bleus[-1])
        if out_dir is not None:
            path = Path(out_dir) / f"epoch{epoch:03d}.ckpt"
            save_model(model, path, step=trainer.step, order=epoch, vocab=vocab, loss=loss)
            result.checkpoints.append(path)
            while len(result.checkpoints) > keep:
                result.checkpoints.pop(0).unlink(missing_ok=True)
        return target_bleu is not None and bool(result.bleus) and result.bleus[-1] >= target_bleu

    trainer.fit(train, epochs, on_epoch)
    result.seconds = time.time() - start
    return result


def beam_decode(model: EncoderDecoder, examples: Sequence[Example], vocab: Vocabulary, beam: int = 5,
                max_len: int = 200, alpha: float = 1.0) -> list[tuple[str, str, float]]:
    """``(id, text, score)`` per example, in input order."""
    rows = []
    for e in examples:
        scorer, state = model.scorer(e.inputs)
        best, _ = beam_search(scorer, state, beam=beam, max_len=max_len, alpha=alpha)
        rows.append((e.id, vocab.decode(strip_specials(best.tokens)), best.score))
    return rows


def examples_for(corpus, featurize: Callable, vocab: Vocabulary, task: str) -> list[Example]:
    """ASR targets are transcripts, ST targets are translations."""
    return make_examples(corpus, featurize, vocab, "src_text" if task == "asr" else "tgt_text")
