"""Manifests and the synthetic tone language used for desk-scale experiments."""
from __future__ import annotations

import collections
import csv
import string
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .audio import SAMPLE_RATE, Waveform, load_wav, write_wav
from .textproc import normalize

MANIFEST_COLUMNS = ("id", "audio_path", "src_lang", "tgt_lang", "src_text", "tgt_text")


class ManifestError(ValueError):
    pass


class MissingColumnError(ManifestError):
    pass


class DuplicateIdError(ManifestError):
    pass


class MissingAudioError(ManifestError):
    pass


@dataclass
class Utterance:
    id: str
    src_lang: str = "en"
    tgt_lang: str = "en"
    src_text: str = ""
    tgt_text: str = ""
    audio_path: str | None = None
    samples: np.ndarray | None = field(default=None, repr=False)

    @property
    def waveform(self) -> Waveform:
        if self.samples is None:
            if self.audio_path is None:
                raise MissingAudioError(f"utterance {self.id} has neither samples nor audio path")
            self.samples = load_wav(self.audio_path).samples
        return Waveform(self.samples)

    @property
    def num_samples(self) -> int:
        return len(self.waveform)


def load_manifest(path) -> list[Utterance]:
    path = Path(path)
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh, delimiter="\t", quoting=csv.QUOTE_NONE)
        try:
            header = next(reader)
        except StopIteration:
            raise MissingColumnError(f"{path}: empty file, no header") from None
        missing = [c for c in MANIFEST_COLUMNS if c not in header]
        if missing:
            raise MissingColumnError(f"{path}: missing column(s) {', '.join(missing)}")
        col = {c: header.index(c) for c in MANIFEST_COLUMNS}
        seen: dict[str, int] = {}
        out = []
        for row_no, row in enumerate(reader, start=2):
            if not row:
                continue
            row = row + [""] * (len(header) - len(row))
            uid = row[col["id"]]
            if uid in seen:
                raise DuplicateIdError(f"{path}: row {row_no}: duplicate id {uid!r} (first at row {seen[uid]})")
            seen[uid] = row_no
            audio = row[col["audio_path"]]
            audio_path = Path(audio) if Path(audio).is_absolute() else path.parent / audio
            if not audio_path.is_file():
                raise MissingAudioError(f"{path}: row {row_no}: audio file {audio!r} not found")
            out.append(Utterance(
                id=uid,
                src_lang=row[col["src_lang"]],
                tgt_lang=row[col["tgt_lang"]],
                src_text=normalize(row[col["src_text"]], is_transcript=True),
                tgt_text=normalize(row[col["tgt_text"]], is_transcript=False),
                audio_path=str(audio_path),
            ))
    return out


def write_manifest(path, corpus: Sequence[Utterance], audio_dir=None) -> None:
    """Write ``corpus`` as TSV; in-memory audio is saved as WAV under ``audio_dir``."""
    path = Path(path)
    audio_dir = Path(audio_dir) if audio_dir is not None else path.parent / "wav"
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, delimiter="\t", lineterminator="\n", quoting=csv.QUOTE_NONE, escapechar="\\")
        writer.writerow(MANIFEST_COLUMNS)
        for u in corpus:
            if u.samples is not None or u.audio_path is None:
                audio_dir.mkdir(parents=True, exist_ok=True)
                target = audio_dir / f"{u.id}.wav"
                write_wav(target, u.waveform)
                audio = str(target.relative_to(path.parent)) if target.is_relative_to(path.parent) else str(target)
            else:
                audio = u.audio_path
            writer.writerow([u.id, audio, u.src_lang, u.tgt_lang, u.src_text, u.tgt_text])


@dataclass(frozen=True)
class SynthSpec:
    """A toy language: each symbol is a 100 ms tone at ``base_hz + spacing_hz * a + offset_hz``.

    Translation maps symbols through ``bijection`` and reverses the sequence.
    """

    alphabet_size: int = 20
    tone_ms: int = 100
    base_hz: float = 300.0
    spacing_hz: float = 120.0
    offset_hz: float = 0.0
    noise: float = 0.01
    amplitude: float = 0.5
    min_len: int = 3
    max_len: int = 10
    lang: str = "en"
    tgt_lang: str = "en"
    bijection: tuple[int, ...] | None = None
    bijection_seed: int = 0

    def __post_init__(self):
        if not 1 <= self.alphabet_size <= 26:
            raise ValueError("alphabet size must be within 1..26")
        if self.bijection is not None and sorted(self.bijection) != list(range(self.alphabet_size)):
            raise ValueError("bijection must be a permutation of the alphabet")

    @property
    def letters(self) -> str:
        return string.ascii_lowercase[:self.alphabet_size]

    @property
    def samples_per_symbol(self) -> int:
        return SAMPLE_RATE * self.tone_ms // 1000

    def mapping(self) -> tuple[int, ...]:
        if self.bijection is not None:
            return self.bijection
        rng = np.random.default_rng(self.bijection_seed)
        return tuple(int(i) for i in rng.permutation(self.alphabet_size))

    def frequency(self, symbol: int) -> float:
        return self.base_hz + self.spacing_hz * symbol + self.offset_hz

    def translate(self, symbols: Sequence[int]) -> list[int]:
        m = self.mapping()
        return [m[s] for s in reversed(symbols)]

    def text(self, symbols: Sequence[int]) -> str:
        return " ".join(self.letters[s] for s in symbols)

    def render(self, symbols: Sequence[int], rng: np.random.Generator) -> np.ndarray:
        """Tones plus Gaussian noise."""
        t = np.arange(self.samples_per_symbol) / SAMPLE_RATE
        wave_ = np.concatenate([self.amplitude * np.sin(2 * np.pi * self.frequency(s) * t) for s in symbols])
        return wave_ + rng.normal(0.0, self.noise, size=wave_.size)


def synth_utterance(spec: SynthSpec, seed: int, index: int, prefix: str = "utt") -> Utterance:
    rng = np.random.default_rng([seed, index])
    length = int(rng.integers(spec.min_len, spec.max_len + 1))
    symbols = [int(s) for s in rng.integers(0, spec.alphabet_size, size=length)]
    return Utterance(
        id=f"{prefix}{index:06d}",
        src_lang=spec.lang,
        tgt_lang=spec.tgt_lang,
        src_text=spec.text(symbols),
        tgt_text=spec.text(spec.translate(symbols)),
        samples=spec.render(symbols, rng),
    )


def synth_corpus(spec: SynthSpec, n: int, seed: int, prefix: str | None = None, start: int = 0) -> list[Utterance]:
    """``n`` utterances; utterance ``i`` depends only on ``(seed, start + i)``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    prefix = f"{spec.lang}-" if prefix is None else prefix
    return [synth_utterance(spec, seed, start + i, prefix) for i in range(n)]


def language_x(spec: SynthSpec | None = None, offset_hz: float = 60.0) -> SynthSpec:
    """The related second language: same grammar, tones shifted by ``offset_hz``."""
    return replace(spec or SynthSpec(), offset_hz=offset_hz, lang="xx")


@dataclass
class CorpusStats:
    utterances: int
    hours: float
    char_histogram: collections.Counter


def corpus_stats(corpus: Sequence[Utterance]) -> CorpusStats:
    total = sum(u.num_samples for u in corpus)
    hist = collections.Counter()
    for u in corpus:
        hist.update(u.src_text)
    return CorpusStats(len(corpus), total / SAMPLE_RATE / 3600.0, hist)
