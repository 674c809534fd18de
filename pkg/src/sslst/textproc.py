"""Text normalisation, tokenisation, vocabularies and corpus filtering."""
from __future__ import annotations

import collections
import hashlib
import re
import string
import unicodedata
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

PAD, BOS, EOS, UNK, MASK = "<pad>", "<s>", "</s>", "<unk>", "<mask>"
RESERVED = (PAD, BOS, EOS, UNK, MASK)
PAD_ID, BOS_ID, EOS_ID, UNK_ID, MASK_ID = range(5)
WORD_MARK = "▁"

MAX_FRAMES = 3000
MIN_FRAMES = 5
MAX_CHARS = 400
MIN_CHARS = 1

# reference only: the character inventory size of the original English setup
ENGLISH_CHAR_VOCAB_SIZE = 54

_FOLD = str.maketrans({
    "‘": "'", "’": "'", "‚": "'", "‛": "'", "′": "'", "`": "'", "´": "'",
    "“": '"', "”": '"', "„": '"', "‟": '"', "″": '"', "«": '"', "»": '"',
    "‐": "-", "‑": "-", "‒": "-", "–": "-", "—": "-", "―": "-", "−": "-",
    "…": "...", " ": " ",
})
_WS = re.compile(r"\s+")


class TextError(ValueError):
    pass


def _is_punct(ch: str) -> bool:
    return ch in string.punctuation or unicodedata.category(ch).startswith("P")


def normalize(text: str | bytes, is_transcript: bool = False) -> str:
    """Fold punctuation variants to ASCII, lowercase, collapse whitespace.

    Transcripts additionally lose all punctuation.
    """
    if isinstance(text, (bytes, bytearray)):
        try:
            text = bytes(text).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise TextError(f"invalid UTF-8: {exc}") from exc
    out = unicodedata.normalize("NFKC", text.lower()).translate(_FOLD).lower()
    out = unicodedata.normalize("NFKC", out)
    if is_transcript:
        out = "".join(ch for ch in out if not _is_punct(ch))
        # dropping punctuation can bring a combining mark next to a new base letter
        out = unicodedata.normalize("NFKC", out)
    return _WS.sub(" ", out).strip()


def tokenize(text: str) -> list[str]:
    """Whitespace split with every punctuation character as its own token."""
    tokens: list[str] = []
    for word in text.split():
        current = []
        for ch in word:
            if _is_punct(ch):
                if current:
                    tokens.append("".join(current))
                    current = []
                tokens.append(ch)
            else:
                current.append(ch)
        if current:
            tokens.append("".join(current))
    return tokens


@dataclass
class Vocabulary:
    symbols: list[str]
    kind: str = "character"
    merges: list[tuple[str, str]] = field(default_factory=list)

    def __post_init__(self):
        if tuple(self.symbols[:5]) != RESERVED:
            raise ValueError("vocabulary must start with the five reserved symbols")
        if len(set(self.symbols)) != len(self.symbols):
            raise ValueError("vocabulary symbols must be unique")
        self.index = {s: i for i, s in enumerate(self.symbols)}
        self._ranks = {pair: r for r, pair in enumerate(self.merges)}

    def __len__(self) -> int:
        return len(self.symbols)

    def id(self, symbol: str) -> int:
        return self.index.get(symbol, UNK_ID)

    def fingerprint(self) -> str:
        payload = self.kind + "\n" + "\n".join(self.symbols)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]

    def segment(self, text: str) -> list[str]:
        if self.kind == "character":
            return list(text)
        pieces: list[str] = []
        for word in text.split():
            pieces.extend(_apply_merges([WORD_MARK] + list(word), self._ranks))
        return pieces

    def encode(self, text: str, add_eos: bool = False) -> list[int]:
        ids = [self.id(s) for s in self.segment(text)]
        return ids + [EOS_ID] if add_eos else ids

    def decode(self, ids: Iterable[int]) -> str:
        pieces = []
        for i in ids:
            i = int(i)
            if i == EOS_ID:
                break
            if i in (PAD_ID, BOS_ID, MASK_ID):
                continue
            pieces.append(self.symbols[i] if 0 <= i < len(self.symbols) else UNK)
        text = "".join(pieces)
        if self.kind == "subword":
            text = text.replace(WORD_MARK, " ").strip()
        return text

    def save(self, path) -> None:
        lines = list(self.symbols)
        if self.kind == "subword":
            lines += ["#merges"] + [f"{a} {b}" for a, b in self.merges]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        lines = Path(path).read_text(encoding="utf-8").split("\n")[:-1]
        if "#merges" in lines[5:]:
            cut = lines.index("#merges", 5)
            merges = [tuple(line.split(" ")) for line in lines[cut + 1:]]
            return cls(lines[:cut], "subword", merges)
        return cls(lines, "character")


def _by_frequency(counts: collections.Counter) -> list[str]:
    return sorted(counts, key=lambda s: (-counts[s], [ord(c) for c in s]))


def build_char_vocab(corpus: Sequence[str]) -> Vocabulary:
    """Reserved symbols, then every character ordered by frequency and codepoint."""
    if not corpus:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    counts = collections.Counter()
    for line in corpus:
        counts.update(line)
    return Vocabulary(list(RESERVED) + _by_frequency(counts), "character")


def _apply_merges(symbols: list[str], ranks: dict) -> list[str]:
    while len(symbols) > 1:
        best = None
        for pair in zip(symbols, symbols[1:]):
            r = ranks.get(pair)
            if r is not None and (best is None or r < best[0]):
                best = (r, pair)
        if best is None:
            break
        a, b = best[1]
        merged, i = [], 0
        while i < len(symbols):
            if i + 1 < len(symbols) and symbols[i] == a and symbols[i + 1] == b:
                merged.append(a + b)
                i += 2
            else:
                merged.append(symbols[i])
                i += 1
        symbols = merged
    return symbols


def build_subword_vocab(corpus: Sequence[str], size: int = 10000) -> Vocabulary:
    """Byte-pair encoding over words marked with a leading ``▁``.

    Ties between equally frequent pairs go to the lexicographically smallest.
    """
    words = collections.Counter()
    for line in corpus:
        words.update(line.split())
    if not words:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    segs = {w: [WORD_MARK] + list(w) for w in words}
    chars = collections.Counter()
    for w, n in words.items():
        for ch in segs[w]:
            chars[ch] += n
    symbols = list(RESERVED) + _by_frequency(chars)
    if size < len(symbols):
        raise ValueError(f"size {size} is below the {len(symbols)} reserved and character symbols")
    merges: list[tuple[str, str]] = []
    while len(symbols) < size:
        pairs = collections.Counter()
        for w, n in words.items():
            s = segs[w]
            for pair in zip(s, s[1:]):
                pairs[pair] += n
        if not pairs:
            raise ValueError(f"corpus only supports a vocabulary of size {len(symbols)}, asked for {size}")
        top = max(pairs.values())
        pair = min(p for p, c in pairs.items() if c == top)
        merges.append(pair)
        new = pair[0] + pair[1]
        if new not in symbols:
            symbols.append(new)
        ranks = {pair: 0}
        for w in segs:
            segs[w] = _apply_merges(segs[w], ranks)
    return Vocabulary(symbols, "subword", merges)


def keep_sample(frames: int, chars: int) -> bool:
    return MIN_FRAMES <= frames <= MAX_FRAMES and MIN_CHARS <= chars <= MAX_CHARS


def filter_samples(samples: Iterable, frames: Callable = lambda s: s[0],
                   chars: Callable = lambda s: s[1]) -> list:
    """Drop samples outside 5..3000 frames or 1..400 characters (bounds inclusive)."""
    return [s for s in samples if keep_sample(frames(s), chars(s))]
