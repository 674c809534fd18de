import numpy as np
import pytest

from sslst.audio import SAMPLE_RATE
from sslst.corpus import (
    DuplicateIdError,
    MissingAudioError,
    MissingColumnError,
    SynthSpec,
    Utterance,
    corpus_stats,
    language_x,
    load_manifest,
    synth_corpus,
    synth_utterance,
    write_manifest,
)

HEADER = "id\taudio_path\tsrc_lang\ttgt_lang\tsrc_text\ttgt_text\n"


def test_empty_manifest(tmp_path):
    (tmp_path / "m.tsv").write_text(HEADER, encoding="utf-8")
    assert load_manifest(tmp_path / "m.tsv") == []


def test_missing_column(tmp_path):
    (tmp_path / "m.tsv").write_text("id\taudio_path\n", encoding="utf-8")
    with pytest.raises(MissingColumnError, match="src_lang"):
        load_manifest(tmp_path / "m.tsv")


def test_duplicate_id_names_it(tmp_path):
    corpus = synth_corpus(SynthSpec(), 2, seed=0)
    write_manifest(tmp_path / "m.tsv", corpus)
    lines = (tmp_path / "m.tsv").read_text(encoding="utf-8").splitlines()
    lines[2] = lines[1]
    (tmp_path / "m.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    with pytest.raises(DuplicateIdError, match="en-000000"):
        load_manifest(tmp_path / "m.tsv")


def test_missing_audio_reports_row(tmp_path):
    (tmp_path / "m.tsv").write_text(HEADER + "u1\tnope.wav\ten\ten\ta\t\n", encoding="utf-8")
    with pytest.raises(MissingAudioError, match="row 2"):
        load_manifest(tmp_path / "m.tsv")


def test_manifest_round_trip(tmp_path):
    corpus = synth_corpus(SynthSpec(), 4, seed=3)
    write_manifest(tmp_path / "m.tsv", corpus)
    loaded = load_manifest(tmp_path / "m.tsv")
    assert [u.id for u in loaded] == [u.id for u in corpus]
    for a, b in zip(corpus, loaded):
        assert (a.src_lang, a.tgt_lang, a.src_text, a.tgt_text) == (b.src_lang, b.tgt_lang, b.src_text, b.tgt_text)
        pcm = np.clip(np.round(a.samples * 32768), -32768, 32767) / 32768
        np.testing.assert_array_equal(b.waveform.samples, pcm)


def test_manifest_normalizes_by_column(tmp_path):
    corpus = synth_corpus(SynthSpec(), 1, seed=0)
    write_manifest(tmp_path / "m.tsv", corpus)
    text = (tmp_path / "m.tsv").read_text(encoding="utf-8").splitlines()
    uid, audio = text[1].split("\t")[:2]
    (tmp_path / "m.tsv").write_text(HEADER + f"{uid}\t{audio}\ten\ten\tHello, World!\tHello, World!\n", encoding="utf-8")
    (u,) = load_manifest(tmp_path / "m.tsv")
    assert u.src_text == "hello world"
    assert u.tgt_text == "hello, world!"


def test_synth_is_deterministic():
    a = synth_corpus(SynthSpec(), 5, seed=1)
    b = synth_corpus(SynthSpec(), 5, seed=1)
    for x, y in zip(a, b):
        assert x.samples.tobytes() == y.samples.tobytes()
        assert (x.src_text, x.tgt_text) == (y.src_text, y.tgt_text)


def test_synth_lengths_and_sizes():
    for u in synth_corpus(SynthSpec(), 20, seed=2):
        n = len(u.src_text.split())
        assert 3 <= n <= 10
        assert len(u.samples) == n * 1600
    spec = SynthSpec(min_len=5, max_len=5)
    assert len(synth_utterance(spec, 0, 0).samples) == 8000


def test_reversal_with_identity_bijection():
    spec = SynthSpec(bijection=tuple(range(20)))
    assert spec.text(spec.translate([0, 1, 2])) == "c b a"


def test_language_x_offsets_tones():
    x = language_x()
    assert x.frequency(0) == SynthSpec().frequency(0) + 60
    assert x.mapping() == SynthSpec().mapping()


def test_corpus_stats():
    one = Utterance("u", samples=np.zeros(SAMPLE_RATE))
    s = corpus_stats([one])
    assert s.utterances == 1 and s.hours == pytest.approx(1 / 3600)
    empty = corpus_stats([])
    assert empty.utterances == 0 and empty.hours == 0.0


def _nearest_tone(u, spec):
    """Brute-force spectral peak per 100 ms segment, snapped to the closest symbol tone."""
    n = spec.samples_per_symbol
    x = u.samples
    freqs = np.fft.rfftfreq(n, 1 / SAMPLE_RATE)
    out = []
    for k in range(len(x) // n):
        spectrum = np.abs(np.fft.rfft(x[k * n:(k + 1) * n]))
        peak = freqs[np.argmax(spectrum)]
        out.append(int(np.argmin([abs(peak - spec.frequency(a)) for a in range(spec.alphabet_size)])))
    return spec.text(out)


@pytest.mark.parametrize("spec", [SynthSpec(), language_x()])
def test_nearest_tone_classifier_recovers_transcripts(spec):
    corpus = synth_corpus(spec, 200, seed=11)
    assert all(_nearest_tone(u, spec) == u.src_text for u in corpus)
