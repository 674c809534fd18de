import math

import numpy as np
import pytest

from sslst.corpus import SynthSpec, synth_corpus
from sslst.numerics import Schedule, Tensor, backward, ops
from sslst.ssl import (
    Codebook,
    CpcConfig,
    CpcModel,
    MaskedLmConfig,
    MaskedLmModel,
    VqModel,
    cpc_forward,
    cpc_loss,
    extract_features,
    finetune_ssl,
    kmeans_fit,
    kmeans_train,
    mask_batch,
    mlm_loss,
    quantize,
    sample_negatives,
)
from sslst.ssl.features import contrastive_eval, mask_padded


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


# -- contrastive model ----------------------------------------------------------

def test_one_second_gives_100_frames():
    z, c = cpc_forward(CpcModel(), np.zeros(16000))
    assert z.shape == (100, 64) and c.shape == (100, 64)


def test_frame_count_is_floor_of_hop():
    m = CpcModel()
    for n in (160, 161, 319, 320, 4799, 12345):
        assert m.encode(np.zeros(n)).shape[1] == n // 160 == m.num_frames(n)


def test_zero_model_zero_input():
    z, c = cpc_forward(CpcModel(zero=True), np.zeros(16000))
    assert not z.data.any() and not c.data.any()


def test_too_short_rejected():
    with pytest.raises(ValueError, match="shorter than one frame"):
        cpc_forward(CpcModel(), np.zeros(159))


def test_causality_margin():
    m = CpcModel(seed=4)
    w = np.random.default_rng(0).normal(0, 0.3, 16000)
    w2 = w.copy()
    w2[16 * 160:] += np.random.default_rng(1).normal(0, 0.3, 16000 - 16 * 160)
    _, c1 = cpc_forward(m, w)
    _, c2 = cpc_forward(m, w2)
    np.testing.assert_array_equal(c1.data[:8], c2.data[:8])
    # tight bound: frame t sees only samples before 160 (t + 1)
    np.testing.assert_array_equal(c1.data[:16], c2.data[:16])
    assert not np.array_equal(c1.data[16], c2.data[16])


def test_receptive_field():
    assert CpcConfig().receptive_field == 465


def test_zero_init_loss_is_ln2():
    m = CpcModel(zero=True)
    z, c = cpc_forward(m, np.random.default_rng(0).normal(size=4800))
    loss = cpc_loss(z, c, m.heads(), rng=np.random.default_rng(0))
    assert abs(float(loss.data) - math.log(2)) < 1e-6


def test_saturated_oracle_loss_near_zero():
    # one-hot frames; head k maps c_i to 20 e_{i+k} - 10, so positives score +10, negatives -10
    T, K, N = 20, 12, 10
    eye = np.eye(T)
    heads = []
    for k in range(1, K + 1):
        w = np.zeros((T, T))
        w[np.arange(T - k), np.arange(k, T)] = 20.0
        heads.append((Tensor(w), Tensor(np.full(T, -10.0))))
    loss = cpc_loss(Tensor(eye), Tensor(eye), heads, K, N, rng=np.random.default_rng(0))
    assert float(loss.data) < 1e-3


def _loop_cpc(z, c, heads, K, negs):
    total, count = 0.0, 0
    B, T, _ = z.shape
    for b in range(B):
        for k in range(1, K + 1):
            w, bias = heads[k - 1]
            for i in range(T - k):
                pred = c[b, i] @ w + bias
                total += -math.log(_sigmoid(pred @ z[b, i + k]))
                count += 1
                for j in negs[k - 1][b, i]:
                    total += -math.log(_sigmoid(-(pred @ z[b, j])))
                    count += 1
    return total / count


def test_cpc_loss_matches_loop_oracle():
    rng = np.random.default_rng(3)
    B, T, C, K, N = 2, 20, 4, 5, 3
    z = rng.normal(size=(B, T, C))
    c = rng.normal(size=(B, T, C))
    heads = [(rng.normal(size=(C, C)) * 0.5, rng.normal(size=C) * 0.1) for _ in range(K)]
    negs = sample_negatives(np.random.default_rng(9), B, T, K, N)
    got = cpc_loss(Tensor(z), Tensor(c), [(Tensor(w), Tensor(b)) for w, b in heads], K, N, negative_ids=negs)
    assert abs(float(got.data) - _loop_cpc(z, c, heads, K, negs)) < 1e-10


def test_negatives_never_hit_the_positive():
    negs = sample_negatives(np.random.default_rng(0), 3, 15, 12, 10)
    for k, idx in enumerate(negs, start=1):
        assert idx.shape == (3, 15 - k, 10)
        assert idx.min() >= 0 and idx.max() < 15
        assert not (idx == np.arange(k, 15)[None, :, None]).any()


def test_short_sequence_rejected():
    m = CpcModel()
    z, c = cpc_forward(m, np.zeros(12 * 160))
    with pytest.raises(ValueError, match="too short"):
        cpc_loss(z, c, m.heads(), rng=np.random.default_rng(0))


# -- quantizer --------------------------------------------------------------------

def test_kmeans_single_centroid_is_mean():
    x = np.random.default_rng(0).normal(size=(50, 3))
    np.testing.assert_allclose(kmeans_train(x, 1, 5).centroids[0], x.mean(0), atol=1e-12)


def test_kmeans_two_points():
    x = np.array([[0.0, 0.0], [5.0, 5.0]])
    cb = kmeans_train(x, 2, 5, np.random.default_rng(0))
    assert sorted(map(tuple, cb.centroids)) == [(0.0, 0.0), (5.0, 5.0)]


def _corner_clusters(n=400, seed=0):
    rng = np.random.default_rng(seed)
    centers = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    labels = rng.integers(0, 4, size=n)
    return centers[labels] + rng.normal(0, 0.01, size=(n, 2)), labels


def test_kmeans_purity_and_monotone_distortion():
    x, labels = _corner_clusters()
    fit = kmeans_fit(x, 4, 20, np.random.default_rng(1))
    purity = sum(np.bincount(labels[fit.assignments == v]).max() for v in np.unique(fit.assignments)) / len(x)
    assert purity >= 0.99
    assert all(b <= a + 1e-12 for a, b in zip(fit.distortions, fit.distortions[1:]))


def test_kmeans_reseeds_empty_clusters_and_stays_monotone():
    rng = np.random.default_rng(5)
    x = np.vstack([rng.normal(0, 1, (200, 4)), rng.normal(8, 0.5, (5, 4))])
    fit = kmeans_fit(x, 16, 30, rng)
    assert np.isfinite(fit.codebook.centroids).all()
    assert all(b <= a + 1e-12 for a, b in zip(fit.distortions, fit.distortions[1:]))


def test_kmeans_needs_distinct_vectors():
    with pytest.raises(ValueError, match="distinct"):
        kmeans_train(np.ones((10, 2)), 2)


def test_quantize_exact_centroid():
    cb = Codebook(np.random.default_rng(0).normal(size=(6, 3)))
    tokens, zhat = quantize(cb.centroids[3][None], cb)
    assert tokens[0] == 3
    np.testing.assert_array_equal(zhat.data[0], cb.centroids[3])


def test_quantize_distance_example():
    tokens, _ = quantize(np.array([[0.9, 0.8]]), Codebook(np.array([[0.0, 0.0], [1.0, 1.0]])))
    assert tokens.tolist() == [1]


def test_quantize_ties_go_to_lowest_index():
    cb = Codebook(np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0]]))
    tokens, _ = quantize(np.array([[0.0, 0.0], [0.0, 0.0]]), cb)
    assert tokens.tolist() == [0, 0]


def test_quantize_dimension_mismatch():
    with pytest.raises(ValueError, match="dimension"):
        quantize(np.zeros((2, 3)), Codebook(np.zeros((4, 2))))


def test_quantize_idempotent():
    rng = np.random.default_rng(2)
    cb = Codebook(rng.normal(size=(8, 4)))
    tokens, zhat = quantize(rng.normal(size=(30, 4)), cb)
    again, _ = quantize(zhat.data, cb)
    np.testing.assert_array_equal(tokens, again)


@pytest.mark.parametrize("shape", [(5, 3), (2, 7, 3), (1, 1, 1, 3)])
def test_straight_through_gradient_is_exact(shape):
    rng = np.random.default_rng(0)
    cb = Codebook(rng.normal(size=(4, 3)))
    z = Tensor(rng.normal(size=shape), requires_grad=True)
    u = rng.normal(size=shape)
    _, zhat = quantize(z, cb)
    loss = ops.sum(ops.mul(zhat, u))
    g = backward(loss, [z])[id(z)]
    assert np.array_equal(g, u)


def test_vq_model_codes_in_range():
    cpc = CpcModel(seed=0)
    cb = Codebook(np.random.default_rng(0).random((8, 64)))
    vq = VqModel.from_cpc(cpc, cb)
    codes = vq.codes(np.random.default_rng(1).normal(size=3200))
    assert codes.shape == (1, 20) and codes.min() >= 0 and codes.max() < 8
    assert not vq.params["vq.codebook"].requires_grad


# -- masked prediction --------------------------------------------------------------

def test_mask_prob_extremes():
    codes = np.arange(20) % 7
    tokens, targets = mask_batch(codes, 0.0, np.random.default_rng(0))
    assert (targets == -1).all() and (tokens == codes + 5).all()
    tokens, targets = mask_batch(codes, 1.0, np.random.default_rng(0))
    assert (tokens == 4).all() and (targets == codes).all()


def test_mask_seed7_transcript():
    # reference sampler: rng = default_rng(7); selected = rng.random(20) < 0.15
    _, targets = mask_batch(np.zeros(20, dtype=int), 0.15, np.random.default_rng(7))
    assert np.flatnonzero(targets >= 0).tolist() == [6]


def test_mask_span_extends_selected_positions():
    _, targets = mask_batch(np.zeros(20, dtype=int), 0.15, np.random.default_rng(7), span=3)
    assert np.flatnonzero(targets >= 0).tolist() == [6, 7, 8]
    _, targets = mask_batch(np.zeros((2, 8), dtype=int), 0.0, np.random.default_rng(0), span=4)
    assert (targets == -1).all()


def test_mask_empty_rejected():
    with pytest.raises(ValueError):
        mask_batch(np.array([], dtype=int), 0.15, np.random.default_rng(0))


def test_mlm_uniform_loss_is_ln_v():
    m = MaskedLmModel(zero=True)
    tokens, targets = mask_batch(np.arange(30) % 64, 1.0, np.random.default_rng(0))
    assert abs(float(mlm_loss(m, tokens, targets).data) - math.log(64)) < 1e-6


def test_mlm_oracle_model_zero_loss():
    cfg = MaskedLmConfig(codebook_size=4, width=8, blocks=1, heads=2, ffn=8)
    m = MaskedLmModel(cfg, zero=True)
    m.params["out.b"].data = np.array([100.0, -100.0, -100.0, -100.0])
    tokens, targets = mask_batch(np.zeros(10, dtype=int), 1.0, np.random.default_rng(0))
    assert float(mlm_loss(m, tokens, targets).data) < 1e-12


def _softmax(x):
    e = np.exp(x - x.max(-1, keepdims=True))
    return e / e.sum(-1, keepdims=True)


def _layer_norm(x, g, b, eps=1e-5):
    mu = x.mean(-1, keepdims=True)
    var = ((x - mu) ** 2).mean(-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps) * g + b


def _loop_mlm(m, tokens, targets):
    p = {k: v.data for k, v in m.params.items()}
    c = m.config
    T = len(tokens)
    x = np.stack([p["embed"][t] for t in tokens]) + m._positions[:T]
    dh = c.width // c.heads
    for i in range(c.blocks):
        pre = f"block{i}."
        h = _layer_norm(x, p[pre + "ln1.g"], p[pre + "ln1.b"])
        ctx = np.zeros_like(x)
        for head in range(c.heads):
            sl = slice(head * dh, (head + 1) * dh)
            q = (h @ p[pre + "att.q.w"] + p[pre + "att.q.b"])[:, sl]
            k = (h @ p[pre + "att.k.w"] + p[pre + "att.k.b"])[:, sl]
            v = (h @ p[pre + "att.v.w"] + p[pre + "att.v.b"])[:, sl]
            for t in range(T):
                a = _softmax(np.array([q[t] @ k[s] for s in range(T)]) / math.sqrt(dh))
                ctx[t, sl] = sum(a[s] * v[s] for s in range(T))
        x = x + ctx @ p[pre + "att.o.w"] + p[pre + "att.o.b"]
        h = _layer_norm(x, p[pre + "ln2.g"], p[pre + "ln2.b"])
        x = x + np.maximum(h @ p[pre + "ffn.w1"] + p[pre + "ffn.b1"], 0) @ p[pre + "ffn.w2"] + p[pre + "ffn.b2"]
    x = _layer_norm(x, p["ln.g"], p["ln.b"])
    losses = []
    for t in range(T):
        if targets[t] >= 0:
            logits = x[t] @ p["embed"][5:].T + p["out.b"]
            losses.append(-np.log(_softmax(logits)[targets[t]]))
    return float(np.mean(losses))


def test_mlm_loss_matches_loop_oracle():
    cfg = MaskedLmConfig(codebook_size=6, width=8, blocks=2, heads=2, ffn=12, max_len=32)
    m = MaskedLmModel(cfg, seed=1)
    for t in m.params.values():
        t.data = t.data + np.random.default_rng(2).normal(0, 0.3, t.shape)
    codes = np.random.default_rng(3).integers(0, 6, size=9)
    tokens, targets = mask_batch(codes, 0.4, np.random.default_rng(4))
    got = float(mlm_loss(m, tokens, targets).data)
    assert abs(got - _loop_mlm(m, tokens, targets)) < 1e-10


def test_mlm_padding_does_not_leak():
    cfg = MaskedLmConfig(codebook_size=6, width=8, blocks=2, heads=2, ffn=12, max_len=32)
    m = MaskedLmModel(cfg, seed=1)
    short = np.array([7, 8, 9, 10])
    alone = m.hidden(short).data[0]
    padded = m.hidden(np.array([[7, 8, 9, 10, 0, 0, 0]]), lengths=[4]).data[0]
    np.testing.assert_allclose(padded[:4], alone, atol=1e-12)
    assert not padded[4:].any()


def test_mlm_zero_masked_rejected():
    m = MaskedLmModel(MaskedLmConfig(codebook_size=4, width=8, blocks=1, heads=2, ffn=8))
    with pytest.raises(ValueError, match="no masked positions"):
        mlm_loss(m, np.array([5, 6, 7]), np.array([-1, -1, -1]))


def test_mlm_loss_near_ln_v_at_init():
    m = MaskedLmModel(seed=0)
    rng = np.random.default_rng(0)
    losses = []
    for _ in range(100):
        seqs = [rng.integers(0, 64, size=rng.integers(10, 30)) for _ in range(4)]
        tokens, targets, lengths = mask_padded(seqs, 0.15, rng)
        losses.append(float(mlm_loss(m, tokens, targets, lengths).data))
    assert abs(np.mean(losses) - math.log(64)) < 2e-2


def test_mlm_rejects_overlong():
    m = MaskedLmModel(MaskedLmConfig(codebook_size=4, width=8, blocks=1, heads=2, ffn=8, max_len=5))
    with pytest.raises(ValueError, match="maximum length"):
        m.hidden(np.full(6, 5))


# -- features and fine-tuning ---------------------------------------------------------

def test_fbank_features_shape():
    f = extract_features("fbank", {}, np.zeros(16000) + 0.01)
    assert f.shape == (98, 80) and f.kind == "log-mel"


def test_cpc_features_shape_and_determinism():
    m = CpcModel(seed=0)
    w = np.random.default_rng(0).normal(0, 0.2, 16000)
    a = extract_features("cpc", {"cpc": m}, w)
    b = extract_features("cpc", {"cpc": m}, w)
    assert a.shape == (100, 64) and a.kind == "cpc-context"
    assert np.array_equal(a.frames, b.frames)


def test_vq_and_mlm_features():
    cpc = CpcModel(seed=0)
    vq = VqModel.from_cpc(cpc, Codebook(np.random.default_rng(0).random((8, 64))))
    mlm = MaskedLmModel(MaskedLmConfig(codebook_size=8, width=16, blocks=1, heads=2, ffn=16))
    w = np.random.default_rng(1).normal(0, 0.2, 8000)
    assert extract_features("vq", {"vq": vq}, w).shape == (50, 64)
    f = extract_features("mlm", {"vq": vq, "mlm": mlm}, w)
    assert f.shape == (50, 16) and f.kind == "mlm-context"


def test_missing_model_rejected():
    with pytest.raises(ValueError, match="needs model"):
        extract_features("mlm", {"vq": None}, np.zeros(1600))


def test_features_do_not_touch_model():
    m = CpcModel(seed=0)
    before = {k: v.data.copy() for k, v in m.params.items()}
    extract_features("cpc", {"cpc": m}, np.random.default_rng(0).normal(size=4000))
    assert all(np.array_equal(before[k], m.params[k].data) for k in before)


def test_finetune_zero_steps_identity():
    m = CpcModel(seed=0)
    tuned = finetune_ssl(m, [np.zeros(4800)], 0, Schedule())
    assert tuned is not m
    assert all(np.array_equal(tuned.params[k].data, m.params[k].data) for k in m.params)


def test_finetune_empty_corpus_rejected():
    with pytest.raises(ValueError, match="empty"):
        finetune_ssl(CpcModel(), [], 5, Schedule())


def test_finetune_leaves_original_untouched():
    m = CpcModel(seed=0)
    before = {k: v.data.copy() for k, v in m.params.items()}
    waves = [u.waveform for u in synth_corpus(SynthSpec(), 4, seed=0)]
    tuned = finetune_ssl(m, waves, 2, Schedule("fixed", 1e-3), batch=2, crop=3200)
    assert all(np.array_equal(before[k], m.params[k].data) for k in before)
    assert any(not np.array_equal(before[k], tuned.params[k].data) for k in before)


def test_contrastive_eval_deterministic():
    m = CpcModel(seed=0)
    waves = [u.waveform for u in synth_corpus(SynthSpec(), 3, seed=0)]
    assert contrastive_eval(m, waves, crop=3200) == contrastive_eval(m, waves, crop=3200)
