import math

import numpy as np
import pytest

from gradcheck import RTOL, check_op, check_params
from synrec import tensor as T
from synrec.backbone import BackboneConfig, ContractError, GenerativeBackbone, pad_sequences, sequence_log_probs
from synrec.losses import (
    ViewTriplet,
    build_triplet,
    check_target,
    cosine,
    encode_views,
    multiview_gen_loss,
    pool,
    synergy_contrastive,
    total_loss,
    unimodal_view,
    view_nll,
)
from synrec.tensor import Tensor
from synrec.tokenizer import build_vocab
from synrec.tokenizer.vocab import BOS, MASK, PAD, TEXT, VISION


def scalar_synergy(m, o, u, tau):
    def cos(a, b):
        dot = sum(x * y for x, y in zip(a, b))
        return dot / math.sqrt(sum(x * x for x in a) * sum(y * y for y in b))

    so, su = cos(m, o) / tau, cos(m, u) / tau
    top = max(so, su)
    return -(so - top - math.log(math.exp(so - top) + math.exp(su - top)))


# -- pooling --------------------------------------------------------------------


def test_all_pad_pools_to_zero():
    h = Tensor(np.random.default_rng(0).standard_normal((3, 4)))
    assert pool(h, [PAD, PAD, PAD]).data.tolist() == [0.0] * 4


def test_no_pad_pool_is_mean_up_to_xi():
    h = np.random.default_rng(1).standard_normal((4, 5))
    z = pool(Tensor(h), [5, 6, 7, 8]).data
    assert np.allclose(z, h.mean(axis=0), rtol=2.5e-8, atol=0)
    assert z == pytest.approx(4 / (4 + 1e-7) * h.mean(axis=0), rel=1e-15)


def test_mixed_pad_pool_matches_masked_mean():
    rng = np.random.default_rng(2)
    h = rng.standard_normal((3, 6, 4))
    tgt = np.array([[5, 6, PAD, PAD, PAD, PAD], [5, 6, 7, 8, 9, 10], [5, PAD, PAD, PAD, PAD, PAD]])
    z = pool(Tensor(h), tgt).data
    for b in range(3):
        live = [t for t in range(6) if tgt[b, t] != PAD]
        ref = sum(h[b, t] for t in live) / (len(live) + 1e-7)
        assert z[b] == pytest.approx(ref, rel=1e-14)


def test_pool_shape_mismatch():
    with pytest.raises(T.ShapeError):
        pool(Tensor(np.zeros((3, 2))), [5, 6])


# -- contrastive term -----------------------------------------------------------------------


def test_equal_similarities_give_ln2():
    m = np.array([1.0, 0.0, 0.0])
    loss = synergy_contrastive(Tensor(m), Tensor([0.0, 1.0, 0.0]), Tensor([0.0, 0.0, 1.0])).item()
    assert abs(loss - math.log(2)) < 1e-12


def test_saturated_case_vanishes():
    m = np.array([1.0, 2.0])
    loss = synergy_contrastive(Tensor(m), Tensor(3 * m), Tensor(-m), tau=0.07).item()
    assert loss < 1e-12
    assert loss == pytest.approx(math.log1p(math.exp(-2 / 0.07)), rel=1e-9)


def test_matches_scalar_oracle_on_random_vectors():
    rng = np.random.default_rng(3)
    for _ in range(50):
        m, o, u = (rng.standard_normal(6) for _ in range(3))
        tau = float(rng.uniform(0.05, 1.0))
        ours = synergy_contrastive(Tensor(m), Tensor(o), Tensor(u), tau).item()
        assert ours == pytest.approx(scalar_synergy(m, o, u, tau), rel=1e-12)


def test_batched_form_is_row_mean():
    rng = np.random.default_rng(4)
    m, o, u = (rng.standard_normal((5, 3)) for _ in range(3))
    batched = synergy_contrastive(Tensor(m), Tensor(o), Tensor(u)).item()
    rows = [scalar_synergy(m[i], o[i], u[i], 0.07) for i in range(5)]
    assert batched == pytest.approx(np.mean(rows), rel=1e-12)


def test_contrastive_gradients_match_finite_differences():
    rng = np.random.default_rng(5)
    for _ in range(20):
        arrays = [rng.standard_normal((3, 4)) for _ in range(3)]
        err = check_op(lambda a, b, c: synergy_contrastive(a, b, c, tau=0.5), arrays, rng)
        assert err < RTOL


def test_monotone_in_both_similarities():
    grid = np.linspace(-0.9, 0.9, 7)
    for s_u in grid:
        vals = [math.log1p(math.exp((s_u - s_o) / 0.07)) for s_o in grid]
        assert all(a > b for a, b in zip(vals, vals[1:]))
    m = np.array([1.0, 0.0])
    prev = None
    for angle in np.linspace(0.1, 3.0, 8):
        u = np.array([math.cos(angle), math.sin(angle)])
        v = synergy_contrastive(Tensor(m), Tensor([math.cos(1.0), math.sin(1.0)]), Tensor(u)).item()
        assert 0 < v < math.inf
        if prev is not None:
            assert v < prev
        prev = v


def test_zero_norm_is_finite_and_flagged(caplog):
    z = np.zeros(3)
    with caplog.at_level("WARNING"):
        loss = synergy_contrastive(Tensor(z), Tensor([1.0, 0, 0]), Tensor([0, 1.0, 0])).item()
    assert loss == pytest.approx(math.log(2))
    assert "zero-norm" in caplog.text
    assert cosine(Tensor(z), Tensor(z)).item() == 0.0


def test_bad_temperature():
    with pytest.raises(ValueError):
        synergy_contrastive(Tensor([1.0]), Tensor([1.0]), Tensor([1.0]), tau=0.0)


# -- generative term ------------------------------------------------------------------------


def tiny_model(vocab, seed=0):
    return GenerativeBackbone(BackboneConfig(vocab_size=vocab.size, d_model=16, n_heads=2, head_dim=8, n_layers=1,
                                             d_ff=32, max_len=24, max_target_len=8, seed=seed))


def test_uniform_logits_give_three_views_of_full_identifier():
    vocab = build_vocab(3, 256)
    assert vocab.size == 1540
    model = tiny_model(vocab)
    model.head.weight.data[:] = 0.0
    model.head.bias.data[:] = 0.0
    hist = [vocab.token_of(TEXT, 1, 3), vocab.token_of(VISION, 1, 4), vocab.token_of(TEXT, 2, 9)]
    Y = [vocab.token_of(TEXT, d, 1) for d in (1, 2, 3)] + [vocab.token_of(VISION, d, 2) for d in (1, 2, 3)]
    trip = ViewTriplet(np.array(hist), np.array([MASK] + hist[1:]), unimodal_view(hist, vocab, TEXT), TEXT)
    val = multiview_gen_loss(model, trip, Y, vocab).item()
    assert abs(val - 18 * math.log(1540)) < 1e-9


def _history(vocab, rng, items=3):
    toks = []
    for _ in range(items):
        toks += [vocab.token_of(TEXT, d, int(rng.integers(vocab.codebook_size))) for d in range(1, vocab.depth + 1)]
        toks += [vocab.token_of(VISION, d, int(rng.integers(vocab.codebook_size))) for d in range(1, vocab.depth + 1)]
    return np.array(toks)


def test_zero_ratio_mask_view_equals_original_nll():
    vocab = build_vocab(2, 8)
    rng = np.random.default_rng(6)
    model = tiny_model(vocab)
    hist = _history(vocab, rng)
    with T.no_grad():
        maps = model.encode(hist).maps[0]
    trip = build_triplet(hist, maps, vocab, VISION, 0.0)
    assert np.array_equal(trip.mask, trip.ori)
    Y = _history(vocab, rng, items=1)
    ids, _ = pad_sequences([trip.ori, trip.mask])
    with T.no_grad():
        lp = sequence_log_probs(model, model.encode(ids), np.array([Y, Y]))
    assert lp[0] == lp[1]


def test_multiview_loss_is_sum_of_single_view_nlls():
    vocab = build_vocab(2, 8)
    rng = np.random.default_rng(7)
    for seed in range(3):
        model = tiny_model(vocab, seed)
        hists = [_history(vocab, rng, items=k) for k in (2, 3)]
        Y = np.stack([_history(vocab, rng, items=1) for _ in range(2)])
        trips = []
        for h in hists:
            with T.no_grad():
                maps = model.encode(h).maps[0]
            trips.append(build_triplet(h, maps, vocab, TEXT, 0.5))
        ori, _ = pad_sequences([t.ori for t in trips])
        msk, _ = pad_sequences([t.mask for t in trips])
        uni, _ = pad_sequences([t.uni for t in trips])
        batch = ViewTriplet(ori, msk, uni, TEXT)
        with T.no_grad():
            ours = multiview_gen_loss(model, batch, Y, vocab).item()
        ref = 0.0
        for b, t in enumerate(trips):
            for view in (t.ori, t.mask, t.uni):
                with T.no_grad():
                    ref -= sequence_log_probs(model, model.encode(view), Y[b : b + 1])[0]
        assert ours == pytest.approx(ref / 2, rel=1e-10)


def test_unimodal_view_keeps_one_modality():
    vocab = build_vocab(2, 8, n_suffix=2)
    toks = [BOS, vocab.token_of(TEXT, 1, 0), vocab.token_of(VISION, 2, 1), vocab.suffix_start, PAD]
    assert unimodal_view(toks, vocab, TEXT).tolist() == [BOS, vocab.token_of(TEXT, 1, 0)]
    assert unimodal_view(toks, vocab, VISION).tolist() == [BOS, vocab.token_of(VISION, 2, 1)]
    with pytest.raises(ValueError):
        unimodal_view(toks, vocab, "audio")


def test_check_target_contract():
    vocab = build_vocab(2, 8)
    t = vocab.token_of(TEXT, 1, 0)
    v = vocab.token_of(VISION, 1, 0)
    with pytest.raises(ContractError):
        check_target([PAD, PAD])
    with pytest.raises(ContractError):
        check_target([PAD, t])
    with pytest.raises(ContractError):
        check_target([t, MASK])
    with pytest.raises(ContractError):
        check_target([t, vocab.size], vocab)
    with pytest.raises(ContractError):
        check_target([t, v], vocab, TEXT)
    assert check_target([t, t, PAD], vocab, TEXT).tolist() == [[t, t, PAD]]


def test_total_loss_arithmetic():
    assert total_loss(2.0, 0.5, 0.003) == pytest.approx(2.0015, abs=1e-15)
    assert total_loss(2.0, 0.5, 0.0) == 2.0
    with pytest.raises(ValueError):
        total_loss(2.0, 0.5, -1.0)


def composite_loss(model, vocab, batch, Y, lam=0.5, tau=0.5):
    """The full objective for one sub-task: generative NLL over three views plus the contrastive term."""
    B = Y.shape[0]
    enc = encode_views(model, [batch.ori, batch.mask, batch.uni])
    targets = np.concatenate([Y, Y, Y])
    hidden, logits = model.teacher_forced(targets, enc)
    l_gen = view_nll(logits, targets, np.ones(3 * B), B)
    z = pool(hidden, targets)
    l_syn = synergy_contrastive(z[B : 2 * B], z[:B], z[2 * B :], tau)
    return total_loss(l_gen, l_syn, lam)


@pytest.mark.parametrize("seed", range(4))
def test_composite_objective_gradients(seed):
    vocab = build_vocab(2, 4)
    rng = np.random.default_rng(100 + seed)
    model = tiny_model(vocab, seed)
    hists = [_history(vocab, rng, 2) for _ in range(3)]
    ori, _ = pad_sequences(hists)
    msk = ori.copy()
    msk[:, 1] = MASK
    uni, _ = pad_sequences([unimodal_view(h, vocab, TEXT) for h in hists])
    Y = np.stack([_history(vocab, rng, 1) for _ in range(3)])
    Y[0, -1] = PAD
    batch = ViewTriplet(ori, msk, uni, TEXT)
    err = check_params(lambda: composite_loss(model, vocab, batch, Y), model.parameters(), rng, per_param=3)
    assert err < RTOL
