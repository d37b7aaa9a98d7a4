import csv

import numpy as np
import pytest

from synrec.saliency import (
    DiagnosisError,
    apply_mask,
    dominant_modality,
    mask_count,
    profile,
    saliency_scores,
    write_diagnostics,
)
from synrec.tokenizer.vocab import MASK, TEXT, VISION


def random_maps(rng, M, N):
    a = rng.random((M, N, N))
    return a / a.sum(axis=-1, keepdims=True)


def test_uniform_attention_gives_uniform_scores():
    N = 5
    s = saliency_scores(np.full((3, N, N), 1.0 / N))
    assert s == pytest.approx(np.full(N, 1.0 / N))


def test_one_hot_attention_concentrates_on_token_zero():
    A = np.zeros((2, 4, 4))
    A[:, :, 0] = 1.0
    assert saliency_scores(A).tolist() == [1.0, 0.0, 0.0, 0.0]


def test_scores_match_triple_loop():
    rng = np.random.default_rng(0)
    for _ in range(20):
        A = random_maps(rng, 2, 3)
        ref = np.zeros(3)
        for i in range(3):
            for m in range(2):
                for j in range(3):
                    ref[i] += A[m, j, i]
        ref /= 2 * 3
        assert saliency_scores(A) == pytest.approx(ref, rel=1e-14)


def test_scores_non_negative_and_sum_to_one():
    rng = np.random.default_rng(1)
    for N in (1, 4, 9):
        s = saliency_scores(random_maps(rng, 3, N))
        assert np.all(s >= 0)
        assert s.sum() == pytest.approx(1.0)


def test_padding_leaves_live_scores_unchanged():
    rng = np.random.default_rng(2)
    live = random_maps(rng, 2, 3)
    padded = np.zeros((2, 5, 5))
    padded[:, :3, :3] = live
    # pad query rows hold arbitrary junk that must be ignored
    padded[:, 3:, :] = 0.2
    pad = np.array([False, False, False, True, True])
    s = saliency_scores(padded, pad)
    assert s[:3] == pytest.approx(saliency_scores(live), rel=1e-14)
    assert s[3:].tolist() == [0.0, 0.0]


def test_batched_scores_equal_per_row():
    rng = np.random.default_rng(3)
    maps = np.stack([random_maps(rng, 2, 4) for _ in range(3)])
    pad = np.zeros((3, 4), dtype=bool)
    pad[1, 3] = True
    maps[1, :, :, 3] = 0.0
    maps[1] /= maps[1].sum(axis=-1, keepdims=True)
    batched = saliency_scores(maps, pad)
    for b in range(3):
        assert batched[b] == pytest.approx(saliency_scores(maps[b], pad[b]))


def test_token_permutation_permutes_scores():
    rng = np.random.default_rng(4)
    A = random_maps(rng, 3, 5)
    perm = rng.permutation(5)
    B = A[:, perm][:, :, perm]
    assert saliency_scores(B) == pytest.approx(saliency_scores(A)[perm])


def test_tie_goes_to_text_and_vision_wins_when_heavier():
    s = np.full(4, 0.25)
    assert dominant_modality(s, [0, 1], [2, 3])[2] == TEXT
    assert dominant_modality(np.array([0.1, 0.1, 0.4, 0.4]), [0, 1], [2, 3])[2] == VISION


def test_densities_match_independent_means():
    rng = np.random.default_rng(5)
    s = rng.random(10)
    lt, lv, _ = dominant_modality(s, [0, 2, 4], [5, 7, 9, 1])
    assert lt == pytest.approx(sum(s[i] for i in (0, 2, 4)) / 3)
    assert lv == pytest.approx(sum(s[i] for i in (5, 7, 9, 1)) / 4)


def test_empty_modality_cannot_be_diagnosed():
    with pytest.raises(DiagnosisError):
        dominant_modality(np.ones(3), [], [0, 1])


def test_profile_partitions_modal_tokens():
    prof = profile(np.ones(6) / 6, [-1, 0, 0, 1, 1, -1])
    assert prof.text_idx.tolist() == [1, 2] and prof.vision_idx.tolist() == [3, 4]


def _profile(scores, mods):
    return profile(np.asarray(scores, dtype=float), mods)


def test_r_zero_is_identity_and_r_one_masks_all_dominant():
    toks = np.arange(10, 18)
    mods = [0, 0, 0, 0, 1, 1, 1, 1]
    prof = _profile([0.3, 0.2, 0.2, 0.1, 0.05, 0.05, 0.05, 0.05], mods)
    view = apply_mask(toks, prof, 0.0)
    assert np.array_equal(view.tokens, toks) and view.masked.size == 0
    full = apply_mask(toks, prof, 1.0)
    assert full.tokens[:4].tolist() == [MASK] * 4
    assert np.array_equal(full.tokens[4:], toks[4:])


def test_six_dominant_tokens_at_point_three_masks_top_two():
    rng = np.random.default_rng(6)
    scores = rng.random(9)
    mods = [1, 0, 1, 0, 0, 0, 1, 0, 0]
    scores[[1, 3, 4, 5, 7, 8]] += 10  # text dominant
    prof = _profile(scores, mods)
    toks = np.arange(20, 29)
    view = apply_mask(toks, prof, 0.3)
    dom = prof.text_idx
    expected = sorted(dom[np.argsort(-scores[dom])[:2]].tolist())
    assert view.masked.tolist() == expected
    keep = np.setdiff1d(np.arange(9), expected)
    assert np.array_equal(view.tokens[keep], toks[keep])
    assert (view.tokens[expected] == MASK).all()


def test_score_ties_mask_lower_positions():
    prof = _profile([0.2, 0.2, 0.2, 0.2, 0.1, 0.1], [0, 0, 0, 0, 1, 1])
    view = apply_mask(np.arange(10, 16), prof, 0.5)
    assert view.masked.tolist() == [0, 1]


def test_mask_count_ceiling_and_monotone():
    assert mask_count(0.3, 6) == 2
    assert mask_count(0.1, 3) == 1
    assert mask_count(0.1 * 3, 10) == 3
    counts = [mask_count(r / 10, 7) for r in range(11)]
    assert counts == sorted(counts) and counts[0] == 0 and counts[-1] == 7
    with pytest.raises(ValueError):
        mask_count(1.5, 4)


def test_random_masking_keeps_count_and_containment():
    rng = np.random.default_rng(7)
    mods = [0, 1] * 6
    scores = np.linspace(0.0, 1.0, 12)
    prof = _profile(scores, mods)
    for r in np.linspace(0, 1, 11):
        view = apply_mask(np.arange(12) + 10, prof, r, rng=rng)
        assert len(view.masked) == mask_count(r, 6)
        assert set(view.masked.tolist()) <= set(prof.dominant_idx().tolist())


def test_diagnostics_csv(tmp_path):
    path = tmp_path / "diag.csv"
    write_diagnostics(path, [("synth", 1, 0.2, 0.3, VISION)])
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["dataset", "step", "text_density", "vision_density", "dominant"]
    assert rows[1] == ["synth", "1", "0.2", "0.3", VISION]
