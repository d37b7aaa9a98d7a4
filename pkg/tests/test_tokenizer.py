import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from synrec.tokenizer import (
    BOS,
    EOS,
    MASK,
    PAD,
    TEXT,
    VISION,
    CodebookStack,
    InsufficientDataError,
    RQConfig,
    RqVaeModel,
    UntrainedModelError,
    build_vocab,
    decode_identifier,
    kmeans,
    quantize,
    quantize_batch,
    read_identifier_map,
    tokenize_item,
    tokenize_items,
    train_rqvae,
    write_identifier_map,
)
from synrec.tokenizer.io import (
    FormatError,
    read_codebook,
    read_embeddings,
    sidecar_path,
    write_codebook,
    write_embeddings,
)


def brute_quantize(z, books):
    """Per-level nearest codeword by explicit loops; first minimum wins."""
    r = np.array(z, dtype=float)
    codes, norms = [], [np.linalg.norm(r)]
    for book in books:
        best, best_d = 0, None
        for k, e in enumerate(book):
            d = float(sum((a - b) ** 2 for a, b in zip(r, e)))
            if best_d is None or d < best_d:
                best, best_d = k, d
        codes.append(best)
        r = r - book[best]
        norms.append(np.linalg.norm(r))
    return codes, r, norms


# -- quantization -------------------------------------------------------------


def test_quantize_worked_example():
    stack = CodebookStack(TEXT, np.array([[[0.0, 0.0], [1.0, 1.0]]]))
    codes, res = quantize(np.array([0.9, 1.2]), stack)
    assert codes.tolist() == [1]
    assert res == pytest.approx([-0.1, 0.2])


def test_exact_match_with_zero_codewords_leaves_no_residual():
    rng = np.random.default_rng(0)
    books = rng.standard_normal((3, 4, 5))
    books[1, 2] = 0.0
    books[2, 0] = 0.0
    codes, res = quantize(books[0, 3].copy(), CodebookStack(TEXT, books))
    assert codes.tolist() == [3, 2, 0]
    assert np.all(res == 0.0)


def test_quantize_matches_brute_force_k8_d3():
    rng = np.random.default_rng(1)
    books = rng.standard_normal((3, 8, 4))
    stack = CodebookStack(VISION, books)
    for _ in range(50):
        z = rng.standard_normal(4)
        codes, res = quantize(z, stack)
        ref_codes, ref_res, _ = brute_quantize(z, books)
        assert codes.tolist() == ref_codes
        assert np.allclose(res, ref_res, atol=1e-12)


def test_ties_go_to_lowest_index():
    books = np.array([[[1.0, 0.0], [-1.0, 0.0], [1.0, 0.0]]])
    codes, _ = quantize(np.array([0.0, 0.0]), CodebookStack(TEXT, books))
    assert codes.tolist() == [0]
    codes, _ = quantize(np.array([2.0, 0.0]), CodebookStack(TEXT, books))
    assert codes.tolist() == [0]


def test_quantize_dimension_mismatch_raises():
    stack = CodebookStack(TEXT, np.zeros((2, 3, 4)))
    with pytest.raises(ValueError):
        quantize(np.zeros(5), stack)


def test_codebook_stack_rejects_non_finite():
    bad = np.zeros((1, 2, 2))
    bad[0, 0, 0] = np.nan
    with pytest.raises(ValueError):
        CodebookStack(TEXT, bad)


def test_batch_quantize_agrees_with_single():
    rng = np.random.default_rng(2)
    stack = CodebookStack(TEXT, rng.standard_normal((2, 6, 3)))
    Z = rng.standard_normal((20, 3))
    codes, res, _ = quantize_batch(Z, stack)
    for i in range(20):
        c, r = quantize(Z[i], stack)
        assert codes[i].tolist() == c.tolist()
        assert np.array_equal(res[i], r)


# -- vocabulary ---------------------------------------------------------------


def test_vocab_sizes():
    assert build_vocab(1, 2).size == 8
    assert build_vocab(3, 256).size == 1540
    assert (PAD, BOS, EOS, MASK) == (0, 1, 2, 3)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 5), st.integers(1, 40), st.integers(0, 3))
def test_vocab_is_a_bijection(D, K, n_suffix):
    v = build_vocab(D, K, n_suffix)
    seen = set()
    for mod in (TEXT, VISION):
        for depth in range(1, D + 1):
            for code in range(K):
                t = v.token_of(mod, depth, code)
                assert v.decode(t) == (mod, depth, code)
                assert v.parse(v.name(t)) == t
                seen.add(t)
    assert seen == set(range(4, 4 + 2 * D * K))
    mods = v.modality_ids(np.arange(v.size))
    assert set(np.flatnonzero(mods == 0)).isdisjoint(np.flatnonzero(mods == 1))
    for t in list(range(4)) + list(range(v.suffix_start, v.size)):
        assert v.is_special(t) and v.parse(v.name(t)) == t


def test_text_depth2_code5_round_trip():
    v = build_vocab(3, 8)
    t = v.token_of(TEXT, 2, 5)
    assert v.decode(t) == (TEXT, 2, 5)
    assert v.name(t) == "b_5"
    assert v.name(v.token_of(VISION, 1, 0)) == "A_0"


def test_vocab_rejects_out_of_range():
    v = build_vocab(2, 4)
    with pytest.raises(ValueError):
        v.token_of(TEXT, 3, 0)
    with pytest.raises(ValueError):
        v.token_of(VISION, 1, 4)
    with pytest.raises(ValueError):
        v.decode(PAD)


# -- RQ-VAE training ---------------------------------------------------------------


def test_kmeans_on_constant_data_is_finite():
    X = np.ones((10, 3))
    c = kmeans(X, 4, 10, np.random.default_rng(0))
    assert c.shape == (4, 3) and np.all(np.isfinite(c))


def test_insufficient_data():
    with pytest.raises(InsufficientDataError):
        train_rqvae(np.zeros((3, 2)), RQConfig(codebook_size=4, epochs=1), TEXT)


def test_identity_init_recovers_k_distinct_points():
    rng = np.random.default_rng(3)
    K, d = 8, 4
    X = rng.standard_normal((K, d)) * 3
    cfg = RQConfig(depth=2, codebook_size=K, latent_dim=d, hidden_dim=2 * d, identity_init=True,
                   epochs=30, batch_size=K, lr=1e-4, seed=0)
    model = train_rqvae(X, cfg, TEXT)
    per_point = ((model.reconstruct(X, levels=1) - X) ** 2).sum(axis=1)
    assert per_point.max() < 1e-3


def test_constant_dataset_gets_identical_codes():
    X = np.tile(np.array([0.3, -1.2, 0.5]), (16, 1))
    model = train_rqvae(X, RQConfig(depth=2, codebook_size=4, latent_dim=3, hidden_dim=6, epochs=3, seed=1), VISION)
    codes = model.codes(X)
    assert (codes == codes[0]).all()


def _synthetic_rows(n, rng):
    centres = rng.standard_normal((16, 32)) * 2
    return centres[rng.integers(0, 16, n)] + 0.3 * rng.standard_normal((n, 32))


def test_training_reduces_error_and_depth_helps_on_held_out():
    rng = np.random.default_rng(4)
    X = _synthetic_rows(1024, rng)
    held = _synthetic_rows(256, rng)
    cfg = RQConfig(depth=3, codebook_size=32, epochs=15, seed=0)
    model = train_rqvae(X, cfg, TEXT)
    assert model.recon_history[-1] <= 0.9 * model.recon_history[0]
    assert model.usage is not None and model.usage.shape == (3, 32)
    _, _, residuals = quantize_batch(model.encode(held), model.stack)
    final = np.linalg.norm(held_residual(model, held), axis=1).mean()
    depth1 = np.linalg.norm(residuals[:, 1], axis=1).mean()
    assert final < depth1


def held_residual(model, X):
    _, res, _ = quantize_batch(model.encode(X), model.stack)
    return res


def test_training_is_deterministic():
    X = _synthetic_rows(128, np.random.default_rng(5))
    cfg = RQConfig(depth=2, codebook_size=8, epochs=3, seed=7)
    a, b = train_rqvae(X, cfg, TEXT), train_rqvae(X, cfg, TEXT)
    assert np.array_equal(a.stack.codebooks, b.stack.codebooks)
    assert np.array_equal(a.codes(X), b.codes(X))


# -- identifiers ----------------------------------------------------------------


@pytest.fixture(scope="module")
def quantizers():
    rng = np.random.default_rng(6)
    T_emb = _synthetic_rows(64, rng)
    V_emb = _synthetic_rows(64, rng)
    cfg = RQConfig(depth=3, codebook_size=8, epochs=3, seed=0)
    return T_emb, V_emb, train_rqvae(T_emb, cfg, TEXT), train_rqvae(V_emb, cfg, VISION)


def test_identifier_layout_and_round_trip(quantizers):
    T_emb, V_emb, mt, mv = quantizers
    vocab = build_vocab(3, 8)
    ident = tokenize_item("x", T_emb[0], V_emb[0], mt, mv, vocab)
    assert len(ident.tokens) == 6
    triples = decode_identifier(ident.tokens, vocab)
    assert triples == [(TEXT, d + 1, c) for d, c in enumerate(ident.text_codes)] + \
                      [(VISION, d + 1, c) for d, c in enumerate(ident.vision_codes)]


def test_identical_items_share_codes_and_get_suffixes(quantizers):
    T_emb, V_emb, mt, mv = quantizers
    vocab = build_vocab(3, 8)
    a = tokenize_item("a", T_emb[1], V_emb[1], mt, mv, vocab)
    b = tokenize_item("b", T_emb[1], V_emb[1], mt, mv, vocab)
    assert a.tokens == b.tokens
    ids = ["p", "q", "r"]
    idents, v2 = tokenize_items(ids, T_emb[[1, 1, 2]], V_emb[[1, 1, 2]], mt, mv, vocab)
    assert v2.n_suffix == 2
    assert len({i.tokens for i in idents}) == 3
    assert idents[0].tokens[:6] == idents[1].tokens[:6]
    assert idents[0].suffix == 0 and idents[1].suffix == 1 and idents[2].suffix is None


def test_untrained_or_mismatched_models_are_rejected(quantizers):
    T_emb, V_emb, mt, mv = quantizers
    fresh = RqVaeModel(32, RQConfig(codebook_size=8), TEXT, np.random.default_rng(0))
    with pytest.raises(UntrainedModelError):
        tokenize_item("x", T_emb[0], V_emb[0], fresh, mv, build_vocab(3, 8))
    with pytest.raises(ValueError):
        tokenize_item("x", T_emb[0], V_emb[0], mt, mv, build_vocab(3, 16))


# -- files ------------------------------------------------------------------------


def test_identifier_map_round_trip(tmp_path, quantizers):
    T_emb, V_emb, mt, mv = quantizers
    idents, vocab = tokenize_items(["a", "b", "c"], T_emb[[0, 0, 3]], V_emb[[0, 0, 3]], mt, mv, build_vocab(3, 8))
    path = tmp_path / "ids.tsv"
    write_identifier_map(path, idents, vocab)
    assert read_identifier_map(path, vocab) == idents
    first = path.read_text().splitlines()[0]
    assert first.startswith("a\ta_") and first.endswith("#0")


def test_embedding_file_round_trip_is_byte_exact(tmp_path):
    table = np.random.default_rng(7).standard_normal((5, 3)).astype(np.float32).astype(np.float64)
    path = tmp_path / "t.emb"
    write_embeddings(path, VISION, list("abcde"), table)
    raw = path.read_bytes()
    assert raw[:4] == b"SGE1" and raw[4] == 1 and len(raw) == 4 + 1 + 16 + 60
    mod, ids, back = read_embeddings(path)
    assert (mod, ids) == (VISION, list("abcde"))
    assert np.array_equal(back, table)
    write_embeddings(tmp_path / "u.emb", mod, ids, back)
    assert (tmp_path / "u.emb").read_bytes() == raw


def test_embedding_file_errors(tmp_path):
    path = tmp_path / "t.emb"
    write_embeddings(path, TEXT, ["a", "b"], np.ones((2, 2)))
    raw = path.read_bytes()
    path.write_bytes(b"NOPE" + raw[4:])
    with pytest.raises(FormatError, match="offset 0"):
        read_embeddings(path)
    path.write_bytes(raw[:-2])
    with pytest.raises(FormatError, match="truncated"):
        read_embeddings(path)
    path.write_bytes(raw)
    sidecar_path(path).write_text("a\n")
    with pytest.raises(FormatError):
        read_embeddings(path)


def test_codebook_file_round_trip(tmp_path):
    books = np.random.default_rng(8).standard_normal((2, 3, 4)).astype(np.float32).astype(np.float64)
    stack = CodebookStack(TEXT, books)
    write_codebook(tmp_path / "c.cb", stack)
    back = read_codebook(tmp_path / "c.cb")
    assert back.modality == TEXT and np.array_equal(back.codebooks, books)
    raw = (tmp_path / "c.cb").read_bytes()
    (tmp_path / "c.cb").write_bytes(raw[:-1])
    with pytest.raises(FormatError):
        read_codebook(tmp_path / "c.cb")
