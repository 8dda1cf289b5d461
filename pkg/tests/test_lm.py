import numpy as np
import pytest

from kesconv.errors import LengthError
from kesconv.lm import LMConfig, MiniLM, PastState, greedy_decode, init_backbone
from kesconv.params import ParamStore
from kesconv.vocab import EOS_ID, UNK_ID, Vocab, detokenize, tokenize

from helpers import TINY, random_ids, tiny_lm


# ---------------------------------------------------------------- tokenizer


@pytest.fixture
def vocab():
    return Vocab.build(["hello , world", "the cat sat"])


def test_tokenize_empty(vocab):
    assert tokenize("", vocab).ids == []


def test_tokenize_punctuation_split(vocab):
    assert tokenize("Hello, world", vocab).ids == [vocab.id("hello"), vocab.id(","), vocab.id("world")]


def test_tokenize_unknown_word(vocab):
    ids = tokenize("the dog sat", vocab).ids
    assert ids == [vocab.id("the"), UNK_ID, vocab.id("sat")]
    assert ids.count(UNK_ID) == 1


def test_detokenize_skips_control_tokens(vocab):
    assert detokenize([2, vocab.id("cat"), EOS_ID], vocab) == "cat"


def test_vocab_round_trip(tmp_path, vocab):
    vocab.save(tmp_path / "v.txt")
    assert Vocab.load(tmp_path / "v.txt").tokens == vocab.tokens


# ---------------------------------------------------------------- forward


def test_empty_past_is_identity():
    m = tiny_lm()
    ids = [5, 6, 7, 8]
    a, _ = m.forward(ids)
    b, _ = m.forward(ids, m.empty_past())
    assert a.data.tobytes() == b.data.tobytes()


def test_causality():
    m = tiny_lm(1)
    rng = np.random.default_rng(0)
    for _ in range(10):
        ids = random_ids(rng, 9, TINY.vocab_size)
        t = int(rng.integers(0, 8))
        edited = list(ids)
        edited[t + 1 + int(rng.integers(0, 8 - t))] = (edited[t + 1] + 1) % TINY.vocab_size
        a, _ = m.forward(ids)
        b, _ = m.forward(edited)
        np.testing.assert_array_equal(a.data[: t + 1], b.data[: t + 1])


def test_chunked_matches_full():
    m = tiny_lm(2)
    rng = np.random.default_rng(1)
    for _ in range(10):
        ids = random_ids(rng, 12, TINY.vocab_size)
        k = int(rng.integers(1, 12))
        full, _ = m.forward(ids)
        _, cache = m.forward(ids[:k])
        tail, _ = m.forward(ids[k:], cache)
        np.testing.assert_allclose(tail.data, full.data[k:], rtol=0, atol=1e-5)


def test_injected_past_conditions_logits():
    m = tiny_lm(3)
    rng = np.random.default_rng(2)
    H, hd = TINY.n_heads, TINY.head_dim
    past = PastState([(rng.normal(size=(H, 4, hd)), rng.normal(size=(H, 4, hd))) for _ in range(TINY.n_layers)],
                     n_virtual=4)
    a, _ = m.forward([5, 6, 7])
    b, _ = m.forward([5, 6, 7], past)
    assert a.data.tobytes() != b.data.tobytes()


def test_virtual_past_does_not_shift_positions():
    m = tiny_lm(4)
    z = np.zeros((TINY.n_heads, 3, TINY.head_dim))
    virtual = PastState([(z, z)] * TINY.n_layers, n_virtual=3)
    assert virtual.position_offset == 0
    _, cache = m.forward([5, 6], virtual)
    assert cache.length == 5 and cache.position_offset == 2


def test_attention_rows_sum_to_one():
    m = tiny_lm(5)
    m.record_attention = True
    rng = np.random.default_rng(3)
    _, cache = m.forward(random_ids(rng, 6, TINY.vocab_size))
    m.forward(random_ids(rng, 4, TINY.vocab_size), cache)
    assert len(m.last_attention) == TINY.n_layers
    for w in m.last_attention:
        np.testing.assert_allclose(w.sum(axis=-1), 1.0, atol=1e-9)


def test_length_limit():
    m = tiny_lm()
    with pytest.raises(LengthError):
        m.forward([5] * (TINY.max_positions + 1))


# ---------------------------------------------------------------- decoding


def _zero_store(cfg, prefix="m."):
    """All-zero weights with unit LN gains: a controllable blank model."""
    w = init_backbone(cfg, np.random.default_rng(0))
    for k in w:
        w[k] = np.ones_like(w[k]) if k.endswith(".g") else np.zeros_like(w[k])
    store = ParamStore()
    return MiniLM.create(cfg, store, prefix, w)


def test_decode_stops_at_eos():
    cfg = LMConfig(vocab_size=8, n_layers=1, n_heads=1, hidden_dim=4, max_positions=16, tie_embeddings=False)
    m = _zero_store(cfg)
    m.p("lm_head").data[:] = 0.0
    # a zero residual stream normalises to zero, so the LN bias carries the signal
    m.p("ln_f.b").data[:] = 1.0
    m.p("lm_head").data[:, EOS_ID] = 1.0
    assert greedy_decode(m, [5, 6], None, 10).ids == [EOS_ID]


def test_decode_is_deterministic():
    m = tiny_lm(6)
    a = greedy_decode(m, [5, 6, 7], None, 8).ids
    b = greedy_decode(m, [5, 6, 7], None, 8).ids
    assert a == b and 1 <= len(a) <= 8


def test_hand_built_continuation():
    """Forced continuation 5 -> 6 -> 7 -> EOS, derived by hand.

    Both blocks are zeroed, so the final hidden state is layer_norm(e_t) with
    e_t = 4 (u_t - u_0): positive only at coordinate t. The untied head sends
    coordinate t to token t + 1, so each argmax is the successor token.
    """
    V, D = 8, 8
    cfg = LMConfig(vocab_size=V, n_layers=2, n_heads=1, hidden_dim=D, max_positions=16, tie_embeddings=False)
    m = _zero_store(cfg)
    # coordinate 0 is a shared sink so every embedding has zero mean
    wte = np.zeros((V, D))
    for t in range(1, V):
        wte[t, t] = 4.0
        wte[t, 0] = -4.0
    m.p("wte").data[:] = wte
    head = np.zeros((D, V))
    for t in range(5, V - 1):
        head[t, t + 1] = 10.0
    head[V - 1, EOS_ID] = 10.0
    m.p("lm_head").data[:] = head
    out = greedy_decode(m, [5], None, 6).ids
    assert out == [6, 7, EOS_ID]
