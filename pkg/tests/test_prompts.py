import numpy as np
import pytest

from kesconv import tensor as T
from kesconv.errors import DimensionError
from kesconv.gradcheck import check_gradients
from kesconv.lm import LMConfig
from kesconv.prompts import KESConv, combine, context_token_ids, truncate_knowledge
from kesconv.trainer import compute_loss
from kesconv.vocab import SEP_ID

from helpers import TINY, random_example, random_ids, tiny_kesconv

DEFAULTS = LMConfig(vocab_size=40, max_positions=64)


@pytest.fixture(scope="module")
def default_model():
    return KESConv.initialize(DEFAULTS, seed=0)


def _bytes(past):
    return b"".join(k.data.tobytes() + v.data.tobytes() for k, v in past.layers)


def test_default_prompt_shapes(default_model):
    m = default_model
    kp = m.encode_knowledge_prompt([5, 6, 7, 8])
    cp = m.encode_context_prompt([9, SEP_ID, 10])
    H, hd = DEFAULTS.n_heads, DEFAULTS.head_dim
    assert kp.length == 5 and cp.length == 10
    for k, v in kp.layers:
        assert k.shape == v.shape == (H, 5, hd)
    both = combine(kp, cp)
    assert both.length == 15 and both.n_virtual == 15 and both.position_offset == 0


def test_different_knowledge_changes_past():
    m = tiny_kesconv(1)
    assert _bytes(m.encode_knowledge_prompt([5, 6, 7])) != _bytes(m.encode_knowledge_prompt([5, 6, 8]))


def test_zero_output_layer_gives_zero_past():
    m = tiny_kesconv(2)
    m.store["reparam.knowledge.w2"].data[:] = 0.0
    m.store["reparam.knowledge.b2"].data[:] = 0.0
    for ids in ([5, 6], [7, 8, 9, 10, 11]):
        past = m.encode_knowledge_prompt(ids)
        assert all(not k.data.any() and not v.data.any() for k, v in past.layers)


def test_prepending_context_token_changes_every_prompt_state():
    m = tiny_kesconv(3)
    a = m.encode_context_prompt([6, 7, 8])
    b = m.encode_context_prompt([5, 6, 7, 8])
    for (ka, _), (kb, _) in zip(a.layers, b.layers):
        for j in range(m.d_context):
            assert not np.array_equal(ka.data[:, j], kb.data[:, j])


def test_prompt_embedding_gradient():
    m = tiny_kesconv(4)
    ex = random_example(np.random.default_rng(0), TINY.vocab_size)
    err = check_gradients(lambda: compute_loss(m, ex), [m.store["prompt.context.embeddings"]], max_entries=8)
    assert err < 1e-4


def test_combine_with_empty_knowledge_is_identity():
    m = tiny_kesconv(5)
    cp = m.encode_context_prompt([5, 6])
    out = combine(m.rgd.empty_past(), cp)
    assert _bytes(out) == _bytes(cp) and out.n_virtual == cp.length


def test_slicing_recovers_inputs():
    m = tiny_kesconv(6)
    kp, cp = m.encode_knowledge_prompt([5, 6, 7]), m.encode_context_prompt([8, 9])
    both = combine(kp, cp)
    assert _bytes(both.slice(0, kp.length)) == _bytes(kp)
    assert _bytes(both.slice(kp.length, both.length)) == _bytes(cp)


def test_combine_rejects_mismatch():
    m = tiny_kesconv(7)
    other = tiny_kesconv(7, cfg=LMConfig(vocab_size=13, n_layers=1, n_heads=2, hidden_dim=8, max_positions=48))
    with pytest.raises(DimensionError):
        combine(m.encode_knowledge_prompt([5]), other.encode_context_prompt([5]))
    _, cached = m.rgd.forward([5, 6])
    with pytest.raises(DimensionError):
        combine(m.rgd.empty_past(), cached)


def test_every_trainable_group_gets_gradient():
    m = tiny_kesconv(8)
    ex = random_example(np.random.default_rng(1), TINY.vocab_size)
    m.store.zero_grad()
    T.backward(compute_loss(m, ex))
    for name, p in m.store.trainable():
        assert name.startswith(("cpe.", "kpe.", "prompt.", "reparam."))
        assert p.grad is not None, name
    for prefix in ("cpe.", "kpe.", "prompt.knowledge", "prompt.context", "reparam.knowledge", "reparam.context"):
        assert any(np.any(p.grad != 0) for n, p in m.store.trainable() if n.startswith(prefix)), prefix
    assert all(m.store[n].grad is None for n in m.store.names("rgd."))


def test_encoding_is_deterministic():
    a, b = tiny_kesconv(9), tiny_kesconv(9)
    ids = random_ids(np.random.default_rng(2), 6, TINY.vocab_size)
    assert _bytes(a.prompt_past(ids, ids)) == _bytes(b.prompt_past(ids, ids))


def test_backbones_start_identical(default_model):
    s = default_model.store
    for name in s.names("rgd."):
        leaf = name[len("rgd."):]
        assert s["cpe." + leaf].data.tobytes() == s[name].data.tobytes() == s["kpe." + leaf].data.tobytes()
    assert s.frozen_names == frozenset(s.names("rgd."))


def test_prompts_warm_start_from_frequent_tokens(default_model):
    s = default_model.store
    np.testing.assert_array_equal(s["prompt.context.embeddings"].data, s["rgd.wte"].data[5:15])


def test_truncation_rules():
    assert truncate_knowledge(list(range(100)), 64) == list(range(64))
    utts = [[5] * 4, [6] * 4, [7] * 4]
    assert context_token_ids(utts, 9) == [6] * 4 + [SEP_ID] + [7] * 4
    assert context_token_ids([[5, 6, 7, 8]], 2) == [7, 8]
