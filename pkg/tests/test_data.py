import json

import numpy as np
import pytest

from kesconv import pipeline
from kesconv.config import RunConfig
from kesconv.data import Dialogue, Turn, extract_examples, load_dialogues, synth_corpus
from kesconv.errors import DataError
from kesconv.retriever import top1
from kesconv.vocab import split_words

from helpers import kb_entries


def dialogue(*speakers):
    return Dialogue("d", tuple(Turn(s, f"turn {i}") for i, s in enumerate(speakers)))


def test_two_turns_one_example():
    ex = extract_examples([dialogue("seeker", "supporter")])
    assert len(ex) == 1 and ex[0].context == ("turn 0",) and ex[0].response == "turn 1"


def test_supporter_first_turn_skipped():
    assert extract_examples([dialogue("supporter", "seeker")], require=False) == []
    with pytest.raises(DataError, match="no usable examples"):
        extract_examples([dialogue("supporter")])


def test_ten_turns_five_examples():
    ex = extract_examples([dialogue(*(["seeker", "supporter"] * 5))])
    assert [len(e.context) for e in ex] == [1, 3, 5, 7, 9]


def test_consecutive_same_speaker_allowed():
    ex = extract_examples([dialogue("seeker", "seeker", "supporter", "supporter")])
    assert len(ex) == 2


def test_malformed_line_reports_number(tmp_path):
    good = json.dumps({"id": "a", "turns": [{"speaker": "seeker", "text": "hi"}]})
    path = tmp_path / "d.jsonl"
    path.write_text(good + "\n" + good + "\n{not json\n")
    with pytest.raises(DataError, match="line 3"):
        load_dialogues(path)
    path.write_text(good + "\n" + json.dumps({"id": "b", "dialog": []}) + "\n")
    with pytest.raises(DataError, match="line 2"):
        load_dialogues(path)


def test_synth_is_deterministic(tmp_path):
    synth_corpus(3, 12, 5, tmp_path / "a")
    synth_corpus(3, 12, 5, tmp_path / "b")
    for name in ("dialogues.jsonl", "kb.jsonl", "truth.jsonl"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert len(load_dialogues(tmp_path / "a" / "dialogues.jsonl")) == 12


def test_synth_length_statistics():
    dialogues, kb, _ = synth_corpus(0, 120, 100)
    responses = [t.text for d in dialogues for t in d.turns if t.speaker == "supporter"][:200]
    assert len(responses) == 200
    assert 12.8 <= np.mean([len(split_words(r)) for r in responses]) <= 19.2
    assert 114 * 0.8 <= np.mean([len(split_words(e["question"])) for e in kb]) <= 114 * 1.2
    assert 36 * 0.8 <= np.mean([len(split_words(e["answer"])) for e in kb]) <= 36 * 1.2


def test_synth_topic_word_is_unique_to_one_question():
    dialogues, kb, truth = synth_corpus(1, 30, 20)
    questions = {e["id"]: set(split_words(e["question"])) for e in kb}
    own = {k: q - set().union(*(o for j, o in questions.items() if j != k)) for k, q in questions.items()}
    for d in dialogues:
        words = set(split_words(" ".join(t.text for t in d.turns)))
        assert {k for k, u in own.items() if words & u} == {truth[d.id]}


def test_synth_retrieval_accuracy():
    dialogues, kb, truth = synth_corpus(0, 120, 50)
    cfg = RunConfig()
    kb = kb_entries(kb)
    vocab = pipeline.build_vocab(dialogues, kb)
    embedder = pipeline.make_embedder(cfg, vocab)
    index = pipeline.index_kb(cfg, vocab, kb)
    examples = extract_examples(dialogues)[:200]
    assert len(examples) == 200
    hits = sum(top1(index, embedder, ex.context)[0].id == truth[ex.dialogue_id] for ex in examples)
    assert hits / len(examples) >= 0.95
