"""Tokenizer, dataset schema, span alignment, packing, and synthetic corpus."""

import json

import numpy as np
import pytest

from spokenqa.data import (
    A_MARK,
    CLS,
    PAD,
    Q_MARK,
    RESERVED,
    SEP,
    UNK,
    Example,
    Story,
    Tokenizer,
    Turn,
    align_best_span,
    build_examples,
    generate_synthetic,
    load_dataset,
    load_examples,
    save_dataset,
    save_examples,
    speech_tokens,
)
from spokenqa.errors import DataError, ParameterError
from spokenqa.evaluation import token_f1
from spokenqa.noise import NoiseSpec, corrupt_stories


# -- tokenizer ----------------------------------------------------------------


def test_tokenize_splits_words_and_punctuation():
    assert Tokenizer.tokenize("What color was Cotton?") == \
        ["what", "color", "was", "cotton", "?"]
    assert Tokenizer.tokenize("it's a cat-dog.") == \
        ["it", "'", "s", "a", "cat", "-", "dog", "."]


def test_tokenize_with_offsets_maps_back():
    text = "Cotton lived in a barn."
    for tok, s, e in Tokenizer.tokenize_with_offsets(text):
        assert text.lower()[s:e] == tok


def test_reserved_ids_are_stable():
    tok = Tokenizer(["cat"])
    assert tok.token_to_id["[PAD]"] == PAD == 0
    assert tok.token_to_id["[UNK]"] == UNK == 1
    assert tok.token_to_id["[CLS]"] == CLS == 2
    assert tok.token_to_id["[SEP]"] == SEP == 3
    assert tok.token_to_id["[Q]"] == Q_MARK == 4
    assert tok.token_to_id["[A]"] == A_MARK == 5
    assert tok.token_to_id["cat"] == len(RESERVED)


def test_build_orders_by_frequency_then_alphabet():
    tok = Tokenizer.build(["b b b a a c", "a"])
    assert tok.id_to_token[len(RESERVED):] == ["a", "b", "c"]


def test_encode_decode_roundtrip_and_unk():
    tok = Tokenizer.build(["the cat sat on the mat"])
    ids = tok.encode("The cat sat on the zebra")
    assert ids[-1] == UNK
    assert tok.decode(ids) == "the cat sat on the [UNK]"


def test_min_freq_filters_rare_tokens():
    tok = Tokenizer.build(["rare common common"], min_freq=2)
    assert "common" in tok.token_to_id
    assert "rare" not in tok.token_to_id


def test_fingerprint_tracks_vocabulary_content():
    a = Tokenizer(["cat", "dog"])
    b = Tokenizer(["cat", "dog"])
    c = Tokenizer(["dog", "cat"])
    assert a.fingerprint == b.fingerprint
    assert a.fingerprint != c.fingerprint


def test_tokenizer_save_load_roundtrip(tmp_path):
    tok = Tokenizer.build(["the little white kitten slept in the barn"])
    path = tmp_path / "vocab.json"
    tok.save(path)
    loaded = Tokenizer.load(path)
    assert loaded.id_to_token == tok.id_to_token
    assert loaded.fingerprint == tok.fingerprint


# -- dataset schema -----------------------------------------------------------


def _story_dict():
    return {
        "id": "s1",
        "document": "Cotton was a little white kitten. She lived in a barn.",
        "turns": [
            {"question": "What color was Cotton?", "answer": "white",
             "rationale_span": [0, 33]},
            {"question": "Where did she live?", "answer": "in a barn"},
        ],
    }


def _write(tmp_path, payload):
    path = tmp_path / "data.json"
    path.write_text(json.dumps(payload), encoding="utf-8")
    return path


def test_load_dataset_happy_path(tmp_path):
    path = _write(tmp_path, {"version": 1, "stories": [_story_dict()]})
    stories = load_dataset(path)
    assert len(stories) == 1
    story = stories[0]
    assert story.id == "s1"
    assert story.asr_document is None
    assert story.turns[0].rationale_span == (0, 33)
    assert story.turns[1].answerable is True


def test_save_load_roundtrip(tmp_path):
    stories = generate_synthetic(5, seed=3)
    noisy = corrupt_stories(stories, NoiseSpec(seed=1))
    path = tmp_path / "out.json"
    save_dataset(path, noisy)
    again = load_dataset(path)
    assert again == noisy


def test_load_rejects_missing_answer(tmp_path):
    bad = _story_dict()
    del bad["turns"][1]["answer"]
    path = _write(tmp_path, {"version": 1, "stories": [bad]})
    with pytest.raises(DataError, match=r"story 's1' turn 1.*'answer'"):
        load_dataset(path)


def test_load_rejects_unknown_field(tmp_path):
    bad = _story_dict()
    bad["turns"][0]["rationale"] = [0, 5]
    path = _write(tmp_path, {"version": 1, "stories": [bad]})
    with pytest.raises(DataError, match=r"story 's1' turn 0.*'rationale'"):
        load_dataset(path)


def test_load_rejects_out_of_range_rationale(tmp_path):
    bad = _story_dict()
    bad["turns"][0]["rationale_span"] = [0, 10_000]
    path = _write(tmp_path, {"version": 1, "stories": [bad]})
    with pytest.raises(DataError, match="rationale_span"):
        load_dataset(path)


def test_load_rejects_duplicate_story_ids(tmp_path):
    path = _write(tmp_path, {"version": 1, "stories": [_story_dict(), _story_dict()]})
    with pytest.raises(DataError, match="duplicate story id 's1'"):
        load_dataset(path)


def test_load_rejects_empty_turns_and_bad_version(tmp_path):
    bad = _story_dict()
    bad["turns"] = []
    path = _write(tmp_path, {"version": 1, "stories": [bad]})
    with pytest.raises(DataError, match="'turns'"):
        load_dataset(path)
    path2 = _write(tmp_path, {"version": 2, "stories": []})
    with pytest.raises(DataError, match="version 1"):
        load_dataset(path2)


def test_load_rejects_empty_answer_on_answerable_turn(tmp_path):
    bad = _story_dict()
    bad["turns"][0]["answer"] = "   "
    path = _write(tmp_path, {"version": 1, "stories": [bad]})
    with pytest.raises(DataError, match="empty answer"):
        load_dataset(path)


# -- span alignment -----------------------------------------------------------


def _brute_force_best(doc, ans, lo=0, hi=None, max_extra=4):
    hi = len(doc) if hi is None else min(hi, len(doc))
    candidates = []
    for i in range(lo, hi):
        for j in range(i, hi):
            if j - i + 1 > len(ans) + max_extra:
                continue
            candidates.append((token_f1(doc[i:j + 1], ans), -(j - i), -i, i, j))
    if not candidates:
        return None
    f1, _, _, i, j = max(candidates)
    return i, j, f1


def test_align_exact_substring():
    doc = "she lived in a barn near the mill".split()
    start, end, f1 = align_best_span(doc, ["in", "a", "barn"])
    assert (start, end) == (2, 4)
    assert f1 == 1.0


def test_align_prefers_shorter_then_earlier():
    doc = "barn cat barn".split()
    start, end, f1 = align_best_span(doc, ["barn"])
    assert (start, end, f1) == (0, 0, 1.0)


def test_align_partial_overlap():
    doc = "the kitten slept in the red barn today".split()
    start, end, f1 = align_best_span(doc, ["red", "barn", "loft"])
    assert doc[start:end + 1] == ["red", "barn"]
    assert f1 == pytest.approx(2 * (2 / 2) * (2 / 3) / (1 + 2 / 3))


def test_align_respects_window_bounds():
    doc = "barn x x x x barn".split()
    start, end, _ = align_best_span(doc, ["barn"], lo=3, hi=6)
    assert (start, end) == (5, 5)


def test_align_disjoint_answer_scores_zero():
    doc = "alpha beta gamma".split()
    result = align_best_span(doc, ["zeta"])
    assert result is not None and result[2] == 0.0


def test_align_matches_brute_force_on_random_cases():
    rng = np.random.default_rng(42)
    vocab = ["a", "b", "c", "d", "e"]
    for _ in range(60):
        doc = [vocab[i] for i in rng.integers(0, 5, size=rng.integers(1, 14))]
        ans = [vocab[i] for i in rng.integers(0, 5, size=rng.integers(1, 4))]
        assert align_best_span(doc, ans) == _brute_force_best(doc, ans)


# -- speech tokens ------------------------------------------------------------


def test_speech_tokens_shape_and_repeat():
    ids = speech_tokens(["cat", "dog"], speech_vocab_size=32, repeat=3, seed=0)
    assert ids.shape == (6,)
    assert len(set(ids[:3].tolist())) == 1
    assert (0 <= ids).all() and (ids < 32).all()


def test_speech_tokens_deterministic_and_seed_salted():
    words = ["cotton", "barn", "kitten", "meadow", "window", "ladder"]
    a = speech_tokens(words, 64, 1, seed=1)
    b = speech_tokens(words, 64, 1, seed=1)
    c = speech_tokens(words, 64, 1, seed=2)
    assert (a == b).all()
    assert (a != c).any()


def test_speech_tokens_validation():
    with pytest.raises(ParameterError):
        speech_tokens(["x"], speech_vocab_size=1, repeat=1, seed=0)
    with pytest.raises(ParameterError):
        speech_tokens(["x"], speech_vocab_size=8, repeat=0, seed=0)


def test_speech_collision_rate_near_uniform():
    rng = np.random.default_rng(7)
    letters = "abcdefghijklmnopqrstuvwxyz"
    words = list({
        "".join(rng.choice(list(letters), size=rng.integers(5, 9)))
        for _ in range(1200)
    })[:1000]
    vocab_size = 64
    units = speech_tokens(words, vocab_size, 1, seed=0)
    n = len(words)
    pairs = n * (n - 1) / 2
    counts = np.bincount(units, minlength=vocab_size)
    collisions = float((counts * (counts - 1) / 2).sum())
    rate = collisions / pairs
    assert abs(rate - 1 / vocab_size) < 0.5 / vocab_size


# -- packing ------------------------------------------------------------------


def _cotton_story():
    return Story(
        id="cotton",
        document=("Cotton was a little white kitten. She lived in a barn near "
                  "the old mill with her mother."),
        turns=[
            Turn(question="What color was Cotton?", answer="white",
                 rationale_span=(0, 33)),
            Turn(question="Where did she live?", answer="in a barn",
                 rationale_span=(34, 95)),
            Turn(question="What was her sister's name?", answer="unknown",
                 answerable=False),
        ],
    )


def _tokenizer_for(stories):
    texts = []
    for s in stories:
        texts.append(s.document)
        if s.asr_document:
            texts.append(s.asr_document)
        for t in s.turns:
            texts.extend([t.question, t.answer, t.asr_question or ""])
    return Tokenizer.build(texts)


def test_packed_view_layout_and_gold_decoding():
    story = _cotton_story()
    tok = _tokenizer_for([story])
    examples = build_examples([story], tok, history_k=2, max_len=64)
    assert len(examples) == 3

    first = examples[0].clean
    assert first.ids[0] == CLS
    assert first.ids[-1] == SEP
    assert first.ids[first.doc_offset - 1] == SEP
    assert len(first.ids) == first.doc_offset + first.doc_grid + 1
    # question region of the first turn has no history and no markers
    q_ids = first.ids[1:first.doc_offset - 1]
    assert tok.decode(q_ids) == "what color was cotton ?"
    assert first.doc_tokens[first.gold_start:first.gold_end + 1] == ["white"]

    second = examples[1].clean
    assert second.doc_tokens[second.gold_start:second.gold_end + 1] == \
        ["in", "a", "barn"]
    # history markers wrap the previous question/answer pair
    q_region = [tok.id_to_token[int(i)] for i in second.ids[1:second.doc_offset - 1]]
    assert q_region[0] == "[Q]"
    assert "[A]" in q_region
    assert q_region[q_region.index("[A]") + 1] == "white"

    third = examples[2]
    assert third.answerable is False
    assert third.clean.gold_slots == (0, 0)
    assert third.gold_answer_texts == ["unknown"]


def test_history_window_k():
    story = _cotton_story()
    tok = _tokenizer_for([story])
    k0 = build_examples([story], tok, history_k=0, max_len=64)
    k1 = build_examples([story], tok, history_k=1, max_len=64)
    k2 = build_examples([story], tok, history_k=2, max_len=64)
    # turn 0 is identical at every k
    assert (k0[0].clean.ids == k2[0].clean.ids).all()
    # turn 2 at k=0 carries only its own question
    q = tok.decode(k0[2].clean.ids[1:k0[2].clean.doc_offset - 1])
    assert q == "what was her sister ' s name ?"
    # at k=1 turn 2 sees one previous pair; at k=2 it sees two
    def marker_count(view):
        return int((view.ids == Q_MARK).sum())
    assert marker_count(k0[2].clean) == 0
    assert marker_count(k1[2].clean) == 1
    assert marker_count(k2[2].clean) == 2


def test_paired_views_share_document_grid():
    stories = corrupt_stories(generate_synthetic(6, seed=4), NoiseSpec(seed=2))
    tok = _tokenizer_for(stories)
    examples = build_examples(stories, tok, history_k=2, max_len=256)
    assert examples, "corpus produced no examples"
    for ex in examples:
        assert ex.asr is not None
        assert ex.clean.doc_grid == ex.asr.doc_grid
        for view in (ex.clean, ex.asr):
            assert view.ids[0] == CLS and view.ids[-1] == SEP
            assert len(view.ids) == view.doc_offset + view.doc_grid + 1
            assert len(view.ids) <= 256
            assert view.doc_len == len(view.doc_tokens)
            doc_ids = view.ids[view.doc_offset:view.doc_offset + view.doc_grid]
            assert (doc_ids[:view.doc_len] != PAD).all()
            assert (doc_ids[view.doc_len:] == PAD).all()
            assert tok.decode(doc_ids[:view.doc_len]) == " ".join(view.doc_tokens)
            if ex.answerable:
                assert 0 <= view.gold_start <= view.gold_end < view.doc_len
                gs, ge = view.gold_slots
                assert (gs, ge) == (view.gold_start + 1, view.gold_end + 1)
            else:
                assert view.gold_slots == (0, 0)
        assert ex.speech_ids.ndim == 1 and len(ex.speech_ids) > 0


def test_clean_gold_span_has_positive_overlap_with_answer():
    stories = generate_synthetic(8, seed=11)
    tok = _tokenizer_for(stories)
    for ex, turn in zip(build_examples(stories, tok, max_len=256),
                        [t for s in stories for t in s.turns]):
        if not ex.answerable:
            continue
        span_tokens = ex.clean.doc_tokens[ex.clean.gold_start:ex.clean.gold_end + 1]
        assert token_f1(span_tokens, tok.tokenize(turn.answer)) > 0.0


def test_long_document_is_windowed_around_gold():
    filler = "the quiet gray mill stood near the long river bend . "
    document = filler * 40 + "Cotton hid a tiny silver bell under the floor."
    story = Story(id="long", document=document, turns=[
        Turn(question="What did Cotton hide?", answer="a tiny silver bell",
             rationale_span=(len(filler) * 40, len(document))),
    ])
    tok = _tokenizer_for([story])
    examples = build_examples([story], tok, history_k=0, max_len=64)
    view = examples[0].clean
    full_len = len(tok.tokenize(document))
    assert view.doc_len < full_len  # really windowed
    assert view.doc_tokens[view.gold_start:view.gold_end + 1] == \
        ["a", "tiny", "silver", "bell"]


def test_unwindowable_gold_raises():
    story = Story(id="wide", document="a b c d e f g h i j k l m n o p",
                  turns=[Turn(question="q?", answer="a b c d e f g h i j k l")])
    tok = _tokenizer_for([story])
    with pytest.raises(DataError, match="story 'wide' turn 0"):
        build_examples([story], tok, history_k=0, max_len=10)


def test_oversized_question_raises():
    story = Story(id="talky", document="short doc", turns=[
        Turn(question="why " * 50 + "?", answer="short"),
    ])
    tok = _tokenizer_for([story])
    with pytest.raises(DataError, match="story 'talky' turn 0"):
        build_examples([story], tok, history_k=0, max_len=32)


def test_speech_ids_come_from_clean_window_words():
    story = _cotton_story()
    tok = _tokenizer_for([story])
    ex = build_examples([story], tok, history_k=0, max_len=64,
                        speech_vocab_size=48, speech_repeat=2, speech_seed=5)[0]
    words = [t for t in ex.clean.doc_tokens if t.isalnum()]
    expected = speech_tokens(words, 48, 2, 5)
    assert (ex.speech_ids == expected).all()


def test_examples_cache_roundtrip(tmp_path):
    stories = corrupt_stories(generate_synthetic(3, seed=9), NoiseSpec(seed=3))
    tok = _tokenizer_for(stories)
    examples = build_examples(stories, tok, history_k=2, max_len=128)
    path = tmp_path / "examples.json"
    save_examples(path, examples, tok, {"history_k": 2, "max_len": 128})
    loaded, config = load_examples(path, expected_tokenizer_fingerprint=tok.fingerprint)
    assert config == {"history_k": 2, "max_len": 128}
    assert len(loaded) == len(examples)
    for a, b in zip(examples, loaded):
        assert a.to_dict() == b.to_dict()
        assert isinstance(b, Example)
    with pytest.raises(DataError, match="tokenizer"):
        load_examples(path, expected_tokenizer_fingerprint="0" * 64)


# -- synthetic corpus ---------------------------------------------------------


def test_generate_synthetic_is_deterministic():
    assert generate_synthetic(10, seed=5) == generate_synthetic(10, seed=5)
    assert generate_synthetic(10, seed=5) != generate_synthetic(10, seed=6)


def test_generate_synthetic_shape_and_answerability():
    stories = generate_synthetic(200, seed=1)
    assert len(stories) == 200
    assert len({s.id for s in stories}) == 200
    turn_counts = [len(s.turns) for s in stories]
    assert min(turn_counts) >= 3 and max(turn_counts) <= 8
    turns = [t for s in stories for t in s.turns]
    frac_unanswerable = sum(not t.answerable for t in turns) / len(turns)
    assert 0.05 < frac_unanswerable < 0.2


def test_generate_synthetic_answers_are_extractive():
    for story in generate_synthetic(30, seed=2):
        for turn in story.turns:
            if not turn.answerable:
                assert turn.answer == "unknown"
                assert turn.rationale_span is None
                continue
            assert turn.answer in story.document
            start, end = turn.rationale_span
            assert turn.answer in story.document[start:end]


def test_generate_synthetic_validates_arguments():
    with pytest.raises(ParameterError):
        generate_synthetic(0, seed=1)
    with pytest.raises(ParameterError):
        generate_synthetic(1, seed=1, num_sentences=2)
