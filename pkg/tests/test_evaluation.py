"""Answer normalization and EM/F1 scoring oracles."""

import pytest

from spokenqa.errors import ContractError
from spokenqa.evaluation import (
    NO_ANSWER_TEXT,
    em_f1,
    normalize_answer,
    token_f1,
)


def test_normalize_lowercases_and_strips_punctuation():
    assert normalize_answer("White!") == "white"
    assert normalize_answer("  The Barn. ") == "barn"
    assert normalize_answer("a CAT, a hat") == "cat hat"


def test_normalize_removes_articles_only_as_words():
    assert normalize_answer("the theater") == "theater"
    assert normalize_answer("an anchor") == "anchor"
    assert normalize_answer("a") == ""


def test_normalize_collapses_whitespace():
    assert normalize_answer("in   a\tbarn") == "in barn"


def test_exact_match_simple():
    em, f1 = em_f1("white", ["white"])
    assert em == 1
    assert f1 == pytest.approx(1.0)


def test_exact_match_is_normalized():
    em, f1 = em_f1("The White.", ["white"])
    assert em == 1
    assert f1 == pytest.approx(1.0)


def test_partial_overlap_f1():
    # after article removal: pred tokens {barn}, gold tokens {in, barn}
    em, f1 = em_f1("a barn", ["in a barn"])
    assert em == 0
    assert f1 == pytest.approx(2 / 3)


def test_f1_counts_duplicate_tokens_once_each():
    # pred: [very, very, big], gold: [very, big]
    # overlap = min counts = {very: 1, big: 1} = 2
    assert token_f1(["very", "very", "big"], ["very", "big"]) == pytest.approx(
        2 * (2 / 3) * (2 / 2) / ((2 / 3) + (2 / 2)))


def test_token_f1_empty_cases():
    assert token_f1([], []) == 1.0
    assert token_f1(["word"], []) == 0.0
    assert token_f1([], ["word"]) == 0.0


def test_max_over_multiple_golds():
    em, f1 = em_f1("white", ["snowy", "white", "pale"])
    assert em == 1 and f1 == 1.0
    em, f1 = em_f1("white cat", ["white dog", "black cat"])
    assert em == 0
    assert f1 == pytest.approx(0.5)


def test_no_answer_convention():
    em, f1 = em_f1(NO_ANSWER_TEXT, [NO_ANSWER_TEXT])
    assert em == 1 and f1 == 1.0
    em, f1 = em_f1(NO_ANSWER_TEXT, ["white"])
    assert em == 0 and f1 == 0.0


def test_both_sides_normalize_to_empty():
    em, f1 = em_f1("the", ["a"])
    assert em == 1 and f1 == 1.0


def test_empty_gold_list_raises():
    with pytest.raises(ContractError):
        em_f1("white", [])


def test_em_implies_f1_one():
    cases = [("white", ["White!"]), ("in a barn", ["in the barn"]),
             ("two words", ["two words", "nothing"])]
    for pred, golds in cases:
        em, f1 = em_f1(pred, golds)
        if em == 1:
            assert f1 == pytest.approx(1.0)
        assert 0.0 <= f1 <= 1.0
        assert em in (0, 1)
