"""Answer scoring (exact match, token F1) and model evaluation over examples."""

from __future__ import annotations

import json
import re
import string
from collections import Counter
from dataclasses import dataclass, field

from .errors import ConfigError, ContractError
from .tensor import no_grad

NO_ANSWER_TEXT = "unknown"

_ARTICLE_RE = re.compile(r"\b(a|an|the)\b")
_PUNCT_TABLE = str.maketrans("", "", string.punctuation)


def normalize_answer(s: str) -> str:
    """Lowercase, strip punctuation, drop articles, collapse whitespace."""
    s = s.lower()
    s = s.translate(_PUNCT_TABLE)
    s = _ARTICLE_RE.sub(" ", s)
    return " ".join(s.split())


def token_f1(pred_tokens, gold_tokens) -> float:
    """Multiset F1 between two token lists; duplicates count."""
    if not pred_tokens and not gold_tokens:
        return 1.0
    if not pred_tokens or not gold_tokens:
        return 0.0
    common = Counter(pred_tokens) & Counter(gold_tokens)
    overlap = sum(common.values())
    if overlap == 0:
        return 0.0
    precision = overlap / len(pred_tokens)
    recall = overlap / len(gold_tokens)
    return 2.0 * precision * recall / (precision + recall)


def em_f1(predicted: str, golds) -> tuple:
    """(exact match, F1) of a prediction against acceptable gold strings.

    Both metrics run on normalized text; F1 takes the best gold.
    """
    golds = list(golds)
    if not golds:
        raise ContractError("em_f1 needs at least one gold answer")
    pred_norm = normalize_answer(predicted)
    best_em, best_f1 = 0, 0.0
    for gold in golds:
        gold_norm = normalize_answer(gold)
        if pred_norm == gold_norm:
            best_em = 1
        best_f1 = max(best_f1, token_f1(pred_norm.split(), gold_norm.split()))
    return best_em, best_f1


@dataclass
class EvalReport:
    split: str
    view: str
    em: float
    f1: float
    count: int
    model_fingerprint: str = ""
    tokenizer_fingerprint: str = ""
    per_example: list = field(default_factory=list)

    def to_dict(self):
        return {
            "split": self.split,
            "view": self.view,
            "em": self.em,
            "f1": self.f1,
            "count": self.count,
            "model_fingerprint": self.model_fingerprint,
            "tokenizer_fingerprint": self.tokenizer_fingerprint,
            "per_example": self.per_example,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"


def evaluate(model, examples, tokenizer, *, view="clean", split="dev",
             expected_tokenizer_fingerprint=None) -> EvalReport:
    """Score model predictions on the given view of the examples.

    Dropout stays off; rows come back ordered by (story_id, turn_index) so
    aggregates and files are deterministic.
    """
    if expected_tokenizer_fingerprint is not None:
        if tokenizer.fingerprint != expected_tokenizer_fingerprint:
            raise ConfigError(
                "tokenizer fingerprint mismatch: examples were built with "
                f"{expected_tokenizer_fingerprint[:12]}, got {tokenizer.fingerprint[:12]}"
            )
    rows = []
    em_sum, f1_sum = 0.0, 0.0
    for ex in sorted(examples, key=lambda e: (e.story_id, e.turn_index)):
        packed = ex.view(view)
        with no_grad():
            logits = model.forward(packed, ex.speech_ids)
        span = model.predict_answer(logits, packed.doc_tokens)
        predicted = NO_ANSWER_TEXT if span.is_no_answer else span.text
        em, f1 = em_f1(predicted, ex.gold_answer_texts)
        em_sum += em
        f1_sum += f1
        rows.append({
            "story_id": ex.story_id,
            "turn_index": ex.turn_index,
            "predicted": predicted,
            "golds": list(ex.gold_answer_texts),
            "em": em,
            "f1": f1,
            "no_answer": bool(span.is_no_answer),
            "start": span.start_token,
            "end": span.end_token,
            "score": span.score,
        })
    n = len(rows)
    return EvalReport(
        split=split,
        view=view,
        em=em_sum / n if n else 0.0,
        f1=f1_sum / n if n else 0.0,
        count=n,
        tokenizer_fingerprint=tokenizer.fingerprint,
        per_example=rows,
    )
