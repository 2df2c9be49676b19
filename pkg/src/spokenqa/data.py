"""Dataset ingestion, tokenization, example packing, and synthetic corpora.

An Example carries two packed views of the same turn (manual transcript and
ASR transcript) over a shared document grid, plus one pseudo-acoustic token
sequence derived from the clean document. Both views pack as

    [CLS] history-augmented question [SEP] document window (+pads) [SEP]

where the document grid is as long as the longer view's window, so the two
views' span-logit vectors always line up position for position.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, ParameterError
from .evaluation import token_f1
from .seeding import rng_for, stable_hash64

PAD, UNK, CLS, SEP, Q_MARK, A_MARK = 0, 1, 2, 3, 4, 5
RESERVED = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[Q]", "[A]"]

_TOKEN_RE = re.compile(r"\w+|[^\w\s]", re.UNICODE)
_WORDLIKE_RE = re.compile(r"\w+", re.UNICODE)

NO_ANSWER_GOLD = "unknown"


# ---------------------------------------------------------------------------
# stories


@dataclass
class Turn:
    question: str
    answer: str
    asr_question: str | None = None
    rationale_span: tuple | None = None  # (start_char, end_char) into document
    answerable: bool = True


@dataclass
class Story:
    id: str
    document: str
    turns: list
    asr_document: str | None = None


_STORY_KEYS = {"id", "document", "asr_document", "turns"}
_TURN_KEYS = {"question", "asr_question", "answer", "rationale_span", "answerable"}


def _validate_turn(raw, story_id, turn_index, document, path):
    where = f"{path}: story {story_id!r} turn {turn_index}"
    if not isinstance(raw, dict):
        raise DataError(f"{where}: turn must be an object")
    unknown = set(raw) - _TURN_KEYS
    if unknown:
        raise DataError(f"{where}: unknown field {sorted(unknown)[0]!r}")
    for fieldname in ("question", "answer"):
        if fieldname not in raw:
            raise DataError(f"{where}: missing field {fieldname!r}")
        if not isinstance(raw[fieldname], str):
            raise DataError(f"{where}: field {fieldname!r} must be a string")
    answerable = raw.get("answerable", True)
    if not isinstance(answerable, bool):
        raise DataError(f"{where}: field 'answerable' must be a boolean")
    if answerable and not raw["answer"].strip():
        raise DataError(f"{where}: empty answer on an answerable turn")
    span = raw.get("rationale_span")
    if span is not None:
        if (not isinstance(span, (list, tuple)) or len(span) != 2
                or not all(isinstance(v, int) for v in span)):
            raise DataError(f"{where}: field 'rationale_span' must be [start, end]")
        start, end = span
        if not (0 <= start < end <= len(document)):
            raise DataError(
                f"{where}: rationale_span [{start}, {end}) outside document of "
                f"length {len(document)}"
            )
        span = (start, end)
    asr_q = raw.get("asr_question")
    if asr_q is not None and not isinstance(asr_q, str):
        raise DataError(f"{where}: field 'asr_question' must be a string")
    return Turn(question=raw["question"], answer=raw["answer"], asr_question=asr_q,
                rationale_span=span, answerable=answerable)


def load_dataset(path):
    """Parse and validate a dataset file; returns a list of Story."""
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise DataError(f"{path}: no such dataset file") from None
    except json.JSONDecodeError as err:
        raise DataError(f"{path}: not valid JSON ({err})") from None
    if not isinstance(raw, dict) or raw.get("version") != 1:
        raise DataError(f"{path}: expected an object with version 1")
    stories_raw = raw.get("stories")
    if not isinstance(stories_raw, list):
        raise DataError(f"{path}: missing 'stories' list")
    stories, seen = [], set()
    for idx, sraw in enumerate(stories_raw):
        if not isinstance(sraw, dict):
            raise DataError(f"{path}: story {idx} must be an object")
        unknown = set(sraw) - _STORY_KEYS
        sid = sraw.get("id", f"<story {idx}>")
        if unknown:
            raise DataError(f"{path}: story {sid!r}: unknown field {sorted(unknown)[0]!r}")
        for fieldname in ("id", "document", "turns"):
            if fieldname not in sraw:
                raise DataError(f"{path}: story {sid!r}: missing field {fieldname!r}")
        if not isinstance(sraw["id"], str) or not sraw["id"]:
            raise DataError(f"{path}: story {idx}: 'id' must be a nonempty string")
        sid = sraw["id"]
        if sid in seen:
            raise DataError(f"{path}: duplicate story id {sid!r}")
        seen.add(sid)
        if not isinstance(sraw["document"], str) or not sraw["document"].strip():
            raise DataError(f"{path}: story {sid!r}: 'document' must be nonempty text")
        asr_doc = sraw.get("asr_document")
        if asr_doc is not None and not isinstance(asr_doc, str):
            raise DataError(f"{path}: story {sid!r}: field 'asr_document' must be a string")
        if not isinstance(sraw["turns"], list) or not sraw["turns"]:
            raise DataError(f"{path}: story {sid!r}: 'turns' must be a nonempty list")
        turns = [
            _validate_turn(traw, sid, ti, sraw["document"], path)
            for ti, traw in enumerate(sraw["turns"])
        ]
        stories.append(Story(id=sid, document=sraw["document"], asr_document=asr_doc,
                             turns=turns))
    return stories


def save_dataset(path, stories):
    """Write stories back in the load_dataset schema, deterministically."""
    payload = {"version": 1, "stories": []}
    for story in stories:
        sraw = {"id": story.id, "document": story.document}
        if story.asr_document is not None:
            sraw["asr_document"] = story.asr_document
        sraw["turns"] = []
        for t in story.turns:
            traw = {"question": t.question, "answer": t.answer,
                    "answerable": t.answerable}
            if t.asr_question is not None:
                traw["asr_question"] = t.asr_question
            if t.rationale_span is not None:
                traw["rationale_span"] = list(t.rationale_span)
            sraw["turns"].append(traw)
        payload["stories"].append(sraw)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2, ensure_ascii=False)
        fh.write("\n")


# ---------------------------------------------------------------------------
# tokenizer


class Tokenizer:
    """Lowercase word-level tokenizer; punctuation marks are their own tokens."""

    def __init__(self, tokens):
        self.id_to_token = list(RESERVED) + list(tokens)
        self.token_to_id = {t: i for i, t in enumerate(self.id_to_token)}
        if len(self.token_to_id) != len(self.id_to_token):
            raise ParameterError("duplicate tokens in vocabulary")

    @classmethod
    def build(cls, texts, min_freq=1):
        counts = {}
        for text in texts:
            for tok in cls.tokenize(text):
                counts[tok] = counts.get(tok, 0) + 1
        kept = [t for t, c in counts.items() if c >= min_freq and t not in RESERVED]
        kept.sort(key=lambda t: (-counts[t], t))
        return cls(kept)

    @staticmethod
    def tokenize(text):
        return _TOKEN_RE.findall(text.lower())

    @staticmethod
    def tokenize_with_offsets(text):
        lowered = text.lower()
        return [(m.group(0), m.start(), m.end()) for m in _TOKEN_RE.finditer(lowered)]

    @property
    def vocab_size(self):
        return len(self.id_to_token)

    @property
    def fingerprint(self):
        payload = json.dumps(self.id_to_token, ensure_ascii=False).encode("utf-8")
        return hashlib.sha256(payload).hexdigest()

    def encode_tokens(self, tokens):
        unk = UNK
        return np.array([self.token_to_id.get(t, unk) for t in tokens], dtype=np.int64)

    def encode(self, text):
        return self.encode_tokens(self.tokenize(text))

    def decode(self, ids):
        return " ".join(self.id_to_token[int(i)] for i in ids)

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump({"version": 1, "tokens": self.id_to_token[len(RESERVED):]},
                      fh, sort_keys=True, indent=2, ensure_ascii=False)
            fh.write("\n")

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
        if not isinstance(raw, dict) or raw.get("version") != 1 or "tokens" not in raw:
            raise DataError(f"{path}: not a vocabulary file")
        return cls(raw["tokens"])


# ---------------------------------------------------------------------------
# pseudo-acoustic speech tokens


def speech_tokens(clean_document_tokens, speech_vocab_size, repeat, seed):
    """Deterministic word -> unit-id mapping standing in for acoustic units.

    Each word hashes via its character trigrams (seed-salted) to one unit id,
    emitted `repeat` times.
    """
    if speech_vocab_size < 2:
        raise ParameterError(f"speech_vocab_size must be >= 2, got {speech_vocab_size}")
    if repeat < 1:
        raise ParameterError(f"repeat must be >= 1, got {repeat}")
    out = []
    for tok in clean_document_tokens:
        padded = f"^{tok}$"
        grams = [padded[i:i + 3] for i in range(max(1, len(padded) - 2))]
        unit = stable_hash64(seed, "speech-unit", "|".join(grams)) % speech_vocab_size
        out.extend([unit] * repeat)
    return np.array(out, dtype=np.int64)


# ---------------------------------------------------------------------------
# examples


@dataclass
class PackedView:
    ids: np.ndarray          # [CLS] question [SEP] doc grid [SEP]
    doc_offset: int          # packed index of the first document slot
    doc_grid: int            # document slots including pads
    doc_len: int             # real document tokens (<= doc_grid)
    doc_tokens: list         # the real tokens, for decoding predictions
    gold_start: int | None   # window-relative token index, None = no answer
    gold_end: int | None

    @property
    def gold_slots(self):
        """Span-logit targets; slot 0 is the no-answer sentinel."""
        if self.gold_start is None:
            return 0, 0
        return self.gold_start + 1, self.gold_end + 1

    @property
    def doc_valid(self):
        v = np.zeros(self.doc_grid, dtype=bool)
        v[: self.doc_len] = True
        return v

    def to_dict(self):
        return {
            "ids": [int(i) for i in self.ids],
            "doc_offset": self.doc_offset,
            "doc_grid": self.doc_grid,
            "doc_len": self.doc_len,
            "doc_tokens": list(self.doc_tokens),
            "gold_start": self.gold_start,
            "gold_end": self.gold_end,
        }

    @classmethod
    def from_dict(cls, raw):
        return cls(ids=np.array(raw["ids"], dtype=np.int64),
                   doc_offset=raw["doc_offset"], doc_grid=raw["doc_grid"],
                   doc_len=raw["doc_len"], doc_tokens=list(raw["doc_tokens"]),
                   gold_start=raw["gold_start"], gold_end=raw["gold_end"])


@dataclass
class Example:
    story_id: str
    turn_index: int
    clean: PackedView
    asr: PackedView | None
    speech_ids: np.ndarray
    gold_answer_texts: list
    answerable: bool

    def view(self, name):
        if name == "clean":
            return self.clean
        if name == "asr":
            if self.asr is None:
                raise DataError(
                    f"story {self.story_id!r} turn {self.turn_index} has no ASR view"
                )
            return self.asr
        raise ParameterError(f"unknown view {name!r}; expected 'clean' or 'asr'")

    def to_dict(self):
        return {
            "story_id": self.story_id,
            "turn_index": self.turn_index,
            "clean": self.clean.to_dict(),
            "asr": self.asr.to_dict() if self.asr is not None else None,
            "speech_ids": [int(i) for i in self.speech_ids],
            "gold_answer_texts": list(self.gold_answer_texts),
            "answerable": self.answerable,
        }

    @classmethod
    def from_dict(cls, raw):
        return cls(
            story_id=raw["story_id"], turn_index=raw["turn_index"],
            clean=PackedView.from_dict(raw["clean"]),
            asr=PackedView.from_dict(raw["asr"]) if raw["asr"] is not None else None,
            speech_ids=np.array(raw["speech_ids"], dtype=np.int64),
            gold_answer_texts=list(raw["gold_answer_texts"]),
            answerable=raw["answerable"],
        )


def align_best_span(doc_tokens, answer_tokens, lo=0, hi=None, max_extra=4):
    """Best (start, end, f1) span by token F1; ties go to shorter, then earlier.

    hi is exclusive. Span length is capped at len(answer_tokens) + max_extra;
    longer spans cannot raise recall and only dilute precision.
    """
    hi = len(doc_tokens) if hi is None else min(hi, len(doc_tokens))
    if lo >= hi or not answer_tokens:
        return None
    cap = len(answer_tokens) + max_extra
    best = None  # (f1, start, end)
    for start in range(lo, hi):
        for end in range(start, min(start + cap, hi)):
            f1 = token_f1(doc_tokens[start:end + 1], answer_tokens)
            if best is None or f1 > best[0] + 1e-12:
                best = (f1, start, end)
            elif abs(f1 - best[0]) <= 1e-12:
                if (end - start, start) < (best[2] - best[1], best[1]):
                    best = (f1, start, end)
    return (best[1], best[2], best[0])


def _rationale_window(offsets, span):
    """Token index range [lo, hi) overlapping the character interval."""
    lo, hi = None, None
    for i, (_, s, e) in enumerate(offsets):
        if e > span[0] and s < span[1]:
            if lo is None:
                lo = i
            hi = i + 1
    if lo is None:
        return None
    return lo, hi


def _history_tokens(tokenizer, story, turn_index, history_k, view):
    toks = []
    if history_k > 0:
        for t in story.turns[max(0, turn_index - history_k):turn_index]:
            q = t.asr_question if view == "asr" and t.asr_question is not None else t.question
            toks.append("[Q]")
            toks.extend(tokenizer.tokenize(q))
            toks.append("[A]")
            toks.extend(tokenizer.tokenize(t.answer if t.answerable else NO_ANSWER_GOLD))
    current = story.turns[turn_index]
    q = (current.asr_question if view == "asr" and current.asr_question is not None
         else current.question)
    toks.extend(tokenizer.tokenize(q))
    return toks


def _choose_window(n_tokens, budget, span, where):
    """Start offset of the stride budget/2 window that contains the span."""
    if n_tokens <= budget:
        return 0, n_tokens
    stride = max(1, budget // 2)
    starts = list(range(0, n_tokens - budget + 1, stride))
    if starts[-1] != n_tokens - budget:
        starts.append(n_tokens - budget)
    if span is None:
        return starts[0], budget
    for s in starts:
        if span[0] >= s and span[1] < s + budget:
            return s, budget
    raise DataError(f"{where}: no document window of {budget} tokens contains the gold span")


def _pack_view(tokenizer, q_tokens, window_tokens, grid, gold):
    ids = [CLS] + list(tokenizer.encode_tokens(q_tokens)) + [SEP]
    doc_offset = len(ids)
    doc_ids = list(tokenizer.encode_tokens(window_tokens))
    doc_ids += [PAD] * (grid - len(window_tokens))
    ids = ids + doc_ids + [SEP]
    return PackedView(
        ids=np.array(ids, dtype=np.int64),
        doc_offset=doc_offset,
        doc_grid=grid,
        doc_len=len(window_tokens),
        doc_tokens=list(window_tokens),
        gold_start=None if gold is None else gold[0],
        gold_end=None if gold is None else gold[1],
    )


def _gold_for_view(doc_tokens, offsets, turn, answer_tokens, *, rationale, where,
                   fallback=None):
    """Window-restricted max-F1 alignment with degenerate-answer fallbacks."""
    if rationale is not None:
        bounds = _rationale_window(offsets, rationale)
        if bounds is not None:
            found = align_best_span(doc_tokens, answer_tokens, bounds[0], bounds[1])
            if found is not None and found[2] > 0.0:
                return found[0], found[1]
    found = align_best_span(doc_tokens, answer_tokens)
    if found is not None and found[2] > 0.0:
        return found[0], found[1]
    # answer shares no token with the document (free-form yes/no and such):
    # supervise on the rationale span itself when we have one
    if rationale is not None:
        bounds = _rationale_window(offsets, rationale)
        if bounds is not None:
            return bounds[0], bounds[1] - 1
    if fallback is not None:
        n = len(doc_tokens)
        return min(fallback[0], n - 1), min(fallback[1], n - 1)
    raise DataError(f"{where}: answer cannot be aligned to the document")


def build_examples(stories, tokenizer, history_k=2, max_len=384, *,
                   speech_vocab_size=128, speech_repeat=1, speech_seed=0):
    """Pack every turn of every story into a paired-view Example."""
    if history_k < 0:
        raise ParameterError(f"history_k must be >= 0, got {history_k}")
    if max_len < 8:
        raise ParameterError(f"max_len too small to pack anything: {max_len}")
    examples = []
    for story in stories:
        doc_offsets = tokenizer.tokenize_with_offsets(story.document)
        doc_tokens = [t for t, _, _ in doc_offsets]
        if not doc_tokens:
            raise DataError(f"story {story.id!r}: document has no tokens")
        asr_tokens = None
        if story.asr_document is not None:
            asr_tokens = tokenizer.tokenize(story.asr_document)
            if not asr_tokens:
                asr_tokens = [NO_ANSWER_GOLD]  # degenerate but nonempty
        for turn_index, turn in enumerate(story.turns):
            where = f"story {story.id!r} turn {turn_index}"
            q_clean = _history_tokens(tokenizer, story, turn_index, history_k, "clean")
            q_asr = (_history_tokens(tokenizer, story, turn_index, history_k, "asr")
                     if asr_tokens is not None else [])
            budget = max_len - 3 - max(len(q_clean), len(q_asr))
            if budget < 1:
                raise DataError(f"{where}: question leaves no room for the document")

            answer_tokens = tokenizer.tokenize(turn.answer)
            if turn.answerable:
                gold_clean = _gold_for_view(doc_tokens, doc_offsets, turn, answer_tokens,
                                            rationale=turn.rationale_span, where=where)
            else:
                gold_clean = None
            win_start, win_len = _choose_window(len(doc_tokens), budget, gold_clean, where)
            window_clean = doc_tokens[win_start:win_start + win_len]
            rel_clean = (None if gold_clean is None
                         else (gold_clean[0] - win_start, gold_clean[1] - win_start))

            asr_view = None
            window_asr = []
            rel_asr = None
            if asr_tokens is not None:
                if turn.answerable:
                    gold_asr = _gold_for_view(asr_tokens, None, turn, answer_tokens,
                                              rationale=None, where=where,
                                              fallback=gold_clean)
                else:
                    gold_asr = None
                a_start, a_len = _choose_window(len(asr_tokens), budget, gold_asr, where)
                window_asr = asr_tokens[a_start:a_start + a_len]
                rel_asr = (None if gold_asr is None
                           else (gold_asr[0] - a_start, gold_asr[1] - a_start))

            grid = max(len(window_clean), len(window_asr))
            clean_view = _pack_view(tokenizer, q_clean, window_clean, grid, rel_clean)
            if asr_tokens is not None:
                asr_view = _pack_view(tokenizer, q_asr, window_asr, grid, rel_asr)

            speech_words = [t for t in window_clean if _WORDLIKE_RE.fullmatch(t)]
            if not speech_words:
                speech_words = window_clean[:1]
            ids = speech_tokens(speech_words, speech_vocab_size, speech_repeat,
                                speech_seed)
            examples.append(Example(
                story_id=story.id,
                turn_index=turn_index,
                clean=clean_view,
                asr=asr_view,
                speech_ids=ids,
                gold_answer_texts=[turn.answer if turn.answerable else NO_ANSWER_GOLD],
                answerable=turn.answerable,
            ))
    return examples


def save_examples(path, examples, tokenizer, config):
    payload = {
        "version": 1,
        "tokenizer_fingerprint": tokenizer.fingerprint,
        "config": dict(config),
        "examples": [ex.to_dict() for ex in examples],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2, ensure_ascii=False)
        fh.write("\n")


def load_examples(path, expected_tokenizer_fingerprint=None):
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    if not isinstance(raw, dict) or raw.get("version") != 1:
        raise DataError(f"{path}: not an examples cache")
    if expected_tokenizer_fingerprint is not None:
        got = raw.get("tokenizer_fingerprint")
        if got != expected_tokenizer_fingerprint:
            raise DataError(
                f"{path}: examples were built with tokenizer {str(got)[:12]}, "
                f"expected {expected_tokenizer_fingerprint[:12]}"
            )
    return [Example.from_dict(e) for e in raw["examples"]], raw["config"]


def split_stories(stories, seed=0, fractions=(0.8, 0.1, 0.1)):
    """Deterministic story-level train/dev/test split; no turn ever leaks."""
    if len(fractions) != 3 or any(f <= 0 for f in fractions):
        raise ParameterError(f"fractions must be three positive shares, got {fractions}")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ParameterError(f"fractions must sum to 1, got {fractions}")
    if len(stories) < 3:
        raise DataError(f"need at least 3 stories to split, got {len(stories)}")
    order = rng_for(seed, "split").permutation(len(stories))
    shuffled = [stories[int(i)] for i in order]
    n = len(stories)
    n_train = max(1, int(n * fractions[0]))
    n_dev = max(1, int(n * fractions[1]))
    if n_train + n_dev >= n:
        n_train = n - n_dev - 1
    return (shuffled[:n_train], shuffled[n_train:n_train + n_dev],
            shuffled[n_train + n_dev:])


# ---------------------------------------------------------------------------
# synthetic corpus

_NAMES = ["cotton", "bella", "max", "luna", "rocky", "daisy", "charlie", "molly",
          "buddy", "coco", "oreo", "pepper", "ginger", "oliver", "ruby", "shadow",
          "simba", "willow", "hazel", "peanut"]
_ANIMALS = ["kitten", "puppy", "rabbit", "goat", "duck", "pony", "lamb", "calf",
            "piglet", "chick"]
_COLORS = ["white", "black", "brown", "gray", "golden", "spotted", "orange",
           "cream", "silver", "red"]
_PLACES = ["barn", "stable", "garden", "meadow", "orchard", "farmhouse", "shed",
           "field", "coop", "mill"]
_FOODS = ["corn", "hay", "apples", "carrots", "oats", "berries", "bread", "seeds"]
_FRIENDS = ["mouse", "sparrow", "frog", "squirrel", "hedgehog", "owl"]
_OBJECTS = ["button", "ribbon", "bell", "coin", "feather", "marble"]
_NUMBERS = ["two", "three", "four", "five", "six"]
_TIMES = ["morning", "evening", "night"]

_UNANSWERABLE = [
    "what was the farmer's name?",
    "how old was {name}?",
    "what season was it?",
    "where was {poss} mother?",
    "what was the weather like?",
]


def _cap(s):
    return s[0].upper() + s[1:]


def generate_synthetic(num_stories, seed, *, num_sentences=6):
    """Templated farm stories with extractive answers and ~10% unanswerable turns."""
    if num_stories < 1:
        raise ParameterError(f"num_stories must be >= 1, got {num_stories}")
    if not 3 <= num_sentences <= 6:
        raise ParameterError("num_sentences must be between 3 and 6")
    rng = rng_for(seed, "synthetic")
    stories = []
    for index in range(num_stories):
        name = str(rng.choice(_NAMES))
        animal = str(rng.choice(_ANIMALS))
        color = str(rng.choice(_COLORS))
        place, place2, place3 = (str(p) for p in rng.choice(_PLACES, size=3, replace=False))
        food = str(rng.choice(_FOODS))
        friend_kind = str(rng.choice(_FRIENDS))
        friend_name = str(rng.choice([n for n in _NAMES if n != name]))
        obj = str(rng.choice(_OBJECTS))
        number = str(rng.choice(_NUMBERS))
        time_word = str(rng.choice(_TIMES))
        she = bool(rng.random() < 0.5)
        pron, poss = ("she", "her") if she else ("he", "his")

        sentences = [
            f"Once upon a time, in a {place} near a {place2}, there lived a "
            f"little {color} {animal} named {_cap(name)}.",
            f"{_cap(name)} stayed in a warm corner of the {place} every {time_word}.",
            f"Every morning {pron} ate fresh {food} and drank cool water.",
            f"{_cap(poss)} best friend was a small {friend_kind} called {_cap(friend_name)}.",
            f"{_cap(name)} was not alone, because {number} other {animal}s lived there too.",
            f"One day {pron} found a shiny {obj} near the {place3}.",
        ][:num_sentences]

        document = " ".join(sentences)
        bounds = []
        cursor = 0
        for s in sentences:
            start = document.index(s, cursor)
            bounds.append((start, start + len(s)))
            cursor = start + len(s)

        pool = [
            (f"what color was {name}?", color, 0),
            (f"what kind of animal was {name}?", animal, 0),
            (f"where did {name} live?", f"in a {place}", 0),
            (f"what was the {animal}'s name?", _cap(name), 0),
            (f"what did {pron} eat every morning?", f"fresh {food}", 2),
            (f"who was {poss} best friend?",
             f"a small {friend_kind} called {_cap(friend_name)}", 3),
            (f"what was {poss} friend's name?", _cap(friend_name), 3),
            (f"how many other {animal}s lived there?", number, 4),
            (f"what did {pron} find one day?", f"a shiny {obj}", 5),
            (f"where did {pron} find it?", f"near the {place3}", 5),
        ]
        pool = [(q, a, s) for q, a, s in pool if s < num_sentences]
        order = rng.permutation(len(pool))
        queue = [pool[i] for i in order]

        n_turns = int(rng.integers(3, 9))
        turns = []
        for _ in range(n_turns):
            if rng.random() < 0.1 or not queue:
                template = str(rng.choice(_UNANSWERABLE))
                question = template.format(name=_cap(name), poss=poss)
                turns.append(Turn(question=_cap(question), answer=NO_ANSWER_GOLD,
                                  answerable=False))
            else:
                question, answer, sent = queue.pop()
                assert answer in document, (answer, document)
                turns.append(Turn(question=_cap(question), answer=answer,
                                  rationale_span=bounds[sent]))
        stories.append(Story(id=f"synth-{index:05d}", document=document, turns=turns))
    return stories
