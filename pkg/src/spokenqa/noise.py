"""Seeded word-level ASR-error simulator and word error rate.

The channel draws one uniform variate per word and applies at most one of
substitute / delete / insert-after. Substitutions prefer a sound-alike from
the confusion table; otherwise a random common word, occasionally two words
to mimic recognizer splits. Corruption is deterministic per (text, spec):
each text gets its own substream, so corpus order never matters.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, replace

from .errors import ContractError, DataError, ParameterError
from .seeding import rng_for

# Sound-alike substitutions. Keys are lowercase words; candidates may contain
# a space (split-style errors).
DEFAULT_CONFUSIONS = {
    "cotton": ["caught in", "carton", "cot in"],
    "kitten": ["captain", "caught in", "kitchen"],
    "barn": ["bar", "born", "burn"],
    "farm": ["form", "firm"],
    "farmer": ["former", "framer"],
    "white": ["right", "wide", "why it"],
    "black": ["block", "back"],
    "brown": ["brow", "crown"],
    "gray": ["great", "grey"],
    "orange": ["a range", "arrange"],
    "silver": ["sliver", "shiver"],
    "golden": ["gold in", "olden"],
    "red": ["read", "rid"],
    "green": ["grain", "grin"],
    "blue": ["blew", "brew"],
    "cream": ["crime", "dream"],
    "spotted": ["spot it", "potted"],
    "color": ["collar", "caller"],
    "colour": ["collar"],
    "horse": ["hoarse", "house"],
    "pony": ["bony", "phony"],
    "goat": ["coat", "got"],
    "sheep": ["ship", "cheap"],
    "lamb": ["lam", "land"],
    "duck": ["dock", "dug"],
    "chick": ["check", "cheek"],
    "calf": ["cough", "half"],
    "piglet": ["pick let", "pilot"],
    "rabbit": ["rab it", "habit"],
    "puppy": ["poppy", "puppet"],
    "mouse": ["mouth", "moss"],
    "sparrow": ["spare oh", "borrow"],
    "squirrel": ["swirl", "quarrel"],
    "hedgehog": ["hedge hog", "edge hog"],
    "owl": ["howl", "oil"],
    "frog": ["fog", "frock"],
    "stable": ["table", "staple"],
    "meadow": ["middle", "mellow"],
    "garden": ["guard in", "pardon"],
    "orchard": ["or chard", "orchid"],
    "field": ["filled", "feel"],
    "shed": ["shade", "said"],
    "coop": ["coup", "cope"],
    "mill": ["meal", "mall"],
    "house": ["how's", "hose"],
    "home": ["hum", "whom"],
    "corn": ["con", "cone"],
    "hay": ["hey", "hate"],
    "oats": ["notes", "boats"],
    "apples": ["apple's", "ample"],
    "carrots": ["carats", "carrot"],
    "berries": ["buries", "bury's"],
    "seeds": ["cedes", "seats"],
    "bread": ["bred", "brad"],
    "water": ["what are", "wader"],
    "morning": ["mourning", "warning"],
    "evening": ["even in", "evening's"],
    "night": ["knight", "nigh"],
    "day": ["they", "dale"],
    "week": ["weak", "wick"],
    "sun": ["son", "sung"],
    "rain": ["reign", "rein"],
    "found": ["fond", "phoned"],
    "find": ["fined", "fine"],
    "ate": ["eight", "eat"],
    "eat": ["it", "heat"],
    "lived": ["loved", "live"],
    "live": ["leave", "love"],
    "played": ["plate", "prayed"],
    "play": ["pray", "plea"],
    "slept": ["slipped", "swept"],
    "sleep": ["slip", "sheep"],
    "ran": ["run", "rang"],
    "walked": ["worked", "walk"],
    "jumped": ["dumped", "jump"],
    "named": ["name", "aimed"],
    "name": ["main", "aim"],
    "called": ["cold", "culled"],
    "friend": ["trend", "front"],
    "friends": ["trends", "fronds"],
    "sisters": ["cistern", "sister"],
    "brother": ["bother", "brothers"],
    "mother": ["mutter", "other"],
    "father": ["farther", "feather"],
    "little": ["litter", "light all"],
    "big": ["bag", "beg"],
    "small": ["smell", "mall"],
    "old": ["hold", "odd"],
    "young": ["lung", "yon"],
    "warm": ["worm", "warn"],
    "corner": ["coroner", "corn or"],
    "shiny": ["shy knee", "tiny"],
    "button": ["but in", "baton"],
    "ribbon": ["rib in", "ribband"],
    "bell": ["bill", "belle"],
    "coin": ["con", "quoin"],
    "feather": ["father", "fether"],
    "marble": ["marvel", "mumble"],
    "two": ["to", "too"],
    "three": ["tree", "free"],
    "four": ["for", "fore"],
    "five": ["hive", "fife"],
    "six": ["sicks", "sex"],
    "alone": ["a loan", "along"],
    "near": ["knee're", "ear"],
    "beside": ["be side", "bee side"],
    "above": ["a buff", "above's"],
    "around": ["a round", "ground"],
}

# Pool for random substitutions and insertions.
FILLER_WORDS = [
    "the", "a", "an", "and", "or", "but", "so", "oh", "uh", "um", "well",
    "then", "there", "here", "that", "this", "it", "is", "was", "to", "of",
    "in", "on", "at", "by", "for", "with", "from", "up", "down", "out",
    "over", "under", "again", "once", "just", "like", "you", "know", "i",
    "mean", "said", "say", "one", "some", "any", "all",
]

_WORD_RE = re.compile(r"[a-z0-9]+")
_EDGE_PUNCT = ".,!?;:\"'()[]"


@dataclass(frozen=True)
class NoiseSpec:
    sub_rate: float = 0.15
    del_rate: float = 0.05
    ins_rate: float = 0.05
    confusion_table: dict | None = None  # None means the built-in table
    seed: int = 0

    def __post_init__(self):
        for name in ("sub_rate", "del_rate", "ins_rate"):
            r = getattr(self, name)
            if not 0.0 <= r < 1.0:
                raise ParameterError(f"{name} must be in [0, 1), got {r}")
        if self.sub_rate + self.del_rate + self.ins_rate >= 1.0:
            raise ParameterError("noise rates must sum to less than 1")
        if self.confusion_table is not None:
            for word, candidates in self.confusion_table.items():
                if not candidates:
                    raise ParameterError(f"confusion entry {word!r} has no candidates")

    @property
    def table(self):
        return DEFAULT_CONFUSIONS if self.confusion_table is None else self.confusion_table

    @property
    def target_wer(self):
        return self.sub_rate + self.del_rate + self.ins_rate


def load_confusion_table(path) -> dict:
    """Read a word -> candidate-list table from a JSON file."""
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    if not isinstance(raw, dict):
        raise DataError(f"{path}: confusion table must be an object")
    table = {}
    for word, candidates in raw.items():
        if not isinstance(candidates, list) or not candidates:
            raise DataError(f"{path}: entry {word!r} needs a nonempty candidate list")
        table[str(word)] = [str(c) for c in candidates]
    return table


def _core(word):
    return word.strip(_EDGE_PUNCT).lower()


def _random_word(rng, avoid):
    # occasionally two words, mimicking a recognizer split
    if rng.random() < 0.1:
        pair = rng.choice(FILLER_WORDS, size=2, replace=False)
        return " ".join(pair)
    for _ in range(8):
        w = str(rng.choice(FILLER_WORDS))
        if w != avoid:
            return w
    return "uh"


def _substitute(word, spec, rng):
    core = _core(word)
    candidates = [c for c in spec.table.get(core, ()) if c != core]
    if candidates:
        return str(rng.choice(candidates))
    return _random_word(rng, core)


def _corrupt_words(words, sub, del_, ins, spec, rng):
    out = []
    for word in words:
        u = rng.random()
        if u < sub:
            out.append(_substitute(word, spec, rng))
        elif u < sub + del_:
            continue
        elif u < sub + del_ + ins:
            out.append(word)
            out.append(_random_word(rng, _core(word)))
        else:
            out.append(word)
    return out


def asr_corrupt_with_meta(text: str, spec: NoiseSpec):
    """Corrupt one text; returns (hypothesis, meta).

    meta["deletion_disabled"] marks texts whose first pass deleted every word
    and were redrawn with deletions off.
    """
    words = text.split()
    if not words:
        return text, {"deletion_disabled": False}
    rng = rng_for(spec.seed, "asr", text)
    out = _corrupt_words(words, spec.sub_rate, spec.del_rate, spec.ins_rate, spec, rng)
    meta = {"deletion_disabled": False}
    if not out:
        retry = rng_for(spec.seed, "asr-retry", text)
        out = _corrupt_words(words, spec.sub_rate, 0.0, spec.ins_rate, spec, retry)
        meta["deletion_disabled"] = True
    return " ".join(out), meta


def asr_corrupt(text: str, spec: NoiseSpec) -> str:
    return asr_corrupt_with_meta(text, spec)[0]


def _words(s: str):
    return _WORD_RE.findall(s.lower())


def word_edit_distance(ref_words, hyp_words) -> int:
    """Word-level Levenshtein distance with unit costs."""
    if not ref_words:
        return len(hyp_words)
    if not hyp_words:
        return len(ref_words)
    prev = list(range(len(hyp_words) + 1))
    for i, ref in enumerate(ref_words, start=1):
        cur = [i] + [0] * len(hyp_words)
        for j, hyp in enumerate(hyp_words, start=1):
            cost = 0 if ref == hyp else 1
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + cost)
        prev = cur
    return prev[-1]


def wer(reference: str, hypothesis: str) -> float:
    """Word error rate: edit distance over reference length.

    Words are lowercase alphanumeric runs; punctuation never counts.
    """
    ref = _words(reference)
    if not ref:
        raise ContractError("wer needs a nonempty reference")
    return word_edit_distance(ref, _words(hypothesis)) / len(ref)


def corrupt_stories(stories, spec: NoiseSpec):
    """Fill asr_document/asr_question on copies; clean fields stay untouched."""
    from .data import Story, Turn  # local import keeps data -> noise one-way

    out = []
    for story in stories:
        turns = [
            Turn(
                question=t.question,
                asr_question=asr_corrupt(t.question, spec),
                answer=t.answer,
                rationale_span=t.rationale_span,
                answerable=t.answerable,
            )
            for t in story.turns
        ]
        out.append(Story(
            id=story.id,
            document=story.document,
            asr_document=asr_corrupt(story.document, spec),
            turns=turns,
        ))
    return out


def corpus_wer(stories) -> float:
    """Length-weighted WER between clean and ASR documents and questions."""
    edits, ref_len = 0, 0
    for story in stories:
        pairs = [(story.document, story.asr_document)]
        pairs += [(t.question, t.asr_question) for t in story.turns]
        for clean, noisy in pairs:
            if noisy is None:
                continue
            ref = _words(clean)
            edits += word_edit_distance(ref, _words(noisy))
            ref_len += len(ref)
    if ref_len == 0:
        raise ContractError("corpus has no ASR view to measure")
    return edits / ref_len
