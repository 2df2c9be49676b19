"""Cross-modal combination of the speech and text encoder outputs.

Four modes, all producing a text-aligned sequence of width 2*d so downstream
parameter counts never depend on the mode:
  cross_attention  [text ; attention(text queries speech)]
  con_fusion       [text ; meanpooled speech broadcast per position]
  speech_only      same formula as con_fusion; the model upstream blanks the
                   text token identities so content arrives via speech only
  text_only        [text ; text]
"""

from __future__ import annotations

from dataclasses import dataclass

from .encoder import MHAParams, broadcast_row, mean_rows, multi_head_attention
from .errors import ContractError
from .tensor import Tensor, concat

FUSION_MODES = ("cross_attention", "con_fusion", "speech_only", "text_only")


def check_mode(mode: str) -> str:
    if mode not in FUSION_MODES:
        raise ContractError(f"unknown fusion mode {mode!r}; expected one of {FUSION_MODES}")
    return mode


@dataclass
class FusedEmbedding:
    sequence: Tensor  # [n_text x 2*d]
    mode: str


class CoAttention:
    """One co-attention layer: each modality queries the other.

    The two directions own separate projections. The QA model only
    instantiates the text-query direction it consumes; this standalone block
    exists for the symmetric contract and its tests.
    """

    def __init__(self, d_model, num_heads, seed, tag="co_attention"):
        self.num_heads = num_heads
        self.speech_query = MHAParams(d_model, seed, (tag, "speech_query"))
        self.text_query = MHAParams(d_model, seed, (tag, "text_query"))

    def __call__(self, speech, text):
        return cross_attention(speech, text, num_heads=self.num_heads,
                               speech_query=self.speech_query,
                               text_query=self.text_query)


def cross_attention(speech, text, *, num_heads=1, speech_query=None, text_query=None):
    """Query each modality against the other.

    Returns (speech_cross, text_cross): speech rows attending over text, and
    text rows attending over speech. Projection params of None mean identity.
    """
    if speech.ndim != 2 or text.ndim != 2 or speech.shape[0] == 0 or text.shape[0] == 0:
        raise ContractError(
            f"cross_attention needs nonempty 2-d modalities, got {speech.shape} and {text.shape}"
        )
    if speech.shape[1] != text.shape[1]:
        raise ContractError(
            f"modalities disagree on width: {speech.shape} vs {text.shape}"
        )
    speech_cross = multi_head_attention(speech, text, text, num_heads=num_heads,
                                        params=speech_query)
    text_cross = multi_head_attention(text, speech, speech, num_heads=num_heads,
                                      params=text_query)
    return speech_cross, text_cross


def fuse(context, speech, text, mode, *, cross=None, num_heads=1):
    """Combine the text-aligned context with the second stream per mode.

    context: [n_text x d] text-aligned contextual embedding.
    speech:  [n_speech x d] speech encoder output.
    text:    [n_text x d] text-side embedding for the text_only formula.
    cross:   projection params for the text-queries-speech attention
             (cross_attention mode only).
    """
    check_mode(mode)
    if context.ndim != 2 or context.shape[0] == 0:
        raise ContractError(f"fuse needs a nonempty context, got shape {context.shape}")
    if mode == "text_only":
        if text.shape != context.shape:
            raise ContractError(
                f"text stream shape {text.shape} does not match context {context.shape}"
            )
        fused = concat([context, text], axis=1)
    elif mode == "cross_attention":
        if speech.shape[0] == 0:
            raise ContractError("cross_attention fusion with an empty speech stream")
        text_cross = multi_head_attention(context, speech, speech,
                                          num_heads=num_heads, params=cross)
        fused = concat([context, text_cross], axis=1)
    else:  # con_fusion and speech_only share the pooled-speech formula
        if speech.shape[0] == 0:
            raise ContractError(f"{mode} fusion with an empty speech stream")
        pooled = broadcast_row(mean_rows(speech), context.shape[0])
        fused = concat([context, pooled], axis=1)
    return FusedEmbedding(sequence=fused, mode=mode)
