"""Span-prediction QA model over paired text and pseudo-speech streams.

Pipeline: encode the packed text view and the speech units separately, fuse
them into a text-aligned sequence of width 2*d, project back to d, run a
joint transformer stack, then score answer spans over [sentinel ; document
grid]. Slot 0 rides on the [CLS] position and means "no answer"; document
slot k corresponds to window token k-1.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .checkpoint import assign_params, load_params, params_fingerprint, save_params
from .encoder import (
    INIT_STD,
    NEG_MASK,
    Encoder,
    EncoderConfig,
    MHAParams,
    TransformerLayer,
    layer_norm,
)
from .data import PAD, RESERVED, UNK
from .errors import ConfigError, ContractError, ParameterError
from .fusion import check_mode, fuse
from .seeding import rng_for, stable_hash64
from .tensor import Tensor, matmul, take, transpose


@dataclass(frozen=True)
class QAModelConfig:
    vocab_size: int
    speech_vocab_size: int = 128
    d_model: int = 64
    num_heads: int = 4
    num_layers: int = 2        # depth of each modality encoder
    num_joint_layers: int = 2  # depth of the post-fusion stack
    d_ff: int = 128
    max_len: int = 384
    max_speech_len: int = 1024
    fusion: str = "cross_attention"
    dropout_rate: float = 0.1
    max_answer_len: int = 12
    seed: int = 0

    def __post_init__(self):
        check_mode(self.fusion)
        if self.num_joint_layers < 0:
            raise ParameterError(
                f"num_joint_layers must be >= 0, got {self.num_joint_layers}"
            )
        if self.max_answer_len < 1:
            raise ParameterError(
                f"max_answer_len must be >= 1, got {self.max_answer_len}"
            )
        # the modality encoders re-validate the shared dimensions
        self.text_encoder_config()
        self.speech_encoder_config()

    def text_encoder_config(self):
        return EncoderConfig(
            vocab_size=self.vocab_size, num_layers=self.num_layers,
            num_heads=self.num_heads, d_model=self.d_model, d_ff=self.d_ff,
            max_len=self.max_len, dropout_rate=self.dropout_rate,
            seed=stable_hash64(self.seed, "text-encoder"),
        )

    def speech_encoder_config(self):
        return EncoderConfig(
            vocab_size=self.speech_vocab_size, num_layers=self.num_layers,
            num_heads=self.num_heads, d_model=self.d_model, d_ff=self.d_ff,
            max_len=self.max_speech_len, dropout_rate=self.dropout_rate,
            seed=stable_hash64(self.seed, "speech-encoder"),
        )

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, raw):
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown model config key {sorted(unknown)[0]!r}")
        return cls(**raw)


@dataclass
class SpanLogits:
    """Start/end scores over [sentinel ; document grid], both shaped (1, m).

    Slots a view does not populate (grid padding beyond its own document) are
    already pushed to the mask floor. `valid` records which slots are real.
    """

    start: Tensor
    end: Tensor
    valid: np.ndarray  # bool (m,), slot 0 always True
    doc_len: int

    @property
    def n_slots(self):
        return self.valid.shape[0]


@dataclass
class AnswerSpan:
    is_no_answer: bool
    start_token: int | None
    end_token: int | None
    text: str
    score: float
    no_answer_score: float


class QAModel:
    def __init__(self, config: QAModelConfig):
        self.config = config
        self.text_encoder = Encoder(config.text_encoder_config())
        self.speech_encoder = Encoder(config.speech_encoder_config())
        d = config.d_model
        seed = config.seed
        self.cross = (MHAParams(d, seed, ("fusion", "text_query"))
                      if config.fusion == "cross_attention" else None)
        rng = rng_for(seed, "fuse-projection")
        self.proj_w = Tensor(rng.normal(0.0, INIT_STD, size=(2 * d, d)),
                             requires_grad=True)
        self.proj_b = Tensor(np.zeros(d), requires_grad=True)
        self.joint_layers = [
            TransformerLayer(d, config.d_ff, config.num_heads, seed, ("joint", i))
            for i in range(config.num_joint_layers)
        ]
        if config.num_joint_layers > 0:
            self.joint_final_g = Tensor(np.ones(d), requires_grad=True)
            self.joint_final_b = Tensor(np.zeros(d), requires_grad=True)
        else:
            self.joint_final_g = self.joint_final_b = None
        rng = rng_for(seed, "span-head")
        self.span_w_start = Tensor(rng.normal(0.0, INIT_STD, size=(d, 1)),
                                   requires_grad=True)
        self.span_b_start = Tensor(np.zeros(1), requires_grad=True)
        self.span_w_end = Tensor(rng.normal(0.0, INIT_STD, size=(d, 1)),
                                 requires_grad=True)
        self.span_b_end = Tensor(np.zeros(1), requires_grad=True)

    # -- parameters ---------------------------------------------------------

    def named_parameters(self):
        out = self.text_encoder.named_parameters(prefix="text_encoder")
        out.update(self.speech_encoder.named_parameters(prefix="speech_encoder"))
        if self.cross is not None:
            out.update(self.cross.named("fusion.text_query"))
        out["proj.w"] = self.proj_w
        out["proj.b"] = self.proj_b
        for i, layer in enumerate(self.joint_layers):
            out.update(layer.named(f"joint.{i}"))
        if self.joint_final_g is not None:
            out["joint.final_g"] = self.joint_final_g
            out["joint.final_b"] = self.joint_final_b
        out["span.w_start"] = self.span_w_start
        out["span.b_start"] = self.span_b_start
        out["span.w_end"] = self.span_w_end
        out["span.b_end"] = self.span_b_end
        return out

    def parameter_count(self):
        return sum(p.data.size for p in self.named_parameters().values())

    def fingerprint(self):
        return params_fingerprint(self.named_parameters())

    def save(self, path, meta=None):
        full_meta = {"config": self.config.to_dict()}
        if meta:
            full_meta.update(meta)
        save_params(path, self.named_parameters(), meta=full_meta)

    @classmethod
    def load(cls, path):
        loaded, meta = load_params(path)
        if "config" not in meta:
            raise ConfigError(f"{path}: checkpoint carries no model config")
        model = cls(QAModelConfig.from_dict(meta["config"]))
        assign_params(model.named_parameters(), loaded)
        return model, meta

    # -- forward ------------------------------------------------------------

    def _text_ids_for_mode(self, packed):
        """speech_only blanks document token identities; content must arrive
        through the speech stream. Question and structural markers survive."""
        ids = packed.ids
        if self.config.fusion != "speech_only":
            return ids
        ids = ids.copy()
        lo = packed.doc_offset
        hi = packed.doc_offset + packed.doc_grid
        region = ids[lo:hi]
        region[region >= len(RESERVED)] = UNK
        ids[lo:hi] = region
        return ids

    def forward(self, packed, speech_ids, *, training=False, rng=None):
        """Span logits for one packed view plus its speech-unit stream."""
        ids = self._text_ids_for_mode(packed)
        n = ids.shape[0]
        if packed.doc_offset < 1 or packed.doc_offset + packed.doc_grid >= n:
            raise ContractError(
                f"packed view geometry out of range: offset {packed.doc_offset}, "
                f"grid {packed.doc_grid}, length {n}"
            )
        valid_keys = ids != PAD
        ctx = self.text_encoder.encode(ids, valid=valid_keys, training=training,
                                       rng=rng)
        if self.config.fusion == "text_only":
            speech = ctx  # placeholder; the text_only formula never touches it
        else:
            speech_ids = np.asarray(speech_ids, dtype=np.int64)
            speech = self.speech_encoder.encode(speech_ids, training=training,
                                                rng=rng)
            if speech.shape[0] == 0:
                raise ContractError("speech-dependent fusion with no speech units")
        fused = fuse(ctx, speech, ctx, self.config.fusion, cross=self.cross,
                     num_heads=self.config.num_heads)
        h = matmul(fused.sequence, self.proj_w) + self.proj_b
        mask = np.broadcast_to(valid_keys, (n, n)).copy() if self.joint_layers else None
        rate = self.config.dropout_rate if training else 0.0
        for layer in self.joint_layers:
            h = layer(h, mask=mask, dropout_rate=rate, rng=rng)
        if self.joint_final_g is not None:
            h = layer_norm(h, self.joint_final_g, self.joint_final_b)

        slot_index = np.concatenate([
            [0],  # [CLS] carries the no-answer sentinel
            np.arange(packed.doc_offset, packed.doc_offset + packed.doc_grid),
        ])
        slots = take(h, slot_index)
        start = transpose(matmul(slots, self.span_w_start) + self.span_b_start)
        end = transpose(matmul(slots, self.span_w_end) + self.span_b_end)
        valid = np.concatenate([[True], packed.doc_valid])
        floor = Tensor(np.where(valid, 0.0, NEG_MASK)[None, :])
        return SpanLogits(start=start + floor, end=end + floor, valid=valid,
                          doc_len=packed.doc_len)

    # -- decoding -----------------------------------------------------------

    def predict_answer(self, logits: SpanLogits, doc_tokens, *,
                       max_answer_len=None) -> AnswerSpan:
        """Best-scoring span; the sentinel wins only by strictly exceeding it.

        Ties between spans resolve to the earliest start, then earliest end.
        """
        if len(doc_tokens) != logits.doc_len:
            raise ContractError(
                f"got {len(doc_tokens)} document tokens for logits over "
                f"{logits.doc_len}"
            )
        cap = max_answer_len if max_answer_len is not None else self.config.max_answer_len
        if cap < 1:
            raise ParameterError(f"max_answer_len must be >= 1, got {cap}")
        start = logits.start.data[0]
        end = logits.end.data[0]
        no_answer_score = float(start[0] + end[0])
        best = None  # (score, start_slot, end_slot)
        for i in range(1, logits.doc_len + 1):
            j_hi = min(i + cap - 1, logits.doc_len)
            for j in range(i, j_hi + 1):
                score = float(start[i] + end[j])
                if best is None or score > best[0]:
                    best = (score, i, j)
        if best is None or no_answer_score > best[0]:
            return AnswerSpan(is_no_answer=True, start_token=None, end_token=None,
                              text="", score=no_answer_score,
                              no_answer_score=no_answer_score)
        score, i, j = best
        return AnswerSpan(is_no_answer=False, start_token=i - 1, end_token=j - 1,
                          text=" ".join(doc_tokens[i - 1:j]), score=score,
                          no_answer_score=no_answer_score)
