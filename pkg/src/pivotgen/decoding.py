"""Zero-shot generation: beam search over the decoder, plus the two
pipelines (caption vision, translate text) that route any input through
the shared coordinate space.

Decoding is fully deterministic: candidates are ranked by
log-probability / length^alpha with ties broken lexicographically on
token ids (lower id wins).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import BOS_IDS, EOS_ID, TokenSequence, VisionItem
from .model import ModelConfig, Parameters, decoder_forward, encode_multi_batch, encode_vision_batch
from .tensor import Tensor


@dataclass(frozen=True)
class DecodeConfig:
    beam_size: int = 3
    max_len: int = 24
    alpha: float = 0.0  # length-normalization exponent

    def __post_init__(self):
        if self.beam_size < 1 or self.max_len < 1:
            raise ValueError(f"beam size and max_len must be >= 1, got {self.beam_size}/{self.max_len}")


@dataclass(frozen=True)
class BeamHypothesis:
    ids: tuple[int, ...]  # includes the leading BOS
    logprob: float
    finished: bool


@dataclass(frozen=True)
class BeamResult:
    seq: TokenSequence
    logprob: float
    forced_eos: bool


def _rank_score(hyp: BeamHypothesis, alpha: float) -> float:
    length = max(1, len(hyp.ids) - 1)  # generated tokens, BOS excluded
    return hyp.logprob / (length**alpha)


def _log_softmax(rows: np.ndarray) -> np.ndarray:
    shifted = rows - rows.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def beam_search(
    coord: np.ndarray,
    lang: str,
    cfg: DecodeConfig,
    p: Parameters,
    mcfg: ModelConfig,
) -> BeamResult:
    """Standard beam search from the language's begin token, conditioned
    on one latent coordinate. If no hypothesis emits EOS within max_len
    tokens, the best one is force-terminated and flagged."""
    if lang not in BOS_IDS:
        raise ValueError(f"unknown language {lang!r}; expected one of {sorted(BOS_IDS)}")
    beams = [BeamHypothesis((BOS_IDS[lang],), 0.0, False)]
    memory = np.asarray(coord, dtype=np.float32)[None, :]
    for _ in range(cfg.max_len):
        active = [h for h in beams if not h.finished]
        if not active:
            break
        prefix = np.asarray([h.ids for h in active], dtype=np.int64)
        logits = decoder_forward(p, mcfg, prefix, Tensor(np.repeat(memory, len(active), axis=0))).data
        logprobs = _log_softmax(logits[:, -1, :])
        candidates = [h for h in beams if h.finished]
        for row, hyp in enumerate(active):
            for token in range(logprobs.shape[1]):
                candidates.append(
                    BeamHypothesis(
                        hyp.ids + (token,),
                        hyp.logprob + float(logprobs[row, token]),
                        token == EOS_ID,
                    )
                )
        candidates.sort(key=lambda h: (-_rank_score(h, cfg.alpha), h.ids))
        beams = candidates[: cfg.beam_size]

    finished = [h for h in beams if h.finished]
    if finished:
        best = max(finished, key=lambda h: (_rank_score(h, cfg.alpha), tuple(-i for i in h.ids)))
        return BeamResult(TokenSequence(lang, best.ids[1:]), best.logprob, False)
    best = beams[0]
    return BeamResult(TokenSequence(lang, best.ids[1:] + (EOS_ID,)), best.logprob, True)


def caption(item: VisionItem, lang: str, p: Parameters, mcfg: ModelConfig, cfg: DecodeConfig) -> BeamResult:
    """Vision -> text in `lang` through the shared space (Eq.-style
    coordinate substitution; no noise at inference)."""
    coord = encode_vision_batch(p, mcfg, item.frames[None]).data[0]
    return beam_search(coord, lang, cfg, p, mcfg)


def translate(
    seq: TokenSequence,
    src_lang: str,
    tgt_lang: str,
    p: Parameters,
    mcfg: ModelConfig,
    cfg: DecodeConfig,
) -> BeamResult:
    """Text -> text through the shared space; src == tgt is permitted and
    acts as reconstruction."""
    if seq.lang != src_lang:
        raise ValueError(f"sequence is tagged {seq.lang}, not {src_lang}")
    coord = encode_multi_batch(p, mcfg, [seq]).data[0]
    return beam_search(coord, tgt_lang, cfg, p, mcfg)
