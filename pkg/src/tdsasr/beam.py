"""Stabilized open-vocabulary beam search with shallow LM fusion.

Hypotheses maximize

    s2s_logp + lm_weight * lm_logp + token_bonus * |Y|

with three stabilizers: a hard attention limit (expansions whose attention
peak jumps more than attn_limit encoded frames from the previous peak are
discarded, killing the hypothesis), an EOS threshold (end-of-sentence is
proposed only when log P(EOS) > eos_threshold * best log-prob; both sides are
negative, so 1.5 demands EOS land within 1.5x of the best score's magnitude),
and a candidate threshold (tokens below best - candidate_gap are never
proposed). A beam threshold prunes pooled expansions that fall more than a
fixed range below the step's best before top-k selection.

All live hypotheses are scored through ONE batched decoder call per step, so
the number of model forward passes per step is independent of beam width.
Every tie is broken lexicographically on token sequences, making results
deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .decoder import AttentionDecoder, DecoderState
from .encoder import EncoderOutput
from .ngram import NullScorer


@dataclass(frozen=True)
class BeamConfig:
    beam_size: int = 80
    lm_weight: float = 0.0  # alpha
    token_bonus: float = 0.0  # beta
    eos_threshold: float | None = 1.5  # gamma; None disables
    candidate_gap: float | None = 10.0  # eta; None disables
    attn_limit: int | None = 30  # t_max in encoded frames; None disables
    beam_threshold: float | None = 25.0  # None disables
    max_out_len: int | None = None  # None -> number of encoded frames
    count_eos: bool = True  # include EOS in |Y|
    lm_scores_eos: bool = True

    def __post_init__(self):
        if self.beam_size < 1:
            raise ValueError("beam_size must be >= 1")
        if self.candidate_gap is not None and self.candidate_gap <= 0:
            raise ValueError("candidate_gap must be positive when enabled")
        if self.attn_limit is not None and self.attn_limit < 1:
            raise ValueError("attn_limit must be >= 1 when enabled")


@dataclass(frozen=True)
class Hypothesis:
    tokens: tuple[int, ...]
    s2s_logp: float
    lm_logp: float
    state: DecoderState
    lm_state: object
    last_peak: int | None
    finished: bool

    def token_count(self, count_eos: bool) -> int:
        n = len(self.tokens)
        if not count_eos and self.finished:
            n -= 1
        return n


def combined_score(hyp: Hypothesis, cfg: BeamConfig) -> float:
    return (
        hyp.s2s_logp
        + cfg.lm_weight * hyp.lm_logp
        + cfg.token_bonus * hyp.token_count(cfg.count_eos)
    )


def candidate_tokens(log_probs: np.ndarray, cfg: BeamConfig, eos_id: int) -> list[int]:
    """Token ids admitted by the candidate and EOS thresholds.

    candidate_gap: keep tokens with log p > max - gap. eos_threshold: EOS
    additionally needs log p(EOS) > gamma * max.
    """
    best = float(log_probs.max())
    if cfg.candidate_gap is None:
        ids = list(range(len(log_probs)))
    else:
        ids = np.nonzero(log_probs > best - cfg.candidate_gap)[0].tolist()
    if cfg.eos_threshold is not None and eos_id in ids:
        if not log_probs[eos_id] > cfg.eos_threshold * best:
            ids.remove(eos_id)
    return ids


def initial_hypothesis(decoder: AttentionDecoder, lm) -> Hypothesis:
    return Hypothesis(
        tokens=(),
        s2s_logp=0.0,
        lm_logp=0.0,
        state=decoder.initial_state(),
        lm_state=lm.start_state(),
        last_peak=None,
        finished=False,
    )


def _expand_row(
    hyp: Hypothesis,
    log_probs: np.ndarray,
    query: np.ndarray,
    attn_row: np.ndarray,
    lm,
    cfg: BeamConfig,
    eos_id: int,
) -> list[Hypothesis]:
    peak = int(attn_row.argmax())
    if (
        cfg.attn_limit is not None
        and hyp.last_peak is not None
        and abs(peak - hyp.last_peak) > cfg.attn_limit
    ):
        return []  # hard attention limit: the hypothesis cannot advance
    out = []
    for tok in candidate_tokens(log_probs, cfg, eos_id):
        if tok == eos_id and not cfg.lm_scores_eos:
            lm_lp, lm_state = 0.0, hyp.lm_state
        else:
            lm_lp, lm_state = lm.advance(hyp.lm_state, tok)
        out.append(
            Hypothesis(
                tokens=hyp.tokens + (tok,),
                s2s_logp=hyp.s2s_logp + float(log_probs[tok]),
                lm_logp=hyp.lm_logp + lm_lp,
                state=DecoderState(query, tok),
                lm_state=lm_state,
                last_peak=peak,
                finished=tok == eos_id,
            )
        )
    return out


def expand(hyp: Hypothesis, enc: EncoderOutput, decoder: AttentionDecoder, lm,
           cfg: BeamConfig, eos_id: int) -> list[Hypothesis]:
    """All admissible one-token extensions of a single live hypothesis."""
    if hyp.finished:
        raise ValueError("cannot expand a finished hypothesis")
    logp, states, attn = decoder.decode_step_batch([hyp.state], enc.keys, enc.values)
    return _expand_row(hyp, logp[0], states[0].query, attn[0], lm, cfg, eos_id)


def beam_decode(
    enc: EncoderOutput,
    decoder: AttentionDecoder,
    lm=None,
    cfg: BeamConfig = BeamConfig(),
    eos_id: int | None = None,
) -> list[Hypothesis]:
    """Ranked finished hypotheses (best first) for one utterance.

    When nothing finishes within max_out_len steps, the single best
    unfinished hypothesis is returned with finished=False.
    """
    lm = lm if lm is not None else NullScorer()
    eos = decoder.eos_id if eos_id is None else eos_id
    max_len = cfg.max_out_len if cfg.max_out_len is not None else enc.length
    live = [initial_hypothesis(decoder, lm)]
    results: list[Hypothesis] = []
    best_unfinished = live[0]
    for _ in range(max_len):
        if not live:
            break
        logp, states, attn = decoder.decode_step_batch(
            [h.state for h in live], enc.keys, enc.values
        )
        pool: list[Hypothesis] = []
        for i, hyp in enumerate(live):
            pool.extend(
                _expand_row(hyp, logp[i], states[i].query, attn[i], lm, cfg, eos)
            )
        if not pool:
            break
        scored = [(combined_score(h, cfg), h) for h in pool]
        best = max(s for s, _ in scored)
        if cfg.beam_threshold is not None:
            scored = [(s, h) for s, h in scored if s >= best - cfg.beam_threshold]
        scored.sort(key=lambda sh: (-sh[0], sh[1].tokens))
        # finished hypotheses retire from the kept top-k only; this ordering
        # is what reduces beam_size=1 to greedy decoding exactly
        kept = [h for _, h in scored[: cfg.beam_size]]
        results.extend(h for h in kept if h.finished)
        live = [h for h in kept if not h.finished]
        if live:
            best_unfinished = live[0]
    if not results:
        return [best_unfinished]
    results.sort(key=lambda h: (-combined_score(h, cfg), h.tokens))
    return results


def greedy_decode(enc: EncoderOutput, decoder: AttentionDecoder,
                  eos_id: int | None = None, max_len: int | None = None) -> list[int]:
    """Argmax decoding; stops at EOS or after max_len tokens."""
    eos = decoder.eos_id if eos_id is None else eos_id
    limit = max_len if max_len is not None else enc.length
    state = decoder.initial_state()
    tokens: list[int] = []
    for _ in range(limit):
        logp, state, _ = decoder.decode_step(state, enc.keys, enc.values)
        tok = int(np.argmax(logp))
        state = replace(state, prev_token=tok)
        tokens.append(tok)
        if tok == eos:
            break
    return tokens
