"""GRU query generation with scaled inner-product key-value attention.

The decoder embeds the previous token, advances a one-layer GRU to get the
query, attends over the encoder keys/values, and maps the concatenated
[summary; query] through a single linear layer to token log-probabilities.

Teacher-forced training unrolls the recurrence once over the whole target and
then computes attention and the output layer for every position in one batched
call; the beam search scores all live hypotheses through one batched step.
Deliberately absent: input feeding, location attention, scheduled sampling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .nn import Embedding, GRUCell, Linear, Module
from .rng import Rng
from .tensor import (
    Tensor,
    concat,
    embedding,
    gru_cell,
    linear,
    log_softmax,
    matmul,
    mul,
    no_grad,
    softmax,
    stack,
    sub,
    sum_,
    transpose,
)


@dataclass(frozen=True)
class AttentionConfig:
    dim: int
    window_sigma: float | None = None

    def __post_init__(self):
        if self.window_sigma is not None and self.window_sigma <= 0:
            raise ValueError("window_sigma must be positive when enabled")


@dataclass
class DecoderState:
    """Query vector and previous token for one hypothesis.

    decode_step returns the advanced query with prev_token = -1; the caller
    fills in whichever token it commits to.
    """

    query: np.ndarray
    prev_token: int


def window_matrix(t_enc: int, u_out: int) -> np.ndarray:
    """(T', U) squared distances to a uniform diagonal alignment.

    W[i][j] = (i - (T'/U) * j)^2 with zero-based indices and a real-valued
    length ratio.
    """
    if t_enc < 1 or u_out < 1:
        raise ValueError("window_matrix needs positive dimensions")
    i = np.arange(t_enc, dtype=np.float64)[:, None]
    j = np.arange(u_out, dtype=np.float64)[None, :]
    return (i - (t_enc / u_out) * j) ** 2


def attend(
    q: Tensor,
    keys: Tensor,
    values: Tensor,
    window: tuple[np.ndarray, float] | None = None,
    scale: float | None = None,
) -> tuple[Tensor, Tensor]:
    """Scaled inner-product attention.

    q: (d,) or (U, d); keys/values: (T', d). Logits are K^T Q divided by
    sqrt(d) (or multiplied by an explicit ``scale``); an optional soft window
    (W of shape (T', U), sigma) subtracts W / (2 sigma^2) from the logits.
    Returns (summaries, attention weights) with weights normalized over T'.
    """
    d = keys.shape[-1]
    if q.shape[-1] != d or values.shape != keys.shape:
        raise ValueError(f"attend shapes disagree: q {q.shape}, K {keys.shape}, V {values.shape}")
    s = (1.0 / math.sqrt(d)) if scale is None else scale
    logits = mul(matmul(q, transpose(keys)), s)  # (T',) or (U, T')
    if window is not None:
        w, sigma = window
        penalty = np.asarray(w, dtype=np.float64) / (2.0 * sigma * sigma)
        if q.ndim == 1:
            penalty = penalty.reshape(-1)
            if penalty.shape[0] != keys.shape[0]:
                raise ValueError("window length does not match keys")
        else:
            if penalty.shape != (keys.shape[0], q.shape[0]):
                raise ValueError(f"window shape {w.shape} != (T', U)")
            penalty = penalty.T
        logits = sub(logits, Tensor(penalty))
    attn = softmax(logits, axis=-1)
    summary = matmul(attn, values)
    return summary, attn


class AttentionDecoder(Module):
    """Embedding + GRU + attention + output layer over the token vocabulary.

    The embedding table carries one extra row used as the start-of-sequence
    input; the output layer never predicts it.
    """

    def __init__(self, vocab_size: int, dim: int, rng: Rng, eos_id: int | None = None):
        self.vocab_size = vocab_size
        self.dim = dim
        self.sos_id = vocab_size  # embedding-only token
        self.eos_id = vocab_size - 1 if eos_id is None else eos_id
        if not 0 <= self.eos_id < vocab_size:
            raise ValueError(f"eos_id {eos_id} outside vocabulary of {vocab_size}")
        self.embed = Embedding(vocab_size + 1, dim, rng)
        self.gru = GRUCell(dim, dim, rng)
        self.out = Linear(2 * dim, vocab_size, rng)
        self.step_calls = 0  # batched forward invocations (beam batching contract)

    def initial_state(self) -> DecoderState:
        return DecoderState(np.zeros(self.dim), self.sos_id)

    def _check_tokens(self, ids) -> np.ndarray:
        arr = np.asarray(ids, dtype=np.intp)
        if arr.size and (arr.min() < 0 or arr.max() > self.sos_id):
            raise ValueError(f"token id out of range [0, {self.sos_id}]")
        return arr

    def decode_step(
        self, state: DecoderState, keys: Tensor, values: Tensor
    ) -> tuple[np.ndarray, DecoderState, np.ndarray]:
        """One inference step: log-probs over the vocab, advanced state, and
        the attention row."""
        logp, states, attn = self.decode_step_batch([state], keys, values)
        return logp[0], states[0], attn[0]

    def decode_step_batch(
        self, states: list[DecoderState], keys: Tensor, values: Tensor
    ) -> tuple[np.ndarray, list[DecoderState], np.ndarray]:
        """Advance every hypothesis in one forward pass.

        Returns (B, vocab) log-probs, advanced states (prev_token unset), and
        (B, T') attention rows.
        """
        ids = self._check_tokens([s.prev_token for s in states])
        with no_grad():
            q_prev = Tensor(np.stack([s.query for s in states]))
            emb = embedding(self.embed.table, ids)
            q = gru_cell(emb, q_prev, self.gru.params)
            summary, attn = attend(q, keys, values)
            logits = linear(concat([summary, q], axis=-1), self.out.weight, self.out.bias)
            logp = log_softmax(logits, axis=-1)
        self.step_calls += 1
        new_states = [DecoderState(q.data[i].copy(), -1) for i in range(len(states))]
        return logp.data, new_states, attn.data

    def forward_teacher_forced(
        self,
        keys: Tensor,
        values: Tensor,
        input_ids,
        window_sigma: float | None = None,
    ) -> tuple[Tensor, Tensor]:
        """Log-probs for all positions given ground-truth inputs.

        input_ids must begin with the start token. The GRU unrolls
        sequentially; attention and the output layer run once, batched over
        all U positions. Returns ((U, vocab) log-probs, (U, T') attention).
        """
        ids = self._check_tokens(input_ids)
        if ids.size == 0:
            raise ValueError("empty target sequence")
        if ids[0] != self.sos_id:
            raise ValueError("teacher-forced input must begin with the start token")
        emb = embedding(self.embed.table, ids)
        q_prev = Tensor(np.zeros(self.dim))
        queries = []
        for u in range(len(ids)):
            q_prev = gru_cell(embedding(self.embed.table, int(ids[u])), q_prev, self.gru.params)
            queries.append(q_prev)
        q_all = stack(queries)  # (U, d)
        window = None
        if window_sigma is not None:
            window = (window_matrix(keys.shape[0], len(ids)), window_sigma)
        summary, attn = attend(q_all, keys, values, window=window)
        logits = linear(concat([summary, q_all], axis=-1), self.out.weight, self.out.bias)
        return log_softmax(logits, axis=-1), attn


def random_sample_targets(
    targets, p_rs: float, vocab_size: int, eos_id: int, rng: Rng
):
    """Replace each position with probability p_rs by a uniform non-EOS token.

    A uniform draw c_j in [0, 1) keeps position j when c_j > p_rs; EOS
    positions are never replaced and EOS is never inserted.
    """
    ids = list(targets)
    if p_rs == 0.0 or not ids:
        return ids
    if not 0.0 <= p_rs <= 1.0:
        raise ValueError(f"p_rs must be in [0, 1], got {p_rs}")
    c = rng.uniform(size=len(ids))
    draws = rng.integers(0, vocab_size - 1, size=len(ids))
    draws = draws + (draws >= eos_id)  # uniform over the vocab minus EOS
    out = []
    for j, tok in enumerate(ids):
        if tok == eos_id or c[j] > p_rs:
            out.append(tok)
        else:
            out.append(int(draws[j]))
    return out


def label_smoothed_loss(log_probs: Tensor, targets, epsilon: float) -> Tensor:
    """Mean cross-entropy against the smoothed target distribution:
    1 - epsilon on the reference token, epsilon/(vocab-1) elsewhere."""
    if not 0.0 <= epsilon < 1.0:
        raise ValueError(f"label smoothing must be in [0, 1), got {epsilon}")
    u, vocab = log_probs.shape
    ids = np.asarray(targets, dtype=np.intp)
    if ids.shape != (u,):
        raise ValueError(f"expected {u} targets, got {ids.shape}")
    q = np.full((u, vocab), epsilon / (vocab - 1))
    q[np.arange(u), ids] = 1.0 - epsilon
    return mul(sum_(mul(log_probs, Tensor(q))), -1.0 / u)
