"""Backoff n-gram language model over token ids, loaded from ARPA text.

ARPA stores log10 probabilities (tab- or space-separated, optional backoff
column); they are converted to natural log once at load and every public
score is natural log. Scoring follows standard Katz backoff: use the longest
matching n-gram, otherwise add the context's backoff weight and retry with a
shortened history.

Unknown tokens score as the <unk> unigram when the model has one, else as a
configurable floor, so open-vocabulary decoding never crashes. Model training
is out of scope apart from a naive add-one estimator for toy experiments.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field

LN10 = math.log(10.0)
UNK = "<unk>"
BOS = "<s>"
EOS = "</s>"
DEFAULT_UNK_SCORE = math.log(1e-10)


class ArpaError(ValueError):
    pass


@dataclass
class ArpaModel:
    """Backoff tables keyed by token-id tuples; probabilities in natural log."""

    max_order: int
    vocab: dict[str, int]
    probs: dict[tuple[int, ...], float]
    backoffs: dict[tuple[int, ...], float]
    unk_score: float = DEFAULT_UNK_SCORE
    tokens: list[str] = field(init=False)

    def __post_init__(self):
        self.tokens = [""] * len(self.vocab)
        for tok, i in self.vocab.items():
            self.tokens[i] = tok
        if UNK in self.vocab:
            self.unk_score = self.probs[(self.vocab[UNK],)]

    def token_id(self, token: str) -> int | None:
        return self.vocab.get(token)

    def score(self, token: int, context: tuple[int, ...] = ()) -> float:
        """Natural-log probability of token given the context ids.

        Longest-match backoff: each missing (context, token) gram adds the
        context's backoff weight and retries with the history shortened, so
        the recursion always terminates at the unigram table.
        """
        context = tuple(context)[-(self.max_order - 1) :] if self.max_order > 1 else ()
        if (token,) not in self.probs:
            return self.unk_score
        total = 0.0
        while True:
            gram = context + (token,)
            if gram in self.probs:
                return total + self.probs[gram]
            total += self.backoffs.get(context, 0.0)
            context = context[1:]

    def start_state(self, bos: bool = False) -> tuple[int, ...]:
        if bos and BOS in self.vocab:
            return (self.vocab[BOS],)
        return ()

    def advance(self, state: tuple[int, ...], token: int) -> tuple[float, tuple[int, ...]]:
        """Incremental scoring: (ln p(token | state), next state)."""
        lp = self.score(token, state)
        next_state = (state + (token,))[-(self.max_order - 1) :] if self.max_order > 1 else ()
        return lp, next_state

    def score_sequence(self, tokens, bos: bool = False, eos_token: int | None = None) -> float:
        """Sum of conditional scores; pass eos_token to score a final EOS."""
        state = self.start_state(bos=bos)
        total = 0.0
        seq = list(tokens) + ([eos_token] if eos_token is not None else [])
        for tok in seq:
            lp, state = self.advance(state, tok)
            total += lp
        return total


def load_arpa(text: str, validate: bool = True) -> ArpaModel:
    """Parse ARPA text; raises ArpaError with a line number on bad input."""
    lines = text.splitlines()
    counts: dict[int, int] = {}
    vocab: dict[str, int] = {}
    probs: dict[tuple[int, ...], float] = {}
    backoffs: dict[tuple[int, ...], float] = {}
    seen: dict[int, int] = defaultdict(int)

    def intern(token: str) -> int:
        if token not in vocab:
            vocab[token] = len(vocab)
        return vocab[token]

    i = 0
    n = len(lines)
    while i < n and lines[i].strip() != "\\data\\":
        if lines[i].strip():
            raise ArpaError(f"line {i + 1}: expected \\data\\ header")
        i += 1
    if i == n:
        raise ArpaError("missing \\data\\ header")
    i += 1
    while i < n and lines[i].strip():
        line = lines[i].strip()
        if not line.startswith("ngram "):
            raise ArpaError(f"line {i + 1}: malformed count line {line!r}")
        try:
            order_s, count_s = line[len("ngram ") :].split("=")
            counts[int(order_s)] = int(count_s)
        except ValueError as exc:
            raise ArpaError(f"line {i + 1}: malformed count line {line!r}") from exc
        i += 1
    if not counts:
        raise ArpaError("no ngram counts declared")
    max_order = max(counts)

    order = None
    while i < n:
        line = lines[i].strip()
        i += 1
        if not line:
            continue
        if line == "\\end\\":
            order = None
            break
        if line.endswith("-grams:") and line.startswith("\\"):
            try:
                order = int(line[1:].split("-")[0])
            except ValueError as exc:
                raise ArpaError(f"line {i}: bad section header {line!r}") from exc
            if order not in counts:
                raise ArpaError(f"line {i}: section order {order} not declared in \\data\\")
            continue
        if order is None:
            raise ArpaError(f"line {i}: entry outside any n-gram section")
        parts = line.split()
        if len(parts) == order + 2:
            has_backoff = True
        elif len(parts) == order + 1:
            has_backoff = False
        else:
            raise ArpaError(f"line {i}: expected {order}-gram entry, got {line!r}")
        try:
            logp = float(parts[0])
            backoff = float(parts[-1]) if has_backoff else 0.0
        except ValueError as exc:
            raise ArpaError(f"line {i}: unparseable number in {line!r}") from exc
        gram = tuple(intern(t) for t in parts[1 : order + 1])
        probs[gram] = logp * LN10
        if has_backoff and backoff != 0.0:
            backoffs[gram] = backoff * LN10
        seen[order] += 1
    if order is not None:
        raise ArpaError("missing \\end\\ marker")
    for o, declared in counts.items():
        if seen.get(o, 0) != declared:
            raise ArpaError(f"declared {declared} {o}-grams but found {seen.get(o, 0)}")
    if validate:
        for gram in probs:
            if len(gram) > 1 and gram[:-1] not in probs:
                hist = " ".join(_names(vocab, gram[:-1]))
                raise ArpaError(f"history '{hist}' of an n-gram is not itself listed")
    return ArpaModel(max_order=max_order, vocab=vocab, probs=probs, backoffs=backoffs)


def _names(vocab: dict[str, int], gram: tuple[int, ...]) -> list[str]:
    inv = {i: t for t, i in vocab.items()}
    return [inv[g] for g in gram]


def load_arpa_file(path, validate: bool = True) -> ArpaModel:
    with open(path, encoding="utf-8") as fh:
        return load_arpa(fh.read(), validate=validate)


def dump_arpa(model: ArpaModel) -> str:
    """Serialize back to ARPA text (log10, tab-separated)."""
    by_order: dict[int, list[tuple[tuple[int, ...], float]]] = defaultdict(list)
    for gram, lp in model.probs.items():
        by_order[len(gram)].append((gram, lp))
    out = ["\\data\\"]
    for o in sorted(by_order):
        out.append(f"ngram {o}={len(by_order[o])}")
    out.append("")
    for o in sorted(by_order):
        out.append(f"\\{o}-grams:")
        for gram, lp in sorted(by_order[o], key=lambda kv: _names(model.vocab, kv[0])):
            words = "\t".join(_names(model.vocab, gram))
            # 17 significant digits round-trip a double exactly
            line = f"{lp / LN10:.17g}\t{words}"
            if gram in model.backoffs:
                line += f"\t{model.backoffs[gram] / LN10:.17g}"
            out.append(line)
        out.append("")
    out.append("\\end\\")
    return "\n".join(out) + "\n"


def estimate_add_one(sequences, order: int = 3) -> ArpaModel:
    """Add-one n-gram estimator for toy experiments only.

    sequences: iterables of token strings; every sentence is wrapped in
    <s>...</s>. Backoff weights are left at 1 (log 0), which keeps scores
    well-defined though not perfectly normalized - fine for fixtures.
    """
    counts: dict[tuple[str, ...], int] = defaultdict(int)
    context_counts: dict[tuple[str, ...], int] = defaultdict(int)
    vocab_set = {UNK, BOS, EOS}
    for seq in sequences:
        toks = [BOS] + list(seq) + [EOS]
        vocab_set.update(toks)
        for o in range(1, order + 1):
            for j in range(len(toks) - o + 1):
                gram = tuple(toks[j : j + o])
                counts[gram] += 1
                context_counts[gram[:-1]] += 1
    vocab = {tok: i for i, tok in enumerate(sorted(vocab_set))}
    v = len(vocab)
    probs: dict[tuple[int, ...], float] = {}
    for gram, c in counts.items():
        denom = context_counts[gram[:-1]] + v
        ids = tuple(vocab[t] for t in gram)
        probs[ids] = math.log((c + 1) / denom)
    for tok, i in vocab.items():
        probs.setdefault((i,), math.log(1.0 / (context_counts[()] + v)))
    return ArpaModel(max_order=order, vocab=vocab, probs=probs, backoffs={})


class NullScorer:
    """LM stand-in that scores everything 0 (disables fusion)."""

    def start_state(self, bos: bool = False):
        return ()

    def advance(self, state, token):
        return 0.0, state


class MappedScorer:
    """Adapts an ArpaModel trained on piece strings to model token ids.

    id_map[model_token] is the LM's id for that token (UNK id when the LM
    has never seen the piece).
    """

    def __init__(self, model: ArpaModel, pieces: list[str], eos_id: int):
        self.model = model
        unk = model.vocab.get(UNK)
        self.id_map = []
        for i, piece in enumerate(pieces):
            if i == eos_id:
                mapped = model.vocab.get(EOS, unk)
            else:
                mapped = model.vocab.get(piece, unk)
            self.id_map.append(mapped)

    def start_state(self, bos: bool = False):
        return self.model.start_state(bos=bos)

    def advance(self, state, token):
        mapped = self.id_map[token]
        if mapped is None:
            return self.model.unk_score, state
        return self.model.advance(state, mapped)
