"""Unigram-LM word-piece segmentation with n-best enumeration and sampling.

Vocabulary learning is out of scope: vocabularies load from a UTF-8 text file
with one "piece<TAB>log_prob" per line. Word boundaries use a prefix marker
(U+2581, the same convention most subword toolkits emit): a word-initial piece
starts with the marker, and decode() splits on it. Characters the vocabulary
cannot cover map to UNK instead of raising.

Segmentation is deterministic: the best split maximizes the summed piece
log-probabilities, with ties broken toward fewer pieces, then lexicographically
by piece strings.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .rng import Rng

BOUNDARY = "▁"
EOS_PIECE = "<eos>"
UNK_PIECE = "<unk>"
UNK_LOG_PROB = -20.0
NBEST_POOL = 10


@dataclass(frozen=True)
class TokenSequence:
    ids: tuple[int, ...]

    def __len__(self) -> int:
        return len(self.ids)


@dataclass
class WordPieceVocab:
    pieces: list[str]
    log_probs: list[float]
    piece_to_id: dict[str, int] = field(init=False)
    eos_id: int = field(init=False)
    unk_id: int = field(init=False)
    max_piece_len: int = field(init=False)

    def __post_init__(self):
        if len(self.pieces) != len(self.log_probs):
            raise ValueError("pieces and log_probs length mismatch")
        for piece, lp in zip(self.pieces, self.log_probs):
            if lp > 0:
                raise ValueError(f"piece {piece!r} has positive log-prob {lp}")
        for special in (EOS_PIECE, UNK_PIECE):
            if special not in self.pieces:
                self.pieces.append(special)
                self.log_probs.append(UNK_LOG_PROB)
        self.piece_to_id = {p: i for i, p in enumerate(self.pieces)}
        if len(self.piece_to_id) != len(self.pieces):
            raise ValueError("duplicate pieces in vocabulary")
        self.eos_id = self.piece_to_id[EOS_PIECE]
        self.unk_id = self.piece_to_id[UNK_PIECE]
        self.max_piece_len = max(len(p) for p in self.pieces)

    def __len__(self) -> int:
        return len(self.pieces)

    @property
    def uses_marker(self) -> bool:
        return any(p.startswith(BOUNDARY) for p in self.pieces if p not in (EOS_PIECE, UNK_PIECE))

    def log_prob(self, piece_id: int) -> float:
        return self.log_probs[piece_id]


def load_vocab(path) -> WordPieceVocab:
    pieces, log_probs = [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            try:
                piece, lp = line.split("\t")
                log_probs.append(float(lp))
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: expected 'piece<TAB>log_prob'") from exc
            pieces.append(piece)
    return WordPieceVocab(pieces, log_probs)


def save_vocab(path, vocab: WordPieceVocab) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for piece, lp in zip(vocab.pieces, vocab.log_probs):
            fh.write(f"{piece}\t{lp}\n")


# ranking key: higher score first, then fewer pieces, then lexicographic
def _key(score: float, pieces: tuple[str, ...]):
    return (-score, len(pieces), pieces)


def _segmentations(word: str, vocab: WordPieceVocab, n: int):
    """Top-n (score, piece tuple) for the literal string, best-first.

    Dynamic program over end positions keeping the n best partials at each
    position; exact because extending by one piece adds the same increment to
    every partial ending at the split point. Uncoverable characters become a
    single-character UNK step.
    """
    if not word:
        raise ValueError("cannot segment an empty word")
    # best[e] = list of (score, pieces) for word[:e]
    best: list[list[tuple[float, tuple[str, ...]]]] = [[] for _ in range(len(word) + 1)]
    best[0] = [(0.0, ())]
    for end in range(1, len(word) + 1):
        cands: list[tuple[float, tuple[str, ...]]] = []
        lo = max(0, end - vocab.max_piece_len)
        for start in range(lo, end):
            piece = word[start:end]
            pid = vocab.piece_to_id.get(piece)
            if pid is None or not best[start]:
                continue
            lp = vocab.log_prob(pid)
            for score, seq in best[start]:
                cands.append((score + lp, seq + (piece,)))
        if not cands and best[end - 1]:
            # no piece covers this character: emit UNK for it and move on
            lp = vocab.log_prob(vocab.unk_id)
            for score, seq in best[end - 1]:
                cands.append((score + lp, seq + (UNK_PIECE,)))
        cands.sort(key=lambda c: _key(c[0], c[1]))
        best[end] = cands[:n]
    return best[len(word)]


def _to_ids(vocab: WordPieceVocab, pieces: tuple[str, ...]) -> TokenSequence:
    return TokenSequence(tuple(vocab.piece_to_id[p] for p in pieces))


def segment_best(word: str, vocab: WordPieceVocab) -> TokenSequence:
    """Highest-probability segmentation of the literal string."""
    segs = _segmentations(word, vocab, 1)
    if not segs:
        return TokenSequence((vocab.unk_id,))
    return _to_ids(vocab, segs[0][1])


def segment_nbest(word: str, vocab: WordPieceVocab, n: int) -> list[tuple[TokenSequence, float]]:
    """The n best distinct segmentations in nonincreasing score order."""
    if n < 1:
        raise ValueError("n must be >= 1")
    segs = _segmentations(word, vocab, n)
    if not segs:
        return [(TokenSequence((vocab.unk_id,)), vocab.log_prob(vocab.unk_id))]
    return [(_to_ids(vocab, pieces), score) for score, pieces in segs]


def sample_word(word: str, vocab: WordPieceVocab, p_wp: float, rng: Rng) -> TokenSequence:
    """With probability p_wp, a uniform draw over the ten best segmentations;
    otherwise the single best one.

    UNK-fallback segmentations are valid only as a last resort, so they are
    excluded from the sampling pool whenever the word is fully coverable;
    sampling must never lose the surface string.
    """
    if not 0.0 <= p_wp <= 1.0:
        raise ValueError(f"p_wp must be in [0, 1], got {p_wp}")
    if p_wp > 0.0 and rng.uniform() < p_wp:
        alts = segment_nbest(word, vocab, NBEST_POOL)
        if vocab.unk_id not in alts[0][0].ids:
            alts = [a for a in alts if vocab.unk_id not in a[0].ids]
        return alts[int(rng.integers(0, len(alts)))][0]
    return segment_best(word, vocab)


def _mark(word: str, vocab: WordPieceVocab) -> str:
    return BOUNDARY + word if vocab.uses_marker else word


def encode_transcript(text: str, vocab: WordPieceVocab, p_wp: float = 0.0,
                      rng: Rng | None = None) -> TokenSequence:
    """Tokenize whitespace-separated words, sampling independently per word."""
    words = text.split()
    if not words:
        return TokenSequence(())
    if p_wp > 0.0 and rng is None:
        raise ValueError("sampling requires an rng")
    ids: list[int] = []
    for word in words:
        marked = _mark(word, vocab)
        if p_wp > 0.0:
            seq = sample_word(marked, vocab, p_wp, rng)
        else:
            seq = segment_best(marked, vocab)
        ids.extend(seq.ids)
    return TokenSequence(tuple(ids))


def decode(ids, vocab: WordPieceVocab) -> str:
    """Invert boundary markers back to a space-separated string."""
    ids = ids.ids if isinstance(ids, TokenSequence) else tuple(ids)
    parts = []
    for i in ids:
        if i == vocab.eos_id:
            break
        parts.append(vocab.pieces[i])
    text = "".join(parts)
    if vocab.uses_marker:
        return " ".join(w for w in text.split(BOUNDARY) if w)
    return text
