"""Word Mover's Distance content scorer."""

from __future__ import annotations

import logging
from collections import Counter
from collections.abc import Iterable, Sequence
from dataclasses import dataclass

import numpy as np

from rlst.corpus import BOS, EOS, PAD, Sentence, UsageError
from rlst.transport import TransportPlan, solve_transport

log = logging.getLogger(__name__)

FRAMING = frozenset((PAD, BOS, EOS))


@dataclass(frozen=True)
class WordDistribution:
    """Normalized bag of words (nBOW) over vocabulary indices, support sorted."""

    support: tuple[int, ...]
    weights: tuple[float, ...]

    @classmethod
    def from_tokens(cls, tokens: Iterable[int]) -> WordDistribution:
        counts = Counter(tokens)
        if not counts:
            raise UsageError("empty word distribution")
        total = sum(counts.values())
        support = tuple(sorted(counts))
        return cls(support, tuple(counts[i] / total for i in support))


def content_tokens(tokens: Sequence[int], stopwords: frozenset[int] = frozenset()) -> list[int]:
    return [t for t in tokens if t not in FRAMING and t not in stopwords]


def ground_distance(i: int, j: int, embeddings: np.ndarray) -> float:
    """Euclidean distance between embedding rows."""
    return float(np.linalg.norm(embeddings[i] - embeddings[j]))


def cost_matrix(a: WordDistribution, b: WordDistribution, embeddings: np.ndarray) -> np.ndarray:
    x = embeddings[list(a.support)]
    y = embeddings[list(b.support)]
    return np.linalg.norm(x[:, None, :] - y[None, :, :], axis=-1)


def transport_plan(a: WordDistribution, b: WordDistribution, embeddings: np.ndarray) -> TransportPlan:
    return solve_transport(np.array(a.weights), np.array(b.weights), cost_matrix(a, b, embeddings))


def wmd(a: WordDistribution, b: WordDistribution, embeddings: np.ndarray) -> float:
    """Exact minimum transport cost between two word distributions."""
    if not a.support or not b.support:
        raise UsageError("empty support")
    if a == b:
        return 0.0
    return transport_plan(a, b, embeddings).total_cost


def semantic_score_detail(generated: Sequence[int], source: Sequence[int], embeddings: np.ndarray,
                          stopwords: frozenset[int] = frozenset()) -> tuple[float, bool]:
    """(score, degenerate).  Score is -WMD / generated content-token count."""
    src = content_tokens(source, stopwords)
    if not src:
        raise UsageError("source sentence is empty after filtering")
    gen = content_tokens(generated, stopwords)
    if not gen:
        # nothing left to compare: score the raw tokens, without length normalization
        d = wmd(WordDistribution.from_tokens(generated), WordDistribution.from_tokens(src), embeddings)
        return -d, True
    d = wmd(WordDistribution.from_tokens(gen), WordDistribution.from_tokens(src), embeddings)
    return -d / len(gen), False


def semantic_score(generated: Sentence | Sequence[int], source: Sentence | Sequence[int], embeddings: np.ndarray,
                   stopwords: frozenset[int] = frozenset()) -> float:
    g = generated.tokens if isinstance(generated, Sentence) else generated
    s = source.tokens if isinstance(source, Sentence) else source
    score, degenerate = semantic_score_detail(g, s, embeddings, stopwords)
    if degenerate:
        log.debug("degenerate semantic score for %s", g)
    return score


class SemanticScorer:
    """Memoizing batch scorer; rollouts repeat sentences heavily."""

    def __init__(self, embeddings: np.ndarray, stopwords: frozenset[int] = frozenset(), max_cache: int = 200_000):
        self.embeddings = embeddings
        self.stopwords = stopwords
        self.max_cache = max_cache
        self._cache: dict[tuple, float] = {}

    def __call__(self, generated: Sequence[Sequence[int]], source: Sequence[int]) -> np.ndarray:
        src_key = tuple(sorted(source))
        out = np.empty(len(generated))
        for k, g in enumerate(generated):
            key = (src_key, tuple(sorted(g)))
            score = self._cache.get(key)
            if score is None:
                score = semantic_score(g, source, self.embeddings, self.stopwords)
                if len(self._cache) >= self.max_cache:
                    self._cache.clear()
                self._cache[key] = score
            out[k] = score
        return out
