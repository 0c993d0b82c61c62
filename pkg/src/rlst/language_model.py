"""Two-layer GRU language model: fluency reward and perplexity.

Predicted-token count M counts every token after BOS, EOS included.
"""

from __future__ import annotations

import math
from collections.abc import Sequence

import numpy as np

from rlst.corpus import PAD, Sentence, UsageError
from rlst.nn_core import GruParams, NumericalError, ParameterSet, gru_step, masked_step, no_grad, sgd_step
from rlst.nn_core import tensor as T
from rlst.nn_core.params import uniform_init
from rlst.nn_core.tensor import Tensor


class LMParams:
    def __init__(self, params: ParameterSet):
        self.params = params
        self.embed = params["embed"]
        self.layer1 = GruParams.view(params, "l1")
        self.layer2 = GruParams.view(params, "l2")
        self.out_w = params["out.w"]
        self.out_b = params["out.b"]
        if self.layer2.input_dim != self.layer1.hidden_dim or self.out_w.shape != (
                self.embed.shape[0], self.layer2.hidden_dim) or self.out_b.shape != (self.embed.shape[0],):
            raise UsageError("language model dimensions are inconsistent")

    @property
    def vocab_size(self) -> int:
        return self.embed.shape[0]

    @classmethod
    def create(cls, vocab_size: int, hidden_dim: int, rng: np.random.Generator, embed_dim: int = 50,
               embeddings: np.ndarray | None = None) -> LMParams:
        ps = ParameterSet()
        ps.add("embed", embeddings.copy() if embeddings is not None else uniform_init(rng, (vocab_size, embed_dim)))
        embed_dim = ps["embed"].shape[1]
        GruParams.create(ps, "l1", embed_dim, hidden_dim, rng)
        GruParams.create(ps, "l2", hidden_dim, hidden_dim, rng)
        ps.add("out.w", uniform_init(rng, (vocab_size, hidden_dim)))
        ps.add("out.b", np.zeros(vocab_size))
        return cls(ps)


def _pad(seqs: Sequence[Sequence[int]]) -> tuple[np.ndarray, np.ndarray]:
    n = max(len(s) for s in seqs)
    ids = np.full((len(seqs), n), PAD, dtype=np.int64)
    mask = np.zeros((len(seqs), n), dtype=bool)
    for i, s in enumerate(seqs):
        ids[i, :len(s)] = s
        mask[i, :len(s)] = True
    return ids, mask


def token_log_probs(token_lists: Sequence[Sequence[int]], lm: LMParams) -> tuple[Tensor, np.ndarray]:
    """Floored ln P(w_t | w_<t) for t >= 1 of each sequence; (B, L) values and validity mask."""
    if not token_lists:
        raise UsageError("nothing to score")
    if any(len(s) < 2 for s in token_lists):
        raise UsageError("a sentence needs BOS plus at least one predicted token")
    ids, mask = _pad(token_lists)
    if ids.max() >= lm.vocab_size or ids.min() < 0:
        raise UsageError(f"token index outside embedding range [0, {lm.vocab_size})")
    b = len(token_lists)
    h1 = Tensor(np.zeros((b, lm.layer1.hidden_dim)))
    h2 = Tensor(np.zeros((b, lm.layer2.hidden_dim)))
    live = mask[:, 1:]
    cols = []
    for t in range(ids.shape[1] - 1):
        h1 = masked_step(gru_step(h1, T.rows(lm.embed, ids[:, t]), lm.layer1), h1, live[:, t])
        h2 = masked_step(gru_step(h2, h1, lm.layer2), h2, live[:, t])
        logp = T.log_softmax(T.linear(h2, lm.out_w) + lm.out_b, axis=-1)
        cols.append(T.pick(logp, ids[:, t + 1]))
    return T.floor_log_prob(T.stack(cols, axis=1)), live


def sentence_log_probs(token_lists: Sequence[Sequence[int]], lm: LMParams, chunk: int = 512) -> np.ndarray:
    out = []
    with no_grad():
        for i in range(0, len(token_lists), chunk):
            lp, live = token_log_probs(token_lists[i:i + chunk], lm)
            out.append(np.where(live, lp.values, 0.0).sum(axis=1))
    return np.concatenate(out)


def sentence_log_prob(sentence: Sentence, lm: LMParams) -> float:
    """sum_t ln P(w_t | w_<t) from the BOS context through EOS."""
    if not sentence.framed:
        raise UsageError("sentence_log_prob expects a framed sentence")
    return float(sentence_log_probs([sentence.tokens], lm)[0])


def continuation_log_prob(prefix: Sequence[int], continuation: Sequence[int], lm: LMParams) -> float:
    """ln P(continuation | prefix), running the prefix through the model first."""
    if not prefix or not continuation:
        raise UsageError("prefix and continuation must be non-empty")
    ids = np.asarray(list(prefix) + list(continuation), dtype=np.int64)
    h1 = np.zeros(lm.layer1.hidden_dim)
    h2 = np.zeros(lm.layer2.hidden_dim)
    total = 0.0
    with no_grad():
        for t in range(len(ids) - 1):
            h1 = gru_step(Tensor(h1), Tensor(lm.embed.values[ids[t]]), lm.layer1).values
            h2 = gru_step(Tensor(h2), Tensor(h1), lm.layer2).values
            if t + 1 >= len(prefix):
                logp = T.log_softmax_values(lm.out_w.values @ h2 + lm.out_b.values)
                total += max(float(logp[ids[t + 1]]), T.LOG_FLOOR)
    return total


def fluency_scores(token_lists: Sequence[Sequence[int]], lm: LMParams) -> np.ndarray:
    counts = np.array([len(s) - 1 for s in token_lists], dtype=np.float64)
    return sentence_log_probs(token_lists, lm) / counts


def fluency_score(sentence: Sentence, lm: LMParams) -> float:
    """Log-probability per predicted token."""
    return sentence_log_prob(sentence, lm) / sentence.predicted_count


def perplexity(sentence: Sentence, lm: LMParams) -> float:
    return math.exp(-fluency_score(sentence, lm))


def corpus_perplexity(sentences: Sequence[Sentence], lm: LMParams) -> float:
    """exp(-total log-prob / total predicted tokens)."""
    if not sentences:
        raise UsageError("empty corpus")
    total = float(sentence_log_probs([s.tokens for s in sentences], lm).sum())
    return math.exp(-total / sum(s.predicted_count for s in sentences))


def lm_loss(batch: Sequence[Sentence], lm: LMParams) -> Tensor:
    """Mean per-token cross-entropy under teacher forcing."""
    lp, live = token_log_probs([s.tokens for s in batch], lm)
    return T.mul(T.sum_(T.mul(lp, live.astype(np.float64))), -1.0 / live.sum())


def pretrain_lm_step(batch: Sequence[Sentence], lm: LMParams, lr: float, clip_norm: float = 5.0) -> float:
    if not batch:
        raise UsageError("empty pre-training batch")
    loss = lm_loss(batch, lm)
    value = loss.item()
    if not math.isfinite(value):
        raise NumericalError(f"non-finite language-model loss on a batch of {len(batch)}")
    lm.params.zero_grad()
    loss.backward()
    sgd_step(lm.params, lr, clip_norm)
    return value
