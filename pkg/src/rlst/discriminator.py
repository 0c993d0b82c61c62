"""Bidirectional GRU style classifier with additive attention pooling.

Used twice: as the live, adversarially refined reward discriminator, and as
the frozen evaluation classifier behind transfer strength.
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

SCORE_EPS = 1e-6
NEG_INF = -1e30


class DiscriminatorParams:
    def __init__(self, params: ParameterSet):
        self.params = params
        self.embed = params["embed"]
        self.forward = GruParams.view(params, "fw")
        self.backward = GruParams.view(params, "bw")
        self.pool_w = params["pool.w"]
        self.pool_b = params["pool.b"]
        self.pool_v = params["pool.v"]
        self.out_w = params["out.w"]
        self.out_b = params["out.b"]
        h = self.forward.hidden_dim
        if (self.backward.hidden_dim != h or self.pool_w.shape[1] != 2 * h or self.out_w.shape != (2 * h,)
                or self.out_b.shape != (1,)):
            raise UsageError("discriminator dimensions are inconsistent")

    @property
    def vocab_size(self) -> int:
        return self.embed.shape[0]

    @classmethod
    def create(cls, vocab_size: int, hidden_dim: int, rng: np.random.Generator, embed_dim: int = 50,
               embeddings: np.ndarray | None = None, attention_dim: int | None = None) -> DiscriminatorParams:
        attention_dim = attention_dim or hidden_dim
        ps = ParameterSet()
        ps.add("embed", embeddings.copy() if embeddings is not None else uniform_init(rng, (vocab_size, embed_dim)))
        embed_dim = ps["embed"].shape[1]
        GruParams.create(ps, "fw", embed_dim, hidden_dim, rng)
        GruParams.create(ps, "bw", embed_dim, hidden_dim, rng)
        ps.add("pool.w", uniform_init(rng, (attention_dim, 2 * hidden_dim)))
        ps.add("pool.b", np.zeros(attention_dim))
        ps.add("pool.v", uniform_init(rng, (attention_dim,)))
        ps.add("out.w", uniform_init(rng, (2 * hidden_dim,)))
        ps.add("out.b", np.zeros(1))
        return cls(ps)


def swap_directions(dp: DiscriminatorParams) -> DiscriminatorParams:
    """Exchange forward/backward roles; scores the reversed sentence identically."""
    h = dp.forward.hidden_dim
    out = ParameterSet()
    for name, t in dp.params.items():
        src = name
        if name.startswith("fw."):
            src = "bw." + name[3:]
        elif name.startswith("bw."):
            src = "fw." + name[3:]
        v = dp.params[src].values.copy()
        if name == "pool.w":
            v = np.concatenate([v[:, h:], v[:, :h]], axis=1)
        elif name == "out.w":
            v = np.concatenate([v[h:], v[:h]])
        out.add(name, v, dp.params.is_trainable(name))
    return DiscriminatorParams(out)


def _pad(seqs: Sequence[Sequence[int]]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    lengths = np.array([len(s) for s in seqs])
    n = int(lengths.max())
    ids = np.full((len(seqs), n), PAD, dtype=np.int64)
    rev = np.full((len(seqs), n), PAD, dtype=np.int64)
    for i, s in enumerate(seqs):
        ids[i, :len(s)] = s
        rev[i, :len(s)] = s[::-1]
    return ids, rev, np.arange(n)[None, :] < lengths[:, None]


def _run(gru: GruParams, emb: Tensor, ids: np.ndarray, mask: np.ndarray) -> Tensor:
    h = Tensor(np.zeros((ids.shape[0], gru.hidden_dim)))
    states = []
    for t in range(ids.shape[1]):
        h = masked_step(gru_step(h, T.rows(emb, ids[:, t]), gru), h, mask[:, t])
        states.append(h)
    return T.stack(states, axis=1)


def style_logits(token_lists: Sequence[Sequence[int]], dp: DiscriminatorParams) -> Tensor:
    if not token_lists:
        raise UsageError("nothing to score")
    ids, rev, mask = _pad(token_lists)
    if ids.max() >= dp.vocab_size or ids.min() < 0:
        raise UsageError(f"token index outside embedding range [0, {dp.vocab_size})")
    fw = _run(dp.forward, dp.embed, ids, mask)
    bw_rev = _run(dp.backward, dp.embed, rev, mask)
    # realign the backward pass: position t reads reversed position len-1-t
    lengths = mask.sum(axis=1)
    src = np.where(mask, lengths[:, None] - 1 - np.arange(ids.shape[1])[None, :], 0)
    bw = T.index(bw_rev, (np.arange(len(ids))[:, None], src))
    states = T.concat([fw, bw], axis=-1)
    u = T.tanh(T.linear(states, dp.pool_w) + dp.pool_b)
    scores = T.einsum("bta,a->bt", u, dp.pool_v) + np.where(mask, 0.0, NEG_INF)
    weights = T.softmax(scores, axis=-1)
    pooled = T.einsum("bt,btd->bd", weights, states)
    return T.einsum("bd,d->b", pooled, dp.out_w) + dp.out_b


def style_probs(token_lists: Sequence[Sequence[int]], dp: DiscriminatorParams) -> Tensor:
    """D(Y) in [1e-6, 1 - 1e-6] per sentence."""
    return T.clip(T.sigmoid(style_logits(token_lists, dp)), SCORE_EPS, 1.0 - SCORE_EPS)


def style_score(sentence: Sentence | Sequence[int], dp: DiscriminatorParams) -> float:
    """Likelihood that ``sentence`` is in the target style."""
    tokens = sentence.tokens if isinstance(sentence, Sentence) else tuple(sentence)
    with no_grad():
        return float(style_probs([tokens], dp).values[0])


def score_batch(token_lists: Sequence[Sequence[int]], dp: DiscriminatorParams, chunk: int = 512) -> np.ndarray:
    out = []
    with no_grad():
        for i in range(0, len(token_lists), chunk):
            out.append(style_probs(token_lists[i:i + chunk], dp).values)
    return np.concatenate(out) if out else np.zeros(0)


def classification_loss(batch: Sequence[Sentence], labels: Sequence[int], dp: DiscriminatorParams) -> Tensor:
    """Mean binary cross-entropy; label 1 = target style."""
    y = np.asarray(labels, dtype=np.float64)
    d = style_probs([s.tokens for s in batch], dp)
    ll = T.mul(T.log(d), y) + T.mul(T.log(1.0 - d), 1.0 - y)
    return T.mul(T.sum_(ll), -1.0 / len(y))


def _apply(loss: Tensor, dp: DiscriminatorParams, lr: float, clip_norm: float, what: str) -> float:
    value = loss.item()
    if not math.isfinite(value):
        raise NumericalError(f"non-finite {what}")
    dp.params.zero_grad()
    loss.backward()
    sgd_step(dp.params, lr, clip_norm)
    return value


def pretrain_discriminator_step(batch: Sequence[Sentence], dp: DiscriminatorParams, lr: float,
                                labels: Sequence[int] | None = None, clip_norm: float = 5.0) -> float:
    """One supervised classification update; returns the pre-update mean BCE.

    Labels default to each sentence's style (``target`` -> 1).
    """
    if not batch:
        raise UsageError("empty pre-training batch")
    if labels is None:
        labels = [1 if s.style == "target" else 0 for s in batch]
    return _apply(classification_loss(batch, labels, dp), dp, lr, clip_norm, "discriminator loss")


def adversarial_loss(human: Sequence[Sentence], model: Sequence[Sentence], dp: DiscriminatorParams) -> Tensor:
    """L_D = (1/K) * (-sum log(1 - D(model)) - sum log D(human))."""
    if len(human) != len(model) or not human:
        raise UsageError(f"adversarial batches must share a size K >= 1 (got {len(human)} and {len(model)})")
    k = len(human)
    d = style_probs([s.tokens for s in human] + [s.tokens for s in model], dp)
    d_human = T.index(d, slice(0, k))
    d_model = T.index(d, slice(k, 2 * k))
    total = T.sum_(T.log(1.0 - d_model)) + T.sum_(T.log(d_human))
    return T.mul(total, -1.0 / k)


def adversarial_step(human: Sequence[Sentence], model: Sequence[Sentence], dp: DiscriminatorParams, lr: float,
                     clip_norm: float = 5.0) -> float:
    """One update separating human-written from generated sentences; returns pre-update L_D."""
    return _apply(adversarial_loss(human, model, dp), dp, lr, clip_norm, "adversarial loss")
