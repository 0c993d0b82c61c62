"""Attention encoder-decoder generator.

Two execution paths share the parameters:

* tensor ops (graph-recording) for teacher-forced losses and policy gradients;
* raw numpy for beam search and multinomial rollouts, which dominate RL time.

``decode_step`` and ``decode_step_values`` compute the same function and the
tests pin them together.
"""

from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from rlst.corpus import BOS, EOS, PAD, Sentence, UsageError
from rlst.nn_core import GruParams, NumericalError, ParameterSet, gru_step, gru_step_values, masked_step, sgd_step
from rlst.nn_core import tensor as T
from rlst.nn_core.params import uniform_init
from rlst.nn_core.tensor import Tensor

NEG_INF = -1e30
MAX_DECODE_CAP = 30


class GeneratorParams:
    """Embedding, encoder/decoder GRUs, bilinear attention W_a, combiner W_c, output W_s."""

    def __init__(self, params: ParameterSet):
        self.params = params
        self.embed = params["embed"]
        self.encoder = GruParams.view(params, "enc")
        self.decoder = GruParams.view(params, "dec")
        self.w_a = params["attn.w_a"]
        self.w_c = params["out.w_c"]
        self.w_s = params["out.w_s"]
        v, h = self.w_s.shape
        if self.embed.shape[0] != v:
            raise UsageError(f"embedding rows {self.embed.shape[0]} != vocabulary size {v}")
        if self.w_c.shape != (h, 2 * h) or self.w_a.shape != (h, h) or self.encoder.hidden_dim != h:
            raise UsageError("generator hidden dimensions are inconsistent")
        # PAD and BOS are never emitted, so generated sentences stay framed.
        self.logit_mask = np.zeros(v)
        self.logit_mask[[PAD, BOS]] = NEG_INF

    @property
    def vocab_size(self) -> int:
        return self.w_s.shape[0]

    @property
    def hidden_dim(self) -> int:
        return self.w_s.shape[1]

    @classmethod
    def create(cls, vocab_size: int, hidden_dim: int, rng: np.random.Generator, embed_dim: int = 50,
               embeddings: np.ndarray | None = None) -> GeneratorParams:
        ps = ParameterSet()
        ps.add("embed", embeddings.copy() if embeddings is not None else uniform_init(rng, (vocab_size, embed_dim)))
        embed_dim = ps["embed"].shape[1]
        GruParams.create(ps, "enc", embed_dim, hidden_dim, rng)
        GruParams.create(ps, "dec", embed_dim, hidden_dim, rng)
        ps.add("attn.w_a", uniform_init(rng, (hidden_dim, hidden_dim)))
        ps.add("out.w_c", uniform_init(rng, (hidden_dim, 2 * hidden_dim)))
        ps.add("out.w_s", uniform_init(rng, (vocab_size, hidden_dim)))
        return cls(ps)


def max_decode_length(source_len: int) -> int:
    """T' = 1.5 x source content length + 5, capped at 30."""
    return min(MAX_DECODE_CAP, int(math.floor(1.5 * source_len)) + 5)


def _pad(seqs: Sequence[Sequence[int]]) -> tuple[np.ndarray, np.ndarray]:
    n = max(len(s) for s in seqs)
    ids = np.full((len(seqs), n), PAD, dtype=np.int64)
    mask = np.zeros((len(seqs), n), dtype=bool)
    for i, s in enumerate(seqs):
        ids[i, :len(s)] = s
        mask[i, :len(s)] = True
    return ids, mask


def _check_ids(ids: np.ndarray, vocab_size: int) -> None:
    if ids.size and (ids.min() < 0 or ids.max() >= vocab_size):
        raise UsageError(f"token index outside embedding range [0, {vocab_size})")


@dataclass
class EncoderStates:
    """Per-token encoder states for a batch of sources, padded to a common length."""

    states: Tensor  # (B, T, H)
    mask: np.ndarray  # (B, T) real-token positions
    final: Tensor  # (B, H) state after the last real token
    keys: Tensor  # (B, T, H) W_a h̄_s, precomputed for the bilinear score
    sources: tuple[Sentence, ...] = ()

    def sequence(self, b: int = 0) -> list[np.ndarray]:
        n = int(self.mask[b].sum())
        return [self.states.values[b, t] for t in range(n)]

    def select(self, rows: np.ndarray) -> EncoderStates:
        """Value-only copy with batch rows gathered (for inference fan-out)."""
        return EncoderStates(Tensor(self.states.values[rows]), self.mask[rows], Tensor(self.final.values[rows]),
                             Tensor(self.keys.values[rows]))


def encode_batch(sources: Sequence[Sentence], gp: GeneratorParams) -> EncoderStates:
    ids, mask = _pad([s.tokens for s in sources])
    _check_ids(ids, gp.vocab_size)
    b = len(sources)
    h = Tensor(np.zeros((b, gp.hidden_dim)))
    states = []
    for t in range(ids.shape[1]):
        x = T.rows(gp.embed, ids[:, t])
        h = masked_step(gru_step(h, x, gp.encoder), h, mask[:, t])
        states.append(h)
    stacked = T.stack(states, axis=1)
    return EncoderStates(stacked, mask, h, T.linear(stacked, gp.w_a), tuple(sources))


def encode(source: Sentence, gp: GeneratorParams) -> EncoderStates:
    """Left-to-right GRU states over the framed source, from a zero initial state."""
    if not source.framed:
        raise UsageError("encode expects a framed sentence")
    return encode_batch([source], gp)


def attention_context(decoder_state: Tensor, enc: EncoderStates, gp: GeneratorParams) -> tuple[Tensor, Tensor]:
    """Bilinear score h_t^T W_a h̄_s, softmax over source positions, weighted sum of states."""
    scores = T.einsum("bth,bh->bt", enc.keys, decoder_state) + np.where(enc.mask, 0.0, NEG_INF)
    weights = T.softmax(scores, axis=-1)
    context = T.einsum("bt,bth->bh", weights, enc.states)
    return context, weights


def decode_step(prev_token, decoder_state: Tensor, enc: EncoderStates, gp: GeneratorParams
                ) -> tuple[Tensor, Tensor]:
    """Advance the decoder on vec(prev_token); return (log-distribution, new state).

    Accepts a scalar token with a (1, H) state or a (B,) token vector.
    """
    prev = np.atleast_1d(np.asarray(prev_token, dtype=np.int64))
    _check_ids(prev, gp.vocab_size)
    h = gru_step(decoder_state, T.rows(gp.embed, prev), gp.decoder)
    context, _ = attention_context(h, enc, gp)
    h_tilde = T.tanh(T.linear(T.concat([context, h], axis=-1), gp.w_c))
    logp = T.log_softmax(T.linear(h_tilde, gp.w_s) + gp.logit_mask, axis=-1)
    return logp, h


# value-only inference path


@dataclass
class Memory:
    states: np.ndarray  # (n, T, H)
    keys: np.ndarray
    bias: np.ndarray  # (n, T): 0 on real tokens, NEG_INF on padding

    def take(self, rows: np.ndarray) -> Memory:
        return Memory(self.states[rows], self.keys[rows], self.bias[rows])


def encode_values(sources: Sequence[Sentence], gp: GeneratorParams) -> tuple[Memory, np.ndarray]:
    """Encoder memory and initial decoder states without graph recording."""
    ids, mask = _pad([s.tokens for s in sources])
    _check_ids(ids, gp.vocab_size)
    emb = gp.embed.values
    h = np.zeros((len(sources), gp.hidden_dim))
    states = np.zeros((len(sources), ids.shape[1], gp.hidden_dim))
    for t in range(ids.shape[1]):
        new = gru_step_values(h, emb[ids[:, t]], gp.encoder)
        h = np.where(mask[:, t:t + 1], new, h)
        states[:, t] = h
    keys = states @ gp.w_a.values.T
    return Memory(states, keys, np.where(mask, 0.0, NEG_INF)), h


def decode_step_values(prev: np.ndarray, h: np.ndarray, mem: Memory, gp: GeneratorParams
                       ) -> tuple[np.ndarray, np.ndarray]:
    """(n,) previous tokens, (n, H) states -> ((n, V) log-probs, new states)."""
    h = gru_step_values(h, gp.embed.values[prev], gp.decoder)
    scores = np.einsum("nth,nh->nt", mem.keys, h) + mem.bias
    weights = T.softmax_values(scores)
    context = np.einsum("nt,nth->nh", weights, mem.states)
    h_tilde = np.tanh(np.concatenate([context, h], axis=-1) @ gp.w_c.values.T)
    logp = T.log_softmax_values(h_tilde @ gp.w_s.values.T + gp.logit_mask)
    return logp, h


def force_prefix(prefixes: Sequence[Sequence[int]], mem: Memory, h0: np.ndarray, gp: GeneratorParams
                 ) -> tuple[np.ndarray, np.ndarray]:
    """Feed each prefix through the decoder.

    Returns the state after consuming the whole prefix and the next-token
    log-distribution at that point.  ``mem``/``h0`` are per-row.
    """
    ids, mask = _pad(prefixes)
    h = h0
    logp = np.zeros((len(prefixes), gp.vocab_size))
    for t in range(ids.shape[1]):
        lp, new = decode_step_values(ids[:, t], h, mem, gp)
        live = mask[:, t:t + 1]
        h = np.where(live, new, h)
        logp = np.where(live, lp, logp)
    return h, logp


@dataclass
class BeamResult:
    sentence: Sentence
    log_prob: float
    truncated: bool

    @property
    def normalized(self) -> float:
        return self.log_prob / self.sentence.predicted_count


def beam_search(source: Sentence, gp: GeneratorParams, width: int = 8, max_len: int | None = None) -> BeamResult:
    """Fixed-width beam: ``width`` live hypotheses continue at every step.

    An EOS expansion ranked within the top ``width`` candidates retires as
    finished without costing a live slot; the search stops once ``width``
    hypotheses have finished.  The winner is the finished hypothesis with the
    highest log-probability per generated token.  At ``max_len`` every live
    hypothesis is closed with EOS and marked truncated.  ``width=1`` is greedy
    decoding.
    """
    if width < 1:
        raise UsageError("beam width must be >= 1")
    max_len = max_decode_length(len(source.content)) if max_len is None else max_len
    if max_len < 1:
        raise UsageError("max_len must be >= 1")
    mem1, h1 = encode_values([source], gp)
    alive: list[tuple[list[int], float]] = [([BOS], 0.0)]
    states = h1
    finished: list[tuple[list[int], float, bool]] = []
    for step in range(1, max_len + 1):
        n = len(alive)
        rows = np.zeros(n, dtype=np.int64)
        logp, states = decode_step_values(np.array([a[0][-1] for a in alive]), states, mem1.take(rows), gp)
        base = np.array([a[1] for a in alive])
        if step == max_len:
            for i, (toks, lp) in enumerate(alive):
                finished.append((toks + [EOS], lp + float(logp[i, EOS]), True))
            break
        total = (base[:, None] + logp).reshape(-1)
        order = np.argsort(-total, kind="stable")[:2 * width]
        keep_rows, nxt = [], []
        for rank, flat in enumerate(order):
            i, tok = divmod(int(flat), gp.vocab_size)
            if tok == EOS:
                if rank < width:
                    finished.append((alive[i][0] + [tok], float(total[flat]), False))
            elif len(nxt) < width:
                keep_rows.append(i)
                nxt.append((alive[i][0] + [tok], float(total[flat])))
        if len(finished) >= width or not nxt:
            break
        alive, states = nxt, states[np.array(keep_rows)]
    best = finished[0]
    for cand in finished[1:]:
        if cand[1] / (len(cand[0]) - 1) > best[1] / (len(best[0]) - 1):
            best = cand
    return BeamResult(Sentence(tuple(best[0]), "target", True), best[1], best[2])


def greedy_decode(source: Sentence, gp: GeneratorParams, max_len: int | None = None) -> BeamResult:
    max_len = max_decode_length(len(source.content)) if max_len is None else max_len
    mem, h = encode_values([source], gp)
    toks, total, truncated = [BOS], 0.0, False
    for step in range(1, max_len + 1):
        logp, h = decode_step_values(np.array([toks[-1]]), h, mem, gp)
        tok = EOS if step == max_len else int(np.argmax(logp[0]))
        truncated = step == max_len and int(np.argmax(logp[0])) != EOS
        total += float(logp[0, tok])
        toks.append(tok)
        if tok == EOS:
            break
    return BeamResult(Sentence(tuple(toks), "target", True), total, truncated)


def sample_rows(logp: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One categorical draw per row by inverse CDF."""
    cdf = np.cumsum(np.exp(logp), axis=1)
    u = (1.0 - rng.random(len(logp))) * cdf[:, -1]
    return np.minimum((cdf < u[:, None]).sum(axis=1), logp.shape[1] - 1)


def rollout_batch(prefixes: Sequence[Sequence[int]], mem: Memory, h0: np.ndarray, gp: GeneratorParams,
                  max_len: int | np.ndarray, rng: np.random.Generator) -> list[tuple[int, ...]]:
    """Complete each BOS-initial prefix by multinomial sampling; EOS is forced at ``max_len`` generated tokens."""
    limits = np.broadcast_to(np.asarray(max_len), (len(prefixes),))
    out = [list(p) for p in prefixes]
    done = np.array([p[-1] == EOS for p in prefixes])
    todo = np.flatnonzero(~done)
    if len(todo) == 0:
        return [tuple(p) for p in out]
    h, logp = force_prefix([prefixes[i] for i in todo], mem.take(todo), h0[todo], gp)
    mem = mem.take(todo)
    rows = todo
    while len(rows):
        toks = sample_rows(logp, rng)
        for k, i in enumerate(rows):
            tok = EOS if len(out[i]) >= limits[i] else int(toks[k])
            out[i].append(tok)
        alive = np.array([out[i][-1] != EOS for i in rows])
        if not alive.any():
            break
        keep = np.flatnonzero(alive)
        rows, mem, h = rows[keep], mem.take(keep), h[keep]
        logp, h = decode_step_values(np.array([out[i][-1] for i in rows]), h, mem, gp)
    return [tuple(p) for p in out]


def multinomial_rollout(prefix: Sequence[int], source: Sentence, gp: GeneratorParams, max_len: int | None = None,
                        rng_seed: int | np.random.Generator = 0) -> Sentence:
    """Continue ``prefix`` (starting with BOS) by sampling until EOS or ``max_len`` generated tokens."""
    if not prefix or prefix[0] != BOS:
        raise UsageError("rollout prefix must begin with BOS")
    if prefix[-1] == EOS:
        return Sentence(tuple(prefix), "target", True)
    max_len = max_decode_length(len(source.content)) if max_len is None else max_len
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    mem, h = encode_values([source], gp)
    (toks,) = rollout_batch([list(prefix)], mem, h, gp, max_len, rng)
    return Sentence(toks, "target", True)


# training


def teacher_forced_logp(sources: Sequence[Sentence], targets: Sequence[Sentence], gp: GeneratorParams
                        ) -> tuple[Tensor, np.ndarray, np.ndarray]:
    """Floored ln P(y_t | y_<t, x) for every predicted target token.

    Returns (B, L) log-probs, the (B, L) validity mask, and the (B, L) target ids.
    """
    enc = encode_batch(sources, gp)
    ids, mask = _pad([t.tokens for t in targets])
    _check_ids(ids, gp.vocab_size)
    inputs, outputs, live = ids[:, :-1], ids[:, 1:], mask[:, 1:]
    h = enc.final
    cols = []
    for t in range(inputs.shape[1]):
        logp, new = decode_step(inputs[:, t], h, enc, gp)
        h = masked_step(new, h, live[:, t])
        cols.append(T.pick(logp, outputs[:, t]))
    return T.floor_log_prob(T.stack(cols, axis=1)), live, outputs


def autoencode_loss(batch: Sequence[Sentence], gp: GeneratorParams) -> Tensor:
    """Mean per-token cross-entropy reconstructing each sentence from itself."""
    logp, live, _ = teacher_forced_logp(batch, batch, gp)
    return T.mul(T.sum_(T.mul(logp, live.astype(np.float64))), -1.0 / live.sum())


def pretrain_generator_step(batch: Sequence[Sentence], gp: GeneratorParams, lr: float,
                            clip_norm: float = 5.0) -> float:
    """One supervised autoencoding update; returns the pre-update mean per-token loss."""
    if not batch:
        raise UsageError("empty pre-training batch")
    loss = autoencode_loss(batch, gp)
    value = loss.item()
    if not math.isfinite(value):
        raise NumericalError(f"non-finite generator loss on a batch of {len(batch)}")
    gp.params.zero_grad()
    loss.backward()
    sgd_step(gp.params, lr, clip_norm)
    return value
