"""REINFORCE training of the generator against the three evaluator modules.

One update, per source sentence in the batch:

1. beam-search a reference Y_ref;
2. for every prefix Y_ref[1:t] draw N multinomial completions and score them
   (style, semantic, fluency), averaging into the action score f_t;
3. shape rewards r_t = f_t - f_{t-1} (r_1 = f_1) and discount into Q_t;
4. accumulate -sum_t Q_t * grad ln P(y_t | s_t) and take one SGD step;

then one adversarial discriminator step with the references as model samples.
"""

from __future__ import annotations

import logging
import math
import time
from fractions import Fraction
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field

import numpy as np

from rlst.corpus import EOS, Sentence, UsageError
from rlst.discriminator import DiscriminatorParams, adversarial_step, score_batch
from rlst.generator import (
    GeneratorParams,
    beam_search,
    encode_values,
    max_decode_length,
    rollout_batch,
    teacher_forced_logp,
)
from rlst.language_model import LMParams, fluency_scores
from rlst.metrics import EvaluationReport
from rlst.nn_core import ParameterSet, sgd_step
from rlst.nn_core import tensor as T
from rlst.nn_core.tensor import Tensor
from rlst.semantic import SemanticScorer

_log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ScoreWeights:
    alpha: float = 1.0
    beta: float = 0.5
    eta: float = 0.5
    gamma: float = 0.9
    rollouts: int = 8

    def __post_init__(self):
        if min(self.alpha, self.beta, self.eta) <= 0:
            raise UsageError("alpha, beta and eta must be positive")
        if not 0 < self.gamma < 1:
            raise UsageError("gamma must lie in (0, 1)")
        if self.rollouts < 1:
            raise UsageError("need at least one rollout per timestep")

    def combine(self, style, semantic, fluency):
        return self.alpha * np.asarray(style) + self.beta * np.asarray(semantic) + self.eta * np.asarray(fluency)


@dataclass
class ModuleScores:
    style: np.ndarray
    semantic: np.ndarray
    fluency: np.ndarray

    def combined(self, w: ScoreWeights) -> np.ndarray:
        return w.combine(self.style, self.semantic, self.fluency)


ModuleFn = Callable[[list[tuple[int, ...]], Sequence[int]], np.ndarray]


def _guarded(name: str, fn: ModuleFn, sentences: list[tuple[int, ...]], source: Sequence[int]) -> np.ndarray:
    """Run one module; failed or non-finite entries take the batch's worst finite score."""
    try:
        out = np.asarray(fn(sentences, source), dtype=np.float64)
    except (ArithmeticError, ValueError) as exc:
        _log.warning("%s module failed on a batch (%s); retrying per sentence", name, exc)
        out = np.empty(len(sentences))
        for i, s in enumerate(sentences):
            try:
                out[i] = float(fn([s], source)[0])
            except (ArithmeticError, ValueError):
                out[i] = np.nan
    bad = ~np.isfinite(out)
    if bad.any():
        good = out[~bad]
        worst = float(good.min()) if good.size else 0.0
        _log.warning("%s module: substituting worst score %.4g for %d sentence(s)", name, worst, int(bad.sum()))
        out[bad] = worst
    return out


class Evaluator:
    """Reward-side scorers: live discriminator snapshot, reward LM, WMD scorer."""

    def __init__(self, discriminator: DiscriminatorParams, lm: LMParams, embeddings: np.ndarray,
                 stopwords: frozenset[int] = frozenset()):
        self.discriminator = discriminator
        self.lm = lm
        self.semantic = SemanticScorer(embeddings, stopwords)

    def style(self, sentences, source):
        return score_batch(sentences, self.discriminator)

    def fluency(self, sentences, source):
        return fluency_scores(sentences, self.lm)

    def score(self, sentences: list[tuple[int, ...]], source: Sequence[int]) -> ModuleScores:
        return ModuleScores(
            _guarded("style", self.style, sentences, source),
            _guarded("semantic", self.semantic, sentences, source),
            _guarded("fluency", self.fluency, sentences, source),
        )

    def score_groups(self, groups: Sequence[list[tuple[int, ...]]], sources: Sequence[Sequence[int]]
                     ) -> list[ModuleScores]:
        """Score several (sentences, source) groups; unique sentences are scored once."""
        flat = sorted({s for g in groups for s in g})
        pos = {s: i for i, s in enumerate(flat)}
        style = _guarded("style", self.style, flat, ())
        fluency = _guarded("fluency", self.fluency, flat, ())
        out = []
        for g, src in zip(groups, sources):
            idx = np.array([pos[s] for s in g], dtype=np.int64)
            out.append(ModuleScores(style[idx], _guarded("semantic", self.semantic, g, src), fluency[idx]))
        return out


def shape_rewards(f: Sequence[float]) -> np.ndarray:
    """r_1 = f_1, r_t = f_t - f_{t-1}."""
    f = np.asarray(f, dtype=np.float64)
    if f.size == 0:
        raise UsageError("empty action-score sequence")
    r = f.copy()
    r[1:] = f[1:] - f[:-1]
    return r


def discounted_returns(r: Sequence[float], gamma: float) -> np.ndarray:
    """Q_t = sum_{tau >= t} gamma^(tau - t) r_tau via Q_t = r_t + gamma Q_{t+1}."""
    if not 0 < gamma <= 1:
        raise UsageError("gamma must lie in (0, 1]")
    r = np.asarray(r, dtype=np.float64)
    q = np.empty_like(r)
    acc = 0.0
    for t in range(len(r) - 1, -1, -1):
        acc = r[t] + gamma * acc
        q[t] = acc
    return q


@dataclass
class ActionScoreTrace:
    reference: Sentence
    f: np.ndarray
    r: np.ndarray = field(default_factory=lambda: np.zeros(0))
    q: np.ndarray = field(default_factory=lambda: np.zeros(0))
    logp: np.ndarray = field(default_factory=lambda: np.zeros(0))
    reference_scores: ModuleScores | None = None


def estimate_action_scores_batch(sources: Sequence[Sentence], references: Sequence[Sentence], gp: GeneratorParams,
                                 evaluator: Evaluator, weights: ScoreWeights, rng: np.random.Generator
                                 ) -> list[ActionScoreTrace]:
    """Rollout-averaged action scores f_1..f_T' for each (source, reference) pair."""
    n = weights.rollouts
    mem, h0 = encode_values(sources, gp)
    prefixes, rows, limits = [], [], []
    for b, (src, ref) in enumerate(zip(sources, references)):
        toks = ref.tokens
        limit = max(max_decode_length(len(src.content)), len(toks) - 1)
        for t in range(1, len(toks) - 1):
            for _ in range(n):
                prefixes.append(list(toks[:t + 1]))
                rows.append(b)
                limits.append(limit)
    rows_arr = np.array(rows, dtype=np.int64)
    completed = rollout_batch(prefixes, mem.take(rows_arr), h0[rows_arr], gp, np.array(limits), rng) if prefixes else []

    groups: list[list[tuple[int, ...]]] = []
    k = 0
    for ref in references:
        steps = len(ref.tokens) - 2
        groups.append(list(completed[k:k + steps * n]) + [tuple(ref.tokens)])
        k += steps * n
    scores = evaluator.score_groups(groups, [s.tokens for s in sources])

    traces = []
    for ref, sc in zip(references, scores):
        combined = sc.combined(weights)
        steps = len(ref.tokens) - 2
        f = np.empty(steps + 1)
        f[:steps] = [action_score(row) for row in combined[:-1].reshape(steps, n)]
        # the final action completes the sentence: every rollout is the reference itself
        f[steps] = combined[-1]
        last = ModuleScores(sc.style[-1:], sc.semantic[-1:], sc.fluency[-1:])
        traces.append(ActionScoreTrace(ref, f, reference_scores=last))
    return traces


def estimate_action_scores(source: Sentence, reference: Sentence, gp: GeneratorParams, evaluator: Evaluator,
                           weights: ScoreWeights, rng: np.random.Generator) -> np.ndarray:
    return estimate_action_scores_batch([source], [reference], gp, evaluator, weights, rng)[0].f


def action_score(rollout_scores: Sequence[float]) -> float:
    """Mean combined score of the N completions of one prefix, correctly rounded."""
    s = np.asarray(rollout_scores, dtype=np.float64)
    if s.size == 0:
        raise UsageError("no rollouts")
    return float(sum(map(Fraction, s.tolist()), Fraction(0)) / s.size)


def policy_gradient_loss(logp: Tensor, returns: np.ndarray, mask: np.ndarray | None = None) -> Tensor:
    """-sum_t Q_t ln P(y_t | s_t), averaged over episodes (rows)."""
    w = np.asarray(returns, dtype=np.float64)
    if mask is not None:
        w = np.where(mask, w, 0.0)
    rows = logp.shape[0] if logp.values.ndim > 1 else 1
    return T.mul(T.sum_(T.mul(logp, w)), -1.0 / rows)


def center_returns(q: np.ndarray, live: np.ndarray) -> np.ndarray:
    """Subtract the batch-mean return at each timestep; dead positions stay zero."""
    counts = live.sum(axis=0)
    mean = np.where(counts > 0, np.where(live, q, 0.0).sum(axis=0) / np.maximum(counts, 1), 0.0)
    return np.where(live, q - mean, 0.0)


@dataclass
class RlStepReport:
    step: int
    reward: float
    generator_loss: float
    discriminator_loss: float
    style: float
    semantic: float
    fluency: float
    duration: float = 0.0
    skipped: int = 0

    HEADER = ("step", "J", "L_G", "L_D", "style", "semantic", "fluency")

    def row(self) -> str:
        vals = (self.reward, self.generator_loss, self.discriminator_loss, self.style, self.semantic, self.fluency)
        return "\t".join([str(self.step), *(f"{v:.10g}" for v in vals)])


@dataclass
class RlSettings:
    weights: ScoreWeights = ScoreWeights()
    beam_width: int = 8
    lr: float = 0.01
    disc_lr: float = 0.01
    clip_norm: float = 5.0
    baseline: bool = False


def _finite_grads(params: ParameterSet) -> bool:
    return all(t.grad is None or np.all(np.isfinite(t.grad)) for _, t in params.items())


def reinforce_update(sources: Sequence[Sentence], gp: GeneratorParams, dp: DiscriminatorParams, evaluator: Evaluator,
                     human_pool: Sequence[Sentence], settings: RlSettings, rng: np.random.Generator,
                     step: int = 0) -> RlStepReport:
    """One policy-gradient step over ``sources`` followed by one adversarial discriminator step."""
    if not sources:
        raise UsageError("empty RL batch")
    start = time.perf_counter()
    w = settings.weights
    references = [beam_search(s, gp, settings.beam_width).sentence for s in sources]
    traces = estimate_action_scores_batch(sources, references, gp, evaluator, w, rng)
    for tr in traces:
        tr.r = shape_rewards(tr.f)
        tr.q = discounted_returns(tr.r, w.gamma)

    width = max(len(tr.q) for tr in traces)
    q = np.zeros((len(traces), width))
    for b, tr in enumerate(traces):
        q[b, :len(tr.q)] = tr.q
    logp, live, _ = teacher_forced_logp(sources, references, gp)
    if settings.baseline:
        q = center_returns(q, live)

    keep = np.ones(len(sources), dtype=bool)
    gp.params.zero_grad()
    policy_gradient_loss(logp, q, live).backward()
    if not _finite_grads(gp.params):
        # isolate offending episodes, then redo the batch without them
        gp.params.zero_grad()
        for b in range(len(sources)):
            lp1, live1, _ = teacher_forced_logp([sources[b]], [references[b]], gp)
            policy_gradient_loss(lp1, q[b:b + 1, :lp1.shape[1]], live1).backward()
            keep[b] = _finite_grads(gp.params)
            gp.params.zero_grad()
            if not keep[b]:
                _log.warning("step %d: skipping episode %d with non-finite gradient", step, b)
        if keep.any():
            idx = np.flatnonzero(keep)
            lp2, live2, _ = teacher_forced_logp([sources[i] for i in idx], [references[i] for i in idx], gp)
            policy_gradient_loss(lp2, q[idx][:, :lp2.shape[1]], live2).backward()
    if keep.any():
        sgd_step(gp.params, settings.lr, settings.clip_norm)
    gp.params.zero_grad()

    probs = np.exp(np.where(live, logp.values, -np.inf))
    per_episode = np.sum(probs * q, axis=1)
    reward = float(per_episode[keep].mean()) if keep.any() else 0.0

    human_idx = rng.integers(0, len(human_pool), size=len(references))
    human = [human_pool[i] for i in human_idx]
    l_d = adversarial_step(human, references, dp, settings.disc_lr, settings.clip_norm)

    ref_scores = [tr.reference_scores for tr in traces]
    return RlStepReport(
        step=step,
        reward=reward,
        generator_loss=-reward,
        discriminator_loss=l_d,
        style=float(np.mean([s.style[0] for s in ref_scores])),
        semantic=float(np.mean([s.semantic[0] for s in ref_scores])),
        fluency=float(np.mean([s.fluency[0] for s in ref_scores])),
        duration=time.perf_counter() - start,
        skipped=int((~keep).sum()),
    )


@dataclass
class Schedule:
    batch_size: int = 4
    epochs: int = 5
    max_steps: int | None = None
    eval_every: int = 100

    def total_steps(self, corpus_size: int) -> int:
        if self.batch_size < 1 or self.epochs < 0 or self.eval_every < 1:
            raise UsageError("batch_size and eval_every must be positive, epochs non-negative")
        steps = self.epochs * math.ceil(corpus_size / self.batch_size)
        return steps if self.max_steps is None else min(steps, self.max_steps)


class BatchOrder:
    """Epoch-shuffled minibatches that depend only on (seed, step), so runs resume exactly."""

    def __init__(self, size: int, batch_size: int, seed: int):
        if size < 1:
            raise UsageError("empty training corpus")
        self.size, self.batch_size, self.seed = size, batch_size, seed
        self._perms: dict[int, np.ndarray] = {}

    def _perm(self, epoch: int) -> np.ndarray:
        if epoch not in self._perms:
            self._perms = {epoch: np.random.default_rng([self.seed, epoch, 0x5EED]).permutation(self.size)}
        return self._perms[epoch]

    def batch(self, step: int) -> list[int]:
        start = step * self.batch_size
        return [int(self._perm(g // self.size)[g % self.size]) for g in range(start, start + self.batch_size)]


def step_rng(seed: int, step: int) -> np.random.Generator:
    return np.random.default_rng([seed, step])


EVAL_HEADER = ("step", "content", "style", "overall", "perplexity")


@dataclass
class TrainingLog:
    updates: list[RlStepReport] = field(default_factory=list)
    evaluations: list[tuple[int, EvaluationReport | None]] = field(default_factory=list)
    best_step: int | None = None
    best_overall: float = -math.inf

    def update_tsv(self) -> str:
        return "".join(["\t".join(RlStepReport.HEADER) + "\n", *(u.row() + "\n" for u in self.updates)])

    def eval_tsv(self) -> str:
        rows = ["\t".join(EVAL_HEADER)]
        for step, rep in self.evaluations:
            if rep is None:
                rows.append(f"{step}\tunevaluated\tunevaluated\tunevaluated\tunevaluated")
            else:
                rows.append("\t".join([str(step), *(rep.values()[:4])]))
        return "\n".join(rows) + "\n"


def train(sources: Sequence[Sentence], human_pool: Sequence[Sentence], gp: GeneratorParams, dp: DiscriminatorParams,
          evaluator: Evaluator, settings: RlSettings, schedule: Schedule, seed: int,
          evaluate_fn: Callable[[GeneratorParams], EvaluationReport],
          on_best: Callable[[int, GeneratorParams, DiscriminatorParams], None] | None = None,
          start_step: int = 0, log: TrainingLog | None = None,
          on_update: Callable[[RlStepReport], None] | None = None,
          on_eval: Callable[[], None] | None = None) -> TrainingLog:
    """Run RL updates from ``start_step``; evaluate on dev every ``eval_every`` steps and at the end.

    ``evaluate_fn`` failures are recorded as unevaluated and training continues.
    """
    log_ = log if log is not None else TrainingLog()
    total = schedule.total_steps(len(sources))
    order = BatchOrder(len(sources), schedule.batch_size, seed)

    def run_eval(step: int) -> None:
        try:
            rep = evaluate_fn(gp)
        except (ArithmeticError, ValueError) as exc:
            _log.warning("evaluation at step %d failed: %s", step, exc)
            log_.evaluations.append((step, None))
            return
        log_.evaluations.append((step, rep))
        score = rep.overall if rep.overall is not None else -math.inf
        if score > log_.best_overall:
            log_.best_overall, log_.best_step = score, step
            if on_best is not None:
                on_best(step, gp, dp)

    def run_eval_and_notify(step: int) -> None:
        run_eval(step)
        if on_eval is not None:
            on_eval()

    if start_step == 0:
        run_eval_and_notify(0)
    for step in range(start_step, total):
        batch = [sources[i] for i in order.batch(step)]
        rep = reinforce_update(batch, gp, dp, evaluator, human_pool, settings, step_rng(seed, step), step + 1)
        log_.updates.append(rep)
        if on_update is not None:
            on_update(rep)
        if (step + 1) % schedule.eval_every == 0 or step + 1 == total:
            run_eval_and_notify(step + 1)
    return log_
