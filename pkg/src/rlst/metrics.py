"""Frozen automatic evaluation: content preservation, transfer strength, overall score, perplexity."""

from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from rlst.corpus import Sentence, UsageError
from rlst.discriminator import DiscriminatorParams, score_batch
from rlst.language_model import LMParams, corpus_perplexity
from rlst.semantic import content_tokens

POOLINGS = ("mean", "min-mean-max")


class UndefinedScore(ArithmeticError):
    pass


def pooled_embedding(tokens: Sequence[int], embeddings: np.ndarray, pooling: str = "mean") -> np.ndarray:
    ids = content_tokens(tokens)
    if not ids:
        raise UsageError("sentence has no content tokens")
    vecs = embeddings[ids]
    if pooling == "mean":
        return vecs.mean(axis=0)
    if pooling == "min-mean-max":
        return np.concatenate([vecs.min(axis=0), vecs.mean(axis=0), vecs.max(axis=0)])
    raise UsageError(f"unknown pooling {pooling!r}; expected one of {POOLINGS}")


def content_preservation_detail(generated: Sequence[int], source: Sequence[int], embeddings: np.ndarray,
                                pooling: str = "mean") -> tuple[float, bool]:
    """(cosine similarity, flagged); a zero-norm pooled vector scores 0 and is flagged."""
    g = pooled_embedding(generated, embeddings, pooling)
    s = pooled_embedding(source, embeddings, pooling)
    ng, ns = np.linalg.norm(g), np.linalg.norm(s)
    if ng == 0 or ns == 0:
        return 0.0, True
    return float(np.clip(g @ s / (ng * ns), -1.0, 1.0)), False


def content_preservation(generated: Sentence | Sequence[int], source: Sentence | Sequence[int],
                         embeddings: np.ndarray, pooling: str = "mean") -> float:
    g = generated.tokens if isinstance(generated, Sentence) else generated
    s = source.tokens if isinstance(source, Sentence) else source
    return content_preservation_detail(g, s, embeddings, pooling)[0]


def transfer_strength(target_probs: Sequence[float]) -> float:
    """Fraction of sentences the classifier puts in the target style (strictly above 0.5)."""
    p = np.asarray(target_probs, dtype=np.float64)
    if p.size == 0:
        raise UsageError("empty corpus")
    return float(np.mean(p > 0.5))


def classifier_transfer_strength(generated: Sequence[Sentence], classifier: DiscriminatorParams) -> float:
    if not generated:
        raise UsageError("empty corpus")
    return transfer_strength(score_batch([s.tokens for s in generated], classifier))


def overall_score(s_sem: float, s_style: float) -> float:
    """s_sem * s_style / (s_sem + s_style)."""
    denom = s_sem + s_style
    if not denom > 0:
        raise UndefinedScore(f"overall score undefined for s_sem={s_sem}, s_style={s_style}")
    return s_sem * s_style / denom


@dataclass
class EvaluationReport:
    content: float
    style: float
    overall: float | None
    perplexity: float
    count: int
    flagged_content: int = 0

    COLUMNS = ("content", "style", "overall", "perplexity", "count")

    @property
    def overall_defined(self) -> bool:
        return self.overall is not None

    def values(self) -> list[str]:
        overall = "undefined" if self.overall is None else f"{self.overall:.6f}"
        return [f"{self.content:.6f}", f"{self.style:.6f}", overall, f"{self.perplexity:.4f}", str(self.count)]

    def tsv(self, header: bool = True) -> str:
        rows = ["\t".join(self.COLUMNS)] if header else []
        rows.append("\t".join(self.values()))
        return "\n".join(rows) + "\n"

    def table(self) -> str:
        width = max(len(c) for c in self.COLUMNS)
        return "".join(f"{c:<{width}}  {v:>12}\n" for c, v in zip(self.COLUMNS, self.values()))


def evaluate(generated: Sequence[Sentence], sources: Sequence[Sentence], embeddings: np.ndarray,
             classifier: DiscriminatorParams, eval_lm: LMParams, pooling: str = "mean") -> EvaluationReport:
    if len(generated) != len(sources):
        raise UsageError(f"{len(generated)} generated vs {len(sources)} source sentences")
    if not generated:
        raise UsageError("empty corpus")
    sims, flagged = [], 0
    for g, s in zip(generated, sources):
        if not content_tokens(g.tokens):
            sims.append(0.0)
            flagged += 1
            continue
        sim, flag = content_preservation_detail(g.tokens, s.tokens, embeddings, pooling)
        sims.append(sim)
        flagged += flag
    s_sem = float(np.mean(sims))
    s_style = classifier_transfer_strength(generated, classifier)
    try:
        overall = overall_score(s_sem, s_style)
    except UndefinedScore:
        overall = None
    ppl = corpus_perplexity(generated, eval_lm)
    if not math.isfinite(ppl):
        raise ArithmeticError("non-finite perplexity")
    return EvaluationReport(s_sem, s_style, overall, ppl, len(generated), flagged)
