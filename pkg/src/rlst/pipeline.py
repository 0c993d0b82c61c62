"""Experiment phases: data, three pre-trainings, RL, transfer and evaluation.

Every phase draws from its own generator seeded by ``(seed, phase)`` so that
phases can run in separate processes and still reproduce a single-process run.
"""

from __future__ import annotations

import json
import logging
import time
from collections.abc import Callable, Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from rlst.config import ExperimentConfig
from rlst.corpus import (
    SOURCE,
    TARGET,
    IngestionError,
    Sentence,
    StyleCorpus,
    SyntheticSpec,
    UsageError,
    Vocabulary,
    build_vocab,
    load_corpus_dir,
    make_synthetic_task,
    read_sentences,
    synthetic_embeddings,
    write_oracle,
    write_sentences,
)
from rlst.discriminator import DiscriminatorParams, pretrain_discriminator_step
from rlst.embeddings import evaluation_matrix, init_matrix, load_embeddings, save_embeddings
from rlst.generator import GeneratorParams, beam_search, pretrain_generator_step
from rlst.language_model import LMParams, pretrain_lm_step
from rlst.metrics import EvaluationReport, evaluate
from rlst.nn_core import checkpoint
from rlst.rl import BatchOrder, Evaluator, RlStepReport, TrainingLog, train

log = logging.getLogger(__name__)

PHASE_DATA, PHASE_GEN, PHASE_STYLE, PHASE_EVAL_STYLE, PHASE_LM, PHASE_EVAL_LM, PHASE_RL = range(7)

GEN_CKPT = "generator.ckpt"
STYLE_CKPT = "style.ckpt"
EVAL_STYLE_CKPT = "eval_style.ckpt"
LM_CKPT = "lm.ckpt"
EVAL_LM_CKPT = "eval_lm.ckpt"
RL_DIR = "rl"
RL_BEST_GEN = "generator_best.ckpt"
RL_LAST_GEN = "generator_last.ckpt"
RL_LAST_DISC = "style_last.ckpt"
RL_STATE = "state.json"
TRAIN_LOG = "train_log.tsv"
EVAL_LOG = "eval_log.tsv"
VOCAB_FILE = "vocab.tsv"

PREREQUISITES = {
    GEN_CKPT: "pretrain-gen",
    STYLE_CKPT: "pretrain-style",
    EVAL_STYLE_CKPT: "pretrain-style",
    LM_CKPT: "pretrain-lm",
    EVAL_LM_CKPT: "pretrain-lm",
}


class MissingPrerequisite(UsageError):
    pass


def phase_rng(cfg: ExperimentConfig, phase: int) -> np.random.Generator:
    return np.random.default_rng([cfg.seed, phase])


# data ---------------------------------------------------------------------------------------------

def synthesize(cfg: ExperimentConfig) -> StyleCorpus:
    """Write the synthetic marker task, its embeddings and the test oracle under ``cfg.data_path``."""
    rng = phase_rng(cfg, PHASE_DATA)
    spec = SyntheticSpec(content_vocab_size=cfg.synth_content, sentence_count=cfg.synth_sentences)
    corpus = make_synthetic_task(rng, spec)
    table = synthetic_embeddings(rng, spec, dim=cfg.embed_dim)
    d = cfg.data_path
    d.mkdir(parents=True, exist_ok=True)
    a, b = corpus.style_names
    for split in ("train", "dev", "test"):
        write_sentences(d / f"{split}.{a}.txt", corpus.split(split, SOURCE))
        write_sentences(d / f"{split}.{b}.txt", corpus.split(split, TARGET))
    save_embeddings(d / "embeddings.txt", table)
    write_oracle(d / "oracle.test.tsv", corpus)
    return corpus


@dataclass
class Task:
    corpus: StyleCorpus
    vocab: Vocabulary
    table: dict[str, np.ndarray] | None

    def sentences(self, split: str, style: str) -> list[Sentence]:
        return self.corpus.encoded(self.vocab, split, style)

    def scoring_embeddings(self, dim: int) -> np.ndarray:
        if not self.table:
            raise MissingPrerequisite("semantic scoring needs word vectors: set 'embeddings = PATH' "
                                      "(synth-data writes <data_dir>/embeddings.txt)")
        return evaluation_matrix(self.vocab, self.table, dim)

    def stopword_ids(self, path: str) -> frozenset[int]:
        if not path:
            return frozenset()
        words = {w for line in read_sentences(path) for w in line}
        return frozenset(self.vocab.stoi[w] for w in words if w in self.vocab.stoi)


def load_task(cfg: ExperimentConfig) -> Task:
    """Corpus, vocabulary (built once, then reused from the output directory) and word vectors."""
    if not cfg.data_path.exists():
        raise MissingPrerequisite(f"no corpus at {cfg.data_path}; run synth-data or set data_dir")
    corpus = load_corpus_dir(cfg.data_path, cfg.source_style, cfg.target_style)
    vocab_path = cfg.out_dir / VOCAB_FILE
    if vocab_path.exists():
        vocab = Vocabulary.load(vocab_path)
    else:
        vocab = build_vocab(corpus, cfg.min_frequency, cfg.max_vocab or None)
        cfg.out_dir.mkdir(parents=True, exist_ok=True)
        vocab.save(vocab_path)
    emb_path = cfg.embeddings_path
    if emb_path is not None and not emb_path.exists():
        raise IngestionError(f"embeddings file {emb_path} does not exist")
    table = load_embeddings(emb_path, cfg.embed_dim) if emb_path is not None else None
    return Task(corpus, vocab, table)


# checkpoints --------------------------------------------------------------------------------------

def require(cfg: ExperimentConfig, name: str) -> Path:
    path = cfg.out_dir / name
    if not path.exists():
        raise MissingPrerequisite(f"missing {path}; run `rlst {PREREQUISITES.get(name, 'train-rl')}` first")
    return path


def load_generator(cfg: ExperimentConfig, path: Path | None = None) -> GeneratorParams:
    return GeneratorParams(checkpoint.load(path or require(cfg, GEN_CKPT)))


def load_style(cfg: ExperimentConfig, name: str = STYLE_CKPT) -> DiscriminatorParams:
    return DiscriminatorParams(checkpoint.load(require(cfg, name)))


def load_lm(cfg: ExperimentConfig, name: str = LM_CKPT) -> LMParams:
    return LMParams(checkpoint.load(require(cfg, name)))


def transfer_generator(cfg: ExperimentConfig) -> GeneratorParams:
    """RL's best checkpoint when present, otherwise the pre-trained generator."""
    best = cfg.out_dir / RL_DIR / RL_BEST_GEN
    if best.exists():
        return load_generator(cfg, best)
    log.info("no RL checkpoint at %s; using the pre-trained generator", best)
    return load_generator(cfg)


# pre-training -------------------------------------------------------------------------------------

def _steps(n: int, batch: int, epochs: int) -> int:
    return epochs * -(-n // batch)


def pretrain_generator(cfg: ExperimentConfig, task: Task, progress: Callable[[int, float], None] | None = None
                       ) -> GeneratorParams:
    """Autoencode target-style training sentences (plus source-style ones with ``union_pretrain``)."""
    rng = phase_rng(cfg, PHASE_GEN)
    data = task.sentences("train", TARGET)
    if cfg.union_pretrain:
        data = data + task.sentences("train", SOURCE)
    emb = init_matrix(task.vocab, task.table, cfg.embed_dim, rng)
    gp = GeneratorParams.create(len(task.vocab), cfg.hidden_dim, rng, embeddings=emb)
    order = BatchOrder(len(data), cfg.gen_batch, cfg.seed * 7919 + PHASE_GEN)
    for step in range(_steps(len(data), cfg.gen_batch, cfg.gen_epochs)):
        loss = pretrain_generator_step([data[i] for i in order.batch(step)], gp, cfg.gen_lr, cfg.clip_norm)
        if progress is not None:
            progress(step, loss)
    return gp


def _train_classifier(cfg: ExperimentConfig, task: Task, phase: int,
                      progress: Callable[[int, float], None] | None) -> DiscriminatorParams:
    rng = phase_rng(cfg, phase)
    pos, neg = task.sentences("train", TARGET), task.sentences("train", SOURCE)
    emb = init_matrix(task.vocab, task.table, cfg.embed_dim, rng)
    dp = DiscriminatorParams.create(len(task.vocab), cfg.hidden_dim, rng, embeddings=emb,
                                    attention_dim=cfg.attention_dim)
    half = max(1, cfg.style_batch // 2)
    pos_order = BatchOrder(len(pos), half, cfg.seed * 7919 + phase)
    neg_order = BatchOrder(len(neg), half, cfg.seed * 7919 + phase + 100)
    for step in range(_steps(len(pos) + len(neg), 2 * half, cfg.style_epochs)):
        batch = [pos[i] for i in pos_order.batch(step)] + [neg[i] for i in neg_order.batch(step)]
        loss = pretrain_discriminator_step(batch, dp, cfg.style_lr, clip_norm=cfg.clip_norm)
        if progress is not None:
            progress(step, loss)
    return dp


def pretrain_style(cfg: ExperimentConfig, task: Task, progress: Callable[[int, float], None] | None = None
                   ) -> tuple[DiscriminatorParams, DiscriminatorParams]:
    """(reward discriminator, frozen evaluation classifier), trained independently."""
    return (_train_classifier(cfg, task, PHASE_STYLE, progress),
            _train_classifier(cfg, task, PHASE_EVAL_STYLE, progress))


def _train_lm(cfg: ExperimentConfig, task: Task, phase: int, progress) -> LMParams:
    rng = phase_rng(cfg, phase)
    data = task.sentences("train", TARGET)
    emb = init_matrix(task.vocab, task.table, cfg.embed_dim, rng)
    lm = LMParams.create(len(task.vocab), cfg.hidden_dim, rng, embeddings=emb)
    order = BatchOrder(len(data), cfg.lm_batch, cfg.seed * 7919 + phase)
    for step in range(_steps(len(data), cfg.lm_batch, cfg.lm_epochs)):
        loss = pretrain_lm_step([data[i] for i in order.batch(step)], lm, cfg.lm_lr, cfg.clip_norm)
        if progress is not None:
            progress(step, loss)
    return lm


def pretrain_lm(cfg: ExperimentConfig, task: Task, progress: Callable[[int, float], None] | None = None
                ) -> tuple[LMParams, LMParams]:
    """(reward language model, frozen evaluation language model), trained independently."""
    return _train_lm(cfg, task, PHASE_LM, progress), _train_lm(cfg, task, PHASE_EVAL_LM, progress)


# transfer and evaluation --------------------------------------------------------------------------

def transfer(sources: Sequence[Sentence], gp: GeneratorParams, width: int = 8) -> list[Sentence]:
    return [beam_search(s, gp, width).sentence for s in sources]


def evaluate_transfer(cfg: ExperimentConfig, task: Task, gp: GeneratorParams, sources: Sequence[Sentence],
                      classifier: DiscriminatorParams, eval_lm: LMParams,
                      embeddings: np.ndarray | None = None) -> EvaluationReport:
    generated = transfer(sources, gp, cfg.beam_width)
    emb = embeddings if embeddings is not None else task.scoring_embeddings(cfg.embed_dim)
    return evaluate(generated, sources, emb, classifier, eval_lm, cfg.eval_pooling)


# reinforcement learning ---------------------------------------------------------------------------

@dataclass
class Models:
    generator: GeneratorParams
    style: DiscriminatorParams
    lm: LMParams
    eval_style: DiscriminatorParams
    eval_lm: LMParams


def run_rl(cfg: ExperimentConfig, task: Task, models: Models, rl_dir: Path | None = None, resume: bool = False,
           on_update: Callable[[RlStepReport], None] | None = None) -> TrainingLog:
    """RL fine-tuning with dev-set model selection.

    With ``rl_dir`` the logs are streamed to TSV files, the best generator is
    checkpointed, and the latest generator/discriminator plus step counter
    are saved at every evaluation so that ``resume`` continues exactly.
    """
    emb = task.scoring_embeddings(cfg.embed_dim)
    evaluator = Evaluator(models.style, models.lm, emb, task.stopword_ids(cfg.stopwords))
    sources = task.sentences("train", SOURCE)
    human = task.sentences("train", TARGET)
    dev = task.sentences("dev", SOURCE)
    if not dev:
        raise IngestionError(f"no dev.{cfg.source_style}.txt sentences for model selection")
    gp, dp = models.generator, models.style

    start_step, history = 0, TrainingLog()
    if rl_dir is not None:
        rl_dir.mkdir(parents=True, exist_ok=True)
        if resume and (rl_dir / RL_STATE).exists():
            state = json.loads((rl_dir / RL_STATE).read_text())
            start_step = int(state["step"])
            history.best_overall = float(state["best_overall"])
            history.best_step = state["best_step"]
            gp.params.assign(checkpoint.load(rl_dir / RL_LAST_GEN))
            dp.params.assign(checkpoint.load(rl_dir / RL_LAST_DISC))
            _truncate_log(rl_dir / TRAIN_LOG, start_step)
            _truncate_log(rl_dir / EVAL_LOG, start_step)
            log.info("resuming RL at step %d", start_step)
        else:
            (rl_dir / TRAIN_LOG).write_text("\t".join(RlStepReport.HEADER) + "\n")
            (rl_dir / EVAL_LOG).write_text(TrainingLog().eval_tsv())

    def evaluate_fn(g: GeneratorParams) -> EvaluationReport:
        return evaluate_transfer(cfg, task, g, dev, models.eval_style, models.eval_lm, emb)

    def on_best(step: int, g: GeneratorParams, d: DiscriminatorParams) -> None:
        if rl_dir is not None:
            checkpoint.save(g.params, rl_dir / RL_BEST_GEN)

    def record(rep: RlStepReport) -> None:
        if rl_dir is not None:
            with open(rl_dir / TRAIN_LOG, "a", encoding="utf-8") as fh:
                fh.write(rep.row() + "\n")
        if on_update is not None:
            on_update(rep)

    seen_evals = len(history.evaluations)

    def after_eval() -> None:
        nonlocal seen_evals
        if rl_dir is None:
            return
        new = history.evaluations[seen_evals:]
        seen_evals = len(history.evaluations)
        lines = TrainingLog(evaluations=new).eval_tsv().splitlines()[1:]
        with open(rl_dir / EVAL_LOG, "a", encoding="utf-8") as fh:
            fh.writelines(line + "\n" for line in lines)
        step = new[-1][0]
        checkpoint.save(gp.params, rl_dir / RL_LAST_GEN)
        checkpoint.save(dp.params, rl_dir / RL_LAST_DISC)
        state = {"step": step, "best_overall": history.best_overall, "best_step": history.best_step}
        (rl_dir / RL_STATE).write_text(json.dumps(state, sort_keys=True) + "\n")

    start = time.perf_counter()
    train(sources, human, gp, dp, evaluator, cfg.rl_settings(), cfg.schedule(), cfg.seed,
          evaluate_fn, on_best, start_step, history, record, after_eval)
    log.info("RL finished in %.1fs; best dev overall %.4f at step %s", time.perf_counter() - start,
             history.best_overall, history.best_step)
    return history


def _truncate_log(path: Path, step: int) -> None:
    """Drop rows past ``step`` (left by an interrupted run) so resumed logs match a straight run."""
    if not path.exists():
        return
    lines = path.read_text(encoding="utf-8").splitlines()
    kept = [lines[0]] + [ln for ln in lines[1:] if int(ln.split("\t", 1)[0]) <= step]
    path.write_text("".join(ln + "\n" for ln in kept), encoding="utf-8")
