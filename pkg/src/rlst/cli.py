"""Command-line driver.

Typical run on the synthetic task::

    rlst synth-data --out run
    rlst pretrain-gen --out run
    rlst pretrain-style --out run
    rlst pretrain-lm --out run
    rlst train-rl --out run
    rlst evaluate --out run

Exit status: 0 success, 1 usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from contextlib import contextmanager
from pathlib import Path

from rlst.config import ExperimentConfig, load_config
from rlst.corpus import SOURCE, TARGET, Sentence, UsageError, read_sentences, write_sentences
from rlst.language_model import corpus_perplexity
from rlst.metrics import evaluate
from rlst.nn_core import checkpoint

log = logging.getLogger("rlst")

LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
LOCK_NAME = ".rlst.lock"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _configure_logging() -> None:
    level = os.environ.get("RLST_LOG_LEVEL", "info").lower()
    if level not in LOG_LEVELS:
        raise UsageError(f"RLST_LOG_LEVEL must be one of {sorted(LOG_LEVELS)}, got {level!r}")
    logging.basicConfig(level=LOG_LEVELS[level], format="%(levelname)s %(name)s: %(message)s", force=True)


@contextmanager
def output_lock(out_dir: Path):
    """Exclusive lock file in the output directory; a lock left by a dead process is taken over."""
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / LOCK_NAME
    for _ in range(2):
        try:
            fd = os.open(path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
            break
        except FileExistsError:
            try:
                pid = int(path.read_text().strip() or "0")
            except (OSError, ValueError):
                pid = 0
            if pid > 0 and _alive(pid):
                raise RuntimeError(f"{out_dir} is in use by process {pid} (lock file {path})") from None
            path.unlink(missing_ok=True)
    else:
        raise RuntimeError(f"could not acquire lock file {path}")
    with os.fdopen(fd, "w") as fh:
        fh.write(str(os.getpid()))
    try:
        yield
    finally:
        path.unlink(missing_ok=True)


def _alive(pid: int) -> bool:
    try:
        os.kill(pid, 0)
    except ProcessLookupError:
        return False
    except PermissionError:
        return True
    return True


def _progress(name: str, every: int = 200):
    def report(step: int, loss: float) -> None:
        if step % every == 0:
            log.info("%s step %d loss %.4f", name, step, loss)
    return report


# subcommands --------------------------------------------------------------------------------------

def cmd_synth_data(cfg: ExperimentConfig, args) -> int:
    from rlst.pipeline import synthesize

    synthesize(cfg)
    print(f"wrote synthetic corpus, embeddings and oracle to {cfg.data_path}")
    return 0


def cmd_pretrain_gen(cfg: ExperimentConfig, args) -> int:
    from rlst import pipeline as P

    task = P.load_task(cfg)
    gp = P.pretrain_generator(cfg, task, _progress("generator"))
    checkpoint.save(gp.params, cfg.out_dir / P.GEN_CKPT)
    print(f"wrote {cfg.out_dir / P.GEN_CKPT}")
    return 0


def cmd_pretrain_style(cfg: ExperimentConfig, args) -> int:
    from rlst import pipeline as P

    task = P.load_task(cfg)
    reward, frozen = P.pretrain_style(cfg, task, _progress("style"))
    checkpoint.save(reward.params, cfg.out_dir / P.STYLE_CKPT)
    checkpoint.save(frozen.params, cfg.out_dir / P.EVAL_STYLE_CKPT)
    print(f"wrote {cfg.out_dir / P.STYLE_CKPT} and {cfg.out_dir / P.EVAL_STYLE_CKPT}")
    return 0


def cmd_pretrain_lm(cfg: ExperimentConfig, args) -> int:
    from rlst import pipeline as P

    task = P.load_task(cfg)
    reward, frozen = P.pretrain_lm(cfg, task, _progress("language model"))
    checkpoint.save(reward.params, cfg.out_dir / P.LM_CKPT)
    checkpoint.save(frozen.params, cfg.out_dir / P.EVAL_LM_CKPT)
    print(f"wrote {cfg.out_dir / P.LM_CKPT} and {cfg.out_dir / P.EVAL_LM_CKPT}")
    return 0


def cmd_train_rl(cfg: ExperimentConfig, args) -> int:
    from rlst import pipeline as P

    for name in (P.GEN_CKPT, P.STYLE_CKPT, P.EVAL_STYLE_CKPT, P.LM_CKPT, P.EVAL_LM_CKPT):
        P.require(cfg, name)
    task = P.load_task(cfg)
    models = P.Models(P.load_generator(cfg), P.load_style(cfg), P.load_lm(cfg),
                      P.load_style(cfg, P.EVAL_STYLE_CKPT), P.load_lm(cfg, P.EVAL_LM_CKPT))
    rl_dir = cfg.out_dir / P.RL_DIR

    def on_update(rep) -> None:
        if rep.step % 50 == 0:
            log.info("update %d J %.4f L_D %.4f style %.3f semantic %.4f fluency %.3f (%.2fs)", rep.step,
                     rep.reward, rep.discriminator_loss, rep.style, rep.semantic, rep.fluency, rep.duration)

    history = P.run_rl(cfg, task, models, rl_dir, resume=args.resume, on_update=on_update)
    if history.best_step is None:
        log.warning("no evaluation produced a defined overall score; no best checkpoint written")
    print(f"training log: {rl_dir / P.TRAIN_LOG}")
    print(f"evaluation log: {rl_dir / P.EVAL_LOG}")
    if history.best_step is not None:
        print(f"best dev overall {history.best_overall:.6f} at update {history.best_step}: {rl_dir / P.RL_BEST_GEN}")
    return 0


def _generator(cfg: ExperimentConfig, args):
    from rlst import pipeline as P

    if getattr(args, "checkpoint", None):
        path = Path(args.checkpoint)
        if not path.exists():
            raise UsageError(f"checkpoint {path} does not exist")
        return P.load_generator(cfg, path)
    return P.transfer_generator(cfg)


def cmd_transfer(cfg: ExperimentConfig, args) -> int:
    from rlst import pipeline as P

    task = P.load_task(cfg)
    gp = _generator(cfg, args)
    lines = read_sentences(args.input)
    sources = [task.vocab.encode(toks, SOURCE) for toks in lines]
    outputs = [task.vocab.decode(s) for s in P.transfer(sources, gp, cfg.beam_width)]
    if args.output:
        write_sentences(args.output, outputs)
        print(f"wrote {len(outputs)} sentences to {args.output}")
    else:
        sys.stdout.write("".join(" ".join(o) + "\n" for o in outputs))
    return 0


def _encode_file(task, path: str, style: str) -> list[Sentence]:
    return [task.vocab.encode(toks, style) for toks in read_sentences(path)]


def cmd_evaluate(cfg: ExperimentConfig, args) -> int:
    from rlst import pipeline as P

    task = P.load_task(cfg)
    classifier = P.load_style(cfg, P.EVAL_STYLE_CKPT)
    eval_lm = P.load_lm(cfg, P.EVAL_LM_CKPT)
    if args.sources:
        sources = _encode_file(task, args.sources, SOURCE)
    else:
        sources = task.sentences(args.split, SOURCE)
        if args.limit:
            sources = sources[:args.limit]
    if args.generated:
        generated = _encode_file(task, args.generated, TARGET)
    else:
        generated = P.transfer(sources, _generator(cfg, args), cfg.beam_width)
    report = evaluate(generated, sources, task.scoring_embeddings(cfg.embed_dim), classifier, eval_lm,
                      cfg.eval_pooling)
    if report.flagged_content:
        log.warning("%d sentence(s) had no usable content vectors and scored 0", report.flagged_content)
    (cfg.out_dir / "evaluation.tsv").write_text(report.tsv(), encoding="utf-8")
    sys.stdout.write(report.tsv())
    return 0


def cmd_ppl(cfg: ExperimentConfig, args) -> int:
    from rlst import pipeline as P

    task = P.load_task(cfg)
    lm = P.load_lm(cfg, P.EVAL_LM_CKPT if args.model == "eval" else P.LM_CKPT)
    sentences = _encode_file(task, args.input, TARGET)
    ppl = corpus_perplexity(sentences, lm)
    sys.stdout.write(f"sentences\tperplexity\n{len(sentences)}\t{ppl:.6f}\n")
    return 0


def cmd_report(cfg: ExperimentConfig, args) -> int:
    from rlst import pipeline as P
    from rlst.plotting import write_report

    rl_dir = cfg.out_dir / P.RL_DIR
    train_log, eval_log = rl_dir / P.TRAIN_LOG, rl_dir / P.EVAL_LOG
    if not train_log.exists() or not eval_log.exists():
        raise P.MissingPrerequisite(f"no training logs under {rl_dir}; run `rlst train-rl` first")
    out = Path(args.report_dir) if args.report_dir else cfg.out_dir / "report"
    rows = write_report(train_log, eval_log, out)
    sys.stdout.write("metric\tpoints\tfirst\tlast\ttail_mean\n")
    sys.stdout.write("".join("\t".join(map(str, r)) + "\n" for r in rows))
    log.info("report files and figures in %s", out)
    return 0


COMMANDS = {
    "synth-data": (cmd_synth_data, "write the synthetic marker task, embeddings and oracle"),
    "pretrain-gen": (cmd_pretrain_gen, "pre-train the generator by target-style autoencoding"),
    "pretrain-style": (cmd_pretrain_style, "pre-train the reward discriminator and the evaluation classifier"),
    "pretrain-lm": (cmd_pretrain_lm, "pre-train the reward language model and the evaluation language model"),
    "train-rl": (cmd_train_rl, "REINFORCE fine-tuning with adversarial discriminator updates"),
    "transfer": (cmd_transfer, "transfer a source-style file, one sentence per line"),
    "evaluate": (cmd_evaluate, "content preservation, transfer strength, overall score, perplexity"),
    "ppl": (cmd_ppl, "corpus perplexity of a file under a language model"),
    "report": (cmd_report, "summarize training logs into tables, (step, value) files and figures"),
}


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="key = value configuration file")
    common.add_argument("--seed", type=int, help="overrides the configured seed")
    common.add_argument("--out", help="output directory (checkpoints, logs, reports)")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override any configuration key; repeatable")

    parser = _Parser(prog="rlst", description="Reinforcement-learning text style transfer.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, parents=[common], help=help_text, description=help_text)
        if name == "train-rl":
            p.add_argument("--resume", action="store_true", help="continue from the last saved RL state")
        if name in ("transfer", "evaluate"):
            p.add_argument("--checkpoint", help="generator checkpoint (default: best RL, else pre-trained)")
        if name == "transfer":
            p.add_argument("--input", required=True, help="source-style sentences, one per line")
            p.add_argument("--output", help="destination file (default: stdout)")
        if name == "evaluate":
            p.add_argument("--generated", help="score these sentences instead of transferring")
            p.add_argument("--sources", help="source sentences aligned with --generated (default: a corpus split)")
            p.add_argument("--split", default="test", choices=("train", "dev", "test"))
            p.add_argument("--limit", type=int, default=0, help="use only the first N split sentences")
        if name == "ppl":
            p.add_argument("--input", required=True, help="sentences to score, one per line")
            p.add_argument("--model", choices=("eval", "reward"), default="eval")
        if name == "report":
            p.add_argument("--report-dir", help="destination (default: <out>/report)")
    return parser


def resolve_config(args) -> ExperimentConfig:
    overrides: dict[str, object] = {}
    for item in args.set:
        if "=" not in item:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        overrides[key.strip()] = value.strip()
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out is not None:
        overrides["out"] = args.out
    return load_config(args.config, overrides)


def main(argv: list[str] | None = None) -> int:
    try:
        _configure_logging()
        args = build_parser().parse_args(argv)
        if args.command == "evaluate" and args.sources and not args.generated:
            raise UsageError("--sources requires --generated")
        cfg = resolve_config(args)
        handler = COMMANDS[args.command][0]
        with output_lock(cfg.out_dir):
            return handler(cfg, args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        print("interrupted", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - every runtime failure maps to exit status 2
        log.debug("runtime failure", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
