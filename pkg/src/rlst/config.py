"""Experiment configuration: ``key = value`` lines, ``#`` comments, typed defaults."""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, fields
from pathlib import Path

from rlst.corpus import UsageError
from rlst.rl import RlSettings, Schedule, ScoreWeights


@dataclass
class ExperimentConfig:
    seed: int = 0
    out: str = "run"
    data_dir: str = ""  # empty: <out>/data
    embeddings: str = ""  # empty: <data_dir>/embeddings.txt when present
    source_style: str = "a"
    target_style: str = "b"
    min_frequency: int = 1
    max_vocab: int = 0  # 0: unlimited

    hidden_dim: int = 32
    embed_dim: int = 50
    beam_width: int = 8
    clip_norm: float = 5.0

    gen_lr: float = 1.0
    gen_batch: int = 32
    gen_epochs: int = 40
    union_pretrain: bool = False

    style_lr: float = 0.5
    style_batch: int = 32
    style_epochs: int = 4
    attention_dim: int = 32

    lm_lr: float = 1.0
    lm_batch: int = 32
    lm_epochs: int = 20

    alpha: float = 1.0
    beta: float = 0.5
    eta: float = 0.5
    gamma: float = 0.9
    rollouts: int = 8
    rl_lr: float = 0.05
    rl_disc_lr: float = 1e-4
    rl_batch: int = 4
    rl_epochs: int = 5
    rl_max_steps: int = 0  # 0: run every epoch to completion
    eval_every: int = 100
    baseline: bool = False
    stopwords: str = ""  # path to a one-token-per-line stopword list; empty disables filtering
    eval_pooling: str = "mean"

    synth_content: int = 50
    synth_sentences: int = 2000

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        positive = ("hidden_dim", "embed_dim", "beam_width", "gen_batch", "style_batch", "lm_batch", "rl_batch",
                    "eval_every", "rollouts", "attention_dim", "synth_content", "synth_sentences", "min_frequency")
        for name in positive:
            if getattr(self, name) < 1:
                raise UsageError(f"{name} must be at least 1")
        for name in ("gen_lr", "style_lr", "lm_lr", "rl_lr", "rl_disc_lr", "clip_norm"):
            if not getattr(self, name) > 0:
                raise UsageError(f"{name} must be positive")
        for name in ("gen_epochs", "style_epochs", "lm_epochs", "rl_epochs", "rl_max_steps", "max_vocab"):
            if getattr(self, name) < 0:
                raise UsageError(f"{name} must be non-negative")
        if self.source_style == self.target_style:
            raise UsageError("source_style and target_style must differ")
        if self.eval_pooling not in ("mean", "min-mean-max"):
            raise UsageError("eval_pooling must be 'mean' or 'min-mean-max'")
        self.weights()

    def weights(self) -> ScoreWeights:
        return ScoreWeights(self.alpha, self.beta, self.eta, self.gamma, self.rollouts)

    def rl_settings(self) -> RlSettings:
        return RlSettings(self.weights(), self.beam_width, self.rl_lr, self.rl_disc_lr, self.clip_norm, self.baseline)

    def schedule(self) -> Schedule:
        return Schedule(self.rl_batch, self.rl_epochs, self.rl_max_steps or None, self.eval_every)

    @property
    def out_dir(self) -> Path:
        return Path(self.out)

    @property
    def data_path(self) -> Path:
        return Path(self.data_dir) if self.data_dir else self.out_dir / "data"

    @property
    def embeddings_path(self) -> Path | None:
        if self.embeddings:
            return Path(self.embeddings)
        default = self.data_path / "embeddings.txt"
        return default if default.exists() else None

    def replace(self, **changes) -> ExperimentConfig:
        return dataclasses.replace(self, **changes)

    def dumps(self) -> str:
        return "".join(f"{f.name} = {_format(getattr(self, f.name))}\n" for f in fields(self))


_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


def _coerce(name: str, kind: str, raw: str):
    raw = raw.strip()
    try:
        if kind == "bool":
            low = raw.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError(raw)
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
    except ValueError:
        raise UsageError(f"config key {name!r}: cannot read {raw!r} as {kind}") from None
    return raw


def _types() -> dict[str, str]:
    return {f.name: f.type for f in fields(ExperimentConfig)}


def parse_config(text: str, origin: str = "<config>") -> dict[str, object]:
    """Parse ``key = value`` lines into typed overrides; unknown keys are rejected."""
    kinds = _types()
    values: dict[str, object] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise UsageError(f"{origin}:{lineno}: expected 'key = value', got {line.strip()!r}")
        key, raw = (part.strip() for part in body.split("=", 1))
        if key not in kinds:
            raise UsageError(f"{origin}:{lineno}: unknown config key {key!r}")
        values[key] = _coerce(key, kinds[key], raw)
    return values


def load_config(path: str | os.PathLike | None = None, overrides: dict[str, object] | None = None
                ) -> ExperimentConfig:
    """Defaults, then file values, then ``overrides`` (command-line flags)."""
    values: dict[str, object] = {}
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise UsageError(f"config file {p} does not exist")
        values.update(parse_config(p.read_text(encoding="utf-8"), str(p)))
    kinds = _types()
    for key, value in (overrides or {}).items():
        if key not in kinds:
            raise UsageError(f"unknown config key {key!r}")
        values[key] = _coerce(key, kinds[key], value) if isinstance(value, str) else value
    return ExperimentConfig(**values)
