"""Word-vector text files: one token per line, surface form then the vector components."""

from __future__ import annotations

import os
from collections.abc import Mapping
from pathlib import Path

import numpy as np

from rlst.corpus import UNK, IngestionError, Vocabulary
from rlst.nn_core import uniform_init

DEFAULT_DIM = 50


def load_embeddings(path: str | os.PathLike, dim: int | None = DEFAULT_DIM) -> dict[str, np.ndarray]:
    table: dict[str, np.ndarray] = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        parts = line.split()
        if not parts:
            continue
        token, nums = parts[0], parts[1:]
        if dim is None:
            dim = len(nums)
        if len(nums) != dim:
            raise IngestionError(f"{path}:{lineno}: expected {dim} components, got {len(nums)}")
        try:
            table[token] = np.array([float(x) for x in nums])
        except ValueError as exc:
            raise IngestionError(f"{path}:{lineno}: {exc}") from exc
    if not table:
        raise IngestionError(f"{path}: no vectors")
    return table


def save_embeddings(path: str | os.PathLike, table: Mapping[str, np.ndarray]) -> None:
    lines = [token + " " + " ".join(f"{x:.8f}" for x in vec) for token, vec in table.items()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def evaluation_matrix(vocab: Vocabulary, table: Mapping[str, np.ndarray], dim: int = DEFAULT_DIM) -> np.ndarray:
    """Frozen vectors for scoring.  Reserved rows are zero; words without a vector share the UNK row."""
    m = np.zeros((len(vocab), dim))
    known = [table[t] for t in vocab.itos if t in table]
    if known:
        m[UNK] = np.mean(known, axis=0)
    for i, tok in enumerate(vocab.itos[4:], start=4):
        m[i] = table[tok] if tok in table else m[UNK]
    return m


def init_matrix(vocab: Vocabulary, table: Mapping[str, np.ndarray] | None, dim: int,
                rng: np.random.Generator) -> np.ndarray:
    """Trainable embedding initial values: pre-trained rows where available, small uniform noise elsewhere."""
    m = uniform_init(rng, (len(vocab), dim))
    if table:
        for i, tok in enumerate(vocab.itos):
            vec = table.get(tok)
            if vec is not None and len(vec) == dim:
                m[i] = vec
    return m
