"""Corpus ingestion, vocabulary construction, and the synthetic marker-swap task."""

from __future__ import annotations

import logging
import os
from collections import Counter
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

PAD, UNK, BOS, EOS = 0, 1, 2, 3
RESERVED = ("<pad>", "<unk>", "<s>", "</s>")
SPLITS = ("train", "dev", "test")
SOURCE, TARGET = "source", "target"


class IngestionError(ValueError):
    pass


class UsageError(ValueError):
    """Caller handed in arguments that violate an operation's preconditions."""


@dataclass(frozen=True)
class Sentence:
    tokens: tuple[int, ...]
    style: str = TARGET
    framed: bool = True

    def __post_init__(self):
        if len(self.tokens) < 1:
            raise UsageError("a sentence needs at least one token")
        if self.framed:
            t = self.tokens
            if len(t) < 2 or t[0] != BOS or t[-1] != EOS or BOS in t[1:] or EOS in t[:-1]:
                raise UsageError(f"framed sentence must start with BOS and end with EOS exactly once: {t}")

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def content(self) -> tuple[int, ...]:
        """Tokens without BOS/EOS framing."""
        if self.framed:
            return self.tokens[1:-1]
        return tuple(t for t in self.tokens if t not in (BOS, EOS))

    @property
    def predicted_count(self) -> int:
        """Tokens a left-to-right model predicts: everything after BOS, EOS included."""
        return len(self.tokens) - 1

    def with_style(self, style: str) -> Sentence:
        return Sentence(self.tokens, style, self.framed)

    @classmethod
    def frame(cls, content: Iterable[int], style: str = TARGET) -> Sentence:
        return cls((BOS, *content, EOS), style, True)


def tokenize(line: str) -> list[str]:
    return line.lower().split()


def detokenize(tokens: Sequence[str]) -> str:
    return " ".join(tokens)


class Vocabulary:
    """Surface-form <-> index bijection; indices 0..3 are PAD, UNK, BOS, EOS."""

    def __init__(self, tokens: Sequence[str], frequencies: Mapping[str, int] | None = None):
        if tuple(tokens[:4]) != RESERVED:
            raise UsageError("vocabulary must begin with the reserved tokens")
        self.itos = list(tokens)
        self.stoi = {t: i for i, t in enumerate(self.itos)}
        if len(self.stoi) != len(self.itos):
            raise UsageError("duplicate surface forms in vocabulary")
        self.frequencies = Counter(frequencies or {})

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, token: str) -> bool:
        return token in self.stoi

    def index(self, token: str) -> int:
        return self.stoi.get(token, UNK)

    def encode(self, tokens: Sequence[str], style: str = TARGET) -> Sentence:
        return Sentence.frame((self.index(t) for t in tokens), style)

    def decode(self, sentence: Sentence | Sequence[int]) -> list[str]:
        ids = sentence.content if isinstance(sentence, Sentence) else [
            i for i in sentence if i not in (BOS, EOS, PAD)
        ]
        return [self.itos[i] for i in ids]

    def save(self, path: str | os.PathLike) -> None:
        lines = [f"{t}\t{self.frequencies.get(t, 0)}" for t in self.itos]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | os.PathLike) -> Vocabulary:
        tokens, freqs = [], {}
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            tok, _, count = line.partition("\t")
            tokens.append(tok)
            freqs[tok] = int(count or 0)
        return cls(tokens, freqs)


@dataclass
class StyleCorpus:
    """Tokenized sentences per split for the source and target styles."""

    source: dict[str, list[list[str]]]
    target: dict[str, list[list[str]]]
    style_names: tuple[str, str] = ("source", "target")
    provenance: str = ""
    oracle: dict[tuple[str, ...], tuple[str, ...]] = field(default_factory=dict)

    def split(self, name: str, style: str) -> list[list[str]]:
        return (self.source if style == SOURCE else self.target).get(name, [])

    def encoded(self, vocab: Vocabulary, name: str, style: str) -> list[Sentence]:
        return [vocab.encode(toks, style) for toks in self.split(name, style)]

    def all_training_tokens(self) -> Iterable[list[str]]:
        yield from self.source.get("train", [])
        yield from self.target.get("train", [])


def read_sentences(path: str | os.PathLike) -> list[list[str]]:
    path = Path(path)
    raw = path.read_bytes()
    if not raw.strip():
        raise IngestionError(f"{path}: empty file")
    lines = raw.split(b"\n")
    if lines and lines[-1] == b"":
        lines.pop()
    out, blank = [], 0
    for lineno, line in enumerate(lines, start=1):
        try:
            text = line.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise IngestionError(f"{path}:{lineno}: undecodable bytes ({exc.reason})") from exc
        toks = tokenize(text)
        if toks:
            out.append(toks)
        else:
            blank += 1
    if blank:
        log.warning("%s: skipped %d blank line(s)", path, blank)
    return out


def load_corpus(source_paths: Mapping[str, str | os.PathLike], target_paths: Mapping[str, str | os.PathLike],
                style_names: tuple[str, str] = ("source", "target")) -> StyleCorpus:
    """Load one file per (style, split); missing splits are simply absent."""
    src = {split: read_sentences(p) for split, p in source_paths.items()}
    tgt = {split: read_sentences(p) for split, p in target_paths.items()}
    for style, data in ((style_names[0], src), (style_names[1], tgt)):
        seen: dict[tuple[str, ...], str] = {}
        overlap = 0
        for split, sents in data.items():
            for s in sents:
                key = tuple(s)
                if seen.setdefault(key, split) != split:
                    overlap += 1
        if overlap:
            log.warning("%s: %d sentence(s) appear in more than one split", style, overlap)
    prov = ", ".join(str(p) for p in [*source_paths.values(), *target_paths.values()])
    return StyleCorpus(src, tgt, style_names, prov)


def corpus_paths(data_dir: str | os.PathLike, style: str) -> dict[str, Path]:
    """``{split}.{style}.txt`` files that exist under ``data_dir``."""
    d = Path(data_dir)
    return {s: d / f"{s}.{style}.txt" for s in SPLITS if (d / f"{s}.{style}.txt").exists()}


def load_corpus_dir(data_dir: str | os.PathLike, source_style: str, target_style: str) -> StyleCorpus:
    src, tgt = corpus_paths(data_dir, source_style), corpus_paths(data_dir, target_style)
    if "train" not in src or "train" not in tgt:
        raise IngestionError(
            f"{data_dir}: expected train.{source_style}.txt and train.{target_style}.txt"
        )
    return load_corpus(src, tgt, (source_style, target_style))


def write_sentences(path: str | os.PathLike, sentences: Iterable[Sequence[str]]) -> None:
    Path(path).write_text("".join(detokenize(s) + "\n" for s in sentences), encoding="utf-8")


def build_vocab(corpus: StyleCorpus | Iterable[Sequence[str]], min_frequency: int = 1,
                max_size: int | None = None) -> Vocabulary:
    """Frequency-descending, then lexicographic.  Rare tokens fall to UNK."""
    sentences = corpus.all_training_tokens() if isinstance(corpus, StyleCorpus) else corpus
    counts = Counter(tok for s in sentences for tok in s if tok not in RESERVED)
    kept = sorted((t for t, c in counts.items() if c >= min_frequency), key=lambda t: (-counts[t], t))
    if max_size is not None:
        kept = kept[:max_size]
    return Vocabulary([*RESERVED, *kept], counts)


@dataclass(frozen=True)
class SyntheticSpec:
    content_vocab_size: int = 50
    markers_a: tuple[str, ...] = ("aa0", "aa1", "aa2")
    markers_b: tuple[str, ...] = ("bb0", "bb1", "bb2")
    sentence_count: int = 2000
    length_range: tuple[int, int] = (4, 9)
    markers_per_sentence: int = 1
    split_fractions: tuple[float, float, float] = (0.8, 0.1, 0.1)


def content_tokens(n: int) -> list[str]:
    return [f"w{i}" for i in range(n)]


def make_synthetic_task(rng: np.random.Generator, spec: SyntheticSpec = SyntheticSpec()) -> StyleCorpus:
    """Two styles sharing content words, distinguished only by marker tokens.

    Style A (source) sentences carry markers from ``markers_a``; style B
    (target) from ``markers_b``.  The ground-truth transfer swaps each A
    marker for the B marker at the same position in its set.  Sentences are
    unique within a style, so splits are disjoint.
    """
    a, b = list(spec.markers_a), list(spec.markers_b)
    content = content_tokens(spec.content_vocab_size)
    if set(a) & set(b) or (set(a) | set(b)) & set(content) or len(set(a)) != len(a) or len(set(b)) != len(b):
        raise UsageError("marker sets must be disjoint from each other and from the content vocabulary")
    if len(a) != len(b):
        raise UsageError("marker sets must pair one-to-one")
    lo, hi = spec.length_range
    if not 1 + spec.markers_per_sentence <= lo <= hi:
        raise UsageError("length range must leave room for at least one content token")

    def sample(markers: list[str], seen: set) -> list[str]:
        while True:
            n = int(rng.integers(lo, hi + 1))
            toks = [content[i] for i in rng.integers(0, len(content), size=n - spec.markers_per_sentence)]
            for m in rng.integers(0, len(markers), size=spec.markers_per_sentence):
                toks.insert(int(rng.integers(0, len(toks) + 1)), markers[m])
            key = tuple(toks)
            if key not in seen:
                seen.add(key)
                return toks

    def splits(markers: list[str]) -> dict[str, list[list[str]]]:
        seen: set = set()
        sents = [sample(markers, seen) for _ in range(spec.sentence_count)]
        n_train = int(round(spec.split_fractions[0] * len(sents)))
        n_dev = int(round(spec.split_fractions[1] * len(sents)))
        return {"train": sents[:n_train], "dev": sents[n_train:n_train + n_dev], "test": sents[n_train + n_dev:]}

    src, tgt = splits(a), splits(b)
    swap = dict(zip(a, b))
    oracle = {tuple(s): tuple(swap.get(t, t) for t in s) for split in src.values() for s in split}
    return StyleCorpus(src, tgt, ("a", "b"), "synthetic", oracle)


def write_oracle(path: str | os.PathLike, corpus: StyleCorpus, split: str = "test") -> None:
    lines = []
    for s in corpus.split(split, SOURCE):
        lines.append(f"{detokenize(s)}\t{detokenize(corpus.oracle[tuple(s)])}\n")
    Path(path).write_text("".join(lines), encoding="utf-8")


def synthetic_embeddings(rng: np.random.Generator, spec: SyntheticSpec, dim: int = 50, scale: float = 0.3,
                         marker_jitter: float = 0.1) -> dict[str, np.ndarray]:
    """Random word vectors where paired markers sit close together.

    Paired markers play the role of antonyms in distributional embeddings:
    near each other in space, opposite in style.
    """
    table = {t: rng.normal(0.0, scale, dim) for t in content_tokens(spec.content_vocab_size)}
    for ma, mb in zip(spec.markers_a, spec.markers_b):
        base = rng.normal(0.0, scale, dim)
        table[ma] = base + rng.normal(0.0, scale * marker_jitter, dim)
        table[mb] = base + rng.normal(0.0, scale * marker_jitter, dim)
    return table
