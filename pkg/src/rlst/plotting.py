"""Training-report rendering: per-metric (step, value) files, a summary table, and line plots."""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from rlst.corpus import IngestionError  # noqa: E402

TRAIN_METRICS = ("J", "L_G", "L_D", "style", "semantic", "fluency")
EVAL_METRICS = ("content", "style", "overall", "perplexity")


@dataclass
class Series:
    name: str
    steps: np.ndarray
    values: np.ndarray

    def tsv(self) -> str:
        rows = [f"step\t{self.name}"]
        rows += [f"{int(s)}\t{v:.10g}" for s, v in zip(self.steps, self.values)]
        return "\n".join(rows) + "\n"


def read_log(path: str | os.PathLike, metrics: tuple[str, ...], prefix: str = "") -> list[Series]:
    """Parse a tab-separated log with a header row; non-numeric cells (``unevaluated``) are skipped."""
    p = Path(path)
    if not p.exists():
        raise IngestionError(f"log file {p} does not exist")
    lines = p.read_text(encoding="utf-8").splitlines()
    if not lines:
        raise IngestionError(f"{p}: empty log")
    header = lines[0].split("\t")
    missing = [m for m in ("step", *metrics) if m not in header]
    if missing:
        raise IngestionError(f"{p}: missing columns {missing}")
    cols: dict[str, tuple[list[int], list[float]]] = {m: ([], []) for m in metrics}
    for lineno, line in enumerate(lines[1:], 2):
        cells = line.split("\t")
        if len(cells) != len(header):
            raise IngestionError(f"{p}:{lineno}: expected {len(header)} fields, got {len(cells)}")
        row = dict(zip(header, cells))
        step = int(row["step"])
        for m in metrics:
            try:
                value = float(row[m])
            except ValueError:
                continue
            cols[m][0].append(step)
            cols[m][1].append(value)
    return [Series(prefix + m, np.array(cols[m][0], dtype=np.int64), np.array(cols[m][1])) for m in metrics]


def moving_average(values: np.ndarray, window: int) -> np.ndarray:
    """Trailing mean over up to ``window`` points (shorter at the start)."""
    if window < 1:
        raise ValueError("window must be positive")
    c = np.concatenate([[0.0], np.cumsum(values)])
    idx = np.arange(1, len(values) + 1)
    lo = np.maximum(0, idx - window)
    return (c[idx] - c[lo]) / (idx - lo)


def summary_rows(series: list[Series]) -> list[tuple[str, int, str, str, str]]:
    """(metric, points, first, last, tail mean over the final tenth)."""
    rows = []
    for s in series:
        if len(s.values) == 0:
            rows.append((s.name, 0, "nan", "nan", "nan"))
            continue
        tail = s.values[-max(1, len(s.values) // 10):]
        rows.append((s.name, len(s.values), f"{s.values[0]:.6g}", f"{s.values[-1]:.6g}", f"{tail.mean():.6g}"))
    return rows


def _plot_panels(series: list[Series], path: Path, title: str, smooth: int) -> None:
    n = len(series)
    cols = min(3, n)
    rows = -(-n // cols)
    fig, axes = plt.subplots(rows, cols, figsize=(4.2 * cols, 3.0 * rows), squeeze=False)
    for ax, s in zip(axes.flat, series):
        if len(s.values):
            if smooth > 1 and len(s.values) > smooth:
                ax.plot(s.steps, s.values, color="0.75", linewidth=0.6)
                ax.plot(s.steps, moving_average(s.values, smooth), color="C0", linewidth=1.4)
            else:
                ax.plot(s.steps, s.values, color="C0", marker="o", markersize=3, linewidth=1.2)
        ax.set_title(s.name.split("/")[-1], fontsize=10)
        ax.set_xlabel("update")
        ax.grid(alpha=0.3)
    for ax in list(axes.flat)[n:]:
        ax.axis("off")
    fig.suptitle(title, fontsize=11)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def write_report(train_log: str | os.PathLike, eval_log: str | os.PathLike, out_dir: str | os.PathLike,
                 smooth: int = 50) -> list[tuple[str, int, str, str, str]]:
    """Write ``<metric>.tsv`` files, ``summary.tsv``, ``training.png`` and ``evaluation.png``; return the summary."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    train = read_log(train_log, TRAIN_METRICS, "train/")
    evals = read_log(eval_log, EVAL_METRICS, "dev/")
    for s in train + evals:
        (out / (s.name.replace("/", "_") + ".tsv")).write_text(s.tsv(), encoding="utf-8")
    rows = summary_rows(train + evals)
    lines = ["metric\tpoints\tfirst\tlast\ttail_mean"] + ["\t".join(map(str, r)) for r in rows]
    (out / "summary.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    _plot_panels(train, out / "training.png", "RL updates", smooth)
    _plot_panels(evals, out / "evaluation.png", "dev-set evaluation", 1)
    return rows
