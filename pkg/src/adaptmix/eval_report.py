"""Perplexity evaluation and CSV/plot reporting."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import Corpus


@dataclass(frozen=True)
class EvalResult:
    corpus_name: str
    nll_per_token: float
    ppl: float
    tokens: int


def evaluate_ppl(model, test: Corpus) -> EvalResult:
    """Corpus-level perplexity: exp of total NLL over all scored tokens (EOS counted)."""
    lp = np.asarray(model.log_prob_records(test.records), dtype=np.float64)
    tokens = test.n_tokens
    # math.fsum keeps the total independent of record order
    nll = -math.fsum(lp.tolist()) / tokens
    return EvalResult(test.name, nll, math.exp(nll), tokens)


def _fmt(x: float) -> str:
    return repr(float(x))


def write_results(rows: Sequence[tuple[str, str, EvalResult]], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["strategy", "corpora", "test_set", "ppl"])
        for strategy, corpora, ev in rows:
            w.writerow([strategy, corpora, ev.corpus_name, _fmt(ev.ppl)])


def emit_report(reports: Sequence, evals: Sequence[Sequence[EvalResult]], out_dir,
                run_names: Sequence[str] | None = None, plot: bool = False) -> list[Path]:
    """Write results.csv plus one trajectory_<run>.csv per training report.

    ``evals[i]`` holds the test-set results of ``reports[i]``. With
    ``plot=True`` (and matplotlib importable) also renders validation loss
    and sampling weights against epoch.
    """
    if not reports:
        raise ValueError("need at least one report")
    if len(evals) != len(reports):
        raise ValueError("one list of eval results per report is required")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    names = list(run_names) if run_names else [r.strategy for r in reports]
    if len(set(names)) != len(names):
        names = [f"{n}_{i}" for i, n in enumerate(names)]
    written = []
    rows = []
    for name, rep, evs in zip(names, reports, evals):
        path = out / f"trajectory_{name}.csv"
        rep.to_csv(path)
        written.append(path)
        rows.extend((rep.strategy, "+".join(rep.corpus_names), ev) for ev in evs)
    res = out / "results.csv"
    write_results(rows, res)
    written.insert(0, res)
    if plot:
        written.extend(plot_trajectories(reports, names, out))
    return written


def plot_trajectories(reports: Sequence, names: Sequence[str], out_dir) -> list[Path]:
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        return []
    out = Path(out_dir)
    fig, (ax_loss, ax_w) = plt.subplots(1, 2, figsize=(10, 4))
    for name, rep in zip(names, reports):
        epochs = [r.epoch for r in rep.epochs]
        ax_loss.plot(epochs, [r.validation_nll for r in rep.epochs], marker="o", label=name)
        w = rep.weights_matrix()
        if w.size:
            ax_w.plot(epochs, w[:, 0], marker="o", label=f"{name}: {rep.corpus_names[0]}")
    ax_loss.set_xlabel("epoch")
    ax_loss.set_ylabel("validation NLL / token")
    ax_w.set_xlabel("epoch")
    ax_w.set_ylabel("sampling weight")
    ax_w.set_ylim(0, 1)
    ax_loss.legend()
    ax_w.legend(fontsize="small")
    fig.tight_layout()
    path = out / "trajectories.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return [path]


def read_trajectory(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
