"""Verification scoring: cosine trial scores, EER, minDCF, run reports.

EER is located by linear interpolation between the two adjacent ROC
operating points where the miss and false-acceptance curves cross; minDCF
sweeps every distinct score plus the two trivial endpoints and normalizes
by the cost of the better blind decision, min(p_target, 1 - p_target).
Both are invariant under strictly increasing score transforms.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import Corpus, Trial
from .embedder import Checkpoint, forward_pooled
from .errors import MissingArtifacts, SingleClass


@dataclass
class ScoreSet:
    scores: np.ndarray  # (n,)
    labels: np.ndarray  # (n,) bool, True = target trial

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=bool)
        if self.scores.shape != self.labels.shape:
            raise ValueError("scores and labels must be parallel")


def score_trials(checkpoint: Checkpoint, corpus: Corpus, trials: list[Trial]) -> ScoreSet:
    """Cosine between the embeddings of each trial's two segments."""
    pooled, row_of = corpus.mean_frames()
    needed = sorted({t.enroll_id for t in trials} | {t.test_id for t in trials})
    emb, _ = forward_pooled(pooled[[row_of[s] for s in needed]], checkpoint.params)
    emb_of = {sid: emb[i] for i, sid in enumerate(needed)}
    scores = np.array([float(emb_of[t.enroll_id] @ emb_of[t.test_id]) for t in trials])
    labels = np.array([t.is_target for t in trials])
    return ScoreSet(scores, labels)


def _rates(scores: np.ndarray, labels: np.ndarray):
    """Operating points over thresholds at -inf and every distinct score.

    Decision rule: accept when score >= threshold. Returns parallel
    arrays of P_miss (targets below threshold) and P_fa (non-targets at
    or above), ending at threshold +inf.
    """
    tar = np.sort(scores[labels])
    non = np.sort(scores[~labels])
    if tar.size == 0 or non.size == 0:
        raise SingleClass("need at least one target and one non-target trial")
    thresholds = np.unique(scores)
    miss = np.searchsorted(tar, thresholds, side="left") / tar.size
    fa = 1.0 - np.searchsorted(non, thresholds, side="left") / non.size
    miss = np.concatenate([[0.0], miss, [1.0]])
    fa = np.concatenate([[1.0], fa, [0.0]])
    return miss, fa


def compute_eer(score_set: ScoreSet) -> float:
    """Equal error rate in [0, 1]."""
    miss, fa = _rates(score_set.scores, score_set.labels)
    diff = miss - fa
    idx = int(np.argmax(diff >= 0.0))  # first crossing; diff starts at -1
    if diff[idx] == 0.0:
        return float(miss[idx])
    m1, f1 = miss[idx - 1], fa[idx - 1]
    m2, f2 = miss[idx], fa[idx]
    # intersection of the ROC segment with the miss == fa diagonal
    t = (f1 - m1) / ((m2 - m1) - (f2 - f1))
    return float(m1 + t * (m2 - m1))


def compute_mindcf(
    score_set: ScoreSet, p_target: float = 0.05, c_miss: float = 1.0, c_fa: float = 1.0
) -> float:
    """Minimum normalized detection cost over all thresholds."""
    miss, fa = _rates(score_set.scores, score_set.labels)
    costs = c_miss * p_target * miss + c_fa * (1.0 - p_target) * fa
    best = float(np.min(costs))
    return best / min(c_miss * p_target, c_fa * (1.0 - p_target))


def save_scores(score_set: ScoreSet, trials: list[Trial], path: str | Path) -> None:
    lines = [
        f"{t.enroll_id}\t{t.test_id}\t{float(s)!r}\t{1 if t.is_target else 0}"
        for t, s in zip(trials, score_set.scores)
    ]
    p = Path(path)
    tmp = p.with_name("." + p.name + ".tmp")
    tmp.write_text("\n".join(lines) + "\n", encoding="utf-8")
    tmp.replace(p)


def load_scores(path: str | Path) -> ScoreSet:
    scores, labels = [], []
    for line in Path(path).read_text("utf-8").splitlines():
        if line.strip():
            _, _, s, lab = line.split("\t")
            scores.append(float(s))
            labels.append(lab == "1")
    return ScoreSet(np.array(scores), np.array(labels))


# ---------------------------------------------------------------------------
# Run reports
# ---------------------------------------------------------------------------


def _schedule_trace(metrics_csv: Path) -> dict:
    rows = metrics_csv.read_text("utf-8").splitlines()[1:]
    if not rows:
        return {}
    first = rows[0].split(",")
    last = rows[-1].split(",")
    losses = [float(r.split(",")[5]) for r in rows]
    return {
        "steps": len(rows),
        "lr_first": float(first[2]), "lr_last": float(last[2]),
        "margin_first": float(first[3]), "margin_last": float(last[3]),
        "tau_first": float(first[4]), "tau_last": float(last[4]),
        "loss_first": losses[0], "loss_last": losses[-1],
        "loss_mean_first10": sum(losses[:10]) / min(10, len(losses)),
        "loss_mean_last10": sum(losses[-10:]) / min(10, len(losses)),
    }


def collect_run(run_dir: str | Path) -> dict:
    """Everything reportable inside one run directory."""
    run_dir = Path(run_dir)
    out: dict = {}
    evals = {}
    for path in sorted(run_dir.glob("eval_*.json")):
        evals[path.stem.removeprefix("eval_")] = json.loads(path.read_text("utf-8"))
    if evals:
        out["evals"] = evals
    stats = run_dir / "selection_stats.json"
    if stats.exists():
        out["selection"] = json.loads(stats.read_text("utf-8"))
    schedules = {}
    for path in sorted(run_dir.glob("metrics_*.csv")):
        schedules[path.stem.removeprefix("metrics_")] = _schedule_trace(path)
    if schedules:
        out["schedules"] = schedules
    return out


def make_report(run_dir: str | Path) -> dict:
    """Consolidated report.json for a run directory.

    Includes per-checkpoint EER/minDCF, selection stats, schedule traces,
    and, when ablation subruns are present, the six-row stage-1 grid plus
    the stage-2 comparison rows.
    """
    run_dir = Path(run_dir)
    report = collect_run(run_dir)
    ablation_dir = run_dir / "ablation"
    if ablation_dir.is_dir():
        grid = {}
        for sub in sorted(ablation_dir.iterdir()):
            if sub.is_dir():
                grid[sub.name] = collect_run(sub)
        if grid:
            report["ablation"] = grid
    if not report:
        raise MissingArtifacts(f"nothing to report in {run_dir}")
    path = run_dir / "report.json"
    tmp = path.with_name("." + path.name + ".tmp")
    tmp.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    tmp.replace(path)
    return report
