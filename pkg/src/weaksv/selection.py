"""Stage-1 to stage-2 bridge: self-labeling and the unknown-speaker pool.

A diarized segment is kept for stage 2 if and only if the stage-1 model
classifies it as its recording's target; kept segments carry the target
label. Quality is reported as precision/recall against the oracle, where
the oracle-positive set holds the segments whose oracle label equals
their recording's target.

The unknown pool collects not-selected segments whose recording target is
absent from the model's top-k predictions (it might otherwise still be
the target speaking), ranked by the unnormalized log-sum-exp of their
scaled logits as a confidence score, truncated to the top fraction.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus import Corpus
from .embedder import Checkpoint, forward_pooled
from .errors import DegenerateConfig


@dataclass
class SelectionStats:
    precision: float
    recall: float
    selected_count: int
    oracle_target_count: int
    selected_frames: int
    oracle_target_frames: int
    per_speaker_coverage: dict[int, int]
    empty_selection: bool = False


@dataclass
class SelectionResult:
    # (segment_id, label); the label is always the recording's target
    selected: list[tuple[int, int]]
    scores: dict[int, float] = field(default_factory=dict)  # winning cosine
    stats: SelectionStats | None = None


@dataclass
class UnknownPool:
    # ordered by descending confidence
    segment_ids: list[int]
    lse_scores: dict[int, float] = field(default_factory=dict)
    target_ranks: dict[int, int] = field(default_factory=dict)


def _train_segment_cosines(corpus: Corpus, checkpoint: Checkpoint):
    """Cosines against all prototypes for every diarized training segment."""
    pooled, row_of = corpus.mean_frames()
    sids = [sid for rec in corpus.train_recordings() for sid in rec.segment_ids()]
    sids.sort()
    emb, _ = forward_pooled(pooled[[row_of[s] for s in sids]], checkpoint.params)
    return sids, emb @ checkpoint.prototypes.T


def self_label(corpus: Corpus, checkpoint: Checkpoint) -> SelectionResult:
    """Keep each diarized segment iff its argmax class equals the target."""
    sids, cosines = _train_segment_cosines(corpus, checkpoint)
    preds = np.argmax(cosines, axis=1)
    selected: list[tuple[int, int]] = []
    scores: dict[int, float] = {}
    for i, sid in enumerate(sids):
        target = corpus.recording(corpus.segments[sid].recording_id).target
        if int(preds[i]) == target:
            selected.append((sid, target))
            scores[sid] = float(cosines[i, target])
    result = SelectionResult(selected, scores)
    result.stats = selection_stats(result, corpus)
    return result


def selection_stats(result: SelectionResult, corpus: Corpus) -> SelectionStats:
    """Precision/recall of the selection against the oracle labels."""
    oracle_target: set[int] = set()
    oracle_frames = 0
    for rec in corpus.train_recordings():
        for sid in rec.segment_ids():
            seg = corpus.segments[sid]
            if seg.oracle_speaker == rec.target:
                oracle_target.add(sid)
                oracle_frames += seg.n_frames
    correct = sum(1 for sid, _ in result.selected if sid in oracle_target)
    coverage: dict[int, int] = {}
    frames = 0
    for sid, label in result.selected:
        coverage[label] = coverage.get(label, 0) + 1
        frames += corpus.segments[sid].n_frames
    empty = not result.selected
    precision = 0.0 if empty else correct / len(result.selected)
    recall = 0.0 if not oracle_target else correct / len(oracle_target)
    return SelectionStats(precision, recall, len(result.selected), len(oracle_target),
                          frames, oracle_frames, coverage, empty)


def select_unknown_pool(
    corpus: Corpus,
    checkpoint: Checkpoint,
    top_k: int = 10,
    fraction: float = 0.05,
    scale: float = 30.0,
) -> UnknownPool:
    """Confident non-target segments for the extra-class training data.

    Candidates are the diarized segments self-labeling rejected; any whose
    recording target ranks inside the model's top_k classes is discarded,
    the rest are ranked by ln sum_j exp(L_j) over the scaled logits and
    the top ceil(fraction * survivors) kept. Rank ties break toward the
    lower class index.
    """
    if checkpoint.n_speakers <= top_k:
        raise DegenerateConfig(f"top_k={top_k} needs more than {top_k} known speakers")
    if not (0.0 < fraction <= 1.0):
        raise DegenerateConfig("fraction must lie in (0, 1]")
    sids, cosines = _train_segment_cosines(corpus, checkpoint)
    logits = scale * cosines
    preds = np.argmax(cosines, axis=1)

    survivors: list[tuple[float, int, int]] = []  # (-lse, sid, rank)
    for i, sid in enumerate(sids):
        target = corpus.recording(corpus.segments[sid].recording_id).target
        if int(preds[i]) == target:
            continue  # selected by self_label
        row = logits[i]
        t_logit = row[target]
        rank = int(np.sum(row > t_logit) + np.sum(row[:target] == t_logit))
        if rank < top_k:
            continue  # target among the top-k predictions
        m = row.max()
        lse = float(m + math.log(np.exp(row - m).sum()))
        survivors.append((lse, sid, rank))

    survivors.sort(key=lambda t: (-t[0], t[1]))
    keep = math.ceil(fraction * len(survivors)) if survivors else 0
    kept = survivors[:keep]
    return UnknownPool(
        [sid for _, sid, _ in kept],
        {sid: lse for lse, sid, _ in kept},
        {sid: rank for _, sid, rank in kept},
    )


# ---------------------------------------------------------------------------
# Artifact I/O
# ---------------------------------------------------------------------------


def _atomic_text(path: Path, text: str) -> None:
    tmp = path.with_name("." + path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    tmp.replace(path)


def save_selection(result: SelectionResult, directory: str | Path) -> None:
    directory = Path(directory)
    lines = [json.dumps({"segment_id": sid, "label": lab, "score": result.scores.get(sid)})
             for sid, lab in sorted(result.selected)]
    _atomic_text(directory / "selection.jsonl", "\n".join(lines) + ("\n" if lines else ""))
    st = result.stats
    payload = {
        "precision": st.precision,
        "recall": st.recall,
        "selected_count": st.selected_count,
        "oracle_target_count": st.oracle_target_count,
        "selected_frames": st.selected_frames,
        "oracle_target_frames": st.oracle_target_frames,
        "per_speaker_coverage": {str(k): v for k, v in sorted(st.per_speaker_coverage.items())},
        "empty_selection": st.empty_selection,
    }
    _atomic_text(directory / "selection_stats.json", json.dumps(payload, indent=2, sort_keys=True) + "\n")


def load_selection(directory: str | Path) -> list[tuple[int, int]]:
    path = Path(directory) / "selection.jsonl"
    out = []
    for line in path.read_text("utf-8").splitlines():
        if line.strip():
            rec = json.loads(line)
            out.append((rec["segment_id"], rec["label"]))
    return out


def save_unknown_pool(pool: UnknownPool, directory: str | Path) -> None:
    lines = [json.dumps({"segment_id": sid, "lse_score": pool.lse_scores[sid],
                         "target_rank": pool.target_ranks[sid]})
             for sid in pool.segment_ids]
    _atomic_text(Path(directory) / "unknown_pool.jsonl", "\n".join(lines) + ("\n" if lines else ""))


def load_unknown_pool(directory: str | Path) -> list[int]:
    path = Path(directory) / "unknown_pool.jsonl"
    out = []
    for line in path.read_text("utf-8").splitlines():
        if line.strip():
            out.append(json.loads(line)["segment_id"])
    return out
