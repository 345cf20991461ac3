"""Simulated diarization: controllable purity, over-clustering and coverage.

Replaces a real diarizer with a parameterized rewrite of each recording's
clusters, driven by the oracle labels. Per present speaker, segments are
split into ~split_factor clusters (over-clustering); a (1 - purity)
fraction of segments is then swapped pairwise between clusters so purity
and coverage degrade together; optionally noise segments are removed and
the cluster count capped by merging the smallest clusters.

Two presets mirror a weak untrained diarizer and a strong pretrained one:
  baseline       purity 0.85, split_factor 2.0, keeps noise, no cap
  pyannote-like  purity 0.97, split_factor 1.2, drops noise, max 4 clusters
"""

from __future__ import annotations

from dataclasses import dataclass, replace as dc_replace

from .corpus import Corpus, NOISE, Recording, Segment
from .errors import DegenerateConfig, EmptyRecording
from .rng import Rng


@dataclass(frozen=True)
class DiarConfig:
    purity: float = 0.85
    split_factor: float = 2.0
    max_clusters: int = 0  # 0 = unlimited
    drop_noise: bool = False
    seed: int = 0

    def validate(self) -> None:
        if not (0.0 < self.purity <= 1.0):
            raise DegenerateConfig("purity must lie in (0, 1]")
        if self.split_factor < 1.0:
            raise DegenerateConfig("split_factor must be >= 1")
        if self.max_clusters < 0:
            raise DegenerateConfig("max_clusters must be >= 0")


PRESETS: dict[str, DiarConfig] = {
    "baseline": DiarConfig(purity=0.85, split_factor=2.0, max_clusters=0, drop_noise=False),
    "pyannote-like": DiarConfig(purity=0.97, split_factor=1.2, max_clusters=4, drop_noise=True),
}


def simulate_diarization(
    segment_ids: list[int],
    oracle_of: dict[int, int],
    cfg: DiarConfig,
    rng: Rng,
) -> list[list[int]]:
    """Cluster one recording's segments.

    oracle_of maps segment_id -> oracle label; all speakers outside the
    known set share one UNKNOWN label and are clustered as one pseudo
    speaker, as are NOISE segments when kept.
    """
    cfg.validate()
    if not segment_ids:
        raise EmptyRecording("recording has no segments")
    kept = [s for s in segment_ids if not (cfg.drop_noise and oracle_of[s] == NOISE)]
    if not kept:
        raise EmptyRecording("all segments dropped as noise")

    by_label: dict[int, list[int]] = {}
    for sid in kept:
        by_label.setdefault(oracle_of[sid], []).append(sid)

    clusters: list[list[int]] = []
    for label in sorted(by_label):
        members = list(by_label[label])
        base = int(cfg.split_factor)
        frac = cfg.split_factor - base
        k = base + (1 if rng.float() < frac else 0)
        k = max(1, min(k, len(members)))
        rng.shuffle(members)
        # first k segments seed the clusters so none comes out empty
        parts: list[list[int]] = [[members[i]] for i in range(k)]
        for sid in members[k:]:
            parts[rng.randint(k)].append(sid)
        clusters.extend(parts)

    _inject_impurity(clusters, oracle_of, cfg.purity, rng)

    if cfg.max_clusters > 0:
        while len(clusters) > cfg.max_clusters:
            order = sorted(range(len(clusters)), key=lambda i: (len(clusters[i]), i))
            a, b = sorted(order[:2])
            clusters[a] = clusters[a] + clusters[b]
            del clusters[b]
    return clusters


def _inject_impurity(
    clusters: list[list[int]], oracle_of: dict[int, int], purity: float, rng: Rng
) -> None:
    """Swap ~(1 - purity) of the segments pairwise across clusters.

    Partners are drawn from different oracle labels so every executed
    swap actually pollutes both clusters; a leftover marked segment with
    no cross-label partner stays put.
    """
    if purity >= 1.0 or len(clusters) < 2:
        return
    marked_by_label: dict[int, list[tuple[int, int]]] = {}
    for ci, cluster in enumerate(clusters):
        for pos in range(len(cluster)):
            if rng.float() < 1.0 - purity:
                lab = oracle_of[cluster[pos]]
                marked_by_label.setdefault(lab, []).append((ci, pos))
    for slots in marked_by_label.values():
        rng.shuffle(slots)
    while True:
        nonempty = sorted((lab for lab, v in marked_by_label.items() if v),
                          key=lambda lab: (-len(marked_by_label[lab]), lab))
        if len(nonempty) < 2:
            break
        (ca, pa) = marked_by_label[nonempty[0]].pop()
        (cb, pb) = marked_by_label[nonempty[1]].pop()
        clusters[ca][pa], clusters[cb][pb] = clusters[cb][pb], clusters[ca][pa]


def cluster_purity(clusters: list[list[int]], oracle_of: dict[int, int]) -> list[float]:
    """Per-cluster fraction of segments carrying the cluster's modal label."""
    out = []
    for cluster in clusters:
        if not cluster:
            raise EmptyRecording("cannot score an empty cluster")
        counts: dict[int, int] = {}
        for sid in cluster:
            lab = oracle_of[sid]
            counts[lab] = counts.get(lab, 0) + 1
        out.append(max(counts.values()) / len(cluster))
    return out


def apply_diarization(corpus: Corpus, cfg: DiarConfig) -> Corpus:
    """Rewrite every recording's clusters; features and oracle untouched.

    Segments dropped in drop_noise mode stay in the segment store with
    recording_id = cluster_id = -1, matching what a manifest round trip
    would reconstruct.
    """
    oracle_of = {sid: seg.oracle_speaker for sid, seg in corpus.segments.items()}
    new_recordings: list[Recording] = []
    new_segments: dict[int, Segment] = dict(corpus.segments)
    clustered: set[int] = set()
    for rec in corpus.recordings:
        rng = Rng.from_seed(cfg.seed, "diar", rec.recording_id)
        clusters = simulate_diarization(rec.segment_ids(), oracle_of, cfg, rng)
        new_recordings.append(Recording(rec.recording_id, rec.target, clusters, rec.heldout))
        for cid, cluster in enumerate(clusters):
            for sid in cluster:
                new_segments[sid] = dc_replace(corpus.segments[sid], recording_id=rec.recording_id, cluster_id=cid)
                clustered.add(sid)
    for sid, seg in corpus.segments.items():
        if sid not in clustered:
            new_segments[sid] = dc_replace(seg, recording_id=-1, cluster_id=-1)
    return Corpus(corpus.n_speakers, new_recordings, new_segments, corpus.unknown_pool_present)
