"""Weakly-labeled corpus data model, on-disk manifest, validation and splits.

A corpus is a set of recordings, each carrying a single recording-level
target speaker and a partition of its segments into diarized clusters.
Per-segment oracle speaker identities are retained alongside for
evaluation only; training code never consults them.

On-disk layout (one directory):
  corpus.idx   line-oriented text: R/C/S records (see save_manifest)
  corpus.feat  16-byte header + float32 little-endian frame matrices
  oracle.tsv   segment_id <tab> oracle_label (evaluation sidecar)
  trials.tsv   enroll_id <tab> test_id <tab> {0,1}
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import InsufficientSegments
from .rng import Rng

# Oracle label sentinels. Known speakers are dense ids 0..n_speakers-1;
# UNKNOWN marks speech of anyone outside that set, NOISE non-speech.
UNKNOWN = -1
NOISE = -2

FEAT_MAGIC = b"WMLF"
FEAT_VERSION = 1

IDX_NAME = "corpus.idx"
FEAT_NAME = "corpus.feat"
ORACLE_NAME = "oracle.tsv"
TRIALS_NAME = "trials.tsv"


@dataclass(eq=False)
class Segment:
    segment_id: int
    recording_id: int
    cluster_id: int
    features: np.ndarray  # (n_frames, feat_dim) float32
    oracle_speaker: int

    @property
    def n_frames(self) -> int:
        return self.features.shape[0]


@dataclass
class Recording:
    recording_id: int
    target: int
    clusters: list[list[int]]
    heldout: bool = False

    def segment_ids(self) -> list[int]:
        return [sid for cluster in self.clusters for sid in cluster]


@dataclass
class Corpus:
    n_speakers: int
    recordings: list[Recording]
    segments: dict[int, Segment]
    unknown_pool_present: bool = False

    @property
    def feat_dim(self) -> int:
        first = next(iter(self.segments.values()))
        return first.features.shape[1]

    def train_recordings(self) -> list[Recording]:
        return [r for r in self.recordings if not r.heldout]

    def heldout_recordings(self) -> list[Recording]:
        return [r for r in self.recordings if r.heldout]

    def recording(self, recording_id: int) -> Recording:
        return self._by_id()[recording_id]

    def _by_id(self) -> dict[int, Recording]:
        return {r.recording_id: r for r in self.recordings}

    def mean_frames(self) -> tuple[np.ndarray, dict[int, int]]:
        """Per-segment frame means as a float64 matrix plus id -> row map.

        Features are fixed for the lifetime of a corpus, so pooled means
        are computed once and reused by training and scoring.
        """
        ids = sorted(self.segments)
        mat = np.empty((len(ids), self.feat_dim), dtype=np.float64)
        for row, sid in enumerate(ids):
            mat[row] = self.segments[sid].features.astype(np.float64).mean(axis=0)
        return mat, {sid: row for row, sid in enumerate(ids)}


@dataclass(frozen=True)
class Trial:
    enroll_id: int
    test_id: int
    is_target: bool


@dataclass
class ValidationIssue:
    kind: str
    message: str


@dataclass
class ValidationReport:
    issues: list[ValidationIssue] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.issues

    def add(self, kind: str, message: str) -> None:
        self.issues.append(ValidationIssue(kind, message))


def validate_corpus(corpus: Corpus) -> ValidationReport:
    """Check every structural invariant; an empty report means all hold."""
    report = ValidationReport()
    feat_dim = None
    for sid, seg in corpus.segments.items():
        if seg.segment_id != sid:
            report.add("InconsistentStore", f"store key {sid} holds segment {seg.segment_id}")
        if seg.n_frames < 1:
            report.add("EmptySegment", f"segment {sid} has no frames")
        if feat_dim is None:
            feat_dim = seg.features.shape[1]
        elif seg.features.shape[1] != feat_dim:
            report.add("FeatDimMismatch", f"segment {sid} has dim {seg.features.shape[1]} != {feat_dim}")
        if not np.all(np.isfinite(seg.features)):
            report.add("NonFiniteFeatures", f"segment {sid} contains NaN or inf")

    targeted: set[int] = set()
    seen_segments: set[int] = set()
    for rec in corpus.recordings:
        if not (0 <= rec.target < corpus.n_speakers):
            report.add("BadTarget", f"recording {rec.recording_id} target {rec.target} outside 0..{corpus.n_speakers - 1}")
        else:
            targeted.add(rec.target)
        if not rec.clusters:
            report.add("EmptyRecording", f"recording {rec.recording_id} has no clusters")
        has_target_speech = False
        for cid, cluster in enumerate(rec.clusters):
            if not cluster:
                report.add("EmptyCluster", f"recording {rec.recording_id} cluster {cid} is empty")
            for sid in cluster:
                seg = corpus.segments.get(sid)
                if seg is None:
                    report.add("UnresolvedReference", f"recording {rec.recording_id} references missing segment {sid}")
                    continue
                if sid in seen_segments:
                    report.add("DuplicateSegment", f"segment {sid} appears in more than one cluster")
                seen_segments.add(sid)
                if seg.oracle_speaker == rec.target:
                    has_target_speech = True
        if not has_target_speech:
            report.add("MissingTargetSpeech", f"recording {rec.recording_id} has no segment of its target {rec.target}")

    for spk in range(corpus.n_speakers):
        if spk not in targeted:
            report.add("UntargetedSpeaker", f"speaker {spk} is the target of no recording")
    return report


def assign_heldout_split(corpus: Corpus, heldout_fraction: float, seed: int) -> Corpus:
    """Mark a per-speaker fraction of recordings as held out for trials.

    Deterministic given the seed; at least one recording per speaker is
    held out when the fraction is positive, and at least one stays in
    training.
    """
    by_speaker: dict[int, list[Recording]] = {}
    for rec in corpus.recordings:
        by_speaker.setdefault(rec.target, []).append(rec)
    heldout_ids: set[int] = set()
    for spk in sorted(by_speaker):
        recs = sorted(by_speaker[spk], key=lambda r: r.recording_id)
        if heldout_fraction <= 0 or len(recs) < 2:
            continue
        k = max(1, round(heldout_fraction * len(recs)))
        k = min(k, len(recs) - 1)
        order = list(range(len(recs)))
        Rng.from_seed(seed, "heldout", spk).shuffle(order)
        heldout_ids.update(recs[i].recording_id for i in order[:k])
    recordings = [replace(rec, heldout=rec.recording_id in heldout_ids) for rec in corpus.recordings]
    return Corpus(corpus.n_speakers, recordings, corpus.segments, corpus.unknown_pool_present)


def split_trials(corpus: Corpus, n_target: int, n_nontarget: int, seed: int) -> list[Trial]:
    """Build verification trials from held-out recordings.

    Enroll and test sides always come from different recordings, and only
    segments whose oracle label is a known speaker are used. Raises
    InsufficientSegments when the requested counts cannot be met.
    """
    rng = Rng.from_seed(seed, "trials")
    # speaker -> recording -> held-out segments with that oracle label
    pools: dict[int, dict[int, list[int]]] = {}
    for rec in corpus.heldout_recordings():
        for sid in rec.segment_ids():
            spk = corpus.segments[sid].oracle_speaker
            if spk >= 0:
                pools.setdefault(spk, {}).setdefault(rec.recording_id, []).append(sid)

    target_ready = sorted(s for s, recs in pools.items() if len(recs) >= 2)
    speakers = sorted(pools)
    if n_target > 0 and not target_ready:
        raise InsufficientSegments("no speaker has held-out segments in two recordings")
    if n_nontarget > 0 and len(speakers) < 2:
        raise InsufficientSegments("non-target trials need held-out segments from two speakers")

    def draw(spk: int, exclude_rec: int | None = None) -> tuple[int, int]:
        recs = [rid for rid in sorted(pools[spk]) if rid != exclude_rec]
        rid = rng.choice(recs)
        return rid, rng.choice(pools[spk][rid])

    trials: list[Trial] = []
    seen: set[tuple[int, int]] = set()
    attempts = 0
    limit = 200 * (n_target + n_nontarget) + 1000
    while len(trials) < n_target:
        if attempts > limit:
            raise InsufficientSegments("cannot realize the requested target-trial count")
        attempts += 1
        spk = rng.choice(target_ready)
        rid_a, enroll = draw(spk)
        _, test = draw(spk, exclude_rec=rid_a)
        key = (min(enroll, test), max(enroll, test))
        if key in seen:
            continue
        seen.add(key)
        trials.append(Trial(enroll, test, True))
    n_made = 0
    while n_made < n_nontarget:
        if attempts > limit:
            raise InsufficientSegments("cannot realize the requested non-target-trial count")
        attempts += 1
        spk_a = rng.choice(speakers)
        spk_b = rng.choice(speakers)
        if spk_a == spk_b:
            continue
        rid_a, enroll = draw(spk_a)
        rid_b, test = draw(spk_b)
        if rid_a == rid_b:
            continue
        key = (min(enroll, test), max(enroll, test))
        if key in seen:
            continue
        seen.add(key)
        trials.append(Trial(enroll, test, False))
        n_made += 1
    return trials


# ---------------------------------------------------------------------------
# Manifest I/O
# ---------------------------------------------------------------------------


def _atomic_write(path: Path, data: bytes) -> None:
    tmp = path.with_name("." + path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def save_manifest(corpus: Corpus, directory: str | Path) -> None:
    """Write corpus.idx and corpus.feat.

    corpus.idx carries one record per line:
      R <recording_id> <target> <n_clusters> <train|heldout>
      C <cluster_id> <segment_id> ...
      S <segment_id> <oracle> <n_frames> <offset>
    where <offset> is the starting frame row inside corpus.feat. Features
    are stored float32 little-endian, row-major, in segment-id order,
    after a 16-byte header (magic WMLF, version u32, feat_dim u32,
    reserved u32).
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lines: list[str] = []
    for rec in sorted(corpus.recordings, key=lambda r: r.recording_id):
        split = "heldout" if rec.heldout else "train"
        lines.append(f"R {rec.recording_id} {rec.target} {len(rec.clusters)} {split}")
        for cid, cluster in enumerate(rec.clusters):
            lines.append("C " + str(cid) + " " + " ".join(str(s) for s in cluster))

    feat_dim = corpus.feat_dim
    blob = bytearray()
    blob += FEAT_MAGIC
    blob += struct.pack("<III", FEAT_VERSION, feat_dim, 0)
    offset = 0
    for sid in sorted(corpus.segments):
        seg = corpus.segments[sid]
        lines.append(f"S {sid} {seg.oracle_speaker} {seg.n_frames} {offset}")
        feats = np.ascontiguousarray(seg.features, dtype="<f4")
        blob += feats.tobytes()
        offset += seg.n_frames

    _atomic_write(directory / IDX_NAME, ("\n".join(lines) + "\n").encode("utf-8"))
    _atomic_write(directory / FEAT_NAME, bytes(blob))


def load_manifest(directory: str | Path) -> Corpus:
    """Read a corpus back; exact inverse of save_manifest.

    Segments not referenced by any cluster (e.g. noise dropped by a
    diarization rewrite) come back with recording_id = cluster_id = -1.
    """
    directory = Path(directory)
    raw = (directory / FEAT_NAME).read_bytes()
    if raw[:4] != FEAT_MAGIC:
        raise ValueError(f"bad feature-file magic in {directory / FEAT_NAME}")
    version, feat_dim, _ = struct.unpack("<III", raw[4:16])
    if version != FEAT_VERSION:
        raise ValueError(f"unsupported feature-file version {version}")
    flat = np.frombuffer(raw, dtype="<f4", offset=16).reshape(-1, feat_dim)

    recordings: list[Recording] = []
    seg_meta: list[tuple[int, int, int, int]] = []
    current: Recording | None = None
    for line in (directory / IDX_NAME).read_text("utf-8").splitlines():
        if not line.strip():
            continue
        parts = line.split()
        if parts[0] == "R":
            current = Recording(int(parts[1]), int(parts[2]), [], parts[4] == "heldout")
            recordings.append(current)
            declared = int(parts[3])
            current.clusters = [[] for _ in range(declared)]
        elif parts[0] == "C":
            assert current is not None, "C line before any R line"
            current.clusters[int(parts[1])] = [int(s) for s in parts[2:]]
        elif parts[0] == "S":
            seg_meta.append((int(parts[1]), int(parts[2]), int(parts[3]), int(parts[4])))
        else:
            raise ValueError(f"unknown record type {parts[0]!r} in {directory / IDX_NAME}")

    membership: dict[int, tuple[int, int]] = {}
    for rec in recordings:
        for cid, cluster in enumerate(rec.clusters):
            for sid in cluster:
                membership[sid] = (rec.recording_id, cid)

    segments: dict[int, Segment] = {}
    for sid, oracle, n_frames, offset in seg_meta:
        rec_id, cid = membership.get(sid, (-1, -1))
        feats = np.array(flat[offset:offset + n_frames], dtype=np.float32)
        segments[sid] = Segment(sid, rec_id, cid, feats, oracle)

    n_speakers = max((r.target for r in recordings), default=-1) + 1
    unknown_present = any(s.oracle_speaker == UNKNOWN for s in segments.values())
    return Corpus(n_speakers, recordings, segments, unknown_present)


def save_oracle(corpus: Corpus, directory: str | Path) -> None:
    directory = Path(directory)
    lines = [f"{sid}\t{corpus.segments[sid].oracle_speaker}" for sid in sorted(corpus.segments)]
    _atomic_write(directory / ORACLE_NAME, ("\n".join(lines) + "\n").encode("utf-8"))


def save_trials(trials: list[Trial], path: str | Path) -> None:
    lines = [f"{t.enroll_id}\t{t.test_id}\t{1 if t.is_target else 0}" for t in trials]
    _atomic_write(Path(path), ("\n".join(lines) + "\n").encode("utf-8"))


def load_trials(path: str | Path) -> list[Trial]:
    trials = []
    for line in Path(path).read_text("utf-8").splitlines():
        if not line.strip():
            continue
        e, t, lab = line.split("\t")
        trials.append(Trial(int(e), int(t), lab == "1"))
    return trials
