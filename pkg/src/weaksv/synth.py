"""Synthetic weakly-labeled corpus generator with known ground truth.

Each speaker is a unit latent vector. A segment is rendered by adding
per-frame gaussian noise to the speaker latent and pushing every frame
through a corpus-wide frozen affine lift followed by tanh, which makes
the feature-to-speaker map non-linear. Recordings mix one target speaker
with distractors (known speakers, plus optional speakers outside the
known set) and occasional pure-noise segments; at least one segment of
every recording belongs to its target.

Generation is deterministic: every recording draws from an RNG substream
keyed by (seed, recording_id), so serial and parallel generation agree.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import Corpus, NOISE, Recording, Segment, UNKNOWN
from .errors import DegenerateConfig
from .rng import Rng

_LIFT_GAIN = 2.0
_LIFT_BIAS_STD = 0.2


@dataclass(frozen=True)
class SynthConfig:
    n_speakers: int = 40
    latent_dim: int = 8
    feat_dim: int = 20
    recordings_per_speaker: int = 8
    segments_per_recording: tuple[int, int] = (6, 10)
    frames_per_segment: tuple[int, int] = (10, 30)
    distractors_per_recording: tuple[int, int] = (0, 2)
    noise_segment_prob: float = 0.1
    within_speaker_noise: float = 0.3
    unknown_speaker_count: int = 10
    # probability that a non-noise segment voices the target when the
    # recording has distractors; remaining mass is uniform over them
    target_weight: float = 0.5
    seed: int = 1234

    def validate(self) -> None:
        if self.n_speakers < 2:
            raise DegenerateConfig("need at least 2 speakers")
        if self.latent_dim < 2:
            raise DegenerateConfig("latent_dim must be >= 2")
        if self.feat_dim < self.latent_dim:
            raise DegenerateConfig("feat_dim must be >= latent_dim")
        if not (0.0 <= self.noise_segment_prob <= 1.0):
            raise DegenerateConfig("noise_segment_prob must lie in [0, 1]")
        if not (0.0 < self.target_weight <= 1.0):
            raise DegenerateConfig("target_weight must lie in (0, 1]")
        if self.within_speaker_noise <= 0:
            raise DegenerateConfig("within_speaker_noise must be positive")
        for lo, hi, name in (
            (*self.segments_per_recording, "segments_per_recording"),
            (*self.frames_per_segment, "frames_per_segment"),
            (*self.distractors_per_recording, "distractors_per_recording"),
        ):
            if lo > hi or lo < 0:
                raise DegenerateConfig(f"bad range for {name}: {lo}..{hi}")
        if self.segments_per_recording[0] < 1:
            raise DegenerateConfig("recordings need at least one segment")
        if self.recordings_per_speaker < 1:
            raise DegenerateConfig("recordings_per_speaker must be >= 1")


@dataclass(frozen=True)
class VoicePrint:
    latent: np.ndarray  # unit vector, (latent_dim,)


@dataclass(frozen=True)
class FeatureLift:
    """Frozen affine map latent -> feature space, applied under tanh."""

    matrix: np.ndarray  # (feat_dim, latent_dim)
    bias: np.ndarray  # (feat_dim,)

    def apply(self, latents: np.ndarray) -> np.ndarray:
        return np.tanh(latents @ self.matrix.T + self.bias)


def generate_speakers(n: int, latent_dim: int, seed: int) -> list[VoicePrint]:
    """n unit latent vectors, deterministic given seed, pairwise distinct."""
    if n < 2:
        raise DegenerateConfig("need at least 2 speakers")
    if latent_dim < 2:
        raise DegenerateConfig("latent_dim must be >= 2")
    rng = Rng.from_seed(seed, "speakers")
    voices = []
    for _ in range(n):
        v = rng.normals(latent_dim)
        norm = float(np.linalg.norm(v))
        while norm < 1e-9:  # astronomically unlikely; redraw keeps the contract
            v = rng.normals(latent_dim)
            norm = float(np.linalg.norm(v))
        voices.append(VoicePrint(v / norm))
    return voices


def make_lift(cfg: SynthConfig) -> FeatureLift:
    rng = Rng.from_seed(cfg.seed, "lift")
    scale = _LIFT_GAIN / np.sqrt(cfg.latent_dim)
    matrix = rng.normals(cfg.feat_dim * cfg.latent_dim).reshape(cfg.feat_dim, cfg.latent_dim) * scale
    bias = rng.normals(cfg.feat_dim) * _LIFT_BIAS_STD
    return FeatureLift(matrix, bias)


def render_segment(
    voice: VoicePrint,
    n_frames: int,
    cfg: SynthConfig,
    rng: Rng,
    lift: FeatureLift | None = None,
) -> np.ndarray:
    """(n_frames, feat_dim) float32 feature matrix for one segment."""
    if n_frames < 1:
        raise DegenerateConfig("segments need at least one frame")
    if lift is None:
        lift = make_lift(cfg)
    noise = rng.normals(n_frames * cfg.latent_dim).reshape(n_frames, cfg.latent_dim)
    latents = voice.latent[None, :] + cfg.within_speaker_noise * noise
    return lift.apply(latents).astype(np.float32)


def _segment_plan(cfg: SynthConfig, target: int, rng: Rng) -> tuple[list[int], list[int]]:
    """Oracle labels and rendering identities for one recording.

    Returns (oracle_labels, render_ids) where a render id is the index of
    the voiceprint to render with (known ids first, then unknown-pool
    ids), or NOISE for a non-speech segment.
    """
    n_seg = rng.randrange(*cfg.segments_per_recording)
    n_dis = rng.randrange(*cfg.distractors_per_recording)
    distractors: list[int] = []
    for _ in range(n_dis):
        if cfg.unknown_speaker_count > 0 and rng.float() < 0.5:
            distractors.append(cfg.n_speakers + rng.randint(cfg.unknown_speaker_count))
        else:
            other = rng.randint(cfg.n_speakers - 1)
            distractors.append(other + 1 if other >= target else other)
    distractors = sorted(set(distractors))

    render_ids: list[int] = []
    for _ in range(n_seg):
        if rng.float() < cfg.noise_segment_prob:
            render_ids.append(NOISE)
        elif not distractors or rng.float() < cfg.target_weight:
            render_ids.append(target)
        else:
            render_ids.append(rng.choice(distractors))
    if target not in render_ids:
        render_ids[0] = target

    oracle = [UNKNOWN if rid >= cfg.n_speakers else rid for rid in render_ids]
    return oracle, render_ids


def generate_corpus(cfg: SynthConfig) -> Corpus:
    """Full corpus: recordings, oracle-grouped initial clusters, features."""
    cfg.validate()
    voices = generate_speakers(cfg.n_speakers + cfg.unknown_speaker_count, cfg.latent_dim, cfg.seed)
    lift = make_lift(cfg)

    recordings: list[Recording] = []
    segments: dict[int, Segment] = {}
    next_sid = 0
    for target in range(cfg.n_speakers):
        for r in range(cfg.recordings_per_speaker):
            rec_id = target * cfg.recordings_per_speaker + r
            rng = Rng.from_seed(cfg.seed, "rec", rec_id)
            oracle, render_ids = _segment_plan(cfg, target, rng)

            sids = list(range(next_sid, next_sid + len(render_ids)))
            next_sid += len(render_ids)
            for sid, lab, rid in zip(sids, oracle, render_ids):
                n_frames = rng.randrange(*cfg.frames_per_segment)
                if rid == NOISE:
                    latent = rng.normals(cfg.latent_dim) / np.sqrt(cfg.latent_dim)
                    feats = lift.apply(latent[None, :].repeat(n_frames, 0)
                                       + cfg.within_speaker_noise
                                       * rng.normals(n_frames * cfg.latent_dim).reshape(n_frames, -1))
                    feats = feats.astype(np.float32)
                else:
                    feats = render_segment(voices[rid], n_frames, cfg, rng, lift)
                segments[sid] = Segment(sid, rec_id, -1, feats, lab)

            # initial clusters group segments by oracle label: the target
            # first, known distractors ascending, then UNKNOWN, then NOISE
            order: list[int] = [target]
            order += sorted({l for l in oracle if l >= 0 and l != target})
            for sentinel in (UNKNOWN, NOISE):
                if sentinel in oracle:
                    order.append(sentinel)
            clusters: list[list[int]] = []
            for lab in order:
                members = [sid for sid, o in zip(sids, oracle) if o == lab]
                if members:
                    clusters.append(members)
            for cid, cluster in enumerate(clusters):
                for sid in cluster:
                    segments[sid].cluster_id = cid
            recordings.append(Recording(rec_id, target, clusters))

    unknown_present = any(s.oracle_speaker == UNKNOWN for s in segments.values())
    return Corpus(cfg.n_speakers, recordings, segments, unknown_present)
