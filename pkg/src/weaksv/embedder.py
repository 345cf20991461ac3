"""Trainable embedding model: frame-mean pooling, a 2-layer network with
relu, L2-normalized output embeddings, and unit-norm speaker prototypes.

forward/backward are pure functions of (params, input); the backward pass
is exact analytic chain rule, including the normalization Jacobian
(I - e e^T)/||z||, and is verified against central finite differences in
the test suite.

Checkpoint format: header magic WMLC, u32 version, u32 feat_dim,
u32 hidden_dim, u32 emb_dim, u32 n_speakers, then all parameters as
little-endian float64 in order W1, b1, W2, b2, prototypes. A trailing
optimizer section (magic OPTS, u64 step, u32 epoch, 32-byte config hash,
velocities in the same parameter order) is appended by the trainer and
ignored by embedding-only readers.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DegenerateEmbedding
from .rng import Rng

CKPT_MAGIC = b"WMLC"
CKPT_VERSION = 1
OPT_MAGIC = b"OPTS"

_NORM_FLOOR = 1e-8


@dataclass(frozen=True)
class EmbedderConfig:
    feat_dim: int = 20
    hidden_dim: int = 64
    emb_dim: int = 32


@dataclass
class EmbedderParams:
    W1: np.ndarray  # (hidden, feat)
    b1: np.ndarray  # (hidden,)
    W2: np.ndarray  # (emb, hidden)
    b2: np.ndarray  # (emb,)

    def copy(self) -> "EmbedderParams":
        return EmbedderParams(self.W1.copy(), self.b1.copy(), self.W2.copy(), self.b2.copy())

    def names(self) -> tuple[str, ...]:
        return ("W1", "b1", "W2", "b2")


@dataclass
class ForwardCache:
    """Intermediates of forward_pooled, consumed by backward_pooled."""

    xbar: np.ndarray  # (k, feat)
    a1: np.ndarray  # pre-relu, (k, hidden)
    h: np.ndarray  # (k, hidden)
    z: np.ndarray  # pre-norm, (k, emb)
    norms: np.ndarray  # (k,)
    emb: np.ndarray  # (k, emb)


def init_params(cfg: EmbedderConfig, seed: int) -> EmbedderParams:
    """Gaussian init scaled by 1/sqrt(fan_in)."""
    rng = Rng.from_seed(seed, "params")
    W1 = rng.normals(cfg.hidden_dim * cfg.feat_dim).reshape(cfg.hidden_dim, cfg.feat_dim) / np.sqrt(cfg.feat_dim)
    b1 = np.zeros(cfg.hidden_dim)
    W2 = rng.normals(cfg.emb_dim * cfg.hidden_dim).reshape(cfg.emb_dim, cfg.hidden_dim) / np.sqrt(cfg.hidden_dim)
    b2 = np.zeros(cfg.emb_dim)
    return EmbedderParams(W1, b1, W2, b2)


def init_prototypes(n_speakers: int, emb_dim: int, seed: int) -> np.ndarray:
    """(n_speakers, emb_dim) random unit rows."""
    rng = Rng.from_seed(seed, "prototypes")
    P = rng.normals(n_speakers * emb_dim).reshape(n_speakers, emb_dim)
    return P / np.linalg.norm(P, axis=1, keepdims=True)


def forward_pooled(xbar: np.ndarray, params: EmbedderParams) -> tuple[np.ndarray, ForwardCache]:
    """Embed a batch of already frame-averaged feature vectors.

    xbar: (k, feat_dim) float64. Returns unit-norm embeddings (k, emb_dim)
    plus the cache needed for gradients.
    """
    xbar = np.atleast_2d(np.asarray(xbar, dtype=np.float64))
    a1 = xbar @ params.W1.T + params.b1
    h = np.maximum(a1, 0.0)
    z = h @ params.W2.T + params.b2
    norms = np.linalg.norm(z, axis=1)
    if np.any(norms < _NORM_FLOOR):
        raise DegenerateEmbedding("pre-normalization embedding norm below 1e-8")
    emb = z / norms[:, None]
    return emb, ForwardCache(xbar, a1, h, z, norms, emb)


def forward(features: np.ndarray, params: EmbedderParams) -> tuple[np.ndarray, ForwardCache]:
    """Embed one segment given its (n_frames, feat_dim) feature matrix."""
    xbar = np.asarray(features, dtype=np.float64).mean(axis=0)
    emb, cache = forward_pooled(xbar[None, :], params)
    return emb[0], cache


def cosine_similarities(emb: np.ndarray, prototypes: np.ndarray) -> np.ndarray:
    """Cosines of an embedding (or batch) against every prototype row."""
    return np.asarray(emb, dtype=np.float64) @ prototypes.T


def backward_pooled(d_emb: np.ndarray, cache: ForwardCache, params: EmbedderParams) -> dict[str, np.ndarray]:
    """Exact parameter gradients from upstream d loss / d embedding.

    The radial direction is annihilated by the normalization Jacobian:
    dz = (d_emb - (d_emb . e) e) / ||z||.
    """
    d_emb = np.atleast_2d(np.asarray(d_emb, dtype=np.float64))
    radial = np.sum(d_emb * cache.emb, axis=1, keepdims=True)
    dz = (d_emb - radial * cache.emb) / cache.norms[:, None]
    dW2 = dz.T @ cache.h
    db2 = dz.sum(axis=0)
    dh = dz @ params.W2
    da1 = dh * (cache.a1 > 0.0)
    dW1 = da1.T @ cache.xbar
    db1 = da1.sum(axis=0)
    return {"W1": dW1, "b1": db1, "W2": dW2, "b2": db2}


# ---------------------------------------------------------------------------
# Checkpoint I/O
# ---------------------------------------------------------------------------


@dataclass
class Checkpoint:
    config: EmbedderConfig
    params: EmbedderParams
    prototypes: np.ndarray  # (n_speakers, emb_dim)
    velocities: dict[str, np.ndarray] | None = None  # W1,b1,W2,b2,P
    step: int = 0
    epoch: int = 0
    config_hash: bytes = b"\x00" * 32

    @property
    def n_speakers(self) -> int:
        return self.prototypes.shape[0]

    def copy(self) -> "Checkpoint":
        vel = {k: v.copy() for k, v in self.velocities.items()} if self.velocities else None
        return Checkpoint(self.config, self.params.copy(), self.prototypes.copy(),
                          vel, self.step, self.epoch, self.config_hash)


def _param_arrays(ckpt: Checkpoint) -> list[tuple[str, np.ndarray]]:
    p = ckpt.params
    return [("W1", p.W1), ("b1", p.b1), ("W2", p.W2), ("b2", p.b2), ("P", ckpt.prototypes)]


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> None:
    cfg = ckpt.config
    blob = bytearray()
    blob += CKPT_MAGIC
    blob += struct.pack("<IIIII", CKPT_VERSION, cfg.feat_dim, cfg.hidden_dim, cfg.emb_dim, ckpt.n_speakers)
    for _, arr in _param_arrays(ckpt):
        blob += np.ascontiguousarray(arr, dtype="<f8").tobytes()
    if ckpt.velocities is not None:
        blob += OPT_MAGIC
        blob += struct.pack("<QI", ckpt.step, ckpt.epoch)
        blob += ckpt.config_hash
        for name, arr in _param_arrays(ckpt):
            blob += np.ascontiguousarray(ckpt.velocities[name], dtype="<f8").tobytes()
    path = Path(path)
    tmp = path.with_name("." + path.name + ".tmp")
    tmp.write_bytes(bytes(blob))
    tmp.replace(path)


def load_checkpoint(path: str | Path) -> Checkpoint:
    raw = Path(path).read_bytes()
    if raw[:4] != CKPT_MAGIC:
        raise ValueError(f"bad checkpoint magic in {path}")
    version, feat, hidden, emb, n_spk = struct.unpack("<IIIII", raw[4:24])
    if version != CKPT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    cfg = EmbedderConfig(feat, hidden, emb)
    shapes = [("W1", (hidden, feat)), ("b1", (hidden,)), ("W2", (emb, hidden)),
              ("b2", (emb,)), ("P", (n_spk, emb))]

    def read_block(offset: int) -> tuple[dict[str, np.ndarray], int]:
        out = {}
        for name, shape in shapes:
            count = int(np.prod(shape))
            out[name] = np.frombuffer(raw, dtype="<f8", count=count, offset=offset).reshape(shape).copy()
            offset += count * 8
        return out, offset

    arrays, offset = read_block(24)
    params = EmbedderParams(arrays["W1"], arrays["b1"], arrays["W2"], arrays["b2"])
    ckpt = Checkpoint(cfg, params, arrays["P"])
    if offset < len(raw) and raw[offset:offset + 4] == OPT_MAGIC:
        step, epoch = struct.unpack("<QI", raw[offset + 4:offset + 16])
        config_hash = raw[offset + 16:offset + 48]
        velocities, _ = read_block(offset + 48)
        ckpt.velocities = velocities
        ckpt.step = step
        ckpt.epoch = epoch
        ckpt.config_hash = bytes(config_hash)
    return ckpt
