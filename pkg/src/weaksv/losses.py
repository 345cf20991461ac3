"""Loss mathematics for both training stages, values and exact gradients.

Stage 1 turns per-segment prototype cosines into recording-level
similarities (hard max, or a temperature-smoothed log-sum-exp) and
applies additive-angular-margin cross-entropy to them. Stage 2 applies
the same margin loss per segment, optionally extended with one extra
prototype-free class whose logit is a per-batch constant: zero for rows
with a known label, and the batch mean of the known rows' target logits
for rows without one. That constant is detached, so an unknown row can
lower its loss only by pushing all known-class logits down.

The log-sum-exp pool is mean-normalized, tau * ln((1/N) sum exp(v/tau)),
which keeps outputs at or below the max (and therefore inside [-1, 1]
for cosine inputs); its gradient is the softmax of v/tau, identical to
the unnormalized form.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyInput, NoKnownExamples

MAX = "max"
LSE = "lse"

# cosines are clamped away from +-1 so the margin rotation keeps a
# bounded derivative
_COS_CLAMP = 1.0 - 1e-7


@dataclass(frozen=True)
class Schedule:
    """Linear interpolation between two endpoint values."""

    start: float
    end: float

    @classmethod
    def fixed(cls, value: float) -> "Schedule":
        return cls(value, value)

    def at(self, fraction: float) -> float:
        return self.start + (self.end - self.start) * fraction


@dataclass(frozen=True)
class LossConfig:
    scale: float = 30.0
    margin: Schedule = Schedule.fixed(0.0)
    tau: Schedule = Schedule(0.5, 0.1)
    aggregation: str = MAX

    def validate(self) -> None:
        if self.scale <= 0:
            raise ValueError("scale must be positive")
        for m in (self.margin.start, self.margin.end):
            if not (0.0 <= m <= 0.5):
                raise ValueError("margin must lie in [0, 0.5]")
        for t in (self.tau.start, self.tau.end):
            if t <= 0:
                raise ValueError("tau must be positive")
        if self.aggregation not in (MAX, LSE):
            raise ValueError(f"unknown aggregation {self.aggregation!r}")


def lse_tau(values: np.ndarray, tau: float) -> float:
    """Mean-normalized soft maximum: tau * ln((1/N) sum exp(v/tau)).

    Computed max-shifted for stability. Lies in (mean(v), max(v)] and at
    least max(v) - tau*ln(N).
    """
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise EmptyInput("lse_tau of an empty vector")
    if tau <= 0:
        raise ValueError("tau must be positive")
    vmax = float(values.max())
    return vmax + tau * float(np.log(np.exp((values - vmax) / tau).mean()))


@dataclass
class Aggregation:
    """Recording-level similarities plus what backward needs for routing."""

    c_rec: np.ndarray  # (n_classes,)
    kind: str
    argmax: np.ndarray | None = None  # (n_classes,) rows picked by MAX
    weights: np.ndarray | None = None  # (bag, n_classes) softmax weights for LSE

    def backward(self, d_rec: np.ndarray, bag_size: int) -> np.ndarray:
        """d loss / d segment-cosines from d loss / d recording-cosines."""
        d_seg = np.zeros((bag_size, d_rec.shape[0]))
        if self.kind == MAX:
            d_seg[self.argmax, np.arange(d_rec.shape[0])] = d_rec
        else:
            d_seg[:] = self.weights * d_rec[None, :]
        return d_seg


def aggregate(c_seg: np.ndarray, kind: str, tau: float | None = None) -> Aggregation:
    """Per-class reduction of a (bag, n_classes) cosine matrix.

    MAX keeps the per-class argmax rows so gradients flow only through
    the highest-similarity segment; LSE spreads them with softmax(v/tau)
    weights.
    """
    c_seg = np.atleast_2d(np.asarray(c_seg, dtype=np.float64))
    if c_seg.shape[0] < 1:
        raise EmptyInput("empty bag")
    if kind == MAX:
        idx = np.argmax(c_seg, axis=0)
        return Aggregation(c_seg[idx, np.arange(c_seg.shape[1])], MAX, argmax=idx)
    if kind == LSE:
        if tau is None or tau <= 0:
            raise ValueError("LSE aggregation needs a positive tau")
        vmax = c_seg.max(axis=0)
        ex = np.exp((c_seg - vmax[None, :]) / tau)
        c_rec = vmax + tau * np.log(ex.mean(axis=0))
        return Aggregation(c_rec, LSE, weights=ex / ex.sum(axis=0, keepdims=True))
    raise ValueError(f"unknown aggregation {kind!r}")


def aam_margin(c: float, m: float) -> float:
    """cos(arccos(c) + m), computed without trig on the clamped cosine."""
    c = min(max(c, -_COS_CLAMP), _COS_CLAMP)
    return c * np.cos(m) - np.sqrt(1.0 - c * c) * np.sin(m)


def _aam_margin_grad(c: float, m: float) -> tuple[float, float]:
    """(psi, d psi / d c); the derivative is zero outside the clamp range."""
    if c > _COS_CLAMP or c < -_COS_CLAMP:
        cc = min(max(c, -_COS_CLAMP), _COS_CLAMP)
        return aam_margin(cc, m), 0.0
    root = np.sqrt(1.0 - c * c)
    return c * np.cos(m) - root * np.sin(m), float(np.cos(m) + c / root * np.sin(m))


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max()
    e = np.exp(z)
    return e / e.sum()


def _logsumexp(logits: np.ndarray) -> float:
    m = logits.max()
    return float(m + np.log(np.exp(logits - m).sum()))


def weak_recording_loss(
    c_rec: np.ndarray, target: int, s: float, m: float
) -> tuple[float, np.ndarray]:
    """Margin cross-entropy on recording-level similarities.

    Logits are s*c for non-target classes and s*psi(c) for the target.
    Returns (loss, d loss / d c_rec).
    """
    c_rec = np.asarray(c_rec, dtype=np.float64)
    logits = s * c_rec.copy()
    psi, dpsi = _aam_margin_grad(float(c_rec[target]), m)
    logits[target] = s * psi
    loss = _logsumexp(logits) - float(logits[target])
    p = _softmax(logits)
    d_logits = p.copy()
    d_logits[target] -= 1.0
    d_rec = s * d_logits
    d_rec[target] *= dpsi
    return loss, d_rec


def segment_aam_loss(
    c: np.ndarray, target: int, s: float, m: float
) -> tuple[float, np.ndarray]:
    """Per-segment margin cross-entropy; a bag of size one."""
    return weak_recording_loss(c, target, s, m)


def _seq_mean(values: list[float]) -> float:
    # left-to-right summation so reimplementations agree bit for bit
    acc = 0.0
    for v in values:
        acc += v
    return acc / len(values)


def extend_logits_unknown(
    L: np.ndarray, labels: np.ndarray, known_mask: np.ndarray
) -> np.ndarray:
    """Append the prototype-free unknown-class logit column.

    Rows with a known label get 0; rows without one get the batch mean of
    the known rows' target logits. The appended column is a constant with
    respect to differentiation.
    """
    L = np.atleast_2d(np.asarray(L, dtype=np.float64))
    labels = np.asarray(labels)
    known_mask = np.asarray(known_mask, dtype=bool)
    known_rows = np.flatnonzero(known_mask)
    extra = np.zeros(L.shape[0])
    if not known_mask.all():
        if known_rows.size == 0:
            raise NoKnownExamples("a batch of only unknown rows cannot anchor the extra class")
        mean_target = _seq_mean([float(L[i, labels[i]]) for i in known_rows])
        extra[~known_mask] = mean_target
    return np.concatenate([L, extra[:, None]], axis=1)


def extended_ce_loss(
    L_ext: np.ndarray, labels: np.ndarray, known_mask: np.ndarray, s: float, m: float
) -> tuple[np.ndarray, np.ndarray]:
    """Cross-entropy over the extended logits.

    Known rows use their label with the margin applied to the target
    logit only; unknown rows use the appended class, no margin. Returns
    per-row losses and gradients with respect to the original logits L
    (the appended column is constant, so nothing flows through it).
    """
    L_ext = np.atleast_2d(np.asarray(L_ext, dtype=np.float64))
    labels = np.asarray(labels)
    known_mask = np.asarray(known_mask, dtype=bool)
    n_rows, n_ext = L_ext.shape
    n_classes = n_ext - 1
    losses = np.empty(n_rows)
    d_L = np.zeros((n_rows, n_classes))
    for i in range(n_rows):
        row = L_ext[i].copy()
        if known_mask[i]:
            t = int(labels[i])
            c_t = row[t] / s
            psi, dpsi = _aam_margin_grad(float(c_t), m)
            row[t] = s * psi
            loss = _logsumexp(row) - row[t]
            p = _softmax(row)
            d = p[:n_classes].copy()
            d[t] -= 1.0
            d[t] *= dpsi
            losses[i] = loss
            d_L[i] = d
        else:
            loss = _logsumexp(row) - row[n_classes]
            p = _softmax(row)
            losses[i] = loss
            d_L[i] = p[:n_classes]
    return losses, d_L
