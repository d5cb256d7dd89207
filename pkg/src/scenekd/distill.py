"""Distillation loss, logit stores, and logit ensembling.

The training objective mixes hard-label cross-entropy with a temperature-
scaled KL term against teacher logits:

    loss = lam * CE(softmax(z_s), y)
         + (1 - lam) * tau^2 * KL(softmax(z_t / tau) || softmax(z_s / tau))

averaged over the batch. The tau^2 factor keeps the soft-target gradient
magnitude comparable across temperatures. At lam = 1 the expression reduces
bitwise to plain cross-entropy because the soft term is multiplied by an
exact float zero.

Teacher logits for a dataset live in flat binary stores (magic ``DFLG``)
keyed by clip id; ensembling averages stores entry-wise in float64.
"""

from __future__ import annotations

import struct

import numpy as np

from .tensor import Tensor, _record, _accum, softmax_t_forward


def _log_softmax(z):
    zs = z - z.max(axis=-1, keepdims=True)
    return zs - np.log(np.exp(zs).sum(axis=-1, keepdims=True))


def kd_loss_forward(z_s, z_t, labels, lam, tau):
    """Dtype-generic loss value; ``z_t`` may be None when lam == 1."""
    n, k = z_s.shape
    ce_terms = -_log_softmax(z_s)[np.arange(n), labels]
    ce = ce_terms.mean()
    if lam == 1.0:
        kd = np.zeros((), dtype=z_s.dtype)
    else:
        log_ps = _log_softmax(z_s / tau)
        log_pt = _log_softmax(z_t / tau)
        pt = np.exp(log_pt)
        kd = (tau * tau) * (pt * (log_pt - log_ps)).sum(axis=-1).mean()
    return lam * ce + (1.0 - lam) * kd


def kd_loss(student_logits, teacher_logits, labels, lam, tau):
    """Distillation loss as a taped scalar with a closed-form gradient.

    ``student_logits`` is a [N, K] Tensor; ``teacher_logits`` a [N, K] array
    (or None when lam == 1); ``labels`` an int array of class indices.
    """
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lam must be in [0, 1], got {lam}")
    if tau <= 0:
        raise ValueError(f"tau must be positive, got {tau}")
    z = student_logits.data
    n, k = z.shape
    labels = np.asarray(labels)
    if labels.shape != (n,) or labels.min() < 0 or labels.max() >= k:
        raise ValueError(f"labels must be {n} class indices below {k}")
    if teacher_logits is None:
        if lam != 1.0:
            raise ValueError("teacher logits required when lam < 1")
        z_t = None
    else:
        z_t = np.asarray(teacher_logits, dtype=np.float32)
        if z_t.shape != z.shape:
            raise ValueError(f"teacher logits {z_t.shape} vs student {z.shape}")

    out = Tensor(kd_loss_forward(z, z_t, labels, lam, tau))

    def back(g):
        p_s = softmax_t_forward(z, 1.0)
        hard = p_s.copy()
        hard[np.arange(n), labels] -= 1.0
        if lam == 1.0:
            soft = np.zeros_like(z)
        else:
            soft = tau * (softmax_t_forward(z, tau) - softmax_t_forward(z_t, tau))
        _accum(student_logits, g * (lam * hard + (1.0 - lam) * soft) / np.float32(n))

    return _record(out, (student_logits,), back)


def ce_loss(logits, labels):
    """Plain cross-entropy; shares the kd_loss kernel at lam = 1."""
    return kd_loss(logits, None, labels, lam=1.0, tau=1.0)


def kd_grad_tau_term(z_s, z_t, tau):
    """Per-sample gradient of the tau^2-scaled soft term w.r.t. student
    logits (batch-mean factor excluded): tau * (p_s^tau - p_t^tau)."""
    return tau * (softmax_t_forward(z_s, tau) - softmax_t_forward(z_t, tau))


def kd_grad_tau_limit(z_s, z_t):
    """High-temperature limit of ``kd_grad_tau_term``:
    ((z_s - mean z_s) - (z_t - mean z_t)) / K."""
    k = z_s.shape[-1]
    cs = z_s - z_s.mean(axis=-1, keepdims=True)
    ct = z_t - z_t.mean(axis=-1, keepdims=True)
    return (cs - ct) / k


# ---------------------------------------------------------------------------
# logit stores
# ---------------------------------------------------------------------------

MAGIC = b"DFLG"
VERSION = 1


class LogitStore:
    """Clip-id -> float32 logit vector map with a flat binary file format.

    Layout, little-endian:
        "DFLG" | u32 version | u32 n_classes | u64 entry_count
        per entry (sorted by id): u16 id_len | id utf-8 | n_classes * f32
    """

    def __init__(self, n_classes):
        if n_classes < 1:
            raise ValueError(f"n_classes must be positive, got {n_classes}")
        self.n_classes = int(n_classes)
        self.entries = {}

    def __len__(self):
        return len(self.entries)

    def __contains__(self, clip_id):
        return clip_id in self.entries

    def ids(self):
        return sorted(self.entries)

    def get(self, clip_id):
        return self.entries[clip_id]

    def add(self, clip_id, logits):
        if not clip_id:
            raise ValueError("clip id must be non-empty")
        if clip_id in self.entries:
            raise ValueError(f"duplicate clip id {clip_id!r}")
        vec = np.asarray(logits, dtype=np.float32).reshape(-1)
        if vec.shape != (self.n_classes,):
            raise ValueError(
                f"logits for {clip_id!r} have {vec.size} entries, expected {self.n_classes}")
        if not np.isfinite(vec).all():
            raise FloatingPointError(f"non-finite logits for clip {clip_id!r}")
        self.entries[clip_id] = vec

    def matrix(self, ids):
        """Stack logits for the given ids into [len(ids), n_classes]."""
        return np.stack([self.entries[i] for i in ids])

    def save(self, path):
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<IIQ", VERSION, self.n_classes, len(self.entries)))
            for clip_id in sorted(self.entries):
                enc = clip_id.encode("utf-8")
                if len(enc) > 0xFFFF:
                    raise ValueError(f"clip id too long: {clip_id!r}")
                fh.write(struct.pack("<H", len(enc)))
                fh.write(enc)
                fh.write(self.entries[clip_id].astype("<f4").tobytes())

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            raw = fh.read()
        if raw[:4] != MAGIC:
            raise ValueError(f"{path}: not a logit store (bad magic {raw[:4]!r})")
        version, k, count = struct.unpack_from("<IIQ", raw, 4)
        if version != VERSION:
            raise ValueError(f"{path}: unsupported logit store version {version}")
        store = cls(k)
        off = 20
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", raw, off)
            off += 2
            clip_id = raw[off:off + nlen].decode("utf-8")
            off += nlen
            vec = np.frombuffer(raw, dtype="<f4", count=k, offset=off)
            off += 4 * k
            store.add(clip_id, vec)
        if off != len(raw):
            raise ValueError(f"{path}: {len(raw) - off} trailing bytes after last entry")
        return store


def ensemble_logits(stores):
    """Average stores entry-wise into a new store.

    All stores must hold the same clip ids and class count. Sums accumulate
    in float64, so the result is independent of store order and ensembling
    a store with itself reproduces it exactly.
    """
    if not stores:
        raise ValueError("need at least one logit store to ensemble")
    k = stores[0].n_classes
    ids = set(stores[0].entries)
    for s in stores[1:]:
        if s.n_classes != k:
            raise ValueError(f"class count mismatch: {s.n_classes} vs {k}")
        if set(s.entries) != ids:
            a, b = set(s.entries), ids
            diff = sorted((a - b) | (b - a))[:3]
            raise ValueError(f"stores cover different clips (e.g. {diff})")
    out = LogitStore(k)
    for clip_id in sorted(ids):
        acc = np.zeros(k, dtype=np.float64)
        for s in stores:
            acc += s.entries[clip_id]
        out.add(clip_id, (acc / len(stores)).astype(np.float32))
    return out
