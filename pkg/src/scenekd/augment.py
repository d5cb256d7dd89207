"""Waveform and spectrogram augmentations.

Three families, all driven by caller-supplied ``numpy.random.Generator``
streams so runs replay exactly:

* random/center crops of fixed length on waveforms,
* device impulse response (DIR) convolution with peak renormalization,
* frequency MixStyle on log-mel batches, mixing per-frequency statistics
  between samples.
"""

from __future__ import annotations

import numpy as np
from scipy.signal import fftconvolve

from . import audio
from .tensor import Tensor, _record, _accum

FMS_EPS = 1e-5


# ---------------------------------------------------------------------------
# crops
# ---------------------------------------------------------------------------

def shifted_crop(x, length, rng):
    """Crop ``length`` samples at a uniformly random offset."""
    n = len(x)
    if n < length:
        raise ValueError(f"clip of {n} samples is shorter than crop length {length}")
    off = int(rng.integers(0, n - length + 1))
    return x[off:off + length]


def center_crop(x, length):
    """Deterministic center crop, the eval counterpart of shifted_crop."""
    n = len(x)
    if n < length:
        raise ValueError(f"clip of {n} samples is shorter than crop length {length}")
    off = (n - length) // 2
    return x[off:off + length]


# ---------------------------------------------------------------------------
# device impulse responses
# ---------------------------------------------------------------------------

def apply_ir(x, ir):
    """Convolve a waveform with an impulse response, FFT-based, truncated to
    the input length, then renormalized so the output peak matches the input
    peak."""
    x = np.asarray(x, dtype=np.float32)
    ir = np.asarray(ir, dtype=np.float32)
    if ir.ndim != 1 or len(ir) == 0:
        raise ValueError(f"impulse response must be a non-empty 1-d array, got {ir.shape}")
    y = fftconvolve(x.astype(np.float64), ir.astype(np.float64), mode="full")[:len(x)]
    peak_in = np.abs(x).max()
    peak_out = np.abs(y).max()
    if peak_in > 0 and peak_out > 0:
        y *= peak_in / peak_out
    return y.astype(np.float32)


def maybe_apply_ir(x, irs, p, rng):
    """With probability ``p`` convolve with an IR chosen uniformly from the bank."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"probability must be in [0, 1], got {p}")
    if p == 0.0:
        return x
    if not irs:
        raise ValueError("IR bank is empty but the augmentation probability is > 0")
    if rng.random() >= p:
        return x
    ir = irs[int(rng.integers(len(irs)))]
    return apply_ir(x, ir)


def load_ir_bank(path):
    """Load every .wav under ``path`` as an IR, sorted by filename."""
    from pathlib import Path

    files = sorted(Path(path).glob("*.wav"))
    if not files:
        raise FileNotFoundError(f"no .wav impulse responses under {path}")
    return [audio.load_wav(f)[0] for f in files]


def default_ir_bank(n=8, seed=2024_02, sr=audio.SR):
    """A deterministic bank of synthetic room/device IRs.

    Each IR is exponentially decaying noise, smoothed to color the spectrum,
    64 to 512 taps long, peak-normalized. The bank depends only on the seed.
    """
    irs = []
    for i in range(n):
        rng = np.random.default_rng(np.random.SeedSequence([seed, i]))
        taps = int(rng.integers(64, 513))
        t = np.arange(taps)
        decay = np.exp(-t / rng.uniform(8.0, taps / 3.0))
        noise = rng.standard_normal(taps) * decay
        smooth = int(rng.integers(2, 8))
        colored = np.convolve(noise, np.hanning(2 * smooth + 1), mode="same")
        colored[0] += 1.0  # keep a direct-path component so clips stay intelligible
        irs.append((colored / np.abs(colored).max()).astype(np.float32))
    return irs


def write_ir_bank(path, irs, sr=audio.SR):
    from pathlib import Path

    outdir = Path(path)
    outdir.mkdir(parents=True, exist_ok=True)
    for i, ir in enumerate(irs):
        audio.save_wav_pcm16(outdir / f"ir_{i:02d}.wav", ir * 0.99, sr)


# ---------------------------------------------------------------------------
# frequency MixStyle
# ---------------------------------------------------------------------------

def fms_stats(x):
    """Per-sample, per-frequency mean/std of a [N, C, F, T] batch over (C, T)."""
    mu = x.mean(axis=(1, 3), keepdims=True)
    sig = np.sqrt(x.var(axis=(1, 3), keepdims=True))
    return mu, sig


def fms_scale_shift(x, lam, perm, eps=FMS_EPS):
    """The affine coefficients MixStyle applies for a given draw.

    out = x * scale + shift with scale = (sig_mix + eps) / (sig + eps) and
    shift = mu_mix - mu * scale, where (mu_mix, sig_mix) interpolate each
    sample's stats with its permutation partner's at weight ``lam``. The
    regularized sigma is mixed, so lam = 1 gives scale exactly 1 and the
    transform degenerates to the identity rather than to an eps-sized drift.
    Statistics are treated as constants: gradients do not flow through them.
    """
    mu, sig = fms_stats(x)
    mu_mix = lam * mu + (1.0 - lam) * mu[perm]
    sig_mix = lam * sig + (1.0 - lam) * sig[perm]
    scale = (sig_mix + eps) / (sig + eps)
    shift = mu_mix - mu * scale
    return scale, shift


def fms_apply(x, lam, perm, eps=FMS_EPS):
    """Apply MixStyle with fixed draws; Tensor in, Tensor out (taped)."""
    perm = np.asarray(perm)
    n = x.data.shape[0]
    if x.data.ndim != 4 or 0 in x.data.shape[2:]:
        raise ValueError(f"need [N, C, F, T] with F, T > 0, got {x.data.shape}")
    if perm.shape != (n,) or sorted(perm.tolist()) != list(range(n)):
        raise ValueError(f"perm must be a permutation of range({n})")
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"mix weight must be in [0, 1], got {lam}")
    scale, shift = fms_scale_shift(x.data, lam, perm, eps)
    scale = scale.astype(np.float32)
    shift = shift.astype(np.float32)
    out = Tensor(x.data * scale + shift)

    def back(g):
        _accum(x, g * scale)

    return _record(out, (x,), back)


def freq_mixstyle(x, alpha, p, rng, eps=FMS_EPS):
    """Frequency MixStyle on a batch: one apply draw, one Beta(alpha, alpha)
    weight, and one permutation per batch."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"probability must be in [0, 1], got {p}")
    if alpha <= 0:
        raise ValueError(f"Beta concentration must be positive, got {alpha}")
    if x.data.ndim != 4 or 0 in x.data.shape[2:]:
        raise ValueError(f"need [N, C, F, T] with F, T > 0, got {x.data.shape}")
    if p == 0.0:
        return x
    if rng.random() >= p:
        return x
    lam = float(rng.beta(alpha, alpha))
    perm = rng.permutation(x.data.shape[0])
    return fms_apply(x, lam, perm, eps)
