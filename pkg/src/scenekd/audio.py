"""Waveform I/O and the log-mel spectrogram frontend.

Clips are mono float32 in [-1, 1). The frontend is fixed at 32 kHz inputs
by default: 1024-point FFT, hop 320, 64 HTK-scale mel bands with Slaney
bandwidth normalization, log compression with a 1e-5 floor. One second of
audio maps to a [1, 64, 101] feature.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.io import wavfile

SR = 32000
N_FFT = 1024
HOP = 320
N_MELS = 64
LOG_FLOOR = 1e-5


def load_wav(path):
    """Read a WAV file as (mono float32 waveform, sample_rate).

    PCM16 scales by 1/32768; PCM32 and PCM8 scale to the same range; float
    files pass through. Multi-channel audio is downmixed by channel mean.
    """
    sr, data = wavfile.read(path)
    if data.dtype == np.int16:
        x = data.astype(np.float32) / 32768.0
    elif data.dtype == np.int32:
        x = data.astype(np.float32) / 2147483648.0
    elif data.dtype == np.uint8:
        x = (data.astype(np.float32) - 128.0) / 128.0
    elif data.dtype in (np.float32, np.float64):
        x = data.astype(np.float32)
    else:
        raise ValueError(f"{path}: unsupported WAV dtype {data.dtype}")
    if x.ndim == 2:
        x = x.mean(axis=1)
    elif x.ndim != 1:
        raise ValueError(f"{path}: expected 1-d or 2-d samples, got shape {x.shape}")
    return np.ascontiguousarray(x, dtype=np.float32), int(sr)


def save_wav_pcm16(path, x, sr):
    """Write a float waveform as PCM16; values are clipped to [-1, 1)."""
    q = np.clip(np.round(np.asarray(x, dtype=np.float64) * 32768.0), -32768, 32767)
    wavfile.write(path, int(sr), q.astype(np.int16))


def _window(name, n):
    if name == "hann":
        # periodic hann, so overlapping frames tile evenly
        return (0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)).astype(np.float64)
    if name == "rect":
        return np.ones(n, dtype=np.float64)
    raise ValueError(f"unknown window {name!r} (use 'hann' or 'rect')")


def stft(x, n_fft=N_FFT, hop=HOP, window="hann", center=True):
    """Short-time Fourier transform -> complex [n_fft//2 + 1, n_frames].

    ``n_fft`` must be a power of two and no longer than the clip. With
    ``center=True`` the signal is reflect-padded by n_fft//2 on both sides
    and the frame count is 1 + len(x)//hop.
    """
    x = np.asarray(x)
    if n_fft < 2 or n_fft & (n_fft - 1):
        raise ValueError(f"n_fft must be a power of two, got {n_fft}")
    if hop < 1:
        raise ValueError(f"hop must be positive, got {hop}")
    if x.ndim != 1:
        raise ValueError(f"stft expects a mono waveform, got shape {x.shape}")
    if len(x) < n_fft:
        raise ValueError(f"clip of {len(x)} samples is shorter than n_fft={n_fft}")

    win = _window(window, n_fft)
    if center:
        n_frames = 1 + len(x) // hop
        xp = np.pad(x.astype(np.float64), n_fft // 2, mode="reflect")
    else:
        n_frames = 1 + (len(x) - n_fft) // hop
        xp = x.astype(np.float64)
    frames = sliding_window_view(xp, n_fft)[::hop][:n_frames]
    return np.fft.rfft(frames * win, axis=1).T


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(sr=SR, n_fft=N_FFT, n_mels=N_MELS, fmin=0.0, fmax=None):
    """Triangular mel filters [n_mels, n_fft//2 + 1].

    Band edges are equally spaced on the HTK mel scale; each triangle is
    scaled by 2 / (bandwidth in Hz) so broadband energy stays roughly flat
    across bands.
    """
    if fmax is None:
        fmax = sr / 2.0
    if not 0 <= fmin < fmax <= sr / 2.0:
        raise ValueError(f"bad mel range [{fmin}, {fmax}] for sr={sr}")
    n_bins = n_fft // 2 + 1
    fft_freqs = np.linspace(0.0, sr / 2.0, n_bins)
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))

    fb = np.zeros((n_mels, n_bins))
    for i in range(n_mels):
        lo, mid, hi = edges[i], edges[i + 1], edges[i + 2]
        up = (fft_freqs - lo) / (mid - lo)
        down = (hi - fft_freqs) / (hi - mid)
        fb[i] = np.maximum(0.0, np.minimum(up, down)) * (2.0 / (hi - lo))
    return fb.astype(np.float32)


def logmel(x, sr=SR, n_fft=N_FFT, hop=HOP, n_mels=N_MELS, window="hann",
           fmin=0.0, fmax=None, filterbank=None):
    """Waveform -> log-mel feature [1, n_mels, n_frames] float32."""
    if sr != SR:
        raise ValueError(f"frontend is fixed at {SR} Hz input, got {sr}")
    spec = stft(x, n_fft=n_fft, hop=hop, window=window)
    power = (spec.real ** 2 + spec.imag ** 2)
    if filterbank is None:
        filterbank = mel_filterbank(sr, n_fft, n_mels, fmin, fmax)
    mel = filterbank.astype(np.float64) @ power
    return np.log(mel + LOG_FLOOR).astype(np.float32)[None, :, :]


class LogmelFrontend:
    """Caches the mel filterbank and maps clip batches to features."""

    def __init__(self, sr=SR, n_fft=N_FFT, hop=HOP, n_mels=N_MELS, window="hann"):
        self.sr = sr
        self.n_fft = n_fft
        self.hop = hop
        self.n_mels = n_mels
        self.window = window
        self.fb = mel_filterbank(sr, n_fft, n_mels)

    def __call__(self, x):
        return logmel(x, self.sr, self.n_fft, self.hop, self.n_mels,
                      self.window, filterbank=self.fb)

    def batch(self, clips):
        """Stack per-clip features into [N, 1, n_mels, n_frames]."""
        return np.stack([self(c) for c in clips])
