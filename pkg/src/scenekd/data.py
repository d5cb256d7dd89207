"""Clip manifests and a synthetic acoustic-scene corpus.

A dataset is a directory with WAV clips and a ``manifest.csv`` holding
``clip_path,scene,device,split`` rows; clip paths are relative to the
manifest. Clip ids are filename stems and must be unique.

The toy generator synthesizes parametric scene textures (tone stacks plus
band-limited noise, distinct per scene) recorded through simulated devices
(fixed FIR coloration plus gain). A subset of devices never appears in the
train split, so device generalization is measurable on the val split.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import audio

MANIFEST_HEADER = ["clip_path", "scene", "device", "split"]


@dataclass(frozen=True)
class ClipEntry:
    clip_id: str
    path: Path
    scene: str
    device: str
    split: str


class SceneDataset:
    """All manifest rows plus label maps and the unseen-device set."""

    def __init__(self, manifest_path):
        self.manifest_path = Path(manifest_path)
        root = self.manifest_path.parent
        entries = []
        with open(self.manifest_path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header != MANIFEST_HEADER:
                raise ValueError(
                    f"{manifest_path}: expected header {','.join(MANIFEST_HEADER)}, "
                    f"got {header}")
            for lineno, row in enumerate(reader, start=2):
                if not row:
                    continue
                if len(row) != 4:
                    raise ValueError(f"{manifest_path}:{lineno}: expected 4 fields, got {len(row)}")
                rel, scene, device, split = row
                entries.append(ClipEntry(Path(rel).stem, root / rel, scene, device, split))
        if not entries:
            raise ValueError(f"{manifest_path}: manifest holds no clips")
        ids = [e.clip_id for e in entries]
        if len(set(ids)) != len(ids):
            dup = sorted({i for i in ids if ids.count(i) > 1})[:3]
            raise ValueError(f"{manifest_path}: duplicate clip ids (e.g. {dup})")
        self.entries = entries
        self.scenes = sorted({e.scene for e in entries})
        self.scene_to_idx = {s: i for i, s in enumerate(self.scenes)}
        self.devices = sorted({e.device for e in entries})
        train_devices = {e.device for e in entries if e.split == "train"}
        self.unseen_devices = {e.device for e in entries} - train_devices

    @property
    def n_classes(self):
        return len(self.scenes)

    def split(self, name):
        out = [e for e in self.entries if e.split == name]
        if not out:
            raise ValueError(f"no clips in split {name!r} of {self.manifest_path}")
        return out

    def label(self, entry):
        return self.scene_to_idx[entry.scene]

    def load_clip(self, entry):
        x, sr = audio.load_wav(entry.path)
        if sr != audio.SR:
            raise ValueError(f"{entry.path}: expected {audio.SR} Hz, got {sr}")
        return x


# ---------------------------------------------------------------------------
# toy corpus
# ---------------------------------------------------------------------------

def _scene_texture(scene, n, sr, rng):
    """Scene identity is temporal: a shared band-noise carrier gated by a
    pulse train whose rate and duty cycle are scene-specific. Per-frequency
    energy profiles stay scene-neutral, so spectral statistics carry device
    rather than scene information and style mixing preserves labels."""
    t = np.arange(n) / sr
    rate = 2.0 * 1.325 ** scene       # 2.0 .. 25.2 pulses per second
    duty = 0.25 + 0.045 * scene
    phase = (t * rate + rng.uniform(0.0, 1.0)) % 1.0
    env = np.where(phase < duty, 1.0, 0.0)
    taper = np.hanning(257)           # ~8 ms edges, no clicks
    env = np.convolve(env, taper / taper.sum(), mode="same")
    env = 0.08 + 0.92 * env

    spec = np.fft.rfft(rng.standard_normal(n))
    freqs = np.fft.rfftfreq(n, 1.0 / sr)
    spec[(freqs < 300.0) | (freqs > 6000.0)] = 0.0
    carrier = np.fft.irfft(spec, n)
    carrier /= np.abs(carrier).max() + 1e-12

    x = env * carrier
    return x / (np.abs(x).max() + 1e-12) * 0.5


def _device_responses(n_devices, seed):
    """Fixed per-device FIR coloration and gain, derived only from the seed."""
    out = []
    for d in range(n_devices):
        rng = np.random.default_rng(np.random.SeedSequence([seed, 999, d]))
        taps = rng.standard_normal(7) * np.exp(-np.arange(7) / 2.5)
        taps[0] += 2.0
        taps /= np.sqrt((taps ** 2).sum())
        gain = rng.uniform(0.55, 1.0)
        out.append((taps, gain))
    return out


def _render_clip(scene, fir, gain, n, sr, rng):
    x = _scene_texture(scene, n, sr, rng)
    y = np.convolve(x, fir, mode="full")[:n] * gain
    peak = np.abs(y).max()
    if peak > 0.95:
        y *= 0.95 / peak
    return y


def make_toy_dataset(root, clips_per_cell=4, seed=0, n_scenes=10, n_devices=9,
                     n_unseen=3, sr=audio.SR, clip_seconds=1.2):
    """Generate the corpus under ``root`` and return its manifest path.

    Train covers scenes x seen devices x clips_per_cell; val covers scenes x
    all devices x max(1, clips_per_cell // 2), so the last ``n_unseen``
    devices occur only in val.
    """
    if n_unseen >= n_devices:
        raise ValueError(f"need at least one seen device ({n_unseen} unseen of {n_devices})")
    if clips_per_cell < 1:
        raise ValueError(f"clips_per_cell must be >= 1, got {clips_per_cell}")
    root = Path(root)
    (root / "audio").mkdir(parents=True, exist_ok=True)
    n = int(round(clip_seconds * sr))
    devices = _device_responses(n_devices, seed)
    n_seen = n_devices - n_unseen

    rows = []
    for split, split_code, device_range, per_cell in (
        ("train", 0, range(n_seen), clips_per_cell),
        ("val", 1, range(n_devices), max(1, clips_per_cell // 2)),
    ):
        for s in range(n_scenes):
            for d in device_range:
                fir, gain = devices[d]
                for i in range(per_cell):
                    rng = np.random.default_rng(
                        np.random.SeedSequence([seed, split_code, s, d, i]))
                    y = _render_clip(s, fir, gain, n, sr, rng)
                    name = f"s{s:02d}_d{d}_{split}_{i:03d}.wav"
                    audio.save_wav_pcm16(root / "audio" / name, y, sr)
                    rows.append([f"audio/{name}", f"scene{s:02d}", f"d{d}", split])

    manifest = root / "manifest.csv"
    with open(manifest, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(MANIFEST_HEADER)
        writer.writerows(rows)
    return manifest
