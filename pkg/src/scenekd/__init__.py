"""Low-complexity acoustic scene classifiers trained by logit distillation.

Everything is numpy end to end: a small reverse-mode tape (``tensor``),
CNN model builders with complexity accounting (``models``), a log-mel
frontend (``audio``), waveform/spectrogram augmentations (``augment``),
the distillation loss and logit stores (``distill``), and a training
harness plus experiment matrix driver (``harness``, ``matrix``).
"""

__version__ = "0.1.0"
