"""Training and evaluation loops.

Training follows one recipe for teachers and students alike: shifted crops
and optional impulse-response convolution on waveforms, log-mel features,
optional frequency MixStyle on the feature batch, Adam with linear warmup
and cosine decay. Students differ only in the loss (distillation against a
logit store) and in the enforced complexity budget.

Evaluation uses deterministic center crops. The reporting protocol
evaluates after every epoch, keeps checkpoints of the last ``keep_last``
epochs, and for multi-run training aggregates accuracy as the plain mean
over runs x last ``keep_last`` epochs.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import augment, audio
from .distill import LogitStore, ce_loss, kd_loss
from .models import assert_budget, build_model, save_model
from .optim import Adam, WarmupCosine
from .tensor import Tensor, assert_finite, backward, no_grad


@dataclass
class TrainSettings:
    epochs: int = 12
    batch_size: int = 32
    lr: float = 5e-3
    warmup_epochs: int = 4
    seed: int = 0
    runs: int = 1
    keep_last: int = 4
    crop_seconds: float = 1.0
    # distillation: lam = 1 is plain cross-entropy and needs no teacher
    lam: float = 1.0
    tau: float = 2.0
    # device generalization knobs (see config.dg_params)
    alpha_fms: float = 0.3
    p_fms: float = 0.4
    p_dir: float = 0.6
    enforce_budget: bool = False

    def validate(self):
        if self.epochs < 1 or self.batch_size < 1 or self.runs < 1:
            raise ValueError("epochs, batch_size and runs must be positive")
        if self.warmup_epochs < 0:
            raise ValueError(f"warmup_epochs must be >= 0, got {self.warmup_epochs}")
        if self.keep_last < 1:
            raise ValueError(f"keep_last must be >= 1, got {self.keep_last}")
        return self


@dataclass
class MetricsReport:
    n: int
    correct: int
    n_unseen: int
    correct_unseen: int

    @property
    def overall_acc(self):
        return self.correct / self.n

    @property
    def unseen_acc(self):
        return self.correct_unseen / self.n_unseen if self.n_unseen else None


@dataclass
class RunResult:
    history: list                      # per-epoch MetricsReport
    train_losses: list                 # per-epoch mean loss
    checkpoints: list                  # paths of the kept last epochs
    final_checkpoint: Path


@dataclass
class TrainResult:
    runs: list                         # RunResult per run
    eval_overall: list = field(default_factory=list)  # runs x keep_last values
    eval_unseen: list = field(default_factory=list)

    @property
    def overall_acc(self):
        return float(np.mean(self.eval_overall))

    @property
    def unseen_acc(self):
        vals = [v for v in self.eval_unseen if v is not None]
        return float(np.mean(vals)) if vals else None


def metrics_from_predictions(pred_by_id, entries, dataset):
    """Accuracy overall and on clips from devices absent in train."""
    n = correct = n_unseen = correct_unseen = 0
    for e in entries:
        if e.clip_id not in pred_by_id:
            raise KeyError(f"no prediction for clip {e.clip_id!r}")
        hit = int(pred_by_id[e.clip_id] == dataset.label(e))
        n += 1
        correct += hit
        if e.device in dataset.unseen_devices:
            n_unseen += 1
            correct_unseen += hit
    return MetricsReport(n, correct, n_unseen, correct_unseen)


def _batches(items, size):
    for i in range(0, len(items), size):
        yield items[i:i + size]


def _features(entries, dataset, frontend, crop_len, aug_rng=None, irs=None, p_dir=0.0):
    clips = []
    for e in entries:
        x = dataset.load_clip(e)
        if aug_rng is None:
            x = augment.center_crop(x, crop_len)
        else:
            x = augment.shifted_crop(x, crop_len, aug_rng)
            x = augment.maybe_apply_ir(x, irs, p_dir, aug_rng)
        clips.append(x)
    return frontend.batch(clips)


def predict_logits(model, entries, dataset, batch_size=32, frontend=None):
    """Center-crop eval-mode logits keyed by clip id."""
    frontend = frontend or audio.LogmelFrontend()
    crop_len = audio.SR  # 1 s eval view
    out = {}
    with no_grad():
        for batch in _batches(entries, batch_size):
            feats = _features(batch, dataset, frontend, crop_len)
            logits = model(Tensor(feats), training=False).data
            for e, vec in zip(batch, logits):
                out[e.clip_id] = vec.copy()
    return out


def evaluate(model, dataset, split="val", batch_size=32, frontend=None):
    entries = dataset.split(split)
    logits = predict_logits(model, entries, dataset, batch_size, frontend)
    preds = {cid: int(np.argmax(v)) for cid, v in logits.items()}
    return metrics_from_predictions(preds, entries, dataset)


def evaluate_store(store, dataset, split="val"):
    """Metrics for stored logits (a trained model's export or an ensemble)."""
    entries = dataset.split(split)
    preds = {e.clip_id: int(np.argmax(store.get(e.clip_id))) for e in entries}
    return metrics_from_predictions(preds, entries, dataset)


def export_logits(model, dataset, entries=None, batch_size=32, frontend=None):
    """Run the model over clips and collect a LogitStore."""
    entries = entries if entries is not None else dataset.entries
    logits = predict_logits(model, entries, dataset, batch_size, frontend)
    store = LogitStore(model.config.n_classes)
    for cid in sorted(logits):
        assert_finite(logits[cid], f"exported logits for {cid!r}")
        store.add(cid, logits[cid])
    return store


def train_model(model, dataset, settings, workdir, teacher_store=None,
                ir_bank=None, frontend=None, log=None):
    """Train one model; returns a RunResult with per-epoch metrics.

    ``teacher_store`` must cover every train clip when ``settings.lam`` < 1.
    Checkpoints of the last ``keep_last`` epochs persist under ``workdir``.
    """
    settings.validate()
    workdir = Path(workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    if settings.enforce_budget:
        assert_budget(model)
    if settings.lam < 1.0 and teacher_store is None:
        raise ValueError("distillation (lam < 1) requires a teacher logit store")

    train_entries = dataset.split("train")
    frontend = frontend or audio.LogmelFrontend()
    crop_len = int(round(settings.crop_seconds * audio.SR))
    if ir_bank is None and settings.p_dir > 0:
        ir_bank = augment.default_ir_bank()

    ss = np.random.SeedSequence([settings.seed])
    shuffle_rng, aug_rng = (np.random.default_rng(s) for s in ss.spawn(2))

    steps_per_epoch = (len(train_entries) + settings.batch_size - 1) // settings.batch_size
    schedule = WarmupCosine(settings.lr, settings.warmup_epochs * steps_per_epoch,
                            settings.epochs * steps_per_epoch)
    opt = Adam(model.params(), schedule=schedule)

    labels_by_id = {e.clip_id: dataset.label(e) for e in dataset.entries}
    history, train_losses, kept = [], [], []
    for epoch in range(1, settings.epochs + 1):
        order = shuffle_rng.permutation(len(train_entries))
        epoch_losses = []
        for idx_batch in _batches(order, settings.batch_size):
            batch = [train_entries[i] for i in idx_batch]
            feats = _features(batch, dataset, frontend, crop_len,
                              aug_rng, ir_bank, settings.p_dir)
            x = Tensor(feats)
            if settings.p_fms > 0:
                x = augment.freq_mixstyle(x, settings.alpha_fms, settings.p_fms, aug_rng)
            logits = model(x, training=True)
            labels = np.array([labels_by_id[e.clip_id] for e in batch])
            if settings.lam < 1.0:
                zt = teacher_store.matrix([e.clip_id for e in batch])
                loss = kd_loss(logits, zt, labels, settings.lam, settings.tau)
            else:
                loss = ce_loss(logits, labels)
            assert_finite(loss, f"train loss at epoch {epoch}")
            opt.zero_grad()
            backward(loss)
            opt.step()
            epoch_losses.append(loss.item())
        train_losses.append(float(np.mean(epoch_losses)))

        report = evaluate(model, dataset, "val", settings.batch_size, frontend)
        history.append(report)
        ckpt = workdir / f"epoch_{epoch:03d}.dfck"
        save_model(model, ckpt)
        kept.append(ckpt)
        if len(kept) > settings.keep_last:
            kept.pop(0).unlink()
        if log:
            extra = f" unseen={report.unseen_acc:.3f}" if report.unseen_acc is not None else ""
            log(f"  epoch {epoch:3d}/{settings.epochs}  loss={train_losses[-1]:.4f}  "
                f"val={report.overall_acc:.3f}{extra}")

    return RunResult(history, train_losses, list(kept), kept[-1])


def train_runs(model_config, dataset, settings, workdir, teacher_store=None,
               ir_bank=None, log=None):
    """Independent runs of the same recipe; aggregates the last-epoch block.

    The reported accuracy is the mean over ``runs`` x ``keep_last`` stored
    per-epoch evaluations.
    """
    settings.validate()
    workdir = Path(workdir)
    result = TrainResult(runs=[])
    for r in range(settings.runs):
        run_seed = int(np.random.SeedSequence([settings.seed, r]).generate_state(1)[0])
        model = build_model(model_config, seed=run_seed)
        if log:
            log(f"run {r + 1}/{settings.runs} (seed {settings.seed}/{r})")
        rr = train_model(model, dataset, replace(settings, seed=run_seed),
                         workdir / f"run{r}", teacher_store, ir_bank, log=log)
        result.runs.append(rr)
        for report in rr.history[-settings.keep_last:]:
            result.eval_overall.append(report.overall_acc)
            result.eval_unseen.append(report.unseen_acc)
    return result
