"""CNN classifiers for log-mel scenes, with parameter/MAC accounting.

Two families share a stem/three-stage/head skeleton:

* ``cpm``: depthwise-separable inverted bottlenecks (the student family,
  sized to fit the 128 K parameter / 30 M MAC deployment budget at its
  default width),
* ``cpr``: residual blocks that go 1x1-only in the late stages to keep the
  receptive field modest (a teacher family).

Widths scale with ``base_channels``; parameters grow roughly quadratically,
so each family spans ~128 K to ~8 M parameters across its width ladder.

Complexity rules: parameters count conv/linear weights and biases plus
batch-norm affine pairs (running stats excluded); MACs count one
multiply-accumulate per conv/linear product term (batch norm, activations,
pooling and residual adds count zero).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .checkpoint import load_checkpoint, save_checkpoint
from .tensor import Tensor

INPUT_SHAPE = (1, 64, 101)  # (channels, mel bands, frames) for 1 s at 32 kHz
MAX_PARAMS = 128_000
MAX_MACS = 30_000_000


@dataclass
class ModelConfig:
    arch: str = "cpm"
    base_channels: int = 32
    n_classes: int = 10
    expansion: float = 3.0    # cpm bottleneck expansion on block input width
    width_mult: float = 2.3   # cpm stage-3 widening factor

    def validate(self):
        if self.arch not in ("cpm", "cpr"):
            raise ValueError(f"unknown arch {self.arch!r} (use 'cpm' or 'cpr')")
        if self.base_channels < 2:
            raise ValueError(f"base_channels must be >= 2, got {self.base_channels}")
        if self.n_classes < 2:
            raise ValueError(f"n_classes must be >= 2, got {self.n_classes}")
        if self.expansion <= 0 or self.width_mult <= 0:
            raise ValueError("expansion and width_mult must be positive")
        return self


class BudgetError(ValueError):
    pass


# ---------------------------------------------------------------------------
# layers
# ---------------------------------------------------------------------------

class Module:
    def children(self):
        return []

    def own_params(self):
        return []

    def own_buffers(self):
        return []

    def named_params(self):
        out = list(self.own_params())
        for cname, child in self.children():
            out.extend((f"{cname}.{n}", p) for n, p in child.named_params())
        return out

    def named_buffers(self):
        out = list(self.own_buffers())
        for cname, child in self.children():
            out.extend((f"{cname}.{n}", b) for n, b in child.named_buffers())
        return out

    def complexity(self, in_shape):
        """Return ([(layer_name, params, macs)], out_shape) for ``in_shape``
        given as (channels, freq, time)."""
        rows = []
        shape = in_shape
        for cname, child in self.children():
            crows, shape = child.complexity(shape)
            rows.extend((f"{cname}.{n}" if n else cname, p, m) for n, p, m in crows)
        return rows, shape


class Conv2d(Module):
    def __init__(self, in_ch, out_ch, kernel, stride=1, padding=0, groups=1,
                 bias=False, rng=None):
        self.in_ch = in_ch
        self.out_ch = out_ch
        self.kernel = T._pair(kernel)
        self.stride = T._pair(stride)
        self.padding = T._pair(padding)
        self.groups = groups
        kf, kt = self.kernel
        fan_in = (in_ch // groups) * kf * kt
        std = np.sqrt(2.0 / fan_in)
        rng = rng if rng is not None else np.random.default_rng(0)
        self.w = Tensor(rng.normal(0.0, std, (out_ch, in_ch // groups, kf, kt)),
                        requires_grad=True)
        self.b = Tensor(np.zeros(out_ch), requires_grad=True) if bias else None

    def own_params(self):
        out = [("w", self.w)]
        if self.b is not None:
            out.append(("b", self.b))
        return out

    def __call__(self, x, training=False):
        return T.conv2d(x, self.w, self.b, self.stride, self.padding, self.groups)

    def complexity(self, in_shape):
        c, f, t = in_shape
        if c != self.in_ch:
            raise ValueError(f"conv expects {self.in_ch} channels, got {c}")
        kf, kt = self.kernel
        sf, st = self.stride
        pf, pt = self.padding
        fo = (f + 2 * pf - kf) // sf + 1
        to = (t + 2 * pt - kt) // st + 1
        if fo <= 0 or to <= 0:
            raise ValueError(f"conv output collapses to {fo}x{to} from input {f}x{t}")
        params = self.out_ch * (self.in_ch // self.groups) * kf * kt
        if self.b is not None:
            params += self.out_ch
        macs = fo * to * self.out_ch * kf * kt * (self.in_ch // self.groups)
        return [("", params, macs)], (self.out_ch, fo, to)


class BatchNorm2d(Module):
    def __init__(self, ch, momentum=0.1, eps=1e-5):
        self.ch = ch
        self.momentum = momentum
        self.eps = eps
        self.gamma = Tensor(np.ones(ch), requires_grad=True)
        self.beta = Tensor(np.zeros(ch), requires_grad=True)
        self.running_mean = np.zeros(ch, dtype=np.float32)
        self.running_var = np.ones(ch, dtype=np.float32)

    def own_params(self):
        return [("gamma", self.gamma), ("beta", self.beta)]

    def own_buffers(self):
        return [("running_mean", self.running_mean), ("running_var", self.running_var)]

    def __call__(self, x, training=False):
        return T.batch_norm(x, self.gamma, self.beta, self.running_mean,
                            self.running_var, training, self.momentum, self.eps)

    def complexity(self, in_shape):
        return [("", 2 * self.ch, 0)], in_shape


class ConvBNReLU(Module):
    def __init__(self, in_ch, out_ch, kernel, stride, rng, groups=1):
        k = T._pair(kernel)
        self.conv = Conv2d(in_ch, out_ch, k, stride, (k[0] // 2, k[1] // 2),
                           groups=groups, rng=rng)
        self.bn = BatchNorm2d(out_ch)

    def children(self):
        return [("conv", self.conv), ("bn", self.bn)]

    def __call__(self, x, training=False):
        return T.relu(self.bn(self.conv(x), training))


class InvertedBottleneck(Module):
    """1x1 expand -> 3x3 depthwise -> 1x1 project, residual when shapes match."""

    def __init__(self, in_ch, out_ch, expansion, stride, rng):
        hidden = max(int(round(in_ch * expansion)), in_ch)
        self.stride = T._pair(stride)
        self.residual = in_ch == out_ch and self.stride == (1, 1)
        self.expand = Conv2d(in_ch, hidden, 1, rng=rng)
        self.bn1 = BatchNorm2d(hidden)
        self.dw = Conv2d(hidden, hidden, 3, stride, 1, groups=hidden, rng=rng)
        self.bn2 = BatchNorm2d(hidden)
        self.proj = Conv2d(hidden, out_ch, 1, rng=rng)
        self.bn3 = BatchNorm2d(out_ch)

    def children(self):
        return [("expand", self.expand), ("bn1", self.bn1), ("dw", self.dw),
                ("bn2", self.bn2), ("proj", self.proj), ("bn3", self.bn3)]

    def __call__(self, x, training=False):
        h = T.relu(self.bn1(self.expand(x), training))
        h = T.relu(self.bn2(self.dw(h), training))
        h = self.bn3(self.proj(h), training)
        return T.add(h, x) if self.residual else h


class ResidualBlock(Module):
    """conv-bn-relu-conv-bn plus a (possibly projected) shortcut, then relu."""

    def __init__(self, in_ch, out_ch, k1, k2, stride, rng):
        self.stride = T._pair(stride)
        k1 = T._pair(k1)
        k2 = T._pair(k2)
        self.conv1 = Conv2d(in_ch, out_ch, k1, stride, (k1[0] // 2, k1[1] // 2), rng=rng)
        self.bn1 = BatchNorm2d(out_ch)
        self.conv2 = Conv2d(out_ch, out_ch, k2, 1, (k2[0] // 2, k2[1] // 2), rng=rng)
        self.bn2 = BatchNorm2d(out_ch)
        if in_ch == out_ch and self.stride == (1, 1):
            self.proj = None
            self.bnp = None
        else:
            self.proj = Conv2d(in_ch, out_ch, 1, stride, rng=rng)
            self.bnp = BatchNorm2d(out_ch)

    def children(self):
        out = [("conv1", self.conv1), ("bn1", self.bn1),
               ("conv2", self.conv2), ("bn2", self.bn2)]
        if self.proj is not None:
            out += [("proj", self.proj), ("bnp", self.bnp)]
        return out

    def __call__(self, x, training=False):
        h = T.relu(self.bn1(self.conv1(x), training))
        h = self.bn2(self.conv2(h), training)
        s = x if self.proj is None else self.bnp(self.proj(x), training)
        return T.relu(T.add(h, s))

    def complexity(self, in_shape):
        rows = []
        r1, main_shape = self.conv1.complexity(in_shape)
        rows.extend((f"conv1.{n}" if n else "conv1", p, m) for n, p, m in r1)
        rb, main_shape = self.bn1.complexity(main_shape)
        rows.extend((f"bn1", p, m) for _, p, m in rb)
        r2, main_shape = self.conv2.complexity(main_shape)
        rows.extend(("conv2", p, m) for _, p, m in r2)
        rb2, main_shape = self.bn2.complexity(main_shape)
        rows.extend(("bn2", p, m) for _, p, m in rb2)
        if self.proj is not None:
            rp, proj_shape = self.proj.complexity(in_shape)
            rows.extend(("proj", p, m) for _, p, m in rp)
            rbp, proj_shape = self.bnp.complexity(proj_shape)
            rows.extend(("bnp", p, m) for _, p, m in rbp)
            if proj_shape != main_shape:
                raise ValueError(
                    f"shortcut shape {proj_shape} does not match main path {main_shape}")
        return rows, main_shape


class Head(Module):
    """1x1 conv to class channels, then global average pooling to logits."""

    def __init__(self, in_ch, n_classes, rng, with_bn=True):
        self.conv = Conv2d(in_ch, n_classes, 1, bias=not with_bn, rng=rng)
        self.bn = BatchNorm2d(n_classes) if with_bn else None

    def children(self):
        return [("conv", self.conv)] + ([("bn", self.bn)] if self.bn else [])

    def __call__(self, x, training=False):
        h = self.conv(x)
        if self.bn is not None:
            h = self.bn(h, training)
        return T.global_avg_pool(h)

    def complexity(self, in_shape):
        rows, shape = super().complexity(in_shape)
        return rows, (shape[0],)


# ---------------------------------------------------------------------------
# the classifier container
# ---------------------------------------------------------------------------

class SceneClassifier(Module):
    def __init__(self, config, blocks):
        self.config = config
        self.blocks = blocks  # ordered [(name, Module)]

    def children(self):
        return self.blocks

    def __call__(self, x, training=False):
        if not isinstance(x, Tensor):
            x = Tensor(x)
        for _, block in self.blocks:
            x = block(x, training)
        return x

    def params(self):
        return [p for _, p in self.named_params()]

    def state_dict(self):
        state = {n: p.data for n, p in self.named_params()}
        state.update({n: b for n, b in self.named_buffers()})
        return state

    def load_state_dict(self, state):
        own = dict(self.named_params())
        bufs = dict(self.named_buffers())
        expected = set(own) | set(bufs)
        got = {k for k in state if not k.startswith("_meta/")}
        if expected != got:
            missing = sorted(expected - got)[:3]
            extra = sorted(got - expected)[:3]
            raise ValueError(f"state dict mismatch: missing {missing}, unexpected {extra}")
        for n, p in own.items():
            arr = np.asarray(state[n], dtype=np.float32)
            if arr.shape != p.data.shape:
                raise ValueError(f"shape mismatch for {n}: {arr.shape} vs {p.data.shape}")
            p.data = np.ascontiguousarray(arr)
        for n, b in bufs.items():
            arr = np.asarray(state[n], dtype=np.float32)
            if arr.shape != b.shape:
                raise ValueError(f"shape mismatch for {n}: {arr.shape} vs {b.shape}")
            b[...] = arr


def build_model(config, seed=0):
    """Construct a classifier from its config; weights drawn from ``seed``."""
    config.validate()
    rng = np.random.default_rng(np.random.SeedSequence([77, seed]))
    if config.arch == "cpm":
        return _build_cpm(config, rng)
    return _build_cpr(config, rng)


def _build_cpm(cfg, rng):
    bc = cfg.base_channels
    w3 = int(round(bc * cfg.width_mult))
    blocks = [
        ("stem1", ConvBNReLU(1, max(bc // 2, 1), 3, (2, 2), rng)),
        ("stem2", ConvBNReLU(max(bc // 2, 1), bc, 3, (2, 1), rng)),
        ("s1b1", InvertedBottleneck(bc, bc, cfg.expansion, 1, rng)),
        ("s1b2", InvertedBottleneck(bc, bc, cfg.expansion, 1, rng)),
        ("s2b1", InvertedBottleneck(bc, bc, cfg.expansion, (2, 2), rng)),
        ("s2b2", InvertedBottleneck(bc, bc, cfg.expansion, 1, rng)),
        ("s2b3", InvertedBottleneck(bc, bc, cfg.expansion, 1, rng)),
        ("s3b1", InvertedBottleneck(bc, w3, cfg.expansion, (2, 2), rng)),
        ("s3b2", InvertedBottleneck(w3, w3, cfg.expansion, 1, rng)),
        ("s3b3", InvertedBottleneck(w3, w3, cfg.expansion, 1, rng)),
        ("head", Head(w3, cfg.n_classes, rng, with_bn=True)),
    ]
    return SceneClassifier(cfg, blocks)


def _build_cpr(cfg, rng):
    b = cfg.base_channels
    blocks = [
        ("stem", ConvBNReLU(1, b, 5, (2, 2), rng)),
        ("s1b1", ResidualBlock(b, b, 3, 3, (2, 2), rng)),
        ("s1b2", ResidualBlock(b, b, 3, 3, 1, rng)),
        ("s2b1", ResidualBlock(b, 2 * b, 3, 1, (2, 2), rng)),
        ("s2b2", ResidualBlock(2 * b, 2 * b, 1, 1, 1, rng)),
        ("s3b1", ResidualBlock(2 * b, 4 * b, 1, 1, (2, 2), rng)),
        ("s3b2", ResidualBlock(4 * b, 4 * b, 1, 1, 1, rng)),
        ("head", Head(4 * b, cfg.n_classes, rng, with_bn=False)),
    ]
    return SceneClassifier(cfg, blocks)


# ---------------------------------------------------------------------------
# complexity accounting
# ---------------------------------------------------------------------------

@dataclass
class ComplexityReport:
    rows: list = field(default_factory=list)  # [(name, params, macs)]
    params: int = 0
    macs: int = 0

    def table(self):
        lines = [f"{'layer':<24}{'params':>10}{'MACs':>14}"]
        for name, p, m in self.rows:
            lines.append(f"{name:<24}{p:>10}{m:>14}")
        lines.append(f"{'total':<24}{self.params:>10}{self.macs:>14}")
        return "\n".join(lines)


def count_complexity(model, input_shape=INPUT_SHAPE):
    rows, _ = model.complexity(input_shape)
    return ComplexityReport(rows=rows,
                            params=sum(p for _, p, _ in rows),
                            macs=sum(m for _, _, m in rows))


def assert_budget(model, input_shape=INPUT_SHAPE,
                  max_params=MAX_PARAMS, max_macs=MAX_MACS):
    """Raise BudgetError naming the first layer whose cumulative cost breaks
    either limit. A model with no counted layers passes vacuously."""
    report = count_complexity(model, input_shape)
    cp = cm = 0
    for name, p, m in report.rows:
        cp += p
        cm += m
        if cp > max_params:
            raise BudgetError(
                f"parameter budget exceeded at layer '{name}': "
                f"{cp} cumulative > {max_params} (model total {report.params})")
        if cm > max_macs:
            raise BudgetError(
                f"MAC budget exceeded at layer '{name}': "
                f"{cm} cumulative > {max_macs} (model total {report.macs})")
    return report


# ---------------------------------------------------------------------------
# checkpoint round trip
# ---------------------------------------------------------------------------

_ARCH_CODE = {"cpm": 0.0, "cpr": 1.0}
_ARCH_NAME = {v: k for k, v in _ARCH_CODE.items()}


def save_model(model, path):
    state = model.state_dict()
    cfg = model.config
    state["_meta/arch"] = np.float32(_ARCH_CODE[cfg.arch])
    state["_meta/base_channels"] = np.float32(cfg.base_channels)
    state["_meta/n_classes"] = np.float32(cfg.n_classes)
    state["_meta/expansion"] = np.float32(cfg.expansion)
    state["_meta/width_mult"] = np.float32(cfg.width_mult)
    save_checkpoint(path, state)


def model_from_checkpoint(path):
    state = load_checkpoint(path)
    try:
        # hyperparameters ride along as f32 scalars; 6 decimals recovers them
        cfg = ModelConfig(
            arch=_ARCH_NAME[float(state["_meta/arch"])],
            base_channels=int(state["_meta/base_channels"]),
            n_classes=int(state["_meta/n_classes"]),
            expansion=round(float(state["_meta/expansion"]), 6),
            width_mult=round(float(state["_meta/width_mult"]), 6),
        )
    except KeyError as e:
        raise ValueError(f"{path}: checkpoint lacks model metadata ({e})") from None
    model = build_model(cfg, seed=0)
    model.load_state_dict(state)
    return model
