"""Shared test oracles, independent of the package's fast paths.

Everything here recomputes results the slow, obvious way: explicit loops
for convolution, an O(n^2) DFT, direct time-domain convolution, and
float64 central finite differences for gradients.
"""

import numpy as np

from scenekd import augment, tensor as T
from scenekd.distill import kd_loss, kd_loss_forward
from scenekd.tensor import Tensor


# ---------------------------------------------------------------------------
# slow reference implementations
# ---------------------------------------------------------------------------

def naive_conv2d(x, w, b=None, stride=(1, 1), padding=(0, 0), groups=1):
    """Six nested loops, float64, the obviously-correct cross-correlation."""
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    n, c, f, t = x.shape
    o, cpg, kf, kt = w.shape
    sf, st = stride
    pf, pt = padding
    xp = np.pad(x, ((0, 0), (0, 0), (pf, pf), (pt, pt)))
    fo = (f + 2 * pf - kf) // sf + 1
    to = (t + 2 * pt - kt) // st + 1
    og = o // groups
    out = np.zeros((n, o, fo, to))
    for ni in range(n):
        for oi in range(o):
            g = oi // og
            for fi in range(fo):
                for ti in range(to):
                    acc = 0.0
                    for ci in range(cpg):
                        for ki in range(kf):
                            for kj in range(kt):
                                acc += (xp[ni, g * cpg + ci, fi * sf + ki, ti * st + kj]
                                        * w[oi, ci, ki, kj])
                    out[ni, oi, fi, ti] = acc
    if b is not None:
        out += np.asarray(b, dtype=np.float64).reshape(1, o, 1, 1)
    return out


def naive_dft(x):
    """O(n^2) discrete Fourier transform, first n//2+1 bins."""
    x = np.asarray(x, dtype=np.float64)
    n = len(x)
    k = np.arange(n // 2 + 1)
    ang = -2j * np.pi * np.outer(k, np.arange(n)) / n
    return (np.exp(ang) * x).sum(axis=1)


def direct_conv_full(x, h):
    """O(n*m) time-domain full convolution."""
    x = np.asarray(x, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    out = np.zeros(len(x) + len(h) - 1)
    for i, hi in enumerate(h):
        out[i:i + len(x)] += hi * x
    return out


# ---------------------------------------------------------------------------
# finite differences
# ---------------------------------------------------------------------------

FD_H = 1e-3
FD_TOL = 1e-4


def fd_grad(f, x, h=FD_H):
    """Central-difference gradient of scalar f at x, elementwise, float64."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        xp = x.copy()
        xp[i] += h
        xm = x.copy()
        xm[i] -= h
        g[i] = (f(xp) - f(xm)) / (2 * h)
    return g


def rel_err(analytic, reference):
    return np.abs(np.asarray(analytic, dtype=np.float64) - reference).max() \
        / (np.abs(reference).max() + 1e-12)


def _away_from_kinks(x, margin=0.05):
    return np.where(np.abs(x) < margin, x + margin * np.where(x < 0, -1.0, 1.0), x)


def _proj_loss(out, r):
    return T.tsum(T.mul(out, Tensor(r)))


def _check(cases, name, tape_builder, raw_f, leaves, rng):
    """Compare taped gradients of sum(out * R) against float64 FD.

    ``tape_builder(tensors) -> Tensor out``; ``raw_f(arrays) -> float64
    out``; ``leaves`` is {leaf_name: base float64 array}.
    """
    tensors = {k: Tensor(v, requires_grad=True) for k, v in leaves.items()}
    out = tape_builder(tensors)
    r = rng.standard_normal(out.data.shape)
    loss = _proj_loss(out, r)
    T.backward(loss)
    for k, base in leaves.items():
        def f(xk, k=k):
            arrs = {kk: (xk if kk == k else vv) for kk, vv in leaves.items()}
            return float((raw_f(arrs) * r).sum())
        cases.append((f"{name}/d_{k}", rel_err(tensors[k].grad, fd_grad(f, base))))


def run_gradient_suite(seeds=range(5)):
    """Finite-difference checks for every differentiable op and the
    distillation loss grid. Returns [(case_name, rel_err)]."""
    cases = []
    for seed in seeds:
        rng = np.random.default_rng(4000 + seed)
        u = lambda *s: rng.uniform(-1.0, 1.0, s)

        _check(cases, f"s{seed}/conv2d",
               lambda t: T.conv2d(t["x"], t["w"], t["b"]),
               lambda a: T.conv2d_forward(a["x"], a["w"], a["b"]),
               {"x": u(2, 3, 5, 6), "w": u(4, 3, 3, 3), "b": u(4)}, rng)
        _check(cases, f"s{seed}/conv2d_strided",
               lambda t: T.conv2d(t["x"], t["w"], None, (2, 1), (1, 0)),
               lambda a: T.conv2d_forward(a["x"], a["w"], None, (2, 1), (1, 0)),
               {"x": u(2, 2, 6, 5), "w": u(3, 2, 3, 3)}, rng)
        _check(cases, f"s{seed}/conv2d_1x1",
               lambda t: T.conv2d(t["x"], t["w"], t["b"]),
               lambda a: T.conv2d_forward(a["x"], a["w"], a["b"]),
               {"x": u(2, 4, 4, 5), "w": u(3, 4, 1, 1), "b": u(3)}, rng)
        _check(cases, f"s{seed}/conv2d_1x1_strided",
               lambda t: T.conv2d(t["x"], t["w"], None, (2, 2)),
               lambda a: T.conv2d_forward(a["x"], a["w"], None, (2, 2)),
               {"x": u(2, 3, 5, 5), "w": u(4, 3, 1, 1)}, rng)
        _check(cases, f"s{seed}/conv2d_depthwise",
               lambda t: T.conv2d(t["x"], t["w"], t["b"], (2, 1), (1, 1), groups=4),
               lambda a: T.conv2d_forward(a["x"], a["w"], a["b"], (2, 1), (1, 1), 4),
               {"x": u(2, 4, 5, 5), "w": u(4, 1, 3, 3), "b": u(4)}, rng)
        _check(cases, f"s{seed}/conv2d_grouped",
               lambda t: T.conv2d(t["x"], t["w"], None, 1, (1, 1), groups=2),
               lambda a: T.conv2d_forward(a["x"], a["w"], None, 1, (1, 1), 2),
               {"x": u(2, 4, 5, 4), "w": u(6, 2, 3, 3)}, rng)

        _check(cases, f"s{seed}/batch_norm_train",
               lambda t: T.batch_norm(t["x"], t["gamma"], t["beta"],
                                      np.zeros(3, np.float32), np.ones(3, np.float32),
                                      training=True),
               lambda a: T.batch_norm_train_forward(a["x"], a["gamma"], a["beta"]),
               {"x": u(4, 3, 4, 5), "gamma": rng.uniform(0.5, 1.5, 3), "beta": u(3)},
               rng)
        rmean = rng.uniform(-0.5, 0.5, 3)
        rvar = rng.uniform(0.5, 1.5, 3)
        _check(cases, f"s{seed}/batch_norm_eval",
               lambda t: T.batch_norm(t["x"], t["gamma"], t["beta"],
                                       rmean.astype(np.float32), rvar.astype(np.float32),
                                       training=False),
               lambda a: T.batch_norm_forward(a["x"], a["gamma"], a["beta"], rmean, rvar),
               {"x": u(2, 3, 4, 5), "gamma": rng.uniform(0.5, 1.5, 3), "beta": u(3)},
               rng)

        _check(cases, f"s{seed}/relu",
               lambda t: T.relu(t["x"]),
               lambda a: T.relu_forward(a["x"]),
               {"x": _away_from_kinks(u(2, 3, 4, 5))}, rng)
        _check(cases, f"s{seed}/linear",
               lambda t: T.linear(t["x"], t["w"], t["b"]),
               lambda a: T.linear_forward(a["x"], a["w"], a["b"]),
               {"x": u(4, 6), "w": u(3, 6), "b": u(3)}, rng)
        _check(cases, f"s{seed}/global_avg_pool",
               lambda t: T.global_avg_pool(t["x"]),
               lambda a: T.global_avg_pool_forward(a["x"]),
               {"x": u(2, 3, 4, 5)}, rng)
        _check(cases, f"s{seed}/add",
               lambda t: T.add(t["a"], t["b"]),
               lambda a: a["a"] + a["b"],
               {"a": u(2, 3, 4), "b": u(2, 3, 4)}, rng)
        _check(cases, f"s{seed}/mul",
               lambda t: T.mul(t["a"], t["b"]),
               lambda a: a["a"] * a["b"],
               {"a": u(2, 3, 4), "b": u(2, 3, 4)}, rng)
        _check(cases, f"s{seed}/mul_scalar",
               lambda t: T.mul(t["a"], 0.7),
               lambda a: a["a"] * 0.7,
               {"a": u(2, 3, 4)}, rng)
        for tau in (1.0, 2.0, 5.0):
            _check(cases, f"s{seed}/softmax_tau{tau:g}",
                   lambda t, tau=tau: T.softmax_t(t["z"], tau),
                   lambda a, tau=tau: T.softmax_t_forward(a["z"], tau),
                   {"z": u(3, 6)}, rng)

        # MixStyle: gradients hold the mixing statistics fixed, so the
        # reference is the affine map with coefficients from the base input.
        xf = u(4, 1, 3, 6)
        perm = rng.permutation(4)
        lam = 0.37
        scale, shift = augment.fms_scale_shift(xf, lam, perm)
        _check(cases, f"s{seed}/fms_apply",
               lambda t: augment.fms_apply(t["x"], lam, perm),
               lambda a: a["x"] * scale + shift,
               {"x": xf}, rng)

        # distillation loss over the (lam, tau) grid
        z_t = u(4, 5)
        labels = rng.integers(0, 5, 4)
        for lam_ in (0.0, 0.02, 1.0):
            for tau_ in (1.0, 2.0, 5.0):
                zs = u(4, 5)
                st = Tensor(zs, requires_grad=True)
                loss = kd_loss(st, z_t, labels, lam_, tau_)
                T.backward(loss)
                gfd = fd_grad(lambda z: float(
                    kd_loss_forward(z, z_t, labels, lam_, tau_)), zs)
                cases.append((f"s{seed}/kd_loss_lam{lam_:g}_tau{tau_:g}",
                              rel_err(st.grad, gfd)))
    return cases
