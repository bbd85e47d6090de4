"""Shared test utilities: finite-difference gradient checking and loop oracles."""

import contextlib

import numpy as np

from epsr import tensor as T
from epsr.tensor import GradTape, backward


def conv2d_loops(x, w, b=None, padding=0, dilation=1):
    """Direct six-nested-loop cross-correlation reference (zero padding, stride 1)."""
    n, cin, h, wdt = x.shape
    cout, _, kh, kw = w.shape
    ho = h + 2 * padding - dilation * (kh - 1)
    wo = wdt + 2 * padding - dilation * (kw - 1)
    out = np.zeros((n, cout, ho, wo), dtype=np.float64)
    for ni in range(n):
        for co in range(cout):
            for y in range(ho):
                for xx in range(wo):
                    acc = 0.0
                    for ci in range(cin):
                        for ky in range(kh):
                            for kx in range(kw):
                                iy = y + ky * dilation - padding
                                ix = xx + kx * dilation - padding
                                if 0 <= iy < h and 0 <= ix < wdt:
                                    acc += x[ni, ci, iy, ix] * w[co, ci, ky, kx]
                    out[ni, co, y, xx] = acc
            if b is not None:
                out[ni, co] += b[co]
    return out


def conv1d_channel_loops(x, kern):
    """Nested-loop reference for the cross-channel 1-D convolution."""
    n, c = x.shape[:2]
    k = len(kern)
    half = (k - 1) // 2
    out = np.zeros((n, c), dtype=np.float64)
    for ni in range(n):
        for ci in range(c):
            acc = 0.0
            for j in range(k):
                src = ci + j - half
                if 0 <= src < c:
                    acc += kern[j] * x[ni, src, 0, 0]
            out[ni, ci] = acc
    return out.reshape(n, c, 1, 1)


@contextlib.contextmanager
def record_kink_distance(holder):
    """Track how close any relu/absolute input comes to its kink at zero.

    Central differences are only trustworthy when no perturbation crosses a
    non-differentiable point; tests use this to pick seeds whose activations
    stay clear of zero by a margin much larger than the step size.
    """
    orig_relu, orig_abs = T.relu, T.absolute

    def relu(x):
        holder["min"] = min(holder["min"], float(np.abs(x.data).min()))
        return orig_relu(x)

    def absolute(x):
        holder["min"] = min(holder["min"], float(np.abs(x.data).min()))
        return orig_abs(x)

    T.relu, T.absolute = relu, absolute
    try:
        yield holder
    finally:
        T.relu, T.absolute = orig_relu, orig_abs


def kink_distance(make_loss) -> float:
    holder = {"min": np.inf}
    with record_kink_distance(holder):
        make_loss()
    return holder["min"]


@contextlib.contextmanager
def _record_signs(sink):
    """Collect the sign pattern of every relu/absolute input, in call order."""
    orig_relu, orig_abs = T.relu, T.absolute

    def relu(x):
        sink.append(x.data >= 0)
        return orig_relu(x)

    def absolute(x):
        sink.append(x.data >= 0)
        return orig_abs(x)

    T.relu, T.absolute = relu, absolute
    try:
        yield sink
    finally:
        T.relu, T.absolute = orig_relu, orig_abs


def max_fd_error(make_loss, tensors, h=1e-3, coords_per_tensor=None, seed=0,
                 skip_kink_crossings=False, stats=None):
    """Max relative error between analytic and central finite-difference grads.

    ``make_loss`` rebuilds the scalar loss from the current tensor contents;
    it is re-evaluated with individual coordinates of each tensor perturbed
    by +/-h.  The relative error uses a floor of 1 in the denominator so
    near-zero gradients are compared absolutely.  All tensors should be
    float64 for a trustworthy comparison.

    With ``skip_kink_crossings`` a coordinate is dropped when its +h and -h
    evaluations disagree on the sign of any relu/absolute input: straddling
    a kink makes the central difference estimate something other than the
    derivative.  ``stats`` (a dict) receives checked/skipped counts.
    """
    tape = GradTape()
    with tape:
        loss = make_loss()
    backward(loss, tape)
    analytic = [t.grad.reshape(-1).copy() if t.grad is not None else None
                for t in tensors]
    rng = np.random.default_rng(seed)
    worst = 0.0
    checked = skipped = 0
    for t, grad in zip(tensors, analytic):
        assert grad is not None, "tensor received no gradient"
        flat = t.data.reshape(-1)
        if coords_per_tensor is None or coords_per_tensor >= flat.size:
            idxs = np.arange(flat.size)
        else:
            idxs = rng.choice(flat.size, size=coords_per_tensor, replace=False)
        for i in idxs:
            orig = flat[i]
            if skip_kink_crossings:
                signs_p, signs_m = [], []
                flat[i] = orig + h
                with _record_signs(signs_p):
                    fp = make_loss().item()
                flat[i] = orig - h
                with _record_signs(signs_m):
                    fm = make_loss().item()
                flat[i] = orig
                if any(np.any(sp != sm) for sp, sm in zip(signs_p, signs_m)):
                    skipped += 1
                    continue
            else:
                flat[i] = orig + h
                fp = make_loss().item()
                flat[i] = orig - h
                fm = make_loss().item()
                flat[i] = orig
            numeric = (fp - fm) / (2.0 * h)
            err = abs(grad[i] - numeric) / max(1.0, abs(grad[i]), abs(numeric))
            worst = max(worst, err)
            checked += 1
    if stats is not None:
        stats["checked"] = checked
        stats["skipped"] = skipped
    return worst
