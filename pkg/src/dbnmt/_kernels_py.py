"""Pure numpy implementations of the hot elementwise kernels.

Every function here has a twin with the same signature in ``_ckernels.pyx``.
Inputs are C-contiguous 2-D arrays of a single float dtype; outputs are
freshly allocated arrays of that dtype.
"""

import numpy as np


def _sigmoid(a):
    return 0.5 * (np.tanh(0.5 * a) + 1.0)


def gru_gates(gx, ghzr, h):
    """Update/reset gates of a GRU step.

    ``gx`` is (B, 3H) holding the input projections ``[z | r | n]`` (bias
    included), ``ghzr`` is (B, 2H) with the recurrent projections of the
    update and reset gates. Returns ``(z, r, r * h)``.
    """
    H = h.shape[1]
    z = _sigmoid(gx[:, :H] + ghzr[:, :H])
    r = _sigmoid(gx[:, H:2 * H] + ghzr[:, H:])
    return z, r, r * h


def gru_output(gx, ghn, h, z, mask):
    """Candidate state and masked blend. Returns ``(n, out)``."""
    H = h.shape[1]
    n = np.tanh(gx[:, 2 * H:] + ghn)
    new = h + z * (n - h)
    m = mask[:, None]
    return n, m * new + (1.0 - m) * h


def gru_backward_a(g, mask, h, z, n):
    """First half of the GRU backward pass.

    Returns ``(da, dh)`` where ``da`` is (B, 3H) with the pre-activation
    gradients of the update gate and candidate filled in (reset-gate slot
    left at zero) and ``dh`` is the partial gradient w.r.t. ``h``.
    """
    H = h.shape[1]
    m = mask[:, None]
    gnew = m * g
    da = np.zeros((h.shape[0], 3 * H), dtype=h.dtype)
    da[:, :H] = gnew * (n - h) * z * (1.0 - z)
    da[:, 2 * H:] = gnew * z * (1.0 - n * n)
    dh = (1.0 - m) * g + gnew * (1.0 - z)
    return da, dh


def gru_backward_b(drh, h, r, da, dh):
    """Second half: fold the gradient w.r.t. ``r * h`` into ``da`` and ``dh`` in place."""
    H = h.shape[1]
    da[:, H:2 * H] = drh * h * r * (1.0 - r)
    dh += drh * r


def log_softmax_rows(x):
    """Row-wise log-softmax of a 2-D array."""
    shifted = x - x.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def max_over_time(x, valid):
    """Per-channel maximum over the first ``valid[b]`` time steps.

    ``x`` is (B, T, C), ``valid`` an int64 array of length B with
    ``1 <= valid[b] <= T``. Returns ``(values, argmax)``, both (B, C); ties go
    to the lowest time index.
    """
    B, T, C = x.shape
    steps = np.arange(T)[None, :, None]
    masked = np.where(steps < valid[:, None, None], x, -np.inf)
    idx = masked.argmax(axis=1)
    vals = np.take_along_axis(x, idx[:, None, :], axis=1)[:, 0, :]
    return np.ascontiguousarray(vals), idx.astype(np.int64)


def max_over_time_backward(g, argmax, T):
    B, C = g.shape
    out = np.zeros((B, T, C), dtype=g.dtype)
    np.put_along_axis(out, argmax[:, None, :], g[:, None, :], axis=1)
    return out
