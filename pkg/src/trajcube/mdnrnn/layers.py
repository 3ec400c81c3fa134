"""Forward/backward primitives: dense, ELU, valid convolution, packed LSTM."""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def elu(x):
    return np.where(x > 0, x, np.expm1(np.minimum(x, 0.0)))


def elu_backward(dy, y):
    """Gradient through ELU given its output ``y``."""
    return dy * np.where(y > 0, 1.0, y + 1.0)


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


# -- convolution (NHWC, no padding) -------------------------------------------

def _patches(x, k, stride):
    win = sliding_window_view(x, (k, k), axis=(1, 2))[:, ::stride, ::stride]
    # (N, Ho, Wo, C, kh, kw) -> (N, Ho, Wo, kh, kw, C)
    return np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3))


def conv_output_size(size, k, stride):
    return (size - k) // stride + 1


def conv_forward(x, W, b, stride, return_patches=False):
    """Valid convolution.  ``x`` (N, H, W, C), ``W`` (k, k, C, F).

    With ``return_patches`` the im2col buffer is returned too so the backward
    pass can reuse it.
    """
    k = W.shape[0]
    p = _patches(x, k, stride)
    n, ho, wo = p.shape[:3]
    out = (p.reshape(n * ho * wo, -1) @ W.reshape(-1, W.shape[-1]) + b).reshape(n, ho, wo, W.shape[-1])
    return (out, p) if return_patches else out


def conv_backward(dout, x, W, stride, need_dx=True, patches=None):
    k = W.shape[0]
    p = _patches(x, k, stride) if patches is None else patches
    n, ho, wo = p.shape[:3]
    f = W.shape[-1]
    d2 = dout.reshape(-1, f)
    dW = (p.reshape(n * ho * wo, -1).T @ d2).reshape(W.shape)
    db = d2.sum(axis=0)
    if not need_dx:
        return None, dW, db
    dp = (d2 @ W.reshape(-1, f).T).reshape(n, ho, wo, k, k, x.shape[-1])
    dx = np.zeros_like(x)
    for i in range(k):
        for j in range(k):
            dx[:, i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride, :] += dp[:, :, :, i, j, :]
    return dx, dW, db


# -- packed sequences ---------------------------------------------------------

@dataclass(frozen=True)
class Packing:
    """Time-major layout of variable-length sequences sorted longest first.

    Step ``t`` holds rows for the first ``batch_sizes[t]`` sequences, stored
    contiguously at ``offsets[t]``.  Nothing past a sequence's end is ever
    computed, so no padding enters the recurrence.
    """

    lengths: tuple  # per sequence, in sorted (descending) order
    batch_sizes: tuple
    offsets: tuple

    @classmethod
    def from_lengths(cls, lengths: Sequence[int]) -> "Packing":
        lengths = tuple(int(n) for n in lengths)
        if any(b > a for a, b in zip(lengths, lengths[1:])):
            raise ValueError("lengths must be sorted in descending order")
        steps = lengths[0] if lengths else 0
        sizes = tuple(sum(1 for n in lengths if n > t) for t in range(steps))
        offsets = tuple(int(v) for v in np.concatenate([[0], np.cumsum(sizes)[:-1]])) if sizes else ()
        return cls(lengths, sizes, offsets)

    @property
    def total(self) -> int:
        return int(sum(self.batch_sizes))

    def pack(self, seqs: Sequence[np.ndarray]) -> np.ndarray:
        """Interleave per-sequence arrays (len_b, ...) into packed rows."""
        starts = np.concatenate([[0], np.cumsum(self.lengths)[:-1]]).astype(np.int64)
        rows = np.concatenate([starts[:n] + t for t, n in enumerate(self.batch_sizes)]) \
            if self.batch_sizes else np.zeros(0, dtype=np.int64)
        return np.concatenate([np.asarray(s)[:n] for s, n in zip(seqs, self.lengths)])[rows] \
            if len(seqs) else np.zeros(0)

    def unpack(self, packed: np.ndarray) -> List[np.ndarray]:
        out = []
        for b, n in enumerate(self.lengths):
            idx = [self.offsets[t] + b for t in range(n)]
            out.append(packed[idx])
        return out


def lstm_forward(xw, Wh, h0, c0, packing: Packing):
    """Run one LSTM layer over packed inputs.

    ``xw`` holds the precomputed input projections ``x @ Wx + b`` (rows in
    packed order).  Gate order is input, forget, cell, output.  Returns the
    packed hidden outputs, the final (h, c) per sequence and a cache.
    """
    hsz = Wh.shape[0]
    h = h0.copy()
    c = c0.copy()
    total = packing.total
    hs = np.empty((total, hsz))
    gates = np.empty((total, 4 * hsz))
    cs = np.empty((total, hsz))
    c_prev = np.empty((total, hsz))
    h_prev = np.empty((total, hsz))
    for t, n in enumerate(packing.batch_sizes):
        o = packing.offsets[t]
        sl = slice(o, o + n)
        z = xw[sl] + h[:n] @ Wh
        i_g = sigmoid(z[:, :hsz])
        f_g = sigmoid(z[:, hsz:2 * hsz])
        g_g = np.tanh(z[:, 2 * hsz:3 * hsz])
        o_g = sigmoid(z[:, 3 * hsz:])
        c_new = f_g * c[:n] + i_g * g_g
        h_new = o_g * np.tanh(c_new)
        h_prev[sl] = h[:n]
        c_prev[sl] = c[:n]
        gates[sl] = np.concatenate([i_g, f_g, g_g, o_g], axis=1)
        cs[sl] = c_new
        hs[sl] = h_new
        h[:n] = h_new
        c[:n] = c_new
    return hs, (h, c), (gates, cs, c_prev, h_prev)


def lstm_backward(dhs, dh_final, dc_final, Wh, cache, packing: Packing):
    """Backpropagate through :func:`lstm_forward`.

    Returns gradients with respect to the packed input projections, ``Wh``
    and the initial (h, c).
    """
    gates, cs, c_prev, h_prev = cache
    hsz = Wh.shape[0]
    dh = dh_final.copy()
    dc = dc_final.copy()
    dxw = np.empty_like(gates)
    dWh = np.zeros_like(Wh)
    for t in range(len(packing.batch_sizes) - 1, -1, -1):
        n = packing.batch_sizes[t]
        o = packing.offsets[t]
        sl = slice(o, o + n)
        g = gates[sl]
        i_g, f_g, g_g, o_g = g[:, :hsz], g[:, hsz:2 * hsz], g[:, 2 * hsz:3 * hsz], g[:, 3 * hsz:]
        tc = np.tanh(cs[sl])
        dh_t = dh[:n] + dhs[sl]
        dct = dc[:n] + dh_t * o_g * (1.0 - tc * tc)
        dz = np.concatenate([
            dct * g_g * i_g * (1.0 - i_g),
            dct * c_prev[sl] * f_g * (1.0 - f_g),
            dct * i_g * (1.0 - g_g * g_g),
            dh_t * tc * o_g * (1.0 - o_g),
        ], axis=1)
        dxw[sl] = dz
        dWh += h_prev[sl].T @ dz
        dh[:n] = dz @ Wh.T
        dc[:n] = dct * f_g
    return dxw, dWh, dh, dc
