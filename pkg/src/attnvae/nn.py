"""Neural network building blocks on top of the autodiff tape.

Recurrent layers follow the common LSTM cell with gate order
input, forget, cell, output and a forget-gate bias of one. The whole-sequence
LSTM is a fused primitive with a hand-derived backward pass: recording one
tape node per window batch instead of a few hundred per time step keeps
training runs on plain CPUs inside a practical budget. ``lstm_step`` builds
the identical cell out of elementary ops and exists so the fused gradients
can be cross-checked against the tape.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import expit

from . import autodiff as ad
from .autodiff import Tensor
from .errors import DimensionError

# -- initialisers --------------------------------------------------------


def glorot_uniform(rng: np.random.Generator, shape: tuple[int, ...],
                   fan_in: int | None = None, fan_out: int | None = None) -> np.ndarray:
    if fan_in is None:
        fan_in = shape[0]
    if fan_out is None:
        fan_out = shape[-1]
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def orthogonal(rng: np.random.Generator, n: int) -> np.ndarray:
    a = rng.standard_normal((n, n))
    q, r = np.linalg.qr(a)
    return q * np.sign(np.diag(r))


def lstm_init(rng: np.random.Generator, input_dim: int, hidden: int
              ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Input weights (F, 4H) glorot, recurrent (H, 4H) per-gate orthogonal,
    bias (4H,) zero except the forget block at one."""
    w = glorot_uniform(rng, (input_dim, 4 * hidden), fan_in=input_dim, fan_out=hidden)
    u = np.concatenate([orthogonal(rng, hidden) for _ in range(4)], axis=1)
    b = np.zeros(4 * hidden)
    b[hidden:2 * hidden] = 1.0
    return w, u, b


# -- dense ----------------------------------------------------------------


def dense(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Affine map over the trailing axis: x @ w + b."""
    return ad.add(ad.matmul(x, w), b)


# -- LSTM -----------------------------------------------------------------


def _split_gates(z: Tensor, hidden: int) -> tuple[Tensor, Tensor, Tensor, Tensor]:
    i = ad.sigmoid(z[..., 0 * hidden:1 * hidden])
    f = ad.sigmoid(z[..., 1 * hidden:2 * hidden])
    g = ad.tanh(z[..., 2 * hidden:3 * hidden])
    o = ad.sigmoid(z[..., 3 * hidden:4 * hidden])
    return i, f, g, o


def lstm_step(x_t: Tensor, h_prev: Tensor, c_prev: Tensor,
              w: Tensor, u: Tensor, b: Tensor) -> tuple[Tensor, Tensor]:
    """One cell update built from elementary ops; returns (h_t, c_t)."""
    hidden = c_prev.shape[-1]
    z = ad.add(ad.add(ad.matmul(x_t, w), ad.matmul(h_prev, u)), b)
    i, f, g, o = _split_gates(z, hidden)
    c_t = ad.add(ad.mul(f, c_prev), ad.mul(i, g))
    h_t = ad.mul(o, ad.tanh(c_t))
    return h_t, c_t


def lstm_sequence(x: Tensor, w: Tensor, u: Tensor, b: Tensor) -> Tensor:
    """Run an LSTM over x of shape (B, T, F); returns hidden states (B, T, H).

    Forward and backward are fused numpy loops over time; the backward pass
    is truncated nowhere and matches backpropagation through the unrolled
    cell exactly.
    """
    if x.ndim != 3:
        raise DimensionError(f"lstm_sequence: expected (B, T, F) input, got {x.shape}")
    hidden = u.shape[0]
    if w.shape[-1] != 4 * hidden or u.shape[-1] != 4 * hidden:
        raise DimensionError(
            f"lstm_sequence: weight shapes {w.shape}, {u.shape} disagree on hidden size")
    xd, wd, ud, bd = x.data, w.data, u.data, b.data
    n_batch, n_steps, _ = xd.shape

    hs = np.empty((n_batch, n_steps, hidden))
    cs = np.empty((n_batch, n_steps, hidden))
    gi = np.empty((n_batch, n_steps, hidden))
    gf = np.empty((n_batch, n_steps, hidden))
    gg = np.empty((n_batch, n_steps, hidden))
    go = np.empty((n_batch, n_steps, hidden))

    # one big input projection, then the sequential recurrence
    zx = xd @ wd + bd
    h_prev = np.zeros((n_batch, hidden))
    c_prev = np.zeros((n_batch, hidden))
    for t in range(n_steps):
        z = zx[:, t] + h_prev @ ud
        i = expit(z[:, 0 * hidden:1 * hidden])
        f = expit(z[:, 1 * hidden:2 * hidden])
        g = np.tanh(z[:, 2 * hidden:3 * hidden])
        o = expit(z[:, 3 * hidden:4 * hidden])
        c_prev = f * c_prev + i * g
        h_prev = o * np.tanh(c_prev)
        gi[:, t], gf[:, t], gg[:, t], go[:, t] = i, f, g, o
        cs[:, t], hs[:, t] = c_prev, h_prev

    def vjp(grad_out: np.ndarray):
        dx = np.empty_like(xd)
        dw = np.zeros_like(wd)
        du = np.zeros_like(ud)
        db = np.zeros_like(bd)
        dh_next = np.zeros((n_batch, hidden))
        dc_next = np.zeros((n_batch, hidden))
        dz = np.empty((n_batch, 4 * hidden))
        for t in range(n_steps - 1, -1, -1):
            i, f, g, o = gi[:, t], gf[:, t], gg[:, t], go[:, t]
            c_here = cs[:, t]
            c_prev_t = cs[:, t - 1] if t > 0 else np.zeros((n_batch, hidden))
            h_prev_t = hs[:, t - 1] if t > 0 else np.zeros((n_batch, hidden))
            dh = grad_out[:, t] + dh_next
            tc = np.tanh(c_here)
            dc = dc_next + dh * o * (1.0 - tc * tc)
            dz[:, 0 * hidden:1 * hidden] = dc * g * i * (1.0 - i)
            dz[:, 1 * hidden:2 * hidden] = dc * c_prev_t * f * (1.0 - f)
            dz[:, 2 * hidden:3 * hidden] = dc * i * (1.0 - g * g)
            dz[:, 3 * hidden:4 * hidden] = dh * tc * o * (1.0 - o)
            dx[:, t] = dz @ wd.T
            dw += xd[:, t].T @ dz
            du += h_prev_t.T @ dz
            db += dz.sum(axis=0)
            dh_next = dz @ ud.T
            dc_next = dc * f
        return dx, dw, du, db

    return ad.custom(hs, (x, w, u, b), vjp)


def reverse_time(x: Tensor) -> Tensor:
    """Flip a (B, T, F) tensor along its time axis."""
    return x[:, ::-1]


def bilstm(x: Tensor, params: dict[str, Tensor], return_sequences: bool = True) -> Tensor:
    """Bidirectional LSTM over (B, T, F); ``params`` holds fw_w, fw_u, fw_b,
    bw_w, bw_u, bw_b.

    With ``return_sequences`` the per-step outputs of both directions are
    concatenated to (B, T, 2H); otherwise the final states of both directions
    are concatenated to (B, 2H).
    """
    if x.ndim != 3 or x.shape[1] < 1:
        raise DimensionError(f"bilstm: expected non-empty (B, T, F) input, got {x.shape}")
    fwd = lstm_sequence(x, params["fw_w"], params["fw_u"], params["fw_b"])
    bwd = lstm_sequence(reverse_time(x), params["bw_w"], params["bw_u"], params["bw_b"])
    if return_sequences:
        return ad.concat([fwd, reverse_time(bwd)], axis=-1)
    return ad.concat([fwd[:, -1], bwd[:, -1]], axis=-1)


def bilstm_init(rng: np.random.Generator, input_dim: int, hidden: int) -> dict[str, np.ndarray]:
    fw = lstm_init(rng, input_dim, hidden)
    bw = lstm_init(rng, input_dim, hidden)
    return {"fw_w": fw[0], "fw_u": fw[1], "fw_b": fw[2],
            "bw_w": bw[0], "bw_u": bw[1], "bw_b": bw[2]}


# -- attention ------------------------------------------------------------


def _project_heads(x: Tensor, w: Tensor, n_heads: int, d_head: int) -> Tensor:
    """(B, T, F) @ (F, h*d) -> (B, h, T, d)."""
    n_batch, n_steps, _ = x.shape
    p = ad.matmul(x, w)
    p = ad.reshape(p, (n_batch, n_steps, n_heads, d_head))
    return ad.permute(p, (0, 2, 1, 3))


def multi_head_attention(query: Tensor, key: Tensor, value: Tensor,
                         params: dict[str, Tensor], n_heads: int,
                         return_weights: bool = False):
    """Scaled dot-product attention with per-head projections.

    Queries and keys come from the observed window, values from the latent
    matrix; the concatenated heads are projected back to the value width.
    Returns (B, T, d_out), plus the (B, h, T, T) weights when asked.
    """
    d_head = params["w_q"].shape[-1] // n_heads
    q = _project_heads(query, params["w_q"], n_heads, d_head)
    k = _project_heads(key, params["w_k"], n_heads, d_head)
    v = _project_heads(value, params["w_v"], n_heads, d_head)
    scores = ad.mul(ad.matmul(q, ad.transpose_last(k)), 1.0 / math.sqrt(d_head))
    weights = ad.softmax_rows(scores)
    mixed = ad.matmul(weights, v)
    n_batch, n_steps = query.shape[0], query.shape[1]
    mixed = ad.reshape(ad.permute(mixed, (0, 2, 1, 3)), (n_batch, n_steps, n_heads * d_head))
    out = ad.matmul(mixed, params["w_o"])
    if return_weights:
        return out, weights
    return out


def attention_init(rng: np.random.Generator, d_query: int, d_value: int,
                   n_heads: int, d_head: int) -> dict[str, np.ndarray]:
    """Projections for queries/keys from d_query, values from d_value; the
    output projection returns to d_value."""
    width = n_heads * d_head
    return {"w_q": glorot_uniform(rng, (d_query, width)),
            "w_k": glorot_uniform(rng, (d_query, width)),
            "w_v": glorot_uniform(rng, (d_value, width)),
            "w_o": glorot_uniform(rng, (width, d_value))}
