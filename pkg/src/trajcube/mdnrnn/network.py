"""Encoder-decoder recurrent mixture density network with a convolutional weather encoder.

The encoder embeds the normalized flight plan and runs a stacked LSTM; its
final (h, c) per layer seeds the decoder.  At each decoder step the state and
the feature-cube encoding are embedded together and fed to the decoder LSTM,
whose top output is mapped to mixture parameters for the next state.

All arrays are float64.  Parameters live in an ordered ``dict`` of name to
array; shapes are derived from :class:`ModelConfig` alone.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .layers import (Packing, conv_backward, conv_forward, conv_output_size, elu, elu_backward,
                     lstm_backward, lstm_forward)
from .mixture import STATE_DIM, MixtureParams, head_nll_and_grad, head_width, split_head

Params = Dict[str, np.ndarray]
Bundle = List[Tuple[np.ndarray, np.ndarray]]


@dataclass(frozen=True)
class ModelConfig:
    n_components: int = 3
    plan_embed: int = 32
    enc_hidden: int = 128
    enc_layers: int = 2
    state_embed: int = 64
    dec_hidden: int = 128
    dec_layers: int = 2
    # (filters, kernel, stride) per convolutional layer
    conv: tuple = ((16, 6, 2), (16, 3, 1), (32, 3, 1))
    conv_dense: int = 32
    cube_shape: tuple = (20, 20, 4)
    mu_activation: str = "identity"
    # component means are offsets from the input state when set
    mu_residual: bool = False
    # optional fixed affine step applied to the input state before the offset:
    # 25 row-major matrix entries then 5 offsets (empty means identity)
    residual_map: tuple = ()
    transfer_cell: bool = True
    forget_bias: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "conv", tuple(tuple(int(v) for v in c) for c in self.conv))
        object.__setattr__(self, "cube_shape", tuple(int(v) for v in self.cube_shape))
        if self.n_components < 1:
            raise ValueError("need at least one mixture component")
        if self.enc_hidden != self.dec_hidden or self.enc_layers != self.dec_layers:
            raise ValueError("encoder and decoder must share hidden size and depth")
        object.__setattr__(self, "residual_map", tuple(float(v) for v in self.residual_map))
        if len(self.residual_map) not in (0, STATE_DIM * STATE_DIM + STATE_DIM):
            raise ValueError("residual_map needs 30 entries (5x5 matrix and 5 offsets)")
        if self.residual_map and not self.mu_residual:
            raise ValueError("residual_map requires mu_residual")
        if self.mu_activation not in ("identity", "elu"):
            raise ValueError("mu_activation must be 'identity' or 'elu'")
        h, w, _ = self.cube_shape
        for filters, k, stride in self.conv:
            h, w = conv_output_size(h, k, stride), conv_output_size(w, k, stride)
            if h < 1 or w < 1:
                raise ValueError("convolution stack does not fit the cube shape")

    def residual_base(self, state) -> np.ndarray:
        """Point the component offsets are measured from, for states (..., 5)."""
        if not self.residual_map:
            return state
        m = np.asarray(self.residual_map[:25]).reshape(STATE_DIM, STATE_DIM)
        return state @ m.T + np.asarray(self.residual_map[25:])

    @property
    def head_width(self) -> int:
        return head_width(self.n_components)

    def conv_shapes(self) -> List[Tuple[int, int, int]]:
        """Output (H, W, C) of every convolutional layer."""
        h, w, _ = self.cube_shape
        out = []
        for filters, k, stride in self.conv:
            h, w = conv_output_size(h, k, stride), conv_output_size(w, k, stride)
            out.append((h, w, filters))
        return out

    def param_shapes(self) -> Dict[str, tuple]:
        shapes = {"plan_embed.W": (2, self.plan_embed), "plan_embed.b": (self.plan_embed,)}
        hid = self.enc_hidden
        for l in range(self.enc_layers):
            n_in = self.plan_embed if l == 0 else hid
            shapes[f"enc{l}.Wx"] = (n_in, 4 * hid)
            shapes[f"enc{l}.Wh"] = (hid, 4 * hid)
            shapes[f"enc{l}.b"] = (4 * hid,)
        c_in = self.cube_shape[2]
        for i, (filters, k, _) in enumerate(self.conv):
            shapes[f"conv{i}.W"] = (k, k, c_in, filters)
            shapes[f"conv{i}.b"] = (filters,)
            c_in = filters
        h, w, c = self.conv_shapes()[-1]
        shapes["conv_dense.W"] = (h * w * c, self.conv_dense)
        shapes["conv_dense.b"] = (self.conv_dense,)
        shapes["state_embed.W"] = (STATE_DIM + self.conv_dense, self.state_embed)
        shapes["state_embed.b"] = (self.state_embed,)
        hid = self.dec_hidden
        for l in range(self.dec_layers):
            n_in = self.state_embed if l == 0 else hid
            shapes[f"dec{l}.Wx"] = (n_in, 4 * hid)
            shapes[f"dec{l}.Wh"] = (hid, 4 * hid)
            shapes[f"dec{l}.b"] = (4 * hid,)
        shapes["head.W"] = (hid, self.head_width)
        shapes["head.b"] = (self.head_width,)
        return shapes

    def to_json(self) -> dict:
        d = asdict(self)
        d["conv"] = [list(c) for c in self.conv]
        d["cube_shape"] = list(self.cube_shape)
        d["residual_map"] = list(self.residual_map)
        return d

    @classmethod
    def from_json(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        if "conv" in d:
            d["conv"] = tuple(tuple(c) for c in d["conv"])
        if "cube_shape" in d:
            d["cube_shape"] = tuple(d["cube_shape"])
        return cls(**d)


def init_params(cfg: ModelConfig, seed: int = 0) -> Params:
    """Uniform fan-in scaled weights, zero biases, LSTM forget bias ``cfg.forget_bias``."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in cfg.param_shapes().items():
        if name.endswith(".b"):
            p = np.zeros(shape)
            if name.startswith(("enc", "dec")):
                hid = shape[0] // 4
                p[hid:2 * hid] = cfg.forget_bias
        else:
            fan_in = int(np.prod(shape[:-1]))
            lim = 1.0 / np.sqrt(fan_in)
            p = rng.uniform(-lim, lim, size=shape)
        params[name] = p
    return params


def check_params(params: Params, cfg: ModelConfig) -> None:
    for name, shape in cfg.param_shapes().items():
        if name not in params:
            raise ValueError(f"missing parameter tensor {name}")
        if tuple(params[name].shape) != tuple(shape):
            raise ValueError(f"parameter {name} has shape {params[name].shape}, expected {shape}")
        if not np.all(np.isfinite(params[name])):
            raise ValueError(f"parameter {name} is not finite")


# -- single-sequence / inference API -------------------------------------------

def encode_plan(plan, params: Params, cfg: ModelConfig) -> Bundle:
    """Final (h, c) of every encoder layer for one normalized plan (n, 2)."""
    plan = np.asarray(plan, dtype=np.float64)
    if plan.ndim != 2 or plan.shape[0] == 0:
        raise ValueError("plan must be a non-empty (n, 2) array")
    bundle, _ = _encoder_forward([plan], params, cfg)
    return [(h[0].copy(), c[0].copy()) for h, c in bundle]


def encode_plans(plans: Sequence[np.ndarray], params: Params, cfg: ModelConfig) -> Bundle:
    """Batched encoder; returns per-layer (h, c) with one row per plan in input order."""
    bundle, _ = _encoder_forward(plans, params, cfg)
    return bundle


def cube_features(cubes, params: Params, cfg: ModelConfig, chunk: int = 1024) -> np.ndarray:
    """Convolutional encoding of cubes (N, H, W, 4) into (N, conv_dense)."""
    cubes = np.asarray(cubes, dtype=np.float64)
    if cubes.shape[1:] != cfg.cube_shape:
        raise ValueError(f"cube shape {cubes.shape[1:]} != {cfg.cube_shape}")
    out = np.empty((cubes.shape[0], cfg.conv_dense))
    for lo in range(0, cubes.shape[0], chunk):
        out[lo:lo + chunk] = _conv_forward(cubes[lo:lo + chunk], params, cfg)[0]
    return out


def conv_forward_cube(cube, params: Params, cfg: ModelConfig) -> np.ndarray:
    """32-wide encoding of a single cube (H, W, 4)."""
    cube = np.asarray(cube, dtype=np.float64)
    if cube.shape != cfg.cube_shape:
        raise ValueError(f"cube shape {cube.shape} != {cfg.cube_shape}")
    return cube_features(cube[None], params, cfg)[0]


def conv_activations(cubes, params: Params, cfg: ModelConfig, layer: int) -> np.ndarray:
    """Feature maps after convolutional layer ``layer`` (1-based)."""
    if not 1 <= layer <= len(cfg.conv):
        raise ValueError(f"layer must be in 1..{len(cfg.conv)}")
    _, (acts, _) = _conv_forward(np.asarray(cubes, dtype=np.float64), params, cfg)
    return acts[layer]


def decoder_step(bundle: Bundle, state, cube, params: Params, cfg: ModelConfig):
    """Advance the decoder one step for a batch.

    ``state`` (B, 5) and ``cube`` (B, H, W, 4) are normalized.  Returns the new
    bundle and :class:`MixtureParams` with leading dim B describing the next
    state.
    """
    state = np.atleast_2d(np.asarray(state, dtype=np.float64))
    cube = np.asarray(cube, dtype=np.float64)
    if cube.ndim == 3:
        cube = cube[None]
    if not (np.all(np.isfinite(state)) and np.all(np.isfinite(cube))):
        raise ValueError("decoder inputs must be finite")
    feats = cube_features(cube, params, cfg)
    x = elu(np.concatenate([state, feats], axis=1) @ params["state_embed.W"] + params["state_embed.b"])
    new = []
    for l, (h, c) in enumerate(bundle):
        h = np.atleast_2d(h)
        c = np.atleast_2d(c)
        hid = h.shape[1]
        z = x @ params[f"dec{l}.Wx"] + params[f"dec{l}.b"] + h @ params[f"dec{l}.Wh"]
        i_g = _sig(z[:, :hid])
        f_g = _sig(z[:, hid:2 * hid])
        g_g = np.tanh(z[:, 2 * hid:3 * hid])
        o_g = _sig(z[:, 3 * hid:])
        c_new = f_g * c + i_g * g_g
        h_new = o_g * np.tanh(c_new)
        new.append((h_new, c_new))
        x = h_new
    raw = x @ params["head.W"] + params["head.b"]
    mix = split_head(raw, cfg.n_components, cfg.mu_activation)
    if cfg.mu_residual:
        mix = replace(mix, mu=mix.mu + cfg.residual_base(state)[:, None, :])
    return new, mix


def initial_decoder_bundle(enc_bundle: Bundle, cfg: ModelConfig) -> Bundle:
    if cfg.transfer_cell:
        return [(h.copy(), c.copy()) for h, c in enc_bundle]
    return [(h.copy(), np.zeros_like(c)) for h, c in enc_bundle]


def _sig(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


# -- batched training forward/backward ------------------------------------------

@dataclass
class FlightSample:
    """One normalized training flight: plan (n, 2), states (T, 5), cubes (T, H, W, 4)."""

    plan: np.ndarray
    states: np.ndarray
    cubes: np.ndarray

    def __post_init__(self):
        if self.states.shape[0] != self.cubes.shape[0]:
            raise ValueError("track and cube sequences differ in length")
        if self.plan.shape[0] == 0:
            raise ValueError("empty plan")


def _encoder_forward(plans, params, cfg):
    order = sorted(range(len(plans)), key=lambda i: (-len(plans[i]), i))
    packing = Packing.from_lengths([len(plans[i]) for i in order])
    x_in = packing.pack([np.asarray(plans[i], dtype=np.float64) for i in order])
    e = elu(x_in @ params["plan_embed.W"] + params["plan_embed.b"])
    n = len(plans)
    layer_in = e
    finals = []
    caches = []
    for l in range(cfg.enc_layers):
        xw = layer_in @ params[f"enc{l}.Wx"] + params[f"enc{l}.b"]
        zeros = np.zeros((n, cfg.enc_hidden))
        hs, (h, c), cache = lstm_forward(xw, params[f"enc{l}.Wh"], zeros, zeros, packing)
        caches.append((layer_in, cache))
        finals.append((h, c))
        layer_in = hs
    inv = np.empty(n, dtype=np.int64)
    inv[np.asarray(order, dtype=np.int64)] = np.arange(n)
    bundle = [(h[inv], c[inv]) for h, c in finals]
    return bundle, (order, packing, x_in, e, caches)


def _encoder_backward(d_bundle, params, cfg, state, grads):
    order, packing, x_in, e, caches = state
    order = np.asarray(order, dtype=np.int64)
    d_above = None
    for l in range(cfg.enc_layers - 1, -1, -1):
        layer_in, cache = caches[l]
        dh_f = d_bundle[l][0][order]
        dc_f = d_bundle[l][1][order]
        dhs = np.zeros((packing.total, cfg.enc_hidden)) if d_above is None else d_above
        dxw, dWh, _, _ = lstm_backward(dhs, dh_f, dc_f, params[f"enc{l}.Wh"], cache, packing)
        grads[f"enc{l}.Wh"] += dWh
        grads[f"enc{l}.Wx"] += layer_in.T @ dxw
        grads[f"enc{l}.b"] += dxw.sum(axis=0)
        d_above = dxw @ params[f"enc{l}.Wx"].T
    de = elu_backward(d_above, e)
    grads["plan_embed.W"] += x_in.T @ de
    grads["plan_embed.b"] += de.sum(axis=0)


def _conv_forward(cubes, params, cfg):
    acts = [cubes]
    patches = []
    x = cubes
    for i, (_, _, stride) in enumerate(cfg.conv):
        z, p = conv_forward(x, params[f"conv{i}.W"], params[f"conv{i}.b"], stride, return_patches=True)
        x = elu(z)
        acts.append(x)
        patches.append(p)
    flat = x.reshape(x.shape[0], -1)
    out = elu(flat @ params["conv_dense.W"] + params["conv_dense.b"])
    return out, (acts, patches)


def _conv_backward(dout, out, cache, params, cfg, grads):
    acts, patches = cache
    dflat = elu_backward(dout, out)
    flat = acts[-1].reshape(acts[-1].shape[0], -1)
    grads["conv_dense.W"] += flat.T @ dflat
    grads["conv_dense.b"] += dflat.sum(axis=0)
    dx = (dflat @ params["conv_dense.W"].T).reshape(acts[-1].shape)
    for i in range(len(cfg.conv) - 1, -1, -1):
        stride = cfg.conv[i][2]
        dz = elu_backward(dx, acts[i + 1])
        dx, dW, db = conv_backward(dz, acts[i], params[f"conv{i}.W"], stride, need_dx=i > 0,
                                   patches=patches[i])
        grads[f"conv{i}.W"] += dW
        grads[f"conv{i}.b"] += db


def loss_and_grads(batch: Sequence[FlightSample], params: Params, cfg: ModelConfig,
                   conv_chunk: int = 1024, input_noise: Optional[Sequence[np.ndarray]] = None):
    """Teacher-forced summed NLL over a batch and its gradient for every tensor.

    Decoder step ``t`` consumes the true state and cube at ``t`` and scores
    the true state at ``t + 1``.  ``input_noise`` (one (T, 5) array per
    sample) perturbs the consumed states only, never the targets.  Returns
    ``(loss, grads, n_targets)``.
    """
    grads = {k: np.zeros_like(v) for k, v in params.items()}
    dec_lengths = [s.states.shape[0] - 1 for s in batch]
    active = [i for i, n in enumerate(dec_lengths) if n > 0]
    if not active:
        return 0.0, grads, 0
    samples = [batch[i] for i in active]
    n_seq = len(samples)

    enc_bundle, enc_state = _encoder_forward([s.plan for s in samples], params, cfg)
    init = initial_decoder_bundle(enc_bundle, cfg)

    order = sorted(range(n_seq), key=lambda i: (-dec_lengths[active[i]], i))
    order_a = np.asarray(order, dtype=np.int64)
    packing = Packing.from_lengths([dec_lengths[active[i]] for i in order])
    if input_noise is None:
        states_in = packing.pack([samples[i].states[:-1] for i in order])
    else:
        noise = [input_noise[j] for j in active]
        states_in = packing.pack([samples[i].states[:-1] + noise[i][:-1] for i in order])
    targets = packing.pack([samples[i].states[1:] for i in order])
    cubes_in = packing.pack([samples[i].cubes[:-1] for i in order])

    total = packing.total
    feats = np.empty((total, cfg.conv_dense))
    conv_cache = []
    for lo in range(0, total, conv_chunk):
        out, acts = _conv_forward(cubes_in[lo:lo + conv_chunk], params, cfg)
        feats[lo:lo + conv_chunk] = out
        conv_cache.append((lo, out, acts))

    emb_in = np.concatenate([states_in, feats], axis=1)
    emb = elu(emb_in @ params["state_embed.W"] + params["state_embed.b"])

    layer_in = emb
    caches = []
    finals = []
    for l in range(cfg.dec_layers):
        xw = layer_in @ params[f"dec{l}.Wx"] + params[f"dec{l}.b"]
        h0 = init[l][0][order_a]
        c0 = init[l][1][order_a]
        hs, fin, cache = lstm_forward(xw, params[f"dec{l}.Wh"], h0, c0, packing)
        caches.append((layer_in, cache))
        finals.append(fin)
        layer_in = hs
    top = layer_in
    raw = top @ params["head.W"] + params["head.b"]
    # a residual mean shifts every component by the input state; scoring the
    # shifted target is the same density with the same head gradient
    tgt = targets - cfg.residual_base(states_in) if cfg.mu_residual else targets
    loss, draw = head_nll_and_grad(raw, tgt, cfg.n_components, cfg.mu_activation)

    # backward
    grads["head.W"] += top.T @ draw
    grads["head.b"] += draw.sum(axis=0)
    d_above = draw @ params["head.W"].T
    d_init = [None] * cfg.dec_layers
    zeros = np.zeros((n_seq, cfg.dec_hidden))
    for l in range(cfg.dec_layers - 1, -1, -1):
        lin, cache = caches[l]
        dxw, dWh, dh0, dc0 = lstm_backward(d_above, zeros, zeros, params[f"dec{l}.Wh"], cache, packing)
        grads[f"dec{l}.Wh"] += dWh
        grads[f"dec{l}.Wx"] += lin.T @ dxw
        grads[f"dec{l}.b"] += dxw.sum(axis=0)
        d_above = dxw @ params[f"dec{l}.Wx"].T
        inv_h = np.empty_like(dh0)
        inv_c = np.empty_like(dc0)
        inv_h[order_a] = dh0
        inv_c[order_a] = dc0
        d_init[l] = (inv_h, inv_c if cfg.transfer_cell else np.zeros_like(inv_c))
    demb = elu_backward(d_above, emb)
    grads["state_embed.W"] += emb_in.T @ demb
    grads["state_embed.b"] += demb.sum(axis=0)
    dfeats = demb @ params["state_embed.W"][STATE_DIM:].T
    for lo, out, acts in conv_cache:
        _conv_backward(dfeats[lo:lo + conv_chunk], out, acts, params, cfg, grads)

    _encoder_backward(d_init, params, cfg, enc_state, grads)
    return loss, grads, total


def forward_flight(sample: FlightSample, params: Params, cfg: ModelConfig) -> MixtureParams:
    """Teacher-forced mixtures for steps ``1..T-1`` of one flight (leading dim T-1)."""
    if sample.states.shape[0] != sample.cubes.shape[0]:
        raise ValueError("track and cube sequences differ in length")
    bundle = initial_decoder_bundle([(h[None], c[None]) for h, c in encode_plan(sample.plan, params, cfg)], cfg)
    mixes = []
    for t in range(sample.states.shape[0] - 1):
        bundle, mix = decoder_step(bundle, sample.states[t][None], sample.cubes[t][None], params, cfg)
        mixes.append(mix)
    if not mixes:
        k = cfg.n_components
        return MixtureParams(np.zeros((0, k)), np.zeros((0, k, 5)), np.zeros((0, k, 3, 3)), np.zeros((0, k, 2, 2)))
    return MixtureParams(*(np.concatenate([getattr(m, f) for m in mixes]) for f in ("phi", "mu", "L1", "L2")))
