"""Toy residual MLP and decoder-only transformer with manual backprop.

Both models use the norm-friendly parameterization throughout: residual
connections are convex combinations x <- (1 - alpha) x + alpha * block(x),
attention logits are scaled by 1/head_dim by default, the attention block
output is multiplied by 1/3, and there is no layer norm, QK norm, or logit
softcap anywhere. The MLP hidden nonlinearity defaults to ReLU; the
transformer uses GeLU divided by its maximum derivative so it is 1-Lipschitz.

Parameters live in a flat dict keyed "embed", "blocks.{i}.{role}", "unembed"
so optimizers, constraint passes, and checkpoints can treat them uniformly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erf

from . import linalg
from .certificate import GELU_MAX_SLOPE, causal_mask
from .errors import ShapeMismatch, VocabOverflow

RELU = "relu"
GELU_SCALED = "gelu_scaled"

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class ModelSpec:
    """Topology of a toy model; see module docstring for conventions.

    For an MLP, ``n_out`` is the class count and ``d_in`` the input dimension;
    for a transformer, ``n_out`` is the vocabulary size and ``d_in`` unused.
    ``depth`` counts residual blocks (a transformer block holds an attention
    and an MLP connection). ``residual_alpha`` defaults to one over the number
    of residual connections.
    """

    kind: str
    width: int
    depth: int
    n_out: int
    d_in: int = 0
    hidden: int = 0
    heads: int = 1
    activation: str = ""
    residual_alpha: float | None = None
    attn_scale: float | None = None
    attn_output_factor: float = 1.0 / 3.0
    final_logit_scale: float = 1.0

    def __post_init__(self):
        if self.kind not in ("mlp", "transformer"):
            raise ValueError(f"unknown model kind: {self.kind!r}")
        if self.kind == "transformer" and self.width % self.heads != 0:
            raise ValueError("width must be divisible by heads")
        if self.kind == "mlp" and self.d_in <= 0:
            raise ValueError("mlp spec needs d_in > 0")
        if not self.hidden:
            object.__setattr__(self, "hidden", self.width)
        if not self.activation:
            object.__setattr__(
                self, "activation", RELU if self.kind == "mlp" else GELU_SCALED)
        if self.activation not in (RELU, GELU_SCALED):
            raise ValueError(f"unknown activation: {self.activation!r}")

    @property
    def head_dim(self) -> int:
        return self.width // self.heads

    @property
    def n_connections(self) -> int:
        return self.depth * (2 if self.kind == "transformer" else 1)

    @property
    def alpha(self) -> float:
        if self.residual_alpha is not None:
            return self.residual_alpha
        n = self.n_connections
        return 1.0 / n if n else 1.0

    @property
    def scale(self) -> float:
        return self.attn_scale if self.attn_scale is not None else 1.0 / self.head_dim

    def block_roles(self):
        if self.kind == "transformer":
            return ("w_q", "w_k", "w_v", "w_o", "w_in", "w_out")
        return ("w_in", "w_out")

    def param_order(self):
        """Canonical key order; checkpoints serialize arrays in this order."""
        keys = ["embed"]
        for i in range(self.depth):
            keys.extend(f"blocks.{i}.{r}" for r in self.block_roles())
        keys.append("unembed")
        return keys

    def param_shape(self, key: str):
        if key == "embed":
            if self.kind == "mlp":
                return (self.width, self.d_in)
            return (self.n_out, self.width)
        if key == "unembed":
            return (self.n_out, self.width)
        role = key.split(".")[-1]
        d, h = self.width, self.hidden
        return {
            "w_q": (d, d), "w_k": (d, d), "w_v": (d, d), "w_o": (d, d),
            "w_in": (h, d), "w_out": (d, h),
        }[role]

    def block_index(self, key: str) -> int | None:
        return int(key.split(".")[1]) if key.startswith("blocks.") else None


def init_params(spec: ModelSpec, seed: int, weight_norm: float = 1.0):
    """Semi-orthogonal initialization scaled to a target RMS->RMS norm.

    Block output projections (and the MLP's final layer) start at zero;
    transformer embedding rows start at RMS norm exactly 1.
    """
    rng = np.random.default_rng([seed, 0xC0DE])
    params = {}
    for key in spec.param_order():
        shape = spec.param_shape(key)
        role = key.split(".")[-1]
        zero = (role in ("w_o", "w_out") if spec.kind == "transformer"
                else key == "unembed")
        if zero:
            params[key] = np.zeros(shape)
        elif key == "embed" and spec.kind == "transformer":
            e = rng.standard_normal(shape)
            rms = np.sqrt(np.mean(e * e, axis=1, keepdims=True))
            params[key] = e / rms
        else:
            g = rng.standard_normal(shape)
            # semi-orthogonal has spectral norm 1; rescale into RMS units
            target = weight_norm * math.sqrt(shape[0] / shape[1])
            params[key] = linalg.msign(g) * target
    return params


def activation_forward(z, kind: str):
    if kind == RELU:
        return np.maximum(z, 0.0)
    phi = 0.5 * (1.0 + erf(z * _INV_SQRT2))
    return z * phi / GELU_MAX_SLOPE


def activation_backward(z, kind: str):
    if kind == RELU:
        return (z > 0.0).astype(np.float64)
    phi = 0.5 * (1.0 + erf(z * _INV_SQRT2))
    dens = np.exp(-0.5 * z * z) * _INV_SQRT2PI
    return (phi + z * dens) / GELU_MAX_SLOPE


def forward_mlp(spec: ModelSpec, params, x):
    """Logits and caches for a batch of input vectors (batch x d_in)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != spec.d_in:
        raise ShapeMismatch(f"expected inputs of shape (batch, {spec.d_in})")
    alpha = spec.alpha
    h = x @ params["embed"].T
    streams = [h]
    zs = []
    acts = []
    max_abs = float(np.abs(h).max(initial=0.0))
    for i in range(spec.depth):
        w_in = params[f"blocks.{i}.w_in"]
        w_out = params[f"blocks.{i}.w_out"]
        z = h @ w_in.T
        a = activation_forward(z, spec.activation)
        u = a @ w_out.T
        h = (1.0 - alpha) * h + alpha * u
        zs.append(z)
        acts.append(a)
        streams.append(h)
        max_abs = max(max_abs, float(np.abs(z).max(initial=0.0)),
                      float(np.abs(h).max(initial=0.0)))
    logits = (h @ params["unembed"].T) * spec.final_logit_scale
    max_abs = max(max_abs, float(np.abs(logits).max(initial=0.0)))
    cache = {"x": x, "streams": streams, "zs": zs, "acts": acts,
             "max_abs": max_abs}
    return logits, cache


def backward_mlp(spec: ModelSpec, params, cache, dlogits):
    """Gradients for every weight plus the input gradient."""
    alpha = spec.alpha
    grads = {}
    h_final = cache["streams"][-1]
    dlin = dlogits * spec.final_logit_scale
    grads["unembed"] = dlin.T @ h_final
    dh = dlin @ params["unembed"]
    for i in reversed(range(spec.depth)):
        w_in = params[f"blocks.{i}.w_in"]
        w_out = params[f"blocks.{i}.w_out"]
        h_in = cache["streams"][i]
        z = cache["zs"][i]
        a = cache["acts"][i]
        du = alpha * dh
        grads[f"blocks.{i}.w_out"] = du.T @ a
        dz = (du @ w_out) * activation_backward(z, spec.activation)
        grads[f"blocks.{i}.w_in"] = dz.T @ h_in
        dh = (1.0 - alpha) * dh + dz @ w_in
    grads["embed"] = dh.T @ cache["x"]
    dx = dh @ params["embed"]
    return grads, dx


def forward_transformer(spec: ModelSpec, params, tokens):
    """Logits and caches for integer token batches (batch x seq)."""
    tokens = np.asarray(tokens)
    if tokens.ndim != 2:
        raise ShapeMismatch("expected token batches of shape (batch, seq)")
    if tokens.min(initial=0) < 0 or tokens.max(initial=0) >= spec.n_out:
        raise VocabOverflow(f"token ids must lie in [0, {spec.n_out})")
    x = params["embed"][tokens]
    cache = {"tokens": tokens, "attn": [], "mlps": [],
             "max_abs": float(np.abs(x).max(initial=0.0))}
    mask = causal_mask(tokens.shape[1])
    for i in range(spec.depth):
        x = _attention_forward(spec, params, i, x, mask, cache)
        x = _mlp_connection_forward(spec, params, i, x, cache)
    cache["stream_out"] = x
    logits = (x @ params["unembed"].T) * spec.final_logit_scale
    cache["max_abs"] = max(cache["max_abs"], float(np.abs(logits).max(initial=0.0)))
    return logits, cache


def transformer_body(spec: ModelSpec, params, x0):
    """Continuous-input forward (seq x width) -> (seq x vocab) logits.

    This is the function the certificate bounds: it starts at the
    post-embedding residual stream and ends at the scaled logits.
    """
    x = np.asarray(x0, dtype=np.float64)[None, :, :]
    cache = {"attn": [], "mlps": [], "max_abs": 0.0}
    mask = causal_mask(x.shape[1])
    for i in range(spec.depth):
        x = _attention_forward(spec, params, i, x, mask, cache)
        x = _mlp_connection_forward(spec, params, i, x, cache)
    return ((x @ params["unembed"].T) * spec.final_logit_scale)[0]


def mlp_body(spec: ModelSpec, params, h0):
    """Post-embedding MLP forward (rows are independent samples)."""
    alpha = spec.alpha
    h = np.asarray(h0, dtype=np.float64)
    for i in range(spec.depth):
        a = activation_forward(h @ params[f"blocks.{i}.w_in"].T, spec.activation)
        h = (1.0 - alpha) * h + alpha * (a @ params[f"blocks.{i}.w_out"].T)
    return (h @ params["unembed"].T) * spec.final_logit_scale


def _attention_forward(spec, params, i, x, mask, cache):
    b, t, d = x.shape
    heads, hd = spec.heads, spec.head_dim
    alpha = spec.alpha

    def split(m):
        return m.reshape(b, t, heads, hd).transpose(0, 2, 1, 3)

    q = split(x @ params[f"blocks.{i}.w_q"].T)
    k = split(x @ params[f"blocks.{i}.w_k"].T)
    v = split(x @ params[f"blocks.{i}.w_v"].T)
    s = spec.scale * (q @ k.transpose(0, 1, 3, 2)) + mask[None, None]
    s_shift = s - s.max(axis=-1, keepdims=True)
    e = np.exp(s_shift)
    attn = e / e.sum(axis=-1, keepdims=True)
    o = attn @ v
    oc = o.transpose(0, 2, 1, 3).reshape(b, t, d)
    y = (oc @ params[f"blocks.{i}.w_o"].T) * spec.attn_output_factor
    out = (1.0 - alpha) * x + alpha * y
    cache["attn"].append({"x": x, "q": q, "k": k, "v": v, "a": attn, "oc": oc})
    cache["max_abs"] = max(cache["max_abs"], float(np.abs(out).max(initial=0.0)))
    return out


def _mlp_connection_forward(spec, params, i, x, cache):
    alpha = spec.alpha
    z = x @ params[f"blocks.{i}.w_in"].T
    a = activation_forward(z, spec.activation)
    u = a @ params[f"blocks.{i}.w_out"].T
    out = (1.0 - alpha) * x + alpha * u
    cache["mlps"].append({"x": x, "z": z, "a": a})
    cache["max_abs"] = max(cache["max_abs"], float(np.abs(z).max(initial=0.0)),
                           float(np.abs(out).max(initial=0.0)))
    return out


def backward_transformer(spec: ModelSpec, params, cache, dlogits):
    """Gradients for every weight; embedding rows accumulate by token id."""
    alpha = spec.alpha
    grads = {}
    tokens = cache["tokens"]
    b, t = tokens.shape
    d = spec.width
    dlin = dlogits * spec.final_logit_scale
    grads["unembed"] = dlin.reshape(-1, spec.n_out).T @ cache["stream_out"].reshape(-1, d)
    dx = dlin @ params["unembed"]
    for i in reversed(range(spec.depth)):
        dx = _mlp_connection_backward(spec, params, i, cache["mlps"][i], dx, grads)
        dx = _attention_backward(spec, params, i, cache["attn"][i], dx, grads)
    demb = np.zeros_like(params["embed"])
    np.add.at(demb, tokens.reshape(-1), dx.reshape(-1, d))
    grads["embed"] = demb
    return grads


def _mlp_connection_backward(spec, params, i, c, dx_out, grads):
    alpha = spec.alpha
    w_in = params[f"blocks.{i}.w_in"]
    w_out = params[f"blocks.{i}.w_out"]
    flat = lambda m: m.reshape(-1, m.shape[-1])
    du = alpha * dx_out
    grads[f"blocks.{i}.w_out"] = flat(du).T @ flat(c["a"])
    dz = (du @ w_out) * activation_backward(c["z"], spec.activation)
    grads[f"blocks.{i}.w_in"] = flat(dz).T @ flat(c["x"])
    return (1.0 - alpha) * dx_out + dz @ w_in


def _attention_backward(spec, params, i, c, dx_out, grads):
    b, t, d = c["x"].shape
    heads, hd = spec.heads, spec.head_dim
    alpha = spec.alpha
    flat = lambda m: m.reshape(-1, m.shape[-1])

    def merge(m):
        return m.transpose(0, 2, 1, 3).reshape(b, t, d)

    dy = (alpha * spec.attn_output_factor) * dx_out
    grads[f"blocks.{i}.w_o"] = flat(dy).T @ flat(c["oc"])
    do = (dy @ params[f"blocks.{i}.w_o"]).reshape(b, t, heads, hd).transpose(0, 2, 1, 3)
    attn, q, k, v = c["a"], c["q"], c["k"], c["v"]
    da = do @ v.transpose(0, 1, 3, 2)
    dv = attn.transpose(0, 1, 3, 2) @ do
    ds = attn * (da - (da * attn).sum(axis=-1, keepdims=True))
    dq = spec.scale * (ds @ k)
    dk = spec.scale * (ds.transpose(0, 1, 3, 2) @ q)
    dx = (1.0 - alpha) * dx_out
    for name, dm in (("w_q", dq), ("w_k", dk), ("w_v", dv)):
        w = params[f"blocks.{i}.{name}"]
        dmf = merge(dm)
        grads[f"blocks.{i}.{name}"] = flat(dmf).T @ flat(c["x"])
        dx = dx + dmf @ w
    return dx


def softmax_cross_entropy(logits, labels):
    """Mean cross entropy over all positions; returns (loss, dlogits, probs)."""
    flat_logits = logits.reshape(-1, logits.shape[-1])
    flat_labels = np.asarray(labels).reshape(-1)
    n = flat_logits.shape[0]
    shift = flat_logits - flat_logits.max(axis=1, keepdims=True)
    e = np.exp(shift)
    probs = e / e.sum(axis=1, keepdims=True)
    idx = np.arange(n)
    lse = np.log(e.sum(axis=1)) + flat_logits.max(axis=1)
    loss = float(np.mean(lse - flat_logits[idx, flat_labels]))
    dflat = probs.copy()
    dflat[idx, flat_labels] -= 1.0
    dflat /= n
    return loss, dflat.reshape(logits.shape), probs.reshape(logits.shape)


def loss_and_grads(spec: ModelSpec, params, inputs, labels):
    """Forward + mean cross entropy + full backward pass.

    Returns (loss, grads, aux) where aux carries the activation statistics
    and per-position accuracy of the batch.
    """
    if spec.kind == "mlp":
        logits, cache = forward_mlp(spec, params, inputs)
    else:
        logits, cache = forward_transformer(spec, params, inputs)
    loss, dlogits, probs = softmax_cross_entropy(logits, labels)
    if spec.kind == "mlp":
        grads, _ = backward_mlp(spec, params, cache, dlogits)
    else:
        grads = backward_transformer(spec, params, cache, dlogits)
    pred = logits.reshape(-1, logits.shape[-1]).argmax(axis=1)
    acc = float(np.mean(pred == np.asarray(labels).reshape(-1)))
    aux = {"max_abs": cache["max_abs"], "accuracy": acc}
    return loss, grads, aux


def mlp_input_gradient(spec: ModelSpec, params, x, labels):
    """Gradient of the mean cross entropy with respect to the inputs."""
    logits, cache = forward_mlp(spec, params, x)
    loss, dlogits, _ = softmax_cross_entropy(logits, labels)
    _, dx = backward_mlp(spec, params, cache, dlogits)
    return loss, dx, logits
