"""Activation-norm bounds and global Lipschitz certificates for residual nets.

Bounds are with respect to the max-over-tokens RMS norm of activations and
compose per residual connection as L' = (1 - alpha) L + alpha L L_block. All
accumulation happens in log10 so certificates beyond float range stay exact in
the exponent; linear values are materialized only when representable.

The certificate is stated for the continuous post-embedding input with RMS
norm at most 1 (embeddings are row-capped to unit RMS, which pins the initial
activation bound a_0 = 1).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

# Maximum derivative of GeLU(x) = x * Phi(x), attained at x = sqrt(2);
# dividing the activation by it makes it 1-Lipschitz.
GELU_MAX_SLOPE = 1.1289

MLP = "mlp"
TRANSFORMER = "transformer"

_LINEAR_LIMIT = 300.0  # log10 above which linear values become inf


@dataclass(frozen=True)
class BlockNorms:
    """Declared RMS->RMS weight norms of one residual block.

    Transformer blocks carry all six; MLP-only blocks carry just w_in/w_out.
    """

    w_in: float = 0.0
    w_out: float = 0.0
    w_q: float | None = None
    w_k: float | None = None
    w_v: float | None = None
    w_o: float | None = None


@dataclass(frozen=True)
class ArchitectureSpec:
    """Topology plus per-layer norm declarations needed for a certificate.

    ``depth`` counts residual blocks: a transformer block contributes two
    residual connections (attention then MLP), an MLP-kind block one. The
    residual mixing weight defaults to 1/(2*depth) for transformers and
    1/depth for MLP stacks, i.e. one over the number of connections.
    """

    kind: str
    depth: int
    width: int
    block_norms: tuple
    head_norm: float = 1.0
    head_dim: int | None = None
    heads: int = 1
    residual_alpha: float | None = None
    attn_scale: float | None = None
    gelu_gain: float = 1.0 / GELU_MAX_SLOPE
    final_logit_scale: float = 1.0
    attn_output_factor: float = 1.0 / 3.0

    def __post_init__(self):
        if self.kind not in (MLP, TRANSFORMER):
            raise ValueError(f"unknown architecture kind: {self.kind!r}")
        if self.depth < 0:
            raise ValueError("depth must be nonnegative")
        if len(self.block_norms) != self.depth:
            raise ValueError(f"expected {self.depth} block norm entries, "
                             f"got {len(self.block_norms)}")
        object.__setattr__(self, "block_norms", tuple(self.block_norms))
        if self.residual_alpha is not None and not 0.0 < self.residual_alpha <= 1.0:
            raise ValueError("residual_alpha must lie in (0, 1]")
        if self.kind == TRANSFORMER:
            if self.head_dim is None or self.head_dim <= 0:
                raise ValueError("transformer spec needs a positive head_dim")
            for b in self.block_norms:
                if None in (b.w_q, b.w_k, b.w_v, b.w_o):
                    raise ValueError("transformer blocks need w_q/w_k/w_v/w_o norms")

    @property
    def n_connections(self) -> int:
        return self.depth * (2 if self.kind == TRANSFORMER else 1)

    @property
    def alpha(self) -> float:
        if self.residual_alpha is not None:
            return self.residual_alpha
        n = self.n_connections
        return 1.0 / n if n else 1.0

    @property
    def scale(self) -> float:
        """Attention logit scale; 1/head_dim unless overridden."""
        if self.attn_scale is not None:
            return self.attn_scale
        return 1.0 / self.head_dim

    def connections(self):
        """Yield ("attn" | "mlp", BlockNorms) in forward order."""
        for b in self.block_norms:
            if self.kind == TRANSFORMER:
                yield "attn", b
            yield "mlp", b

    def to_json_dict(self) -> dict:
        blocks = []
        for b in self.block_norms:
            entry = {"w_in": b.w_in, "w_out": b.w_out}
            if self.kind == TRANSFORMER:
                entry.update({"w_q": b.w_q, "w_k": b.w_k, "w_v": b.w_v, "w_o": b.w_o})
            blocks.append(entry)
        return {
            "kind": self.kind,
            "depth": self.depth,
            "width": self.width,
            "head_dim": self.head_dim,
            "heads": self.heads,
            "residual_alpha": self.residual_alpha,
            "attn_scale": self.attn_scale,
            "gelu_gain": self.gelu_gain,
            "final_logit_scale": self.final_logit_scale,
            "attn_output_factor": self.attn_output_factor,
            "head_norm": self.head_norm,
            "block_norms": blocks,
        }

    @classmethod
    def from_json_dict(cls, doc: dict) -> "ArchitectureSpec":
        doc = dict(doc)
        blocks = doc.pop("block_norms", None)
        if blocks is None:
            raise ValueError("architecture document needs 'block_norms'")
        known = {
            "kind", "depth", "width", "head_dim", "heads", "residual_alpha",
            "attn_scale", "gelu_gain", "final_logit_scale",
            "attn_output_factor", "head_norm",
        }
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown architecture fields: {sorted(unknown)}")
        norm_fields = {"w_in", "w_out", "w_q", "w_k", "w_v", "w_o"}
        parsed = []
        for entry in blocks:
            bad = set(entry) - norm_fields
            if bad:
                raise ValueError(f"unknown block norm fields: {sorted(bad)}")
            parsed.append(BlockNorms(**entry))
        defaults = {k: v for k, v in doc.items() if v is not None}
        return cls(block_norms=tuple(parsed), **defaults)


@dataclass
class LipschitzCertificate:
    """Per-connection activation/Lipschitz bounds plus the global bound.

    ``activation_bounds[i]`` / ``lipschitz_bounds[i]`` hold the state after
    connection i, with index 0 being the post-embedding input (a_0 = L_0 = 1).
    Linear values are inf once the log10 value passes float range; the log10
    fields are always finite.
    """

    activation_bounds: list = field(default_factory=list)
    lipschitz_bounds: list = field(default_factory=list)
    log10_activation_bounds: list = field(default_factory=list)
    log10_lipschitz_bounds: list = field(default_factory=list)
    global_bound: float = 1.0
    log10_global: float = 0.0

    def to_json_dict(self) -> dict:
        layers = []
        for a, l, la, ll in zip(self.activation_bounds[1:], self.lipschitz_bounds[1:],
                                self.log10_activation_bounds[1:],
                                self.log10_lipschitz_bounds[1:]):
            layers.append({
                "activation_bound": None if math.isinf(a) else a,
                "lipschitz_bound": None if math.isinf(l) else l,
                "log10_activation_bound": la,
                "log10_lipschitz_bound": ll,
            })
        return {
            "layers": layers,
            "global_bound": None if math.isinf(self.global_bound) else self.global_bound,
            "log10_global": self.log10_global,
        }


def _log10(x: float) -> float:
    if x < 0:
        raise ValueError("log10 of a negative factor")
    return math.log10(x) if x > 0 else -math.inf


def _linear(log_x: float) -> float:
    if log_x == -math.inf:
        return 0.0
    if log_x > _LINEAR_LIMIT:
        return math.inf
    return 10.0 ** log_x


def _log10_mix(alpha: float, log_g: float) -> float:
    """log10((1 - alpha) + alpha * 10**log_g), stable for any magnitude."""
    if alpha >= 1.0:
        return log_g
    if log_g == -math.inf:
        return math.log10(1.0 - alpha)
    if log_g > _LINEAR_LIMIT:
        return log_g + math.log10(alpha)
    return math.log10((1.0 - alpha) + alpha * 10.0 ** log_g)


def attention_lipschitz(q_norm: float, k_norm: float, v_norm: float,
                        s_attn: float, d_q: int) -> float:
    """Lipschitz bound of functional attention for given input norms.

    Attention with logit scale ``s_attn`` equals attention at the reference
    scale 1/d_q with queries and keys absorbed as sqrt(s_attn * d_q) * q; the
    bound for the absorbed inputs is max(1, ||v|| max(||q~||, ||k~||)). At
    s_attn = 1/d_q the absorption factor is exactly 1.
    """
    if min(q_norm, k_norm, v_norm) < 0:
        raise ValueError("input norms must be nonnegative")
    absorb = math.sqrt(s_attn * d_q)
    return max(1.0, v_norm * max(absorb * q_norm, absorb * k_norm))


def _propagate_logs(arch: ArchitectureSpec):
    """Shared recurrence: log10 activation and Lipschitz bounds per connection.

    Forward activation gains: attention contributes
    attn_output_factor * ||W_o|| * ||W_v|| (the attention matrix is row
    stochastic, and the implemented forward scales the block output by the
    same factor), an MLP block ||W_in|| ||W_out|| * gelu_gain. Sensitivities
    additionally pick up the functional-attention bound at the current
    activation level and the 3-tuple (q, k, v) input sensitivity; the logit
    scale absorption applies to the q/k entries of that sum as well so the
    bound covers non-default attention scales.
    """
    alpha = arch.alpha
    log_a = [0.0]
    log_l = [0.0]
    for conn, b in arch.connections():
        a_now = log_a[-1]
        if conn == "mlp":
            log_gain = _log10(b.w_in * b.w_out * arch.gelu_gain)
            log_block = log_gain
        else:
            absorb = math.sqrt(arch.scale * arch.head_dim)
            log_gain = _log10(arch.attn_output_factor * b.w_o * b.w_v)
            # functional attention bound with q, k, v norms a*||W_q|| etc.
            log_f = max(0.0, 2.0 * a_now + _log10(b.w_v * absorb * max(b.w_q, b.w_k)))
            tuple_sens = absorb * b.w_q + absorb * b.w_k + b.w_v
            log_block = _log10(arch.attn_output_factor * b.w_o) + log_f + _log10(tuple_sens)
        log_l.append(log_l[-1] + _log10_mix(alpha, log_block))
        log_a.append(a_now + _log10_mix(alpha, log_gain))
    return log_a, log_l


def propagate_activation_bounds(arch: ArchitectureSpec) -> list:
    """Max RMS activation-norm bounds [a_0, ..., a_n], one per connection."""
    log_a, _ = _propagate_logs(arch)
    return [_linear(x) for x in log_a]


def certify(arch: ArchitectureSpec) -> LipschitzCertificate:
    """Upper-bound the Lipschitz constant of the declared network.

    The global bound composes the final residual-stream bound with the
    unembedding norm and the final logit scale.
    """
    log_a, log_l = _propagate_logs(arch)
    log_global = log_l[-1] + _log10(arch.head_norm) + _log10(arch.final_logit_scale)
    return LipschitzCertificate(
        activation_bounds=[_linear(x) for x in log_a],
        lipschitz_bounds=[_linear(x) for x in log_l],
        log10_activation_bounds=list(log_a),
        log10_lipschitz_bounds=list(log_l),
        global_bound=_linear(log_global),
        log10_global=log_global,
    )


def inf_rms(x) -> float:
    """Max over token positions of each row's RMS norm (2-D: tokens x dim)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    return float(np.sqrt(np.mean(x * x, axis=-1)).max())


def causal_mask(n_tokens: int) -> np.ndarray:
    """Additive causal mask: 0 on and below the diagonal, -inf above."""
    m = np.zeros((n_tokens, n_tokens))
    m[np.triu_indices(n_tokens, k=1)] = -np.inf
    return m


def _softmax_rows(s: np.ndarray) -> np.ndarray:
    z = s - s.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def functional_attention(q, k, v, s_attn: float, mask=None) -> np.ndarray:
    """softmax(s_attn * q k^T + mask) v for 2-D q, k, v (tokens x dim)."""
    s = s_attn * (q @ k.T)
    if mask is not None:
        s = s + mask
    return _softmax_rows(s) @ v


def functional_attention_jvp(q, k, v, dq, dk, dv, s_attn: float, mask=None):
    """Exact directional derivative of functional attention.

    Returns (F, dF). The softmax rows differentiate as
    dA_r = A_r * (dS_r - <A_r, dS_r>), and dF = dA v + A dv.
    """
    s = s_attn * (q @ k.T)
    if mask is not None:
        s = s + mask
    a = _softmax_rows(s)
    ds = s_attn * (dq @ k.T + q @ dk.T)
    if mask is not None:
        ds = np.where(np.isfinite(mask), ds, 0.0)  # masked entries have A = 0
    da = a * (ds - (a * ds).sum(axis=-1, keepdims=True))
    return a @ v, da @ v + a @ dv


def empirical_lipschitz_lower_bound(fn, input_shape, trials: int = 100, seed: int = 0,
                                    magnitudes=(1e-3, 1e-2, 1e-1),
                                    base_rms: float = 0.8) -> float:
    """Probe max ||f(x + d) - f(x)|| / ||d|| in the max-token-RMS norm.

    Always a lower bound on the true Lipschitz constant over the probed
    domain, so any sound certificate must be at least this large. Base points
    are scaled to RMS ``base_rms`` and the largest perturbation stays inside
    the unit-RMS region the certificate assumes. Each trial derives its own
    PRNG stream from (seed, trial) so results do not depend on evaluation
    order.
    """
    best = 0.0
    for t in range(trials):
        rng = np.random.default_rng([seed, t])
        x = rng.standard_normal(input_shape)
        r = inf_rms(x)
        if r > 0:
            x *= base_rms / r
        d = rng.standard_normal(input_shape)
        d /= inf_rms(d)
        fx = np.asarray(fn(x))
        for m in magnitudes:
            fy = np.asarray(fn(x + m * d))
            best = max(best, inf_rms(fy - fx) / m)  # ||m * d|| = m exactly
    return best
