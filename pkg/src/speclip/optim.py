"""Orthogonalized-momentum and AdamW optimizers for the toy models.

The orthogonalized ("muon") step applies msign to the momentum EMA of each
matrix weight and scales by sqrt(fan_out / fan_in), so the update's RMS->RMS
norm is bounded by the learning rate times the msign inflation cap, for every
shape. Token embeddings are updated by plain momentum SGD and row-capped to
unit RMS after each step, keeping the post-embedding activation bound at 1.

AdamW uses EMAs without bias correction (beta1 = 0.9, beta2 = 0.95); the
discrepancy decays within a few dozen steps at these betas.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import linalg

MUON = "muon"
ADAMW = "adamw"

BETA1 = 0.9
BETA2 = 0.95
ADAM_EPS = 1e-8


@dataclass
class OptimizerState:
    """Per-weight buffers plus the optimizer's fixed hyperparameters."""

    kind: str
    lam: float = 0.0
    beta1: float = BETA1
    beta2: float = BETA2
    eps: float = ADAM_EPS
    dim_scale: bool = True
    msign_iters: int = linalg.DEFAULT_MSIGN_ITERS
    embedding_keys: frozenset = frozenset()
    lr_multipliers: dict = field(default_factory=dict)
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    debug_update_norms: bool = False


def init_optimizer(kind: str, params, lam: float = 0.0,
                   embedding_keys=(), lr_multipliers=None,
                   dim_scale: bool = True) -> OptimizerState:
    if kind not in (MUON, ADAMW):
        raise ValueError(f"unknown optimizer: {kind!r}")
    state = OptimizerState(kind=kind, lam=lam, dim_scale=dim_scale,
                           embedding_keys=frozenset(embedding_keys),
                           lr_multipliers=dict(lr_multipliers or {}))
    for key, w in params.items():
        state.m[key] = np.zeros_like(w)
        if kind == ADAMW:
            state.v[key] = np.zeros_like(w)
    return state


def optimizer_step(state: OptimizerState, params, grads, eta: float):
    if state.kind == MUON:
        muon_step(state, params, grads, eta)
    else:
        adamw_step(state, params, grads, eta)


def muon_step(state: OptimizerState, params, grads, eta: float):
    """EMA momentum, msign orthogonalization, sqrt(fan_out/fan_in) scaling.

    Embedding-table weights skip orthogonalization: they get the raw momentum
    step followed by a unit row-RMS cap.
    """
    for key, w in params.items():
        g = grads[key]
        m = state.m[key]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        lr = eta * state.lr_multipliers.get(key, 1.0)
        if key in state.embedding_keys:
            params[key] = _cap_embedding_rows(w - lr * m)
            continue
        if not m.any():
            continue  # zero momentum: msign undefined, and the step is zero
        rows, cols = w.shape
        scale = math.sqrt(rows / cols) if state.dim_scale else 1.0
        update = linalg.msign(m, iters=state.msign_iters)
        if state.debug_update_norms:
            top = linalg.power_iterate(update, seed=29).sigma
            cap = linalg.MSIGN_MAX_INFLATION * 1.001
            if top > cap:
                raise AssertionError(f"update spectral norm {top} exceeds {cap}")
        params[key] = w - (lr * scale) * update


def adamw_step(state: OptimizerState, params, grads, eta: float):
    """Adam EMAs without bias correction, decoupled multiplicative decay."""
    for key, w in params.items():
        g = grads[key]
        m = state.m[key]
        v = state.v[key]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        lr = eta * state.lr_multipliers.get(key, 1.0)
        new = (1.0 - state.lam * lr) * w - lr * (m / (np.sqrt(v) + state.eps))
        if key in state.embedding_keys:
            new = _cap_embedding_rows(new)
        params[key] = new


def _cap_embedding_rows(e: np.ndarray) -> np.ndarray:
    """Cap each embedding row to RMS norm at most 1 (never scales up)."""
    rms = np.sqrt(np.mean(e * e, axis=1, keepdims=True))
    return e / np.maximum(rms, 1.0)
