"""Training loop: optimizer step, per-step constraint pass, logging, sweeps.

Every run is a pure function of its config. Batches derive from (seed, step),
power-iteration streams are fixed per call site, and the loop is sequential,
so replaying a config reproduces the loss trace bit-identically and resuming
from a checkpoint matches an uninterrupted run.
"""

from __future__ import annotations

import dataclasses
import itertools
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from . import certificate as cert
from . import constraints as con
from . import linalg, models, optim, tasks
from .errors import DivergenceDetected

THREADS_ENV = "SPECLIP_THREADS"

# Fixed per-call-site stream for norm measurements in logs.
_SEED_LOGNORM = 307


@dataclass(frozen=True)
class TrainConfig:
    """Everything a run needs; serializes to/from a flat JSON document."""

    task: str = tasks.CLUSTERS
    model: str = ""            # defaults: clusters -> mlp, charlm -> transformer
    optimizer: str = optim.MUON
    method: str = con.NONE
    sigma_max: float = 1.0
    sigma_min: float = 0.0
    lam: float = 0.0
    lr: float = 0.1
    steps: int = 500
    seed: int = 0
    batch_size: int = 64
    depth: int = 2
    width: int = 32
    heads: int = 2
    seq_len: int = 32
    vocab: int = 16
    n_classes: int = 10
    input_dim: int = 32
    noise: float = 0.15
    activation: str = ""       # model default when empty
    schedule: str = "linear"   # linear (to zero) | constant
    norm: str = linalg.RMS_TO_RMS
    final_logit_scale: float = 1.0
    attn_scale: float | None = None
    lr_depth_decay: bool = False
    update_norm_premise: str = "inflated"
    pi_iters: int | None = None
    log_every: int = 1

    def __post_init__(self):
        if self.task not in tasks.TASKS:
            raise ValueError(f"unknown task: {self.task!r}")
        if self.activation:
            object.__setattr__(self, "activation",
                               self.activation.replace("-", "_"))
        if not self.model:
            object.__setattr__(
                self, "model",
                "mlp" if self.task == tasks.CLUSTERS else "transformer")
        if self.model not in ("mlp", "transformer"):
            raise ValueError(f"unknown model: {self.model!r}")
        if self.schedule not in ("linear", "constant"):
            raise ValueError(f"unknown schedule: {self.schedule!r}")
        if self.steps < 0:
            raise ValueError("steps must be nonnegative")

    def model_spec(self) -> models.ModelSpec:
        if self.model == "mlp":
            return models.ModelSpec(
                kind="mlp", width=self.width, depth=self.depth,
                n_out=self.n_classes, d_in=self.input_dim,
                activation=self.activation,
                final_logit_scale=self.final_logit_scale)
        return models.ModelSpec(
            kind="transformer", width=self.width, depth=self.depth,
            n_out=self.vocab, heads=self.heads, activation=self.activation,
            attn_scale=self.attn_scale,
            final_logit_scale=self.final_logit_scale)

    def constraint_spec(self) -> con.ConstraintSpec:
        return con.ConstraintSpec(
            method=self.method, sigma_max=self.sigma_max,
            sigma_min=self.sigma_min, lam=self.lam, norm_kind=self.norm,
            update_norm_premise=self.update_norm_premise,
            pi_iters=self.pi_iters)

    def make_task(self):
        if self.task == tasks.CLUSTERS:
            return tasks.make_cluster_task(
                self.seed, n_classes=self.n_classes, dim=self.input_dim,
                noise=self.noise)
        return tasks.make_markov_task(
            self.seed, vocab=self.vocab, seq_len=self.seq_len)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class TrainResult:
    config: TrainConfig
    model_spec: models.ModelSpec
    params: dict
    opt_state: optim.OptimizerState
    logs: list
    summary: dict
    diverged: bool = False


@dataclass
class ResumeState:
    """Minimal state needed to continue a run mid-schedule."""

    params: dict
    opt_state: optim.OptimizerState
    step: int


def eta_at(config: TrainConfig, step: int) -> float:
    if config.schedule == "constant":
        return config.lr
    return config.lr * (1.0 - step / config.steps) if config.steps else config.lr


def lr_multipliers(config: TrainConfig, spec: models.ModelSpec) -> dict:
    """Optional per-block halving so later blocks train more."""
    if not config.lr_depth_decay:
        return {}
    mult = {}
    for key in spec.param_order():
        i = spec.block_index(key)
        if i is not None:
            mult[key] = 0.5 ** (spec.depth - 1 - i)
    return mult


def measured_norms(params, kind: str = linalg.RMS_TO_RMS) -> dict:
    return {key: linalg.matrix_norm(w, kind, seed=_SEED_LOGNORM)
            for key, w in params.items()}


def arch_from_norms(spec: models.ModelSpec, norms: dict) -> cert.ArchitectureSpec:
    """Declare an architecture for the certificate from measured weight norms."""
    blocks = []
    for i in range(spec.depth):
        get = lambda role: norms[f"blocks.{i}.{role}"]
        if spec.kind == "transformer":
            blocks.append(cert.BlockNorms(
                w_in=get("w_in"), w_out=get("w_out"), w_q=get("w_q"),
                w_k=get("w_k"), w_v=get("w_v"), w_o=get("w_o")))
        else:
            blocks.append(cert.BlockNorms(w_in=get("w_in"), w_out=get("w_out")))
    gain = 1.0 if spec.activation == models.RELU else 1.0 / cert.GELU_MAX_SLOPE
    return cert.ArchitectureSpec(
        kind=spec.kind, depth=spec.depth, width=spec.width,
        block_norms=tuple(blocks), head_norm=norms["unembed"],
        head_dim=spec.head_dim if spec.kind == "transformer" else None,
        heads=spec.heads, residual_alpha=spec.alpha,
        attn_scale=spec.scale if spec.kind == "transformer" else None,
        gelu_gain=gain, final_logit_scale=spec.final_logit_scale,
        attn_output_factor=spec.attn_output_factor)


def model_certificate(spec: models.ModelSpec, params, norms=None):
    """Certificate from current weights, plus the full input-to-logits bound.

    The certificate itself covers the post-embedding function. For the MLP
    the input projection composes in front, so the full bound multiplies by
    its norm (sound whenever that norm is <= 1, which the constraint pass
    enforces on constrained runs). Transformer embeddings are row-capped, so
    the post-embedding bound is already the model's bound.
    """
    norms = norms or measured_norms(params)
    c = cert.certify(arch_from_norms(spec, norms))
    full_log10 = c.log10_global
    if spec.kind == "mlp" and norms["embed"] > 0:
        full_log10 += math.log10(norms["embed"])
    return c, full_log10


def constraint_pass(spec: models.ModelSpec, params, cspec: con.ConstraintSpec,
                    eta: float):
    """Apply the configured constraint to every matrix weight.

    The MLP input projection is held at target norm min(1, sigma_max) so the
    certificate's unit activation premise stays valid. Token embeddings are
    handled by the optimizer's row cap, not here. Exactly-zero weights are
    skipped: every cap is trivially satisfied and the msign-based operators
    need a nonzero singular subspace.
    """
    reports = {}
    if cspec.method == con.NONE:
        return reports
    for key, w in params.items():
        if spec.kind == "transformer" and key == "embed":
            continue
        if not w.any():
            continue
        key_spec = cspec
        if spec.kind == "mlp" and key == "embed" and cspec.sigma_max > 1.0:
            key_spec = replace(cspec, sigma_max=1.0,
                               sigma_min=min(cspec.sigma_min, 1.0))
        params[key], reports[key] = con.apply_constraint_verbose(w, key_spec, eta)
    return reports


def _all_finite(params) -> bool:
    return all(np.isfinite(w).all() for w in params.values())


def train(config: TrainConfig, resume: ResumeState | None = None,
          log_writer=None, stop_after: int | None = None) -> TrainResult:
    """Run (or resume) one training run.

    ``stop_after`` halts mid-schedule (the learning-rate schedule still spans
    ``config.steps``), which is how partial runs for checkpointing are made.
    Raises DivergenceDetected -- with the partial result attached -- as soon
    as the loss or any weight stops being finite; an unconstrained model
    without normalization layers is allowed to end up there.
    """
    spec = config.model_spec()
    task = config.make_task()
    cspec = config.constraint_spec()
    if resume is not None:
        params = resume.params
        opt_state = resume.opt_state
        start_step = resume.step
    else:
        init_norm = min(1.0, config.sigma_max) if config.method != con.NONE else 1.0
        params = models.init_params(spec, seed=config.seed, weight_norm=init_norm)
        embedding_keys = {"embed"} if spec.kind == "transformer" else set()
        opt_state = optim.init_optimizer(
            config.optimizer, params, embedding_keys=embedding_keys,
            lr_multipliers=lr_multipliers(config, spec))
        constraint_pass(spec, params, cspec, 0.0)  # init inside the feasible set
        start_step = 0
    logs = [_log_record(config, spec, params, step=start_step, loss=None,
                        eta=None, aux=None, reports={})]
    if log_writer:
        log_writer(logs[-1])

    result = TrainResult(config=config, model_spec=spec, params=params,
                         opt_state=opt_state, logs=logs, summary={})
    end_step = config.steps if stop_after is None else min(config.steps, stop_after)
    with np.errstate(over="ignore", invalid="ignore", under="ignore"):
        for step in range(start_step, end_step):
            eta = eta_at(config, step)
            inputs, labels = task.batch(config.seed, step, config.batch_size)
            loss, grads, aux = models.loss_and_grads(spec, params, inputs, labels)
            if not math.isfinite(loss):
                _finish(result, task, diverged=True, last_loss=loss, step=step)
                raise DivergenceDetected(
                    f"non-finite loss at step {step}", result=result)
            optim.optimizer_step(opt_state, params, grads, eta)
            reports = constraint_pass(spec, params, cspec, eta)
            if not _all_finite(params):
                _finish(result, task, diverged=True, last_loss=loss, step=step)
                raise DivergenceDetected(
                    f"non-finite weights at step {step}", result=result)
            record = _log_record(config, spec, params, step=step + 1, loss=loss,
                                 eta=eta, aux=aux, reports=reports)
            logs.append(record)
            if log_writer and (step + 1) % config.log_every == 0:
                log_writer(record)
    _finish(result, task, diverged=False,
            last_loss=logs[-1]["loss"], step=end_step)
    return result


def _log_record(config, spec, params, step, loss, eta, aux, reports):
    norms = measured_norms(params)
    _, full_log10 = model_certificate(spec, params, norms)
    alphas = [r["alpha_used"] for k, r in reports.items()
              if r.get("alpha_used") is not None and k != "embed"]
    return {
        "step": step,
        "loss": loss,
        "eta": eta,
        "norms": norms,
        "certificate_log10": full_log10,
        "max_activation_entry": aux["max_abs"] if aux else None,
        "alpha_used": alphas[0] if alphas else None,
    }


def _finish(result: TrainResult, task, diverged: bool, last_loss, step):
    config = result.config
    summary = {
        "step": step,
        "final_loss": last_loss,
        "final_accuracy": None,
        "certificate_log10": result.logs[-1]["certificate_log10"],
        "max_activation_entry": max(
            (r["max_activation_entry"] for r in result.logs
             if r["max_activation_entry"] is not None), default=None),
        "diverged": diverged,
    }
    if not diverged:
        inputs, labels = task.eval_set(config.seed)
        with np.errstate(over="ignore", invalid="ignore", under="ignore"):
            loss, _, aux = models.loss_and_grads(result.model_spec, result.params,
                                                 inputs, labels)
        summary["eval_loss"] = loss
        summary["final_accuracy"] = aux["accuracy"]
    result.summary = summary
    result.diverged = diverged


# ---------------------------------------------------------------------------
# sweeps


def sweep_configs(base: TrainConfig, optimizers, methods, sigma_maxes, lams, lrs,
                  seeds=(0,)):
    """Cross product of settings, in a fixed deterministic order."""
    combos = itertools.product(optimizers, methods, sigma_maxes, lams, lrs, seeds)
    out = []
    for opt_name, method, sm, lam, lr, seed in combos:
        out.append(replace(base, optimizer=opt_name, method=method,
                           sigma_max=sm, lam=lam, lr=lr, seed=seed))
    return out


def run_sweep(configs, max_workers=None):
    """Run every config, returning one row per run in submission order.

    Parallelism is capped by SPECLIP_THREADS (default 1); each run is fully
    independent with its own seed, so the row content does not depend on the
    worker count.
    """
    if max_workers is None:
        max_workers = int(os.environ.get(THREADS_ENV, "1") or "1")
    max_workers = max(1, max_workers)

    def one(cfg):
        try:
            res = train(cfg)
            return {
                "method": cfg.method, "optimizer": cfg.optimizer,
                "sigma_max": cfg.sigma_max, "lambda": cfg.lam, "lr": cfg.lr,
                "seed": cfg.seed,
                "final_loss": res.summary["eval_loss"],
                "certificate_log10": res.summary["certificate_log10"],
                "diverged": False,
            }
        except DivergenceDetected as exc:
            return {
                "method": cfg.method, "optimizer": cfg.optimizer,
                "sigma_max": cfg.sigma_max, "lambda": cfg.lam, "lr": cfg.lr,
                "seed": cfg.seed, "final_loss": float("nan"),
                "certificate_log10": exc.result.summary["certificate_log10"]
                if exc.result else float("nan"),
                "diverged": True,
            }

    if max_workers == 1:
        return [one(cfg) for cfg in configs]
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        return list(pool.map(one, configs))


def loss_frontier(rows, bin_width: float = 0.5):
    """Best (lowest) final loss per log10-certificate bin.

    Mirrors the sweep presentation that keeps only the best validation loss
    per bin of the Lipschitz bound; diverged rows never enter the frontier.
    """
    best = {}
    for row in rows:
        if row["diverged"] or not math.isfinite(row["final_loss"]):
            continue
        b = math.floor(row["certificate_log10"] / bin_width)
        if b not in best or row["final_loss"] < best[b]["final_loss"]:
            best[b] = row
    out = []
    for b in sorted(best):
        entry = dict(best[b])
        entry["bin_log10_low"] = b * bin_width
        out.append(entry)
    return out
