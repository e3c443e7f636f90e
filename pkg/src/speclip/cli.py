"""Command-line front door: constrain, certify, train, sweep, attack, selftest.

Exit codes: 0 success, 1 validation error (bad flags, files, schemas),
2 numerical failure (divergence, no feasible coupling strength, and the like).
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import sys

import numpy as np

from . import attack as atk
from . import certificate as cert
from . import checkpoint as ckpt
from . import config as cfgmod
from . import constraints as con
from . import linalg, mtx, selftest, training
from .errors import (ConvergenceFailure, DivergenceDetected, NoSolutionError,
                     RangeViolation, SpeclipError, ZeroMatrixError)

METHOD_ALIASES = {
    "none": con.NONE,
    "decay": con.WEIGHT_DECAY,
    "weight-decay": con.WEIGHT_DECAY,
    "spectral-weight-decay": con.SPECTRAL_WEIGHT_DECAY,
    "normalize": con.SPECTRAL_NORMALIZE,
    "spectral-normalize": con.SPECTRAL_NORMALIZE,
    "stiefel": con.STIEFEL_PROJECT,
    "stiefel-project": con.STIEFEL_PROJECT,
    "hammer": con.SPECTRAL_HAMMER,
    "spectral-hammer": con.SPECTRAL_HAMMER,
    "softcap": con.SPECTRAL_SOFT_CAP,
    "spectral-soft-cap": con.SPECTRAL_SOFT_CAP,
    "hardcap": con.SPECTRAL_HARD_CAP,
    "spectral-hard-cap": con.SPECTRAL_HARD_CAP,
    "clip": con.SPECTRAL_CLIP,
    "spectral-clip": con.SPECTRAL_CLIP,
    "clipped-weight-decay": con.SPECTRAL_CLIPPED_WEIGHT_DECAY,
}
# canonical (underscore) names are accepted as-is
METHOD_ALIASES.update({m: m for m in con.METHODS})

NORM_ALIASES = {"spectral": linalg.SPECTRAL, "rms": linalg.RMS_TO_RMS}

_NUMERICAL_ERRORS = (DivergenceDetected, NoSolutionError, ConvergenceFailure,
                     RangeViolation, ZeroMatrixError)


class _Parser(argparse.ArgumentParser):
    """argparse that raises instead of exiting, so we control exit codes."""

    def error(self, message):
        raise ValueError(message)


def _strict(value):
    """Replace non-finite floats with null so emitted JSON stays strict."""
    if isinstance(value, dict):
        return {k: _strict(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_strict(v) for v in value]
    if isinstance(value, float) and not np.isfinite(value):
        return None
    return value


def _dump(doc) -> str:
    return json.dumps(_strict(doc), allow_nan=False)


def resolve_method(name: str) -> str:
    try:
        return METHOD_ALIASES[name]
    except KeyError:
        raise ValueError(f"unknown method {name!r}; one of "
                         f"{sorted(set(METHOD_ALIASES))}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="speclip", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("constrain", help="apply a weight-norm operator to an "
                       "MTX-lite matrix")
    p.add_argument("input", help="input matrix (MTX-lite)")
    p.add_argument("output", help="output matrix path (MTX-lite)")
    p.add_argument("--method", required=True)
    p.add_argument("--sigma-max", type=float, default=1.0)
    p.add_argument("--sigma-min", type=float, default=0.0)
    p.add_argument("--lambda", dest="lam", type=float, default=0.0)
    p.add_argument("--eta", type=float, default=0.0)
    p.add_argument("--norm", choices=sorted(NORM_ALIASES), default="rms")
    p.add_argument("--mode", choices=["exact", "clip"], default="exact")
    p.add_argument("--premise", choices=["inflated", "plain"], default="inflated")
    p.add_argument("--pi-iters", type=int, default=None,
                   help="cap power iteration (reproduces the cheap variant "
                        "that can overshoot by ~10%%)")
    p.set_defaults(func=cmd_constrain)

    p = sub.add_parser("certify", help="Lipschitz certificate for a declared "
                       "architecture")
    p.add_argument("--config", required=True, help="architecture JSON document")
    p.add_argument("--out", default=None, help="write certificate JSON here "
                   "instead of stdout")
    p.set_defaults(func=cmd_certify)

    p = sub.add_parser("train", help="train a toy model with a per-step "
                       "constraint pass")
    p.add_argument("--config", default=None, help="JSON file with run fields")
    for name, kind in _train_flag_types().items():
        flag = "--" + name.replace("_", "-")
        if name == "lam":
            flag = "--lambda"
        if kind is bool:
            p.add_argument(flag, dest=name, action="store_true", default=None)
        else:
            p.add_argument(flag, dest=name, type=kind, default=None)
    p.add_argument("--log", default=None, help="write NDJSON records here "
                   "(default: stdout)")
    p.add_argument("--save", default=None, help="write a checkpoint when done")
    p.add_argument("--resume", default=None, help="continue from a checkpoint")
    p.add_argument("--stop-after", type=int, default=None,
                   help="halt mid-schedule (for later resume)")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sweep", help="cross-product of runs, CSV plus a "
                       "best-loss-per-certificate-bin frontier")
    p.add_argument("--task", default="clusters")
    p.add_argument("--optimizers", default="muon")
    p.add_argument("--methods", default="softcap")
    p.add_argument("--sigma-maxes", default="1.0")
    p.add_argument("--lambdas", default="0.0")
    p.add_argument("--lrs", default="0.1")
    p.add_argument("--seeds", default="0")
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--bin-width", type=float, default=0.5)
    p.add_argument("--out", required=True, help="output prefix; writes "
                   "<out>_runs.csv and <out>_frontier.csv")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("attack", help="L2 PGD robustness curve for a trained "
                       "classifier checkpoint")
    p.add_argument("--model", required=True, help="checkpoint path")
    p.add_argument("--epsilons", default="0,0.5,1.0,2.0")
    p.add_argument("--pgd-steps", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--samples", type=int, default=256)
    p.add_argument("--out", default=None, help="CSV path (default: stdout)")
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("selftest", help="run the acceptance suite")
    p.add_argument("--criteria", default=None,
                   help="comma-separated subset of criterion names")
    p.set_defaults(func=cmd_selftest)
    return parser


def _train_flag_types() -> dict:
    kinds = {}
    for f in dataclasses.fields(training.TrainConfig):
        if f.name in ("attn_scale", "pi_iters"):
            kinds[f.name] = float if f.name == "attn_scale" else int
        elif f.type == "bool" or isinstance(f.default, bool):
            kinds[f.name] = bool
        elif isinstance(f.default, int) and not isinstance(f.default, bool):
            kinds[f.name] = int
        elif isinstance(f.default, float):
            kinds[f.name] = float
        else:
            kinds[f.name] = str
    return kinds


def cmd_constrain(args) -> int:
    w = mtx.read_mtx(args.input)
    spec = con.ConstraintSpec(
        method=resolve_method(args.method), sigma_max=args.sigma_max,
        sigma_min=args.sigma_min, lam=args.lam,
        norm_kind=NORM_ALIASES[args.norm], mode=args.mode,
        update_norm_premise=args.premise, pi_iters=args.pi_iters)
    pre = linalg.matrix_norm(w, spec.norm_kind)
    out, report = con.apply_constraint_verbose(w, spec, eta=args.eta)
    post = linalg.matrix_norm(out, spec.norm_kind)
    mtx.write_mtx(args.output, out)
    print(_dump({"method": report["method"], "pre_norm": pre,
                 "post_norm": post, "alpha_used": report["alpha_used"]}))
    return 0


def cmd_certify(args) -> int:
    with open(args.config, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    arch = cert.ArchitectureSpec.from_json_dict(doc)
    result = cert.certify(arch)
    text = json.dumps(_strict(result.to_json_dict()), indent=2, allow_nan=False)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    else:
        print(text)
    return 0


def _resolved_train_config(args, base: dict | None = None) -> training.TrainConfig:
    # merge raw field dicts before constructing, so derived defaults (model
    # from task, activation from model) resolve against the final values
    merged = dict(base or {})
    if args.config:
        with open(args.config, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
        if not isinstance(doc, dict):
            raise ValueError("config document must be a JSON object")
        merged.update(doc)
    for name in _train_flag_types():
        value = getattr(args, name, None)
        if value is not None:
            merged[name] = resolve_method(value) if name == "method" else value
    return cfgmod.config_from_dict(merged)


def cmd_train(args) -> int:
    resume = None
    if args.resume:
        # the checkpoint's config is authoritative on resume; any flags
        # supplied alongside must agree with it
        config, resume = ckpt.load_checkpoint(args.resume)
        requested = _resolved_train_config(args, base=config.to_dict())
        if requested.to_dict() != config.to_dict():
            raise ValueError("flags disagree with the checkpoint's config; "
                             "resume with matching flags or none")
    else:
        config = _resolved_train_config(args)
    sink = open(args.log, "w", encoding="utf-8") if args.log else sys.stdout

    def emit(record):
        sink.write(_dump(record) + "\n")
        sink.flush()

    emit({"config": config.to_dict()})  # resolved config before any computation
    try:
        result = training.train(config, resume=resume, log_writer=emit,
                                stop_after=args.stop_after)
    except DivergenceDetected as exc:
        if exc.result is not None:
            print(_dump(exc.result.summary))
        raise
    finally:
        if args.log:
            sink.close()
    if args.save:
        ckpt.save_checkpoint(args.save, result)
    print(_dump(result.summary))
    if not args.quiet:
        print(f"done: {result.summary['step']} steps, final loss "
              f"{result.summary['final_loss']}", file=sys.stderr)
    return 0


def _parse_list(text, kind):
    return [kind(tok) for tok in text.split(",") if tok != ""]


def cmd_sweep(args) -> int:
    base = training.TrainConfig(task=args.task, steps=args.steps)
    configs = training.sweep_configs(
        base,
        optimizers=_parse_list(args.optimizers, str),
        methods=[resolve_method(m) for m in _parse_list(args.methods, str)],
        sigma_maxes=_parse_list(args.sigma_maxes, float),
        lams=_parse_list(args.lambdas, float),
        lrs=_parse_list(args.lrs, float),
        seeds=_parse_list(args.seeds, int))
    if not args.quiet:
        print(f"sweeping {len(configs)} runs", file=sys.stderr)
    rows = training.run_sweep(configs)
    fields = ["method", "optimizer", "sigma_max", "lambda", "lr", "seed",
              "final_loss", "certificate_log10", "diverged"]
    runs_path = f"{args.out}_runs.csv"
    with open(runs_path, "w", newline="", encoding="ascii") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        writer.writerows(rows)
    frontier = training.loss_frontier(rows, bin_width=args.bin_width)
    frontier_path = f"{args.out}_frontier.csv"
    with open(frontier_path, "w", newline="", encoding="ascii") as fh:
        writer = csv.DictWriter(fh, fieldnames=["bin_log10_low"] + fields)
        writer.writeheader()
        writer.writerows(frontier)
    if not args.quiet:
        print(f"wrote {runs_path} and {frontier_path}", file=sys.stderr)
    return 0


def cmd_attack(args) -> int:
    config, resume = ckpt.load_checkpoint(args.model)
    spec = config.model_spec()
    if spec.kind != "mlp":
        raise ValueError("attack supports classifier (mlp) checkpoints")
    task = config.make_task()
    x, y = task.eval_set(config.seed, args.samples)
    epsilons = _parse_list(args.epsilons, float)
    rows = atk.robustness_curve(spec, resume.params, x, y, epsilons,
                                steps=args.pgd_steps, seed=args.seed)
    sink = open(args.out, "w", newline="", encoding="ascii") if args.out else sys.stdout
    try:
        writer = csv.DictWriter(sink, fieldnames=["epsilon", "accuracy",
                                                  "mean_correct_prob"])
        writer.writeheader()
        writer.writerows(rows)
    finally:
        if args.out:
            sink.close()
    return 0


def cmd_selftest(args) -> int:
    names = set(_parse_list(args.criteria, str)) if args.criteria else None
    if names:
        known = {n for n, _ in selftest.CRITERIA}
        bad = names - known
        if bad:
            raise ValueError(f"unknown criteria: {sorted(bad)}; "
                             f"known: {sorted(known)}")
    ok = selftest.run_selftest(names)
    return 0 if ok else 2


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except _NUMERICAL_ERRORS as exc:
        print(f"speclip: numerical failure: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError, KeyError, SpeclipError, json.JSONDecodeError) as exc:
        print(f"speclip: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
