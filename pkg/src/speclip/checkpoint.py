"""Binary run checkpoints.

Layout: magic ``SPLC``, format version as little-endian u32, a little-endian
u64 byte length, a canonical JSON header (config, step, array manifest), then
the raw array payload as float64 little-endian values in manifest order.
Canonical JSON (sorted keys, no whitespace) makes save -> load -> save
byte-identical. A version mismatch is a hard error, never a silent
reinterpretation.
"""

from __future__ import annotations

import dataclasses
import json
import struct

import numpy as np

from . import optim, training
from .errors import CorruptCheckpoint, VersionMismatch

MAGIC = b"SPLC"
VERSION = 1


def _canonical_json(doc) -> bytes:
    return json.dumps(doc, sort_keys=True, separators=(",", ":")).encode("ascii")


def save_checkpoint(path, result: training.TrainResult) -> None:
    """Persist config, step counter, weights, and optimizer buffers."""
    config = result.config
    opt = result.opt_state
    manifest = []
    payload = []

    def add(name, group, arr):
        manifest.append({"name": name, "group": group, "shape": list(arr.shape)})
        payload.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())

    for key in result.model_spec.param_order():
        add(key, "params", result.params[key])
    for key in result.model_spec.param_order():
        add(key, "opt.m", opt.m[key])
        if opt.kind == optim.ADAMW:
            add(key, "opt.v", opt.v[key])
    header = {
        "config": config.to_dict(),
        "step": result.summary["step"],
        "optimizer": {
            "kind": opt.kind, "lam": opt.lam, "beta1": opt.beta1,
            "beta2": opt.beta2, "eps": opt.eps, "dim_scale": opt.dim_scale,
            "msign_iters": opt.msign_iters,
            "embedding_keys": sorted(opt.embedding_keys),
            "lr_multipliers": opt.lr_multipliers,
        },
        "rng": {"seed": config.seed, "next_step": result.summary["step"]},
        "arrays": manifest,
    }
    blob = _canonical_json(header)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for chunk in payload:
            fh.write(chunk)


def load_checkpoint(path):
    """Read a checkpoint back into (config, resume_state).

    ``resume_state`` plugs straight into ``training.train(config, resume=...)``.
    """
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 16 or raw[:4] != MAGIC:
        raise CorruptCheckpoint("bad magic bytes")
    (version,) = struct.unpack_from("<I", raw, 4)
    if version != VERSION:
        raise VersionMismatch(f"checkpoint version {version}, expected {VERSION}")
    (hlen,) = struct.unpack_from("<Q", raw, 8)
    if len(raw) < 16 + hlen:
        raise CorruptCheckpoint("truncated header")
    try:
        header = json.loads(raw[16:16 + hlen].decode("ascii"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptCheckpoint(f"unreadable header: {exc}") from exc

    config = training.TrainConfig(**header["config"])
    offset = 16 + hlen
    arrays = {}
    for entry in header["arrays"]:
        rows, cols = entry["shape"]
        nbytes = rows * cols * 8
        if offset + nbytes > len(raw):
            raise CorruptCheckpoint(f"truncated payload at array {entry['name']}")
        arr = np.frombuffer(raw[offset:offset + nbytes], dtype="<f8").reshape(rows, cols)
        arrays[(entry["group"], entry["name"])] = arr.astype(np.float64).copy()
        offset += nbytes
    if offset != len(raw):
        raise CorruptCheckpoint("trailing bytes after declared arrays")

    spec = config.model_spec()
    params = {key: arrays[("params", key)] for key in spec.param_order()}
    opt_doc = header["optimizer"]
    opt = optim.OptimizerState(
        kind=opt_doc["kind"], lam=opt_doc["lam"], beta1=opt_doc["beta1"],
        beta2=opt_doc["beta2"], eps=opt_doc["eps"],
        dim_scale=opt_doc["dim_scale"], msign_iters=opt_doc["msign_iters"],
        embedding_keys=frozenset(opt_doc["embedding_keys"]),
        lr_multipliers=dict(opt_doc["lr_multipliers"]))
    for key in spec.param_order():
        opt.m[key] = arrays[("opt.m", key)]
        if opt.kind == optim.ADAMW:
            opt.v[key] = arrays[("opt.v", key)]
    resume = training.ResumeState(params=params, opt_state=opt,
                                  step=header["step"])
    return config, resume
