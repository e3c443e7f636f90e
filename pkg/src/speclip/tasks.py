"""Synthetic, fully seeded tasks for desk-scale training runs.

Both tasks are reproducible from a single integer seed; batches derive their
PRNG stream from (seed, step) so training can resume mid-run and replay
bit-identically.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

CLUSTERS = "clusters"
CHARLM = "charlm"
TASKS = (CLUSTERS, CHARLM)

_EVAL_STREAM = 0x5EED


@dataclass(frozen=True)
class ClusterTask:
    """Gaussian cluster classification in d dimensions.

    Cluster centers sit on the sphere of RMS norm ``center_rms``; samples add
    isotropic noise and are then capped to RMS norm 1 so inputs stay inside
    the certified unit-RMS region.
    """

    centers: np.ndarray
    noise: float

    @property
    def n_classes(self) -> int:
        return self.centers.shape[0]

    @property
    def dim(self) -> int:
        return self.centers.shape[1]

    def _draw(self, rng, n):
        labels = rng.integers(0, self.n_classes, n)
        x = self.centers[labels] + self.noise * rng.standard_normal((n, self.dim))
        rms = np.sqrt(np.mean(x * x, axis=1, keepdims=True))
        x = x / np.maximum(rms, 1.0)
        return x, labels

    def batch(self, seed: int, step: int, n: int):
        return self._draw(np.random.default_rng([seed, step, 1]), n)

    def eval_set(self, seed: int, n: int = 512):
        return self._draw(np.random.default_rng([seed, _EVAL_STREAM, 1]), n)


def make_cluster_task(seed: int, n_classes: int = 10, dim: int = 32,
                      noise: float = 0.15, center_rms: float = 0.9) -> ClusterTask:
    rng = np.random.default_rng([seed, 0xC1])
    centers = rng.standard_normal((n_classes, dim))
    centers *= center_rms / np.sqrt(np.mean(centers * centers, axis=1, keepdims=True))
    return ClusterTask(centers=centers, noise=noise)


@dataclass(frozen=True)
class MarkovTask:
    """Order-2 Markov chain over a small alphabet for next-token prediction.

    Transition rows are sparse-ish Dirichlet draws, which gives the chain
    enough structure that a small transformer can beat the unigram entropy.
    """

    transitions: np.ndarray  # (vocab, vocab, vocab): P(c | a, b)
    seq_len: int

    @property
    def vocab(self) -> int:
        return self.transitions.shape[0]

    def _draw(self, rng, n):
        v = self.vocab
        seqs = np.empty((n, self.seq_len + 1), dtype=np.int64)
        seqs[:, 0] = rng.integers(0, v, n)
        seqs[:, 1] = rng.integers(0, v, n)
        for t in range(2, self.seq_len + 1):
            probs = self.transitions[seqs[:, t - 2], seqs[:, t - 1]]
            u = rng.random((n, 1))
            seqs[:, t] = (probs.cumsum(axis=1) > u).argmax(axis=1)
        return seqs[:, :-1], seqs[:, 1:]

    def batch(self, seed: int, step: int, n: int):
        return self._draw(np.random.default_rng([seed, step, 2]), n)

    def eval_set(self, seed: int, n: int = 64):
        return self._draw(np.random.default_rng([seed, _EVAL_STREAM, 2]), n)


def make_markov_task(seed: int, vocab: int = 16, seq_len: int = 32,
                     concentration: float = 0.1) -> MarkovTask:
    rng = np.random.default_rng([seed, 0xC2])
    raw = rng.gamma(concentration, size=(vocab, vocab, vocab))
    raw += 1e-12  # keep rows normalizable
    transitions = raw / raw.sum(axis=2, keepdims=True)
    return MarkovTask(transitions=transitions, seq_len=seq_len)


def make_task(name: str, seed: int, **kwargs):
    if name == CLUSTERS:
        return make_cluster_task(seed, **kwargs)
    if name == CHARLM:
        return make_markov_task(seed, **kwargs)
    raise ValueError(f"unknown task: {name!r}")
