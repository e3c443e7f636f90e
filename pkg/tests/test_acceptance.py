"""Acceptance suite: every criterion at its stated tolerance.

Each test prints one PASS/FAIL line (run pytest with ``-s`` to see them
inline; they also land in the captured output). The same checks back the
``speclip selftest`` command.
"""

import pytest

from speclip import selftest

_CRITERIA = {name: fn for name, fn in selftest.CRITERIA}


def _run(name):
    passed, detail = _CRITERIA[name]()
    print(f"{'PASS' if passed else 'FAIL'} {name}: {detail}")
    assert passed, detail


def test_criterion_01_softcap_enforcement():
    """1000 step-then-cap trials keep the spectral norm within 1 + 1e-3."""
    _run("softcap-enforcement")


def test_criterion_02_coupling_residual():
    """|f(alpha)| <= 1e-10 over 100 random triples; alpha = 0 exactly at k <= target."""
    _run("coupling-residual")


def test_criterion_03_clipped_decay_equilibrium():
    """Scalar iteration reaches beta + (1 - lam)/lam * eta within 1e-6 (50 draws)."""
    _run("clipped-decay-equilibrium")


def test_criterion_04_oracle_equivalence():
    """Hardcap/clip within 5e-2 of oracle clipping on 200 matrices; polynomials 1e-6."""
    _run("oracle-equivalence")


def test_criterion_05_attention_bound():
    """Directional derivative <= max(1, |v| max(|q|, |k|)) * (1 + 1e-6), 1000 configs."""
    _run("attention-bound")


def test_criterion_06_certificate_soundness():
    """Empirical Lipschitz lower bound <= certificate on 100 tiny transformers."""
    _run("certificate-soundness")


def test_criterion_07_gradient_correctness():
    """Finite differences agree within 1e-4 relative on 20 entries per layer."""
    _run("gradient-correctness")


def test_criterion_08_training_enforcement():
    """500-step capped run: norms within target * (1 + 1e-3), loss halves."""
    _run("training-enforcement")


def test_criterion_09_robustness_trend():
    """Constrained model (certificate <= 20) wins at the largest budget >= 4/5 seeds."""
    _run("robustness-trend")


def test_criterion_10_determinism_persistence():
    """Replay is bit-identical; checkpoint resume within 1e-12 final loss."""
    _run("determinism-persistence")
