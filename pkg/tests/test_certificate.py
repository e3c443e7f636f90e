import math

import numpy as np
import pytest

from speclip import certificate as cert
from speclip import linalg


def mlp_arch(gains, alpha=0.5, head_norm=1.0, logit_scale=1.0, gelu_gain=1.0):
    blocks = tuple(cert.BlockNorms(w_in=g, w_out=1.0) for g in gains)
    return cert.ArchitectureSpec(kind="mlp", depth=len(gains), width=8,
                                 block_norms=blocks, residual_alpha=alpha,
                                 head_norm=head_norm, gelu_gain=gelu_gain,
                                 final_logit_scale=logit_scale)


def unit_transformer(depth=3, logit_scale=8.0, norm=1.0):
    b = cert.BlockNorms(w_in=norm, w_out=norm, w_q=norm, w_k=norm,
                        w_v=norm, w_o=norm)
    return cert.ArchitectureSpec(kind="transformer", depth=depth, width=16,
                                 head_dim=8, heads=2, block_norms=(b,) * depth,
                                 head_norm=1.0, final_logit_scale=logit_scale)


class TestAttentionLipschitz:
    def test_unit_inputs_at_reference_scale(self):
        assert cert.attention_lipschitz(1, 1, 1, 1 / 64, 64) == 1.0

    def test_formula(self):
        assert cert.attention_lipschitz(3, 1, 2, 1 / 64, 64) == 6.0

    def test_scale_absorption(self):
        got = cert.attention_lipschitz(1, 1, 1, 1 / 8, 64)
        assert got == pytest.approx(math.sqrt(8.0))

    def test_floor_at_one(self):
        assert cert.attention_lipschitz(0.1, 0.1, 0.1, 1 / 4, 4) == 1.0


class TestPropagation:
    def test_unit_gains_hold_at_one(self):
        arch = mlp_arch([1.0, 1.0, 1.0])
        assert cert.propagate_activation_bounds(arch) == [1.0] * 4

    def test_single_connection(self):
        arch = mlp_arch([3.0], alpha=0.5)
        assert cert.propagate_activation_bounds(arch) == pytest.approx([1.0, 2.0])

    def test_two_block_recurrence(self):
        arch = mlp_arch([2.0, 2.0], alpha=0.5)
        assert cert.propagate_activation_bounds(arch) == pytest.approx([1.0, 1.5, 2.25])


class TestCertify:
    def test_depth_zero_composes_head_factors(self):
        arch = cert.ArchitectureSpec(kind="mlp", depth=0, width=4, block_norms=(),
                                     head_norm=1.0, final_logit_scale=8.0)
        got = cert.certify(arch)
        assert got.global_bound == pytest.approx(8.0)
        assert got.log10_global == pytest.approx(math.log10(8.0))

    def test_two_connection_mlp(self):
        arch = mlp_arch([2.0, 2.0], alpha=0.5)
        got = cert.certify(arch)
        assert got.lipschitz_bounds == pytest.approx([1.0, 1.5, 2.25])
        assert got.global_bound == pytest.approx(2.25)

    def test_unit_norm_transformer_stays_under_head_scale(self):
        got = cert.certify(unit_transformer())
        assert max(got.activation_bounds) <= 1.0 + 1e-12
        assert got.global_bound <= 8.0 + 1e-9

    def test_log_space_handles_astronomical_bounds(self):
        arch = mlp_arch([1e100] * 4, alpha=0.5)
        got = cert.certify(arch)
        assert math.isinf(got.global_bound)
        assert 350 < got.log10_global < 450
        # exact recurrence in logs: each connection multiplies by ~alpha*gain
        by_hand = 4 * math.log10(0.5 + 0.5 * 1e100)
        assert got.log10_global == pytest.approx(by_hand, rel=1e-12)
        assert got.to_json_dict()["global_bound"] is None

    def test_zero_norm_blocks(self):
        arch = mlp_arch([0.0, 2.0], alpha=0.5)
        got = cert.certify(arch)
        assert got.lipschitz_bounds[1] == pytest.approx(0.5)

    @pytest.mark.parametrize("field", ["w_q", "w_k", "w_v", "w_o", "w_in", "w_out"])
    def test_monotone_in_each_norm(self, field):
        base = unit_transformer(depth=2, norm=0.9)
        got0 = cert.certify(base).log10_global
        bumped = []
        for i, b in enumerate(base.block_norms):
            values = {k: getattr(b, k) for k in
                      ("w_in", "w_out", "w_q", "w_k", "w_v", "w_o")}
            if i == 0:
                values[field] = values[field] * 1.5
            bumped.append(cert.BlockNorms(**values))
        arch = cert.ArchitectureSpec(
            kind="transformer", depth=2, width=16, head_dim=8, heads=2,
            block_norms=tuple(bumped), head_norm=1.0, final_logit_scale=8.0)
        assert cert.certify(arch).log10_global >= got0 - 1e-12

    def test_json_round_trip(self):
        arch = unit_transformer(depth=2)
        doc = arch.to_json_dict()
        back = cert.ArchitectureSpec.from_json_dict(doc)
        assert cert.certify(back).log10_global == cert.certify(arch).log10_global

    def test_unknown_json_fields_rejected(self):
        doc = unit_transformer(depth=1).to_json_dict()
        doc["layer_norm"] = True
        with pytest.raises(ValueError):
            cert.ArchitectureSpec.from_json_dict(doc)

    def test_certificate_json_dict(self):
        got = cert.certify(mlp_arch([2.0, 2.0]))
        doc = got.to_json_dict()
        assert len(doc["layers"]) == 2
        assert doc["global_bound"] == pytest.approx(2.25)


class TestFunctionalAttention:
    def test_jvp_matches_finite_differences(self):
        rng = np.random.default_rng(0)
        q, k, v = rng.standard_normal((3, 5, 4))
        dq, dk, dv = rng.standard_normal((3, 5, 4))
        mask = cert.causal_mask(5)
        _, jvp = cert.functional_attention_jvp(q, k, v, dq, dk, dv, 0.25, mask)
        eps = 1e-7
        hi = cert.functional_attention(q + eps * dq, k + eps * dk, v + eps * dv,
                                       0.25, mask)
        lo = cert.functional_attention(q - eps * dq, k - eps * dk, v - eps * dv,
                                       0.25, mask)
        assert np.abs((hi - lo) / (2 * eps) - jvp).max() < 1e-8

    @pytest.mark.parametrize("seed", range(50))
    def test_derivative_never_beats_bound(self, seed):
        rng = np.random.default_rng(seed)
        tokens, d_q = 5, 6
        mask = cert.causal_mask(tokens)
        norms = rng.choice([0.5, 1.0, 2.0, 4.0], size=3)

        def at_norm(n):
            m = rng.standard_normal((tokens, d_q))
            return m * (n / cert.inf_rms(m))

        q, k, v = (at_norm(norms[i]) for i in range(3))
        dq, dk, dv = rng.standard_normal((3, tokens, d_q))
        _, jvp = cert.functional_attention_jvp(q, k, v, dq, dk, dv, 1 / d_q, mask)
        ratio = cert.inf_rms(jvp) / (cert.inf_rms(dq) + cert.inf_rms(dk)
                                     + cert.inf_rms(dv))
        bound = cert.attention_lipschitz(cert.inf_rms(q), cert.inf_rms(k),
                                         cert.inf_rms(v), 1 / d_q, d_q)
        assert ratio <= bound * (1 + 1e-6)


class TestEmpiricalLowerBound:
    def test_identity_map(self):
        got = cert.empirical_lipschitz_lower_bound(lambda x: x, (4, 6), trials=10)
        assert got == pytest.approx(1.0, abs=1e-9)

    def test_linear_map_bracketed_by_operator_norm(self):
        rng = np.random.default_rng(1)
        w = rng.standard_normal((6, 6))
        rms_norm = linalg.matrix_norm(w, linalg.RMS_TO_RMS)
        got = cert.empirical_lipschitz_lower_bound(
            lambda x: x @ w.T, (1, 6), trials=100, seed=2)
        assert got <= rms_norm * (1 + 1e-9)
        assert got >= 0.5 * rms_norm

    def test_scaling(self):
        got = cert.empirical_lipschitz_lower_bound(lambda x: 3.0 * x, (2, 4),
                                                   trials=5)
        assert got == pytest.approx(3.0, abs=1e-9)


def test_inf_rms():
    x = np.array([[3.0, 4.0], [0.0, 0.0]])
    assert cert.inf_rms(x) == pytest.approx(np.sqrt(12.5))
    assert cert.inf_rms(np.array([3.0, 4.0])) == pytest.approx(np.sqrt(12.5))


def test_arch_validation():
    with pytest.raises(ValueError):
        cert.ArchitectureSpec(kind="mlp", depth=2, width=4,
                              block_norms=(cert.BlockNorms(1, 1),))
    with pytest.raises(ValueError):
        cert.ArchitectureSpec(kind="transformer", depth=1, width=4, head_dim=2,
                              block_norms=(cert.BlockNorms(w_in=1, w_out=1),))
