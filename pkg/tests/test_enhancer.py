import math

import numpy as np
import pytest
from scipy.special import erf

from egmf.enhancer import EXPERT_SPECS, AdaptiveEnhancer, BottleneckExpert
from egmf.errors import ConfigError
from egmf.gradcheck import check_gradients
from egmf.rng import RngState
from egmf.tensor import mul, tensor, tsum


def np_gelu(x):
    return x * 0.5 * (1.0 + erf(x / math.sqrt(2.0)))


def zero_params(module):
    for p in module.parameters():
        p.values[...] = 0.0


class TestExperts:
    def test_configured_ratios_and_activations(self):
        assert EXPERT_SPECS == ((8, "mish"), (4, "gelu"), (2, "swish"))
        enh = AdaptiveEnhancer(64, RngState(0))
        assert [e.bottleneck_dim for e in enh.experts] == [8, 16, 32]
        assert [e.act for e in enh.experts] == ["mish", "gelu", "swish"]

    def test_zero_input_zero_bias_gives_zero(self):
        enh = AdaptiveEnhancer(16, RngState(1))
        z = tensor(np.zeros(16))
        for k in (1, 2, 3):
            assert np.all(enh.expert_forward(k, z).values == 0.0)

    def test_hand_computed_scalar_bottleneck(self):
        # d_h=8, ratio 8 -> one-unit bottleneck; set weights so the expert
        # computes up_col * mish(mean(x)) + up_bias, verifiable by hand
        exp = BottleneckExpert(8, 8, "mish", RngState(2))
        exp.down.weight.values[...] = 0.125
        exp.down.bias.values[...] = 0.0
        up_col = np.arange(1.0, 9.0)
        exp.up.weight.values[...] = up_col.reshape(8, 1)
        exp.up.bias.values[...] = 0.5
        x = np.linspace(-1.0, 0.75, 8)
        z = math.fsum(x) / 8.0
        mish_z = z * math.tanh(math.log1p(math.exp(z)))
        expected = up_col * mish_z + 0.5
        np.testing.assert_allclose(exp(tensor(x)).values, expected, atol=1e-12)

    def test_indivisible_width_rejected(self):
        with pytest.raises(ConfigError):
            AdaptiveEnhancer(12, RngState(0))
        with pytest.raises(ConfigError):
            BottleneckExpert(10, 4, "gelu", RngState(0))

    def test_bad_expert_index(self):
        enh = AdaptiveEnhancer(16, RngState(0))
        for k in (0, 4, -1):
            with pytest.raises(ConfigError):
                enh.expert_forward(k, tensor(np.zeros(16)))


class TestGateStage1:
    def test_sigmoid_of_zero_logits(self):
        enh = AdaptiveEnhancer(16, RngState(3))
        zero_params(enh.gate1)
        w, beta = enh.gate_stage1(tensor(RngState(4).normal((16,))))
        assert np.all(w.values == 0.5)
        assert beta.values[0] == 0.5

    def test_outputs_in_open_unit_interval(self):
        enh = AdaptiveEnhancer(16, RngState(5))
        for seed in range(5):
            w, beta = enh.gate_stage1(tensor(RngState(seed).normal((16,)) * 3.0))
            vals = np.concatenate([w.values, beta.values])
            assert np.all(vals > 0.0) and np.all(vals < 1.0)

    def test_affine_sigmoid_oracle(self):
        enh = AdaptiveEnhancer(16, RngState(6))
        f = RngState(7).normal((16,))
        w, beta = enh.gate_stage1(tensor(f))
        logits = enh.gate1.weight.values @ f + enh.gate1.bias.values
        expected = 1.0 / (1.0 + np.exp(-logits))
        np.testing.assert_allclose(
            np.concatenate([w.values, beta.values]), expected, atol=1e-12
        )


class TestGateStage2:
    def test_zero_mlp_gives_uniform_alpha(self):
        enh = AdaptiveEnhancer(16, RngState(8))
        zero_params(enh.gate2_in)
        zero_params(enh.gate2_out)
        alpha = enh.gate_stage2(
            tensor(RngState(9).normal((16,))), tensor(np.array([0.2, 0.5, 0.7]))
        )
        np.testing.assert_array_equal(alpha.values, [1 / 3, 1 / 3, 1 / 3])

    def test_saturated_logits_one_hot(self):
        enh = AdaptiveEnhancer(16, RngState(10))
        zero_params(enh.gate2_out)
        enh.gate2_out.bias.values[...] = [20.0, -20.0, -20.0]
        alpha = enh.gate_stage2(
            tensor(RngState(11).normal((16,))), tensor(np.full(3, 0.5))
        )
        np.testing.assert_allclose(alpha.values, [1.0, 0.0, 0.0], atol=1e-8)

    def test_mlp_softmax_oracle(self):
        enh = AdaptiveEnhancer(16, RngState(12))
        rng = RngState(13)
        f, w = rng.normal((16,)), 1.0 / (1.0 + np.exp(-rng.normal((3,))))
        alpha = enh.gate_stage2(tensor(f), tensor(w))
        cat = np.concatenate([f, w])
        hidden = np_gelu(enh.gate2_in.weight.values @ cat + enh.gate2_in.bias.values)
        logits = enh.gate2_out.weight.values @ hidden + enh.gate2_out.bias.values
        e = np.exp(logits - logits.max())
        np.testing.assert_allclose(alpha.values, e / e.sum(), atol=1e-12)

    def test_simplex_for_many_inputs(self):
        enh = AdaptiveEnhancer(16, RngState(14))
        for seed in range(10):
            rng = RngState(seed)
            alpha = enh.gate_stage2(
                tensor(rng.normal((16,)) * 5.0), tensor(rng.uniform((3,)))
            ).values
            assert abs(alpha.sum() - 1.0) <= 1e-12
            assert np.all(alpha >= 0.0)


class TestEnhance:
    def test_one_hot_override_selects_single_expert(self):
        enh = AdaptiveEnhancer(16, RngState(15))
        f = RngState(16).normal((16,))
        for k in (1, 2, 3):
            hot = [0.0, 0.0, 0.0]
            hot[k - 1] = 1.0
            rep = enh.enhance(tensor(f), alpha_override=hot, beta_override=0.0)
            expected = enh.expert_forward(k, tensor(f)).values
            assert np.array_equal(rep.f_enhanced.values, expected)

    def test_residual_passthrough(self):
        enh = AdaptiveEnhancer(16, RngState(17))
        for expert in enh.experts:
            zero_params(expert)
        f = RngState(18).normal((16,))
        rep = enh.enhance(tensor(f), beta_override=1.0)
        assert np.array_equal(rep.f_enhanced.values, f)

    def test_reconstruction_from_diagnostics(self):
        enh = AdaptiveEnhancer(16, RngState(19))
        f = RngState(20).normal((16,))
        rep = enh.enhance(tensor(f))
        oracle = np.zeros(16)
        for k in range(3):
            oracle += rep.gate.alpha[k] * rep.expert_outputs[k]
        oracle += rep.gate.beta * f
        np.testing.assert_allclose(rep.f_enhanced.values, oracle, atol=1e-12)

    def test_expert_mix_stays_in_convex_hull(self):
        enh = AdaptiveEnhancer(16, RngState(21))
        for seed in range(5):
            f = RngState(seed).normal((16,)) * 2.0
            rep = enh.enhance(tensor(f))
            mix = sum(rep.gate.alpha[k] * rep.expert_outputs[k] for k in range(3))
            stacked = np.stack(rep.expert_outputs)
            assert np.all(mix >= stacked.min(axis=0) - 1e-12)
            assert np.all(mix <= stacked.max(axis=0) + 1e-12)

    def test_dropped_expert_gets_zero_share(self):
        enh = AdaptiveEnhancer(16, RngState(22))
        f = RngState(23).normal((16,))
        full = enh.enhance(tensor(f)).gate.alpha
        for drop in (1, 2, 3):
            alpha = enh.enhance(tensor(f), dropped_expert=drop).gate.alpha
            assert alpha[drop - 1] == 0.0
            assert abs(alpha.sum() - 1.0) <= 1e-12
            keep = [i for i in range(3) if i != drop - 1]
            renorm = full[keep] / full[keep].sum()
            np.testing.assert_allclose(alpha[keep], renorm, atol=1e-12)

    def test_bad_drop_index(self):
        enh = AdaptiveEnhancer(16, RngState(24))
        with pytest.raises(ConfigError):
            enh.enhance(tensor(np.zeros(16)), dropped_expert=5)

    def test_gradients_reach_every_expert(self):
        enh = AdaptiveEnhancer(16, RngState(25))
        rep = enh.enhance(tensor(RngState(26).normal((16,))))
        tsum(mul(rep.f_enhanced, rep.f_enhanced)).backward()
        for expert in enh.experts:
            assert np.linalg.norm(expert.down.weight.grad) > 0.0
            assert np.linalg.norm(expert.up.weight.grad) > 0.0
        assert np.linalg.norm(enh.gate1.weight.grad) > 0.0
        assert np.linalg.norm(enh.gate2_out.weight.grad) > 0.0

    def test_end_to_end_gradcheck(self):
        enh = AdaptiveEnhancer(8, RngState(27))
        rng = RngState(28)
        f = rng.normal((8,))
        c = tensor(rng.normal((8,)))

        def build_loss():
            return tsum(mul(enh.enhance(tensor(f)).f_enhanced, c))

        leaves = [
            enh.experts[0].down.weight.tensor,
            enh.experts[1].up.weight.tensor,
            enh.experts[2].down.weight.tensor,
            enh.gate1.weight.tensor,
            enh.gate2_in.weight.tensor,
            enh.gate2_out.weight.tensor,
        ]
        check_gradients(build_loss, leaves, rng=rng)

    def test_dropped_expert_gradcheck(self):
        enh = AdaptiveEnhancer(8, RngState(29))
        rng = RngState(30)
        f = rng.normal((8,))
        c = tensor(rng.normal((8,)))

        def build_loss():
            return tsum(mul(enh.enhance(tensor(f), dropped_expert=2).f_enhanced, c))

        check_gradients(
            build_loss,
            [enh.experts[0].down.weight.tensor, enh.gate2_in.weight.tensor],
            rng=rng,
        )
