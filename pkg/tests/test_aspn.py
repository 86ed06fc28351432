import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import block_oracles as oracle
from mrcdetr.aspn import (ATTENTION_KINDS, Aspn, AspnConfig, LssmBlock, SeBlock, SfaBlock, aspn_forward,
                          attention_param_count, attention_slot, lssm_forward, make_attention, sfa_forward)
from mrcdetr.errors import ConfigError, ContractError
from mrcdetr.nn import count_parameters, zero_init
from mrcdetr.tensor import Tensor


def _randomize(module, rng, scale=0.5):
    for p in module.parameters():
        p.data[...] = rng.standard_normal(p.shape) * scale
    return module


def test_zero_lssm_quarters_the_input(rng):
    x = rng.standard_normal((2, 4, 5, 3))
    out = lssm_forward(Tensor(x), zero_init(LssmBlock(4))).data
    assert np.max(np.abs(out - 0.25 * x)) == 0.0


def test_lssm_annihilates_zero(rng):
    block = _randomize(LssmBlock(4), rng)
    assert not lssm_forward(Tensor(np.zeros((1, 4, 3, 3))), block).data.any()


@pytest.mark.parametrize("kernel", [1, 3])
def test_lssm_matches_scalar_composition(rng, kernel):
    block = _randomize(LssmBlock(4, kernel), rng)
    x = rng.standard_normal((1, 4, 5, 3))
    assert np.max(np.abs(lssm_forward(Tensor(x), block).data - oracle.lssm(x, block))) <= 1e-10


def test_zero_sfa_outputs_zeros(rng):
    block = zero_init(SfaBlock(8, 4, 8))
    out = sfa_forward(Tensor(rng.standard_normal((1, 8, 2, 2))), Tensor(rng.standard_normal((1, 4, 4, 4))), block)
    assert out.shape == (1, 8, 4, 4) and np.max(np.abs(out.data)) == 0.0


def test_sfa_with_zero_low_input(rng):
    block = _randomize(SfaBlock(8, 4, 8), rng)
    xh, xl = rng.standard_normal((1, 8, 2, 2)), np.zeros((1, 4, 4, 4))
    out = sfa_forward(Tensor(xh), Tensor(xl), block).data
    assert np.max(np.abs(out - oracle.sfa(xh, xl, block))) <= 1e-10


def test_sfa_matches_scalar_composition(rng):
    block = _randomize(SfaBlock(8, 4, 8), rng)
    xh, xl = rng.standard_normal((1, 8, 2, 2)), rng.standard_normal((1, 4, 4, 4))
    out = sfa_forward(Tensor(xh), Tensor(xl), block).data
    assert out.shape == (1, 8, 4, 4)
    assert np.max(np.abs(out - oracle.sfa(xh, xl, block))) <= 1e-10


def test_sfa_with_se_slot_matches_scalar_composition(rng):
    block = _randomize(SfaBlock(16, 16, 16, "se"), rng)
    xh, xl = rng.standard_normal((1, 16, 2, 2)), rng.standard_normal((1, 16, 4, 4))
    out = sfa_forward(Tensor(xh), Tensor(xl), block).data
    assert np.max(np.abs(out - oracle.sfa(xh, xl, block, "se"))) <= 1e-10


def test_sfa_rejects_mismatched_inputs():
    block = SfaBlock(8, 4, 8).initialize(0)
    with pytest.raises(ContractError, match="8/4"):
        sfa_forward(Tensor(np.zeros((1, 6, 2, 2))), Tensor(np.zeros((1, 4, 4, 4))), block)
    with pytest.raises(ContractError, match=r"\(4, 4\).*\(6, 6\)|\(6, 6\).*\(4, 4\)"):
        sfa_forward(Tensor(np.zeros((1, 8, 2, 2))), Tensor(np.zeros((1, 4, 6, 6))), block)
    with pytest.raises(ConfigError):
        sfa_forward(Tensor(np.zeros((1, 8, 2, 2))), Tensor(np.zeros((1, 4, 5, 5))), block)


def test_zero_se_halves_the_input(rng):
    x = rng.standard_normal((1, 16, 3, 3))
    out = attention_slot(Tensor(x), zero_init(SeBlock(16))).data
    assert np.max(np.abs(out - 0.5 * x)) == 0.0


def test_se_matches_scalar_composition(rng):
    block = _randomize(SeBlock(16), rng)
    x = rng.standard_normal((1, 16, 2, 2))
    assert np.max(np.abs(attention_slot(Tensor(x), block).data - oracle.se(x, block))) <= 1e-10


@pytest.mark.parametrize("kind", ATTENTION_KINDS)
def test_every_kind_preserves_shape_and_matches_its_param_formula(rng, kind):
    for c in (8, 16, 64):
        block = make_attention(kind, c).initialize(0)
        assert count_parameters(block) == attention_param_count(kind, c)
        x = Tensor(rng.standard_normal((2, c, 5, 4)))
        assert attention_slot(x, block).shape == x.shape


def test_param_formulas_closed_forms():
    assert attention_param_count("lssm", 64) == 2 * (64 * 64 + 64)
    assert attention_param_count("lssm", 64, 7) == 2 * (64 * 64 * 7 + 64)
    assert attention_param_count("se", 64) == 2 * 64 * 4 + 4 + 64
    assert attention_param_count("sge", 64) == 16
    assert attention_param_count("caa", 64) == 2 * (64 * 64 + 64) + 2 * (64 * 11 + 64)


def test_unknown_kind_lists_registered_kinds():
    with pytest.raises(ConfigError, match="lssm, se, sge, caa"):
        make_attention("cbam", 8)
    with pytest.raises(ConfigError, match="registered"):
        AspnConfig(attention="cbam")


@settings(max_examples=40)
@given(st.integers(1, 3), st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**31))
def test_lssm_gates_and_contraction(n, h, w, seed):
    rng = np.random.default_rng(seed)
    block = _randomize(LssmBlock(4), rng)
    x = Tensor(rng.standard_normal((n, 4, h, w)))
    gh, gw = block.gates(x)
    assert np.all((gh.data > 0) & (gh.data < 1)) and np.all((gw.data > 0) & (gw.data < 1))
    assert np.all(np.abs(lssm_forward(x, block).data) <= np.abs(x.data))
    # large logits round the gates to exactly 0 or 1 in floating point; still no growth
    loud = Tensor(x.data * 50)
    _randomize(block, rng, 5.0)
    assert np.all(np.abs(lssm_forward(loud, block).data) <= np.abs(loud.data))


@settings(max_examples=50)
@given(st.integers(1, 4), st.integers(1, 4), st.sampled_from([1, 4, 8, 12]), st.sampled_from([4, 8, 16]),
       st.sampled_from(ATTENTION_KINDS), st.integers(0, 2**31))
def test_sfa_output_shape_property(hh, hw, c_low, c_out, kind, seed):
    rng = np.random.default_rng(seed)
    block = SfaBlock(c_out, c_low, c_out, kind).initialize(seed)
    out = sfa_forward(Tensor(rng.standard_normal((1, c_out, hh, hw))),
                      Tensor(rng.standard_normal((1, c_low, 2 * hh, 2 * hw))), block)
    assert out.shape == (1, c_out, 2 * hh, 2 * hw)


@settings(max_examples=50)
@given(st.integers(1, 2), st.integers(1, 3), st.integers(1, 3), st.sampled_from([4, 8, 16]),
       st.tuples(st.integers(1, 12), st.integers(1, 12), st.integers(1, 12)), st.sampled_from(ATTENTION_KINDS),
       st.integers(0, 2**31))
def test_aspn_emits_width_channels_at_three_strides(n, h5, w5, width, chans, kind, seed):
    rng = np.random.default_rng(seed)
    aspn = Aspn(AspnConfig(width, chans, kind)).initialize(seed)
    s3 = Tensor(rng.standard_normal((n, chans[0], 4 * h5, 4 * w5)))
    s4 = Tensor(rng.standard_normal((n, chans[1], 2 * h5, 2 * w5)))
    s5 = Tensor(rng.standard_normal((n, chans[2], h5, w5)))
    p3, p4, p5 = aspn_forward(s3, s4, s5, aspn)
    assert p3.shape == (n, width, 4 * h5, 4 * w5)
    assert p4.shape == (n, width, 2 * h5, 2 * w5)
    assert p5.shape == (n, width, h5, w5)


def test_aspn_default_shapes_and_zero_init(rng):
    aspn = zero_init(Aspn())
    s3, s4, s5 = (Tensor(rng.standard_normal(s)) for s in ((1, 64, 8, 8), (1, 128, 4, 4), (1, 256, 2, 2)))
    outs = aspn_forward(s3, s4, s5, aspn)
    assert [o.shape for o in outs] == [(1, 64, 8, 8), (1, 64, 4, 4), (1, 64, 2, 2)]
    assert all(np.max(np.abs(o.data)) == 0.0 for o in outs)


def test_aspn_rejects_non_dyadic_inputs():
    aspn = Aspn(AspnConfig(8, (4, 4, 4))).initialize(0)
    with pytest.raises(ConfigError):
        aspn_forward(Tensor(np.zeros((1, 4, 8, 8))), Tensor(np.zeros((1, 4, 4, 4))),
                     Tensor(np.zeros((1, 4, 3, 2))), aspn)


def test_upsampling_path_starts_constant():
    block = SfaBlock(8, 4, 8).initialize(0)
    assert not block.upconv.weight.data.any() and np.all(block.upconv.bias.data == 1.0)
