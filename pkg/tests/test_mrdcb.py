import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import block_oracles as oracle
from mrcdetr.errors import ConfigError, ContractError
from mrcdetr.mrdcb import (Backbone, BackboneConfig, DcaBlock, DcaConfig, MsruBlock, MsruConfig, backbone_forward,
                           dca_forward, msru_forward)
from mrcdetr.nn import zero_init
from mrcdetr.tensor import Tensor, no_grad


def _randomize_bn(block, rng):
    for name, m in block.named_modules():
        if hasattr(m, "running_mean"):
            m.running_mean[...] = rng.standard_normal(m.running_mean.shape) * 0.3
            m.running_var[...] = rng.uniform(0.5, 2.0, m.running_var.shape)
            m.gamma.data[...] = rng.uniform(0.5, 1.5, m.gamma.shape)
            m.beta.data[...] = rng.standard_normal(m.beta.shape) * 0.1


def test_zero_init_msru_is_identity_in_eval_mode(rng):
    block = zero_init(MsruBlock(MsruConfig(16, dca=DcaConfig(16, 4)))).eval()
    x = rng.standard_normal((2, 16, 5, 7))
    with no_grad():
        out = msru_forward(Tensor(x), block).data
    assert np.max(np.abs(out - x)) == 0.0


def test_zero_init_dca_maps_zeros_to_zeros():
    block = zero_init(DcaBlock(DcaConfig(8, 2)))
    out = dca_forward(Tensor(np.zeros((1, 8, 3, 4))), block).data
    assert np.max(np.abs(out)) == 0.0


def test_dca_single_pixel_closed_form(rng):
    # zero convs at 1x1: X1 = x/4, X2 = 0, uniform softmax weights, map = sigmoid(mean(x/4))
    block = zero_init(DcaBlock(DcaConfig(8, 2)))
    x = rng.standard_normal((1, 8, 1, 1))
    out = dca_forward(Tensor(x), block).data
    xs = x.reshape(2, 4)
    want = xs * (1.0 / (1.0 + np.exp(-(0.25 * xs).mean(axis=1, keepdims=True))))
    assert np.max(np.abs(out.reshape(2, 4) - want)) <= 1e-15


def test_dca_matches_scalar_composition(rng):
    block = DcaBlock(DcaConfig(8, 2)).initialize(3)
    for p in block.parameters():
        p.data[...] = rng.standard_normal(p.shape) * 0.5
    x = rng.standard_normal((1, 8, 4, 4))
    out = dca_forward(Tensor(x), block).data
    assert out.shape == x.shape
    assert np.max(np.abs(out - oracle.dca(x, block))) <= 1e-10


def test_msru_matches_scalar_composition(rng):
    block = MsruBlock(MsruConfig(8, dca=DcaConfig(8, 2))).initialize(5).eval()
    _randomize_bn(block, rng)
    x = rng.standard_normal((1, 8, 6, 6))
    with no_grad():
        out = msru_forward(Tensor(x), block).data
    assert np.max(np.abs(out - oracle.msru_eval(x, block))) <= 1e-10


def test_msru_empty_batch():
    block = MsruBlock(MsruConfig(8, dca=DcaConfig(8, 2))).initialize(0).eval()
    assert msru_forward(Tensor(np.zeros((0, 8, 4, 4))), block).shape == (0, 8, 4, 4)


def test_dca_softmax_rows_and_gates(rng):
    block = DcaBlock(DcaConfig(16, 4)).initialize(2)
    trace = {}
    block(Tensor(rng.standard_normal((3, 16, 5, 6)) * 4), trace=trace)
    for key in ("w1", "w2"):
        w = trace[key]
        assert np.all(w >= 0) and np.max(np.abs(w.sum(axis=-1) - 1.0)) <= 1e-6
    for key in ("attn", "gate_h", "gate_w"):
        assert np.all((trace[key] > 0) & (trace[key] < 1)), key


@settings(max_examples=60)
@given(st.sampled_from([(8, 1), (8, 2), (8, 8), (12, 3), (16, 4)]), st.integers(0, 3), st.integers(1, 6),
       st.integers(1, 6), st.sampled_from([0.25, 0.5, 0.75]), st.integers(1, 3), st.integers(0, 2**31))
def test_block_shapes_are_preserved(cg, n, h, w, ratio, expansion, seed):
    c, g = cg
    x = Tensor(np.random.default_rng(seed).standard_normal((n, c, h, w)))
    dca = DcaBlock(DcaConfig(c, g)).initialize(seed)
    assert dca_forward(x, dca).shape == x.shape
    msru = MsruBlock(MsruConfig(c, ratio, expansion, DcaConfig(c, g))).initialize(seed).eval()
    assert msru_forward(x, msru).shape == x.shape


def test_group_equivariance(rng):
    # steps a-f act per group: the full block equals the block run on each group alone
    g, cg = 4, 3
    block = DcaBlock(DcaConfig(g * cg, g)).initialize(8)
    single = DcaBlock(DcaConfig(cg, 1))
    single.load_state(block.state())
    x = rng.standard_normal((2, g * cg, 4, 5))
    full = dca_forward(Tensor(x), block).data
    for k in range(g):
        part = dca_forward(Tensor(x[:, k * cg:(k + 1) * cg]), single).data
        assert np.max(np.abs(full[:, k * cg:(k + 1) * cg] - part)) <= 1e-12
    perm = rng.permutation(g)
    xp = x.reshape(2, g, cg, 4, 5)[:, perm].reshape(x.shape)
    outp = dca_forward(Tensor(xp), block).data
    assert np.max(np.abs(outp - full.reshape(2, g, cg, 4, 5)[:, perm].reshape(x.shape))) <= 1e-12


@pytest.mark.parametrize("kwargs", [dict(channels=6, groups=4), dict(channels=8, groups=0),
                                    dict(channels=8, groups=2, gn_groups=3)])
def test_dca_config_errors(kwargs):
    with pytest.raises(ConfigError):
        DcaConfig(**kwargs)


@pytest.mark.parametrize("kwargs", [dict(channels=1), dict(channels=8, split_ratio=1.0),
                                    dict(channels=8, expansion=0), dict(channels=8, dca=DcaConfig(16, 2))])
def test_msru_config_errors(kwargs):
    with pytest.raises(ConfigError):
        MsruConfig(**kwargs)


def test_channel_mismatch_is_contract_error():
    with pytest.raises(ContractError):
        dca_forward(Tensor(np.zeros((1, 4, 2, 2))), DcaBlock(DcaConfig(8, 2)))
    with pytest.raises(ContractError):
        msru_forward(Tensor(np.zeros((1, 4, 2, 2))), MsruBlock(MsruConfig(8, dca=DcaConfig(8, 2))))


def test_backbone_shapes_and_errors():
    bb = Backbone(BackboneConfig(base_channels=8, groups=2)).initialize(0)
    s3, s4, s5 = backbone_forward(Tensor(np.zeros((1, 3, 64, 64))), bb)
    assert (s3.shape, s4.shape, s5.shape) == ((1, 16, 8, 8), (1, 32, 4, 4), (1, 64, 2, 2))
    with pytest.raises(ConfigError):
        backbone_forward(Tensor(np.zeros((1, 3, 48, 64))), bb)
    with pytest.raises(ContractError):
        backbone_forward(Tensor(np.zeros((1, 1, 64, 64))), bb)
