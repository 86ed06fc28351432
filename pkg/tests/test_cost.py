"""Cost model against hand-written per-layer sums for the desk-scale detector."""
import pytest

from mrcdetr.aspn import Aspn, AspnConfig, attention_param_count
from mrcdetr.config import desk
from mrcdetr.cost import LayerStack, count_flops, count_params, trace_flops
from mrcdetr.detect import build_model
from mrcdetr.mrdcb import MsruBlock, MsruConfig
from mrcdetr.nn import Conv2d


# --- the spreadsheet --------------------------------------------------------------------------
# Desk config: C0 = 32, one residual block per stage, G = 8, split 1/2, expansion 2,
# pyramid width 64, LSSM kernel 1, three classes, one 64x64 image.

def conv_p(cin, cout, k, bias=True):
    return cout * cin * k * k + (cout if bias else 0)


def cbr_p(cin, cout):
    return conv_p(cin, cout, 3, bias=False) + 2 * cout


def dca_p(c, g=8):
    cg = c // g
    return conv_p(cg, cg, 1) + conv_p(cg, cg, 3) + 2 * cg + 2 * cg


def msru_p(c):
    k = c // 2
    return 2 * cbr_p(c, c) + conv_p(k, k, 3) + conv_p(c, 2 * c, 1) + conv_p(2 * c, c, 1) + dca_p(c)


def lssm_p(c):
    return 2 * (c * c + c)


def sfa_p(c_high, c_low, f):
    return (c_high * f * 9 + f) + conv_p(c_low, f, 1) + lssm_p(f) + lssm_p(c_low)


DESK_PARAMS = {
    "stem": cbr_p(3, 32) + cbr_p(32, 32),
    "stage3": cbr_p(32, 64) + msru_p(64),
    "stage4": cbr_p(64, 128) + msru_p(128),
    "stage5": cbr_p(128, 256) + msru_p(256),
    "proj5": conv_p(256, 64, 1),
    "sfa4": sfa_p(64, 128, 64),
    "sfa3": sfa_p(64, 64, 64),
    "head": 3 * conv_p(64, 7, 1),
}


def conv_f(cin, cout, k, hw, groups=1):
    return 2 * cout * (cin // groups) * k * k * hw


def cbr_f(cin, cout, hw):
    return conv_f(cin, cout, 3, hw) + 2 * cout * hw  # batch norm and relu, one per output element


def dca_f(c, h, w, g=8):
    cg, hw = c // g, h * w
    f = g * cg * (h + w)                    # two directional pools
    f += g * conv_f(cg, cg, 1, h + w)       # shared 1x1 over the H+W strip
    f += g * cg * (h + w)                   # two sigmoid gates
    f += 2 * g * cg * hw                    # x * gate_h * gate_w
    f += g * conv_f(cg, cg, 3, hw)          # 3x3 branch
    f += 2 * (g * cg * hw + g * cg + g * cg)  # group norm, global pool, softmax for both branches
    f += 2 * (2 * g * cg * hw)              # two [1, cg] x [cg, hw] products
    f += g * hw + g * hw                    # sum of maps, sigmoid
    f += g * cg * hw                        # final gating
    return f


def msru_f(c, h, w):
    hw = h * w
    f = 2 * cbr_f(c, c, hw) + c * hw
    f += conv_f(c // 2, c // 2, 3, hw) + conv_f(c, 2 * c, 1, hw) + conv_f(2 * c, c, 1, hw)
    return f + dca_f(c, h, w) + c * hw


def lssm_f(c, h, w):
    return c * (h + w) + 2 * c * c * (h + w) + c * (h + w) + 2 * c * h * w


def sfa_f(c_high, c_low, f, h, w):
    hw = h * w
    total = 2 * f * c_high * 9 * hw          # transposed conv on its output extents
    total += lssm_f(c_low, h, w) + conv_f(c_low, f, 1, hw) + f * hw
    return total + lssm_f(f, h, w) + 2 * f * hw


DESK_FLOPS = {
    "stem": cbr_f(3, 32, 32 * 32) + cbr_f(32, 32, 16 * 16),
    "stage3": cbr_f(32, 64, 64) + msru_f(64, 8, 8),
    "stage4": cbr_f(64, 128, 16) + msru_f(128, 4, 4),
    "stage5": cbr_f(128, 256, 4) + msru_f(256, 2, 2),
    "proj5": conv_f(256, 64, 1, 4),
    "sfa4": sfa_f(64, 128, 64, 4, 4),
    "sfa3": sfa_f(64, 64, 64, 8, 8),
    "head": conv_f(64, 7, 1, 64 + 16 + 4),
}


# --- tests ----------------------------------------------------------------------------------------

def test_single_conv_closed_forms():
    conv = Conv2d(2, 4, 3, pad=1).initialize(0)
    assert count_params(conv) == 2 * 4 * 9 + 4 == 76
    assert count_flops(conv, (1, 2, 8, 8)) == 2 * 4 * 2 * 9 * 64 == 9216


def test_layer_stack_matches_single_conv():
    stack = LayerStack({"input": [1, 2, 8, 8], "stack": [{"type": "conv", "cin": 2, "cout": 4, "kernel": 3,
                                                           "pad": 1}]}).initialize(0)
    assert count_params(stack) == 76 and count_flops(stack, (1, 2, 8, 8)) == 9216


def test_desk_model_parameters_match_hand_sum():
    model = build_model(desk())
    assert count_params(model) == sum(DESK_PARAMS.values()) == 2_663_269
    assert count_params(model.head) == DESK_PARAMS["head"]
    assert count_params(model.aspn) == DESK_PARAMS["proj5"] + DESK_PARAMS["sfa4"] + DESK_PARAMS["sfa3"]


def test_desk_model_flops_match_hand_sum():
    model = build_model(desk())
    counter = trace_flops(model, (1, 3, 64, 64))
    assert counter.total == sum(DESK_FLOPS.values()) == 61_331_008
    scopes = counter.by_scope(2)
    assert scopes["Detector.Backbone"] == sum(DESK_FLOPS[k] for k in ("stem", "stage3", "stage4", "stage5"))
    assert scopes["Detector.Aspn"] == DESK_FLOPS["proj5"] + DESK_FLOPS["sfa4"] + DESK_FLOPS["sfa3"]
    assert scopes["Detector.DetectHead"] == DESK_FLOPS["head"]


def test_aspn_flops_closed_form():
    aspn = Aspn(AspnConfig()).initialize(0)
    got = count_flops(aspn, [(1, 64, 8, 8), (1, 128, 4, 4), (1, 256, 2, 2)])
    assert got == DESK_FLOPS["proj5"] + DESK_FLOPS["sfa4"] + DESK_FLOPS["sfa3"]


@pytest.mark.parametrize("kind", ["lssm", "se", "sge", "caa"])
def test_attention_kind_changes_params_by_closed_form(kind):
    base = count_params(Aspn(AspnConfig()))
    other = count_params(Aspn(AspnConfig(attention=kind)))
    per_kind = 2 * attention_param_count(kind, 64) + attention_param_count(kind, 128) + \
        attention_param_count(kind, 64)
    per_lssm = 2 * lssm_p(64) + lssm_p(128) + lssm_p(64)
    assert other - base == per_kind - per_lssm


def test_flops_linear_in_batch_and_params_shape_free():
    block = MsruBlock(MsruConfig(16)).initialize(0)
    one = count_flops(block, (1, 16, 4, 6))
    assert count_flops(block, (3, 16, 4, 6)) == 3 * one
    assert count_params(block) == msru_p(16)
    assert count_params(block) == count_params(MsruBlock(MsruConfig(16)))
