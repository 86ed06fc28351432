"""Dense NCHW tensor engine with a recording tape for reverse-mode gradients."""
from .core import (
    InitSpec,
    Parameter,
    Tape,
    Tensor,
    as_tensor,
    backward,
    constant_init,
    kaiming_init,
    no_grad,
    uniform_init,
    zeros_init,
)
from .flops import FlopCounter
from .ops import (
    add,
    batch_norm,
    batched_matmul,
    concat,
    conv2d,
    global_avg_pool,
    group_norm,
    mul,
    pool_directional,
    relu,
    reshape,
    reshape_group,
    scale,
    sigmoid,
    softmax,
    split,
    sub,
    sum_all,
    transpose,
    transposed_conv2d,
    unreshape_group,
)

__all__ = [
    "FlopCounter", "InitSpec", "Parameter", "Tape", "Tensor", "add", "as_tensor", "backward",
    "batch_norm", "batched_matmul", "concat", "constant_init", "conv2d", "global_avg_pool",
    "group_norm", "kaiming_init", "mul", "no_grad", "pool_directional", "relu", "reshape",
    "reshape_group", "scale", "sigmoid", "softmax", "split", "sub", "sum_all", "transpose",
    "transposed_conv2d", "uniform_init", "unreshape_group", "zeros_init",
]
