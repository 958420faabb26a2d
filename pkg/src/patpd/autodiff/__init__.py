from .nets import (
    ConvLayer,
    NetParams,
    conv_operator_norm,
    forward_net,
    init_contractive_net,
    init_net,
    lipschitz_estimate,
    load_nets,
    net_apply,
    refresh_spectral,
    save_nets,
    spectral_normalize,
    zero_net,
)
from .optim import OptimState, adam_step, cosine_lr
from .tensor import Tensor, backward, grad, vjp

DiffTensor = Tensor

__all__ = [
    "ConvLayer",
    "DiffTensor",
    "NetParams",
    "OptimState",
    "Tensor",
    "adam_step",
    "backward",
    "conv_operator_norm",
    "cosine_lr",
    "forward_net",
    "grad",
    "init_contractive_net",
    "init_net",
    "lipschitz_estimate",
    "load_nets",
    "net_apply",
    "refresh_spectral",
    "save_nets",
    "spectral_normalize",
    "vjp",
    "zero_net",
]
